#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sparc/geometry.hpp"

using namespace sparc;

namespace {

constexpr int kCases = 10000;

// Pixel-count reference for integer boxes: counts unit cells.
long cells_in_both(const BoundingBox& a, const BoundingBox& b) {
  long n = 0;
  for (int x = static_cast<int>(a.x1); x < static_cast<int>(a.x2); ++x) {
    for (int y = static_cast<int>(a.y1); y < static_cast<int>(a.y2); ++y) {
      if (x >= b.x1 && x + 1 <= b.x2 && y >= b.y1 && y + 1 <= b.y2) ++n;
    }
  }
  return n;
}

struct Gen {
  std::mt19937_64 g;
  explicit Gen(std::uint64_t seed) : g(seed) {}
  double real(double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(g);
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); }
  BoundingBox box(double lo, double hi, double min_side = 1.0) {
    const double x1 = real(lo, hi - min_side);
    const double y1 = real(lo, hi - min_side);
    return {x1, y1, real(x1 + min_side, hi), real(y1 + min_side, hi)};
  }
  BoundingBox int_box(int lo, int hi) {
    const int x1 = integer(lo, hi - 1);
    const int y1 = integer(lo, hi - 1);
    return {double(x1), double(y1), double(integer(x1 + 1, hi)), double(integer(y1 + 1, hi))};
  }
};

void check_box(const BoundingBox& got, const BoundingBox& want, double tol = 1e-9) {
  CHECK(got.x1 == doctest::Approx(want.x1).epsilon(tol));
  CHECK(got.y1 == doctest::Approx(want.y1).epsilon(tol));
  CHECK(got.x2 == doctest::Approx(want.x2).epsilon(tol));
  CHECK(got.y2 == doctest::Approx(want.y2).epsilon(tol));
}

}  // namespace

TEST_CASE("iou examples") {
  CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
  CHECK(iou({0, 0, 10, 10}, {20, 20, 30, 30}) == 0.0);
  CHECK(iou({0, 0, 100, 100}, {10, 0, 110, 100}) == doctest::Approx(9000.0 / 11000.0));
}

TEST_CASE("overlap_ratio examples") {
  const BoundingBox gt{100, 100, 200, 200};
  CHECK(overlap_ratio(gt, gt) == 1.0);
  CHECK(overlap_ratio({150, 100, 250, 200}, gt) == doctest::Approx(0.5));
  CHECK(overlap_ratio({150, 150, 250, 250}, gt) == doctest::Approx(0.25));
}

TEST_CASE("perturb examples") {
  const BoundingBox gt{100, 100, 200, 200};
  const ImageDims dims{1000, 1000};
  CHECK(perturb(gt, {0.0, std::nullopt, ClampMode::kIntersect}, dims, 99) == gt);

  PerturbationSpec right{50.0, std::array<double, 2>{1.0, 0.0}, ClampMode::kIntersect};
  check_box(perturb(gt, right, dims, 0), {150, 100, 250, 200});

  const double s = 1.0 / std::sqrt(2.0);
  PerturbationSpec diag{gt.half_diagonal(), std::array<double, 2>{s, s}, ClampMode::kIntersect};
  const BoundingBox shifted = perturb(gt, diag, dims, 0);
  check_box(shifted, {150, 150, 250, 250});
  CHECK(overlap_ratio(shifted, gt) == doctest::Approx(0.25));
}

TEST_CASE("perturb errors") {
  const ImageDims dims{1000, 1000};
  CHECK_THROWS_AS(perturb({100, 100, 100, 200}, {10.0}, dims, 0), GeometryError);
  CHECK_THROWS_AS(perturb({100, 100, 200, 200}, {-1.0}, dims, 0), GeometryError);
  CHECK_THROWS_AS(perturb({100, 100, 200, 200}, {2000.0}, dims, 0), GeometryError);
  CHECK_THROWS_AS(perturb({900, 900, 1100, 1100}, {10.0}, dims, 0), GeometryError);
  PerturbationSpec skew{10.0, std::array<double, 2>{1.0, 1.0}, ClampMode::kIntersect};
  CHECK_THROWS_AS(perturb({100, 100, 200, 200}, skew, dims, 0), GeometryError);
}

TEST_CASE("perturb clamp-to-image keeps the window size") {
  PerturbationSpec left{150.0, std::array<double, 2>{-1.0, 0.0}, ClampMode::kClampToImage};
  check_box(perturb({100, 100, 200, 200}, left, {1000, 1000}, 0), {0, 100, 100, 200});
  PerturbationSpec cut{150.0, std::array<double, 2>{-1.0, 0.0}, ClampMode::kIntersect};
  check_box(perturb({100, 100, 200, 200}, cut, {1000, 1000}, 0), {0, 100, 50, 200});
}

TEST_CASE("expand examples") {
  const ImageDims big{1000, 1000};
  CHECK(expand({100, 100, 200, 200}, 1.0, big) == BoundingBox{100, 100, 200, 200});
  check_box(expand({100, 100, 200, 200}, 2.0, big), {50, 50, 250, 250});
  check_box(expand({10, 10, 110, 110}, 3.0, {500, 500}), {0, 0, 210, 210});
  CHECK_THROWS_AS(expand({10, 10, 110, 110}, 0.5, big), GeometryError);
}

TEST_CASE("point_to_crop examples") {
  const ImageDims dims{4000, 3000};
  CHECK(point_to_crop({500, 400, CoordSpace::kPixel}, dims) == BoundingBox{372, 272, 628, 528});
  CHECK(point_to_crop({50, 60, CoordSpace::kPixel}, dims) == BoundingBox{0, 0, 256, 256});
  CHECK(point_to_crop({50, 50, CoordSpace::kPercent}, {1000, 1000}) ==
        BoundingBox{372, 372, 628, 628});
  CHECK(point_to_crop({10, 10, CoordSpace::kPixel}, {100, 400}) == BoundingBox{0, 0, 100, 256});
  CHECK_THROWS_AS(point_to_crop({5000, 10, CoordSpace::kPixel}, dims), GeometryError);
}

TEST_CASE("resize_dims examples") {
  CHECK(resize_dims({2048, 1024}, ResolutionBudget::capped(256)) == ImageDims{256, 128});
  CHECK(resize_dims({200, 100}, ResolutionBudget::capped(256)) == ImageDims{200, 100});
  CHECK(resize_dims({1000, 333}, ResolutionBudget::capped(256)) == ImageDims{256, 85});
  CHECK(resize_dims({1000, 333}, ResolutionBudget::full()) == ImageDims{1000, 333});
  CHECK(resize_dims({10000, 1}, ResolutionBudget::capped(256)) == ImageDims{256, 1});
}

TEST_CASE("visual_tokens examples") {
  CHECK(visual_tokens({256, 256}) == 100);
  CHECK(visual_tokens({28, 28}) == 1);
  CHECK(visual_tokens({29, 28}) == 2);
  const auto small = visual_tokens(resize_dims({8500, 8500}, ResolutionBudget::capped(256)));
  const auto full = visual_tokens({8500, 8500});
  CHECK(small == 100);
  CHECK(full == 92416);
  CHECK(static_cast<double>(small) / full == doctest::Approx(0.00108).epsilon(0.01));
}

TEST_CASE("denormalize examples") {
  CHECK(denormalize({0, 0, 1000, 1000}, CoordSpace::kNorm1000, {640, 480}) ==
        BoundingBox{0, 0, 640, 480});
  check_box(denormalize({250, 250, 750, 750}, CoordSpace::kNorm1000, {1000, 2000}),
            {250, 500, 750, 1500});
  CHECK(denormalize({0, 0, 100, 100}, CoordSpace::kPercent, {512, 256}) ==
        BoundingBox{0, 0, 512, 256});
  CHECK_THROWS_AS(denormalize({500, 0, 400, 100}, CoordSpace::kNorm1000, {640, 480}),
                  GeometryError);
}

TEST_CASE("resolution budget parsing") {
  CHECK(ResolutionBudget::parse("full").is_full());
  CHECK(ResolutionBudget::parse("512").longest_side == 512);
  CHECK(ResolutionBudget::parse("256").label() == "256");
  CHECK(ResolutionBudget::parse("full").label() == "full");
  CHECK_THROWS(ResolutionBudget::parse("0"));
  CHECK_THROWS(ResolutionBudget::parse("big"));
}

// ---- properties -------------------------------------------------------------

TEST_CASE("property: iou is symmetric and bounded") {
  Gen g(1);
  for (int i = 0; i < kCases; ++i) {
    const BoundingBox a = g.box(-500, 500, 0.01);
    const BoundingBox b = g.box(-500, 500, 0.01);
    const double ab = iou(a, b);
    REQUIRE(ab == iou(b, a));
    REQUIRE(ab >= 0.0);
    REQUIRE(ab <= 1.0);
  }
}

TEST_CASE("property: iou(a,a) = 1 and iou = 0 exactly when disjoint") {
  Gen g(2);
  for (int i = 0; i < kCases; ++i) {
    const BoundingBox a = g.int_box(0, 30);
    const BoundingBox b = g.int_box(0, 30);
    REQUIRE(iou(a, a) == 1.0);
    const long shared = cells_in_both(a, b);
    REQUIRE((iou(a, b) == 0.0) == (shared == 0));
    const double uni = a.area() + b.area() - static_cast<double>(shared);
    REQUIRE(iou(a, b) == doctest::Approx(static_cast<double>(shared) / uni).epsilon(1e-12));
    REQUIRE(overlap_ratio(a, b) ==
            doctest::Approx(static_cast<double>(shared) / b.area()).epsilon(1e-12));
  }
}

TEST_CASE("property: union_coverage matches a cell count") {
  Gen g(3);
  for (int i = 0; i < kCases; ++i) {
    const BoundingBox gt = g.int_box(0, 24);
    std::vector<BoundingBox> crops;
    const int k = g.integer(0, 4);
    for (int j = 0; j < k; ++j) crops.push_back(g.int_box(0, 24));
    long covered = 0;
    for (int x = static_cast<int>(gt.x1); x < gt.x2; ++x) {
      for (int y = static_cast<int>(gt.y1); y < gt.y2; ++y) {
        for (const auto& c : crops) {
          if (x >= c.x1 && x + 1 <= c.x2 && y >= c.y1 && y + 1 <= c.y2) {
            ++covered;
            break;
          }
        }
      }
    }
    REQUIRE(union_coverage(crops, gt) ==
            doctest::Approx(static_cast<double>(covered) / gt.area()).epsilon(1e-12));
  }
}

TEST_CASE("property: overlap is non-increasing in r along a fixed direction") {
  Gen g(4);
  const ImageDims dims{100000, 100000};
  for (int i = 0; i < kCases; ++i) {
    const double w = g.real(5, 500);
    const double h = g.real(5, 500);
    const BoundingBox gt{50000, 50000, 50000 + w, 50000 + h};
    const double theta = g.real(0, 2 * 3.141592653589793);
    const std::array<double, 2> dir{std::cos(theta), std::sin(theta)};
    double r1 = g.real(0, gt.half_diagonal() * 2);
    double r2 = g.real(0, gt.half_diagonal() * 2);
    if (r1 > r2) std::swap(r1, r2);
    const BoundingBox a = perturb(gt, {r1, dir, ClampMode::kIntersect}, dims, 0);
    const BoundingBox b = perturb(gt, {r2, dir, ClampMode::kIntersect}, dims, 0);
    REQUIRE(overlap_ratio(a, gt) >= overlap_ratio(b, gt) - 1e-12);
    // Unclamped: same size, center moved by exactly r.
    REQUIRE(b.width() == doctest::Approx(w).epsilon(1e-9));
    REQUIRE(b.height() == doctest::Approx(h).epsilon(1e-9));
    REQUIRE(std::hypot(b.center_x() - gt.center_x(), b.center_y() - gt.center_y()) ==
            doctest::Approx(r2).epsilon(1e-9));
  }
}

TEST_CASE("property: perturb with r = 0 is the identity for any seed") {
  Gen g(5);
  for (int i = 0; i < kCases; ++i) {
    const ImageDims dims{g.integer(50, 5000), g.integer(50, 5000)};
    const BoundingBox gt = g.box(0, std::min(dims.width, dims.height), 0.5);
    REQUIRE(perturb(gt, {0.0}, dims, g.g()) == gt);
  }
}

TEST_CASE("property: seeded perturbation is deterministic and moves by r") {
  Gen g(6);
  const ImageDims dims{100000, 100000};
  for (int i = 0; i < kCases; ++i) {
    const BoundingBox gt{40000, 40000, 40000 + g.real(1, 300), 40000 + g.real(1, 300)};
    const double r = g.real(0, 1000);
    const std::uint64_t seed = g.g();
    const BoundingBox a = perturb(gt, {r}, dims, seed);
    REQUIRE(a == perturb(gt, {r}, dims, seed));
    REQUIRE(std::hypot(a.center_x() - gt.center_x(), a.center_y() - gt.center_y()) ==
            doctest::Approx(r).epsilon(1e-9));
  }
}

TEST_CASE("property: expand composes multiplicatively without clamping") {
  Gen g(7);
  const ImageDims dims{1000000, 1000000};
  for (int i = 0; i < kCases; ++i) {
    const double cx = g.real(400000, 600000);
    const double cy = g.real(400000, 600000);
    const double w = g.real(1, 1000);
    const double h = g.real(1, 1000);
    const BoundingBox b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    const double s1 = g.real(1, 10);
    const double s2 = g.real(1, 10);
    const BoundingBox twice = expand(expand(b, s1, dims), s2, dims);
    const BoundingBox once = expand(b, s1 * s2, dims);
    REQUIRE(twice.x1 == doctest::Approx(once.x1).epsilon(1e-9));
    REQUIRE(twice.y2 == doctest::Approx(once.y2).epsilon(1e-9));
    REQUIRE(once.area() == doctest::Approx(b.area() * s1 * s1 * s2 * s2).epsilon(1e-9));
  }
}

TEST_CASE("property: resize_dims is idempotent, never upscales and rounds half up") {
  Gen g(8);
  for (int i = 0; i < kCases; ++i) {
    const ImageDims d{g.integer(1, 20000), g.integer(1, 20000)};
    const ResolutionBudget b = ResolutionBudget::capped(g.integer(1, 2048));
    const ImageDims once = resize_dims(d, b);
    REQUIRE(resize_dims(once, b) == once);
    REQUIRE(once.width <= d.width);
    REQUIRE(once.height <= d.height);
    const int longest = d.longest_side();
    const int cap = *b.longest_side;
    if (longest <= cap) {
      REQUIRE(once == d);
    } else {
      const int other = d.width >= d.height ? d.height : d.width;
      const long double exact = static_cast<long double>(other) * cap / longest;
      const int want = std::max(1, static_cast<int>(std::floor(exact + 0.5L)));
      REQUIRE(once.longest_side() == cap);
      REQUIRE((d.width >= d.height ? once.height : once.width) == want);
    }
  }
}

TEST_CASE("property: point_to_crop stays inside with exact side when possible") {
  Gen g(9);
  for (int i = 0; i < kCases; ++i) {
    const ImageDims dims{g.integer(1, 3000), g.integer(1, 3000)};
    const int side = g.integer(1, 600);
    const PointHypothesis p{g.real(0, dims.width), g.real(0, dims.height), CoordSpace::kPixel};
    const BoundingBox c = point_to_crop(p, dims, side);
    REQUIRE(c.x1 >= 0.0);
    REQUIRE(c.y1 >= 0.0);
    REQUIRE(c.x2 <= dims.width);
    REQUIRE(c.y2 <= dims.height);
    REQUIRE(c.width() == doctest::Approx(std::min(side, dims.width)));
    REQUIRE(c.height() == doctest::Approx(std::min(side, dims.height)));
  }
}

TEST_CASE("property: visual_tokens is monotone in each dimension") {
  Gen g(10);
  for (int i = 0; i < kCases; ++i) {
    const int w = g.integer(1, 10000);
    const int h = g.integer(1, 10000);
    const int dw = g.integer(0, 100);
    const int dh = g.integer(0, 100);
    const TokenCounter tc{g.integer(1, 64)};
    REQUIRE(visual_tokens({w + dw, h}, tc) >= visual_tokens({w, h}, tc));
    REQUIRE(visual_tokens({w, h + dh}, tc) >= visual_tokens({w, h}, tc));
    const long want = ((w + tc.patch_px - 1) / tc.patch_px) * static_cast<long>((h + tc.patch_px - 1) / tc.patch_px);
    REQUIRE(visual_tokens({w, h}, tc) == want);
  }
}

TEST_CASE("property: denormalize output is inside the image and ordered") {
  Gen g(11);
  for (int i = 0; i < kCases; ++i) {
    const ImageDims dims{g.integer(1, 5000), g.integer(1, 5000)};
    const BoundingBox b = g.box(0, 1000, 1.0);
    const BoundingBox px = denormalize(b, CoordSpace::kNorm1000, dims);
    REQUIRE(px.valid());
    REQUIRE(px.x1 >= 0.0);
    REQUIRE(px.x2 <= dims.width);
    REQUIRE(px.y2 <= dims.height);
    REQUIRE(px.x1 == doctest::Approx(b.x1 * dims.width / 1000.0).epsilon(1e-12));
  }
}

TEST_CASE("property: pixel_align contains the box and is integral") {
  Gen g(12);
  for (int i = 0; i < kCases; ++i) {
    const ImageDims dims{g.integer(10, 3000), g.integer(10, 3000)};
    const BoundingBox b = g.box(0, std::min(dims.width, dims.height), 0.1);
    const auto a = pixel_align(b, dims);
    REQUIRE(a.has_value());
    REQUIRE(a->x1 == std::floor(a->x1));
    REQUIRE(a->y2 == std::floor(a->y2));
    REQUIRE(a->x1 <= b.x1);
    REQUIRE(a->y1 <= b.y1);
    REQUIRE(a->x2 >= std::min(b.x2, double(dims.width)));
    REQUIRE(a->y2 >= std::min(b.y2, double(dims.height)));
  }
}
