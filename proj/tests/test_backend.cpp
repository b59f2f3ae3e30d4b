#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <thread>

#include "sparc/oracle_backend.hpp"
#include "sparc/seeding.hpp"
#include "support.hpp"

using namespace sparc;
using sparc::testing::ScriptedBackend;

namespace {

const ImageDims kDims{2000, 1500};
const BoundingBox kGt{1000, 600, 1200, 800};

OracleTruth truth() { return {"q1", kDims, {kGt}, "ABCD", 'C'}; }

ChatRequest ird_request(double temperature, std::uint64_t seed) {
  ChatRequest req;
  ChatMessage msg;
  msg.content.push_back(whole_image("/img/q1.png", kDims, ResolutionBudget::capped(512)));
  msg.content.push_back(TextBlock{"Locate the regions."});
  req.messages.push_back(msg);
  req.temperature = temperature;
  req.seed = seed;
  req.tag = {"q1", Stage::kIrd, 0};
  return req;
}

ChatRequest reasoning_request(std::span<const BoundingBox> crop_regions, std::uint64_t seed) {
  ChatRequest req;
  ChatMessage msg;
  msg.content.push_back(whole_image("/img/q1.png", kDims, ResolutionBudget::capped(512)));
  for (const auto& r : crop_regions) {
    msg.content.push_back(*crop_image("/img/q1.png", kDims, r, 512));
  }
  msg.content.push_back(TextBlock{"Answer with the option's letter."});
  req.messages.push_back(msg);
  req.seed = seed;
  req.tag = {"q1", Stage::kReasoning, 0};
  return req;
}

double correct_rate(const OracleBackend& oracle, std::span<const BoundingBox> crops, int draws) {
  int correct = 0;
  for (int i = 0; i < draws; ++i) {
    const auto res = oracle.complete(reasoning_request(crops, mix_seed({77, std::uint64_t(i)})));
    REQUIRE(res.ok());
    if (extract_choice_letter(res.response().text, "ABCD") == 'C') ++correct;
  }
  return static_cast<double>(correct) / draws;
}

}  // namespace

TEST_CASE("chat request validation") {
  ChatRequest req;
  CHECK_THROWS(req.validate());
  req = ird_request(0.0, 1);
  CHECK_NOTHROW(req.validate());
  req.temperature = -0.1;
  CHECK_THROWS(req.validate());
}

TEST_CASE("oracle config validation") {
  OracleConfig cfg;
  cfg.curve = {0.9, 0.5, 0.2, 0.8};
  CHECK_THROWS(cfg.validate());
  cfg.curve = {0.2, 0.9, 0.8, 0.2};
  CHECK_THROWS(cfg.validate());
  cfg.curve = {};
  cfg.sigma_frac = -1;
  CHECK_THROWS(cfg.validate());
  CHECK_THROWS(OracleBackend({}, {{"x", kDims, {kGt}, "", 'A'}}));
}

TEST_CASE("oracle at temperature 0 returns the ground-truth box") {
  OracleBackend oracle({}, {truth()});
  const auto res = oracle.complete(ird_request(0.0, 5));
  REQUIRE(res.ok());
  const auto h = parse_boxes({res.response().text, Stage::kIrd, 0}, kDims, CoordSpace::kPixel);
  REQUIRE(h.boxes.size() == 1);
  CHECK(h.boxes[0] == kGt);
  CHECK(res.response().prompt_tokens > 0);
  CHECK(res.response().completion_tokens > 0);
}

TEST_CASE("oracle point modality at temperature 0 returns the gt center") {
  OracleConfig cfg;
  cfg.modality = Modality::kPoint;
  OracleBackend oracle(cfg, {truth()});
  const auto res = oracle.complete(ird_request(0.0, 5));
  REQUIRE(res.ok());
  const auto h = parse_points({res.response().text, Stage::kIrd, 0}, kDims);
  REQUIRE(h.points.size() == 1);
  CHECK(h.points[0].x == doctest::Approx(1100));
  CHECK(h.points[0].y == doctest::Approx(700));
}

TEST_CASE("oracle rejects unknown samples with a tagged error") {
  OracleBackend oracle({}, {truth()});
  auto req = ird_request(0.0, 1);
  req.tag.sample_id = "nope";
  req.tag.rollout_index = 3;
  const auto res = oracle.complete(req);
  REQUIRE(!res.ok());
  CHECK(res.error().tag.sample_id == "nope");
  CHECK(res.error().tag.rollout_index == 3);
}

TEST_CASE("answer curve closed form") {
  const AnswerCurve c{0.25, 0.95, 0.2, 0.8};
  CHECK(c.probability(0.0) == doctest::Approx(0.25));
  CHECK(c.probability(0.2) == doctest::Approx(0.25));
  CHECK(c.probability(0.5) == doctest::Approx(0.6));
  CHECK(c.probability(0.8) == doctest::Approx(0.95));
  CHECK(c.probability(1.0) == doctest::Approx(0.95));
}

TEST_CASE("oracle answers at p_ceil = 1 are always correct with full overlap") {
  OracleConfig cfg;
  cfg.curve = {0.25, 1.0, 0.2, 0.8};
  OracleBackend oracle(cfg, {truth()});
  const BoundingBox crops[] = {kGt};
  CHECK(correct_rate(oracle, crops, 2000) == 1.0);
}

TEST_CASE("oracle accuracy at mid-ramp matches the closed form") {
  OracleConfig cfg;
  cfg.curve = {0.25, 0.95, 0.2, 0.8};
  OracleBackend oracle(cfg, {truth()});
  // Left half of the gt: overlap (a + b) / 2 = 0.5.
  const BoundingBox crops[] = {{1000, 600, 1100, 800}};
  const double quality = oracle.evidence_quality(
      truth(), whole_image("/img/q1.png", kDims, ResolutionBudget::capped(512)),
      std::vector<const ImageRef*>{});
  CHECK(quality == 0.0);
  const double rate = correct_rate(oracle, crops, 10000);
  CHECK(std::abs(rate - 0.6) <= 0.02);
}

TEST_CASE("oracle accuracy with no crops sits at p_floor") {
  OracleConfig cfg;
  cfg.curve = {0.3, 0.95, 0.2, 0.8};
  OracleBackend oracle(cfg, {truth()});
  CHECK(std::abs(correct_rate(oracle, {}, 10000) - 0.3) <= 0.02);
}

TEST_CASE("oracle is deterministic per seed and varies across seeds") {
  OracleConfig cfg;
  cfg.seed = 9;
  OracleBackend a(cfg, {truth()}), b(cfg, {truth()});
  std::set<std::string> distinct;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto ra = a.complete(ird_request(0.7, s));
    const auto rb = b.complete(ird_request(0.7, s));
    REQUIRE(ra.response().text == rb.response().text);
    distinct.insert(ra.response().text);
  }
  CHECK(distinct.size() == 50);
}

TEST_CASE("property: localizer overlap is monotone non-increasing in sigma") {
  const double sigmas[] = {0.0, 0.05, 0.1, 0.2, 0.4, 0.8};
  double previous = 2.0;
  for (double sigma : sigmas) {
    OracleConfig cfg;
    cfg.sigma_frac = sigma;
    cfg.seed = 4;
    OracleBackend oracle(cfg, {truth()});
    double sum = 0.0;
    for (std::uint64_t s = 0; s < 10000; ++s) {
      const auto res = oracle.complete(ird_request(0.7, s));
      const auto h = parse_boxes({res.response().text, Stage::kIrd, 0}, kDims, CoordSpace::kPixel);
      if (!h.boxes.empty()) sum += overlap_ratio(h.boxes[0], kGt);
    }
    const double mean = sum / 10000;
    INFO("sigma " << sigma << " mean overlap " << mean);
    CHECK(mean <= previous);
    previous = mean;
  }
  CHECK(previous < 0.5);
}

TEST_CASE("localizer noise scales with temperature") {
  OracleBackend oracle({}, {truth()});
  auto mean_overlap = [&](double t) {
    double sum = 0.0;
    for (std::uint64_t s = 0; s < 2000; ++s) {
      const auto h = parse_boxes({oracle.complete(ird_request(t, s)).response().text,
                                  Stage::kIrd, 0},
                                 kDims, CoordSpace::kPixel);
      if (!h.boxes.empty()) sum += overlap_ratio(h.boxes[0], kGt);
    }
    return sum / 2000;
  };
  const double cold = mean_overlap(0.1), warm = mean_overlap(0.7), hot = mean_overlap(1.4);
  CHECK(cold > warm);
  CHECK(warm > hot);
}

TEST_CASE("batched_complete keeps request order and bounds concurrency") {
  std::atomic<int> in_flight{0}, peak{0};
  ScriptedBackend slow([&](const ChatRequest& req) -> CompletionResult {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1 + (7 - req.tag.rollout_index) * 3));
    --in_flight;
    return ChatResponse{"r" + std::to_string(req.tag.rollout_index), 1, 1, 0};
  });
  std::vector<ChatRequest> reqs;
  for (int k = 0; k < 8; ++k) {
    auto r = ird_request(0.7, k);
    r.tag.rollout_index = k;
    reqs.push_back(r);
  }
  const auto out = batched_complete(slow, reqs, 4);
  REQUIRE(out.size() == 8);
  for (int k = 0; k < 8; ++k) CHECK(out[k].response().text == "r" + std::to_string(k));
  CHECK(peak.load() <= 4);
  CHECK(peak.load() >= 2);
  CHECK_THROWS(batched_complete(slow, reqs, 0));
  CHECK(batched_complete(slow, {}, 4).empty());
}

TEST_CASE("batched_complete reports failures positionally") {
  ScriptedBackend flaky([](const ChatRequest& req) -> CompletionResult {
    if (req.tag.rollout_index == 5) {
      return BackendError{ErrorKind::kNetwork, "down", req.tag, 0, 3};
    }
    return ChatResponse{"ok", 1, 1, 0};
  });
  std::vector<ChatRequest> reqs;
  for (int k = 0; k < 8; ++k) {
    auto r = ird_request(0.7, k);
    r.tag.rollout_index = k;
    reqs.push_back(r);
  }
  const auto out = batched_complete(flaky, reqs, 3);
  int ok = 0;
  for (int k = 0; k < 8; ++k) {
    if (out[k].ok()) {
      ++ok;
    } else {
      CHECK(k == 5);
      CHECK(out[k].error().tag.rollout_index == 5);
    }
  }
  CHECK(ok == 7);
}

TEST_CASE("property: oracle batches are identical across max_in_flight") {
  OracleConfig cfg;
  cfg.seed = 3;
  OracleBackend oracle(cfg, {truth()});
  std::vector<ChatRequest> reqs;
  for (int k = 0; k < 32; ++k) {
    reqs.push_back(k % 2 ? ird_request(0.7, mix_seed({1, std::uint64_t(k)}))
                         : reasoning_request(std::vector<BoundingBox>{kGt}, k));
  }
  const auto serial = batched_complete(oracle, reqs, 1);
  for (int m : {2, 4, 8, 32}) {
    const auto par = batched_complete(oracle, reqs, m);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      REQUIRE(par[i].response().text == serial[i].response().text);
      REQUIRE(par[i].response().prompt_tokens == serial[i].response().prompt_tokens);
    }
  }
}

TEST_CASE("estimate_text_tokens") {
  CHECK(estimate_text_tokens("") == 0);
  CHECK(estimate_text_tokens("hello world") == 2);
  CHECK(estimate_text_tokens("[10,20]") == 5);
  CHECK(estimate_text_tokens("abc123") == 2);
}
