#include "sparc/image.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <openssl/evp.h>

namespace sparc {

namespace {

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

std::optional<ImageDims> probe_png(std::istream& in) {
  std::array<unsigned char, 24> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  if (in.gcount() != static_cast<std::streamsize>(head.size())) return std::nullopt;
  static constexpr std::array<unsigned char, 8> kSig{0x89, 'P', 'N', 'G',
                                                     '\r', '\n', 0x1a, '\n'};
  if (!std::equal(kSig.begin(), kSig.end(), head.begin())) return std::nullopt;
  const auto w = be32(&head[16]);
  const auto h = be32(&head[20]);
  if (w == 0 || h == 0 || w > 1u << 30 || h > 1u << 30) return std::nullopt;
  return ImageDims{static_cast<int>(w), static_cast<int>(h)};
}

std::optional<ImageDims> probe_jpeg(std::istream& in) {
  auto byte = [&]() -> int { return in.get(); };
  if (byte() != 0xFF || byte() != 0xD8) return std::nullopt;
  for (;;) {
    int c = byte();
    if (c == EOF) return std::nullopt;
    if (c != 0xFF) continue;
    int marker = byte();
    while (marker == 0xFF) marker = byte();
    if (marker == EOF) return std::nullopt;
    if (marker == 0xD8 || marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) {
      continue;
    }
    const int hi = byte();
    const int lo = byte();
    if (hi == EOF || lo == EOF) return std::nullopt;
    const int len = (hi << 8) | lo;
    const bool sof = marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 &&
                     marker != 0xC8 && marker != 0xCC;
    if (sof) {
      std::array<unsigned char, 5> f{};
      in.read(reinterpret_cast<char*>(f.data()), f.size());
      if (in.gcount() != 5) return std::nullopt;
      const int h = (f[1] << 8) | f[2];
      const int w = (f[3] << 8) | f[4];
      if (w == 0 || h == 0) return std::nullopt;
      return ImageDims{w, h};
    }
    if (len < 2) return std::nullopt;
    in.seekg(len - 2, std::ios::cur);
    if (!in) return std::nullopt;
  }
}

cv::Mat load_source(const std::string& source) {
  cv::Mat img = cv::imread(source, cv::IMREAD_COLOR);
  if (img.empty()) throw ImageError("cannot read image '" + source + "'");
  return img;
}

}  // namespace

std::string ImageRef::descriptor() const {
  std::ostringstream os;
  os << source << "#" << static_cast<long long>(region.x1) << ","
     << static_cast<long long>(region.y1) << ","
     << static_cast<long long>(region.x2) << ","
     << static_cast<long long>(region.y2) << "@" << dims.width << "x"
     << dims.height;
  return os.str();
}

ImageRef whole_image(const std::string& source, ImageDims source_dims,
                     const ResolutionBudget& budget) {
  return {source, source_dims, image_frame(source_dims),
          resize_dims(source_dims, budget)};
}

std::optional<ImageRef> crop_image(const std::string& source,
                                   ImageDims source_dims,
                                   const BoundingBox& region,
                                   std::optional<int> cap) {
  auto aligned = pixel_align(region, source_dims);
  if (!aligned) return std::nullopt;
  const ImageDims native{static_cast<int>(aligned->width()),
                         static_cast<int>(aligned->height())};
  return ImageRef{source, source_dims, *aligned, cap_dims(native, cap)};
}

std::optional<ImageDims> probe_image_dims(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  if (auto d = probe_png(in)) return d;
  in.clear();
  in.seekg(0);
  if (auto d = probe_jpeg(in)) return d;
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) return std::nullopt;
  return ImageDims{img.cols, img.rows};
}

RasterImage materialize(const ImageRef& ref) {
  cv::Mat img = load_source(ref.source);
  if (img.cols != ref.source_dims.width || img.rows != ref.source_dims.height) {
    throw ImageError("image '" + ref.source + "' has changed dimensions");
  }
  const cv::Rect roi(static_cast<int>(ref.region.x1),
                     static_cast<int>(ref.region.y1),
                     static_cast<int>(ref.region.width()),
                     static_cast<int>(ref.region.height()));
  cv::Mat cropped = img(roi);
  cv::Mat out;
  if (cropped.cols == ref.dims.width && cropped.rows == ref.dims.height) {
    out = cropped.clone();
  } else {
    cv::resize(cropped, out, cv::Size(ref.dims.width, ref.dims.height), 0, 0,
               cv::INTER_LINEAR);
  }
  RasterImage raster;
  raster.dims = {out.cols, out.rows};
  raster.channels = out.channels();
  raster.pixels.assign(out.datastart, out.dataend);
  return raster;
}

std::vector<std::uint8_t> encode_png(const ImageRef& ref) {
  RasterImage raster = materialize(ref);
  cv::Mat mat(raster.dims.height, raster.dims.width, CV_8UC3,
              raster.pixels.data());
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", mat, bytes)) {
    throw ImageError("PNG encoding failed for " + ref.descriptor());
  }
  return bytes;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string to_data_url(const ImageRef& ref) {
  const auto png = encode_png(ref);
  return "data:image/png;base64," + base64_encode(png);
}

}  // namespace sparc
