#pragma once

// Lazy image references. A reference names a region of an original image
// and the dimensions it is delivered at; pixels are only produced when a
// backend needs encoded bytes. Token accounting depends on dims alone.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparc/geometry.hpp"

namespace sparc {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageRef {
  std::string source;      // original image path
  ImageDims source_dims;   // original dimensions
  BoundingBox region;      // integer-aligned region of the original
  ImageDims dims;          // delivered dimensions after downsizing

  // Canonical text form, "source#x1,y1,x2,y2@WxH". Two references with equal
  // descriptors always materialize to identical bytes.
  std::string descriptor() const;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

// Whole original image downsized per the budget.
ImageRef whole_image(const std::string& source, ImageDims source_dims,
                     const ResolutionBudget& budget);

// Crop of the original at full fidelity, then downsized to `cap` if larger.
// nullopt when the pixel-aligned region has no area inside the image.
std::optional<ImageRef> crop_image(const std::string& source,
                                   ImageDims source_dims,
                                   const BoundingBox& region,
                                   std::optional<int> cap);

// Width and height from the PNG or JPEG header, falling back to a full
// decode for other formats. nullopt when unreadable.
std::optional<ImageDims> probe_image_dims(const std::filesystem::path& path);

struct RasterImage {
  ImageDims dims;
  int channels = 3;
  std::vector<std::uint8_t> pixels;  // row-major, BGR interleaved
};

// Reads the source, cuts the region and resizes bilinearly to ref.dims.
RasterImage materialize(const ImageRef& ref);

std::vector<std::uint8_t> encode_png(const ImageRef& ref);

std::string base64_encode(std::span<const std::uint8_t> bytes);

// "data:image/png;base64,..."
std::string to_data_url(const ImageRef& ref);

}  // namespace sparc
