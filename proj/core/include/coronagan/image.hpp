#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coronagan/tensor.hpp"

namespace coronagan {

/// A single image, shape [1, C, H, W], intensities in [0, 1].
/// C == 1 for the OCT domain, C == 3 for histology.
using ImageTensor = Tensor<float>;

enum class Domain { kOct, kHistology };

inline constexpr int kNumLayerClasses = 3;  // intima, media, adventitia
inline constexpr std::uint8_t kBackgroundClass = 3;

[[nodiscard]] inline int channels_of(Domain d) { return d == Domain::kOct ? 1 : 3; }
[[nodiscard]] std::string to_string(Domain d);
[[nodiscard]] Domain parse_domain(const std::string& s);

/// Per-pixel layer labels: 0 intima, 1 media, 2 adventitia.
class SegmentationMask {
 public:
  SegmentationMask() = default;
  SegmentationMask(int height, int width, std::uint8_t fill = 0)
      : height_(height), width_(width), labels_(static_cast<std::size_t>(height) * width, fill) {}

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] std::uint8_t& at(int r, int c) {
    return labels_[static_cast<std::size_t>(r) * width_ + c];
  }
  [[nodiscard]] std::uint8_t at(int r, int c) const {
    return labels_[static_cast<std::size_t>(r) * width_ + c];
  }
  [[nodiscard]] std::vector<std::uint8_t>& labels() { return labels_; }
  [[nodiscard]] const std::vector<std::uint8_t>& labels() const { return labels_; }

  /// Sub-rectangle copy; the region must lie inside the mask.
  [[nodiscard]] SegmentationMask crop(int row, int col, int height, int width) const;

  friend bool operator==(const SegmentationMask&, const SegmentationMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> labels_;
};

struct LabeledSample {
  ImageTensor image;
  SegmentationMask mask;
  Domain domain = Domain::kOct;
};

/// Crops image rows [row, row+height) and cols [col, col+width).
[[nodiscard]] ImageTensor crop(const ImageTensor& image, int row, int col, int height, int width);

/// Quantizes with round(255 v) after clamping to [0, 1]. 1-channel images are
/// written as gray, 3-channel as RGB.
void write_png(const std::filesystem::path& path, const ImageTensor& image);

/// Decodes an 8-bit gray/RGB(A) PNG into [0, 1] floats. Gray and RGB are kept as-is;
/// alpha is dropped.
[[nodiscard]] ImageTensor read_png(const std::filesystem::path& path);

/// Masks are stored as 8-bit gray PNGs holding the raw class ids.
void write_mask_png(const std::filesystem::path& path, const SegmentationMask& mask);
[[nodiscard]] SegmentationMask read_mask_png(const std::filesystem::path& path);

/// Places images side by side (gray inputs replicated to RGB).
[[nodiscard]] ImageTensor montage(const std::vector<ImageTensor>& images);

}  // namespace coronagan
