#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coronagan/image.hpp"
#include "coronagan/networks.hpp"

namespace coronagan::infer {

enum class Direction { kOctToHist, kHistToOct };

/// Accepts "O2H"/"H2O" and "oct2hist"/"hist2oct", case-insensitive.
[[nodiscard]] Direction parse_direction(const std::string& s);
[[nodiscard]] std::string to_string(Direction d);

/// Reflect-pads bottom and right edges up to the next multiple of `multiple`.
[[nodiscard]] ImageTensor pad_to_multiple(const ImageTensor& image, int multiple);

/// Whole-image translation. Image sides must be multiples of the generator's
/// downsampling factor unless `pad` is set, in which case the input is padded
/// and the output cropped back to the input size.
[[nodiscard]] ImageTensor translate(const net::CoronaryGan<float>& model, const ImageTensor& image,
                                    Direction direction, bool pad = false);

struct InferOptions {
  Direction direction = Direction::kOctToHist;
  bool montage = true;
  bool pad_to_multiple = false;
};

struct InferResult {
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path montage;  // empty when disabled
};

/// Translates each PNG (directories expand to their *.png files, sorted) and
/// writes <stem>_translated.png plus <stem>_montage.png (input | output).
std::vector<InferResult> run(const net::CoronaryGan<float>& model,
                             const std::vector<std::filesystem::path>& inputs,
                             const std::filesystem::path& out_dir, const InferOptions& options);

}  // namespace coronagan::infer
