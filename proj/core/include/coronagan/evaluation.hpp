#pragma once

// Perceptual Hash Value scoring.
//
//   phv_i(a, b) = 100/N * #{ n : |avg(F_i(a))_n - avg(F_i(b))_n| <= T }
//
// F_i is stage i (1..3) of a frozen feature extractor and avg(.)_n the spatial
// mean of channel n. Higher means more similar; identical images score 100.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "coronagan/image.hpp"
#include "coronagan/networks.hpp"
#include "coronagan/phantom.hpp"

namespace coronagan::eval {

inline constexpr int kStages = 3;
inline constexpr double kDefaultThreshold = 0.005;

using StageMaps = std::array<Tensor<float>, kStages>;
using PooledStages = std::array<std::vector<double>, kStages>;

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual int stage_channels(int stage) const = 0;  // stage in 1..3
  /// Feature maps of all three stages for a [1,3,H,W] image with values in [0,1].
  [[nodiscard]] virtual StageMaps features(const ImageTensor& image) const = 0;
};

/// Seeded random CNN: three stages of zero-padded conv + bias + ReLU applied to
/// the raw image. Stands in for the pretrained network in tests and CI.
class FallbackExtractor final : public FeatureExtractor {
 public:
  struct Options {
    std::uint64_t seed = 0;
    std::array<int, kStages> widths{16, 32, 64};
    std::array<int, kStages> kernels{3, 3, 3};
    std::array<int, kStages> strides{2, 2, 2};
  };
  struct Stage {
    Tensor<float> weight;  // [out, in, k, k]
    Tensor<float> bias;    // [1, out, 1, 1]
    int stride = 1;
  };

  /// He-normal weights, zero biases.
  explicit FallbackExtractor(const Options& options);
  FallbackExtractor() : FallbackExtractor(Options{}) {}
  /// Explicit weights; stage 1 must take 3 input channels.
  explicit FallbackExtractor(std::array<Stage, kStages> stages);

  [[nodiscard]] std::string name() const override { return "fallback"; }
  [[nodiscard]] int stage_channels(int stage) const override;
  [[nodiscard]] StageMaps features(const ImageTensor& image) const override;

 private:
  std::array<Stage, kStages> stages_;
};

/// Bottleneck ResNet (torchvision layout) truncated after layer3. Weights come
/// from a tensor archive written by tools/export_resnet101.py; batch norms are
/// folded into the preceding convolutions at load time. Block counts per layer
/// are read from the archive, so ResNet-50 archives work too.
class ResNetExtractor final : public FeatureExtractor {
 public:
  static constexpr int kInputSize = 224;
  static constexpr std::array<double, 3> kMean{0.485, 0.456, 0.406};
  static constexpr std::array<double, 3> kStd{0.229, 0.224, 0.225};

  /// `dir` holds resnet.json + resnet.bin.
  explicit ResNetExtractor(const std::filesystem::path& dir);

  [[nodiscard]] std::string name() const override;
  [[nodiscard]] int stage_channels(int stage) const override;
  [[nodiscard]] StageMaps features(const ImageTensor& image) const override;
  [[nodiscard]] std::array<int, kStages> blocks() const;

  struct FoldedConv {
    Tensor<float> weight;
    Tensor<float> bias;
    int stride = 1;
    int pad = 0;
  };
  struct Bottleneck {
    FoldedConv conv1, conv2, conv3;
    bool has_downsample = false;
    FoldedConv downsample;
  };

 private:
  std::string name_;
  FoldedConv stem_;
  std::array<std::vector<Bottleneck>, kStages> layers_;
};

/// Standardizes an image for the pretrained network: bilinear resize to 224x224
/// and per-channel (x - mean) / std. Grayscale is replicated to three channels.
[[nodiscard]] ImageTensor imagenet_preprocess(const ImageTensor& image);

/// Extractor from an explicit weights directory, else CORONAGAN_EXTRACTOR_PATH.
/// Throws IoError with export instructions when neither is usable.
[[nodiscard]] std::unique_ptr<FeatureExtractor> load_pretrained_extractor(
    const std::filesystem::path& dir = {});

/// Spatial channel means of stage `stage` (1..3). One-channel images are
/// replicated to three channels; any other non-3 count is an error.
[[nodiscard]] std::vector<double> pooled_features(const FeatureExtractor& extractor,
                                                  const ImageTensor& image, int stage);
[[nodiscard]] PooledStages pooled_all(const FeatureExtractor& extractor, const ImageTensor& image);

/// Percentage of channels whose pooled values agree within `threshold`.
[[nodiscard]] double phv_from_pooled(const std::vector<double>& a, const std::vector<double>& b,
                                     double threshold);

[[nodiscard]] double phv(const ImageTensor& real, const ImageTensor& virtual_image,
                         const FeatureExtractor& extractor, int stage,
                         double threshold = kDefaultThreshold);

enum class Pairing {
  kAllPairs,   // every virtual image against every real image, averaged
  kBestMatch,  // each virtual image against its highest-scoring real image
};
[[nodiscard]] std::string to_string(Pairing p);
[[nodiscard]] Pairing parse_pairing(const std::string& s);

struct PHVReport {
  std::array<double, kStages> phv{};
  double threshold = kDefaultThreshold;
  int n_pairs = 0;
  Pairing pairing = Pairing::kAllPairs;
  std::string extractor;
  /// Mean |pooled difference| per channel over the scored pairs.
  std::array<std::vector<double>, kStages> channel_abs_diff;
  /// phv of the first real image against itself; 100 for a sane extractor.
  std::array<double, kStages> self_check{};

  [[nodiscard]] std::string to_json() const;
};

/// Scores pooled features of virtual vs real images.
[[nodiscard]] PHVReport score_pairs(const std::vector<PooledStages>& virtual_images,
                                    const std::vector<PooledStages>& real_images, double threshold,
                                    Pairing pairing);

struct EvaluateOptions {
  double threshold = kDefaultThreshold;
  Pairing pairing = Pairing::kAllPairs;
  int threads = 0;  // 0 = hardware concurrency
};

/// Translates every OCT image of the manifest with the OCT->histology
/// generator and scores the results against the manifest's histology images.
[[nodiscard]] PHVReport evaluate_testset(const net::CoronaryGan<float>& model,
                                         const phantom::Manifest& manifest,
                                         const FeatureExtractor& extractor,
                                         const EvaluateOptions& options = {});

}  // namespace coronagan::eval
