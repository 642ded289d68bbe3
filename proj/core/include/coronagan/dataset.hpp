#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coronagan/image.hpp"
#include "coronagan/phantom.hpp"
#include "coronagan/rng.hpp"

namespace coronagan::data {

struct Patch {
  ImageTensor image;  // [1, C, P, P]
  SegmentationMask mask;
  Domain domain = Domain::kOct;
  std::string source_id;
  int row = 0;  // origin in the source image
  int col = 0;
};

/// Two independently drawn halves; slot i of one half has nothing to do with
/// slot i of the other.
struct UnpairedBatch {
  Tensor<float> oct_images;   // [B, 1, P, P]
  Tensor<float> hist_images;  // [B, 3, P, P]
  std::vector<SegmentationMask> oct_masks;
  std::vector<SegmentationMask> hist_masks;

  [[nodiscard]] int size() const { return oct_images.n(); }
};

/// Non-overlapping tiles anchored at the top-left corner; trailing partial
/// tiles are dropped. Throws ShapeError if the sample is smaller than one tile.
[[nodiscard]] std::vector<Patch> extract_patches(const LabeledSample& sample, int patch_size,
                                                 const std::string& source_id = {});

/// Mirrors image and mask left-to-right.
[[nodiscard]] Patch flip_horizontal(const Patch& patch);

/// Flips with probability `prob` (one uniform draw from `rng`).
[[nodiscard]] Patch augment_flip(const Patch& patch, Rng& rng, double prob = 0.5);

struct LoaderConfig {
  int patch_size = 64;
  int batch_size = 16;
  double flip_prob = 0.5;
  std::uint64_t shuffle_seed = 0;
};

/// Seeded, shuffled, augmented batch stream over an unpaired collection.
///
/// An epoch has ceil(max(n_oct, n_hist) / B) steps; the larger domain is seen
/// once and the smaller one is cycled (reshuffled on every wrap). Every batch
/// is a pure function of (shuffle_seed, epoch, step), so the sequence does not
/// depend on how or when batches are produced.
class UnpairedLoader {
 public:
  UnpairedLoader(std::vector<Patch> oct, std::vector<Patch> hist, LoaderConfig config);

  /// Loads every manifest entry and tiles it into patches.
  static UnpairedLoader from_manifest(const phantom::Manifest& manifest, LoaderConfig config);

  [[nodiscard]] int steps_per_epoch() const { return steps_; }
  [[nodiscard]] const LoaderConfig& config() const { return config_; }
  [[nodiscard]] std::size_t oct_count() const { return oct_.size(); }
  [[nodiscard]] std::size_t hist_count() const { return hist_.size(); }

  [[nodiscard]] UnpairedBatch batch(int epoch, int step) const;
  [[nodiscard]] std::vector<UnpairedBatch> epoch(int epoch) const;

  /// Patch index in one domain for stream position `j` of `epoch`.
  [[nodiscard]] std::size_t stream_index(Domain domain, int epoch, std::size_t j) const;

 private:
  std::vector<Patch> oct_;
  std::vector<Patch> hist_;
  LoaderConfig config_;
  int steps_ = 0;
};

}  // namespace coronagan::data
