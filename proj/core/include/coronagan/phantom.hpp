#pragma once

// Synthetic three-layer coronary wall phantoms with ground-truth layer masks.
//
// Each phantom is a full-field tissue patch: two sinusoidal boundaries split
// the rows into intima (top), media and adventitia (bottom). The OCT rendering
// applies per-layer reflectivity, exponential depth attenuation and
// multiplicative speckle; the histology rendering paints an H&E-like palette
// with seeded color jitter and a smooth texture field.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "coronagan/image.hpp"

namespace coronagan::phantom {

using Rgb = std::array<double, 3>;

struct PhantomSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  double boundary1_mean = 1.0 / 3.0;  // fraction of height
  double boundary2_mean = 2.0 / 3.0;
  double boundary_wobble_amp = 0.05;   // fraction of height
  double boundary_wobble_freq = 1.0;   // cycles per image width
  double boundary_phase = 0.0;         // radians, shared by both boundaries
  double oct_attenuation_coeff = 0.008;  // per pixel of depth
  double speckle_strength = 0.2;
  std::array<double, 3> layer_reflectivity{0.85, 0.35, 0.7};
  std::array<Rgb, 3> stain_palette{Rgb{0.93, 0.62, 0.76}, Rgb{0.78, 0.36, 0.58},
                                   Rgb{0.96, 0.84, 0.88}};
  double stain_jitter = 0.02;  // half-width of the per-pixel uniform color jitter
  double texture_amp = 0.03;   // amplitude of the smooth texture field
  bool background_class = false;  // reserves class 3; unused by full-field phantoms

  friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;
};

/// Throws ValidationError when an invariant is violated, including boundaries
/// that cross after rasterization.
void validate(const PhantomSpec& spec);

/// Row index of a boundary in column `x`, clamped to [0, height].
[[nodiscard]] int boundary_row(const PhantomSpec& spec, double mean, int x);

[[nodiscard]] SegmentationMask rasterize_layers(const PhantomSpec& spec);

/// The seeded multiplicative speckle draws g (zero mean, unit variance before
/// truncation at 3 sigma), row-major, one per pixel.
[[nodiscard]] std::vector<double> speckle_field(const PhantomSpec& spec);

[[nodiscard]] ImageTensor render_oct(const PhantomSpec& spec, const SegmentationMask& mask);
[[nodiscard]] ImageTensor render_histology(const PhantomSpec& spec, const SegmentationMask& mask);

/// Ranges random specs are drawn from. Attenuation is expressed per image
/// height so that phantoms of different size darken by the same fraction.
struct PhantomDistribution {
  int height = 64;
  int width = 64;
  std::array<double, 2> boundary1_mean{0.25, 0.40};
  std::array<double, 2> boundary2_mean{0.58, 0.75};
  std::array<double, 2> wobble_amp{0.02, 0.07};
  std::array<double, 2> wobble_freq{0.5, 2.0};
  std::array<double, 2> attenuation_per_height{0.2, 0.6};
  std::array<double, 2> speckle_strength{0.1, 0.25};
  std::array<std::array<double, 2>, 3> reflectivity{std::array<double, 2>{0.78, 0.92},
                                                    std::array<double, 2>{0.28, 0.40},
                                                    std::array<double, 2>{0.60, 0.72}};
  double palette_perturbation = 0.03;
  double stain_jitter = 0.02;
  double texture_amp = 0.03;
};

[[nodiscard]] PhantomSpec random_spec(const PhantomDistribution& dist, std::uint64_t seed);

[[nodiscard]] LabeledSample make_sample(const PhantomSpec& spec, Domain domain);

struct ManifestRecord {
  std::filesystem::path path;       // image, relative to the manifest directory
  std::filesystem::path mask_path;  // mask, same convention
  Domain domain = Domain::kOct;
  std::uint64_t seed = 0;
  std::optional<PhantomSpec> spec;
};

struct Manifest {
  std::filesystem::path root;  // directory the relative paths resolve against
  std::vector<ManifestRecord> records;

  [[nodiscard]] std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : root / p;
  }
};

/// JSON lines, one record per sample.
void write_manifest(const std::filesystem::path& file, const Manifest& manifest);
[[nodiscard]] Manifest read_manifest(const std::filesystem::path& file);

/// Writes `n_oct` OCT and `n_hist` histology samples under `out_dir`, each from
/// its own random spec, plus `out_dir/manifest.jsonl`. Samples are rendered on
/// `threads` workers; output does not depend on the worker count.
Manifest generate_dataset(int n_oct, int n_hist, const PhantomDistribution& dist,
                          const std::filesystem::path& out_dir, std::uint64_t seed,
                          int threads = 0);

}  // namespace coronagan::phantom
