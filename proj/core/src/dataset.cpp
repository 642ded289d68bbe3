#include "coronagan/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace coronagan::data {
namespace {

constexpr std::uint64_t kShuffleTag = 11;
constexpr std::uint64_t kFlipTag = 12;

std::uint64_t domain_tag(Domain d) { return d == Domain::kOct ? 0 : 1; }

void copy_into(Tensor<float>& dst, int slot, const ImageTensor& src) {
  std::memcpy(dst.plane(slot, 0), src.data(), sizeof(float) * src.size());
}

}  // namespace

std::vector<Patch> extract_patches(const LabeledSample& sample, int patch_size,
                                   const std::string& source_id) {
  if (patch_size <= 0) throw ValidationError("patch_size must be positive");
  const int h = sample.image.h();
  const int w = sample.image.w();
  if (sample.mask.height() != h || sample.mask.width() != w) {
    throw ShapeError("extract_patches: mask " + std::to_string(sample.mask.height()) + "x" +
                     std::to_string(sample.mask.width()) + " does not match image " +
                     sample.image.shape().str());
  }
  if (h < patch_size || w < patch_size) {
    throw ShapeError("extract_patches: sample " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than patch size " + std::to_string(patch_size));
  }
  std::vector<Patch> patches;
  for (int r = 0; r + patch_size <= h; r += patch_size) {
    for (int c = 0; c + patch_size <= w; c += patch_size) {
      Patch p;
      p.image = crop(sample.image, r, c, patch_size, patch_size);
      p.mask = sample.mask.crop(r, c, patch_size, patch_size);
      p.domain = sample.domain;
      p.source_id = source_id;
      p.row = r;
      p.col = c;
      patches.push_back(std::move(p));
    }
  }
  return patches;
}

Patch flip_horizontal(const Patch& patch) {
  Patch out = patch;
  const int w = patch.image.w();
  for (int c = 0; c < patch.image.c(); ++c) {
    for (int r = 0; r < patch.image.h(); ++r) {
      for (int q = 0; q < w; ++q) out.image(0, c, r, q) = patch.image(0, c, r, w - 1 - q);
    }
  }
  for (int r = 0; r < patch.mask.height(); ++r) {
    for (int q = 0; q < patch.mask.width(); ++q) {
      out.mask.at(r, q) = patch.mask.at(r, patch.mask.width() - 1 - q);
    }
  }
  return out;
}

Patch augment_flip(const Patch& patch, Rng& rng, double prob) {
  return uniform01(rng) < prob ? flip_horizontal(patch) : patch;
}

UnpairedLoader::UnpairedLoader(std::vector<Patch> oct, std::vector<Patch> hist,
                               LoaderConfig config)
    : oct_(std::move(oct)), hist_(std::move(hist)), config_(config) {
  if (config_.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (config_.flip_prob < 0.0 || config_.flip_prob > 1.0) {
    throw ValidationError("flip_prob must lie in [0, 1]");
  }
  if (oct_.empty() || hist_.empty()) {
    throw ValidationError("loader needs at least one patch per domain");
  }
  for (const auto* set : {&oct_, &hist_}) {
    for (const auto& p : *set) {
      if (p.image.h() != config_.patch_size || p.image.w() != config_.patch_size) {
        throw ShapeError("patch " + p.source_id + " has size " + p.image.shape().str() +
                         ", expected patch_size " + std::to_string(config_.patch_size));
      }
    }
  }
  const std::size_t larger = std::max(oct_.size(), hist_.size());
  steps_ = static_cast<int>((larger + config_.batch_size - 1) / config_.batch_size);
}

UnpairedLoader UnpairedLoader::from_manifest(const phantom::Manifest& manifest,
                                             LoaderConfig config) {
  std::vector<Patch> oct;
  std::vector<Patch> hist;
  for (const auto& rec : manifest.records) {
    LabeledSample sample;
    const auto image_path = manifest.resolve(rec.path);
    sample.image = read_png(image_path);
    if (sample.image.c() != channels_of(rec.domain)) {
      throw IoError(image_path.string() + ": expected " + std::to_string(channels_of(rec.domain)) +
                    " channels for domain " + to_string(rec.domain));
    }
    if (rec.mask_path.empty()) throw IoError(image_path.string() + ": manifest entry has no mask");
    sample.mask = read_mask_png(manifest.resolve(rec.mask_path));
    for (auto v : sample.mask.labels()) {
      if (v >= kNumLayerClasses) {
        throw IoError(manifest.resolve(rec.mask_path).string() + ": illegal class id " +
                      std::to_string(v));
      }
    }
    sample.domain = rec.domain;
    auto patches = extract_patches(sample, config.patch_size, rec.path.generic_string());
    auto& dst = rec.domain == Domain::kOct ? oct : hist;
    std::move(patches.begin(), patches.end(), std::back_inserter(dst));
  }
  return UnpairedLoader(std::move(oct), std::move(hist), config);
}

std::size_t UnpairedLoader::stream_index(Domain domain, int epoch, std::size_t j) const {
  const std::size_t n = domain == Domain::kOct ? oct_.size() : hist_.size();
  const std::size_t cycle = j / n;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(config_.shuffle_seed, {kShuffleTag, domain_tag(domain),
                                             static_cast<std::uint64_t>(epoch), cycle}));
  shuffle(perm, rng);
  return perm[j % n];
}

UnpairedBatch UnpairedLoader::batch(int epoch, int step) const {
  if (step < 0 || step >= steps_) throw ValidationError("step out of range");
  const int b = config_.batch_size;
  const int p = config_.patch_size;
  UnpairedBatch out;
  out.oct_images = Tensor<float>(b, 1, p, p);
  out.hist_images = Tensor<float>(b, 3, p, p);
  for (Domain d : {Domain::kOct, Domain::kHistology}) {
    const auto& pool = d == Domain::kOct ? oct_ : hist_;
    auto& images = d == Domain::kOct ? out.oct_images : out.hist_images;
    auto& masks = d == Domain::kOct ? out.oct_masks : out.hist_masks;
    for (int slot = 0; slot < b; ++slot) {
      const std::size_t j = static_cast<std::size_t>(step) * b + slot;
      const Patch& src = pool[stream_index(d, epoch, j)];
      Rng rng(derive_seed(config_.shuffle_seed,
                          {kFlipTag, domain_tag(d), static_cast<std::uint64_t>(epoch), j}));
      const Patch patch = augment_flip(src, rng, config_.flip_prob);
      copy_into(images, slot, patch.image);
      masks.push_back(patch.mask);
    }
  }
  return out;
}

std::vector<UnpairedBatch> UnpairedLoader::epoch(int epoch) const {
  std::vector<UnpairedBatch> out;
  out.reserve(steps_);
  for (int s = 0; s < steps_; ++s) out.push_back(batch(epoch, s));
  return out;
}

}  // namespace coronagan::data
