#include <gtest/gtest.h>

#include <set>

#include "coronagan/dataset.hpp"
#include "support.hpp"

namespace coronagan::data {
namespace {

LabeledSample sample_of(int h, int w, Domain d, std::uint64_t seed) {
  phantom::PhantomDistribution dist;
  dist.height = h;
  dist.width = w;
  return phantom::make_sample(phantom::random_spec(dist, seed), d);
}

TEST(Patches, TilesReassembleTheCoveredRegion) {
  const LabeledSample s = sample_of(70, 100, Domain::kHistology, 4);
  const auto patches = extract_patches(s, 32, "x");
  ASSERT_EQ(patches.size(), 2u * 3u);
  for (const Patch& p : patches) {
    EXPECT_EQ(p.image.shape(), (Shape4{1, 3, 32, 32}));
    EXPECT_EQ(p.row % 32, 0);
    EXPECT_EQ(p.col % 32, 0);
    EXPECT_EQ(p.source_id, "x");
    for (int c = 0; c < 3; ++c) {
      for (int r = 0; r < 32; ++r) {
        for (int q = 0; q < 32; ++q) {
          ASSERT_EQ(p.image(0, c, r, q), s.image(0, c, p.row + r, p.col + q));
          ASSERT_EQ(p.mask.at(r, q), s.mask.at(p.row + r, p.col + q));
        }
      }
    }
  }
  std::set<std::pair<int, int>> origins;
  for (const Patch& p : patches) origins.insert({p.row, p.col});
  EXPECT_EQ(origins.size(), patches.size());
}

TEST(Patches, TooSmallSampleIsAnError) {
  const LabeledSample s = sample_of(20, 40, Domain::kOct, 1);
  EXPECT_THROW((void)extract_patches(s, 32), ShapeError);
}

TEST(Patches, FlipMirrorsImageAndMaskAndIsAnInvolution) {
  const LabeledSample s = sample_of(16, 16, Domain::kHistology, 2);
  const Patch p = extract_patches(s, 16).front();
  const Patch f = flip_horizontal(p);
  for (int r = 0; r < 16; ++r) {
    for (int q = 0; q < 16; ++q) {
      EXPECT_EQ(f.mask.at(r, q), p.mask.at(r, 15 - q));
      for (int c = 0; c < 3; ++c) EXPECT_EQ(f.image(0, c, r, q), p.image(0, c, r, 15 - q));
    }
  }
  const Patch back = flip_horizontal(f);
  EXPECT_EQ(back.image, p.image);
  EXPECT_EQ(back.mask, p.mask);
}

TEST(Patches, FlipProbabilityIsHonoured) {
  phantom::PhantomSpec spec;
  spec.height = 8;
  spec.width = 8;
  spec.boundary_wobble_amp = 0.2;  // asymmetric mask, so flips are visible
  spec.boundary_phase = 0.4;
  const LabeledSample s = phantom::make_sample(spec, Domain::kOct);
  const Patch p = extract_patches(s, 8).front();
  ASSERT_FALSE(flip_horizontal(p).mask == p.mask);
  Rng rng(123);
  int flipped = 0;
  constexpr int kTrials = 20000;
  for (int i = 0; i < kTrials; ++i) {
    if (!(augment_flip(p, rng).mask == p.mask)) ++flipped;
  }
  const double rate = static_cast<double>(flipped) / kTrials;
  EXPECT_GE(rate, 0.47);
  EXPECT_LE(rate, 0.53);
  EXPECT_EQ(augment_flip(p, rng, 0.0).mask, p.mask);
  EXPECT_FALSE(augment_flip(p, rng, 1.0).mask == p.mask);
}

std::vector<Patch> patches_of(Domain d, int n, int size) {
  std::vector<Patch> out;
  for (int i = 0; i < n; ++i) {
    auto p = extract_patches(sample_of(size, size, d, 100 + i + (d == Domain::kOct ? 0 : 1000)), size,
                             std::to_string(i));
    out.push_back(p.front());
  }
  return out;
}

TEST(Loader, BatchesHaveTheContractShapes) {
  UnpairedLoader loader(patches_of(Domain::kOct, 5, 16), patches_of(Domain::kHistology, 11, 16),
                        {16, 4, 0.5, 3});
  EXPECT_EQ(loader.steps_per_epoch(), 3);
  const UnpairedBatch b = loader.batch(0, 2);
  EXPECT_EQ(b.size(), 4);
  EXPECT_EQ(b.oct_images.shape(), (Shape4{4, 1, 16, 16}));
  EXPECT_EQ(b.hist_images.shape(), (Shape4{4, 3, 16, 16}));
  EXPECT_EQ(b.oct_masks.size(), 4u);
  EXPECT_EQ(b.hist_masks.size(), 4u);
  EXPECT_THROW((void)loader.batch(0, 3), ValidationError);
}

TEST(Loader, LargerDomainIsSeenOncePerEpoch) {
  UnpairedLoader loader(patches_of(Domain::kOct, 3, 8), patches_of(Domain::kHistology, 8, 8),
                        {8, 4, 0.0, 9});
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (std::size_t j = 0; j < 8; ++j) seen.insert(loader.stream_index(Domain::kHistology, epoch, j));
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(seen.count(k), 1u);
    std::multiset<std::size_t> small;
    for (std::size_t j = 0; j < 6; ++j) small.insert(loader.stream_index(Domain::kOct, epoch, j));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(small.count(k), 2u);
  }
}

TEST(Loader, OrderIsAPureFunctionOfSeedEpochStep) {
  const auto oct = patches_of(Domain::kOct, 6, 8);
  const auto hist = patches_of(Domain::kHistology, 6, 8);
  UnpairedLoader a(oct, hist, {8, 2, 0.5, 5});
  UnpairedLoader b(oct, hist, {8, 2, 0.5, 5});
  UnpairedLoader other(oct, hist, {8, 2, 0.5, 6});
  // Out-of-order access gives the same batches.
  const UnpairedBatch late = b.batch(2, 1);
  (void)b.batch(0, 0);
  EXPECT_EQ(a.batch(2, 1).hist_images, late.hist_images);
  EXPECT_EQ(a.batch(2, 1).oct_masks, late.oct_masks);
  bool differs = false;
  for (int s = 0; s < a.steps_per_epoch(); ++s) {
    differs |= !(a.batch(0, s).oct_images == other.batch(0, s).oct_images);
  }
  EXPECT_TRUE(differs);
  bool epochs_differ = false;
  for (int s = 0; s < a.steps_per_epoch(); ++s) {
    epochs_differ |= !(a.batch(0, s).hist_images == a.batch(1, s).hist_images);
  }
  EXPECT_TRUE(epochs_differ);
}

TEST(Loader, FromManifestValidatesFiles) {
  testing::TempDir dir("loader");
  phantom::PhantomDistribution dist;
  dist.height = 32;
  dist.width = 32;
  auto manifest = phantom::generate_dataset(2, 3, dist, dir.path(), 4, 1);
  const UnpairedLoader loader = UnpairedLoader::from_manifest(manifest, {16, 2, 0.5, 0});
  EXPECT_EQ(loader.oct_count(), 8u);
  EXPECT_EQ(loader.hist_count(), 12u);

  // A histology image listed as OCT has the wrong channel count.
  manifest.records.front().path = manifest.records.back().path;
  try {
    (void)UnpairedLoader::from_manifest(manifest, {16, 2, 0.5, 0});
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("hist_00002.png"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace coronagan::data
