#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "coronagan/phantom.hpp"
#include "support.hpp"

namespace coronagan::phantom {
namespace {

using testing::TempDir;

PhantomSpec wavy_spec(std::uint64_t seed) {
  PhantomSpec s;
  s.seed = seed;
  s.height = 48;
  s.width = 40;
  s.boundary_wobble_amp = 0.08;
  s.boundary_wobble_freq = 1.5;
  s.boundary_phase = 0.7;
  return s;
}

TEST(Phantom, MaskMatchesPerColumnBoundaryLoop) {
  const PhantomSpec s = wavy_spec(3);
  const SegmentationMask mask = rasterize_layers(s);
  for (int x = 0; x < s.width; ++x) {
    const double arg = 2 * std::numbers::pi * s.boundary_wobble_freq * x / s.width + s.boundary_phase;
    const long b1 = std::lround(s.height * (s.boundary1_mean + s.boundary_wobble_amp * std::sin(arg)));
    const long b2 = std::lround(s.height * (s.boundary2_mean + s.boundary_wobble_amp * std::sin(arg)));
    for (int r = 0; r < s.height; ++r) {
      const int want = r < b1 ? 0 : (r < b2 ? 1 : 2);
      ASSERT_EQ(mask.at(r, x), want) << "row " << r << " col " << x;
    }
  }
}

TEST(Phantom, FlatBoundariesSplitRowsInThirds) {
  PhantomSpec s;
  s.height = 60;
  s.width = 7;
  s.boundary_wobble_amp = 0;
  const SegmentationMask mask = rasterize_layers(s);
  for (int x = 0; x < s.width; ++x) {
    EXPECT_EQ(mask.at(19, x), 0);
    EXPECT_EQ(mask.at(20, x), 1);
    EXPECT_EQ(mask.at(39, x), 1);
    EXPECT_EQ(mask.at(40, x), 2);
  }
}

TEST(Phantom, LayersAreOrderedTopToBottom) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PhantomSpec s = random_spec(PhantomDistribution{}, seed);
    const SegmentationMask m = rasterize_layers(s);
    for (int x = 0; x < s.width; ++x) {
      for (int r = 1; r < s.height; ++r) ASSERT_LE(m.at(r - 1, x), m.at(r, x));
    }
  }
}

TEST(Phantom, OctMatchesScalarFormula) {
  const PhantomSpec s = wavy_spec(11);
  const SegmentationMask mask = rasterize_layers(s);
  const ImageTensor img = render_oct(s, mask);
  const std::vector<double> g = speckle_field(s);
  ASSERT_EQ(img.shape(), (Shape4{1, 1, s.height, s.width}));
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      const double v = s.layer_reflectivity[mask.at(r, c)] * std::exp(-s.oct_attenuation_coeff * r) *
                       (1 + s.speckle_strength * g[r * s.width + c]);
      ASSERT_EQ(img(0, 0, r, c), static_cast<float>(std::clamp(v, 0.0, 1.0)));
    }
  }
}

TEST(Phantom, SpeckleIsTruncatedAndRoughlyStandard) {
  PhantomSpec s;
  s.height = 128;
  s.width = 128;
  const auto g = speckle_field(s);
  double mean = 0;
  double sq = 0;
  for (double v : g) {
    ASSERT_LE(std::abs(v), 3.0);
    mean += v;
    sq += v * v;
  }
  mean /= g.size();
  sq /= g.size();
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(sq, 1.0, 0.03);
}

TEST(Phantom, NoiseFreeOctIsPiecewiseAttenuatedReflectivity) {
  PhantomSpec s;
  s.speckle_strength = 0;
  s.oct_attenuation_coeff = 0;
  const SegmentationMask mask = rasterize_layers(s);
  const ImageTensor img = render_oct(s, mask);
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      EXPECT_FLOAT_EQ(img(0, 0, r, c), static_cast<float>(s.layer_reflectivity[mask.at(r, c)]));
    }
  }
}

TEST(Phantom, HistologyClassMeansMatchPalette) {
  PhantomSpec s = wavy_spec(5);
  s.height = 96;
  s.width = 96;
  s.texture_amp = 0;
  const SegmentationMask mask = rasterize_layers(s);
  const ImageTensor img = render_histology(s, mask);
  for (int k = 0; k < 3; ++k) {
    for (int ch = 0; ch < 3; ++ch) {
      double sum = 0;
      int n = 0;
      for (int r = 0; r < s.height; ++r) {
        for (int c = 0; c < s.width; ++c) {
          if (mask.at(r, c) != k) continue;
          sum += img(0, ch, r, c);
          ++n;
        }
      }
      ASSERT_GT(n, 100);
      EXPECT_NEAR(sum / n, s.stain_palette[k][ch], 0.005) << "class " << k << " channel " << ch;
    }
  }
}

TEST(Phantom, HistologyWithoutNoiseIsExactPalette) {
  PhantomSpec s;
  s.stain_jitter = 0;
  s.texture_amp = 0;
  const SegmentationMask mask = rasterize_layers(s);
  const ImageTensor img = render_histology(s, mask);
  for (int r = 0; r < s.height; ++r) {
    for (int ch = 0; ch < 3; ++ch) {
      EXPECT_EQ(img(0, ch, r, 5), static_cast<float>(s.stain_palette[mask.at(r, 5)][ch]));
    }
  }
}

TEST(Phantom, RenderingIsDeterministicPerSeed) {
  const PhantomSpec a = random_spec(PhantomDistribution{}, 42);
  EXPECT_EQ(a, random_spec(PhantomDistribution{}, 42));
  EXPECT_FALSE(a == random_spec(PhantomDistribution{}, 43));
  const auto s1 = make_sample(a, Domain::kHistology);
  const auto s2 = make_sample(a, Domain::kHistology);
  EXPECT_EQ(s1.image, s2.image);
  EXPECT_EQ(s1.mask, s2.mask);
}

TEST(Phantom, ValuesStayInUnitInterval) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PhantomSpec s = random_spec(PhantomDistribution{}, seed);
    for (Domain d : {Domain::kOct, Domain::kHistology}) {
      const auto sample = make_sample(s, d);
      EXPECT_EQ(sample.image.c(), channels_of(d));
      for (float v : sample.image.values()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
    }
  }
}

TEST(Phantom, RejectsInvalidSpecs) {
  PhantomSpec s;
  s.boundary1_mean = 0.7;
  EXPECT_THROW(validate(s), ValidationError);
  s = PhantomSpec{};
  s.boundary1_mean = 0.45;
  s.boundary2_mean = 0.5;
  s.boundary_wobble_amp = 0.2;
  s.boundary_wobble_freq = 0;  // constant offset, no crossing
  EXPECT_NO_THROW(validate(s));
  s.height = 2;
  EXPECT_THROW(validate(s), ValidationError);
  s = PhantomSpec{};
  s.layer_reflectivity[1] = 0;
  EXPECT_THROW(validate(s), ValidationError);
  s = PhantomSpec{};
  s.stain_palette[2][0] = 1.5;
  EXPECT_THROW(validate(s), ValidationError);
}

TEST(Phantom, CrossingBoundariesAreRejected) {
  PhantomSpec s;
  s.height = 20;
  s.boundary1_mean = 0.45;
  s.boundary2_mean = 0.47;
  s.boundary_wobble_amp = 0;
  EXPECT_THROW(rasterize_layers(s), ValidationError);
}

TEST(Phantom, DatasetRoundTripsThroughManifest) {
  TempDir dir("phantom");
  PhantomDistribution dist;
  dist.height = 32;
  dist.width = 24;
  const Manifest m = generate_dataset(3, 2, dist, dir.path(), 9, 2);
  ASSERT_EQ(m.records.size(), 5u);
  const Manifest back = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(back.records.size(), 5u);
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    const auto& r = back.records[i];
    EXPECT_EQ(r.path, m.records[i].path);
    EXPECT_EQ(r.domain, i < 3 ? Domain::kOct : Domain::kHistology);
    ASSERT_TRUE(r.spec.has_value());
    EXPECT_EQ(*r.spec, *m.records[i].spec);
    seeds.insert(r.seed);
    const auto sample = make_sample(*r.spec, r.domain);
    const ImageTensor img = read_png(back.resolve(r.path));
    ASSERT_EQ(img.shape(), sample.image.shape());
    for (std::size_t k = 0; k < img.size(); ++k) {
      ASSERT_NEAR(img[k], sample.image[k], 0.5 / 255 + 1e-6);
    }
    EXPECT_EQ(read_mask_png(back.resolve(r.mask_path)), sample.mask);
  }
  EXPECT_EQ(seeds.size(), 5u);
}

TEST(Phantom, DatasetDoesNotDependOnWorkerCount) {
  TempDir a("phantom_a");
  TempDir b("phantom_b");
  PhantomDistribution dist;
  dist.height = 16;
  dist.width = 16;
  (void)generate_dataset(4, 4, dist, a.path(), 1, 1);
  (void)generate_dataset(4, 4, dist, b.path(), 1, 3);
  for (const char* f : {"oct/oct_00003.png", "histology/hist_00002.png", "oct/oct_00001_mask.png"}) {
    EXPECT_EQ(read_png(a / f), read_png(b / f)) << f;
  }
}

TEST(Phantom, MalformedManifestNamesTheLine) {
  TempDir dir("manifest");
  {
    std::ofstream out(dir / "m.jsonl");
    out << R"({"path":"a.png","domain":"oct"})" << '\n' << "{not json\n";
  }
  try {
    (void)read_manifest(dir / "m.jsonl");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("m.jsonl:2"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace coronagan::phantom
