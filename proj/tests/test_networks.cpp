#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "coronagan/checkpoint.hpp"
#include "coronagan/losses.hpp"
#include "coronagan/networks.hpp"
#include "support.hpp"

namespace coronagan::net {
namespace {

using testing::random_tensor;

GeneratorConfig tiny_gen(int in, int out) { return {in, out, 4, 2, 3}; }

TEST(Generator, OctToHistShapes) {
  Generator<float> g(tiny_gen(1, 3));
  g.init(1);
  Rng rng(1);
  const auto x = random_tensor<float>({1, 1, 48, 40}, rng, 0, 1);
  const auto out = g.forward(x);
  EXPECT_EQ(out.image.shape(), (Shape4{1, 3, 48, 40}));
  EXPECT_EQ(out.embedding.shape(), (Shape4{1, 32, 6, 5}));
  EXPECT_EQ(g.embedding_shape(x.shape()), out.embedding.shape());
  for (float v : out.image.values()) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
}

TEST(Generator, WidthsDoubleUpToTheCap) {
  GeneratorConfig c{1, 3, 64, 1, 3};
  EXPECT_EQ(c.width(0), 64);
  EXPECT_EQ(c.width(1), 128);
  EXPECT_EQ(c.width(2), 256);
  EXPECT_EQ(c.width(3), 256);
  EXPECT_EQ(c.embedding_channels(), 256);
  Generator<float> capped(c);
  EXPECT_EQ(capped.embedding_shape({1, 1, 16, 16}), (Shape4{1, 256, 2, 2}));
  c.max_width = 1024;
  EXPECT_EQ(Generator<float>(c).embedding_shape({1, 1, 16, 16}), (Shape4{1, 512, 2, 2}));
  // The last encoder conv maps 256 -> 256 instead of 256 -> 512.
  const auto& p = capped.params();
  EXPECT_EQ(p.value(p.find("enc.2.weight")).shape(), (Shape4{256, 256, 3, 3}));
  c.max_width = 32;
  EXPECT_THROW(Generator<float>{c}, ValidationError);
}

TEST(Generator, RejectsBadInputs) {
  Generator<float> g(tiny_gen(1, 3));
  EXPECT_THROW((void)g.forward(Tensor<float>(1, 1, 20, 16)), ShapeError);
  EXPECT_THROW((void)g.forward(Tensor<float>(1, 3, 16, 16)), ShapeError);
  EXPECT_THROW(Generator<float>(GeneratorConfig{1, 3, 0, 1, 3}), ValidationError);
}

TEST(Generator, ZeroedResidualBranchesMakeTheTrunkIdentity) {
  Generator<double> deep(GeneratorConfig{3, 1, 4, 3, 2});
  Generator<double> shallow(GeneratorConfig{3, 1, 4, 0, 2});
  deep.init(5);
  deep.zero_residual_branches();
  for (int i = 0; i < shallow.params().size(); ++i) {
    const int j = deep.params().find(shallow.params().name(i));
    ASSERT_GE(j, 0) << shallow.params().name(i);
    shallow.params().value(i) = deep.params().value(j);
  }
  Rng rng(2);
  const auto x = random_tensor<double>({2, 3, 16, 16}, rng, 0, 1);
  const auto a = deep.forward(x);
  const auto b = shallow.forward(x);
  EXPECT_EQ(a.embedding, b.embedding);
  EXPECT_EQ(a.image, b.image);
}

TEST(Generator, ParameterNamesAreStable) {
  Generator<float> g(GeneratorConfig{1, 3, 8, 2, 3});
  std::vector<std::string> names;
  for (int i = 0; i < g.params().size(); ++i) names.push_back(g.params().name(i));
  const std::vector<std::string> want{
      "enc.0.weight",       "enc.0.bias",         "enc.1.weight",       "enc.1.bias",
      "enc.2.weight",       "enc.2.bias",         "res.0.conv1.weight", "res.0.conv1.bias",
      "res.0.conv2.weight", "res.0.conv2.bias",   "res.1.conv1.weight", "res.1.conv1.bias",
      "res.1.conv2.weight", "res.1.conv2.bias",   "dec.0.weight",       "dec.0.bias",
      "dec.1.weight",       "dec.1.bias",         "dec.2.weight",       "dec.2.bias"};
  EXPECT_EQ(names, want);
  EXPECT_EQ(g.params().value(0).shape(), (Shape4{16, 1, 3, 3}));
  EXPECT_EQ(g.params().value(4).shape(), (Shape4{64, 32, 3, 3}));
  EXPECT_EQ(g.params().value(18).shape(), (Shape4{16, 3, 4, 4}));
}

TEST(Generator, InitIsSeededGaussianWithZeroBiases) {
  Generator<double> a(GeneratorConfig{1, 3, 16, 1, 3});
  Generator<double> b(GeneratorConfig{1, 3, 16, 1, 3});
  a.init(9);
  b.init(9);
  EXPECT_EQ(a.params(), b.params());
  b.init(10);
  EXPECT_FALSE(a.params() == b.params());
  double sum = 0;
  double sq = 0;
  std::size_t n = 0;
  for (int i = 0; i < a.params().size(); ++i) {
    const auto& v = a.params().value(i);
    if (a.params().name(i).ends_with(".bias")) {
      for (double x : v.values()) EXPECT_EQ(x, 0.0);
      continue;
    }
    for (double x : v.values()) {
      sum += x;
      sq += x * x;
      ++n;
    }
  }
  EXPECT_NEAR(sum / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(sq / n), kInitStd, 1e-3);
}

TEST(Discriminator, ScoreGridShape) {
  Discriminator<float> d(DiscriminatorConfig{3, 8, 4});
  d.init(1);
  EXPECT_EQ(d.forward(Tensor<float>(2, 3, 64, 64)).shape(), (Shape4{2, 1, 4, 4}));
  EXPECT_EQ(d.score_shape({1, 3, 288, 288}), (Shape4{1, 1, 18, 18}));
  EXPECT_THROW((void)d.forward(Tensor<float>(1, 1, 64, 64)), ShapeError);
}

namespace naive {

struct Map {
  int c, h, w;
  std::vector<double> v;
  double& at(int a, int i, int j) { return v[(static_cast<std::size_t>(a) * h + i) * w + j]; }
};

Map conv(Map& x, const Tensor<double>& wt, const Tensor<double>& b, int k, int s, int p) {
  Map y{wt.n(), (x.h + 2 * p - k) / s + 1, (x.w + 2 * p - k) / s + 1, {}};
  y.v.assign(static_cast<std::size_t>(y.c) * y.h * y.w, 0.0);
  for (int o = 0; o < y.c; ++o) {
    for (int i = 0; i < y.h; ++i) {
      for (int j = 0; j < y.w; ++j) {
        double acc = b.values()[o];
        for (int c = 0; c < x.c; ++c) {
          for (int a = 0; a < k; ++a) {
            for (int e = 0; e < k; ++e) {
              const int ii = i * s - p + a;
              const int jj = j * s - p + e;
              if (ii >= 0 && jj >= 0 && ii < x.h && jj < x.w) acc += wt(o, c, a, e) * x.at(c, ii, jj);
            }
          }
        }
        y.at(o, i, j) = acc;
      }
    }
  }
  return y;
}

void instance_norm(Map& x) {
  const int n = x.h * x.w;
  for (int c = 0; c < x.c; ++c) {
    double* p = x.v.data() + static_cast<std::size_t>(c) * n;
    double mean = 0, var = 0;
    for (int i = 0; i < n; ++i) mean += p[i];
    mean /= n;
    for (int i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= n;
    for (int i = 0; i < n; ++i) p[i] = (p[i] - mean) / std::sqrt(var + 1e-5);
  }
}

}  // namespace naive

TEST(Discriminator, MatchesScalarLoopReference) {
  Discriminator<double> d(DiscriminatorConfig{3, 4, 4});
  d.init(3);
  Rng rng(4);
  const auto x = random_tensor<double>({1, 3, 64, 48}, rng, 0, 1);
  const auto& p = d.params();
  naive::Map m{3, 64, 48, std::vector<double>(x.values().begin(), x.values().end())};
  for (int l = 0; l < 4; ++l) {
    const std::string name = "layer." + std::to_string(l);
    m = naive::conv(m, p.value(p.find(name + ".weight")), p.value(p.find(name + ".bias")), 4, 2, 1);
    if (l > 0) naive::instance_norm(m);
    for (auto& v : m.v) v = v < 0 ? 0.2 * v : v;
  }
  m = naive::conv(m, p.value(p.find("score.weight")), p.value(p.find("score.bias")), 3, 1, 1);
  const auto s = d.forward(x);
  ASSERT_EQ(s.shape(), (Shape4{1, 1, 4, 3}));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(s(0, 0, i, j), m.at(0, i, j), 1e-12);
  }
}

TEST(Discriminator, ShiftingContentShiftsTheScoreGrid) {
  // Content on a zero background moved by 2^L pixels moves the scores by one
  // cell, away from the image border.
  Discriminator<double> d(DiscriminatorConfig{3, 4, 4});
  d.init(3);
  Rng rng(4);
  const auto blob = random_tensor<double>({1, 3, 24, 24}, rng, 0, 1);
  const auto place = [&](int r0, int c0) {
    Tensor<double> x(1, 3, 256, 256);
    for (int c = 0; c < 3; ++c) {
      for (int r = 0; r < 24; ++r) {
        for (int q = 0; q < 24; ++q) x(0, c, r0 + r, c0 + q) = blob(0, c, r, q);
      }
    }
    return x;
  };
  const auto s0 = d.forward(place(112, 104));
  const auto s1 = d.forward(place(128, 120));
  ASSERT_EQ(s0.shape(), (Shape4{1, 1, 16, 16}));
  for (int i = 2; i < 13; ++i) {
    for (int j = 2; j < 13; ++j) EXPECT_NEAR(s1(0, 0, i + 1, j + 1), s0(0, 0, i, j), 1e-9);
  }
}

TEST(StructureHead, LogitsAtEmbeddingResolution) {
  CoronaryGan<float> model(NetworkConfig{1, 3, 4, 1, 3, 4, 3, 3});
  model.init(2);
  Rng rng(5);
  const auto x = random_tensor<float>({2, 1, 32, 24}, rng, 0, 1);
  const auto emb = model.g_oh.forward(x).embedding;
  const auto logits = model.s_oh.forward(emb);
  EXPECT_EQ(logits.shape(), (Shape4{2, 3, 4, 3}));
  const auto p = loss::softmax(logits);
  for (int n = 0; n < 2; ++n) {
    for (int r = 0; r < 4; ++r) {
      for (int q = 0; q < 3; ++q) {
        double s = 0;
        for (int c = 0; c < 3; ++c) s += p(n, c, r, q);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(CoronaryGan, AcrossSizesDivisibleByEight) {
  CoronaryGan<float> model(NetworkConfig{1, 3, 4, 1, 3, 4, 3, 3});
  model.init(7);
  Rng rng(6);
  for (int t = 0; t < 5; ++t) {
    const int h = 8 * (2 + static_cast<int>(uniform_index(rng, 10)));
    const int w = 8 * (2 + static_cast<int>(uniform_index(rng, 10)));
    const auto o = random_tensor<float>({1, 1, h, w}, rng, 0, 1);
    const auto fwd = model.g_oh.forward(o);
    EXPECT_EQ(fwd.image.shape(), (Shape4{1, 3, h, w}));
    EXPECT_EQ(fwd.embedding.shape(), (Shape4{1, 32, h / 8, w / 8}));
    EXPECT_EQ(model.s_oh.forward(fwd.embedding).shape(), (Shape4{1, 3, h / 8, w / 8}));
    const auto back = model.g_ho.forward(fwd.image);
    EXPECT_EQ(back.image.shape(), (Shape4{1, 1, h, w}));
  }
}

TEST(Checkpoint, ModelRoundTripIsBitExact) {
  testing::TempDir dir("ckpt");
  CoronaryGan<float> model(NetworkConfig{1, 3, 4, 1, 3, 4, 3, 3});
  model.init(11);
  io::save_model(model, dir.path());
  const CoronaryGan<float> back = io::load_model(dir.path());
  EXPECT_EQ(back.config, model.config);
  const auto a = std::as_const(model).networks();
  const auto b = back.networks();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k].second, *b[k].second) << a[k].first;
  Rng rng(1);
  const auto x = random_tensor<float>({1, 1, 16, 16}, rng, 0, 1);
  EXPECT_EQ(model.g_oh.forward(x).image, back.g_oh.forward(x).image);
}

TEST(Checkpoint, ShapeMismatchIsAnError) {
  testing::TempDir dir("ckpt_bad");
  CoronaryGan<float> model(NetworkConfig{1, 3, 4, 1, 3, 4, 3, 3});
  io::save_model(model, dir.path());
  CoronaryGan<float> wider(NetworkConfig{1, 3, 8, 1, 3, 4, 3, 3});
  EXPECT_THROW(io::load_params_into(io::read_tensors(dir.path(), "model"), wider), ShapeError);
  CoronaryGan<float> deeper(NetworkConfig{1, 3, 4, 2, 3, 4, 3, 3});
  EXPECT_THROW(io::load_params_into(io::read_tensors(dir.path(), "model"), deeper), IoError);
  EXPECT_THROW((void)io::load_model(dir / "missing"), IoError);
}

}  // namespace
}  // namespace coronagan::net
