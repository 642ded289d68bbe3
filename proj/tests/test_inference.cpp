#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <regex>
#include <string>

#include "coronagan/inference.hpp"
#include "coronagan/plot.hpp"
#include "support.hpp"

using namespace coronagan;
using coronagan::testing::random_tensor;
using coronagan::testing::TempDir;

namespace {

net::CoronaryGan<float> tiny_model() {
  net::CoronaryGan<float> m(net::NetworkConfig{1, 3, 4, 1, 3, 4, 2, 3});
  m.init(11);
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Png, RoundTripQuantizesToEightBits) {
  TempDir dir("png");
  Rng rng(1);
  for (int c : {1, 3}) {
    const ImageTensor img = random_tensor<float>({1, c, 7, 9}, rng, -0.2, 1.2);
    write_png(dir / "a.png", img);
    const ImageTensor back = read_png(dir / "a.png");
    ASSERT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double want = std::round(255.0 * std::clamp(static_cast<double>(img[i]), 0.0, 1.0)) / 255.0;
      EXPECT_NEAR(back[i], want, 1e-6);
    }
  }
  EXPECT_THROW((void)read_png(dir / "missing.png"), IoError);
}

TEST(Png, MaskRoundTrip) {
  TempDir dir("mask");
  SegmentationMask m(5, 6);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 6; ++c) m.at(r, c) = static_cast<std::uint8_t>((r + c) % 3);
  write_mask_png(dir / "m.png", m);
  EXPECT_EQ(read_mask_png(dir / "m.png"), m);
}

TEST(Montage, PlacesImagesSideBySide) {
  Rng rng(2);
  const ImageTensor gray = random_tensor<float>({1, 1, 4, 3}, rng, 0, 1);
  const ImageTensor rgb = random_tensor<float>({1, 3, 4, 5}, rng, 0, 1);
  const ImageTensor m = montage({gray, rgb});
  ASSERT_EQ(m.shape(), (Shape4{1, 3, 4, 8}));
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 4; ++r) {
      for (int q = 0; q < 3; ++q) EXPECT_EQ(m(0, c, r, q), gray(0, 0, r, q));
      for (int q = 0; q < 5; ++q) EXPECT_EQ(m(0, c, r, 3 + q), rgb(0, c, r, q));
    }
  }
  EXPECT_THROW((void)montage({gray, random_tensor<float>({1, 3, 5, 5}, rng)}), ShapeError);
  EXPECT_THROW((void)montage({}), ShapeError);
}

TEST(Direction, ParsesAliasesCaseInsensitively) {
  using infer::Direction;
  EXPECT_EQ(infer::parse_direction("O2H"), Direction::kOctToHist);
  EXPECT_EQ(infer::parse_direction("o2h"), Direction::kOctToHist);
  EXPECT_EQ(infer::parse_direction("Oct2Hist"), Direction::kOctToHist);
  EXPECT_EQ(infer::parse_direction("H2O"), Direction::kHistToOct);
  EXPECT_EQ(infer::parse_direction("hist2oct"), Direction::kHistToOct);
  EXPECT_THROW((void)infer::parse_direction("sideways"), ValidationError);
  for (auto d : {Direction::kOctToHist, Direction::kHistToOct}) {
    EXPECT_EQ(infer::parse_direction(infer::to_string(d)), d);
  }
}

TEST(PadToMultiple, ReflectsBottomAndRightEdges) {
  Rng rng(3);
  const ImageTensor img = random_tensor<float>({1, 2, 5, 6}, rng);
  const ImageTensor p = infer::pad_to_multiple(img, 4);
  ASSERT_EQ(p.shape(), (Shape4{1, 2, 8, 8}));
  for (int c = 0; c < 2; ++c) {
    for (int r = 0; r < 8; ++r) {
      for (int q = 0; q < 8; ++q) {
        const int sr = r < 5 ? r : 8 - r;  // 2*(5-1) - r
        const int sq = q < 6 ? q : 10 - q;
        EXPECT_EQ(p(0, c, r, q), img(0, c, sr, sq)) << r << "," << q;
      }
    }
  }
  EXPECT_EQ(infer::pad_to_multiple(img, 1).shape(), img.shape());
  EXPECT_THROW((void)infer::pad_to_multiple(random_tensor<float>({1, 1, 3, 3}, rng), 8), ShapeError);
  EXPECT_THROW((void)infer::pad_to_multiple(img, 0), ValidationError);
}

TEST(Translate, RequiresDivisibleSidesUnlessPadding) {
  const auto model = tiny_model();
  Rng rng(4);
  const ImageTensor ok = random_tensor<float>({1, 1, 16, 24}, rng, 0, 1);
  EXPECT_EQ(infer::translate(model, ok, infer::Direction::kOctToHist).shape(),
            (Shape4{1, 3, 16, 24}));
  const ImageTensor odd = random_tensor<float>({1, 1, 20, 27}, rng, 0, 1);
  try {
    (void)infer::translate(model, odd, infer::Direction::kOctToHist);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 8"), std::string::npos) << e.what();
  }
  const ImageTensor padded = infer::translate(model, odd, infer::Direction::kOctToHist, true);
  EXPECT_EQ(padded.shape(), (Shape4{1, 3, 20, 27}));
  const ImageTensor full =
      model.g_oh.forward(infer::pad_to_multiple(odd, 8)).image;
  EXPECT_EQ(crop(full, 0, 0, 20, 27), padded);
  EXPECT_THROW((void)infer::translate(model, ok, infer::Direction::kHistToOct), ShapeError);
}

TEST(Infer, WritesDeterministicOutputsAndMontages) {
  TempDir in("infer_in"), a("infer_a"), b("infer_b");
  Rng rng(5);
  write_png(in / "x1.png", random_tensor<float>({1, 3, 16, 16}, rng, 0, 1));
  write_png(in / "x0.png", random_tensor<float>({1, 3, 16, 24}, rng, 0, 1));
  write_png(in / "x0_mask.png", random_tensor<float>({1, 1, 16, 24}, rng, 0, 1));
  const auto model = tiny_model();
  infer::InferOptions opt;
  opt.direction = infer::Direction::kHistToOct;
  const auto ra = infer::run(model, {in.path()}, a.path(), opt);
  const auto rb = infer::run(model, {in.path()}, b.path(), opt);
  ASSERT_EQ(ra.size(), 2u);
  EXPECT_EQ(ra[0].input.filename(), "x0.png");
  EXPECT_EQ(ra[1].input.filename(), "x1.png");
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(slurp(ra[i].output), slurp(rb[i].output));
    const ImageTensor out = read_png(ra[i].output);
    EXPECT_EQ(out.c(), 1);
    const ImageTensor m = read_png(ra[i].montage);
    EXPECT_EQ(m.c(), 3);
    EXPECT_EQ(m.w(), 2 * out.w());
  }
  opt.montage = false;
  const auto rc = infer::run(model, {in / "x1.png"}, a / "nomontage", opt);
  ASSERT_EQ(rc.size(), 1u);
  EXPECT_TRUE(rc[0].montage.empty());
  EXPECT_THROW((void)infer::run(model, {in / "nope.png"}, a.path(), opt), IoError);
}

TEST(Plot, EpochMeansAverageEachColumn) {
  std::vector<train::LossRecord> recs(4);
  for (int i = 0; i < 4; ++i) {
    recs[i].epoch = i < 2 ? 1 : 2;
    recs[i].step = i;
    recs[i].losses.cycle = i;
    recs[i].losses.adv_d_H = 2.0 * i;
    recs[i].losses.total_g = 10 + i;
  }
  const auto m = plot::epoch_means(recs);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].epoch, 1);
  EXPECT_DOUBLE_EQ(m[0].losses.cycle, 0.5);
  EXPECT_DOUBLE_EQ(m[1].losses.adv_d_H, 5.0);
  EXPECT_DOUBLE_EQ(m[1].losses.total_g, 12.5);
}

TEST(Plot, SvgHasTwoPanelsWithAllSeries) {
  TempDir dir("plot");
  const auto csv = dir / "log.csv";
  {
    std::ofstream out(csv);
    out << train::kLossCsvHeader << '\n';
    for (int e = 1; e <= 3; ++e) {
      for (int s = 0; s < 2; ++s) {
        train::LossRecord r;
        r.epoch = e;
        r.step = s;
        r.lr = 1e-4;
        r.losses = {1.0 / e, 0.9 / e, 0.5, 0.4, 2.0 / e, 1.0, 0.8 / e, 5.0 / e};
        out << train::format_loss_row(r) << '\n';
      }
    }
  }
  const auto svg_path = dir / "out" / "losses.svg";
  plot::plot_losses(csv, svg_path);
  const std::string svg = slurp(svg_path);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(count(svg, "<polyline"), 7u);
  EXPECT_EQ(count(svg, "<rect x="), 2u);
  EXPECT_NE(svg.find("(a) adversarial"), std::string::npos);
  EXPECT_NE(svg.find("(b) cycle"), std::string::npos);
  for (const char* label : {"adv_g_OH", "adv_g_HO", "adv_d_H", "adv_d_O", "cycle", "embedding",
                            "coronary"}) {
    EXPECT_NE(svg.find(std::string(">") + label + "<"), std::string::npos) << label;
  }
  EXPECT_EQ(count(svg, ">epoch<"), 2u);
  // Each polyline has one point per epoch.
  const std::regex poly("points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), poly); it != std::sregex_iterator(); ++it) {
    EXPECT_EQ(count((*it)[1].str(), ","), 3u);
  }
  EXPECT_THROW((void)plot::render_loss_svg({}), ValidationError);
}
