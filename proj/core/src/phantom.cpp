#include "coronagan/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "coronagan/rng.hpp"

namespace coronagan::phantom {
namespace {

// Stream tags for derive_seed so noise fields never share draws.
constexpr std::uint64_t kSpeckleStream = 1;
constexpr std::uint64_t kJitterStream = 2;
constexpr std::uint64_t kTextureStream = 3;

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("invalid phantom spec: " + what);
}

// Sum of three low-frequency plane waves scaled into [-amp, amp].
std::vector<double> texture_field(const PhantomSpec& spec) {
  std::vector<double> field(static_cast<std::size_t>(spec.height) * spec.width, 0.0);
  if (spec.texture_amp == 0.0) return field;
  Rng rng(derive_seed(spec.seed, {kTextureStream}));
  struct Wave {
    double fy, fx, phase;
  };
  std::array<Wave, 3> waves{};
  for (auto& w : waves) {
    w.fy = uniform(rng, 0.5, 3.0);
    w.fx = uniform(rng, 0.5, 3.0);
    w.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      double s = 0.0;
      for (const auto& w : waves) {
        s += std::sin(2.0 * std::numbers::pi *
                          (w.fy * r / spec.height + w.fx * c / spec.width) +
                      w.phase);
      }
      field[static_cast<std::size_t>(r) * spec.width + c] = spec.texture_amp * s / 3.0;
    }
  }
  return field;
}

nlohmann::json spec_to_json(const PhantomSpec& s) {
  nlohmann::json palette = nlohmann::json::array();
  for (const auto& rgb : s.stain_palette) palette.push_back(rgb);
  return {
      {"seed", s.seed},
      {"height", s.height},
      {"width", s.width},
      {"boundary1_mean", s.boundary1_mean},
      {"boundary2_mean", s.boundary2_mean},
      {"boundary_wobble_amp", s.boundary_wobble_amp},
      {"boundary_wobble_freq", s.boundary_wobble_freq},
      {"boundary_phase", s.boundary_phase},
      {"oct_attenuation_coeff", s.oct_attenuation_coeff},
      {"speckle_strength", s.speckle_strength},
      {"layer_reflectivity", s.layer_reflectivity},
      {"stain_palette", palette},
      {"stain_jitter", s.stain_jitter},
      {"texture_amp", s.texture_amp},
      {"background_class", s.background_class},
  };
}

PhantomSpec spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.boundary1_mean = j.at("boundary1_mean").get<double>();
  s.boundary2_mean = j.at("boundary2_mean").get<double>();
  s.boundary_wobble_amp = j.at("boundary_wobble_amp").get<double>();
  s.boundary_wobble_freq = j.at("boundary_wobble_freq").get<double>();
  s.boundary_phase = j.value("boundary_phase", 0.0);
  s.oct_attenuation_coeff = j.at("oct_attenuation_coeff").get<double>();
  s.speckle_strength = j.at("speckle_strength").get<double>();
  s.layer_reflectivity = j.at("layer_reflectivity").get<std::array<double, 3>>();
  const auto& palette = j.at("stain_palette");
  for (std::size_t k = 0; k < 3; ++k) s.stain_palette[k] = palette.at(k).get<Rgb>();
  s.stain_jitter = j.value("stain_jitter", 0.02);
  s.texture_amp = j.value("texture_amp", 0.03);
  s.background_class = j.value("background_class", false);
  return s;
}

}  // namespace

void validate(const PhantomSpec& spec) {
  require(spec.height >= 3 && spec.width >= 1, "image must be at least 3 rows by 1 column");
  require(spec.boundary1_mean > 0.0 && spec.boundary1_mean < spec.boundary2_mean &&
              spec.boundary2_mean < 1.0,
          "need 0 < boundary1_mean < boundary2_mean < 1");
  require(spec.boundary_wobble_amp >= 0.0, "boundary_wobble_amp must be >= 0");
  require(spec.oct_attenuation_coeff >= 0.0, "oct_attenuation_coeff must be >= 0");
  require(spec.speckle_strength >= 0.0, "speckle_strength must be >= 0");
  require(spec.stain_jitter >= 0.0 && spec.texture_amp >= 0.0, "noise amplitudes must be >= 0");
  for (double r : spec.layer_reflectivity) {
    require(r > 0.0 && r <= 1.0, "layer_reflectivity must lie in (0, 1]");
  }
  for (const auto& rgb : spec.stain_palette) {
    for (double v : rgb) require(in_unit(v), "stain_palette entries must lie in [0, 1]");
  }
  for (int x = 0; x < spec.width; ++x) {
    const int b1 = boundary_row(spec, spec.boundary1_mean, x);
    const int b2 = boundary_row(spec, spec.boundary2_mean, x);
    if (!(b1 < b2)) {
      throw ValidationError("invalid phantom spec: boundaries cross at column " +
                            std::to_string(x));
    }
  }
}

int boundary_row(const PhantomSpec& spec, double mean, int x) {
  const double offset = spec.boundary_wobble_amp *
                        std::sin(2.0 * std::numbers::pi * spec.boundary_wobble_freq * x /
                                     spec.width +
                                 spec.boundary_phase);
  const auto row = static_cast<int>(std::lround(spec.height * (mean + offset)));
  return std::clamp(row, 0, spec.height);
}

SegmentationMask rasterize_layers(const PhantomSpec& spec) {
  validate(spec);
  SegmentationMask mask(spec.height, spec.width);
  for (int x = 0; x < spec.width; ++x) {
    const int b1 = boundary_row(spec, spec.boundary1_mean, x);
    const int b2 = boundary_row(spec, spec.boundary2_mean, x);
    for (int r = 0; r < spec.height; ++r) {
      mask.at(r, x) = r < b1 ? 0 : (r < b2 ? 1 : 2);
    }
  }
  return mask;
}

std::vector<double> speckle_field(const PhantomSpec& spec) {
  Rng rng(derive_seed(spec.seed, {kSpeckleStream}));
  std::vector<double> g(static_cast<std::size_t>(spec.height) * spec.width);
  for (auto& v : g) v = truncated_normal(rng, 3.0);
  return g;
}

ImageTensor render_oct(const PhantomSpec& spec, const SegmentationMask& mask) {
  validate(spec);
  if (mask.height() != spec.height || mask.width() != spec.width) {
    throw ShapeError("render_oct: mask does not match spec dimensions");
  }
  const std::vector<double> g = speckle_field(spec);
  ImageTensor image(1, 1, spec.height, spec.width);
  for (int r = 0; r < spec.height; ++r) {
    const double decay = std::exp(-spec.oct_attenuation_coeff * r);
    for (int c = 0; c < spec.width; ++c) {
      const double base = spec.layer_reflectivity.at(mask.at(r, c)) * decay;
      const double v =
          base * (1.0 + spec.speckle_strength * g[static_cast<std::size_t>(r) * spec.width + c]);
      image(0, 0, r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return image;
}

ImageTensor render_histology(const PhantomSpec& spec, const SegmentationMask& mask) {
  validate(spec);
  if (mask.height() != spec.height || mask.width() != spec.width) {
    throw ShapeError("render_histology: mask does not match spec dimensions");
  }
  const std::vector<double> texture = texture_field(spec);
  Rng rng(derive_seed(spec.seed, {kJitterStream}));
  ImageTensor image(1, 3, spec.height, spec.width);
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      const Rgb& color = spec.stain_palette.at(mask.at(r, c));
      const double t = texture[static_cast<std::size_t>(r) * spec.width + c];
      for (int ch = 0; ch < 3; ++ch) {
        const double jitter =
            spec.stain_jitter > 0.0 ? uniform(rng, -spec.stain_jitter, spec.stain_jitter) : 0.0;
        image(0, ch, r, c) = static_cast<float>(std::clamp(color[ch] + t + jitter, 0.0, 1.0));
      }
    }
  }
  return image;
}

PhantomSpec random_spec(const PhantomDistribution& d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x5bec}));
  const auto draw = [&](const std::array<double, 2>& range) {
    return uniform(rng, range[0], range[1]);
  };
  PhantomSpec s;
  s.seed = seed;
  s.height = d.height;
  s.width = d.width;
  s.boundary1_mean = draw(d.boundary1_mean);
  s.boundary2_mean = draw(d.boundary2_mean);
  s.boundary_wobble_amp = draw(d.wobble_amp);
  s.boundary_wobble_freq = draw(d.wobble_freq);
  s.boundary_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  s.oct_attenuation_coeff = draw(d.attenuation_per_height) / d.height;
  s.speckle_strength = draw(d.speckle_strength);
  for (int k = 0; k < 3; ++k) s.layer_reflectivity[k] = draw(d.reflectivity[k]);
  for (auto& rgb : s.stain_palette) {
    for (double& v : rgb) {
      v = std::clamp(v + uniform(rng, -d.palette_perturbation, d.palette_perturbation), 0.0, 1.0);
    }
  }
  s.stain_jitter = d.stain_jitter;
  s.texture_amp = d.texture_amp;
  return s;
}

LabeledSample make_sample(const PhantomSpec& spec, Domain domain) {
  LabeledSample sample;
  sample.mask = rasterize_layers(spec);
  sample.image = domain == Domain::kOct ? render_oct(spec, sample.mask)
                                        : render_histology(spec, sample.mask);
  sample.domain = domain;
  return sample;
}

void write_manifest(const std::filesystem::path& file, const Manifest& manifest) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write manifest " + file.string());
  for (const auto& rec : manifest.records) {
    nlohmann::json j{{"path", rec.path.generic_string()},
                     {"mask_path", rec.mask_path.generic_string()},
                     {"domain", to_string(rec.domain)},
                     {"seed", rec.seed}};
    if (rec.spec) j["spec"] = spec_to_json(*rec.spec);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + file.string());
}

Manifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read manifest " + file.string());
  Manifest manifest;
  manifest.root = file.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord rec;
      rec.path = j.at("path").get<std::string>();
      rec.mask_path = j.value("mask_path", std::string{});
      rec.domain = parse_domain(j.at("domain").get<std::string>());
      rec.seed = j.value("seed", std::uint64_t{0});
      if (j.contains("spec")) rec.spec = spec_from_json(j.at("spec"));
      manifest.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return manifest;
}

Manifest generate_dataset(int n_oct, int n_hist, const PhantomDistribution& dist,
                          const std::filesystem::path& out_dir, std::uint64_t seed, int threads) {
  if (n_oct < 0 || n_hist < 0) throw ValidationError("sample counts must be >= 0");
  std::error_code ec;
  for (const char* sub : {"oct", "histology"}) {
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  Manifest manifest;
  manifest.root = out_dir;
  std::set<std::uint64_t> used;
  const int total = n_oct + n_hist;
  for (int i = 0; i < total; ++i) {
    const bool oct = i < n_oct;
    const int local = oct ? i : i - n_oct;
    std::uint64_t s = derive_seed(seed, {oct ? 0U : 1U, static_cast<std::uint64_t>(local)});
    while (!used.insert(s).second) s = mix64(s);
    char stem[64];
    std::snprintf(stem, sizeof(stem), "%s_%05d", oct ? "oct" : "hist", local);
    ManifestRecord rec;
    const std::filesystem::path dir = oct ? "oct" : "histology";
    rec.path = dir / (std::string(stem) + ".png");
    rec.mask_path = dir / (std::string(stem) + "_mask.png");
    rec.domain = oct ? Domain::kOct : Domain::kHistology;
    rec.seed = s;
    rec.spec = random_spec(dist, s);
    manifest.records.push_back(std::move(rec));
  }

  const int workers = std::max(1, std::min(threads > 0 ? threads
                                                       : static_cast<int>(
                                                             std::thread::hardware_concurrency()),
                                           std::max(total, 1)));
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int i = w; i < total; i += workers) {
            const auto& rec = manifest.records[i];
            const LabeledSample sample = make_sample(*rec.spec, rec.domain);
            write_png(out_dir / rec.path, sample.image);
            write_mask_png(out_dir / rec.mask_path, sample.mask);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace coronagan::phantom
