#include "coronagan/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "coronagan/checkpoint.hpp"
#include "coronagan/rng.hpp"

namespace coronagan::eval {
namespace {

void require_stage(int stage) {
  if (stage < 1 || stage > kStages) {
    throw ValidationError("feature stage must be 1, 2 or 3, got " + std::to_string(stage));
  }
}

ImageTensor as_rgb(const ImageTensor& image) {
  if (image.n() != 1) throw ShapeError("expected a single image, got " + image.shape().str());
  if (image.c() == 3) return image;
  if (image.c() != 1) {
    throw ShapeError("feature extractor expects 3 channels (or 1 to replicate), got " +
                     image.shape().str());
  }
  ImageTensor out(1, 3, image.h(), image.w());
  for (int c = 0; c < 3; ++c) std::copy_n(image.data(), image.size(), out.plane(0, c));
  return out;
}

void relu_inplace(Tensor<float>& t) {
  for (auto& v : t.values()) v = std::max(v, 0.0f);
}

Tensor<float> apply(const ResNetExtractor::FoldedConv& conv, const Tensor<float>& x) {
  return nn::conv2d(x, conv.weight, &conv.bias, conv.stride, conv.pad);
}

void run_parallel(std::size_t count, int threads, const std::function<void(std::size_t)>& job) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            job(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

// ---- fallback ----

FallbackExtractor::FallbackExtractor(const Options& o) {
  Rng rng(derive_seed(o.seed, {0xfeed}));
  int in = 3;
  for (int s = 0; s < kStages; ++s) {
    if (o.widths[s] < 1 || o.kernels[s] < 1 || o.strides[s] < 1) {
      throw ValidationError("fallback extractor widths, kernels and strides must be >= 1");
    }
    const int k = o.kernels[s];
    Stage& st = stages_[s];
    st.weight = Tensor<float>(o.widths[s], in, k, k);
    st.bias = Tensor<float>(1, o.widths[s], 1, 1);
    st.stride = o.strides[s];
    const double std = std::sqrt(2.0 / (in * k * k));
    for (auto& w : st.weight.values()) w = static_cast<float>(std * standard_normal(rng));
    in = o.widths[s];
  }
}

FallbackExtractor::FallbackExtractor(std::array<Stage, kStages> stages) : stages_(std::move(stages)) {
  int in = 3;
  for (int s = 0; s < kStages; ++s) {
    const Shape4& w = stages_[s].weight.shape();
    if (w.c != in || w.h != w.w || w.h % 2 == 0) {
      throw ShapeError("fallback stage " + std::to_string(s + 1) + " weight " + w.str() +
                       " must be [out," + std::to_string(in) + ",k,k] with odd k");
    }
    require_shape(stages_[s].bias.shape(), Shape4{1, w.n, 1, 1}, "fallback stage bias");
    if (stages_[s].stride < 1) throw ValidationError("fallback stage stride must be >= 1");
    in = w.n;
  }
}

int FallbackExtractor::stage_channels(int stage) const {
  require_stage(stage);
  return stages_[stage - 1].weight.shape().n;
}

StageMaps FallbackExtractor::features(const ImageTensor& image) const {
  StageMaps out;
  Tensor<float> x = as_rgb(image);
  for (int s = 0; s < kStages; ++s) {
    const Stage& st = stages_[s];
    x = nn::conv2d(x, st.weight, &st.bias, st.stride, st.weight.h() / 2);
    relu_inplace(x);
    out[s] = x;
  }
  return out;
}

// ---- pretrained ----

ImageTensor imagenet_preprocess(const ImageTensor& image) {
  ImageTensor x = nn::resize_bilinear(as_rgb(image), ResNetExtractor::kInputSize,
                                      ResNetExtractor::kInputSize);
  for (int c = 0; c < 3; ++c) {
    float* p = x.plane(0, c);
    const auto mean = static_cast<float>(ResNetExtractor::kMean[c]);
    const auto inv = static_cast<float>(1.0 / ResNetExtractor::kStd[c]);
    for (int i = 0; i < x.h() * x.w(); ++i) p[i] = (p[i] - mean) * inv;
  }
  return x;
}

namespace {

const Tensor<float>& tensor_at(const io::TensorFile& file, const std::string& name) {
  const auto it = file.tensors.find(name);
  if (it == file.tensors.end()) throw IoError("extractor archive is missing tensor " + name);
  return it->second;
}

ResNetExtractor::FoldedConv fold(const io::TensorFile& file, const std::string& conv,
                                 const std::string& bn, int stride, int pad) {
  constexpr double kBnEps = 1e-5;
  ResNetExtractor::FoldedConv out;
  out.weight = tensor_at(file, conv + ".weight");
  out.stride = stride;
  out.pad = pad;
  const int c = out.weight.n();
  const auto& gamma = tensor_at(file, bn + ".weight");
  const auto& beta = tensor_at(file, bn + ".bias");
  const auto& mean = tensor_at(file, bn + ".running_mean");
  const auto& var = tensor_at(file, bn + ".running_var");
  for (const auto* t : {&gamma, &beta, &mean, &var}) {
    if (t->size() != static_cast<std::size_t>(c)) {
      throw IoError("extractor archive: " + bn + " does not match " + conv + " channels");
    }
  }
  out.bias = Tensor<float>(1, c, 1, 1);
  const std::size_t per_out = out.weight.size() / c;
  for (int o = 0; o < c; ++o) {
    const double scale = gamma[o] / std::sqrt(static_cast<double>(var[o]) + kBnEps);
    float* w = out.weight.data() + o * per_out;
    for (std::size_t k = 0; k < per_out; ++k) w[k] = static_cast<float>(w[k] * scale);
    out.bias[o] = static_cast<float>(beta[o] - mean[o] * scale);
  }
  return out;
}

}  // namespace

ResNetExtractor::ResNetExtractor(const std::filesystem::path& dir) {
  const io::TensorFile file = io::read_tensors(dir, "resnet");
  name_ = "resnet";
  if (const auto meta = nlohmann::json::parse(file.meta_json); meta.contains("arch")) {
    name_ = meta.at("arch").get<std::string>();
  }
  stem_ = fold(file, "conv1", "bn1", 2, 3);
  for (int s = 0; s < kStages; ++s) {
    const std::string layer = "layer" + std::to_string(s + 1);
    for (int b = 0;; ++b) {
      const std::string p = layer + "." + std::to_string(b);
      if (!file.tensors.contains(p + ".conv1.weight")) break;
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      Bottleneck blk;
      blk.conv1 = fold(file, p + ".conv1", p + ".bn1", 1, 0);
      blk.conv2 = fold(file, p + ".conv2", p + ".bn2", stride, 1);
      blk.conv3 = fold(file, p + ".conv3", p + ".bn3", 1, 0);
      if (file.tensors.contains(p + ".downsample.0.weight")) {
        blk.has_downsample = true;
        blk.downsample = fold(file, p + ".downsample.0", p + ".downsample.1", stride, 0);
      }
      layers_[s].push_back(std::move(blk));
    }
    if (layers_[s].empty()) throw IoError("extractor archive has no blocks in " + layer);
  }
}

std::string ResNetExtractor::name() const { return name_; }

int ResNetExtractor::stage_channels(int stage) const {
  require_stage(stage);
  return layers_[stage - 1].back().conv3.weight.n();
}

std::array<int, kStages> ResNetExtractor::blocks() const {
  return {static_cast<int>(layers_[0].size()), static_cast<int>(layers_[1].size()),
          static_cast<int>(layers_[2].size())};
}

StageMaps ResNetExtractor::features(const ImageTensor& image) const {
  Tensor<float> x = apply(stem_, imagenet_preprocess(image));
  relu_inplace(x);
  x = nn::max_pool2d(x, 3, 2, 1);
  StageMaps out;
  for (int s = 0; s < kStages; ++s) {
    for (const Bottleneck& blk : layers_[s]) {
      Tensor<float> y = apply(blk.conv1, x);
      relu_inplace(y);
      y = apply(blk.conv2, y);
      relu_inplace(y);
      y = apply(blk.conv3, y);
      y += blk.has_downsample ? apply(blk.downsample, x) : x;
      relu_inplace(y);
      x = std::move(y);
    }
    out[s] = x;
  }
  return out;
}

std::unique_ptr<FeatureExtractor> load_pretrained_extractor(const std::filesystem::path& dir) {
  std::filesystem::path path = dir;
  if (path.empty()) {
    if (const char* env = std::getenv("CORONAGAN_EXTRACTOR_PATH"); env && *env) path = env;
  }
  const std::string hint =
      "; export weights with `python3 tools/export_resnet101.py --out DIR` and set "
      "CORONAGAN_EXTRACTOR_PATH=DIR (or use the fallback extractor)";
  if (path.empty()) throw IoError("no pretrained extractor weights configured" + hint);
  if (!std::filesystem::exists(path / "resnet.json")) {
    throw IoError("extractor weights not found at " + path.string() + hint);
  }
  return std::make_unique<ResNetExtractor>(path);
}

// ---- scoring ----

PooledStages pooled_all(const FeatureExtractor& extractor, const ImageTensor& image) {
  const StageMaps maps = extractor.features(image);
  PooledStages out;
  for (int s = 0; s < kStages; ++s) {
    const Tensor<float>& f = maps[s];
    const std::size_t plane = static_cast<std::size_t>(f.h()) * f.w();
    out[s].resize(f.c());
    for (int c = 0; c < f.c(); ++c) {
      const float* p = f.plane(0, c);
      double sum = 0;
      for (std::size_t k = 0; k < plane; ++k) sum += p[k];
      out[s][c] = sum / static_cast<double>(plane);
    }
  }
  return out;
}

std::vector<double> pooled_features(const FeatureExtractor& extractor, const ImageTensor& image,
                                    int stage) {
  require_stage(stage);
  return pooled_all(extractor, image)[stage - 1];
}

double phv_from_pooled(const std::vector<double>& a, const std::vector<double>& b,
                       double threshold) {
  if (!(threshold > 0)) throw ValidationError("PHV threshold must be > 0");
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("PHV needs equal, non-empty channel counts (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  std::size_t within = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    if (std::abs(a[n] - b[n]) <= threshold) ++within;
  }
  return 100.0 * static_cast<double>(within) / static_cast<double>(a.size());
}

double phv(const ImageTensor& real, const ImageTensor& virtual_image,
           const FeatureExtractor& extractor, int stage, double threshold) {
  require_stage(stage);
  if (!(real.shape() == virtual_image.shape())) {
    throw ShapeError("PHV images differ in size: " + real.shape().str() + " vs " +
                     virtual_image.shape().str());
  }
  return phv_from_pooled(pooled_features(extractor, real, stage),
                         pooled_features(extractor, virtual_image, stage), threshold);
}

std::string to_string(Pairing p) { return p == Pairing::kAllPairs ? "all-pairs" : "best-match"; }

Pairing parse_pairing(const std::string& s) {
  if (s == "all-pairs") return Pairing::kAllPairs;
  if (s == "best-match") return Pairing::kBestMatch;
  throw ValidationError("unknown pairing '" + s + "' (expected all-pairs or best-match)");
}

PHVReport score_pairs(const std::vector<PooledStages>& virtual_images,
                      const std::vector<PooledStages>& real_images, double threshold,
                      Pairing pairing) {
  if (virtual_images.empty() || real_images.empty()) {
    throw ValidationError("PHV evaluation needs at least one virtual and one real image");
  }
  PHVReport report;
  report.threshold = threshold;
  report.pairing = pairing;
  for (int s = 0; s < kStages; ++s) {
    report.channel_abs_diff[s].assign(real_images.front()[s].size(), 0.0);
    report.self_check[s] =
        phv_from_pooled(real_images.front()[s], real_images.front()[s], threshold);
  }
  const auto add_pair = [&](const PooledStages& v, const PooledStages& r) {
    for (int s = 0; s < kStages; ++s) {
      report.phv[s] += phv_from_pooled(r[s], v[s], threshold);
      for (std::size_t n = 0; n < r[s].size(); ++n) {
        report.channel_abs_diff[s][n] += std::abs(r[s][n] - v[s][n]);
      }
    }
    ++report.n_pairs;
  };
  for (const auto& v : virtual_images) {
    if (pairing == Pairing::kAllPairs) {
      for (const auto& r : real_images) add_pair(v, r);
      continue;
    }
    std::size_t best = 0;
    double best_score = -1;
    for (std::size_t j = 0; j < real_images.size(); ++j) {
      double score = 0;
      for (int s = 0; s < kStages; ++s) {
        score += phv_from_pooled(real_images[j][s], v[s], threshold);
      }
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    add_pair(v, real_images[best]);
  }
  for (int s = 0; s < kStages; ++s) {
    report.phv[s] /= report.n_pairs;
    for (auto& d : report.channel_abs_diff[s]) d /= report.n_pairs;
  }
  return report;
}

std::string PHVReport::to_json() const {
  nlohmann::ordered_json j;
  j["phv_1"] = phv[0];
  j["phv_2"] = phv[1];
  j["phv_3"] = phv[2];
  j["T"] = threshold;
  j["n_pairs"] = n_pairs;
  j["pairing"] = to_string(pairing);
  j["extractor"] = extractor;
  j["self_check"] = {{"phv_1", self_check[0]}, {"phv_2", self_check[1]}, {"phv_3", self_check[2]}};
  j["channel_abs_diff"] = {{"1", channel_abs_diff[0]},
                           {"2", channel_abs_diff[1]},
                           {"3", channel_abs_diff[2]}};
  return j.dump(1);
}

PHVReport evaluate_testset(const net::CoronaryGan<float>& model, const phantom::Manifest& manifest,
                           const FeatureExtractor& extractor, const EvaluateOptions& options) {
  std::vector<std::filesystem::path> oct;
  std::vector<std::filesystem::path> hist;
  for (const auto& r : manifest.records) {
    (r.domain == Domain::kOct ? oct : hist).push_back(manifest.resolve(r.path));
  }
  if (oct.empty() || hist.empty()) {
    throw ValidationError("evaluation manifest needs OCT and histology images (found " +
                          std::to_string(oct.size()) + " and " + std::to_string(hist.size()) + ")");
  }
  std::vector<PooledStages> virtual_pooled(oct.size());
  std::vector<PooledStages> real_pooled(hist.size());
  run_parallel(oct.size() + hist.size(), options.threads, [&](std::size_t i) {
    if (i < oct.size()) {
      const ImageTensor image = read_png(oct[i]);
      if (image.c() != model.config.oct_channels) {
        throw ShapeError(oct[i].string() + ": expected an OCT image with " +
                         std::to_string(model.config.oct_channels) + " channel(s)");
      }
      virtual_pooled[i] = pooled_all(extractor, model.g_oh.forward(image).image);
    } else {
      const auto& path = hist[i - oct.size()];
      real_pooled[i - oct.size()] = pooled_all(extractor, read_png(path));
    }
  });
  PHVReport report = score_pairs(virtual_pooled, real_pooled, options.threshold, options.pairing);
  report.extractor = extractor.name();
  return report;
}

}  // namespace coronagan::eval
