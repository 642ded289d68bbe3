#include "coronagan/training.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "coronagan/checkpoint.hpp"

namespace coronagan::train {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("invalid training config: " + what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class V>
V parse_number(const std::string& key, const std::string& text) {
  V value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ValidationError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': cannot parse '" + text + "'");
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
void scale(Tensor<T>& t, double s) {
  const T f = static_cast<T>(s);
  for (auto& v : t.values()) v *= f;
}

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite loss term '") + term + "' (" + fmt_double(v) + ")");
  }
}

std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04d", epoch);
  return buf;
}

}  // namespace

// ---- config ----

void TrainingConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr_initial > 0, "lr_initial must be > 0");
  require(lr_decay_every >= 1, "lr_decay_every must be >= 1");
  require(checkpoint_every >= 1, "checkpoint_every must be >= 1");
  require(flip_prob >= 0 && flip_prob <= 1, "flip_prob must lie in [0, 1]");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
          "adam betas must lie in [0, 1)");
  require(adam_eps > 0, "adam_eps must be > 0");
  require(replay_buffer_size >= 0, "replay_buffer_size must be >= 0");
  weights.validate();
  network.validate();
  const int g = 1 << network.n_down;
  const int d = 1 << network.disc_layers;
  require(patch_size > 0 && patch_size % g == 0 && patch_size % d == 0,
          "patch_size must be a multiple of " + std::to_string(std::max(g, d)));
}

TrainingConfig parse_config(const std::string& text) {
  TrainingConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto& n = c.network;
    if (key == "epochs") c.epochs = parse_number<int>(key, value);
    else if (key == "batch_size") c.batch_size = parse_number<int>(key, value);
    else if (key == "lr_initial") c.lr_initial = parse_double(key, value);
    else if (key == "lr_decay_every") c.lr_decay_every = parse_number<int>(key, value);
    else if (key == "alpha") c.weights.alpha = parse_double(key, value);
    else if (key == "beta") c.weights.beta = parse_double(key, value);
    else if (key == "gamma") c.weights.gamma = parse_double(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_number<int>(key, value);
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "patch_size") c.patch_size = parse_number<int>(key, value);
    else if (key == "flip_prob") c.flip_prob = parse_double(key, value);
    else if (key == "shuffle_seed") c.shuffle_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "oct_channels") n.oct_channels = parse_number<int>(key, value);
    else if (key == "hist_channels") n.hist_channels = parse_number<int>(key, value);
    else if (key == "base_width") n.base_width = parse_number<int>(key, value);
    else if (key == "n_resblocks") n.n_resblocks = parse_number<int>(key, value);
    else if (key == "n_down") n.n_down = parse_number<int>(key, value);
    else if (key == "disc_base_width") n.disc_base_width = parse_number<int>(key, value);
    else if (key == "disc_layers") n.disc_layers = parse_number<int>(key, value);
    else if (key == "classes") n.classes = parse_number<int>(key, value);
    else if (key == "gen_max_width") n.gen_max_width = parse_number<int>(key, value);
    else if (key == "adam_beta1") c.adam_beta1 = parse_double(key, value);
    else if (key == "adam_beta2") c.adam_beta2 = parse_double(key, value);
    else if (key == "adam_eps") c.adam_eps = parse_double(key, value);
    else if (key == "replay_buffer_size") c.replay_buffer_size = parse_number<int>(key, value);
    else if (key == "label_downsample") {
      if (value == "nearest") c.label_downsample = loss::Downsample::kNearest;
      else if (value == "majority") c.label_downsample = loss::Downsample::kMajority;
      else throw ValidationError("config key 'label_downsample': expected nearest or majority");
    } else {
      throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                            "'");
    }
  }
  c.validate();
  return c;
}

TrainingConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainingConfig& c) {
  std::ostringstream out;
  const auto& n = c.network;
  out << "epochs = " << c.epochs << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "lr_initial = " << fmt_double(c.lr_initial) << '\n'
      << "lr_decay_every = " << c.lr_decay_every << '\n'
      << "alpha = " << fmt_double(c.weights.alpha) << '\n'
      << "beta = " << fmt_double(c.weights.beta) << '\n'
      << "gamma = " << fmt_double(c.weights.gamma) << '\n'
      << "seed = " << c.seed << '\n'
      << "checkpoint_every = " << c.checkpoint_every << '\n'
      << "out_dir = " << c.out_dir.string() << '\n'
      << "patch_size = " << c.patch_size << '\n'
      << "flip_prob = " << fmt_double(c.flip_prob) << '\n'
      << "shuffle_seed = " << c.shuffle_seed << '\n'
      << "oct_channels = " << n.oct_channels << '\n'
      << "hist_channels = " << n.hist_channels << '\n'
      << "base_width = " << n.base_width << '\n'
      << "n_resblocks = " << n.n_resblocks << '\n'
      << "n_down = " << n.n_down << '\n'
      << "disc_base_width = " << n.disc_base_width << '\n'
      << "disc_layers = " << n.disc_layers << '\n'
      << "classes = " << n.classes << '\n'
      << "gen_max_width = " << n.gen_max_width << '\n'
      << "adam_beta1 = " << fmt_double(c.adam_beta1) << '\n'
      << "adam_beta2 = " << fmt_double(c.adam_beta2) << '\n'
      << "adam_eps = " << fmt_double(c.adam_eps) << '\n'
      << "label_downsample = "
      << (c.label_downsample == loss::Downsample::kNearest ? "nearest" : "majority") << '\n'
      << "replay_buffer_size = " << c.replay_buffer_size << '\n';
  return out.str();
}

double lr_schedule(const TrainingConfig& config, int epoch) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw ValidationError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(config.epochs) + ")");
  }
  const int d = config.lr_decay_every;
  const int window = epoch / d;
  const int windows = (config.epochs + d - 1) / d;
  return config.lr_initial * (1.0 - static_cast<double>(window) / windows);
}

// ---- optimizer ----

template <std::floating_point T>
Adam<T>::Adam(const nn::ParamStore<T>& params) {
  for (const auto& v : params.values()) {
    m_.emplace_back(v.shape());
    v_.emplace_back(v.shape());
  }
}

template <std::floating_point T>
void Adam<T>::step(nn::ParamStore<T>& params, const nn::Grads<T>& grads, double lr, double beta1,
                   double beta2, double eps) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1);
  const T b2 = static_cast<T>(beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T e = static_cast<T>(eps);
  for (int i = 0; i < params.size(); ++i) {
    T* p = params.value(i).data();
    const T* g = grads[i].data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    const std::size_t n = params.value(i).size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      p[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + e);
    }
  }
}

template <std::floating_point T>
ModelGrads<T>::ModelGrads(const net::CoronaryGan<T>& model)
    : g_oh(model.g_oh.params()),
      g_ho(model.g_ho.params()),
      d_h(model.d_h.params()),
      d_o(model.d_o.params()),
      s_oh(model.s_oh.params()),
      s_ho(model.s_ho.params()) {}

template <std::floating_point T>
void ModelGrads<T>::zero() {
  for (auto* g : {&g_oh, &g_ho, &d_h, &d_o, &s_oh, &s_ho}) g->zero();
}

// ---- objectives ----

template <std::floating_point T>
GeneratorPass<T> generator_objective(const net::CoronaryGan<T>& model, const Tensor<T>& oct,
                                     const Tensor<T>& hist, const loss::LabelMap& labels_o,
                                     const loss::LabelMap& labels_h,
                                     const loss::LossWeights& w, ModelGrads<T>* grads) {
  using GenTrace = typename net::Generator<T>::Trace;
  GenTrace t_oh_real;
  GenTrace t_ho_fake;
  GenTrace t_ho_real;
  GenTrace t_oh_fake;
  const bool backprop = grads != nullptr;

  auto [fake_h, emb_o] = model.g_oh.forward(oct, backprop ? &t_oh_real : nullptr);
  auto [rec_o, emb_fake_h] = model.g_ho.forward(fake_h, backprop ? &t_ho_fake : nullptr);
  auto [fake_o, emb_h] = model.g_ho.forward(hist, backprop ? &t_ho_real : nullptr);
  auto [rec_h, emb_fake_o] = model.g_oh.forward(fake_o, backprop ? &t_oh_fake : nullptr);

  nn::Trace<T> t_dh;
  nn::Trace<T> t_do;
  const Tensor<T> scores_h = model.d_h.forward(fake_h, backprop ? &t_dh : nullptr);
  const Tensor<T> scores_o = model.d_o.forward(fake_o, backprop ? &t_do : nullptr);

  nn::Trace<T> t_so;
  nn::Trace<T> t_sh;
  const Tensor<T> logits_o = model.s_oh.forward(emb_o, backprop ? &t_so : nullptr);
  const Tensor<T> logits_h = model.s_ho.forward(emb_h, backprop ? &t_sh : nullptr);

  Tensor<T> g_scores_h;
  Tensor<T> g_scores_o;
  Tensor<T> g_rec_o;
  Tensor<T> g_rec_h;
  Tensor<T> g_logits_o;
  Tensor<T> g_logits_h;
  loss::EmbeddingGrads<T> g_emb;

  GeneratorPass<T> pass;
  auto& p = pass.parts;
  p.adv_g_OH = loss::adversarial_g(scores_h, backprop ? &g_scores_h : nullptr);
  p.adv_g_HO = loss::adversarial_g(scores_o, backprop ? &g_scores_o : nullptr);
  p.cycle = loss::cycle(oct, rec_o, hist, rec_h, backprop ? &g_rec_o : nullptr,
                        backprop ? &g_rec_h : nullptr);
  p.embedding = loss::embedding(emb_fake_h, emb_o, emb_fake_o, emb_h, backprop ? &g_emb : nullptr);
  p.coronary = loss::coronary(logits_o, labels_o, logits_h, labels_h,
                              backprop ? &g_logits_o : nullptr, backprop ? &g_logits_h : nullptr);
  pass.total = p.adv_g_OH + p.adv_g_HO + w.alpha * p.cycle + w.beta * p.embedding +
               w.gamma * p.coronary;

  if (backprop) {
    scale(g_rec_o, w.alpha);
    scale(g_rec_h, w.alpha);
    scale(g_emb.from_fake_h, w.beta);
    scale(g_emb.used_for_h, w.beta);
    scale(g_emb.from_fake_o, w.beta);
    scale(g_emb.used_for_o, w.beta);
    scale(g_logits_o, w.gamma);
    scale(g_logits_h, w.gamma);

    // Discriminators are frozen: input gradients only.
    Tensor<T> g_fake_h = model.d_h.backward(t_dh, g_scores_h, nullptr, true);
    Tensor<T> g_fake_o = model.d_o.backward(t_do, g_scores_o, nullptr, true);

    Tensor<T> g_emb_o = model.s_oh.backward(t_so, g_logits_o, &grads->s_oh, true);
    Tensor<T> g_emb_h = model.s_ho.backward(t_sh, g_logits_h, &grads->s_ho, true);
    g_emb_o += g_emb.used_for_h;
    g_emb_h += g_emb.used_for_o;

    // Second applications first: they produce the gradient w.r.t. the fakes.
    g_fake_h += model.g_ho.backward(t_ho_fake, &g_rec_o, &g_emb.from_fake_h, &grads->g_ho, true);
    g_fake_o += model.g_oh.backward(t_oh_fake, &g_rec_h, &g_emb.from_fake_o, &grads->g_oh, true);
    (void)model.g_oh.backward(t_oh_real, &g_fake_h, &g_emb_o, &grads->g_oh, false);
    (void)model.g_ho.backward(t_ho_real, &g_fake_o, &g_emb_h, &grads->g_ho, false);
  }

  pass.fake_h = std::move(fake_h);
  pass.fake_o = std::move(fake_o);
  pass.rec_o = std::move(rec_o);
  pass.rec_h = std::move(rec_h);
  return pass;
}

template <std::floating_point T>
std::pair<double, double> discriminator_objective(const net::CoronaryGan<T>& model,
                                                  const Tensor<T>& real_o, const Tensor<T>& real_h,
                                                  const Tensor<T>& fake_o, const Tensor<T>& fake_h,
                                                  ModelGrads<T>* grads) {
  const bool backprop = grads != nullptr;
  const auto side = [&](const net::Discriminator<T>& d, const Tensor<T>& real,
                        const Tensor<T>& fake, nn::Grads<T>* g) {
    nn::Trace<T> t_real;
    nn::Trace<T> t_fake;
    const Tensor<T> s_real = d.forward(real, backprop ? &t_real : nullptr);
    const Tensor<T> s_fake = d.forward(fake, backprop ? &t_fake : nullptr);
    Tensor<T> g_real;
    Tensor<T> g_fake;
    const double value = loss::adversarial_d(s_real, s_fake, backprop ? &g_real : nullptr,
                                             backprop ? &g_fake : nullptr);
    if (backprop) {
      (void)d.backward(t_real, g_real, g, false);
      (void)d.backward(t_fake, g_fake, g, false);
    }
    return value;
  };
  const double d_h = side(model.d_h, real_h, fake_h, backprop ? &grads->d_h : nullptr);
  const double d_o = side(model.d_o, real_o, fake_o, backprop ? &grads->d_o : nullptr);
  return {d_h, d_o};
}

// ---- replay pool ----

Tensor<float> ImagePool::query(const Tensor<float>& images, Rng& rng) {
  if (capacity_ == 0) return images;
  Tensor<float> out = images;
  const Shape4 one{1, images.c(), images.h(), images.w()};
  const std::size_t sz = one.size();
  for (int b = 0; b < images.n(); ++b) {
    Tensor<float> img(one);
    std::copy_n(images.plane(b, 0), sz, img.data());
    if (static_cast<int>(images_.size()) < capacity_) {
      images_.push_back(std::move(img));
    } else if (uniform01(rng) < 0.5) {
      const auto idx = static_cast<std::size_t>(uniform_index(rng, images_.size()));
      std::copy_n(images_[idx].data(), sz, out.plane(b, 0));
      images_[idx] = std::move(img);
    }
  }
  return out;
}

// ---- state ----

TrainerState::TrainerState(const TrainingConfig& cfg)
    : config(cfg),
      model(cfg.network),
      pool_h(cfg.replay_buffer_size),
      pool_o(cfg.replay_buffer_size) {
  for (const auto& [name, params] : model.networks()) optimizers.emplace_back(*params);
}

TrainerState initial_state(const TrainingConfig& config) {
  config.validate();
  TrainerState state(config);
  state.model.init(config.seed);
  return state;
}

loss::LossBreakdown train_step(TrainerState& state, const data::UnpairedBatch& batch, double lr,
                               int epoch, int step) {
  const TrainingConfig& cfg = state.config;
  auto& model = state.model;
  const int factor = 1 << cfg.network.n_down;
  const loss::LabelMap labels_o =
      loss::downsample_labels(batch.oct_masks, factor, cfg.label_downsample);
  const loss::LabelMap labels_h =
      loss::downsample_labels(batch.hist_masks, factor, cfg.label_downsample);

  ModelGrads<float> grads(model);
  GeneratorPass<float> pass = generator_objective(model, batch.oct_images, batch.hist_images,
                                                  labels_o, labels_h, cfg.weights, &grads);
  const auto& p = pass.parts;
  require_finite(p.adv_g_OH, "adv_g_OH");
  require_finite(p.adv_g_HO, "adv_g_HO");
  require_finite(p.cycle, "cycle");
  require_finite(p.embedding, "embedding");
  require_finite(p.coronary, "coronary");

  Rng rng(derive_seed(cfg.seed, {0x9001, static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(step)}));
  const Tensor<float> shown_h = state.pool_h.query(pass.fake_h, rng);
  const Tensor<float> shown_o = state.pool_o.query(pass.fake_o, rng);
  const auto [adv_d_h, adv_d_o] =
      discriminator_objective(model, batch.oct_images, batch.hist_images, shown_o, shown_h, &grads);
  require_finite(adv_d_h, "adv_d_H");
  require_finite(adv_d_o, "adv_d_O");

  auto nets = model.networks();
  const std::array<nn::Grads<float>*, 6> by_net{&grads.g_oh, &grads.g_ho, &grads.d_h,
                                                &grads.d_o,  &grads.s_oh, &grads.s_ho};
  // Generators and heads, then discriminators.
  for (int i : {0, 1, 4, 5, 2, 3}) {
    state.optimizers[i].step(*nets[i].params, *by_net[i], lr, cfg.adam_beta1, cfg.adam_beta2,
                             cfg.adam_eps);
  }

  loss::LossParts parts = p;
  parts.adv_d_H = adv_d_h;
  parts.adv_d_O = adv_d_o;
  const loss::LossBreakdown out = loss::total_generator_loss(parts, cfg.weights);
  require_finite(out.total_g, "total_g");
  return out;
}

// ---- checkpoints ----

void save_checkpoint(const TrainerState& state, const std::filesystem::path& dir) {
  io::save_model(state.model, dir);

  std::vector<io::NamedTensor> moments;
  nlohmann::ordered_json steps = nlohmann::ordered_json::object();
  const auto nets = state.model.networks();
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const auto& [name, store] = nets[k];
    const auto& opt = state.optimizers[k];
    steps[name] = opt.steps();
    for (int i = 0; i < store->size(); ++i) {
      moments.push_back({name + "." + store->name(i) + ".m", &opt.first_moments()[i]});
      moments.push_back({name + "." + store->name(i) + ".v", &opt.second_moments()[i]});
    }
  }
  io::write_tensors(dir, "optim", moments, nlohmann::ordered_json{{"steps", steps}}.dump());

  std::vector<io::NamedTensor> pooled;
  for (std::size_t i = 0; i < state.pool_h.images().size(); ++i) {
    pooled.push_back({"pool_h." + std::to_string(i), &state.pool_h.images()[i]});
  }
  for (std::size_t i = 0; i < state.pool_o.images().size(); ++i) {
    pooled.push_back({"pool_o." + std::to_string(i), &state.pool_o.images()[i]});
  }
  io::write_tensors(dir, "pools", pooled,
                    nlohmann::ordered_json{{"pool_h", state.pool_h.images().size()},
                                           {"pool_o", state.pool_o.images().size()}}
                        .dump());

  nlohmann::ordered_json meta{
      {"epoch", state.epoch},
      {"config", format_config(state.config)},
      {"data_order",
       {{"scheme", "derived(shuffle_seed, epoch, step)"},
        {"shuffle_seed", state.config.shuffle_seed},
        {"next_epoch", state.epoch}}},
  };
  const auto path = dir / "state.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << meta.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

TrainerState load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / "state.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  TrainerState state(parse_config(meta.at("config").get<std::string>()));
  state.epoch = meta.at("epoch").get<int>();

  const io::TensorFile model_file = io::read_tensors(dir, "model");
  io::load_params_into(model_file, state.model);

  const io::TensorFile optim = io::read_tensors(dir, "optim");
  const auto steps = nlohmann::json::parse(optim.meta_json).at("steps");
  auto nets = state.model.networks();
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const auto& [name, store] = nets[k];
    auto& opt = state.optimizers[k];
    opt.set_steps(steps.at(name).get<std::int64_t>());
    for (int i = 0; i < store->size(); ++i) {
      for (auto [suffix, vec] : {std::pair{".m", &opt.first_moments()},
                                 std::pair{".v", &opt.second_moments()}}) {
        const std::string key = name + "." + store->name(i) + suffix;
        const auto it = optim.tensors.find(key);
        if (it == optim.tensors.end()) throw IoError("checkpoint is missing optimizer tensor " + key);
        require_shape(it->second.shape(), (*vec)[i].shape(), "optimizer tensor " + key);
        (*vec)[i] = it->second;
      }
    }
  }

  const io::TensorFile pools = io::read_tensors(dir, "pools");
  const auto counts = nlohmann::json::parse(pools.meta_json);
  for (auto [key, pool] : {std::pair{"pool_h", &state.pool_h}, std::pair{"pool_o", &state.pool_o}}) {
    const auto n = counts.at(key).get<std::size_t>();
    for (std::size_t i = 0; i < n; ++i) {
      pool->images().push_back(pools.tensors.at(std::string(key) + "." + std::to_string(i)));
    }
  }
  return state;
}

std::filesystem::path latest_checkpoint(const std::filesystem::path& out_dir) {
  const auto root = out_dir / "checkpoints";
  std::filesystem::path best;
  int best_epoch = -1;
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) return {};
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("epoch_", 0) != 0 || !std::filesystem::exists(entry.path() / "state.json")) {
      continue;
    }
    const int e = std::atoi(name.c_str() + 6);
    if (e > best_epoch) {
      best_epoch = e;
      best = entry.path();
    }
  }
  return best;
}

// ---- loss log ----

std::string format_loss_row(const LossRecord& r) {
  const auto& l = r.losses;
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.epoch,
                r.step, r.lr, l.adv_g_OH, l.adv_g_HO, l.adv_d_H, l.adv_d_O, l.cycle, l.embedding,
                l.coronary, l.total_g);
  return buf;
}

std::vector<LossRecord> read_loss_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<LossRecord> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kLossCsvHeader) {
        throw IoError(file.string() + ":1: unexpected header '" + line + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) {
      throw IoError(file.string() + ":" + std::to_string(line_no) + ": expected 11 columns, got " +
                    std::to_string(cells.size()));
    }
    try {
      LossRecord r;
      std::size_t used = 0;
      const auto num = [&](const std::string& s) {
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      };
      r.epoch = static_cast<int>(num(cells[0]));
      r.step = static_cast<int>(num(cells[1]));
      r.lr = num(cells[2]);
      auto& l = r.losses;
      l.adv_g_OH = num(cells[3]);
      l.adv_g_HO = num(cells[4]);
      l.adv_d_H = num(cells[5]);
      l.adv_d_O = num(cells[6]);
      l.cycle = num(cells[7]);
      l.embedding = num(cells[8]);
      l.coronary = num(cells[9]);
      l.total_g = num(cells[10]);
      rows.push_back(r);
    } catch (const std::exception&) {
      throw IoError(file.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  if (line_no == 0) throw IoError(file.string() + ":1: empty file");
  return rows;
}

// ---- driver ----

std::filesystem::path train(const TrainingConfig& config, const data::UnpairedLoader& loader,
                            const TrainOptions& options) {
  config.validate();
  if (loader.config().batch_size != config.batch_size ||
      loader.config().patch_size != config.patch_size) {
    throw ValidationError("loader batch/patch size disagree with the training config");
  }
  std::error_code ec;
  std::filesystem::create_directories(config.out_dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());

  const auto csv_path = config.out_dir / "loss_log.csv";
  std::optional<TrainerState> state;
  std::vector<std::string> kept_rows;
  if (options.resume) {
    if (const auto latest = latest_checkpoint(config.out_dir); !latest.empty()) {
      state.emplace(load_checkpoint(latest));
      if (!(state->config.network == config.network)) {
        throw ValidationError("cannot resume " + latest.string() +
                              ": network config differs from the checkpoint");
      }
      state->config = config;
      if (options.log) *options.log << "resuming from " << latest.string() << '\n';
      if (std::filesystem::exists(csv_path)) {
        for (const auto& r : read_loss_csv(csv_path)) {
          if (r.epoch < state->epoch) kept_rows.push_back(format_loss_row(r));
        }
      }
    }
  }
  if (!state) state.emplace(initial_state(config));

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << kLossCsvHeader << '\n';
  for (const auto& row : kept_rows) csv << row << '\n';

  std::filesystem::path last = latest_checkpoint(config.out_dir);
  for (int epoch = state->epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(config, epoch);
    double epoch_total = 0;
    for (int step = 0; step < loader.steps_per_epoch(); ++step) {
      LossRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lr = lr;
      rec.losses = train_step(*state, loader.batch(epoch, step), lr, epoch, step);
      csv << format_loss_row(rec) << '\n';
      epoch_total += rec.losses.total_g;
      if (options.on_step) options.on_step(rec);
    }
    csv.flush();
    state->epoch = epoch + 1;
    if (options.log) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "epoch %d/%d lr %.3g mean total_g %.5f", epoch + 1,
                    config.epochs, lr, epoch_total / loader.steps_per_epoch());
      *options.log << buf << std::endl;
    }
    if (state->epoch % config.checkpoint_every == 0 || state->epoch == config.epochs) {
      last = config.out_dir / "checkpoints" / checkpoint_name(state->epoch);
      save_checkpoint(*state, last);
    }
  }
  if (!csv) throw IoError("write failed: " + csv_path.string());
  return last;
}

std::filesystem::path train(const TrainingConfig& config, const phantom::Manifest& manifest,
                            const TrainOptions& options) {
  const data::LoaderConfig lc{config.patch_size, config.batch_size, config.flip_prob,
                              config.shuffle_seed};
  return train(config, data::UnpairedLoader::from_manifest(manifest, lc), options);
}

template class Adam<float>;
template class Adam<double>;
template struct ModelGrads<float>;
template struct ModelGrads<double>;
template GeneratorPass<float> generator_objective(const net::CoronaryGan<float>&,
                                                  const Tensor<float>&, const Tensor<float>&,
                                                  const loss::LabelMap&, const loss::LabelMap&,
                                                  const loss::LossWeights&, ModelGrads<float>*);
template GeneratorPass<double> generator_objective(const net::CoronaryGan<double>&,
                                                   const Tensor<double>&, const Tensor<double>&,
                                                   const loss::LabelMap&, const loss::LabelMap&,
                                                   const loss::LossWeights&, ModelGrads<double>*);
template std::pair<double, double> discriminator_objective(const net::CoronaryGan<float>&,
                                                           const Tensor<float>&,
                                                           const Tensor<float>&,
                                                           const Tensor<float>&,
                                                           const Tensor<float>&,
                                                           ModelGrads<float>*);
template std::pair<double, double> discriminator_objective(const net::CoronaryGan<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           ModelGrads<double>*);

}  // namespace coronagan::train
