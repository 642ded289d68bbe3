#include "coronagan/networks.hpp"

#include "coronagan/rng.hpp"

namespace coronagan::net {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

template <class T>
nn::Conv2d make_conv(nn::ParamStore<T>& params, const std::string& name, int in, int out,
                     int kernel, int stride, int pad, nn::Padding padding) {
  nn::Conv2d L;
  L.in = in;
  L.out = out;
  L.kernel = kernel;
  L.stride = stride;
  L.pad = pad;
  L.padding = padding;
  L.weight = params.add(name + ".weight", {out, in, kernel, kernel});
  L.bias = params.add(name + ".bias", {1, out, 1, 1});
  return L;
}

template <class T>
nn::ConvTranspose2d make_convt(nn::ParamStore<T>& params, const std::string& name, int in,
                               int out) {
  nn::ConvTranspose2d L;
  L.in = in;
  L.out = out;
  L.kernel = 4;
  L.stride = 2;
  L.pad = 1;
  L.weight = params.add(name + ".weight", {in, out, 4, 4});
  L.bias = params.add(name + ".bias", {1, out, 1, 1});
  return L;
}

bool is_bias(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

template <class T>
void gaussian_init(nn::ParamStore<T>& params, std::uint64_t seed) {
  Rng rng(seed);
  for (int i = 0; i < params.size(); ++i) {
    auto& v = params.value(i);
    if (is_bias(params.name(i))) {
      v.fill(T(0));
      continue;
    }
    for (auto& x : v.values()) x = static_cast<T>(kInitStd * standard_normal(rng));
  }
}

}  // namespace

void GeneratorConfig::validate() const {
  require(in_channels > 0 && out_channels > 0, "generator channel counts must be positive");
  require(base_width > 0, "base_width must be positive");
  require(n_resblocks >= 0, "n_resblocks must be >= 0");
  require(n_down >= 1 && n_down <= 6, "n_down must lie in [1, 6]");
  require(max_width >= base_width, "max_width must be >= base_width");
}

void DiscriminatorConfig::validate() const {
  require(in_channels > 0, "discriminator in_channels must be positive");
  require(base_width > 0, "discriminator base_width must be positive");
  require(n_layers >= 1 && n_layers <= 6, "discriminator n_layers must lie in [1, 6]");
}

void NetworkConfig::validate() const {
  oct_to_hist().validate();
  hist_to_oct().validate();
  DiscriminatorConfig{hist_channels, disc_base_width, disc_layers}.validate();
  require(classes >= 2, "classes must be >= 2");
}

// ---- Generator ----

template <std::floating_point T>
Generator<T>::Generator(GeneratorConfig config) : config_(config) {
  config_.validate();
  int width = config_.in_channels;
  for (int i = 0; i < config_.n_down; ++i) {
    const int out = config_.width(i + 1);
    encoder_.add(make_conv(params_, "enc." + std::to_string(i), width, out, 3, 2, 1,
                           nn::Padding::kReflect));
    encoder_.add(nn::InstanceNorm{});
    encoder_.add(nn::ReLU{});
    width = out;
  }
  for (int r = 0; r < config_.n_resblocks; ++r) {
    const std::string name = "res." + std::to_string(r);
    nn::Sequential block;
    block.add(make_conv(params_, name + ".conv1", width, width, 3, 1, 1, nn::Padding::kReflect));
    block.add(nn::InstanceNorm{});
    block.add(nn::ReLU{});
    block.add(make_conv(params_, name + ".conv2", width, width, 3, 1, 1, nn::Padding::kReflect));
    block.add(nn::InstanceNorm{});
    trunk_.push_back(std::move(block));
  }
  for (int i = config_.n_down - 1; i >= 0; --i) {
    const bool last = i == 0;
    const int out = last ? config_.out_channels : config_.width(i);
    decoder_.add(make_convt(params_, "dec." + std::to_string(config_.n_down - 1 - i), width, out));
    if (last) {
      decoder_.add(nn::Sigmoid{2.0});
    } else {
      decoder_.add(nn::InstanceNorm{});
      decoder_.add(nn::ReLU{});
    }
    width = out;
  }
}

template <std::floating_point T>
void Generator<T>::check_input(const Shape4& s) const {
  if (s.c != config_.in_channels) {
    throw ShapeError("generator: expected " + std::to_string(config_.in_channels) +
                     " input channels, got " + std::to_string(s.c) + " (shape " + s.str() + ")");
  }
  if (s.h % config_.scale() != 0 || s.w % config_.scale() != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("generator: input height and width must be positive multiples of " +
                     std::to_string(config_.scale()) + ", got " + std::to_string(s.h) + "x" +
                     std::to_string(s.w));
  }
}

template <std::floating_point T>
Shape4 Generator<T>::embedding_shape(const Shape4& input) const {
  check_input(input);
  return {input.n, config_.embedding_channels(), input.h / config_.scale(),
          input.w / config_.scale()};
}

template <std::floating_point T>
Tensor<T> Generator<T>::encode(const Tensor<T>& image, Trace* trace) const {
  check_input(image.shape());
  Tensor<T> x = encoder_.forward(params_, image, trace ? &trace->encoder : nullptr);
  if (trace) trace->trunk.resize(trunk_.size());
  for (std::size_t r = 0; r < trunk_.size(); ++r) {
    Tensor<T> branch = trunk_[r].forward(params_, x, trace ? &trace->trunk[r] : nullptr);
    x += branch;
  }
  return x;
}

template <std::floating_point T>
Tensor<T> Generator<T>::decode(const Tensor<T>& embedding, Trace* trace) const {
  const Shape4& s = embedding.shape();
  if (s.c != config_.embedding_channels()) {
    throw ShapeError("generator decode: expected embedding with " +
                     std::to_string(config_.embedding_channels()) + " channels, got " + s.str());
  }
  return decoder_.forward(params_, embedding, trace ? &trace->decoder : nullptr);
}

template <std::floating_point T>
typename Generator<T>::Output Generator<T>::forward(const Tensor<T>& image, Trace* trace) const {
  Output out;
  out.embedding = encode(image, trace);
  out.image = decode(out.embedding, trace);
  return out;
}

template <std::floating_point T>
Tensor<T> Generator<T>::backward(const Trace& trace, const Tensor<T>* grad_image,
                                 const Tensor<T>* grad_embedding, nn::Grads<T>* grads,
                                 bool need_input_grad) const {
  Tensor<T> g;
  if (grad_image) {
    g = decoder_.backward(params_, trace.decoder, *grad_image, grads, true);
    if (grad_embedding) g += *grad_embedding;
  } else if (grad_embedding) {
    g = *grad_embedding;
  } else {
    throw Error("generator backward needs at least one incoming gradient");
  }
  for (std::size_t r = trunk_.size(); r-- > 0;) {
    Tensor<T> branch = trunk_[r].backward(params_, trace.trunk.at(r), g, grads, true);
    g += branch;
  }
  return encoder_.backward(params_, trace.encoder, std::move(g), grads, need_input_grad);
}

template <std::floating_point T>
void Generator<T>::init(std::uint64_t seed) {
  gaussian_init(params_, seed);
}

template <std::floating_point T>
void Generator<T>::zero_residual_branches() {
  for (int i = 0; i < params_.size(); ++i) {
    const auto& name = params_.name(i);
    if (name.rfind("res.", 0) == 0 && name.find(".conv2.") != std::string::npos) {
      params_.value(i).fill(T(0));
    }
  }
}

// ---- Discriminator ----

template <std::floating_point T>
Discriminator<T>::Discriminator(DiscriminatorConfig config) : config_(config) {
  config_.validate();
  int width = config_.in_channels;
  for (int i = 0; i < config_.n_layers; ++i) {
    const int out = config_.base_width << std::min(i, 3);
    body_.add(make_conv(params_, "layer." + std::to_string(i), width, out, 4, 2, 1,
                        nn::Padding::kZero));
    if (i > 0) body_.add(nn::InstanceNorm{});
    body_.add(nn::LeakyReLU{0.2});
    width = out;
  }
  body_.add(make_conv(params_, "score", width, 1, 3, 1, 1, nn::Padding::kZero));
}

template <std::floating_point T>
Shape4 Discriminator<T>::score_shape(const Shape4& s) const {
  if (s.c != config_.in_channels) {
    throw ShapeError("discriminator: expected " + std::to_string(config_.in_channels) +
                     " input channels, got " + std::to_string(s.c));
  }
  if (s.h % config_.scale() != 0 || s.w % config_.scale() != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("discriminator: input height and width must be positive multiples of " +
                     std::to_string(config_.scale()) + ", got " + std::to_string(s.h) + "x" +
                     std::to_string(s.w));
  }
  return body_.output_shape(s);
}

template <std::floating_point T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& image, nn::Trace<T>* trace) const {
  (void)score_shape(image.shape());
  return body_.forward(params_, image, trace);
}

template <std::floating_point T>
Tensor<T> Discriminator<T>::backward(const nn::Trace<T>& trace, const Tensor<T>& grad_scores,
                                     nn::Grads<T>* grads, bool need_input_grad) const {
  return body_.backward(params_, trace, grad_scores, grads, need_input_grad);
}

template <std::floating_point T>
void Discriminator<T>::init(std::uint64_t seed) {
  gaussian_init(params_, seed);
}

// ---- StructureHead ----

template <std::floating_point T>
StructureHead<T>::StructureHead(int in_channels, int classes)
    : in_channels_(in_channels), classes_(classes) {
  require(in_channels > 0 && classes >= 2, "structure head needs channels > 0 and classes >= 2");
  body_.add(make_conv(params_, "conv", in_channels, classes, 1, 1, 0, nn::Padding::kZero));
}

template <std::floating_point T>
Tensor<T> StructureHead<T>::forward(const Tensor<T>& embedding, nn::Trace<T>* trace) const {
  if (embedding.c() != in_channels_) {
    throw ShapeError("structure head: expected embedding with " + std::to_string(in_channels_) +
                     " channels, got " + embedding.shape().str());
  }
  return body_.forward(params_, embedding, trace);
}

template <std::floating_point T>
Tensor<T> StructureHead<T>::backward(const nn::Trace<T>& trace, const Tensor<T>& grad_logits,
                                     nn::Grads<T>* grads, bool need_input_grad) const {
  return body_.backward(params_, trace, grad_logits, grads, need_input_grad);
}

template <std::floating_point T>
void StructureHead<T>::init(std::uint64_t seed) {
  gaussian_init(params_, seed);
}

// ---- CoronaryGan ----

template <std::floating_point T>
CoronaryGan<T>::CoronaryGan(const NetworkConfig& cfg)
    : config(cfg),
      g_oh(cfg.oct_to_hist()),
      g_ho(cfg.hist_to_oct()),
      d_h(DiscriminatorConfig{cfg.hist_channels, cfg.disc_base_width, cfg.disc_layers}),
      d_o(DiscriminatorConfig{cfg.oct_channels, cfg.disc_base_width, cfg.disc_layers}),
      s_oh(cfg.oct_to_hist().embedding_channels(), cfg.classes),
      s_ho(cfg.hist_to_oct().embedding_channels(), cfg.classes) {
  cfg.validate();
}

template <std::floating_point T>
void CoronaryGan<T>::init(std::uint64_t seed) {
  g_oh.init(derive_seed(seed, {1}));
  g_ho.init(derive_seed(seed, {2}));
  d_h.init(derive_seed(seed, {3}));
  d_o.init(derive_seed(seed, {4}));
  s_oh.init(derive_seed(seed, {5}));
  s_ho.init(derive_seed(seed, {6}));
}

template <std::floating_point T>
std::vector<typename CoronaryGan<T>::NamedParams> CoronaryGan<T>::networks() {
  return {{"g_oh", &g_oh.params()}, {"g_ho", &g_ho.params()}, {"d_h", &d_h.params()},
          {"d_o", &d_o.params()},   {"s_oh", &s_oh.params()}, {"s_ho", &s_ho.params()}};
}

template <std::floating_point T>
std::vector<std::pair<std::string, const nn::ParamStore<T>*>> CoronaryGan<T>::networks() const {
  return {{"g_oh", &g_oh.params()}, {"g_ho", &g_ho.params()}, {"d_h", &d_h.params()},
          {"d_o", &d_o.params()},   {"s_oh", &s_oh.params()}, {"s_ho", &s_ho.params()}};
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class StructureHead<float>;
template class StructureHead<double>;
template struct CoronaryGan<float>;
template struct CoronaryGan<double>;

}  // namespace coronagan::net
