#pragma once

// Generators, patch discriminators and coronary structure heads.
//
// Generator: encoder of n_down stride-2 3x3 convolutions (reflection padded,
// instance norm, ReLU) with widths min(base*2^(i+1), max_width), a trunk of
// residual blocks at the embedding width, and a decoder of n_down stride-2
// transposed convolutions ending in sigmoid(2x), i.e. (tanh(x) + 1) / 2. The
// post-trunk tensor is the embedding; it feeds both the decoder and the
// structure head.
//
// Discriminator: n_layers stride-2 4x4 convolutions (zero padded, leaky ReLU,
// instance norm after the first) and a 3x3 single-channel score convolution.

#include <cstdint>
#include <string>
#include <vector>

#include <algorithm>

#include "coronagan/nn.hpp"

namespace coronagan::net {

struct GeneratorConfig {
  int in_channels = 1;
  int out_channels = 3;
  int base_width = 64;
  int n_resblocks = 5;
  int n_down = 3;
  int max_width = 256;  // channel cap for the deeper encoder levels and the trunk

  void validate() const;
  /// Channels after `level` downsamplings (level 0 is the decoder's last hidden width).
  [[nodiscard]] int width(int level) const { return std::min(base_width << level, max_width); }
  [[nodiscard]] int embedding_channels() const { return width(n_down); }
  [[nodiscard]] int scale() const { return 1 << n_down; }
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct DiscriminatorConfig {
  int in_channels = 3;
  int base_width = 64;
  int n_layers = 4;

  void validate() const;
  [[nodiscard]] int scale() const { return 1 << n_layers; }
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

/// Weight init: zero-mean Gaussian with this std, biases zero.
inline constexpr double kInitStd = 0.02;

template <std::floating_point T>
class Generator {
 public:
  struct Trace {
    nn::Trace<T> encoder;
    std::vector<nn::Trace<T>> trunk;
    nn::Trace<T> decoder;
  };
  struct Output {
    Tensor<T> image;
    Tensor<T> embedding;
  };

  explicit Generator(GeneratorConfig config);

  [[nodiscard]] const GeneratorConfig& config() const { return config_; }
  [[nodiscard]] nn::ParamStore<T>& params() { return params_; }
  [[nodiscard]] const nn::ParamStore<T>& params() const { return params_; }

  [[nodiscard]] Shape4 embedding_shape(const Shape4& input) const;

  /// Encoder followed by the residual trunk.
  Tensor<T> encode(const Tensor<T>& image, Trace* trace = nullptr) const;
  Tensor<T> decode(const Tensor<T>& embedding, Trace* trace = nullptr) const;
  Output forward(const Tensor<T>& image, Trace* trace = nullptr) const;

  /// Backward through a trace from forward(). Either incoming gradient may be
  /// null. Returns the image gradient when `need_input_grad` is set.
  Tensor<T> backward(const Trace& trace, const Tensor<T>* grad_image,
                     const Tensor<T>* grad_embedding, nn::Grads<T>* grads,
                     bool need_input_grad) const;

  void init(std::uint64_t seed);
  /// Zeroes the last convolution of every residual block, turning the trunk into
  /// an identity map.
  void zero_residual_branches();

 private:
  void check_input(const Shape4& s) const;

  GeneratorConfig config_;
  nn::ParamStore<T> params_;
  nn::Sequential encoder_;
  std::vector<nn::Sequential> trunk_;
  nn::Sequential decoder_;
};

template <std::floating_point T>
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config);

  [[nodiscard]] const DiscriminatorConfig& config() const { return config_; }
  [[nodiscard]] nn::ParamStore<T>& params() { return params_; }
  [[nodiscard]] const nn::ParamStore<T>& params() const { return params_; }
  [[nodiscard]] Shape4 score_shape(const Shape4& input) const;

  /// Grid of realness scores, [N, 1, h/2^L, w/2^L].
  Tensor<T> forward(const Tensor<T>& image, nn::Trace<T>* trace = nullptr) const;
  Tensor<T> backward(const nn::Trace<T>& trace, const Tensor<T>& grad_scores, nn::Grads<T>* grads,
                     bool need_input_grad) const;

  void init(std::uint64_t seed);

 private:
  DiscriminatorConfig config_;
  nn::ParamStore<T> params_;
  nn::Sequential body_;
};

/// Stride-1 1x1 convolution mapping an embedding to per-pixel class logits.
template <std::floating_point T>
class StructureHead {
 public:
  StructureHead(int in_channels, int classes);

  [[nodiscard]] int classes() const { return classes_; }
  [[nodiscard]] nn::ParamStore<T>& params() { return params_; }
  [[nodiscard]] const nn::ParamStore<T>& params() const { return params_; }

  Tensor<T> forward(const Tensor<T>& embedding, nn::Trace<T>* trace = nullptr) const;
  Tensor<T> backward(const nn::Trace<T>& trace, const Tensor<T>& grad_logits, nn::Grads<T>* grads,
                     bool need_input_grad) const;

  void init(std::uint64_t seed);

 private:
  int in_channels_;
  int classes_;
  nn::ParamStore<T> params_;
  nn::Sequential body_;
};

struct NetworkConfig {
  int oct_channels = 1;
  int hist_channels = 3;
  int base_width = 64;
  int n_resblocks = 5;
  int n_down = 3;
  int disc_base_width = 64;
  int disc_layers = 4;
  int classes = 3;
  int gen_max_width = 256;

  [[nodiscard]] GeneratorConfig oct_to_hist() const {
    return {oct_channels, hist_channels, base_width, n_resblocks, n_down, gen_max_width};
  }
  [[nodiscard]] GeneratorConfig hist_to_oct() const {
    return {hist_channels, oct_channels, base_width, n_resblocks, n_down, gen_max_width};
  }
  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// The six networks trained jointly.
template <std::floating_point T>
struct CoronaryGan {
  explicit CoronaryGan(const NetworkConfig& config);

  NetworkConfig config;
  Generator<T> g_oh;  // OCT -> histology
  Generator<T> g_ho;  // histology -> OCT
  Discriminator<T> d_h;
  Discriminator<T> d_o;
  StructureHead<T> s_oh;  // head on the OCT->histology generator's embedding
  StructureHead<T> s_ho;

  void init(std::uint64_t seed);

  struct NamedParams {
    std::string name;
    nn::ParamStore<T>* params;
  };
  /// Fixed order: g_oh, g_ho, d_h, d_o, s_oh, s_ho.
  std::vector<NamedParams> networks();
  [[nodiscard]] std::vector<std::pair<std::string, const nn::ParamStore<T>*>> networks() const;
};

}  // namespace coronagan::net
