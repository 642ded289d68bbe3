#pragma once

// Differentiable building blocks with explicit forward/backward passes.
//
// Layers are plain descriptors that refer to parameters by index into a
// ParamStore. A forward call can record a trace (one LayerCache per layer);
// backward consumes that trace, so the same network may be applied several
// times in one step with independent traces and accumulated gradients.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "coronagan/tensor.hpp"

namespace coronagan::nn {

enum class Padding { kZero, kReflect };

/// Named parameter tensors of one network.
template <std::floating_point T>
class ParamStore {
 public:
  int add(std::string name, Shape4 shape) {
    names_.push_back(std::move(name));
    values_.emplace_back(shape);
    return static_cast<int>(values_.size()) - 1;
  }

  [[nodiscard]] int size() const { return static_cast<int>(values_.size()); }
  [[nodiscard]] const std::string& name(int i) const { return names_.at(i); }
  [[nodiscard]] Tensor<T>& value(int i) { return values_.at(i); }
  [[nodiscard]] const Tensor<T>& value(int i) const { return values_.at(i); }
  [[nodiscard]] std::vector<Tensor<T>>& values() { return values_; }
  [[nodiscard]] const std::vector<Tensor<T>>& values() const { return values_; }

  /// Index of `name`, or -1.
  [[nodiscard]] int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i) {
      if (names_[i] == name) return i;
    }
    return -1;
  }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
};

/// Gradient accumulators shaped like a ParamStore.
template <std::floating_point T>
class Grads {
 public:
  Grads() = default;
  explicit Grads(const ParamStore<T>& params) {
    for (const auto& v : params.values()) grads_.emplace_back(v.shape());
  }
  void zero() {
    for (auto& g : grads_) g.fill(T(0));
  }
  [[nodiscard]] int size() const { return static_cast<int>(grads_.size()); }
  Tensor<T>& operator[](int i) { return grads_.at(i); }
  const Tensor<T>& operator[](int i) const { return grads_.at(i); }

 private:
  std::vector<Tensor<T>> grads_;
};

struct Conv2d {
  int weight = -1;  // [out, in, k, k]
  int bias = -1;    // [1, out, 1, 1]
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  Padding padding = Padding::kZero;
};

struct ConvTranspose2d {
  int weight = -1;  // [in, out, k, k]
  int bias = -1;    // [1, out, 1, 1]
  int in = 0;
  int out = 0;
  int kernel = 4;
  int stride = 2;
  int pad = 1;
};

/// Per-sample, per-channel normalization without affine parameters.
struct InstanceNorm {
  double eps = 1e-5;
};

struct ReLU {};

struct LeakyReLU {
  double slope = 0.2;
};

/// 1 / (1 + exp(-scale * x))
struct Sigmoid {
  double scale = 1.0;
};

using Layer = std::variant<Conv2d, ConvTranspose2d, InstanceNorm, ReLU, LeakyReLU, Sigmoid>;

template <std::floating_point T>
struct LayerCache {
  Shape4 in_shape;
  Shape4 padded_shape;
  Tensor<T> saved;
  std::vector<T> stats;
};

template <std::floating_point T>
using Trace = std::vector<LayerCache<T>>;

/// Output extents of a layer for a given input, validating channel counts.
Shape4 output_shape(const Layer& layer, const Shape4& in);

/// Ordered chain of layers.
class Sequential {
 public:
  void add(Layer layer) { layers_.push_back(std::move(layer)); }
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  [[nodiscard]] std::vector<Layer>& layers() { return layers_; }

  [[nodiscard]] Shape4 output_shape(Shape4 in) const;

  /// Runs the chain. When `trace` is non-null it is overwritten with the caches backward needs.
  template <std::floating_point T>
  Tensor<T> forward(const ParamStore<T>& params, Tensor<T> x, Trace<T>* trace) const;

  template <std::floating_point T>
  Tensor<T> forward(const ParamStore<T>& params, Tensor<T> x) const {
    return forward(params, std::move(x), static_cast<Trace<T>*>(nullptr));
  }

  /// Propagates `grad_out` back through a recorded trace. Parameter gradients are
  /// accumulated into `grads` unless it is null (frozen network). Returns the
  /// input gradient, or an empty tensor when `need_input_grad` is false.
  template <std::floating_point T>
  Tensor<T> backward(const ParamStore<T>& params, const Trace<T>& trace, Tensor<T> grad_out,
                     Grads<T>* grads, bool need_input_grad) const;

 private:
  std::vector<Layer> layers_;
};

// Individual primitives, exposed for tests and for the feature extractors.

template <std::floating_point T>
Tensor<T> reflect_pad(const Tensor<T>& x, int pad);

template <std::floating_point T>
Tensor<T> reflect_pad_backward(const Tensor<T>& grad_padded, int pad);

/// Zero-padded convolution of `x` with weight [out,in,k,k] and optional bias.
template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, int stride,
                 int pad);

template <std::floating_point T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride, int pad);

/// Bilinear resize with half-pixel centers (align_corners = false).
template <std::floating_point T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w);

/// Records sign patterns of kink points (ReLU inputs, L1 arguments) while alive.
/// Gradient checks use it to discard finite differences that straddle a kink.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  [[nodiscard]] std::uint64_t signature() const { return hash_; }
  void reset() { hash_ = 1469598103934665603ULL; }

  template <std::floating_point T>
  static void observe(std::span<const T> values);

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  KinkProbe* previous_ = nullptr;
};

}  // namespace coronagan::nn
