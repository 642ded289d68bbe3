#include "coronagan/nn.hpp"

#include <cmath>
#include <cstring>

#include "blas.hpp"

namespace coronagan::nn {
namespace {

thread_local KinkProbe* g_active_probe = nullptr;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

int conv_out(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

// cols layout: row (c*k + ki)*k + kj, column n*P + oh*wo + ow.
template <class T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, int ho, int wo, T* cols) {
  const int n_batch = x.n();
  const int channels = x.c();
  const int h = x.h();
  const int w = x.w();
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  const std::size_t np = p * n_batch;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * np;
        for (int n = 0; n < n_batch; ++n) {
          const T* src = x.plane(n, c);
          T* dst = row + n * p;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride - pad + ki;
            T* d = dst + static_cast<std::size_t>(oh) * wo;
            if (ih < 0 || ih >= h) {
              std::memset(d, 0, sizeof(T) * wo);
              continue;
            }
            const T* s = src + static_cast<std::size_t>(ih) * w;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride - pad + kj;
              d[ow] = (iw >= 0 && iw < w) ? s[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, int k, int stride, int pad, int ho, int wo, Tensor<T>& x) {
  const int n_batch = x.n();
  const int channels = x.c();
  const int h = x.h();
  const int w = x.w();
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  const std::size_t np = p * n_batch;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * np;
        for (int n = 0; n < n_batch; ++n) {
          T* dst = x.plane(n, c);
          const T* src = row + n * p;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            const T* s = src + static_cast<std::size_t>(oh) * wo;
            T* d = dst + static_cast<std::size_t>(ih) * w;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < w) d[iw] += s[ow];
            }
          }
        }
      }
    }
  }
}

// NCHW -> [C, N*H*W]
template <class T>
std::vector<T> to_channel_major(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  const std::size_t p = x.shape().plane();
  for (int c = 0; c < x.c(); ++c) {
    for (int n = 0; n < x.n(); ++n) {
      std::memcpy(out.data() + (static_cast<std::size_t>(c) * x.n() + n) * p, x.plane(n, c),
                  sizeof(T) * p);
    }
  }
  return out;
}

template <class T>
void from_channel_major(const T* src, Tensor<T>& x) {
  const std::size_t p = x.shape().plane();
  for (int c = 0; c < x.c(); ++c) {
    for (int n = 0; n < x.n(); ++n) {
      std::memcpy(x.plane(n, c), src + (static_cast<std::size_t>(c) * x.n() + n) * p,
                  sizeof(T) * p);
    }
  }
}

template <class T>
void add_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const std::size_t p = y.shape().plane();
  for (int n = 0; n < y.n(); ++n) {
    for (int c = 0; c < y.c(); ++c) {
      const T b = bias[c];
      T* d = y.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) d[i] += b;
    }
  }
}

template <class T>
void accumulate_bias_grad(const Tensor<T>& gy, Tensor<T>& gb) {
  const std::size_t p = gy.shape().plane();
  for (int n = 0; n < gy.n(); ++n) {
    for (int c = 0; c < gy.c(); ++c) {
      const T* g = gy.plane(n, c);
      T s = 0;
      for (std::size_t i = 0; i < p; ++i) s += g[i];
      gb[c] += s;
    }
  }
}

int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

void check_channels(int actual, int expected, const char* layer) {
  if (actual != expected) {
    throw ShapeError(std::string(layer) + ": expected " + std::to_string(expected) +
                     " input channels, got " + std::to_string(actual));
  }
}

// ---- Conv2d ----

template <class T>
Tensor<T> conv_forward(const Conv2d& L, const ParamStore<T>& params, const Tensor<T>& x,
                       LayerCache<T>* cache) {
  check_channels(x.c(), L.in, "conv2d");
  const bool reflect = L.padding == Padding::kReflect && L.pad > 0;
  Tensor<T> padded;
  if (reflect) padded = reflect_pad(x, L.pad);
  const Tensor<T>& src = reflect ? padded : x;
  const int zp = reflect ? 0 : L.pad;
  const int ho = conv_out(src.h(), L.kernel, L.stride, zp);
  const int wo = conv_out(src.w(), L.kernel, L.stride, zp);
  if (ho <= 0 || wo <= 0) {
    throw ShapeError("conv2d: input " + x.shape().str() + " too small for kernel " +
                     std::to_string(L.kernel));
  }
  const int kdim = L.in * L.kernel * L.kernel;
  const int cols_n = x.n() * ho * wo;
  Tensor<T> cols(1, 1, kdim, cols_n);
  im2col(src, L.kernel, L.stride, zp, ho, wo, cols.data());
  std::vector<T> ymat(static_cast<std::size_t>(L.out) * cols_n);
  detail::gemm(false, false, L.out, cols_n, kdim, T(1), params.value(L.weight).data(), kdim,
               cols.data(), cols_n, T(0), ymat.data(), cols_n);
  Tensor<T> y(x.n(), L.out, ho, wo);
  from_channel_major(ymat.data(), y);
  if (L.bias >= 0) add_bias(y, params.value(L.bias));
  if (cache) {
    cache->in_shape = x.shape();
    cache->padded_shape = src.shape();
    cache->saved = std::move(cols);
  }
  return y;
}

template <class T>
Tensor<T> conv_backward(const Conv2d& L, const ParamStore<T>& params, const LayerCache<T>& cache,
                        const Tensor<T>& gy, Grads<T>* grads, bool need_input_grad) {
  const int kdim = L.in * L.kernel * L.kernel;
  const int cols_n = gy.n() * gy.h() * gy.w();
  const std::vector<T> gmat = to_channel_major(gy);
  if (grads) {
    detail::gemm(false, true, L.out, kdim, cols_n, T(1), gmat.data(), cols_n, cache.saved.data(),
                 cols_n, T(1), (*grads)[L.weight].data(), kdim);
    if (L.bias >= 0) accumulate_bias_grad(gy, (*grads)[L.bias]);
  }
  if (!need_input_grad) return {};
  Tensor<T> gcols(1, 1, kdim, cols_n);
  detail::gemm(true, false, kdim, cols_n, L.out, T(1), params.value(L.weight).data(), kdim,
               gmat.data(), cols_n, T(0), gcols.data(), cols_n);
  const bool reflect = L.padding == Padding::kReflect && L.pad > 0;
  Tensor<T> gpadded(cache.padded_shape);
  col2im(gcols.data(), L.kernel, L.stride, reflect ? 0 : L.pad, gy.h(), gy.w(), gpadded);
  if (reflect) return reflect_pad_backward(gpadded, L.pad);
  return gpadded;
}

// ---- ConvTranspose2d ----

template <class T>
Tensor<T> convt_forward(const ConvTranspose2d& L, const ParamStore<T>& params, const Tensor<T>& x,
                        LayerCache<T>* cache) {
  check_channels(x.c(), L.in, "conv_transpose2d");
  const int ho = (x.h() - 1) * L.stride - 2 * L.pad + L.kernel;
  const int wo = (x.w() - 1) * L.stride - 2 * L.pad + L.kernel;
  const int kdim = L.out * L.kernel * L.kernel;
  const int cols_n = x.n() * x.h() * x.w();
  std::vector<T> xmat = to_channel_major(x);
  std::vector<T> cols(static_cast<std::size_t>(kdim) * cols_n);
  detail::gemm(true, false, kdim, cols_n, L.in, T(1), params.value(L.weight).data(), kdim,
               xmat.data(), cols_n, T(0), cols.data(), cols_n);
  Tensor<T> y(x.n(), L.out, ho, wo);
  col2im(cols.data(), L.kernel, L.stride, L.pad, x.h(), x.w(), y);
  if (L.bias >= 0) add_bias(y, params.value(L.bias));
  if (cache) {
    cache->in_shape = x.shape();
    cache->saved = Tensor<T>(1, 1, L.in, cols_n);
    std::memcpy(cache->saved.data(), xmat.data(), sizeof(T) * xmat.size());
  }
  return y;
}

template <class T>
Tensor<T> convt_backward(const ConvTranspose2d& L, const ParamStore<T>& params,
                         const LayerCache<T>& cache, const Tensor<T>& gy, Grads<T>* grads,
                         bool need_input_grad) {
  const Shape4& in = cache.in_shape;
  const int kdim = L.out * L.kernel * L.kernel;
  const int cols_n = in.n * in.h * in.w;
  std::vector<T> gcols(static_cast<std::size_t>(kdim) * cols_n);
  im2col(gy, L.kernel, L.stride, L.pad, in.h, in.w, gcols.data());
  if (grads) {
    detail::gemm(false, true, L.in, kdim, cols_n, T(1), cache.saved.data(), cols_n, gcols.data(),
                 cols_n, T(1), (*grads)[L.weight].data(), kdim);
    if (L.bias >= 0) accumulate_bias_grad(gy, (*grads)[L.bias]);
  }
  if (!need_input_grad) return {};
  std::vector<T> gxmat(static_cast<std::size_t>(L.in) * cols_n);
  detail::gemm(false, false, L.in, cols_n, kdim, T(1), params.value(L.weight).data(), kdim,
               gcols.data(), cols_n, T(0), gxmat.data(), cols_n);
  Tensor<T> gx(in);
  from_channel_major(gxmat.data(), gx);
  return gx;
}

// ---- InstanceNorm ----

template <class T>
Tensor<T> in_forward(const InstanceNorm& L, const Tensor<T>& x, LayerCache<T>* cache) {
  Tensor<T> y(x.shape());
  const std::size_t p = x.shape().plane();
  std::vector<T> inv_std(static_cast<std::size_t>(x.n()) * x.c());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* s = x.plane(n, c);
      double mean = 0;
      for (std::size_t i = 0; i < p; ++i) mean += s[i];
      mean /= static_cast<double>(p);
      double var = 0;
      for (std::size_t i = 0; i < p; ++i) {
        const double d = s[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(p);
      const double inv = 1.0 / std::sqrt(var + L.eps);
      T* d = y.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) d[i] = static_cast<T>((s[i] - mean) * inv);
      inv_std[static_cast<std::size_t>(n) * x.c() + c] = static_cast<T>(inv);
    }
  }
  if (cache) {
    cache->in_shape = x.shape();
    cache->saved = y;
    cache->stats = std::move(inv_std);
  }
  return y;
}

template <class T>
Tensor<T> in_backward(const LayerCache<T>& cache, const Tensor<T>& gy) {
  const Tensor<T>& xhat = cache.saved;
  Tensor<T> gx(gy.shape());
  const std::size_t p = gy.shape().plane();
  for (int n = 0; n < gy.n(); ++n) {
    for (int c = 0; c < gy.c(); ++c) {
      const T* g = gy.plane(n, c);
      const T* xh = xhat.plane(n, c);
      double mean_g = 0;
      double mean_gx = 0;
      for (std::size_t i = 0; i < p; ++i) {
        mean_g += g[i];
        mean_gx += static_cast<double>(g[i]) * xh[i];
      }
      mean_g /= static_cast<double>(p);
      mean_gx /= static_cast<double>(p);
      const double inv = cache.stats[static_cast<std::size_t>(n) * gy.c() + c];
      T* d = gx.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) {
        d[i] = static_cast<T>(inv * (g[i] - mean_g - xh[i] * mean_gx));
      }
    }
  }
  return gx;
}

}  // namespace

// ---- public primitives ----

template <std::floating_point T>
Tensor<T> reflect_pad(const Tensor<T>& x, int pad) {
  if (pad >= x.h() || pad >= x.w()) {
    throw ShapeError("reflect_pad: pad " + std::to_string(pad) + " too large for " +
                     x.shape().str());
  }
  Tensor<T> y(x.n(), x.c(), x.h() + 2 * pad, x.w() + 2 * pad);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* s = x.plane(n, c);
      T* d = y.plane(n, c);
      for (int i = 0; i < y.h(); ++i) {
        const int si = reflect_index(i - pad, x.h());
        for (int j = 0; j < y.w(); ++j) {
          d[static_cast<std::size_t>(i) * y.w() + j] =
              s[static_cast<std::size_t>(si) * x.w() + reflect_index(j - pad, x.w())];
        }
      }
    }
  }
  return y;
}

template <std::floating_point T>
Tensor<T> reflect_pad_backward(const Tensor<T>& gp, int pad) {
  Tensor<T> gx(gp.n(), gp.c(), gp.h() - 2 * pad, gp.w() - 2 * pad);
  for (int n = 0; n < gp.n(); ++n) {
    for (int c = 0; c < gp.c(); ++c) {
      const T* s = gp.plane(n, c);
      T* d = gx.plane(n, c);
      for (int i = 0; i < gp.h(); ++i) {
        const int di = reflect_index(i - pad, gx.h());
        for (int j = 0; j < gp.w(); ++j) {
          d[static_cast<std::size_t>(di) * gx.w() + reflect_index(j - pad, gx.w())] +=
              s[static_cast<std::size_t>(i) * gp.w() + j];
        }
      }
    }
  }
  return gx;
}

template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, int stride,
                 int pad) {
  ParamStore<T> params;
  Conv2d L;
  L.in = weight.c();
  L.out = weight.n();
  L.kernel = weight.h();
  L.stride = stride;
  L.pad = pad;
  L.weight = params.add("w", weight.shape());
  params.value(L.weight) = weight;
  if (bias) {
    L.bias = params.add("b", bias->shape());
    params.value(L.bias) = *bias;
  }
  return conv_forward(L, params, x, static_cast<LayerCache<T>*>(nullptr));
}

template <std::floating_point T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride, int pad) {
  const int ho = conv_out(x.h(), kernel, stride, pad);
  const int wo = conv_out(x.w(), kernel, stride, pad);
  Tensor<T> y(x.n(), x.c(), ho, wo);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* s = x.plane(n, c);
      T* d = y.plane(n, c);
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          for (int ki = 0; ki < kernel; ++ki) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= x.h()) continue;
            for (int kj = 0; kj < kernel; ++kj) {
              const int iw = ow * stride - pad + kj;
              if (iw < 0 || iw >= x.w()) continue;
              best = std::max(best, s[static_cast<std::size_t>(ih) * x.w() + iw]);
            }
          }
          d[static_cast<std::size_t>(oh) * wo + ow] = best;
        }
      }
    }
  }
  return y;
}

template <std::floating_point T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  Tensor<T> y(x.n(), x.c(), out_h, out_w);
  const double sy = static_cast<double>(x.h()) / out_h;
  const double sx = static_cast<double>(x.w()) / out_w;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* s = x.plane(n, c);
      T* d = y.plane(n, c);
      for (int i = 0; i < out_h; ++i) {
        const double fy = std::max(0.0, (i + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), x.h() - 1);
        const int y1 = std::min(y0 + 1, x.h() - 1);
        const double wy = fy - y0;
        for (int j = 0; j < out_w; ++j) {
          const double fx = std::max(0.0, (j + 0.5) * sx - 0.5);
          const int x0 = std::min(static_cast<int>(fx), x.w() - 1);
          const int x1 = std::min(x0 + 1, x.w() - 1);
          const double wx = fx - x0;
          const auto at = [&](int r, int q) {
            return static_cast<double>(s[static_cast<std::size_t>(r) * x.w() + q]);
          };
          const double top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx;
          const double bottom = at(y1, x0) * (1 - wx) + at(y1, x1) * wx;
          d[static_cast<std::size_t>(i) * out_w + j] = static_cast<T>(top * (1 - wy) + bottom * wy);
        }
      }
    }
  }
  return y;
}

Shape4 output_shape(const Layer& layer, const Shape4& in) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& L) {
            check_channels(in.c, L.in, "conv2d");
            return Shape4{in.n, L.out, conv_out(in.h, L.kernel, L.stride, L.pad),
                          conv_out(in.w, L.kernel, L.stride, L.pad)};
          },
          [&](const ConvTranspose2d& L) {
            check_channels(in.c, L.in, "conv_transpose2d");
            return Shape4{in.n, L.out, (in.h - 1) * L.stride - 2 * L.pad + L.kernel,
                          (in.w - 1) * L.stride - 2 * L.pad + L.kernel};
          },
          [&](const auto&) { return in; },
      },
      layer);
}

Shape4 Sequential::output_shape(Shape4 in) const {
  for (const auto& layer : layers_) in = nn::output_shape(layer, in);
  return in;
}

template <std::floating_point T>
Tensor<T> Sequential::forward(const ParamStore<T>& params, Tensor<T> x, Trace<T>* trace) const {
  if (trace) {
    trace->clear();
    trace->resize(layers_.size());
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerCache<T>* cache = trace ? &(*trace)[i] : nullptr;
    x = std::visit(
        Overloaded{
            [&](const Conv2d& L) { return conv_forward(L, params, x, cache); },
            [&](const ConvTranspose2d& L) { return convt_forward(L, params, x, cache); },
            [&](const InstanceNorm& L) { return in_forward(L, x, cache); },
            [&](const ReLU&) {
              KinkProbe::observe<T>(x.values());
              Tensor<T> y = x;
              for (auto& v : y.values()) v = v > T(0) ? v : T(0);
              if (cache) cache->saved = std::move(x);
              return y;
            },
            [&](const LeakyReLU& L) {
              KinkProbe::observe<T>(x.values());
              Tensor<T> y = x;
              const T slope = static_cast<T>(L.slope);
              for (auto& v : y.values()) v = v > T(0) ? v : slope * v;
              if (cache) cache->saved = std::move(x);
              return y;
            },
            [&](const Sigmoid& L) {
              const T scale = static_cast<T>(L.scale);
              Tensor<T> y = std::move(x);
              for (auto& v : y.values()) v = T(1) / (T(1) + std::exp(-scale * v));
              if (cache) cache->saved = y;
              return y;
            },
        },
        layers_[i]);
  }
  return x;
}

template <std::floating_point T>
Tensor<T> Sequential::backward(const ParamStore<T>& params, const Trace<T>& trace, Tensor<T> g,
                               Grads<T>* grads, bool need_input_grad) const {
  if (trace.size() != layers_.size()) {
    throw Error("Sequential::backward: trace does not match network");
  }
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const LayerCache<T>& cache = trace[k];
    const bool need = need_input_grad || k > 0;
    g = std::visit(
        Overloaded{
            [&](const Conv2d& L) { return conv_backward(L, params, cache, g, grads, need); },
            [&](const ConvTranspose2d& L) {
              return convt_backward(L, params, cache, g, grads, need);
            },
            [&](const InstanceNorm&) { return in_backward(cache, g); },
            [&](const ReLU&) {
              const T* x = cache.saved.data();
              for (std::size_t i = 0; i < g.size(); ++i) {
                if (!(x[i] > T(0))) g[i] = T(0);
              }
              return std::move(g);
            },
            [&](const LeakyReLU& L) {
              const T* x = cache.saved.data();
              const T slope = static_cast<T>(L.slope);
              for (std::size_t i = 0; i < g.size(); ++i) {
                if (!(x[i] > T(0))) g[i] *= slope;
              }
              return std::move(g);
            },
            [&](const Sigmoid& L) {
              const T scale = static_cast<T>(L.scale);
              const T* y = cache.saved.data();
              for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale * y[i] * (T(1) - y[i]);
              return std::move(g);
            },
        },
        layers_[k]);
  }
  if (!need_input_grad) return {};
  return g;
}

KinkProbe::KinkProbe() : previous_(g_active_probe) { g_active_probe = this; }
KinkProbe::~KinkProbe() { g_active_probe = previous_; }

template <std::floating_point T>
void KinkProbe::observe(std::span<const T> values) {
  KinkProbe* probe = g_active_probe;
  if (!probe) return;
  std::uint64_t h = probe->hash_;
  for (T v : values) {
    h ^= v > T(0) ? 0x9dU : 0x3bU;
    h *= 1099511628211ULL;
  }
  probe->hash_ = h;
}

#define CORONAGAN_INSTANTIATE(T)                                                               \
  template Tensor<T> reflect_pad(const Tensor<T>&, int);                                        \
  template Tensor<T> reflect_pad_backward(const Tensor<T>&, int);                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int);    \
  template Tensor<T> max_pool2d(const Tensor<T>&, int, int, int);                               \
  template Tensor<T> resize_bilinear(const Tensor<T>&, int, int);                               \
  template Tensor<T> Sequential::forward(const ParamStore<T>&, Tensor<T>, Trace<T>*) const;     \
  template Tensor<T> Sequential::backward(const ParamStore<T>&, const Trace<T>&, Tensor<T>,     \
                                          Grads<T>*, bool) const;                               \
  template void KinkProbe::observe<T>(std::span<const T>);

CORONAGAN_INSTANTIATE(float)
CORONAGAN_INSTANTIATE(double)

#undef CORONAGAN_INSTANTIATE

}  // namespace coronagan::nn
