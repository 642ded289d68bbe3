#include "coronagan/losses.hpp"

#include <array>
#include <cmath>

#include "coronagan/nn.hpp"

namespace coronagan::loss {

void LossWeights::validate() const {
  if (!(alpha >= 0 && beta >= 0 && gamma >= 0)) {
    throw ValidationError("loss weights must be >= 0");
  }
}

LabelMap downsample_labels(const std::vector<SegmentationMask>& masks, int factor,
                           Downsample mode) {
  if (factor < 1) throw ValidationError("downsample factor must be >= 1");
  LabelMap out;
  out.n = static_cast<int>(masks.size());
  if (masks.empty()) return out;
  const int h = masks.front().height();
  const int w = masks.front().width();
  if (h % factor != 0 || w % factor != 0) {
    throw ShapeError("mask " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by " + std::to_string(factor));
  }
  out.h = h / factor;
  out.w = w / factor;
  out.labels.resize(static_cast<std::size_t>(out.n) * out.h * out.w);
  for (int b = 0; b < out.n; ++b) {
    const auto& m = masks[b];
    if (m.height() != h || m.width() != w) throw ShapeError("masks in a batch must share a size");
    for (int i = 0; i < out.h; ++i) {
      for (int j = 0; j < out.w; ++j) {
        std::uint8_t label = 0;
        if (mode == Downsample::kNearest) {
          label = m.at(i * factor + factor / 2, j * factor + factor / 2);
        } else {
          std::array<int, 256> counts{};
          for (int r = 0; r < factor; ++r) {
            for (int c = 0; c < factor; ++c) ++counts[m.at(i * factor + r, j * factor + c)];
          }
          int best = 0;
          for (int k = 1; k < 256; ++k) {
            if (counts[k] > counts[best]) best = k;
          }
          label = static_cast<std::uint8_t>(best);
        }
        out.labels[(static_cast<std::size_t>(b) * out.h + i) * out.w + j] = label;
      }
    }
  }
  return out;
}

template <std::floating_point T>
T adversarial_g(const Tensor<T>& s, Tensor<T>* grad) {
  const double n = static_cast<double>(s.size());
  double sum = 0;
  if (grad) *grad = Tensor<T>(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = static_cast<double>(s[i]) - 1.0;
    sum += d * d;
    if (grad) (*grad)[i] = static_cast<T>(2.0 * d / n);
  }
  return static_cast<T>(sum / n);
}

template <std::floating_point T>
T adversarial_d(const Tensor<T>& real, const Tensor<T>& fake, Tensor<T>* grad_real,
                Tensor<T>* grad_fake) {
  const double nr = static_cast<double>(real.size());
  const double nf = static_cast<double>(fake.size());
  double sr = 0;
  double sf = 0;
  if (grad_real) *grad_real = Tensor<T>(real.shape());
  if (grad_fake) *grad_fake = Tensor<T>(fake.shape());
  for (std::size_t i = 0; i < real.size(); ++i) {
    const double d = static_cast<double>(real[i]) - 1.0;
    sr += d * d;
    if (grad_real) (*grad_real)[i] = static_cast<T>(d / nr);
  }
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const double d = static_cast<double>(fake[i]);
    sf += d * d;
    if (grad_fake) (*grad_fake)[i] = static_cast<T>(d / nf);
  }
  return static_cast<T>(0.5 * sr / nr + 0.5 * sf / nf);
}

template <std::floating_point T>
T mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* grad_a, Tensor<T>* grad_b) {
  a.require_same(b, "mean_abs_diff");
  const double n = static_cast<double>(a.size());
  if (grad_a) *grad_a = Tensor<T>(a.shape());
  if (grad_b) *grad_b = Tensor<T>(b.shape());
  Tensor<T> diff(a.shape());
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    diff[i] = static_cast<T>(d);
    sum += std::abs(d);
    const double g = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n;
    if (grad_a) (*grad_a)[i] = static_cast<T>(g);
    if (grad_b) (*grad_b)[i] = static_cast<T>(-g);
  }
  nn::KinkProbe::observe<T>(diff.values());
  return static_cast<T>(sum / n);
}

template <std::floating_point T>
T cycle(const Tensor<T>& o, const Tensor<T>& rec_o, const Tensor<T>& h, const Tensor<T>& rec_h,
        Tensor<T>* grad_rec_o, Tensor<T>* grad_rec_h) {
  return mean_abs_diff(rec_o, o, grad_rec_o, static_cast<Tensor<T>*>(nullptr)) +
         mean_abs_diff(rec_h, h, grad_rec_h, static_cast<Tensor<T>*>(nullptr));
}

template <std::floating_point T>
T embedding(const Tensor<T>& from_fake_h, const Tensor<T>& used_for_h,
            const Tensor<T>& from_fake_o, const Tensor<T>& used_for_o, EmbeddingGrads<T>* grads) {
  if (!(from_fake_h.shape() == used_for_h.shape()) ||
      !(from_fake_o.shape() == used_for_o.shape())) {
    throw ShapeError("embedding loss: paired embeddings differ in shape (" +
                     from_fake_h.shape().str() + " vs " + used_for_h.shape().str() + ", " +
                     from_fake_o.shape().str() + " vs " + used_for_o.shape().str() + ")");
  }
  if (grads) {
    return mean_abs_diff(from_fake_h, used_for_h, &grads->from_fake_h, &grads->used_for_h) +
           mean_abs_diff(from_fake_o, used_for_o, &grads->from_fake_o, &grads->used_for_o);
  }
  return mean_abs_diff(from_fake_h, used_for_h) + mean_abs_diff(from_fake_o, used_for_o);
}

template <std::floating_point T>
T cross_entropy(const Tensor<T>& logits, const LabelMap& labels, Tensor<T>* grad) {
  const Shape4& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw ShapeError("cross_entropy: labels " + std::to_string(labels.n) + "x" +
                     std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                     " do not match logits " + s.str());
  }
  const double count = static_cast<double>(s.n) * s.h * s.w;
  if (grad) *grad = Tensor<T>(s);
  double total = 0;
  for (int b = 0; b < s.n; ++b) {
    for (int r = 0; r < s.h; ++r) {
      for (int q = 0; q < s.w; ++q) {
        const int y = labels.at(b, r, q);
        if (y >= s.c) {
          throw ValidationError("cross_entropy: label " + std::to_string(y) +
                                " out of range for " + std::to_string(s.c) + " classes");
        }
        double m = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < s.c; ++c) m = std::max(m, static_cast<double>(logits(b, c, r, q)));
        double z = 0;
        for (int c = 0; c < s.c; ++c) z += std::exp(logits(b, c, r, q) - m);
        const double lse = m + std::log(z);
        total += lse - logits(b, y, r, q);
        if (grad) {
          for (int c = 0; c < s.c; ++c) {
            const double p = std::exp(logits(b, c, r, q) - lse);
            (*grad)(b, c, r, q) = static_cast<T>((p - (c == y ? 1.0 : 0.0)) / count);
          }
        }
      }
    }
  }
  return static_cast<T>(total / count);
}

template <std::floating_point T>
T coronary(const Tensor<T>& logits_o, const LabelMap& labels_o, const Tensor<T>& logits_h,
           const LabelMap& labels_h, Tensor<T>* grad_o, Tensor<T>* grad_h) {
  return cross_entropy(logits_o, labels_o, grad_o) + cross_entropy(logits_h, labels_h, grad_h);
}

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const Shape4& s = logits.shape();
  Tensor<T> out(s);
  for (int b = 0; b < s.n; ++b) {
    for (int r = 0; r < s.h; ++r) {
      for (int q = 0; q < s.w; ++q) {
        double m = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < s.c; ++c) m = std::max(m, static_cast<double>(logits(b, c, r, q)));
        double z = 0;
        for (int c = 0; c < s.c; ++c) z += std::exp(logits(b, c, r, q) - m);
        for (int c = 0; c < s.c; ++c) {
          out(b, c, r, q) = static_cast<T>(std::exp(logits(b, c, r, q) - m) / z);
        }
      }
    }
  }
  return out;
}

LossBreakdown total_generator_loss(const LossParts& p, const LossWeights& w) {
  LossBreakdown out;
  out.adv_g_OH = p.adv_g_OH;
  out.adv_g_HO = p.adv_g_HO;
  out.adv_d_H = p.adv_d_H;
  out.adv_d_O = p.adv_d_O;
  out.cycle = p.cycle;
  out.embedding = p.embedding;
  out.coronary = p.coronary;
  out.total_g = p.adv_g_OH + p.adv_g_HO + w.alpha * p.cycle + w.beta * p.embedding +
                w.gamma * p.coronary;
  return out;
}

#define CORONAGAN_INSTANTIATE(T)                                                               \
  template T adversarial_g(const Tensor<T>&, Tensor<T>*);                                       \
  template T adversarial_d(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*);         \
  template T mean_abs_diff(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*);         \
  template T cycle(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                   Tensor<T>*, Tensor<T>*);                                                     \
  template T embedding(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                       EmbeddingGrads<T>*);                                                     \
  template T cross_entropy(const Tensor<T>&, const LabelMap&, Tensor<T>*);                      \
  template T coronary(const Tensor<T>&, const LabelMap&, const Tensor<T>&, const LabelMap&,     \
                      Tensor<T>*, Tensor<T>*);                                                  \
  template Tensor<T> softmax(const Tensor<T>&);

CORONAGAN_INSTANTIATE(float)
CORONAGAN_INSTANTIATE(double)

#undef CORONAGAN_INSTANTIATE

}  // namespace coronagan::loss
