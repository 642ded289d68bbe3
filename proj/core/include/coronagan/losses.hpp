#pragma once

// Loss terms of the joint objective:
//
//   total_g = adv_g_OH + adv_g_HO + alpha * cycle + beta * embedding + gamma * coronary
//
// Adversarial terms use the least-squares form. Every function optionally
// writes the gradient with respect to its tensor arguments.

#include <cstdint>
#include <vector>

#include "coronagan/image.hpp"
#include "coronagan/tensor.hpp"

namespace coronagan::loss {

struct LossWeights {
  double alpha = 10.0;  // cycle
  double beta = 5.0;    // embedding
  double gamma = 5.0;   // coronary

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossBreakdown {
  double adv_g_OH = 0;
  double adv_g_HO = 0;
  double adv_d_H = 0;
  double adv_d_O = 0;
  double cycle = 0;
  double embedding = 0;
  double coronary = 0;
  double total_g = 0;
};

/// Dense labels for a batch at some resolution, values < classes.
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> labels;

  [[nodiscard]] std::uint8_t at(int b, int r, int c) const {
    return labels[(static_cast<std::size_t>(b) * h + r) * w + c];
  }
};

enum class Downsample { kNearest, kMajority };

/// Reduces full-resolution masks by an integer factor. Nearest picks the pixel
/// at the centre of each factor x factor cell (row f*i + f/2); majority takes the
/// most frequent class in the cell, ties to the lower id.
[[nodiscard]] LabelMap downsample_labels(const std::vector<SegmentationMask>& masks, int factor,
                                         Downsample mode = Downsample::kNearest);

/// mean((s - 1)^2)
template <std::floating_point T>
T adversarial_g(const Tensor<T>& fake_scores, Tensor<T>* grad = nullptr);

/// 0.5 mean((real - 1)^2) + 0.5 mean(fake^2)
template <std::floating_point T>
T adversarial_d(const Tensor<T>& real_scores, const Tensor<T>& fake_scores,
                Tensor<T>* grad_real = nullptr, Tensor<T>* grad_fake = nullptr);

/// mean |a - b|. Subgradient 0 where a == b.
template <std::floating_point T>
T mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* grad_a = nullptr,
                Tensor<T>* grad_b = nullptr);

/// mean|rec_o - o| + mean|rec_h - h|; gradients w.r.t. the reconstructions.
template <std::floating_point T>
T cycle(const Tensor<T>& o, const Tensor<T>& rec_o, const Tensor<T>& h, const Tensor<T>& rec_h,
        Tensor<T>* grad_rec_o = nullptr, Tensor<T>* grad_rec_h = nullptr);

/// Embedding consistency: the reverse generator's encoding of each fake image
/// must match the embedding the forward generator decoded it from.
///   mean|enc_HO(fake_h) - emb_OH(o)| + mean|enc_OH(fake_o) - emb_HO(h)|
template <std::floating_point T>
struct EmbeddingGrads {
  Tensor<T> from_fake_h;
  Tensor<T> used_for_h;
  Tensor<T> from_fake_o;
  Tensor<T> used_for_o;
};

template <std::floating_point T>
T embedding(const Tensor<T>& emb_from_fake_h, const Tensor<T>& emb_used_for_h,
            const Tensor<T>& emb_from_fake_o, const Tensor<T>& emb_used_for_o,
            EmbeddingGrads<T>* grads = nullptr);

/// Mean over all pixels of -log softmax(logits)[label], via log-sum-exp.
/// Throws ValidationError for labels >= channel count.
template <std::floating_point T>
T cross_entropy(const Tensor<T>& logits, const LabelMap& labels, Tensor<T>* grad = nullptr);

/// Matched-domain pairing: OCT labels supervise the head on the OCT->histology
/// embedding, histology labels the head on the histology->OCT embedding.
template <std::floating_point T>
T coronary(const Tensor<T>& logits_o, const LabelMap& labels_o, const Tensor<T>& logits_h,
           const LabelMap& labels_h, Tensor<T>* grad_o = nullptr, Tensor<T>* grad_h = nullptr);

/// Per-pixel softmax over the channel axis.
template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& logits);

struct LossParts {
  double adv_g_OH = 0;
  double adv_g_HO = 0;
  double cycle = 0;
  double embedding = 0;
  double coronary = 0;
  double adv_d_H = 0;
  double adv_d_O = 0;
};

[[nodiscard]] LossBreakdown total_generator_loss(const LossParts& parts,
                                                 const LossWeights& weights);

}  // namespace coronagan::loss
