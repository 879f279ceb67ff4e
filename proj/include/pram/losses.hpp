#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/backbone.hpp"
#include "pram/mask_geometry.hpp"
#include "pram/ops.hpp"

namespace pram {

enum class ScaleMode {
  LossScale,     // s * CE(classifier(e))
  FeatureScale,  // CE(classifier(s * e / |e|))
};

inline ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "loss_scale") return ScaleMode::LossScale;
  if (s == "feature_scale") return ScaleMode::FeatureScale;
  throw std::invalid_argument("unknown scale mode '" + s + "' (loss_scale|feature_scale)");
}
inline std::string to_string(ScaleMode m) { return m == ScaleMode::LossScale ? "loss_scale" : "feature_scale"; }

struct LossConfig {
  double margin = 0.55;
  double softmax_scale = 24.0;
  ScaleMode scale_mode = ScaleMode::LossScale;

  void validate() const {
    if (!(margin > 0 && margin < 2)) throw std::invalid_argument("loss.margin must lie in (0,2)");
    if (!(softmax_scale > 0)) throw std::invalid_argument("loss.softmax_scale must be positive");
  }
};

/// Per-part IoU weights between anchor and positive masks.
using ComponentWeights = std::array<double, kNumParts>;

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("cosine_similarity: length mismatch");
  double dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (!(uu > 0) || !(vv > 0)) throw std::domain_error("cosine similarity of a zero-norm vector");
  return dot / (std::sqrt(uu) * std::sqrt(vv));
}

inline double cosine_similarity(std::span<const float> u, std::span<const float> v) {
  std::vector<double> a(u.begin(), u.end()), b(v.begin(), v.end());
  return cosine_similarity(std::span<const double>(a), std::span<const double>(b));
}

/// Ratio hinge [(S_n + 1) / (S_p + 1) - m]_+.
inline double conditional_triplet(double s_p, double s_n, double margin) {
  if (s_p <= -1.0) throw std::domain_error("conditional_triplet: anchor and positive are antipodal (S_p = -1)");
  return std::max(0.0, (s_n + 1.0) / (s_p + 1.0) - margin);
}

/// Batched hinge on [N] similarity tensors.
template <typename T>
Tensor<T> conditional_triplet(const Tensor<T>& s_p, const Tensor<T>& s_n, double margin) {
  for (T v : s_p.values())
    if (v <= T{-1}) throw std::domain_error("conditional_triplet: anchor and positive are antipodal (S_p = -1)");
  return hinge(add_scalar(div(add_scalar(s_n, T{1}), add_scalar(s_p, T{1})), static_cast<T>(-margin)));
}

inline ComponentWeights component_weights(std::span<const BinaryMask> anchor_masks,
                                          std::span<const BinaryMask> positive_masks) {
  if (anchor_masks.size() != kNumParts || positive_masks.size() != kNumParts)
    throw DimensionError("component_weights: five masks per sample required");
  ComponentWeights w{};
  for (std::size_t i = 0; i < kNumParts; ++i) w[i] = iou(anchor_masks[i], positive_masks[i]);
  return w;
}

/// Mean over the batch of sum_i lambda_i * L_C(x_i^a, x_i^p, x_i^n).
///
/// Feature sets hold B rows each; `lambdas[b]` weights triplet b. The weights
/// enter as constants, so no gradient reaches the masks. Components with a
/// zero weight contribute exactly nothing and are not evaluated, which keeps
/// zero features of empty crops out of the cosine.
template <typename T>
Tensor<T> component_adaptive_triplet(const PartFeatureSet<T>& anchor, const PartFeatureSet<T>& positive,
                                     const PartFeatureSet<T>& negative, std::span<const ComponentWeights> lambdas,
                                     double margin) {
  const std::size_t B = anchor.batch();
  if (positive.batch() != B || negative.batch() != B || lambdas.size() != B)
    throw DimensionError("component_adaptive_triplet: batch sizes differ");
  for (const auto& l : lambdas)
    for (double v : l)
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("component_adaptive_triplet: lambda outside [0,1]");
  Tensor<T> total;
  for (std::size_t i = 0; i < kNumParts; ++i) {
    std::vector<std::size_t> rows;
    std::vector<T> w;
    for (std::size_t b = 0; b < B; ++b)
      if (lambdas[b][i] > 0.0) {
        rows.push_back(b);
        w.push_back(static_cast<T>(lambdas[b][i]));
      }
    if (rows.empty()) continue;
    const Tensor<T> a = select_rows(anchor[i], rows);
    const Tensor<T> s_p = cosine_rows(a, select_rows(positive[i], rows));
    const Tensor<T> s_n = cosine_rows(a, select_rows(negative[i], rows));
    const std::size_t n = rows.size();
    Tensor<T> term = sum(mul(conditional_triplet(s_p, s_n, margin), Tensor<T>({n}, std::move(w))));
    total = total.defined() ? add(total, term) : term;
  }
  // All weights zero: a zero loss that is still attached to the graph.
  if (!total.defined()) return mul_scalar(sum(anchor[0]), T{0});
  return mul_scalar(total, static_cast<T>(1.0 / static_cast<double>(B)));
}

/// Single-triplet form: weights come from the anchor/positive masks.
template <typename T>
struct CatResult {
  Tensor<T> loss;
  ComponentWeights lambdas;
};

template <typename T>
CatResult<T> component_adaptive_triplet(const PartFeatureSet<T>& anchor, const PartFeatureSet<T>& positive,
                                        const PartFeatureSet<T>& negative, std::span<const BinaryMask> masks_a,
                                        std::span<const BinaryMask> masks_p, double margin) {
  if (anchor.batch() != 1) throw DimensionError("component_adaptive_triplet: mask form takes a single triplet");
  std::array<ComponentWeights, 1> lam{component_weights(masks_a, masks_p)};
  return {component_adaptive_triplet(anchor, positive, negative, std::span<const ComponentWeights>(lam), margin),
          lam[0]};
}

/// Softmax classification term, scaled per `mode`. `classifier` is [E, K].
template <typename T>
Tensor<T> scaled_softmax_loss(const Tensor<T>& embedding, const std::vector<std::size_t>& labels,
                              const Tensor<T>& classifier, double scale, ScaleMode mode) {
  if (embedding.rank() != 2) throw DimensionError("scaled_softmax_loss: embedding must be [N,E]");
  for (auto l : labels)
    if (l >= classifier.dim(1)) throw std::out_of_range("scaled_softmax_loss: label out of range");
  if (mode == ScaleMode::LossScale)
    return mul_scalar(cross_entropy(fully_connected(embedding, classifier), labels), static_cast<T>(scale));
  Tensor<T> normalized = mul_scalar(l2_normalize_rows(embedding), static_cast<T>(scale));
  return cross_entropy(fully_connected(normalized, classifier), labels);
}

/// Softmax term plus triplet term; the scale already lives in the softmax term.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& softmax_term, const Tensor<T>& cat_term) {
  return add(softmax_term, cat_term);
}

}  // namespace pram
