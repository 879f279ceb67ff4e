#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <utility>
#include <vector>

#include "pram/backbone.hpp"
#include "pram/ops.hpp"
#include "pram/optim.hpp"

namespace pram {

inline constexpr std::size_t kNumRelations = kNumParts * (kNumParts - 1) / 2;

/// Unordered part pairs (i < j) in lexicographic order.
inline constexpr std::array<std::pair<std::size_t, std::size_t>, kNumRelations> relation_pairs() {
  std::array<std::pair<std::size_t, std::size_t>, kNumRelations> pairs{};
  std::size_t r = 0;
  for (std::size_t i = 0; i < kNumParts; ++i)
    for (std::size_t j = i + 1; j < kNumParts; ++j) pairs[r++] = {i, j};
  return pairs;
}

/// Part relation attention: every unordered pair of part features goes through
/// one shared MFM-FC relation layer, and the ten relation vectors are fused by
/// a learnable weight per pair.
template <typename T>
class RelationAttention {
 public:
  RelationAttention(std::size_t head_dim, std::size_t embed_dim, ParameterStore<T>& store, std::mt19937_64& rng)
      : head_dim_(head_dim), embed_dim_(embed_dim) {
    const std::size_t in = 2 * head_dim, out = 2 * embed_dim;
    l2_weight_ = store.add("pram.l2.weight", {in, out}, gaussian<T>(in * out, kFeatureInitStd, rng));
    l2_bias_ = store.add("pram.l2.bias", {out}, std::vector<T>(out, T{0}));
    alpha_ = store.add("pram.alpha", {kNumRelations}, std::vector<T>(kNumRelations, T{1} / T{kNumRelations}));
  }

  std::size_t embed_dim() const { return embed_dim_; }
  const Tensor<T>& alpha() const { return alpha_; }

  /// concat(x_i, x_j), lower index first, for each pair in canonical order.
  std::vector<Tensor<T>> enumerate_pairs(const PartFeatureSet<T>& parts) const {
    std::vector<Tensor<T>> out;
    out.reserve(kNumRelations);
    for (auto [i, j] : relation_pairs()) out.push_back(concat_cols(parts[i], parts[j]));
    return out;
  }

  std::vector<Tensor<T>> relation_features(const std::vector<Tensor<T>>& pairs) const {
    if (pairs.size() != kNumRelations) throw DimensionError("relation_features: expected 10 pair vectors");
    std::vector<Tensor<T>> out;
    out.reserve(kNumRelations);
    for (const auto& p : pairs) {
      if (p.rank() != 2 || p.dim(1) != 2 * head_dim_)
        throw DimensionError("relation_features: pair width " + shape_str(p.shape()) + " != 2*head_dim");
      out.push_back(mfm(fully_connected(p, l2_weight_, l2_bias_)));
    }
    return out;
  }

  Tensor<T> fuse(const std::vector<Tensor<T>>& relations) const { return fuse(relations, alpha_); }

  /// sum_r weights[r] * relations[r]
  static Tensor<T> fuse(const std::vector<Tensor<T>>& relations, const Tensor<T>& weights) {
    return weighted_sum(relations, weights);
  }

  Tensor<T> forward(const PartFeatureSet<T>& parts) const { return fuse(relation_features(enumerate_pairs(parts))); }

 private:
  std::size_t head_dim_, embed_dim_;
  Tensor<T> l2_weight_, l2_bias_, alpha_;
};

/// Ablation stand-in when relation attention is disabled: the plain mean of
/// the five part features.
template <typename T>
Tensor<T> mean_part_features(const PartFeatureSet<T>& parts) {
  std::vector<Tensor<T>> terms(parts.features.begin(), parts.features.end());
  return weighted_sum(terms, Tensor<T>({kNumParts}, std::vector<T>(kNumParts, T{1} / T{kNumParts})));
}

}  // namespace pram
