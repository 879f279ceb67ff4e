#pragma once

#include <optional>
#include <random>
#include <vector>

#include "pram/backbone.hpp"
#include "pram/losses.hpp"
#include "pram/pram.hpp"

namespace pram {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t embed_dim = 512;
  bool pram_on = true;
  std::size_t num_classes = 2;
};

/// Backbone + relation attention + softmax classifier, all registered in one
/// parameter store (trunk.*, head.{0..4}.*, pram.*, classifier.weight).
template <typename T>
class Model {
 public:
  struct Output {
    PartFeatureSet<T> parts;
    Tensor<T> embedding;
  };

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed), backbone_(cfg.backbone, store_, rng_) {
    if (cfg.embed_dim == 0) throw std::invalid_argument("embed_dim must be positive");
    if (cfg.num_classes < 2) throw std::invalid_argument("classifier needs at least 2 classes");
    if (cfg.pram_on) relation_.emplace(cfg.backbone.head_dim, cfg.embed_dim, store_, rng_);
    const std::size_t e = output_dim();
    classifier_ = store_.add("classifier.weight", {e, cfg.num_classes},
                             he_normal<T>(e * cfg.num_classes, e, rng_));
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const RelationAttention<T>* relation() const { return relation_ ? &*relation_ : nullptr; }
  const Tensor<T>& classifier() const { return classifier_; }

  /// Width of the identity embedding: embed_dim with relation attention,
  /// head_dim for the averaged-parts ablation.
  std::size_t output_dim() const { return cfg_.pram_on ? cfg_.embed_dim : cfg_.backbone.head_dim; }

  Tensor<T> embed(const PartFeatureSet<T>& parts) const {
    return relation_ ? relation_->forward(parts) : mean_part_features(parts);
  }

  Output forward(const BackboneInputs<T>& in) const {
    Output out;
    out.parts = backbone_.extract_part_features(in);
    out.embedding = embed(out.parts);
    return out;
  }

 private:
  ModelConfig cfg_;
  std::mt19937_64 rng_;
  ParameterStore<T> store_;
  Backbone<T> backbone_;
  std::optional<RelationAttention<T>> relation_;
  Tensor<T> classifier_;
};

}  // namespace pram
