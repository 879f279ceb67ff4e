#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pram/tensor.hpp"

namespace pram {

/// A named trainable tensor. Frozen parameters still take part in the graph
/// but are never touched by the optimizer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool frozen = false;
};

/// Ordered, name-unique collection of parameters. Iteration order is
/// registration order, which fixes checkpoint layout and update order.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values) {
    for (const auto& p : params_)
      if (p->name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    auto param = std::make_shared<Parameter<T>>();
    param->name = name;
    param->tensor = Tensor<T>(std::move(shape), std::move(values), true);
    params_.push_back(param);
    return param->tensor;
  }

  Parameter<T>& get(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return *p;
    throw std::out_of_range("no parameter named " + name);
  }
  const Parameter<T>& get(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->get(name);
  }
  bool contains(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return true;
    return false;
  }

  std::vector<std::shared_ptr<Parameter<T>>>& all() { return params_; }
  const std::vector<std::shared_ptr<Parameter<T>>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p->tensor.zero_grad();
  }

  /// Freezes every parameter whose name starts with `prefix`.
  void freeze_prefix(const std::string& prefix, bool frozen = true) {
    for (auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) p->frozen = frozen;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->tensor.size();
    return n;
  }

 private:
  std::vector<std::shared_ptr<Parameter<T>>> params_;
};

/// Plain SGD with L2 weight decay folded into the gradient:
/// w <- w - lr * (grad + weight_decay * w). Gradients are left in place.
template <typename T>
void sgd_step(std::vector<std::shared_ptr<Parameter<T>>>& params, double lr, double weight_decay) {
  if (!(lr > 0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (weight_decay < 0) throw std::invalid_argument("sgd_step: weight decay must be non-negative");
  for (auto& p : params) {
    if (p->frozen) continue;
    if (!p->tensor.has_grad()) throw std::logic_error("sgd_step: parameter " + p->name + " has no gradient");
  }
  const T rate = static_cast<T>(lr), decay = static_cast<T>(weight_decay);
  for (auto& p : params) {
    if (p->frozen) continue;
    auto& w = p->tensor.values();
    const auto& g = p->tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= rate * (g[i] + decay * w[i]);
  }
}

template <typename T>
void sgd_step(ParameterStore<T>& store, double lr, double weight_decay) {
  sgd_step(store.all(), lr, weight_decay);
}

/// He-normal initial values for a layer with the given fan-in.
template <typename T>
std::vector<T> he_normal(std::size_t count, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> v(count);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

/// Zero-mean Gaussian with a fixed standard deviation.
template <typename T>
std::vector<T> gaussian(std::size_t count, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(count);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

/// Standard deviation for fully-connected feature layers (part heads and the
/// relation layer). Conv stages and the classifier use He scaling.
inline constexpr double kFeatureInitStd = 0.01;

}  // namespace pram
