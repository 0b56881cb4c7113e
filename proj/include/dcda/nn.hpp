#ifndef DCDA_NN_HPP
#define DCDA_NN_HPP

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dcda/ops.hpp"
#include "dcda/rng.hpp"

namespace dcda::nn {

template <typename Scalar>
using NamedParameters = std::vector<std::pair<std::string, Var<Scalar>>>;

/// Owns named parameters and child modules. A child registered under two
/// parents shares its parameter storage between them.
template <typename Scalar>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  [[nodiscard]] NamedParameters<Scalar> named_parameters(const std::string& prefix = "") const {
    NamedParameters<Scalar> out;
    collect(prefix, out);
    return out;
  }

  /// Freezes (false) or unfreezes (true) every parameter of this module.
  void set_trainable(bool on) const {
    for (auto& [name, p] : named_parameters()) {
      Var<Scalar> handle = p;
      handle.set_requires_grad(on);
    }
  }

  [[nodiscard]] std::vector<Var<Scalar>> parameters() const {
    std::vector<Var<Scalar>> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
  }

 protected:
  Var<Scalar> register_parameter(std::string name, Tensor<Scalar> init) {
    Var<Scalar> p(std::move(init), true);
    params_.emplace_back(std::move(name), p);
    return p;
  }

  template <typename M>
  std::shared_ptr<M> register_module(std::string name, std::shared_ptr<M> child) {
    children_.emplace_back(std::move(name), child);
    return child;
  }

 private:
  void collect(const std::string& prefix, NamedParameters<Scalar>& out) const {
    for (const auto& [name, p] : params_) out.emplace_back(prefix.empty() ? name : prefix + "." + name, p);
    for (const auto& [name, child] : children_) child->collect(prefix.empty() ? name : prefix + "." + name, out);
  }

  NamedParameters<Scalar> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
};

/// He-normal initialisation scaled by fan-in.
template <typename Scalar>
Tensor<Scalar> he_normal(Shape shape, Index fan_in, Rng& rng, double gain = std::sqrt(2.0)) {
  Tensor<Scalar> t(std::move(shape));
  const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  return t;
}

template <typename Scalar>
class Conv2d : public Module<Scalar> {
 public:
  Conv2d(Index in, Index out, Index kernel, Index stride, Index padding, Rng& rng, bool with_bias = true)
      : stride_(stride), padding_(padding) {
    weight_ = this->register_parameter("weight", he_normal<Scalar>(Shape{out, in, kernel, kernel}, in * kernel * kernel, rng));
    if (with_bias) bias_ = this->register_parameter("bias", Tensor<Scalar>(Shape{out}));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::conv2d(x, weight_, bias_, stride_, padding_); }

  [[nodiscard]] const Var<Scalar>& weight() const { return weight_; }

 private:
  Var<Scalar> weight_;
  Var<Scalar> bias_;
  Index stride_;
  Index padding_;
};

template <typename Scalar>
class Linear : public Module<Scalar> {
 public:
  Linear(Index in, Index out, Rng& rng, double gain = std::sqrt(2.0)) {
    weight_ = this->register_parameter("weight", he_normal<Scalar>(Shape{out, in}, in, rng, gain));
    bias_ = this->register_parameter("bias", Tensor<Scalar>(Shape{out}));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::linear(x, weight_, bias_); }

  Var<Scalar>& bias() { return bias_; }

 private:
  Var<Scalar> weight_;
  Var<Scalar> bias_;
};

/// Parameters of several modules with duplicates (shared storage) removed,
/// keeping the first name seen.
template <typename Scalar>
NamedParameters<Scalar> unique_parameters(const std::vector<NamedParameters<Scalar>>& groups) {
  NamedParameters<Scalar> out;
  std::unordered_set<const Node<Scalar>*> seen;
  for (const auto& group : groups) {
    for (const auto& [name, p] : group) {
      if (seen.insert(p.id()).second) out.emplace_back(name, p);
    }
  }
  return out;
}

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with L2 weight decay folded into the gradient.
template <typename Scalar>
class Adam {
 public:
  Adam(NamedParameters<Scalar> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& [name, p] : params_) {
      first_.emplace_back(Tensor<Scalar>::zeros_like(p.value()));
      second_.emplace_back(Tensor<Scalar>::zeros_like(p.value()));
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  /// True when every accumulated gradient is finite.
  [[nodiscard]] bool gradients_finite() const {
    for (const auto& [name, p] : params_) {
      if (p.has_grad() && !p.grad().all_finite()) return false;
    }
    return true;
  }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    const auto b1 = static_cast<Scalar>(options_.beta1);
    const auto b2 = static_cast<Scalar>(options_.beta2);
    const auto wd = static_cast<Scalar>(options_.weight_decay);
    const auto step_size = static_cast<Scalar>(options_.lr / c1);
    const auto eps = static_cast<Scalar>(options_.eps);
    const auto inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (!p.has_grad()) continue;
      auto& value = p.mutable_value().array();
      const auto g = (p.grad().array() + wd * value).eval();
      first_[i].array() = b1 * first_[i].array() + (Scalar(1) - b1) * g;
      second_[i].array() = b2 * second_[i].array() + (Scalar(1) - b2) * g.square();
      value -= step_size * first_[i].array() / (second_[i].array().sqrt() * inv_sqrt_c2 + eps);
    }
  }

  [[nodiscard]] const NamedParameters<Scalar>& params() const { return params_; }
  [[nodiscard]] long steps() const { return steps_; }
  AdamOptions& options() { return options_; }

  /// Moment buffers keyed "<param>.m" / "<param>.v", for checkpoints.
  [[nodiscard]] std::map<std::string, Tensor<Scalar>> state(const std::string& prefix) const {
    std::map<std::string, Tensor<Scalar>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out[prefix + params_[i].first + ".m"] = first_[i];
      out[prefix + params_[i].first + ".v"] = second_[i];
    }
    return out;
  }
  void load_state(const std::string& prefix, const std::map<std::string, Tensor<Scalar>>& state, long steps) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto m = state.find(prefix + params_[i].first + ".m");
      auto v = state.find(prefix + params_[i].first + ".v");
      if (m == state.end() || v == state.end()) throw StateError("optimizer state missing for " + params_[i].first);
      require_same_shape(m->second, first_[i], "optimizer state");
      first_[i] = m->second;
      second_[i] = v->second;
    }
    steps_ = steps;
  }

 private:
  NamedParameters<Scalar> params_;
  AdamOptions options_;
  std::vector<Tensor<Scalar>> first_;
  std::vector<Tensor<Scalar>> second_;
  long steps_ = 0;
};

}  // namespace dcda::nn

#endif  // DCDA_NN_HPP
