#ifndef DCDA_TESTS_GRADCHECK_HPP
#define DCDA_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dcda/autograd.hpp"
#include "dcda/rng.hpp"

namespace dcda::testing {

/// Worst relative error between backward() gradients and central finite
/// differences of a scalar function of several double tensors.
inline double gradcheck(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                        std::vector<Tensor<double>> inputs, double step = 1e-6) {
  std::vector<Var<double>> vars;
  for (auto& t : inputs) vars.emplace_back(t, true);
  Var<double> out = f(vars);
  backward(out);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = vars[k].has_grad() ? vars[k].grad() : Tensor<double>::zeros_like(inputs[k]);
    for (Index i = 0; i < inputs[k].size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<Var<double>> shifted;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == k) t[i] += delta;
          shifted.emplace_back(t);
        }
        return f(shifted).item();
      };
      const double numeric = (probe(step) - probe(-step)) / (2 * step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return worst;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Weighted sum with fixed pseudo-random weights, so every output element
/// contributes a distinct gradient.
inline Var<double> probe_sum(const Var<double>& x, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor<double> w(x.shape());
  for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  const Var<double> weights(w);
  auto xn = x.node();
  Tensor<double> value(Shape{1}, (x.value().array() * w.array()).sum());
  return Var<double>::from_op(std::move(value), {x}, [xn, w](const Tensor<double>& g, const Tensor<double>&) {
    xn->accumulate(Tensor<double>(w.shape(), (w.array() * g[0]).eval()));
  });
}

}  // namespace dcda::testing

#endif  // DCDA_TESTS_GRADCHECK_HPP
