#ifndef TARVIS_TESTS_GRADCHECK_HPP
#define TARVIS_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tarvis/autograd.hpp"
#include "tarvis/rng.hpp"

namespace tarvis::testing {

/// Central-difference check of d(f)/d(leaf) for a sample of coordinates in
/// each leaf. f must rebuild the graph from the leaves' current values and
/// return a scalar. Returns the worst relative error seen.
inline double gradcheck(const std::function<Var()>& f, const std::vector<Var>& leaves, Rng& rng,
                        int samples_per_leaf = 12, double eps = 1e-5) {
  for (auto& l : leaves) l->zero_grad();
  Var out = f();
  backward(out);

  double worst = 0.0;
  for (auto& leaf : leaves) {
    const Index n = leaf->value.size();
    const Index samples = std::min<Index>(n, samples_per_leaf);
    std::vector<Index> coords;
    if (samples == n) {
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (Index s = 0; s < samples; ++s) coords.push_back(rng.uniform_int(n));
    }
    for (Index i : coords) {
      const double x0 = leaf->value[i];
      double fp, fm;
      {
        NoGradGuard ng;
        leaf->value[i] = x0 + eps;
        fp = f()->value[0];
        leaf->value[i] = x0 - eps;
        fm = f()->value[0];
        leaf->value[i] = x0;
      }
      const double numeric = (fp - fm) / (2 * eps);
      const double analytic = leaf->has_grad() ? leaf->grad[i] : 0.0;
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1.0});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

inline Var randn_var(Shape shape, Rng& rng, double std = 1.0, bool requires_grad = true) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal() * std;
  return make_var<double>(std::move(t), requires_grad);
}

}  // namespace tarvis::testing

#endif
