#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "afford/rng.hpp"
#include "afford/tensor.hpp"

namespace afford::testutil {

// Central finite differences of a scalar function of a flat float vector.
template <class Fn>
std::vector<double> fd_grad(Fn&& f, std::vector<float> x, double h = 1e-3) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    x[i] = static_cast<float>(orig + h);
    const double fp = f(x);
    x[i] = static_cast<float>(orig - h);
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

template <class Fn>
double max_rel_err(Fn&& f, const std::vector<float>& x, const std::vector<float>& analytic,
                   double h = 1e-3) {
  const auto fd = fd_grad(f, x, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, rel_err(analytic[i], fd[i]));
  return worst;
}

inline std::vector<float> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

inline Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  auto n = static_cast<std::size_t>(Tensor::count(shape));
  return Tensor(std::move(shape), random_values(rng, n, lo, hi));
}

}  // namespace afford::testutil
