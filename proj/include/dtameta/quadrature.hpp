#pragma once

#include <vector>

namespace dtameta {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule on the unit interval [0, 1]. Rules are cached.
const QuadratureRule& gauss_legendre_unit(int n);

/// Gauss-Hermite rule for the weight exp(-x^2) on the real line. Rules are cached.
const QuadratureRule& gauss_hermite(int n);

}  // namespace dtameta
