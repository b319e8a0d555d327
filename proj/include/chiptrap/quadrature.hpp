#pragma once

#include <vector>

namespace chiptrap {

/// Gauss-Legendre rule on [-1, 1].
struct GaussLegendreRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Cached per n; safe to call concurrently.
const GaussLegendreRule& gauss_legendre(int n);

}  // namespace chiptrap
