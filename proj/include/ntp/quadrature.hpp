#pragma once

#include <functional>
#include <vector>

#include "ntp/nonlin_expr.hpp"

namespace ntp {

/// Gauss-Hermite rule for the standard normal weight:
/// E f(xi) ~= sum_i weights[i] * f(nodes[i]).
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> sqrt_weights;
};

/// Golub-Welsch nodes, Christoffel weights; rules are cached per order.
const GaussRule& gauss_hermite(int order);

/// E f(sqrt(q) xi), xi ~ N(0, 1).
double gaussian_expectation(const std::function<double(double)>& f, double q, int order = 200);
double gaussian_expectation(const NonlinExpr& f, double q, int order = 200);

/// Normalized Hermite coefficients a_k = E[f(xi) He_k(xi)] / sqrt(k!), k = 0..K.
std::vector<double> hermite_coefficients(const NonlinExpr& f, int K, int order);

struct HermitePair {
  double value = 0.0;
  bool truncation_warning = false;  // |a_K b_K| > 1e-8
};

/// E f(X) g(Y) for standard normals with correlation rho, as
/// sum_{k<=K} a_k b_k rho^k. Quadrature order defaults to max(4K, 400).
HermitePair hermite_pair_expectation(const NonlinExpr& f, const NonlinExpr& g, double rho,
                                     int K, int order = 0);

}  // namespace ntp
