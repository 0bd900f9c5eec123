#include "ntp/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include <Eigen/Dense>

#include "ntp/error.hpp"

namespace ntp {

const GaussRule& gauss_hermite(int order) {
  if (order < 1) throw Error(ErrorKind::InvalidArgument, "quadrature order must be positive");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GaussRule>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[order];
  if (slot) return *slot;

  // Jacobi matrix of the probabilists' Hermite recurrence.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) jac(k, k - 1) = jac(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jac);
  auto rule = std::make_unique<GaussRule>();
  for (int i = 0; i < order; ++i) {
    const double x = eig.eigenvalues()(i);
    // Christoffel weight 1 / sum_k p_k(x)^2 with running rescaling; the
    // eigenvector form loses all relative accuracy in the tails.
    double prev = 0.0, cur = 1.0, sum = 0.0, log_scale = 0.0;
    for (int k = 0; k < order; ++k) {
      sum += cur * cur;
      const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) /
                          std::sqrt(static_cast<double>(k + 1));
      prev = cur;
      cur = next;
      if (std::abs(cur) > 1e100) {
        prev *= 1e-100;
        cur *= 1e-100;
        sum *= 1e-200;
        log_scale += 200 * std::log(10.0);
      }
    }
    const double log_w = -(std::log(sum) + log_scale);
    rule->nodes.push_back(x);
    rule->weights.push_back(std::exp(log_w));
    rule->sqrt_weights.push_back(std::exp(0.5 * log_w));
  }
  slot = std::move(rule);
  return *slot;
}

double gaussian_expectation(const std::function<double(double)>& f, double q, int order) {
  if (q < 0.0) throw Error(ErrorKind::InvalidArgument, "variance must be non-negative");
  const GaussRule& rule = gauss_hermite(order);
  const double s = std::sqrt(q);
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * f(s * rule.nodes[i]);
  return acc;
}

double gaussian_expectation(const NonlinExpr& f, double q, int order) {
  if (f.arity() > 1 || f.param_arity() != 0)
    throw Error(ErrorKind::ArityMismatch, "expected a one-input function");
  return gaussian_expectation(
      [&](double x) {
        const double in[1] = {x};
        return f.eval(std::span<const double>(in, static_cast<std::size_t>(f.arity())), {});
      },
      q, order);
}

std::vector<double> hermite_coefficients(const NonlinExpr& f, int K, int order) {
  if (f.arity() > 1 || f.param_arity() != 0)
    throw Error(ErrorKind::ArityMismatch, "expected a one-input function");
  const GaussRule& rule = gauss_hermite(order);
  std::vector<double> a(static_cast<std::size_t>(K + 1), 0.0);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = rule.nodes[i];
    const double in[1] = {x};
    const double fw = rule.sqrt_weights[i] *
                      f.eval(std::span<const double>(in, static_cast<std::size_t>(f.arity())), {});
    // Hermite functions sqrt(w) h_k stay bounded where h_k alone overflows.
    double prev = 0.0;
    double cur = rule.sqrt_weights[i];
    for (int k = 0; k <= K; ++k) {
      a[static_cast<std::size_t>(k)] += fw * cur;
      const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) /
                          std::sqrt(static_cast<double>(k + 1));
      prev = cur;
      cur = next;
    }
  }
  return a;
}

HermitePair hermite_pair_expectation(const NonlinExpr& f, const NonlinExpr& g, double rho, int K,
                                     int order) {
  if (rho < -1.0 || rho > 1.0) throw Error(ErrorKind::InvalidArgument, "rho must lie in [-1, 1]");
  if (K < 0) throw Error(ErrorKind::InvalidArgument, "truncation must be non-negative");
  if (order <= 0) order = std::max(4 * K, 400);
  const auto a = hermite_coefficients(f, K, order);
  const auto b = hermite_coefficients(g, K, order);
  HermitePair out;
  double power = 1.0;
  for (int k = 0; k <= K; ++k) {
    out.value += a[static_cast<std::size_t>(k)] * b[static_cast<std::size_t>(k)] * power;
    power *= rho;
  }
  out.truncation_warning =
      std::abs(a[static_cast<std::size_t>(K)] * b[static_cast<std::size_t>(K)]) > 1e-8;
  return out;
}

}  // namespace ntp
