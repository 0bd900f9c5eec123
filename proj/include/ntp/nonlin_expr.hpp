#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ntp {

/// Closed interval on the extended real line, used for static range bounds.
struct Interval {
  double lo;
  double hi;

  bool finite() const;
  double magnitude() const;  // max(|lo|, |hi|)
};

/// Coordinatewise nonlinearity as an immutable expression tree over input
/// slots x1..xk and parameter slots t1..tl.
///
/// The node set is closed (no division, no exp) so every expression is
/// polynomially bounded and evaluates to a finite real on finite inputs. A
/// static interval bound is computed at construction; the expression is
/// `bounded()` when that interval is finite.
class NonlinExpr {
 public:
  enum class Op {
    Const,
    Input,
    Param,
    Add,
    Sub,
    Mul,
    Neg,
    Pow,
    Abs,
    Max,
    Min,
    Clamp,
    Relu,
    Step,
    Tanh,
  };

  struct Node {
    Op op = Op::Const;
    double value = 0.0;  // Const
    int index = 0;       // Input/Param slot, or Pow exponent
    int lhs = -1;
    int rhs = -1;
    double lo = 0.0;  // Clamp bounds
    double hi = 0.0;
  };

  /// The constant zero.
  NonlinExpr();

  static NonlinExpr constant(double c);
  static NonlinExpr input(int slot);
  static NonlinExpr param(int slot);

  static NonlinExpr add(const NonlinExpr& a, const NonlinExpr& b);
  static NonlinExpr sub(const NonlinExpr& a, const NonlinExpr& b);
  static NonlinExpr mul(const NonlinExpr& a, const NonlinExpr& b);
  static NonlinExpr neg(const NonlinExpr& a);
  static NonlinExpr pow(const NonlinExpr& a, int exponent);
  static NonlinExpr abs(const NonlinExpr& a);
  static NonlinExpr max(const NonlinExpr& a, const NonlinExpr& b);
  static NonlinExpr min(const NonlinExpr& a, const NonlinExpr& b);
  static NonlinExpr clamp(const NonlinExpr& a, double lo, double hi);
  static NonlinExpr relu(const NonlinExpr& a);
  static NonlinExpr step(const NonlinExpr& a);
  static NonlinExpr tanh(const NonlinExpr& a);

  /// Widens the declared signature. Throws ArityMismatch if a referenced slot
  /// does not fit.
  NonlinExpr with_signature(int arity, int param_arity) const;

  /// Substitutes input slot i by `inputs[i]` and parameter slot j by
  /// `params[j]`; the result's signature is the max over the substitutes.
  NonlinExpr substitute(std::span<const NonlinExpr> inputs,
                        std::span<const NonlinExpr> params) const;

  int arity() const { return arity_; }
  int param_arity() const { return param_arity_; }
  const Interval& range() const { return range_; }
  bool bounded() const { return range_.finite(); }

  const std::vector<Node>& nodes() const { return *nodes_; }
  int root() const { return static_cast<int>(nodes_->size()) - 1; }

  double eval(std::span<const double> inputs, std::span<const double> params) const;

  /// Column-wise evaluation: out[r] = f(columns[0][r], ..., columns[k-1][r]).
  /// All columns and `out` must have the same length.
  void eval_columns(std::span<const std::span<const double>> columns,
                    std::span<const double> params, std::span<double> out) const;

  /// Canonical text using x1..xk / t1..tl slot names.
  std::string to_string() const;

  bool operator==(const NonlinExpr& other) const;

 private:
  explicit NonlinExpr(std::vector<Node> nodes);
  void finalize();

  std::shared_ptr<const std::vector<Node>> nodes_;
  int arity_ = 0;
  int param_arity_ = 0;
  Interval range_{0.0, 0.0};
};

bool operator==(const NonlinExpr::Node& a, const NonlinExpr::Node& b);

/// Common expressions.
namespace expr {
NonlinExpr identity();                   // x1
NonlinExpr square();                     // x1^2
NonlinExpr product();                    // x1 * x2
NonlinExpr sum();                        // x1 + x2
NonlinExpr relu();                       // relu(x1)
NonlinExpr step();                       // step(x1)
NonlinExpr tanh();                       // tanh(x1)
NonlinExpr tanh_derivative();            // 1 - tanh(x1)^2
}  // namespace expr

}  // namespace ntp
