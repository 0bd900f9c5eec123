#include "ntp/nonlin_expr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "ntp/error.hpp"

namespace ntp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double mul_ext(double a, double b) {
  // 0 * inf = 0 gives the correct endpoint products for interval multiplication.
  if (a == 0.0 || b == 0.0) return 0.0;
  return a * b;
}

double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

double step_fn(double x) { return x > 0.0 ? 1.0 : 0.0; }

using Op = NonlinExpr::Op;
using Node = NonlinExpr::Node;

Interval node_range(const Node& n, const std::vector<Interval>& r) {
  auto a = [&] { return r[n.lhs]; };
  auto b = [&] { return r[n.rhs]; };
  switch (n.op) {
    case Op::Const:
      return {n.value, n.value};
    case Op::Input:
    case Op::Param:
      return {-kInf, kInf};
    case Op::Add:
      return {a().lo + b().lo, a().hi + b().hi};
    case Op::Sub:
      return {a().lo - b().hi, a().hi - b().lo};
    case Op::Mul: {
      const Interval x = a(), y = b();
      const double c[4] = {mul_ext(x.lo, y.lo), mul_ext(x.lo, y.hi), mul_ext(x.hi, y.lo),
                           mul_ext(x.hi, y.hi)};
      return {*std::min_element(c, c + 4), *std::max_element(c, c + 4)};
    }
    case Op::Neg:
      return {-a().hi, -a().lo};
    case Op::Pow: {
      const Interval x = a();
      const int p = n.index;
      if (p == 0) return {1.0, 1.0};
      if (p % 2 == 1) return {ipow(x.lo, p), ipow(x.hi, p)};
      if (x.lo >= 0.0) return {ipow(x.lo, p), ipow(x.hi, p)};
      if (x.hi <= 0.0) return {ipow(x.hi, p), ipow(x.lo, p)};
      return {0.0, ipow(std::max(-x.lo, x.hi), p)};
    }
    case Op::Abs: {
      const Interval x = a();
      if (x.lo >= 0.0) return x;
      if (x.hi <= 0.0) return {-x.hi, -x.lo};
      return {0.0, std::max(-x.lo, x.hi)};
    }
    case Op::Max:
      return {std::max(a().lo, b().lo), std::max(a().hi, b().hi)};
    case Op::Min:
      return {std::min(a().lo, b().lo), std::min(a().hi, b().hi)};
    case Op::Clamp:
      return {std::clamp(a().lo, n.lo, n.hi), std::clamp(a().hi, n.lo, n.hi)};
    case Op::Relu:
      return {std::max(a().lo, 0.0), std::max(a().hi, 0.0)};
    case Op::Step:
      return {step_fn(a().lo), step_fn(a().hi)};
    case Op::Tanh:
      return {std::tanh(a().lo), std::tanh(a().hi)};
  }
  return {-kInf, kInf};
}

// Appends `src` to `dst`, shifting child indices; returns the new root index.
int append_tree(std::vector<Node>& dst, const std::vector<Node>& src) {
  const int offset = static_cast<int>(dst.size());
  for (Node n : src) {
    if (n.lhs >= 0) n.lhs += offset;
    if (n.rhs >= 0) n.rhs += offset;
    dst.push_back(n);
  }
  return static_cast<int>(dst.size()) - 1;
}

int precedence(const Node& n) {
  switch (n.op) {
    case Op::Add:
    case Op::Sub:
      return 1;
    case Op::Mul:
      return 2;
    case Op::Neg:
      return 3;
    case Op::Pow:
      return 4;
    case Op::Const:
      return n.value < 0.0 ? 3 : 5;
    default:
      return 5;
  }
}

std::string format_number(double v) { return fmt::format("{}", v); }

std::string print_node(const std::vector<Node>& nodes, int i) {
  const Node& n = nodes[i];
  auto child = [&](int c, bool paren) {
    std::string s = print_node(nodes, c);
    return paren ? "(" + s + ")" : s;
  };
  const int p = precedence(n);
  switch (n.op) {
    case Op::Const:
      return format_number(n.value);
    case Op::Input:
      return fmt::format("x{}", n.index + 1);
    case Op::Param:
      return fmt::format("t{}", n.index + 1);
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const char* sym = n.op == Op::Add ? " + " : (n.op == Op::Sub ? " - " : " * ");
      return child(n.lhs, precedence(nodes[n.lhs]) < p) + sym +
             child(n.rhs, precedence(nodes[n.rhs]) <= p);
    }
    case Op::Neg:
      return "-" + child(n.lhs, precedence(nodes[n.lhs]) <= p);
    case Op::Pow:
      return child(n.lhs, precedence(nodes[n.lhs]) <= p) + fmt::format("^{}", n.index);
    case Op::Abs:
      return "abs(" + print_node(nodes, n.lhs) + ")";
    case Op::Relu:
      return "relu(" + print_node(nodes, n.lhs) + ")";
    case Op::Step:
      return "step(" + print_node(nodes, n.lhs) + ")";
    case Op::Tanh:
      return "tanh(" + print_node(nodes, n.lhs) + ")";
    case Op::Max:
      return "max(" + print_node(nodes, n.lhs) + ", " + print_node(nodes, n.rhs) + ")";
    case Op::Min:
      return "min(" + print_node(nodes, n.lhs) + ", " + print_node(nodes, n.rhs) + ")";
    case Op::Clamp:
      return "clamp(" + print_node(nodes, n.lhs) + ", " + format_number(n.lo) + ", " +
             format_number(n.hi) + ")";
  }
  return {};
}

}  // namespace

bool Interval::finite() const { return std::isfinite(lo) && std::isfinite(hi); }

double Interval::magnitude() const { return std::max(std::abs(lo), std::abs(hi)); }

bool operator==(const NonlinExpr::Node& a, const NonlinExpr::Node& b) {
  return a.op == b.op && a.value == b.value && a.index == b.index && a.lhs == b.lhs &&
         a.rhs == b.rhs && a.lo == b.lo && a.hi == b.hi;
}

NonlinExpr::NonlinExpr() : NonlinExpr(std::vector<Node>{Node{}}) {}

NonlinExpr::NonlinExpr(std::vector<Node> nodes)
    : nodes_(std::make_shared<const std::vector<Node>>(std::move(nodes))) {
  finalize();
}

void NonlinExpr::finalize() {
  const auto& nodes = *nodes_;
  std::vector<Interval> ranges;
  ranges.reserve(nodes.size());
  arity_ = 0;
  param_arity_ = 0;
  for (const Node& n : nodes) {
    if (n.op == Op::Input) arity_ = std::max(arity_, n.index + 1);
    if (n.op == Op::Param) param_arity_ = std::max(param_arity_, n.index + 1);
    ranges.push_back(node_range(n, ranges));
  }
  range_ = ranges.back();
}

NonlinExpr NonlinExpr::constant(double c) {
  if (!std::isfinite(c)) throw Error(ErrorKind::InvalidArgument, "non-finite constant");
  Node n;
  n.op = Op::Const;
  n.value = c;
  return NonlinExpr(std::vector<Node>{n});
}

NonlinExpr NonlinExpr::input(int slot) {
  if (slot < 0) throw Error(ErrorKind::ArityMismatch, "negative input slot");
  Node n;
  n.op = Op::Input;
  n.index = slot;
  return NonlinExpr(std::vector<Node>{n});
}

NonlinExpr NonlinExpr::param(int slot) {
  if (slot < 0) throw Error(ErrorKind::ArityMismatch, "negative parameter slot");
  Node n;
  n.op = Op::Param;
  n.index = slot;
  return NonlinExpr(std::vector<Node>{n});
}

namespace {

NonlinExpr::Node unary_node(Op op, int child) {
  NonlinExpr::Node n;
  n.op = op;
  n.lhs = child;
  return n;
}

}  // namespace

#define NTP_BINARY(NAME, OP)                                                   \
  NonlinExpr NonlinExpr::NAME(const NonlinExpr& a, const NonlinExpr& b) {      \
    std::vector<Node> nodes;                                                   \
    nodes.reserve(a.nodes().size() + b.nodes().size() + 1);                    \
    const int l = append_tree(nodes, a.nodes());                               \
    const int r = append_tree(nodes, b.nodes());                               \
    Node n;                                                                    \
    n.op = OP;                                                                 \
    n.lhs = l;                                                                 \
    n.rhs = r;                                                                 \
    nodes.push_back(n);                                                        \
    NonlinExpr e(std::move(nodes));                                            \
    e.arity_ = std::max({e.arity_, a.arity_, b.arity_});                       \
    e.param_arity_ = std::max({e.param_arity_, a.param_arity_, b.param_arity_}); \
    return e;                                                                  \
  }

NTP_BINARY(add, Op::Add)
NTP_BINARY(sub, Op::Sub)
NTP_BINARY(mul, Op::Mul)
NTP_BINARY(max, Op::Max)
NTP_BINARY(min, Op::Min)

#undef NTP_BINARY

#define NTP_UNARY(NAME, OP)                                \
  NonlinExpr NonlinExpr::NAME(const NonlinExpr& a) {       \
    std::vector<Node> nodes = a.nodes();                   \
    nodes.push_back(unary_node(OP, a.root()));             \
    NonlinExpr e(std::move(nodes));                        \
    e.arity_ = std::max(e.arity_, a.arity_);               \
    e.param_arity_ = std::max(e.param_arity_, a.param_arity_); \
    return e;                                              \
  }

NTP_UNARY(abs, Op::Abs)
NTP_UNARY(relu, Op::Relu)
NTP_UNARY(step, Op::Step)
NTP_UNARY(tanh, Op::Tanh)

#undef NTP_UNARY

NonlinExpr NonlinExpr::neg(const NonlinExpr& a) {
  const Node& r = a.nodes().back();
  if (r.op == Op::Const && a.nodes().size() == 1) {
    NonlinExpr e = constant(-r.value);
    e.arity_ = a.arity_;
    e.param_arity_ = a.param_arity_;
    return e;
  }
  std::vector<Node> nodes = a.nodes();
  nodes.push_back(unary_node(Op::Neg, a.root()));
  NonlinExpr e(std::move(nodes));
  e.arity_ = std::max(e.arity_, a.arity_);
  e.param_arity_ = std::max(e.param_arity_, a.param_arity_);
  return e;
}

NonlinExpr NonlinExpr::pow(const NonlinExpr& a, int exponent) {
  if (exponent < 0) throw Error(ErrorKind::InvalidArgument, "negative exponent");
  std::vector<Node> nodes = a.nodes();
  Node n = unary_node(Op::Pow, a.root());
  n.index = exponent;
  nodes.push_back(n);
  NonlinExpr e(std::move(nodes));
  e.arity_ = std::max(e.arity_, a.arity_);
  e.param_arity_ = std::max(e.param_arity_, a.param_arity_);
  return e;
}

NonlinExpr NonlinExpr::clamp(const NonlinExpr& a, double lo, double hi) {
  if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
    throw Error(ErrorKind::InvalidArgument, "clamp requires finite lo <= hi");
  std::vector<Node> nodes = a.nodes();
  Node n = unary_node(Op::Clamp, a.root());
  n.lo = lo;
  n.hi = hi;
  nodes.push_back(n);
  NonlinExpr e(std::move(nodes));
  e.arity_ = std::max(e.arity_, a.arity_);
  e.param_arity_ = std::max(e.param_arity_, a.param_arity_);
  return e;
}

NonlinExpr NonlinExpr::with_signature(int arity, int param_arity) const {
  int used_in = 0, used_par = 0;
  for (const Node& n : nodes()) {
    if (n.op == Op::Input) used_in = std::max(used_in, n.index + 1);
    if (n.op == Op::Param) used_par = std::max(used_par, n.index + 1);
  }
  if (used_in > arity || used_par > param_arity)
    throw Error(ErrorKind::ArityMismatch,
                fmt::format("expression references {} inputs / {} parameters, signature has {} / {}",
                            used_in, used_par, arity, param_arity));
  NonlinExpr e = *this;
  e.arity_ = arity;
  e.param_arity_ = param_arity;
  return e;
}

NonlinExpr NonlinExpr::substitute(std::span<const NonlinExpr> inputs,
                                  std::span<const NonlinExpr> params) const {
  if (static_cast<int>(inputs.size()) < arity_ || static_cast<int>(params.size()) < param_arity_)
    throw Error(ErrorKind::ArityMismatch, "substitution does not cover the expression signature");
  const auto& src = nodes();
  std::vector<NonlinExpr> built(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Node& n = src[i];
    switch (n.op) {
      case Op::Const: built[i] = constant(n.value); break;
      case Op::Input: built[i] = inputs[n.index]; break;
      case Op::Param: built[i] = params[n.index]; break;
      case Op::Add: built[i] = add(built[n.lhs], built[n.rhs]); break;
      case Op::Sub: built[i] = sub(built[n.lhs], built[n.rhs]); break;
      case Op::Mul: built[i] = mul(built[n.lhs], built[n.rhs]); break;
      case Op::Max: built[i] = max(built[n.lhs], built[n.rhs]); break;
      case Op::Min: built[i] = min(built[n.lhs], built[n.rhs]); break;
      case Op::Neg: built[i] = neg(built[n.lhs]); break;
      case Op::Pow: built[i] = pow(built[n.lhs], n.index); break;
      case Op::Abs: built[i] = abs(built[n.lhs]); break;
      case Op::Clamp: built[i] = clamp(built[n.lhs], n.lo, n.hi); break;
      case Op::Relu: built[i] = relu(built[n.lhs]); break;
      case Op::Step: built[i] = step(built[n.lhs]); break;
      case Op::Tanh: built[i] = tanh(built[n.lhs]); break;
    }
  }
  int ar = 0, par = 0;
  for (const auto& e : inputs) ar = std::max(ar, e.arity());
  for (const auto& e : params) par = std::max(par, e.param_arity());
  for (const auto& e : inputs) par = std::max(par, e.param_arity());
  for (const auto& e : params) ar = std::max(ar, e.arity());
  return built.back().with_signature(std::max(ar, built.back().arity()),
                                     std::max(par, built.back().param_arity()));
}

double NonlinExpr::eval(std::span<const double> inputs, std::span<const double> params) const {
  if (static_cast<int>(inputs.size()) != arity_ || static_cast<int>(params.size()) != param_arity_)
    throw Error(ErrorKind::ArityMismatch,
                fmt::format("expression expects {} inputs and {} parameters, got {} and {}", arity_,
                            param_arity_, inputs.size(), params.size()));
  const auto& ns = nodes();
  double stack_buf[64];
  std::vector<double> heap_buf;
  double* v = stack_buf;
  if (ns.size() > 64) {
    heap_buf.resize(ns.size());
    v = heap_buf.data();
  }
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const Node& n = ns[i];
    switch (n.op) {
      case Op::Const: v[i] = n.value; break;
      case Op::Input: v[i] = inputs[n.index]; break;
      case Op::Param: v[i] = params[n.index]; break;
      case Op::Add: v[i] = v[n.lhs] + v[n.rhs]; break;
      case Op::Sub: v[i] = v[n.lhs] - v[n.rhs]; break;
      case Op::Mul: v[i] = v[n.lhs] * v[n.rhs]; break;
      case Op::Neg: v[i] = -v[n.lhs]; break;
      case Op::Pow: v[i] = ipow(v[n.lhs], n.index); break;
      case Op::Abs: v[i] = std::abs(v[n.lhs]); break;
      case Op::Max: v[i] = std::max(v[n.lhs], v[n.rhs]); break;
      case Op::Min: v[i] = std::min(v[n.lhs], v[n.rhs]); break;
      case Op::Clamp: v[i] = std::clamp(v[n.lhs], n.lo, n.hi); break;
      case Op::Relu: v[i] = std::max(v[n.lhs], 0.0); break;
      case Op::Step: v[i] = step_fn(v[n.lhs]); break;
      case Op::Tanh: v[i] = std::tanh(v[n.lhs]); break;
    }
  }
  return v[ns.size() - 1];
}

void NonlinExpr::eval_columns(std::span<const std::span<const double>> columns,
                              std::span<const double> params, std::span<double> out) const {
  if (static_cast<int>(columns.size()) != arity_ || static_cast<int>(params.size()) != param_arity_)
    throw Error(ErrorKind::ArityMismatch,
                fmt::format("expression expects {} inputs and {} parameters, got {} and {}", arity_,
                            param_arity_, columns.size(), params.size()));
  for (const auto& c : columns)
    if (c.size() != out.size())
      throw Error(ErrorKind::ShapeMismatch, "column length mismatch in coordinatewise evaluation");

  constexpr std::size_t kChunk = 1024;
  const auto& ns = nodes();
  const std::size_t total = out.size();
  std::vector<double> buf(ns.size() * kChunk);
  for (std::size_t start = 0; start < total; start += kChunk) {
    const std::size_t len = std::min(kChunk, total - start);
    for (std::size_t i = 0; i < ns.size(); ++i) {
      const Node& n = ns[i];
      double* dst = buf.data() + i * kChunk;
      const double* a = n.lhs >= 0 ? buf.data() + n.lhs * kChunk : nullptr;
      const double* b = n.rhs >= 0 ? buf.data() + n.rhs * kChunk : nullptr;
      switch (n.op) {
        case Op::Const: std::fill(dst, dst + len, n.value); break;
        case Op::Input: std::copy_n(columns[n.index].data() + start, len, dst); break;
        case Op::Param: std::fill(dst, dst + len, params[n.index]); break;
        case Op::Add: for (std::size_t r = 0; r < len; ++r) dst[r] = a[r] + b[r]; break;
        case Op::Sub: for (std::size_t r = 0; r < len; ++r) dst[r] = a[r] - b[r]; break;
        case Op::Mul: for (std::size_t r = 0; r < len; ++r) dst[r] = a[r] * b[r]; break;
        case Op::Neg: for (std::size_t r = 0; r < len; ++r) dst[r] = -a[r]; break;
        case Op::Pow: for (std::size_t r = 0; r < len; ++r) dst[r] = ipow(a[r], n.index); break;
        case Op::Abs: for (std::size_t r = 0; r < len; ++r) dst[r] = std::abs(a[r]); break;
        case Op::Max: for (std::size_t r = 0; r < len; ++r) dst[r] = std::max(a[r], b[r]); break;
        case Op::Min: for (std::size_t r = 0; r < len; ++r) dst[r] = std::min(a[r], b[r]); break;
        case Op::Clamp:
          for (std::size_t r = 0; r < len; ++r) dst[r] = std::clamp(a[r], n.lo, n.hi);
          break;
        case Op::Relu: for (std::size_t r = 0; r < len; ++r) dst[r] = std::max(a[r], 0.0); break;
        case Op::Step: for (std::size_t r = 0; r < len; ++r) dst[r] = step_fn(a[r]); break;
        case Op::Tanh: for (std::size_t r = 0; r < len; ++r) dst[r] = std::tanh(a[r]); break;
      }
    }
    std::copy_n(buf.data() + (ns.size() - 1) * kChunk, len, out.data() + start);
  }
}

std::string NonlinExpr::to_string() const { return print_node(nodes(), root()); }

bool NonlinExpr::operator==(const NonlinExpr& other) const {
  return arity_ == other.arity_ && param_arity_ == other.param_arity_ &&
         nodes() == other.nodes();
}

namespace expr {
NonlinExpr identity() { return NonlinExpr::input(0); }
NonlinExpr square() { return NonlinExpr::pow(NonlinExpr::input(0), 2); }
NonlinExpr product() { return NonlinExpr::mul(NonlinExpr::input(0), NonlinExpr::input(1)); }
NonlinExpr sum() { return NonlinExpr::add(NonlinExpr::input(0), NonlinExpr::input(1)); }
NonlinExpr relu() { return NonlinExpr::relu(NonlinExpr::input(0)); }
NonlinExpr step() { return NonlinExpr::step(NonlinExpr::input(0)); }
NonlinExpr tanh() { return NonlinExpr::tanh(NonlinExpr::input(0)); }
NonlinExpr tanh_derivative() {
  return NonlinExpr::sub(NonlinExpr::constant(1.0),
                         NonlinExpr::pow(NonlinExpr::tanh(NonlinExpr::input(0)), 2));
}
}  // namespace expr

}  // namespace ntp
