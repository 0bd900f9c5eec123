#include "ntp/program.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "ntp/error.hpp"

namespace ntp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

class UnionFind {
 public:
  int add() {
    parent_.push_back(static_cast<int>(parent_.size()));
    return parent_.back();
  }
  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<int> parent_;
};

double poly_eval(const std::vector<double>& c, double x) {
  double r = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) r = r * x + *it;
  return r;
}

}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UndeclaredSymbol: return "UndeclaredSymbol";
    case ErrorKind::DuplicateSymbol: return "DuplicateSymbol";
    case ErrorKind::UnknownSymbol: return "UnknownSymbol";
    case ErrorKind::ArityMismatch: return "ArityMismatch";
    case ErrorKind::DimClassConflict: return "DimClassConflict";
    case ErrorKind::NonPSD: return "NonPSD";
    case ErrorKind::NonPSDExtension: return "NonPSDExtension";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::CapExceeded: return "CapExceeded";
    case ErrorKind::NonInvertibleSeries: return "NonInvertibleSeries";
    case ErrorKind::NotAlternating: return "NotAlternating";
    case ErrorKind::UnboundedDiagonal: return "UnboundedDiagonal";
    case ErrorKind::SyntaxError: return "SyntaxError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

double ScalarRule::at(double n) const {
  const double x = 1.0 / n;
  return poly_eval(num, x) / poly_eval(den, x);
}

Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& cov, double rel_tol) {
  if (cov.rows() == 0) return cov;
  const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd values = eig.eigenvalues();
  const double scale = values.cwiseAbs().maxCoeff();
  if (values.minCoeff() < -rel_tol * scale)
    throw Error(ErrorKind::NonPSD,
                fmt::format("covariance has eigenvalue {} below tolerance", values.minCoeff()));
  if (values.minCoeff() >= 0.0) return sym;
  values = values.cwiseMax(0.0);
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

double eval_nonlin(const NonlinExpr& expr, std::span<const double> inputs,
                   std::span<const double> params) {
  return expr.eval(inputs, params);
}

Program build_program(std::vector<Declaration> decls) {
  Program p;

  std::map<std::string, double> label_ratio;  // declared via ClassDecl
  std::map<std::string, int> label_node;
  UnionFind uf;
  auto label = [&](const std::string& name) {
    auto it = label_node.find(name);
    if (it != label_node.end()) return it->second;
    const int id = uf.add();
    label_node.emplace(name, id);
    return id;
  };
  std::map<std::string, std::string> home_label;  // vector -> label it was defined in

  auto declare = [&](const std::string& name, SymbolKind kind) {
    if (name.empty()) throw Error(ErrorKind::InvalidArgument, "empty symbol name");
    if (!p.symbols_.emplace(name, kind).second)
      throw Error(ErrorKind::DuplicateSymbol, fmt::format("symbol '{}' declared twice", name));
  };
  auto require = [&](const std::string& name, SymbolKind kind, const char* what) {
    auto it = p.symbols_.find(name);
    if (it == p.symbols_.end() || it->second != kind)
      throw Error(ErrorKind::UndeclaredSymbol,
                  fmt::format("'{}' is not a previously declared {}", name, what));
  };

  struct Constraint {
    std::string a_label;
    std::string b_label;
    std::string context;
  };
  std::vector<Constraint> constraints;
  std::vector<EquivDecl> equivs;
  std::vector<CovDecl> covs;

  auto add_vector = [&](const std::string& name, const std::string& lab, bool gvar) {
    declare(name, SymbolKind::Vector);
    home_label[name] = lab;
    p.vector_order_.push_back(name);
    p.gvar_[name] = gvar;
  };

  auto check_coordinatewise = [&](const std::string& out, const NonlinExpr& e,
                                  const std::vector<std::string>& inputs,
                                  const std::vector<std::string>& params) {
    if (static_cast<int>(inputs.size()) != e.arity() ||
        static_cast<int>(params.size()) != e.param_arity())
      throw Error(ErrorKind::ArityMismatch,
                  fmt::format("'{}': expression takes {} inputs and {} parameters, got {} and {}",
                              out, e.arity(), e.param_arity(), inputs.size(), params.size()));
    for (const auto& v : inputs) require(v, SymbolKind::Vector, "vector");
    for (const auto& s : params) require(s, SymbolKind::Scalar, "scalar");
    for (std::size_t i = 1; i < inputs.size(); ++i)
      constraints.push_back({home_label[inputs[0]], home_label[inputs[i]],
                             fmt::format("inputs of '{}'", out)});
  };

  for (const Declaration& d : decls) {
    std::visit(
        overloaded{
            [&](const ClassDecl& c) {
              if (!(c.ratio > 0.0) || !std::isfinite(c.ratio))
                throw Error(ErrorKind::InvalidArgument,
                            fmt::format("class '{}' needs a positive ratio", c.name));
              if (!label_ratio.emplace(c.name, c.ratio).second)
                throw Error(ErrorKind::DuplicateSymbol,
                            fmt::format("class '{}' declared twice", c.name));
              label(c.name);
            },
            [&](const MatrixDecl& m) {
              if (!(m.sigma2 > 0.0) || !std::isfinite(m.sigma2))
                throw Error(ErrorKind::InvalidArgument,
                            fmt::format("matrix '{}' needs sigma2 > 0", m.name));
              declare(m.name, SymbolKind::Matrix);
              label(m.rows);
              label(m.cols);
              p.matrix_index_[m.name] = p.matrices_.size();
              p.matrices_.push_back(m);
            },
            [&](const InitVectorDecl& v) {
              if (!std::isfinite(v.mean) || !std::isfinite(v.var) || v.var < 0.0)
                throw Error(ErrorKind::InvalidArgument,
                            fmt::format("vector '{}' needs finite mean and var >= 0", v.name));
              label(v.dim);
              add_vector(v.name, v.dim, true);
              p.init_vectors_.push_back(v);
            },
            [&](const CovDecl& c) {
              require(c.a, SymbolKind::Vector, "vector");
              require(c.b, SymbolKind::Vector, "vector");
              auto initial = [&](const std::string& n) {
                return std::any_of(p.init_vectors_.begin(), p.init_vectors_.end(),
                                   [&](const auto& v) { return v.name == n; });
              };
              if (!initial(c.a) || !initial(c.b) || c.a == c.b)
                throw Error(ErrorKind::InvalidArgument,
                            fmt::format("cov {} {}: needs two distinct initial vectors", c.a, c.b));
              if (!std::isfinite(c.cov))
                throw Error(ErrorKind::InvalidArgument, "non-finite covariance");
              constraints.push_back({home_label[c.a], home_label[c.b],
                                     fmt::format("cov {} {}", c.a, c.b)});
              covs.push_back(c);
            },
            [&](const InitScalarDecl& s) {
              if (!std::isfinite(s.limit))
                throw Error(ErrorKind::InvalidArgument, "non-finite scalar limit");
              if (s.rule.num.empty() || s.rule.den.empty() || s.rule.den.front() == 0.0)
                throw Error(ErrorKind::InvalidArgument,
                            fmt::format("scalar '{}': rule denominator must be nonzero at 1/n=0",
                                        s.name));
              if (std::abs(s.rule.limit() - s.limit) > 1e-12 * std::max(1.0, std::abs(s.limit)))
                throw Error(ErrorKind::InvalidArgument,
                            fmt::format("scalar '{}': rule tends to {}, not the declared limit {}",
                                        s.name, s.rule.limit(), s.limit));
              declare(s.name, SymbolKind::Scalar);
              p.scalar_order_.push_back(s.name);
              p.init_scalars_.push_back(s);
            },
            [&](const EquivDecl& e) { equivs.push_back(e); },
            [&](const MatMul& m) {
              require(m.matrix, SymbolKind::Matrix, "matrix");
              require(m.input, SymbolKind::Vector, "vector");
              const MatrixDecl& w = p.matrices_[p.matrix_index_.at(m.matrix)];
              const std::string& in_label = m.transposed ? w.rows : w.cols;
              const std::string& out_label = m.transposed ? w.cols : w.rows;
              constraints.push_back({home_label[m.input], in_label,
                                     fmt::format("input of '{}' = {}{} {}", m.output, m.matrix,
                                                 m.transposed ? "^T" : "", m.input)});
              add_vector(m.output, out_label, true);
              p.instructions_.push_back(m);
            },
            [&](const Nonlin& n) {
              check_coordinatewise(n.output, n.expr, n.inputs, n.params);
              // The output's class comes from its inputs.
              if (n.inputs.empty())
                throw Error(ErrorKind::ArityMismatch,
                            fmt::format("'{}': nonlin needs at least one input vector", n.output));
              add_vector(n.output, home_label[n.inputs[0]], false);
              p.instructions_.push_back(n);
            },
            [&](const Moment& m) {
              check_coordinatewise(m.output, m.expr, m.inputs, m.params);
              if (m.inputs.empty())
                throw Error(ErrorKind::ArityMismatch,
                            fmt::format("'{}': moment needs at least one input vector", m.output));
              declare(m.output, SymbolKind::Scalar);
              p.scalar_order_.push_back(m.output);
              p.instructions_.push_back(m);
            },
        },
        d);
  }

  // Explicit equivalences merge labels (directly or through vectors' labels).
  auto label_of_operand = [&](const std::string& name) -> std::string {
    if (label_node.count(name)) return name;
    auto it = home_label.find(name);
    if (it == home_label.end())
      throw Error(ErrorKind::UndeclaredSymbol,
                  fmt::format("equiv operand '{}' is neither a class nor a vector", name));
    return it->second;
  };
  for (const auto& e : equivs) uf.unite(label(label_of_operand(e.a)), label(label_of_operand(e.b)));

  for (const auto& c : constraints)
    if (uf.find(label_node.at(c.a_label)) != uf.find(label_node.at(c.b_label)))
      throw Error(ErrorKind::DimClassConflict,
                  fmt::format("{}: class '{}' is not class '{}'", c.context, c.a_label, c.b_label));

  // Assemble classes in first-appearance order of their root label.
  std::map<int, std::size_t> root_class;
  std::vector<std::string> labels_in_order;
  {
    std::vector<std::pair<int, std::string>> by_node;
    for (const auto& [name, node] : label_node) by_node.emplace_back(node, name);
    std::sort(by_node.begin(), by_node.end());
    for (const auto& [node, name] : by_node) labels_in_order.push_back(name);
  }
  for (const auto& lab : labels_in_order) {
    const int root = uf.find(label_node.at(lab));
    auto [it, inserted] = root_class.emplace(root, p.classes_.size());
    if (inserted) p.classes_.push_back(DimClass{});
    DimClass& cls = p.classes_[it->second];
    cls.labels.push_back(lab);
    p.label_class_[lab] = it->second;
  }
  for (auto& cls : p.classes_) {
    cls.id = *std::min_element(cls.labels.begin(), cls.labels.end());
    std::optional<double> ratio;
    for (const auto& lab : cls.labels) {
      auto it = label_ratio.find(lab);
      if (it == label_ratio.end()) continue;
      if (ratio && std::abs(*ratio - it->second) > 1e-12 * *ratio)
        throw Error(ErrorKind::DimClassConflict,
                    fmt::format("class '{}' merges labels with ratios {} and {}", cls.id, *ratio,
                                it->second));
      ratio = it->second;
    }
    cls.ratio = ratio.value_or(1.0);
  }
  for (const auto& v : p.vector_order_) {
    const std::size_t c = p.label_class_.at(home_label.at(v));
    p.vector_class_[v] = c;
    p.classes_[c].vectors.push_back(v);
  }

  // Initial Gaussian blocks, one per class that owns initial vectors.
  std::map<std::size_t, std::size_t> block_of_class;
  for (const auto& v : p.init_vectors_) {
    const std::size_t c = p.vector_class_.at(v.name);
    auto [it, inserted] = block_of_class.emplace(c, p.init_blocks_.size());
    if (inserted) p.init_blocks_.push_back(InitBlock{p.classes_[c].id, {}, {}, {}, {}});
    p.init_blocks_[it->second].vectors.push_back(v.name);
  }
  for (auto& block : p.init_blocks_) {
    const auto k = static_cast<Eigen::Index>(block.vectors.size());
    block.mean = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
    auto pos = [&](const std::string& n) {
      return static_cast<Eigen::Index>(
          std::find(block.vectors.begin(), block.vectors.end(), n) - block.vectors.begin());
    };
    for (const auto& v : p.init_vectors_) {
      const auto i = pos(v.name);
      if (i == k) continue;
      block.mean(i) = v.mean;
      cov(i, i) = v.var;
    }
    for (const auto& c : covs) {
      const auto i = pos(c.a), j = pos(c.b);
      if (i == k || j == k) continue;
      cov(i, j) = c.cov;
      cov(j, i) = c.cov;
    }
    block.cov = repair_psd(cov, 1e-10);
    // Uncorrelated vectors keep their own noise stream untouched.
    if (block.cov.isDiagonal(0.0)) {
      block.factor = block.cov.diagonal().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(block.cov);
      block.factor =
          eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
  }

  p.decls_ = std::move(decls);
  return p;
}

std::optional<SymbolKind> Program::kind_of(const std::string& name) const {
  auto it = symbols_.find(name);
  if (it == symbols_.end()) return std::nullopt;
  return it->second;
}

const MatrixDecl& Program::matrix(const std::string& name) const {
  auto it = matrix_index_.find(name);
  if (it == matrix_index_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("unknown matrix '{}'", name));
  return matrices_[it->second];
}

const DimClass& Program::class_of_vector(const std::string& name) const {
  auto it = vector_class_.find(name);
  if (it == vector_class_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("unknown vector '{}'", name));
  return classes_[it->second];
}

const DimClass& Program::class_of_label(const std::string& label) const {
  auto it = label_class_.find(label);
  if (it == label_class_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("unknown class '{}'", label));
  return classes_[it->second];
}

bool Program::is_gvar(const std::string& vector) const {
  auto it = gvar_.find(vector);
  if (it == gvar_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("unknown vector '{}'", vector));
  return it->second;
}

std::vector<std::string> Program::gvars() const {
  std::vector<std::string> out;
  for (const auto& v : vector_order_)
    if (gvar_.at(v)) out.push_back(v);
  return out;
}

double Program::matrix_ratio(const std::string& name) const {
  const MatrixDecl& m = matrix(name);
  return class_of_label(m.rows).ratio / class_of_label(m.cols).ratio;
}

std::vector<std::vector<std::string>> compute_cdc(const Program& program) {
  std::vector<std::vector<std::string>> out;
  for (const auto& c : program.classes()) out.push_back(c.vectors);
  return out;
}

}  // namespace ntp
