#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ntp/nonlin_expr.hpp"

namespace ntp {

/// Declares a dimension label and its limiting size relative to the base
/// width n (dim = ratio * n).
struct ClassDecl {
  std::string name;
  double ratio = 1.0;
  bool operator==(const ClassDecl&) const = default;
};

/// Gaussian matrix with entries N(0, sigma2 / dim(cols)).
struct MatrixDecl {
  std::string name;
  std::string rows;
  std::string cols;
  double sigma2 = 1.0;
  bool operator==(const MatrixDecl&) const = default;
};

/// Initial vector with iid coordinates; mean and variance of its coordinate
/// law. Cross-covariances come from CovDecl.
struct InitVectorDecl {
  std::string name;
  std::string dim;
  double mean = 0.0;
  double var = 1.0;
  bool operator==(const InitVectorDecl&) const = default;
};

struct CovDecl {
  std::string a;
  std::string b;
  double cov = 0.0;
  bool operator==(const CovDecl&) const = default;
};

/// Finite-n value of an initial scalar: num(1/n) / den(1/n), with polynomial
/// coefficients in increasing powers of 1/n.
struct ScalarRule {
  std::vector<double> num{0.0};
  std::vector<double> den{1.0};

  double at(double n) const;
  double limit() const { return num.front() / den.front(); }
  bool is_constant() const { return num.size() == 1 && den.size() == 1; }
  bool operator==(const ScalarRule&) const = default;
};

struct InitScalarDecl {
  std::string name;
  double limit = 0.0;
  ScalarRule rule;
  bool operator==(const InitScalarDecl&) const = default;
};

/// Explicit dimension equivalence between two labels or vectors.
struct EquivDecl {
  std::string a;
  std::string b;
  bool operator==(const EquivDecl&) const = default;
};

struct MatMul {
  std::string output;
  std::string matrix;
  bool transposed = false;
  std::string input;
  bool operator==(const MatMul&) const = default;
};

struct Nonlin {
  std::string output;
  NonlinExpr expr;
  std::vector<std::string> inputs;
  std::vector<std::string> params;
  bool operator==(const Nonlin&) const = default;
};

struct Moment {
  std::string output;
  NonlinExpr expr;
  std::vector<std::string> inputs;
  std::vector<std::string> params;
  bool operator==(const Moment&) const = default;
};

using Instruction = std::variant<MatMul, Nonlin, Moment>;

using Declaration = std::variant<ClassDecl, MatrixDecl, InitVectorDecl, CovDecl, InitScalarDecl,
                                 EquivDecl, MatMul, Nonlin, Moment>;

/// Common dimension class: an equivalence class of labels and the vectors
/// living in them.
struct DimClass {
  std::string id;  // smallest label in the class
  double ratio = 1.0;
  std::vector<std::string> labels;
  std::vector<std::string> vectors;  // program order
};

/// Joint Gaussian law of the initial vectors of one CDC.
struct InitBlock {
  std::string cdc;
  std::vector<std::string> vectors;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;     // PSD-repaired
  Eigen::MatrixXd factor;  // cov = factor * factor^T
};

enum class SymbolKind { Matrix, Vector, Scalar };

/// Validated, immutable NetsorT+ program.
class Program {
 public:
  Program() = default;

  const std::vector<Declaration>& declarations() const { return decls_; }
  const std::vector<Instruction>& instructions() const { return instructions_; }
  const std::vector<MatrixDecl>& matrices() const { return matrices_; }
  const std::vector<InitVectorDecl>& init_vectors() const { return init_vectors_; }
  const std::vector<InitScalarDecl>& init_scalars() const { return init_scalars_; }
  const std::vector<DimClass>& classes() const { return classes_; }
  const std::vector<InitBlock>& init_blocks() const { return init_blocks_; }

  /// Vectors in declaration order.
  const std::vector<std::string>& vectors() const { return vector_order_; }
  const std::vector<std::string>& scalars() const { return scalar_order_; }

  std::optional<SymbolKind> kind_of(const std::string& name) const;
  const MatrixDecl& matrix(const std::string& name) const;
  const DimClass& class_of_vector(const std::string& name) const;
  const DimClass& class_of_label(const std::string& label) const;
  bool is_gvar(const std::string& vector) const;
  std::vector<std::string> gvars() const;

  /// Limiting rows/cols ratio of a matrix.
  double matrix_ratio(const std::string& name) const;

  bool operator==(const Program& other) const { return decls_ == other.decls_; }

 private:
  friend Program build_program(std::vector<Declaration> decls);

  std::vector<Declaration> decls_;
  std::vector<Instruction> instructions_;
  std::vector<MatrixDecl> matrices_;
  std::vector<InitVectorDecl> init_vectors_;
  std::vector<InitScalarDecl> init_scalars_;
  std::vector<DimClass> classes_;
  std::vector<InitBlock> init_blocks_;
  std::vector<std::string> vector_order_;
  std::vector<std::string> scalar_order_;
  std::map<std::string, SymbolKind> symbols_;
  std::map<std::string, std::size_t> vector_class_;
  std::map<std::string, std::size_t> label_class_;
  std::map<std::string, std::size_t> matrix_index_;
  std::map<std::string, bool> gvar_;
};

/// Validates an ordered declaration list and computes the CDC partition and
/// the initial Gaussian blocks.
///
/// Errors: UndeclaredSymbol, DuplicateSymbol, ArityMismatch, DimClassConflict,
/// NonPSD, InvalidArgument.
Program build_program(std::vector<Declaration> decls);

/// CDC partition of the program's vectors: each inner list is one class, in
/// the order of `Program::classes()`.
std::vector<std::vector<std::string>> compute_cdc(const Program& program);

/// Coordinatewise evaluation of a nonlinearity (arity-checked).
double eval_nonlin(const NonlinExpr& expr, std::span<const double> inputs,
                   std::span<const double> params);

/// Symmetrizes and clips slightly negative eigenvalues of a covariance. Throws
/// NonPSD when an eigenvalue is below -rel_tol * ||cov||.
Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& cov, double rel_tol);

}  // namespace ntp
