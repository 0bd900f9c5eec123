#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ntp/parallel.hpp"
#include "ntp/realization.hpp"

namespace ntp {

struct MatrixFactor {
  std::string name;
  bool transposed = false;
  bool operator==(const MatrixFactor&) const = default;
};

/// Diag(psi(v1, ..., vk)); psi must be bounded.
struct DiagFactor {
  std::vector<std::string> vectors;
  NonlinExpr psi;
  bool operator==(const DiagFactor&) const = default;
};

using WordFactor = std::variant<MatrixFactor, DiagFactor>;

/// Product F_0 F_1 ... F_{m-1}; applied to a probe right to left. The empty
/// word is the identity.
struct MatrixWord {
  std::vector<WordFactor> factors;
  bool operator==(const MatrixWord&) const = default;
};

struct WordTerm {
  double coef = 1.0;
  MatrixWord word;
  bool operator==(const WordTerm&) const = default;
};

/// Linear combination of words, e.g. W + W^T.
struct WordPoly {
  std::vector<WordTerm> terms;

  WordPoly() = default;
  WordPoly(MatrixWord w) : terms{{1.0, std::move(w)}} {}  // NOLINT(implicit)
  bool operator==(const WordPoly&) const = default;
};

/// Output and input CDC ids.
struct WordShape {
  std::string out;
  std::string in;
  bool operator==(const WordShape&) const = default;
  bool square() const { return out == in; }
};

/// Shape of a word; nullopt for the empty word. Errors: ShapeMismatch,
/// UnknownSymbol, UnboundedDiagonal, DimClassConflict, ArityMismatch.
std::optional<WordShape> word_shape(const Program& program, const MatrixWord& word);

/// Common shape of all non-empty terms; nullopt when every term is a multiple
/// of the identity. Identity terms force a square shape.
std::optional<WordShape> poly_shape(const Program& program, const WordPoly& poly);

Eigen::VectorXd word_apply(const Realization& r, const WordPoly& poly,
                           const Eigen::VectorXd& probe);

/// Applies the word to every column of `block`.
Eigen::MatrixXd word_apply_block(const Realization& r, const WordPoly& poly,
                                 const Eigen::MatrixXd& block);

/// Dense matrix of a square word. Errors: CapExceeded above options.exact_cap.
Eigen::MatrixXd materialize(const Realization& r, const WordPoly& poly,
                            const ExecOptions& options = {});

/// Diagonal of a polynomial built from diagonal factors only; nullopt when a
/// matrix factor occurs or the word is identity-only.
std::optional<Eigen::VectorXd> diagonal_values(const Realization& r, const WordPoly& poly);

struct TraceMethod {
  enum class Kind { Exact, Hutchinson };
  Kind kind = Kind::Hutchinson;
  int probes = 32;

  static TraceMethod exact() { return {Kind::Exact, 0}; }
  static TraceMethod hutchinson(int p = 32) { return {Kind::Hutchinson, p}; }
  /// "exact" or "hutch:<p>".
  static TraceMethod parse(const std::string& text);
  std::string to_string() const;
};

/// (1/n) tr(word). Hutchinson probes are standard Gaussians drawn from
/// per-probe streams keyed by the realization seed; probe blocks of 32 run in
/// parallel and are reduced in probe order.
Estimate trace_moment(const Realization& r, const WordPoly& poly, TraceMethod method,
                      const ExecOptions& options = {});

/// [(1/n) tr(word^k)] for k = 1..k_max; the word must be symmetric.
std::vector<Estimate> spectral_moments(const Realization& r, const WordPoly& poly, int k_max,
                                       TraceMethod method, const ExecOptions& options = {});

/// Ascending eigenvalues of the (symmetrized) materialized word.
std::vector<double> eig_spectrum(const Realization& r, const WordPoly& poly,
                                 const ExecOptions& options = {});

}  // namespace ntp
