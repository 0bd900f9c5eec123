#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ntp/laws.hpp"
#include "ntp/parallel.hpp"
#include "ntp/program.hpp"
#include "ntp/word.hpp"

namespace ntp {

/// One factor P_i of an alternating product, tagged with the collection it
/// is drawn from. Matrix collections are named after their matrices; all
/// diagonal matrices of the program share the collection "D" unless
/// relabelled.
struct AlternatingFactor {
  std::string collection;
  WordPoly poly;
  bool operator==(const AlternatingFactor&) const = default;
};

/// (P_k - tau_k) ... (P_1 - tau_1): factors[0] is P_1 and acts first.
struct AlternatingWord {
  std::vector<AlternatingFactor> factors;
  bool operator==(const AlternatingWord&) const = default;
};

/// Errors: NotAlternating when two adjacent factors share a collection.
void check_alternating(const AlternatingWord& word);

/// n^-1 tr prod_i (P_i - tau_i) with tau_i = n^-1 tr P_i on the same
/// realization (and, for Hutchinson, the same probes).
Estimate centered_trace(const Realization& r, const AlternatingWord& word, TraceMethod method,
                        const ExecOptions& options = {});

struct FreenessRow {
  int n = 0;
  int seed_count = 0;
  double median_abs = 0.0;
  double mean_abs = 0.0;
  double std = 0.0;
};

struct FreenessReport {
  std::vector<FreenessRow> rows;  // ascending n
  double slope = 0.0;             // least-squares slope of log median vs log n
};

/// Exact traces up to this width, Hutchinson above.
inline constexpr int kFreenessExactUpTo = 2048;

/// Sweeps widths and seeds (seed values first_seed .. first_seed+seeds-1).
/// `method` overrides the default exact/Hutchinson switch.
FreenessReport freeness_sweep(const Program& program, const AlternatingWord& word,
                              const std::vector<int>& n_list, int seeds,
                              std::uint64_t first_seed = 0,
                              std::optional<TraceMethod> method = std::nullopt,
                              const ExecOptions& options = {});

/// Names used by the witness program.
struct WitnessNames {
  std::string final_scalar;
  std::vector<std::string> tau;  // tau_i scalars
};

/// NetsorT+ program computing (1/n) v^T (A^t - tau_t) ... (A^1 - tau_1) v with
/// fresh Gaussian probes v, u^1..u^t and tau_i = (1/n) u^iT A^i u^i. Its
/// final scalar has limit 0 for alternating words. `cls` names the class of
/// the probes when the word is empty.
Program fip_witness_program(const Program& base, const AlternatingWord& word,
                            WitnessNames* names = nullptr, const std::string& cls = "");

/// Activation with its (weak) derivative.
struct Activation {
  std::string name;
  NonlinExpr phi;
  NonlinExpr phi_prime;

  /// identity, relu or tanh.
  static Activation named(const std::string& name);
};

/// q_1..q_L with q_l = E phi(sqrt(q_{l-1}) xi)^2.
std::vector<double> mlp_forward_variances(const NonlinExpr& phi, double q1, int L);

/// m_k = E phi'(sqrt(q) xi)^{2k}, k = 1..K.
MomentSeq d_squared_moments(const NonlinExpr& phi_prime, double q, int K);

/// Limit moments of J^T J for J = W^L D^{L-1} ... W^2 D^1. `rho_list` holds
/// the shape ratio of each W^l (l = 2..L); empty means all 1.
MomentSeq jacobian_limit_moments(int L, const Activation& act, double q1,
                                 const std::vector<double>& rho_list, int K);

/// Program for the hidden layers: h1 ~ N(0, q1), x^l = phi(h^l),
/// h^{l+1} = W^{l+1} x^l for l < L-1; W^L is declared but unused.
Program jacobian_program(int L, const Activation& act, double q1);

/// J^T J as a word over jacobian_program's symbols.
WordPoly jacobian_gram_word(int L, const Activation& act);

/// Empirical moments of J^T J at width n.
std::vector<Estimate> jacobian_finite(int L, int n, const Activation& act, double q1,
                                      std::uint64_t seed, int k_max, TraceMethod method,
                                      const ExecOptions& options = {});

}  // namespace ntp
