#include "ntp/freeness.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "ntp/error.hpp"
#include "ntp/quadrature.hpp"
#include "ntp/rng.hpp"

namespace ntp {

namespace {

constexpr int kProbeBlock = 32;

// Common square class of all factors; empty when the word has no sized factor.
std::string word_class(const Program& program, const AlternatingWord& word) {
  std::string cls;
  for (const auto& f : word.factors) {
    const auto shape = poly_shape(program, f.poly);
    if (!shape) continue;
    if (!shape->square())
      throw Error(ErrorKind::ShapeMismatch,
                  fmt::format("factor of collection '{}' is not square", f.collection));
    if (!cls.empty() && cls != shape->in)
      throw Error(ErrorKind::ShapeMismatch, "word factors act on different classes");
    cls = shape->in;
  }
  return cls;
}

Eigen::MatrixXd probes(std::uint64_t seed, int n, int first, int count) {
  Eigen::MatrixXd z(n, count);
  for (int j = 0; j < count; ++j)
    NormalStream(seed, "probe", static_cast<std::uint64_t>(first + j))
        .fill({z.col(j).data(), static_cast<std::size_t>(n)});
  return z;
}

}  // namespace

void check_alternating(const AlternatingWord& word) {
  for (std::size_t i = 1; i < word.factors.size(); ++i)
    if (word.factors[i].collection == word.factors[i - 1].collection)
      throw Error(ErrorKind::NotAlternating,
                  fmt::format("factors {} and {} both come from collection '{}'", i, i + 1,
                              word.factors[i].collection));
}

Estimate centered_trace(const Realization& r, const AlternatingWord& word, TraceMethod method,
                        const ExecOptions& options) {
  check_alternating(word);
  const std::string cls = word_class(r.program(), word);
  if (cls.empty()) {
    // Only multiples of the identity: every centered factor vanishes.
    return {word.factors.empty() ? 1.0 : 0.0, 0.0};
  }
  const int n = r.dims().at(cls);
  const std::size_t k = word.factors.size();

  if (method.kind == TraceMethod::Kind::Exact) {
    if (n > options.exact_cap)
      throw Error(ErrorKind::CapExceeded,
                  fmt::format("size {} exceeds the exact cap {}", n, options.exact_cap));
    // y holds (P_i - tau_i) ... (P_1 - tau_1); diagonal factors scale rows and
    // the last factor only needs tr(P y).
    std::optional<Eigen::MatrixXd> y;
    for (std::size_t i = 0; i < k; ++i) {
      const auto d = diagonal_values(r, word.factors[i].poly);
      Eigen::MatrixXd p;
      if (!d) p = materialize(r, word.factors[i].poly, options);
      const double tau = (d ? d->sum() : p.trace()) / n;
      if (i + 1 == k) {
        if (!y) return {0.0, 0.0};
        const double tr_py =
            d ? d->dot(y->diagonal()) : p.transpose().cwiseProduct(*y).sum();
        return {(tr_py - tau * y->trace()) / n, 0.0};
      }
      if (!y) {
        y = d ? Eigen::MatrixXd(d->asDiagonal()) : std::move(p);
        y->diagonal().array() -= tau;
      } else if (d) {
        *y = (d->array() - tau).matrix().asDiagonal() * *y;
      } else {
        *y = p * *y - tau * *y;
      }
    }
    return {0.0, 0.0};
  }

  const int p = method.probes;
  const int blocks = (p + kProbeBlock - 1) / kProbeBlock;
  // Self-normalized tau_i = sum_j z_j^T P_i z_j / sum_j |z_j|^2.
  std::vector<std::vector<double>> num(k, std::vector<double>(static_cast<std::size_t>(p)));
  std::vector<double> norms(static_cast<std::size_t>(p));
  parallel_for(static_cast<std::size_t>(blocks), options.threads, [&](std::size_t b) {
    const int first = static_cast<int>(b) * kProbeBlock;
    const int count = std::min(kProbeBlock, p - first);
    const Eigen::MatrixXd z = probes(r.seed(), n, first, count);
    for (int j = 0; j < count; ++j) norms[static_cast<std::size_t>(first + j)] = z.col(j).squaredNorm();
    for (std::size_t i = 0; i < k; ++i) {
      const Eigen::MatrixXd pz = word_apply_block(r, word.factors[i].poly, z);
      for (int j = 0; j < count; ++j)
        num[i][static_cast<std::size_t>(first + j)] = z.col(j).dot(pz.col(j));
    }
  });
  std::vector<double> tau(k);
  const double norm_sum = pairwise_sum(norms);
  for (std::size_t i = 0; i < k; ++i) tau[i] = pairwise_sum(num[i]) / norm_sum;

  std::vector<double> values(static_cast<std::size_t>(p));
  parallel_for(static_cast<std::size_t>(blocks), options.threads, [&](std::size_t b) {
    const int first = static_cast<int>(b) * kProbeBlock;
    const int count = std::min(kProbeBlock, p - first);
    const Eigen::MatrixXd z = probes(r.seed(), n, first, count);
    Eigen::MatrixXd y = z;
    for (std::size_t i = 0; i < k; ++i) y = word_apply_block(r, word.factors[i].poly, y) - tau[i] * y;
    for (int j = 0; j < count; ++j)
      values[static_cast<std::size_t>(first + j)] = z.col(j).dot(y.col(j)) / n;
  });
  return mean_stderr(values);
}

FreenessReport freeness_sweep(const Program& program, const AlternatingWord& word,
                              const std::vector<int>& n_list, int seeds, std::uint64_t first_seed,
                              std::optional<TraceMethod> method, const ExecOptions& options) {
  check_alternating(word);
  if (seeds < 1) throw Error(ErrorKind::InvalidArgument, "need at least one seed");
  for (std::size_t i = 0; i < n_list.size(); ++i)
    if (n_list[i] < 1 || (i > 0 && n_list[i] <= n_list[i - 1]))
      throw Error(ErrorKind::InvalidArgument, "widths must be positive and ascending");

  FreenessReport report;
  ExecOptions inner = options;
  inner.threads = 1;
  for (int n : n_list) {
    const TraceMethod m = method ? *method
                                 : (n <= kFreenessExactUpTo ? TraceMethod::exact()
                                                            : TraceMethod::hutchinson(32));
    std::vector<double> abs_values(static_cast<std::size_t>(seeds));
    const DimAssignment dims = dims_for(program, n);
    parallel_for(static_cast<std::size_t>(seeds), options.threads, [&](std::size_t s) {
      const Realization r = instantiate(program, dims, first_seed + s, inner);
      abs_values[s] = std::abs(centered_trace(r, word, m, inner).value);
    });
    FreenessRow row;
    row.n = n;
    row.seed_count = seeds;
    row.median_abs = median(abs_values);
    const Estimate e = mean_stderr(abs_values);
    row.mean_abs = e.value;
    row.std = e.stderr_ * std::sqrt(static_cast<double>(seeds));
    report.rows.push_back(row);
  }
  if (report.rows.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(report.rows.size());
    for (const auto& row : report.rows) {
      const double x = std::log(static_cast<double>(row.n));
      const double y = std::log(std::max(row.median_abs, 1e-300));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    report.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  }
  return report;
}

namespace {

class WitnessBuilder {
 public:
  WitnessBuilder(const Program& base, std::vector<Declaration>& decls)
      : base_(base), decls_(decls) {}

  std::string fresh(const std::string& stem) {
    for (int i = 0;; ++i) {
      std::string name = i == 0 ? stem : fmt::format("{}_{}", stem, i);
      if (!base_.kind_of(name) && used_.insert(name).second) return name;
    }
  }

  std::string nonlin(const std::string& stem, NonlinExpr e, std::vector<std::string> inputs,
                     std::vector<std::string> params = {}) {
    Nonlin nl;
    nl.output = fresh(stem);
    nl.expr = e.with_signature(static_cast<int>(inputs.size()), static_cast<int>(params.size()));
    nl.inputs = std::move(inputs);
    nl.params = std::move(params);
    decls_.push_back(nl);
    return nl.output;
  }

  std::string moment(const std::string& stem, NonlinExpr e, std::vector<std::string> inputs) {
    Moment mo;
    mo.output = fresh(stem);
    mo.expr = e.with_signature(static_cast<int>(inputs.size()), 0);
    mo.inputs = std::move(inputs);
    decls_.push_back(mo);
    return mo.output;
  }

  std::string apply_word(const MatrixWord& word, std::string cur, const std::string& stem) {
    for (auto it = word.factors.rbegin(); it != word.factors.rend(); ++it) {
      if (const auto* m = std::get_if<MatrixFactor>(&*it)) {
        MatMul mm;
        mm.output = fresh(stem);
        mm.matrix = m->name;
        mm.transposed = m->transposed;
        mm.input = cur;
        decls_.push_back(mm);
        cur = mm.output;
      } else {
        const auto& d = std::get<DiagFactor>(*it);
        std::vector<NonlinExpr> slots;
        for (std::size_t j = 0; j < d.vectors.size(); ++j)
          slots.push_back(NonlinExpr::input(static_cast<int>(j) + 1));
        const NonlinExpr e = NonlinExpr::mul(NonlinExpr::input(0), d.psi.substitute(slots, {}));
        std::vector<std::string> inputs{cur};
        inputs.insert(inputs.end(), d.vectors.begin(), d.vectors.end());
        cur = nonlin(stem, e, inputs);
      }
    }
    return cur;
  }

  std::string apply_poly(const WordPoly& poly, const std::string& input, const std::string& stem) {
    if (poly.terms.size() == 1 && poly.terms[0].coef == 1.0)
      return apply_word(poly.terms[0].word, input, stem);
    std::vector<std::string> parts;
    NonlinExpr sum = NonlinExpr::constant(0.0);
    for (std::size_t j = 0; j < poly.terms.size(); ++j) {
      parts.push_back(apply_word(poly.terms[j].word, input, stem));
      const NonlinExpr term = NonlinExpr::mul(NonlinExpr::constant(poly.terms[j].coef),
                                              NonlinExpr::input(static_cast<int>(j)));
      sum = j == 0 ? term : NonlinExpr::add(sum, term);
    }
    return nonlin(stem, sum, parts);
  }

 private:
  const Program& base_;
  std::vector<Declaration>& decls_;
  std::set<std::string> used_;
};

}  // namespace

Program fip_witness_program(const Program& base, const AlternatingWord& word, WitnessNames* names,
                            const std::string& cls) {
  check_alternating(word);
  std::string label = word_class(base, word);
  if (label.empty()) label = cls;
  if (label.empty() && !base.classes().empty()) label = base.classes().front().id;
  if (label.empty()) label = "n";

  std::vector<Declaration> decls = base.declarations();
  WitnessBuilder b(base, decls);
  const std::string v = b.fresh("fip_v");
  decls.push_back(InitVectorDecl{v, label, 0.0, 1.0});
  std::vector<std::string> u;
  for (std::size_t i = 0; i < word.factors.size(); ++i) {
    u.push_back(b.fresh(fmt::format("fip_u{}", i + 1)));
    decls.push_back(InitVectorDecl{u.back(), label, 0.0, 1.0});
  }
  WitnessNames out;
  std::string cur = v;
  for (std::size_t i = 0; i < word.factors.size(); ++i) {
    const auto& poly = word.factors[i].poly;
    const std::string stem = fmt::format("fip_{}", i + 1);
    const std::string g = b.apply_poly(poly, cur, stem + "_g");
    const std::string h = b.apply_poly(poly, u[i], stem + "_h");
    const std::string tau = b.moment(fmt::format("fip_tau{}", i + 1), expr::product(), {u[i], h});
    out.tau.push_back(tau);
    const NonlinExpr centred = NonlinExpr::sub(
        NonlinExpr::input(0), NonlinExpr::mul(NonlinExpr::param(0), NonlinExpr::input(1)));
    cur = b.nonlin(fmt::format("fip_v{}", i + 1), centred, {g, cur}, {tau});
  }
  out.final_scalar = b.moment("fip_trace", expr::product(), {v, cur});
  if (names) *names = out;
  return build_program(std::move(decls));
}

Activation Activation::named(const std::string& name) {
  if (name == "identity" || name == "linear")
    return {"identity", expr::identity(), NonlinExpr::constant(1.0).with_signature(1, 0)};
  if (name == "relu") return {"relu", expr::relu(), expr::step()};
  if (name == "tanh") return {"tanh", expr::tanh(), expr::tanh_derivative()};
  throw Error(ErrorKind::InvalidArgument,
              fmt::format("unknown activation '{}' (identity, relu, tanh)", name));
}

std::vector<double> mlp_forward_variances(const NonlinExpr& phi, double q1, int L) {
  if (!(q1 > 0.0)) throw Error(ErrorKind::InvalidArgument, "q1 must be positive");
  if (L < 1) throw Error(ErrorKind::InvalidArgument, "need at least one layer");
  std::vector<double> q{q1};
  while (static_cast<int>(q.size()) < L) {
    const double prev = q.back();
    q.push_back(gaussian_expectation(
        [&](double x) {
          const double in[1] = {x};
          const double y = phi.eval(std::span<const double>(in, static_cast<std::size_t>(phi.arity())), {});
          return y * y;
        },
        prev, 200));
  }
  return q;
}

MomentSeq d_squared_moments(const NonlinExpr& phi_prime, double q, int K) {
  if (!(q > 0.0)) throw Error(ErrorKind::InvalidArgument, "q must be positive");
  MomentSeq m;
  for (int k = 1; k <= K; ++k)
    m.m.push_back(gaussian_expectation(
        [&](double x) {
          const double in[1] = {x};
          const double d =
              phi_prime.eval(std::span<const double>(in, static_cast<std::size_t>(phi_prime.arity())), {});
          return std::pow(d * d, k);
        },
        q, 200));
  return m;
}

MomentSeq jacobian_limit_moments(int L, const Activation& act, double q1,
                                 const std::vector<double>& rho_list, int K) {
  if (L < 2) throw Error(ErrorKind::InvalidArgument, "the Jacobian needs L >= 2");
  if (!rho_list.empty() && static_cast<int>(rho_list.size()) != L - 1)
    throw Error(ErrorKind::InvalidArgument, fmt::format("need {} shape ratios", L - 1));
  const std::vector<double> q = mlp_forward_variances(act.phi, q1, L - 1);
  MomentSeq acc = point_mass_moments(1.0, K);
  for (int l = 0; l < L - 1; ++l) {
    acc = free_mul_conv(acc, d_squared_moments(act.phi_prime, q[static_cast<std::size_t>(l)], K), K);
    const double rho = rho_list.empty() ? 1.0 : rho_list[static_cast<std::size_t>(l)];
    acc = free_mul_conv(acc, law_moments(Law::mp(rho), K), K);
  }
  return acc;
}

Program jacobian_program(int L, const Activation& act, double q1) {
  if (L < 2) throw Error(ErrorKind::InvalidArgument, "the Jacobian needs L >= 2");
  std::vector<Declaration> decls;
  decls.push_back(InitVectorDecl{"h1", "n1", 0.0, q1});
  for (int l = 2; l <= L; ++l)
    decls.push_back(MatrixDecl{fmt::format("W{}", l), fmt::format("n{}", l),
                               fmt::format("n{}", l - 1), 1.0});
  for (int l = 1; l < L - 1; ++l) {
    decls.push_back(Nonlin{fmt::format("x{}", l), act.phi, {fmt::format("h{}", l)}, {}});
    decls.push_back(MatMul{fmt::format("h{}", l + 1), fmt::format("W{}", l + 1), false,
                           fmt::format("x{}", l)});
  }
  return build_program(std::move(decls));
}

WordPoly jacobian_gram_word(int L, const Activation& act) {
  MatrixWord j;  // W^L D^{L-1} ... W^2 D^1
  for (int l = L; l >= 2; --l) {
    j.factors.emplace_back(MatrixFactor{fmt::format("W{}", l), false});
    j.factors.emplace_back(DiagFactor{{fmt::format("h{}", l - 1)}, act.phi_prime});
  }
  MatrixWord gram;
  for (auto it = j.factors.rbegin(); it != j.factors.rend(); ++it) {
    if (const auto* m = std::get_if<MatrixFactor>(&*it))
      gram.factors.emplace_back(MatrixFactor{m->name, !m->transposed});
    else
      gram.factors.push_back(*it);
  }
  gram.factors.insert(gram.factors.end(), j.factors.begin(), j.factors.end());
  return gram;
}

std::vector<Estimate> jacobian_finite(int L, int n, const Activation& act, double q1,
                                      std::uint64_t seed, int k_max, TraceMethod method,
                                      const ExecOptions& options) {
  const Program program = jacobian_program(L, act, q1);
  const Realization r = instantiate(program, dims_for(program, n), seed, options);
  return spectral_moments(r, jacobian_gram_word(L, act), k_max, method, options);
}

}  // namespace ntp
