// End-to-end acceptance checks; prints one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include <fmt/format.h>

#include "generators.hpp"
#include "ntp/commands.hpp"
#include "ntp/dsl.hpp"
#include "ntp/freeness.hpp"
#include "ntp/laws.hpp"
#include "ntp/limit.hpp"
#include "ntp/quadrature.hpp"
#include "ntp/realization.hpp"
#include "support.hpp"

using namespace ntp;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

LimitOptions ensemble(int n = 200000, std::uint64_t seed = 0) {
  LimitOptions o;
  o.ensemble = n;
  o.seed = seed;
  return o;
}

std::vector<double> pooled_moments(const Program& p, const WordPoly& word, int n, int seeds, int k_max) {
  std::vector<double> sum(static_cast<std::size_t>(k_max), 0.0);
  for (int s = 0; s < seeds; ++s) {
    const Realization r = instantiate(p, dims_for(p, n), static_cast<std::uint64_t>(s));
    const auto m = spectral_moments(r, word, k_max, TraceMethod::hutchinson(32));
    for (int k = 0; k < k_max; ++k) sum[static_cast<std::size_t>(k)] += m[static_cast<std::size_t>(k)].value / seeds;
  }
  return sum;
}

WordPoly single(const std::string& text) { return parse_word(text).factors.front().poly; }

const ZDotCoefficient* coefficient(const LimitState& s, const std::string& gvar, const std::string& y) {
  for (const auto& c : s.zdot())
    if (c.gvar == gvar && c.y == y) return &c;
  return nullptr;
}

bool within(const Estimate& e, double target) { return std::abs(e.value - target) <= 3 * e.stderr_; }

Outcome semicircle_law() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  const auto m = pooled_moments(bundled("semicircle.ntp"), single("mat W + W^T"), 2048, 8, 8);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double cat[] = {1, 2, 5, 14};
  for (int k = 1; k <= 4; ++k) {
    const double v = m[static_cast<std::size_t>(2 * k - 1)];
    const double rel = std::abs(v - cat[k - 1]) / cat[k - 1];
    o.require(rel <= (k <= 3 ? 0.05 : 0.10), fmt::format("m{}={:.4f}", 2 * k, v));
  }
  for (int k = 1; k <= 7; k += 2)
    o.require(std::abs(m[static_cast<std::size_t>(k - 1)]) <= 0.05, fmt::format("m{}={:.4f}", k, m[static_cast<std::size_t>(k - 1)]));
  o.require(secs <= 120, fmt::format("took {:.0f}s", secs));
  if (o.pass) o.detail = fmt::format("m2..m8 = {:.4f} {:.4f} {:.4f} {:.4f} in {:.1f}s", m[1], m[3], m[5], m[7], secs);
  return o;
}

Outcome marchenko_pastur() {
  Outcome o;
  std::string summary;
  for (const auto& [file, rho] : {std::pair{"mp_rho0.5.ntp", 0.5}, {"mp_rho1.ntp", 1.0}, {"mp_rho2.ntp", 2.0}}) {
    const auto m = pooled_moments(bundled(file), single("mat A A^T"), 2048, 4, 4);
    for (int r = 1; r <= 4; ++r) {
      const double lim = mp_moment(r, rho);
      const double v = m[static_cast<std::size_t>(r - 1)];
      o.require(std::abs(v - lim) <= 0.05 * lim, fmt::format("rho={} M{}={:.4f} vs {:.4f}", rho, r, v, lim));
    }
    summary += fmt::format(" rho={}: M4={:.3f}/{:.3f}", rho, m[3], mp_moment(4, rho));
  }
  double worst = 0.0;
  for (double rho : {0.25, 0.5, 1.0, 2.0, 3.0})
    for (int r = 1; r <= 20; ++r) {
      const double a = mp_moment(r, rho, MpMethod::Explicit), b = mp_moment(r, rho, MpMethod::Recurrence);
      worst = std::max(worst, std::abs(a - b) / std::abs(a));
    }
  o.require(worst <= 1e-12, fmt::format("explicit vs recurrence {:.2e}", worst));
  if (o.pass) o.detail = fmt::format("n=2048{}; explicit vs recurrence {:.1e}", summary, worst);
  return o;
}

Outcome zdot_exactness() {
  Outcome o;
  const LimitState atav = compute_limit(bundled("atav.ntp"), ensemble());
  const ZDotCoefficient* c = coefficient(atav, "x", "v");
  o.require(c && std::abs(c->value - 1.0) <= 3 * c->stderr_, "A^T A v coefficient");
  std::string summary = c ? fmt::format("AtAv a={:.4f}+-{:.4f}", c->value, c->stderr_) : "";
  for (const auto& [file, rho] : {std::pair{"mp_rho0.5.ntp", 0.5}, {"mp_rho1.ntp", 1.0}, {"mp_rho2.ntp", 2.0}}) {
    const LimitState s = compute_limit(bundled(file), ensemble());
    const ZDotCoefficient* d = coefficient(s, "u2", "u1");
    o.require(d && std::abs(d->value - rho) <= 3 * d->stderr_, fmt::format("MP rho={} coefficient", rho));
    if (d) summary += fmt::format(" rho={}: {:.4f}", rho, d->value);
  }
  const LimitState semi = compute_limit(bundled("semicircle.ntp"), ensemble());
  for (int k = 1; k <= 3; ++k) {
    const Estimate e = semi.expect(expr::product(), {"z0", "z" + std::to_string(2 * k)});
    o.require(within(e, catalan_value(k)), fmt::format("E z0 z{} = {:.4f}", 2 * k, e.value));
    summary += fmt::format(" C{}~{:.4f}", k, e.value);
  }
  if (o.pass) o.detail = summary;
  return o;
}

Outcome gia_break() {
  Outcome o;
  const Program p = bundled("gia_break.ntp");
  const Estimate lim = compute_limit(p, ensemble()).expect(expr::identity(), {"dx1"});
  o.require(within(lim, 2.0), fmt::format("limit {:.4f}+-{:.4f}", lim.value, lim.stderr_));
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 8; ++s)
    mean += empirical_average(instantiate(p, dims_for(p, 4096), s), expr::identity(), {"dx1"}) / 8;
  o.require(std::abs(mean - 2.0) <= 0.1, fmt::format("finite mean {:.4f}", mean));
  if (o.pass) o.detail = fmt::format("limit {:.4f}+-{:.4f}, n=4096 mean {:.4f}", lim.value, lim.stderr_, mean);
  return o;
}

Outcome master_theorem() {
  Outcome o;
  RunConfig cfg;
  cfg.n = {256, 1024, 4096};
  cfg.seeds = 8;
  cfg.tol = 0.05;
  const auto cases = read_manifest(std::string(NTP_PROGRAMS_DIR) + "/verify.manifest");
  const Report rep = run_verify(cases, cfg);
  int failed = 0;
  for (std::size_t pos = 0; (pos = rep.csv.find(",fail\n", pos)) != std::string::npos; ++pos) ++failed;
  o.require(rep.pass, fmt::format("{} of {} cases failed", failed, cases.size()));
  if (o.pass) o.detail = fmt::format("{} program/test pairs, final gaps within tolerance and shrinking", cases.size());
  return o;
}

Outcome free_independence() {
  Outcome o;
  const Program fip = bundled("fip.ntp");
  std::string summary;
  for (const char* w : {"fip_gram_step.word", "fip_sym_mixed.word"}) {
    const FreenessReport r = freeness_sweep(fip, bundled_word(w), {256, 2048}, 8);
    const double m256 = r.rows[0].median_abs, m2048 = r.rows[1].median_abs;
    o.require(m2048 <= 0.05 && m2048 < m256, fmt::format("{} median {:.2e} -> {:.2e}", w, m256, m2048));
    summary += fmt::format("{} {:.1e}->{:.1e}; ", w, m256, m2048);
  }
  const FreenessReport control = freeness_sweep(fip, bundled_word("fip_control.word"), {256, 512, 1024, 2048}, 8);
  for (const auto& row : control.rows) o.require(row.median_abs >= 0.15, fmt::format("control n={} median {:.3f}", row.n, row.median_abs));
  o.require(std::abs(control.slope) < 0.2, fmt::format("control slope {:.3f}", control.slope));
  summary += fmt::format("control slope {:.3f}; ", control.slope);
  for (const char* w : {"fip_gram_step.word", "fip_sym_mixed.word"}) {
    WitnessNames names;
    const Program witness = fip_witness_program(fip, bundled_word(w), &names);
    const Estimate e = compute_limit(witness, ensemble()).scalar_limit(names.final_scalar);
    o.require(within(e, 0.0), fmt::format("{} witness {:.4f}+-{:.4f}", w, e.value, e.stderr_));
    summary += fmt::format("witness {:.1e}+-{:.1e} ", e.value, e.stderr_);
  }
  if (o.pass) o.detail = summary;
  return o;
}

Outcome jacobian_law() {
  Outcome o;
  const MomentSeq lim = jacobian_limit_moments(3, Activation::named("identity"), 1.0, {}, 4);
  const double fuss[] = {1, 3, 12, 55};
  for (int k = 1; k <= 4; ++k) o.require(std::abs(lim.at(k) - fuss[k - 1]) <= 1e-9 * fuss[k - 1], fmt::format("limit m{}", k));
  RunConfig cfg;
  cfg.n = {1024};
  cfg.seeds = 8;
  cfg.k_max = 3;
  cfg.tol = 0.10;
  const Report linear = run_jacobian(3, "identity", 1.0, cfg);
  o.require(linear.pass, "linear L=3 finite moments");
  const MomentSeq relu = jacobian_limit_moments(2, Activation::named("relu"), 1.0, {}, 1);
  o.require(std::abs(relu.at(1) - 0.5) <= 1e-9, fmt::format("relu limit m1 {:.6f}", relu.at(1)));
  cfg.k_max = 1;
  const Report r = run_jacobian(2, "relu", 1.0, cfg);
  o.require(r.pass, "relu L=2 finite m1");
  if (o.pass) o.detail = "linear L=3 within 10% for k<=3, relu m1 limit 0.5 and finite within 10%";
  return o;
}

Outcome free_kernel() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  const auto gap = [&](const MomentSeq& a, const MomentSeq& b) {
    for (int k = 1; k <= a.order(); ++k)
      worst = std::max(worst, std::abs(a.at(k) - b.at(k)) / std::max(1.0, std::abs(b.at(k))));
  };
  for (int i = 0; i < 100; ++i) {
    const MomentSeq m = random_moments(rng, 8);
    gap(moments_from_s(s_transform(m), 8), m);
  }
  for (int i = 0; i < 100; ++i) {
    const int K = 1 + i % 8;
    const MomentSeq a = random_moments(rng, K), b = random_moments(rng, K), c = random_moments(rng, K);
    gap(free_mul_conv(a, b, K), free_mul_conv(b, a, K));
    gap(free_mul_conv(free_mul_conv(a, b, K), c, K), free_mul_conv(a, free_mul_conv(b, c, K), K));
    gap(free_mul_conv(a, point_mass_moments(1.0, K), K), a);
  }
  o.require(worst <= 1e-9, fmt::format("worst relative error {:.2e}", worst));
  if (o.pass) o.detail = fmt::format("worst relative error {:.1e}", worst);
  return o;
}

Outcome numerical_utilities() {
  Outcome o;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g;
  double penrose = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int r = 1 + static_cast<int>(rng() % 12), c = 1 + static_cast<int>(rng() % 12);
    const int rank = static_cast<int>(rng() % static_cast<std::uint64_t>(std::min(r, c) + 1));
    Eigen::MatrixXd u(r, rank), v(rank, c);
    for (int i = 0; i < u.size(); ++i) u.data()[i] = g(rng);
    for (int i = 0; i < v.size(); ++i) v.data()[i] = g(rng);
    const Eigen::MatrixXd a = u * v, p = pseudoinverse(a);
    const double na = std::max(1e-300, a.norm()), np = std::max(1e-300, p.norm());
    penrose = std::max({penrose, (a * p * a - a).norm() / na, (p * a * p - p).norm() / np,
                        (a * p - (a * p).transpose()).norm() / std::max(1.0, (a * p).norm()),
                        (p * a - (p * a).transpose()).norm() / std::max(1.0, (p * a).norm())});
  }
  o.require(penrose <= 1e-10, fmt::format("Penrose {:.2e}", penrose));

  const std::vector<std::string> phis = {"x1", "x1^2", "step(x1)", "tanh(x1)", "clamp(relu(x1), 0, 1)"};
  int misses = 0;
  for (double rho : {-0.9, -0.5, 0.0, 0.5, 0.9}) {
    const LimitState s = compute_limit(parse_program(fmt::format("vector a : n\nvector b : n\ncov a b {}\n", rho)), ensemble());
    for (const auto& f : phis)
      for (const auto& h : phis) {
        std::string h2 = h;
        for (std::size_t i = 0; (i = h2.find("x1", i)) != std::string::npos; i += 2) h2[i + 1] = '2';
        const Estimate e = s.expect(parse_expr("(" + f + ") * (" + h2 + ")"), {"a", "b"});
        const double oracle = hermite_pair_expectation(parse_expr(f), parse_expr(h), rho, 200).value;
        if (std::abs(e.value - oracle) > 3 * e.stderr_ + 1e-9) ++misses;
      }
  }
  o.require(misses == 0, fmt::format("{} Hermite grid misses", misses));

  const LimitState semi = compute_limit(bundled("semicircle.ntp"), ensemble());
  const auto corr = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
    return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  };
  // Deviations in units of 6 / sqrt(replicate size).
  double cov_dev = 0.0, cross = 0.0;
  const double tol = 1.0;
  for (const HatEnsemble& ens : semi.ensembles()) {
    const double unit = 6 / std::sqrt(static_cast<double>(ens.samples()));
    for (const auto& f : ens.families()) {
      const double scale = std::max(1.0, f.cov.diagonal().maxCoeff());
      for (std::size_t i = 0; i < f.columns.size(); ++i)
        for (std::size_t j = 0; j < f.columns.size(); ++j)
          cov_dev = std::max(cov_dev, std::abs(ens.column(f.columns[i]).dot(ens.column(f.columns[j])) / ens.samples() - f.cov(i, j)) / scale / unit);
    }
    const auto& fam = ens.families();
    for (std::size_t a = 0; a < fam.size(); ++a)
      for (std::size_t b = a + 1; b < fam.size(); ++b)
        for (std::size_t i : fam[a].columns)
          for (std::size_t j : fam[b].columns) cross = std::max(cross, std::abs(corr(ens.column(i), ens.column(j))) / unit);
  }
  o.require(cov_dev <= tol && cross <= tol, fmt::format("ensemble cov {:.2f} cross {:.2f} of 6/sqrt(N)", cov_dev, cross));
  if (o.pass)
    o.detail = fmt::format("Penrose {:.1e}; 125/125 Hermite cells; {} replicates, worst cov {:.2f} and cross {:.2f} of 6/sqrt(N)",
                           penrose, semi.batches(), cov_dev, cross);
  return o;
}

Outcome tooling() {
  Outcome o;
  std::mt19937_64 rng(31);
  int failures = 0;
  for (int i = 0; i < 50; ++i) {
    const Program p = parse_program(random_program(rng));
    const std::string text = print_program(p);
    if (!(parse_program(text) == p) || print_program(parse_program(text)) != text) ++failures;
  }
  o.require(failures == 0, fmt::format("{} round-trip failures", failures));

  RunConfig one;
  one.n = {128, 256};
  one.seeds = 8;
  one.ensemble = 20000;
  RunConfig many = one;
  many.threads = 8;
  const Program semi = bundled("semicircle.ntp");
  const TestSpec t{{"z0", "z4"}, "x1 * x2"};
  const auto cases = read_manifest(std::string(NTP_PROGRAMS_DIR) + "/verify.manifest");
  const Program fip = bundled("fip.ntp");
  const AlternatingWord word = bundled_word("fip_sym_mixed.word");
  RunConfig hutch = one;
  hutch.method = TraceMethod::hutchinson(64);
  RunConfig hutch8 = hutch;
  hutch8.threads = 8;
  const std::vector<std::pair<std::string, std::function<std::string(const RunConfig&)>>> runs = {
      {"sim", [&](const RunConfig& c) { return run_sim(semi, t, std::nullopt, c).csv; }},
      {"sim-word", [&](const RunConfig& c) { return run_sim(semi, std::nullopt, single("mat W + W^T"), c).csv; }},
      {"verify", [&](const RunConfig& c) { return run_verify(cases, c).csv; }},
      {"free", [&](const RunConfig& c) { return run_free(fip, word, c).csv; }},
      {"jacobian", [&](const RunConfig& c) { return run_jacobian(3, "tanh", 1.0, c).csv; }},
  };
  for (const auto& [name, run] : runs) {
    o.require(run(one) == run(many), name + " differs across thread counts");
    o.require(run(hutch) == run(hutch8), name + " (hutch) differs across thread counts");
  }
  if (o.pass) o.detail = "50/50 fuzz programs round-trip; sim/verify/free/jacobian CSVs identical for 1 and 8 threads";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"semicircle law", semicircle_law},
      {"Marchenko-Pastur moments", marchenko_pastur},
      {"ZDot exactness", zdot_exactness},
      {"gradient-independence break", gia_break},
      {"Master Theorem sweep", master_theorem},
      {"free independence", free_independence},
      {"Jacobian law", jacobian_law},
      {"free-probability kernels", free_kernel},
      {"numerical utilities", numerical_utilities},
      {"tooling determinism", tooling},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = error_row(e);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("[%s] %2zu %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
