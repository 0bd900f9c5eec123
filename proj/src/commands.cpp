#include "ntp/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "ntp/dsl.hpp"
#include "ntp/error.hpp"
#include "ntp/laws.hpp"
#include "ntp/limit.hpp"
#include "ntp/parallel.hpp"
#include "ntp/realization.hpp"

namespace ntp {

namespace {

void check_config(const RunConfig& cfg) {
  if (cfg.n.empty()) throw Error(ErrorKind::InvalidArgument, "empty n list");
  for (std::size_t i = 0; i < cfg.n.size(); ++i) {
    if (cfg.n[i] <= 0) throw Error(ErrorKind::InvalidArgument, "n must be positive");
    if (i > 0 && cfg.n[i] <= cfg.n[i - 1]) throw Error(ErrorKind::InvalidArgument, "n list must be ascending");
  }
  if (cfg.seeds <= 0) throw Error(ErrorKind::InvalidArgument, "seeds must be positive");
  if (cfg.ensemble <= 1) throw Error(ErrorKind::InvalidArgument, "ensemble must exceed 1");
  if (cfg.k_max <= 0) throw Error(ErrorKind::InvalidArgument, "k must be positive");
  if (!(cfg.tol > 0)) throw Error(ErrorKind::InvalidArgument, "tol must be positive");
}

ExecOptions exec_options(int threads) {
  ExecOptions o;
  o.threads = threads;
  return o;
}

LimitOptions limit_options(const RunConfig& cfg) {
  LimitOptions o;
  o.ensemble = cfg.ensemble;
  o.seed = cfg.seed;
  return o;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string test_label(const TestSpec& t) { return t.expr + "[" + join(t.vectors, ";") + "]"; }

// Runs body(seed_index) for every seed; inner work stays single-threaded so
// the result never depends on the worker count.
template <class T, class Body>
std::vector<T> per_seed(int seeds, int threads, Body&& body) {
  std::vector<T> out(static_cast<std::size_t>(seeds));
  parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = body(i); });
  return out;
}

TraceMethod default_method(int n) {
  return n <= kFreenessExactUpTo ? TraceMethod::exact() : TraceMethod::hutchinson(32);
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.10g}", v);
}

std::string error_row(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e))
    return fmt::format("error,{},{},{},{}", to_string(err->kind()), err->line(), err->col(), quote(err->what()));
  return fmt::format("error,Internal,0,0,{}", quote(e.what()));
}

Report run_sim(const Program& program, const std::optional<TestSpec>& test,
               const std::optional<WordPoly>& word, const RunConfig& cfg) {
  check_config(cfg);
  if (test.has_value() == word.has_value())
    throw Error(ErrorKind::InvalidArgument, "sim needs exactly one of a test function or a word");
  const std::optional<NonlinExpr> psi = test ? std::optional(parse_expr(test->expr)) : std::nullopt;
  Report rep;
  rep.csv = "stat,n,seed,value,stderr\n";
  for (int n : cfg.n) {
    const TraceMethod method = cfg.method.value_or(default_method(n));
    const auto results = per_seed<std::vector<Estimate>>(cfg.seeds, cfg.threads, [&](std::size_t i) {
      const Realization r =
          instantiate(program, dims_for(program, n), cfg.seed + i, exec_options(1));
      if (psi) return std::vector<Estimate>{{empirical_average(r, *psi, test->vectors), 0.0}};
      return spectral_moments(r, *word, cfg.k_max, method, exec_options(1));
    });
    const std::size_t stats = results.front().size();
    for (std::size_t k = 0; k < stats; ++k) {
      const std::string stat = psi ? quote(test_label(*test)) : fmt::format("moment{}", k + 1);
      std::vector<double> values;
      for (std::size_t i = 0; i < results.size(); ++i) {
        const Estimate& e = results[i][k];
        values.push_back(e.value);
        const std::string se = psi || method.kind == TraceMethod::Kind::Exact ? "" : format_number(e.stderr_);
        rep.csv += fmt::format("{},{},{},{},{}\n", stat, n, cfg.seed + i, format_number(e.value), se);
      }
      const Estimate pooled = mean_stderr(values);
      rep.csv += fmt::format("{},{},all,{},{}\n", stat, n, format_number(pooled.value),
                             format_number(pooled.stderr_));
    }
  }
  return rep;
}

Report run_limit(const Program& program, const std::vector<TestSpec>& tests, const RunConfig& cfg) {
  check_config(cfg);
  const LimitState s = compute_limit(program, limit_options(cfg));
  Report rep;
  rep.csv = "object,kind,value,stderr\n";
  const auto row = [&](const std::string& object, const std::string& kind, const Estimate& e) {
    rep.csv += fmt::format("{},{},{},{}\n", quote(object), kind, format_number(e.value), format_number(e.stderr_));
  };
  for (const auto& name : program.scalars()) row(name, "scalar", s.scalar_limit(name));
  for (const auto& name : program.vectors()) row(name, "second_moment", s.expect(expr::square(), {name}));
  for (const auto& c : s.zdot()) row("zdot:" + c.gvar + ":" + c.y, "zdot", {c.value, c.stderr_});
  for (const auto& t : tests) row(test_label(t), "expect", s.expect(parse_expr(t.expr), t.vectors));
  for (const auto& d : s.diagnostics())
    rep.csv += fmt::format("{},{},,{}\n", quote(d.object), d.kind, quote(d.message));
  return rep;
}

std::vector<VerifyCase> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + path);
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  std::map<std::string, Program> programs;
  std::vector<VerifyCase> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string file, vectors;
    if (!(ss >> file)) continue;
    if (!(ss >> vectors)) throw SyntaxError(lineno, 1, "expected a vector list");
    std::string expr;
    std::getline(ss, expr);
    expr.erase(0, expr.find_first_not_of(" \t"));
    expr.erase(expr.find_last_not_of(" \t\r") + 1);
    if (expr.empty()) throw SyntaxError(lineno, 1, "expected a test function");
    if (!programs.count(file)) {
      std::ifstream pf(dir / file);
      if (!pf) throw Error(ErrorKind::InvalidArgument, "cannot open " + (dir / file).string(), lineno, 1);
      std::stringstream text;
      text << pf.rdbuf();
      programs.emplace(file, parse_program(text.str()));
    }
    VerifyCase c;
    c.program = programs.at(file);
    std::stringstream vs(vectors);
    for (std::string v; std::getline(vs, v, ',');) c.test.vectors.push_back(v);
    c.test.expr = expr;
    c.label = file + ":" + test_label(c.test);
    out.push_back(std::move(c));
  }
  return out;
}

Report run_verify(const std::vector<VerifyCase>& cases, const RunConfig& cfg) {
  check_config(cfg);
  Report rep;
  rep.csv = "test,n,seeds,empirical,limit,limit_stderr,rel_gap,pass\n";
  // Cases sharing a program share its realizations and its limit.
  std::vector<std::string> rows(cases.size());
  std::vector<bool> done(cases.size(), false);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (done[i]) continue;
    std::vector<std::size_t> group;
    for (std::size_t j = i; j < cases.size(); ++j)
      if (!done[j] && cases[j].program == cases[i].program) {
        group.push_back(j);
        done[j] = true;
      }
    const Program& program = cases[i].program;
    const LimitState limit = compute_limit(program, limit_options(cfg));
    std::vector<NonlinExpr> psis;
    std::vector<Estimate> lims;
    for (std::size_t j : group) {
      psis.push_back(parse_expr(cases[j].test.expr));
      lims.push_back(limit.expect(psis.back(), cases[j].test.vectors));
    }
    std::vector<std::vector<double>> gaps(group.size());
    for (int n : cfg.n) {
      const auto values = per_seed<std::vector<double>>(cfg.seeds, cfg.threads, [&](std::size_t s) {
        const Realization r = instantiate(program, dims_for(program, n), cfg.seed + s, exec_options(1));
        std::vector<double> v;
        for (std::size_t g = 0; g < group.size(); ++g)
          v.push_back(empirical_average(r, psis[g], cases[group[g]].test.vectors));
        return v;
      });
      for (std::size_t g = 0; g < group.size(); ++g) {
        const double l = lims[g].value, scale = std::max(1.0, std::abs(l));
        std::vector<double> emp, gap;
        for (const auto& v : values) {
          emp.push_back(v[g]);
          gap.push_back(std::abs(v[g] - l) / scale);
        }
        const double mean_gap = pairwise_mean(gap);
        gaps[g].push_back(mean_gap);
        const double noise = 3 * lims[g].stderr_ / scale;
        const bool last = n == cfg.n.back();
        bool pass = mean_gap <= std::max(noise, cfg.tol);
        if (last) pass = pass && (mean_gap <= gaps[g].front() || mean_gap <= noise);
        if (last && !pass) rep.pass = false;
        rows[group[g]] += fmt::format("{},{},{},{},{},{},{},{}\n", quote(cases[group[g]].label), n, cfg.seeds,
                                      format_number(pairwise_mean(emp)), format_number(l),
                                      format_number(lims[g].stderr_), format_number(mean_gap),
                                      last ? (pass ? "pass" : "fail") : (pass ? "ok" : "-"));
      }
    }
  }
  for (const auto& r : rows) rep.csv += r;
  return rep;
}

namespace {

Law law_named(const std::string& law, double param) {
  if (law == "semicircle") return Law::semicircle();
  if (law == "mp") return Law::mp(param);
  throw Error(ErrorKind::InvalidArgument, "unknown law '" + law + "' (semicircle, mp)");
}

}  // namespace

Report run_law_moments(const std::string& law, double param, int rmax) {
  if (rmax < 1) throw Error(ErrorKind::InvalidArgument, "rmax must be positive");
  const Law l = law_named(law, param);
  Report rep;
  rep.csv = "law,param,r,value\n";
  const std::string p = l.kind == Law::Kind::Semicircle ? "" : format_number(param);
  for (int r = 1; r <= rmax; ++r)
    rep.csv += fmt::format("{},{},{},{}\n", law, p, r, format_number(l.moment(r)));
  return rep;
}

Report run_law_density(const std::string& law, double param, int points) {
  if (points < 1) throw Error(ErrorKind::InvalidArgument, "points must be positive");
  const Law l = law_named(law, param);
  Report rep;
  rep.csv = "x,density\n";
  const double lo = l.lower(), hi = l.upper();
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * (i + 0.5) / points;
    rep.csv += fmt::format("{},{}\n", format_number(x), format_number(law_density(l, x).density));
  }
  const double atom = law_density(l, 0.0).atom;
  if (atom > 0) rep.csv += fmt::format("# atom at 0: {}\n", format_number(atom));
  return rep;
}

Report run_free(const Program& program, const AlternatingWord& word, const RunConfig& cfg) {
  check_config(cfg);
  const FreenessReport fr = freeness_sweep(program, word, cfg.n, cfg.seeds, cfg.seed, cfg.method,
                                           exec_options(cfg.threads));
  Report rep;
  rep.csv = "n,seed_count,median_abs,mean_abs,std\n";
  for (const auto& r : fr.rows)
    rep.csv += fmt::format("{},{},{},{},{}\n", r.n, r.seed_count, format_number(r.median_abs),
                           format_number(r.mean_abs), format_number(r.std));
  rep.csv += fmt::format("# slope={}\n", format_number(fr.slope));
  return rep;
}

Report run_jacobian(int L, const std::string& activation, double q1, const RunConfig& cfg) {
  check_config(cfg);
  if (L < 2) throw Error(ErrorKind::InvalidArgument, "L must be at least 2");
  const Activation act = Activation::named(activation);
  const int K = std::max(cfg.trunc, cfg.k_max);
  const MomentSeq limit = jacobian_limit_moments(L, act, q1, {}, K);
  const int n = cfg.n.back();
  const TraceMethod method = cfg.method.value_or(default_method(n));
  const auto runs = per_seed<std::vector<Estimate>>(cfg.seeds, cfg.threads, [&](std::size_t s) {
    return jacobian_finite(L, n, act, q1, cfg.seed + s, cfg.k_max, method, exec_options(1));
  });
  Report rep;
  rep.csv = "k,empirical,limit,rel_gap\n";
  for (int k = 1; k <= cfg.k_max; ++k) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r[static_cast<std::size_t>(k - 1)].value);
    const double emp = pairwise_mean(v), lim = limit.at(k);
    const double gap = std::abs(emp - lim) / std::abs(lim);
    if (gap > cfg.tol) rep.pass = false;
    rep.csv += fmt::format("{},{},{},{}\n", k, format_number(emp), format_number(lim), format_number(gap));
  }
  return rep;
}

}  // namespace ntp
