#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "ntp/commands.hpp"
#include "ntp/dsl.hpp"
#include "ntp/error.hpp"

using namespace ntp;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

WordPoly single_factor(const AlternatingWord& w) {
  if (w.factors.size() != 1) throw Error(ErrorKind::InvalidArgument, "sim expects a word file with one factor");
  return w.factors.front().poly;
}

struct Flags {
  RunConfig cfg;
  std::string method;
  std::string out;
  std::string program;
  std::string vectors;
  std::string psi;
  std::string word;
  std::string manifest;
};

void add_sweep(CLI::App* app, Flags& f) {
  app->add_option("--n", f.cfg.n, "Widths, comma separated")->delimiter(',');
  app->add_option("--seeds", f.cfg.seeds, "Seeds per width");
  app->add_option("--seed", f.cfg.seed, "First seed");
  app->add_option("--threads", f.cfg.threads, "Worker threads");
}

void add_test(CLI::App* app, Flags& f) {
  app->add_option("--vectors", f.vectors, "Vectors fed to the test function, comma separated");
  app->add_option("--psi", f.psi, "Test function over x1, x2, ...");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor-program limits and finite-width simulation"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--out", f.out, "Write CSV here instead of stdout");
  app.add_option("--tol", f.cfg.tol, "Tolerance for pass/fail checks");
  app.add_option("--method", f.method, "Trace method: exact or hutch:<probes>");

  auto* sim = app.add_subcommand("sim", "Finite-width statistics over a seed sweep");
  sim->add_option("program", f.program)->required();
  add_sweep(sim, f);
  add_test(sim, f);
  sim->add_option("--word", f.word, "Word file with one factor; reports trace moments");
  sim->add_option("--k", f.cfg.k_max, "Highest trace moment");

  auto* limit = app.add_subcommand("limit", "Infinite-width limit report");
  limit->add_option("program", f.program)->required();
  limit->add_option("--ensemble", f.cfg.ensemble, "Monte-Carlo ensemble size");
  limit->add_option("--seed", f.cfg.seed, "Ensemble seed");
  add_test(limit, f);

  auto* verify = app.add_subcommand("verify", "Finite-width averages against the limit");
  verify->add_option("program", f.program);
  verify->add_option("--manifest", f.manifest, "Manifest of program/test pairs");
  verify->add_option("--ensemble", f.cfg.ensemble, "Monte-Carlo ensemble size");
  add_sweep(verify, f);
  add_test(verify, f);

  std::string law_name;
  double rho = 1.0;
  int rmax = 8;
  int points = 0;
  auto* law = app.add_subcommand("law", "Moments or density of a limit law");
  law->add_option("law", law_name, "semicircle or mp")->required();
  law->add_option("--rho", rho, "Marchenko-Pastur ratio");
  law->add_option("--rmax", rmax, "Highest moment");
  law->add_option("--density", points, "Tabulate the density on this many points instead");

  auto* free = app.add_subcommand("free", "Centered alternating traces over a width sweep");
  free->add_option("program", f.program)->required();
  free->add_option("--word", f.word, "Word file")->required();
  add_sweep(free, f);

  int layers = 2;
  std::string act = "relu";
  double q1 = 1.0;
  auto* jac = app.add_subcommand("jacobian", "MLP Jacobian moments, finite width against the limit");
  jac->add_option("--L", layers, "Depth");
  jac->add_option("--act", act, "identity, relu or tanh");
  jac->add_option("--q1", q1, "Variance of the first hidden layer");
  jac->add_option("--k", f.cfg.k_max, "Highest moment");
  jac->add_option("--trunc", f.cfg.trunc, "Series truncation order");
  add_sweep(jac, f);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!f.method.empty()) f.cfg.method = TraceMethod::parse(f.method);
    const auto test = [&]() -> std::optional<TestSpec> {
      if (f.vectors.empty() && f.psi.empty()) return std::nullopt;
      if (f.vectors.empty() || f.psi.empty())
        throw Error(ErrorKind::InvalidArgument, "--vectors and --psi go together");
      return TestSpec{split(f.vectors), f.psi};
    };
    Report rep;
    if (*sim) {
      const Program p = parse_program(slurp(f.program));
      std::optional<WordPoly> word;
      if (!f.word.empty()) word = single_factor(parse_word(slurp(f.word)));
      rep = run_sim(p, test(), word, f.cfg);
    } else if (*limit) {
      std::vector<TestSpec> tests;
      if (auto t = test()) tests.push_back(*t);
      rep = run_limit(parse_program(slurp(f.program)), tests, f.cfg);
    } else if (*verify) {
      std::vector<VerifyCase> cases;
      if (!f.manifest.empty()) cases = read_manifest(f.manifest);
      if (!f.program.empty()) {
        auto t = test();
        if (!t) throw Error(ErrorKind::InvalidArgument, "verify on a program needs --vectors and --psi");
        cases.push_back({f.program + ":" + f.psi, parse_program(slurp(f.program)), *t});
      }
      if (cases.empty()) throw Error(ErrorKind::InvalidArgument, "nothing to verify");
      rep = run_verify(cases, f.cfg);
    } else if (*law) {
      rep = points > 0 ? run_law_density(law_name, rho, points) : run_law_moments(law_name, rho, rmax);
    } else if (*free) {
      rep = run_free(parse_program(slurp(f.program)), parse_word(slurp(f.word)), f.cfg);
    } else if (*jac) {
      rep = run_jacobian(layers, act, q1, f.cfg);
    }
    if (f.out.empty()) {
      std::cout << rep.csv;
    } else {
      std::ofstream out(f.out);
      out << rep.csv;
      if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + f.out);
    }
    return rep.pass ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << error_row(e) << '\n';
    return 2;
  }
}
