#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ntp/freeness.hpp"
#include "ntp/program.hpp"
#include "ntp/word.hpp"

namespace ntp {

/// Experiment settings shared by the report commands.
struct RunConfig {
  std::vector<int> n{256, 1024, 4096};
  int seeds = 8;
  std::uint64_t seed = 0;  // first seed of a sweep, ensemble seed of a limit
  int ensemble = 200000;
  int trunc = 0;           // series / Hermite order; 0 picks a default
  double tol = 0.05;
  std::optional<TraceMethod> method;
  int threads = 1;
  int k_max = 4;
};

/// CSV text of one command plus the outcome of its tolerance checks.
struct Report {
  std::string csv;
  bool pass = true;
};

/// A test function over named vectors.
struct TestSpec {
  std::vector<std::string> vectors;
  std::string expr;
};

/// stat,n,seed,value,stderr. Either the test function's empirical average
/// or the normalized trace moments 1..k_max of `word` (one factor), per seed
/// and pooled over seeds (seed column "all").
Report run_sim(const Program& program, const std::optional<TestSpec>& test,
               const std::optional<WordPoly>& word, const RunConfig& cfg);

/// object,kind,value,stderr: scalars, second moments of every vector, ZDot
/// coefficients (object zdot:<gvar>:<y>), diagnostics, and optional tests.
Report run_limit(const Program& program, const std::vector<TestSpec>& tests, const RunConfig& cfg);

/// One program / test pair of a verify sweep.
struct VerifyCase {
  std::string label;
  Program program;
  TestSpec test;
};

/// Reads `<program> <v1,v2,..> <expr>` lines; program paths are relative to
/// the manifest.
std::vector<VerifyCase> read_manifest(const std::string& path);

/// test,n,seeds,empirical,limit,limit_stderr,rel_gap,pass. The gap at each n
/// is the seed mean of |empirical - limit| / max(1, |limit|). A case passes
/// when its final gap is within max(3 stderr, tol) and has not grown since
/// the first n (unless it is already within 3 stderr).
Report run_verify(const std::vector<VerifyCase>& cases, const RunConfig& cfg);

/// law,param,r,value for r = 1..rmax. `law` is semicircle or mp.
Report run_law_moments(const std::string& law, double param, int rmax);

/// x,density on `points` equispaced interior points of the support, plus an
/// `atom` row for the MP point mass when rho > 1.
Report run_law_density(const std::string& law, double param, int points);

/// n,seed_count,median_abs,mean_abs,std then `# slope=<value>`.
Report run_free(const Program& program, const AlternatingWord& word, const RunConfig& cfg);

/// k,empirical,limit,rel_gap at the last n of the config, pooled over seeds.
/// rel_gap is relative to the limit moment; passes when every gap is within tol.
Report run_jacobian(int L, const std::string& activation, double q1, const RunConfig& cfg);

/// `error,kind,line,col,message` row for an exception.
std::string error_row(const std::exception& e);

std::string format_number(double v);

}  // namespace ntp
