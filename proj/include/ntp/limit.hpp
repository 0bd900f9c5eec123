#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntp/program.hpp"
#include "ntp/parallel.hpp"

namespace ntp {

/// Moore-Penrose pseudoinverse by SVD; singular values below
/// rel_tol * sigma_max count as zero.
Eigen::MatrixXd pseudoinverse(const Eigen::MatrixXd& m, double rel_tol = 1e-9);

struct LimitOptions {
  int ensemble = 200000;
  std::uint64_t seed = 0;
  double pinv_tol = 1e-9;
  // The ensemble is split into this many independent replicates (at most
  // ensemble / 200), each with its own hat conditioning and ZDot fit.
  // Standard errors come from the spread of replicate means, so they include
  // the error of every fitted coefficient.
  int batches = 32;
};

enum class Direction { Forward, Transpose };

/// Hat variables produced by one matrix in one direction; jointly Gaussian,
/// independent of every other family.
struct HatFamily {
  std::string matrix;
  Direction direction = Direction::Forward;
  double sigma2 = 1.0;                // effective variance
  std::vector<std::string> inputs;    // MatMul inputs, introduction order
  std::vector<std::string> outputs;   // matching MatMul outputs
  std::vector<std::size_t> columns;   // ensemble column of each hat
  Eigen::MatrixXd cov;                // target covariance of the hats
};

/// Joint Monte-Carlo sample of all initial Gaussians and hat variables.
class HatEnsemble {
 public:
  HatEnsemble() = default;
  HatEnsemble(int samples, std::uint64_t seed) : samples_(samples), seed_(seed) {}

  int samples() const { return samples_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return columns_.size(); }
  const Eigen::VectorXd& column(std::size_t i) const { return columns_.at(i); }
  const std::vector<HatFamily>& families() const { return families_; }
  const HatFamily* family(const std::string& matrix, Direction dir) const;

  std::size_t add_column(Eigen::VectorXd column);
  HatFamily& family_for(const std::string& matrix, Direction dir, double sigma2);

  struct Extension {
    std::size_t column = 0;
    double conditional_variance = 0.0;
    bool degenerate = false;
  };

  /// Appends a hat to `family` with covariance row `c` against the existing
  /// members and variance `v`, by Gaussian conditioning on the sampled
  /// members. Errors: NonPSDExtension.
  Extension hat_extend(HatFamily& family, const Eigen::VectorXd& c, double v, double pinv_tol);

 private:
  int samples_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<Eigen::VectorXd> columns_;
  std::vector<HatFamily> families_;
};

/// Limit random variable of a vector, as built by the Z rules.
struct ZNode {
  enum class Kind { InitGaussian, GVarSum, NonlinApp };
  Kind kind = Kind::InitGaussian;
  std::size_t hat_column = 0;  // InitGaussian and GVarSum; same in every replicate
  std::string family;          // GVarSum: "W" or "W^T"
  std::vector<std::pair<std::string, double>> dot;  // GVarSum corrections, replicate mean
};

struct ZDotCoefficient {
  std::string gvar;
  std::string y;
  double value = 0.0;
  double stderr_ = 0.0;
};

struct Diagnostic {
  std::string kind;  // e.g. DegenerateGVar
  std::string object;
  std::string message;
};

/// Infinite-width limit of a program, built instruction by instruction.
/// Samples of all replicates are concatenated in replicate order.
class LimitState {
 public:
  LimitState(const Program& program, LimitOptions options = {});

  const Program& program() const { return program_; }
  std::size_t position() const { return position_; }
  bool done() const { return position_ == program_.instructions().size(); }

  /// Processes the next instruction.
  void advance();
  void run();

  /// Samples of Z^v.
  const Eigen::VectorXd& samples(const std::string& vector) const;
  const ZNode& node(const std::string& vector) const;

  /// Monte-Carlo mean and stderr of psi over the named vectors.
  /// Errors: DimClassConflict, ArityMismatch, UnknownSymbol.
  Estimate expect(const NonlinExpr& psi, const std::vector<std::string>& vectors) const;
  Estimate scalar_limit(const std::string& name) const;

  const std::vector<ZDotCoefficient>& zdot() const { return zdot_; }
  std::vector<ZDotCoefficient> zdot_of(const std::string& gvar) const;
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }
  int batches() const { return static_cast<int>(ensembles_.size()); }
  const std::vector<HatEnsemble>& ensembles() const { return ensembles_; }
  const HatEnsemble& ensemble(int batch = 0) const { return ensembles_.at(static_cast<std::size_t>(batch)); }

 private:
  void matmul(const MatMul& mm);
  Eigen::VectorXd evaluate(const NonlinExpr& e, const std::vector<std::string>& inputs,
                           const std::vector<std::string>& params) const;
  Estimate estimate(const Eigen::VectorXd& values) const;
  Eigen::Index batch_begin(std::size_t b) const;
  Eigen::Index batch_size(std::size_t b) const { return batch_begin(b + 1) - batch_begin(b); }

  Program program_;
  LimitOptions options_;
  std::size_t batches_ = 1;
  std::size_t position_ = 0;
  std::vector<HatEnsemble> ensembles_;
  std::map<std::string, ZNode> nodes_;
  std::map<std::string, Eigen::VectorXd> samples_;
  std::map<std::string, Estimate> scalars_;
  std::map<std::string, std::vector<double>> scalar_batches_;  // per-replicate values
  std::vector<ZDotCoefficient> zdot_;
  std::vector<Diagnostic> diagnostics_;
};

/// Builds the full limit of a program.
LimitState compute_limit(const Program& program, LimitOptions options = {});

}  // namespace ntp
