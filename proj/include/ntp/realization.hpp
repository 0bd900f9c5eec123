#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntp/program.hpp"

namespace ntp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Concrete size of every CDC. `base` is the width n used for finite-n scalar
/// rules.
struct DimAssignment {
  int base = 0;
  std::map<std::string, int> dims;  // CDC id -> size

  int at(const std::string& cdc) const;
};

/// dim = round(ratio * n) per class.
DimAssignment dims_for(const Program& program, int n);

struct ExecOptions {
  int max_dim = 8192;    // larger classes are refused (memory policy)
  int exact_cap = 2048;  // materialized products / eigendecompositions
  int threads = 1;
};

/// One finite-n sample of a program: matrices, initial vectors and every
/// instruction output.
class Realization {
 public:
  std::uint64_t seed() const { return seed_; }
  const DimAssignment& dims() const { return dims_; }
  const Program& program() const { return *program_; }

  const RowMatrix& matrix(const std::string& name) const;
  const Eigen::VectorXd& vector(const std::string& name) const;
  double scalar(const std::string& name) const;

  int dim_of_vector(const std::string& name) const;
  int dim_of_label(const std::string& label) const;

 private:
  friend Realization instantiate(const Program&, const DimAssignment&, std::uint64_t,
                                 const ExecOptions&);

  std::uint64_t seed_ = 0;
  DimAssignment dims_;
  std::shared_ptr<const Program> program_;
  std::map<std::string, RowMatrix> matrices_;
  std::map<std::string, Eigen::VectorXd> vectors_;
  std::map<std::string, double> scalars_;
};

/// Samples W_ab ~ N(0, sigma2/cols) and the initial Gaussian blocks, then runs
/// the instructions in order. Deterministic in (program, dims, seed).
///
/// Errors: InvalidArgument (missing class), CapExceeded (dimension above
/// options.max_dim).
Realization instantiate(const Program& program, const DimAssignment& dims, std::uint64_t seed,
                        const ExecOptions& options = {});

/// (1/n) sum_a psi(v1_a, ..., vk_a). Errors: DimClassConflict, ArityMismatch.
double empirical_average(const Realization& r, const NonlinExpr& psi,
                         const std::vector<std::string>& vectors);

}  // namespace ntp
