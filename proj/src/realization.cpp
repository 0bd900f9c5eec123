#include "ntp/realization.hpp"

#include <cmath>

#include <fmt/format.h>

#include "ntp/error.hpp"
#include "ntp/parallel.hpp"
#include "ntp/rng.hpp"

namespace ntp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

int DimAssignment::at(const std::string& cdc) const {
  auto it = dims.find(cdc);
  if (it == dims.end())
    throw Error(ErrorKind::InvalidArgument, fmt::format("no dimension assigned to class '{}'", cdc));
  return it->second;
}

DimAssignment dims_for(const Program& program, int n) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "width must be positive");
  DimAssignment d;
  d.base = n;
  for (const auto& c : program.classes())
    d.dims[c.id] = std::max(1, static_cast<int>(std::lround(c.ratio * n)));
  return d;
}

const RowMatrix& Realization::matrix(const std::string& name) const {
  auto it = matrices_.find(name);
  if (it == matrices_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("unknown matrix '{}'", name));
  return it->second;
}

const Eigen::VectorXd& Realization::vector(const std::string& name) const {
  auto it = vectors_.find(name);
  if (it == vectors_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("unknown vector '{}'", name));
  return it->second;
}

double Realization::scalar(const std::string& name) const {
  auto it = scalars_.find(name);
  if (it == scalars_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("unknown scalar '{}'", name));
  return it->second;
}

int Realization::dim_of_vector(const std::string& name) const {
  return dims_.at(program_->class_of_vector(name).id);
}

int Realization::dim_of_label(const std::string& label) const {
  return dims_.at(program_->class_of_label(label).id);
}

namespace {

// Coordinatewise evaluation shared by Nonlin and Moment.
Eigen::VectorXd eval_coordinatewise(const std::map<std::string, Eigen::VectorXd>& vectors,
                                    const std::map<std::string, double>& scalars,
                                    const NonlinExpr& e, const std::vector<std::string>& inputs,
                                    const std::vector<std::string>& params) {
  std::vector<std::span<const double>> cols;
  for (const auto& name : inputs) {
    const auto& v = vectors.at(name);
    cols.emplace_back(v.data(), static_cast<std::size_t>(v.size()));
  }
  std::vector<double> theta;
  for (const auto& s : params) theta.push_back(scalars.at(s));
  Eigen::VectorXd out(cols.front().size());
  e.eval_columns(cols, theta, std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

}  // namespace

Realization instantiate(const Program& program, const DimAssignment& dims, std::uint64_t seed,
                        const ExecOptions& options) {
  Realization r;
  r.seed_ = seed;
  r.dims_ = dims;
  r.program_ = std::make_shared<const Program>(program);
  for (const auto& c : program.classes()) {
    const int d = dims.at(c.id);
    if (d < 1) throw Error(ErrorKind::InvalidArgument, fmt::format("class '{}' has size {}", c.id, d));
    if (d > options.max_dim)
      throw Error(ErrorKind::CapExceeded,
                  fmt::format("class '{}' size {} exceeds the cap {}", c.id, d, options.max_dim));
  }

  for (const auto& m : program.matrices()) {
    const int rows = r.dim_of_label(m.rows);
    const int cols = r.dim_of_label(m.cols);
    RowMatrix w(rows, cols);
    NormalStream(seed, "matrix:" + m.name)
        .fill(std::span<double>(w.data(), static_cast<std::size_t>(w.size())),
              std::sqrt(m.sigma2 / cols));
    r.matrices_.emplace(m.name, std::move(w));
  }

  for (const auto& block : program.init_blocks()) {
    const int d = dims.at(block.cdc);
    const auto k = static_cast<Eigen::Index>(block.vectors.size());
    Eigen::MatrixXd xi(d, k);
    for (Eigen::Index j = 0; j < k; ++j)
      NormalStream(seed, "vector:" + block.vectors[j])
          .fill(std::span<double>(xi.col(j).data(), static_cast<std::size_t>(d)));
    const Eigen::MatrixXd x = xi * block.factor.transpose();
    for (Eigen::Index j = 0; j < k; ++j)
      r.vectors_.emplace(block.vectors[j], x.col(j).array() + block.mean(j));
  }

  for (const auto& s : program.init_scalars()) r.scalars_.emplace(s.name, s.rule.at(dims.base));

  for (const auto& instr : program.instructions()) {
    std::visit(overloaded{
                   [&](const MatMul& mm) {
                     const auto& w = r.matrices_.at(mm.matrix);
                     const auto& x = r.vectors_.at(mm.input);
                     Eigen::VectorXd y = mm.transposed ? Eigen::VectorXd(w.transpose() * x)
                                                       : Eigen::VectorXd(w * x);
                     r.vectors_.emplace(mm.output, std::move(y));
                   },
                   [&](const Nonlin& nl) {
                     r.vectors_.emplace(nl.output, eval_coordinatewise(r.vectors_, r.scalars_,
                                                                       nl.expr, nl.inputs,
                                                                       nl.params));
                   },
                   [&](const Moment& mo) {
                     const Eigen::VectorXd v =
                         eval_coordinatewise(r.vectors_, r.scalars_, mo.expr, mo.inputs, mo.params);
                     r.scalars_.emplace(mo.output,
                                        pairwise_mean({v.data(), static_cast<std::size_t>(v.size())}));
                   },
               },
               instr);
  }
  return r;
}

double empirical_average(const Realization& r, const NonlinExpr& psi,
                         const std::vector<std::string>& vectors) {
  if (static_cast<int>(vectors.size()) != psi.arity() || psi.param_arity() != 0)
    throw Error(ErrorKind::ArityMismatch,
                fmt::format("test function takes {} inputs, got {}", psi.arity(), vectors.size()));
  if (vectors.empty()) return psi.eval({}, {});
  const std::string& cls = r.program().class_of_vector(vectors.front()).id;
  std::vector<std::span<const double>> cols;
  for (const auto& name : vectors) {
    if (r.program().class_of_vector(name).id != cls)
      throw Error(ErrorKind::DimClassConflict,
                  fmt::format("'{}' and '{}' live in different classes", vectors.front(), name));
    const auto& v = r.vector(name);
    cols.emplace_back(v.data(), static_cast<std::size_t>(v.size()));
  }
  std::vector<double> out(cols.front().size());
  psi.eval_columns(cols, {}, out);
  return pairwise_mean(out);
}

}  // namespace ntp
