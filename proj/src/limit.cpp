#include "ntp/limit.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ntp/error.hpp"
#include "ntp/rng.hpp"

namespace ntp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double mean_product(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd p = a.cwiseProduct(b);
  return pairwise_mean({p.data(), static_cast<std::size_t>(p.size())});
}

std::string family_name(const std::string& matrix, Direction dir) {
  return dir == Direction::Forward ? matrix : matrix + "^T";
}

}  // namespace

Eigen::MatrixXd pseudoinverse(const Eigen::MatrixXd& m, double rel_tol) {
  if (m.size() == 0) return Eigen::MatrixXd::Zero(m.cols(), m.rows());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = rel_tol * (s.size() ? s(0) : 0.0);
  Eigen::MatrixXd inv_s = Eigen::MatrixXd::Zero(m.cols(), m.rows());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff && s(i) > 0.0) inv_s(i, i) = 1.0 / s(i);
  return svd.matrixV() * inv_s * svd.matrixU().transpose();
}

const HatFamily* HatEnsemble::family(const std::string& matrix, Direction dir) const {
  for (const auto& f : families_)
    if (f.matrix == matrix && f.direction == dir) return &f;
  return nullptr;
}

std::size_t HatEnsemble::add_column(Eigen::VectorXd column) {
  columns_.push_back(std::move(column));
  return columns_.size() - 1;
}

HatFamily& HatEnsemble::family_for(const std::string& matrix, Direction dir, double sigma2) {
  for (auto& f : families_)
    if (f.matrix == matrix && f.direction == dir) return f;
  HatFamily f;
  f.matrix = matrix;
  f.direction = dir;
  f.sigma2 = sigma2;
  families_.push_back(std::move(f));
  return families_.back();
}

HatEnsemble::Extension HatEnsemble::hat_extend(HatFamily& family, const Eigen::VectorXd& c,
                                               double v, double pinv_tol) {
  const auto k = static_cast<Eigen::Index>(family.columns.size());
  if (c.size() != k)
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("covariance row has length {}, family has {} members", c.size(), k));
  if (v < 0.0) throw Error(ErrorKind::NonPSDExtension, "negative variance for a new hat");

  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  double cond = v;
  if (k > 0) {
    Eigen::MatrixXd full(k + 1, k + 1);
    full.topLeftCorner(k, k) = family.cov;
    full.topRightCorner(k, 1) = c;
    full.bottomLeftCorner(1, k) = c.transpose();
    full(k, k) = v;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (full + full.transpose()),
                                                       Eigen::EigenvaluesOnly);
    const double scale = std::max(v, full.trace() / static_cast<double>(k + 1));
    if (eig.eigenvalues().minCoeff() < -1e-6 * scale)
      throw Error(ErrorKind::NonPSDExtension,
                  fmt::format("extended covariance has eigenvalue {}",
                              eig.eigenvalues().minCoeff()));
    const Eigen::MatrixXd sigma =
        repair_psd(family.cov, 1e-9 * std::max(1.0, family.cov.trace()));
    w = pseudoinverse(sigma, pinv_tol) * c;
    cond = v - c.dot(w);
  }
  Extension ext;
  ext.degenerate = !(cond > 1e-9 * v) || v <= 0.0;
  ext.conditional_variance = ext.degenerate ? 0.0 : cond;

  Eigen::VectorXd col = Eigen::VectorXd::Zero(samples_);
  for (Eigen::Index j = 0; j < k; ++j)
    if (w(j) != 0.0) col += w(j) * columns_[family.columns[static_cast<std::size_t>(j)]];
  if (ext.conditional_variance > 0.0) {
    Eigen::VectorXd xi(samples_);
    NormalStream(seed_, "hat:" + family_name(family.matrix, family.direction),
                 static_cast<std::uint64_t>(k))
        .fill({xi.data(), static_cast<std::size_t>(samples_)});
    col += std::sqrt(ext.conditional_variance) * xi;
  }

  Eigen::MatrixXd grown(k + 1, k + 1);
  grown.topLeftCorner(k, k) = family.cov;
  grown.topRightCorner(k, 1) = c;
  grown.bottomLeftCorner(1, k) = c.transpose();
  grown(k, k) = v;
  family.cov = std::move(grown);
  ext.column = add_column(std::move(col));
  family.columns.push_back(ext.column);
  return ext;
}

LimitState::LimitState(const Program& program, LimitOptions options)
    : program_(program), options_(options) {
  if (options.ensemble < 2) throw Error(ErrorKind::InvalidArgument, "ensemble needs >= 2 samples");
  const int n = options.ensemble;
  batches_ = static_cast<std::size_t>(std::max(1, std::min(options.batches, n / 200)));
  for (std::size_t b = 0; b < batches_; ++b) {
    const std::uint64_t seed = batches_ == 1 ? options.seed : stream_key(options.seed, "replicate", b);
    ensembles_.emplace_back(static_cast<int>(batch_size(b)), seed);
  }
  for (const auto& block : program_.init_blocks()) {
    const auto k = static_cast<Eigen::Index>(block.vectors.size());
    std::vector<Eigen::VectorXd> cols(static_cast<std::size_t>(k), Eigen::VectorXd(n));
    std::vector<std::size_t> column(static_cast<std::size_t>(k));
    for (std::size_t b = 0; b < batches_; ++b) {
      HatEnsemble& ens = ensembles_[b];
      const Eigen::Index len = batch_size(b);
      Eigen::MatrixXd xi(len, k);
      for (Eigen::Index j = 0; j < k; ++j)
        NormalStream(ens.seed(), "init:" + block.vectors[static_cast<std::size_t>(j)])
            .fill({xi.col(j).data(), static_cast<std::size_t>(len)});
      const Eigen::MatrixXd z = xi * block.factor.transpose();
      for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd col = z.col(j).array() + block.mean(j);
        cols[static_cast<std::size_t>(j)].segment(batch_begin(b), len) = col;
        column[static_cast<std::size_t>(j)] = ens.add_column(std::move(col));
      }
    }
    for (std::size_t j = 0; j < block.vectors.size(); ++j) {
      ZNode node;
      node.kind = ZNode::Kind::InitGaussian;
      node.hat_column = column[j];
      nodes_.emplace(block.vectors[j], node);
      samples_.emplace(block.vectors[j], std::move(cols[j]));
    }
  }
  for (const auto& s : program_.init_scalars()) {
    scalars_[s.name] = {s.limit, 0.0};
    scalar_batches_[s.name].assign(batches_, s.limit);
  }
}

Eigen::Index LimitState::batch_begin(std::size_t b) const {
  return static_cast<Eigen::Index>(static_cast<long long>(options_.ensemble) * static_cast<long long>(b) /
                                   static_cast<long long>(batches_));
}

Eigen::VectorXd LimitState::evaluate(const NonlinExpr& e, const std::vector<std::string>& inputs,
                                     const std::vector<std::string>& params) const {
  Eigen::VectorXd out(options_.ensemble);
  std::vector<const Eigen::VectorXd*> in;
  for (const auto& name : inputs) in.push_back(&samples(name));
  for (const auto& s : params) scalar_limit(s);  // raises UnknownSymbol
  for (std::size_t b = 0; b < batches_; ++b) {
    const auto lo = static_cast<std::size_t>(batch_begin(b));
    const auto len = static_cast<std::size_t>(batch_size(b));
    std::vector<double> theta;
    for (const auto& s : params) theta.push_back(scalar_batches_.at(s)[b]);
    if (in.empty()) {
      out.segment(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(len)).setConstant(e.eval({}, theta));
      continue;
    }
    std::vector<std::span<const double>> cols;
    for (const auto* v : in) cols.emplace_back(v->data() + lo, len);
    e.eval_columns(cols, theta, {out.data() + lo, len});
  }
  return out;
}

Estimate LimitState::estimate(const Eigen::VectorXd& values) const {
  const std::span<const double> all(values.data(), static_cast<std::size_t>(values.size()));
  if (batches_ == 1) return mean_stderr(all);
  std::vector<double> means;
  for (std::size_t b = 0; b < batches_; ++b)
    means.push_back(pairwise_mean(all.subspan(static_cast<std::size_t>(batch_begin(b)),
                                              static_cast<std::size_t>(batch_size(b)))));
  return {pairwise_mean(all), mean_stderr(means).stderr_};
}

void LimitState::advance() {
  if (done()) throw Error(ErrorKind::InvalidArgument, "program already fully processed");
  std::visit(overloaded{
                 [&](const MatMul& mm) { matmul(mm); },
                 [&](const Nonlin& nl) {
                   samples_.emplace(nl.output, evaluate(nl.expr, nl.inputs, nl.params));
                   ZNode node;
                   node.kind = ZNode::Kind::NonlinApp;
                   nodes_.emplace(nl.output, node);
                 },
                 [&](const Moment& mo) {
                   const Eigen::VectorXd v = evaluate(mo.expr, mo.inputs, mo.params);
                   scalars_[mo.output] = estimate(v);
                   auto& per = scalar_batches_[mo.output];
                   for (std::size_t b = 0; b < batches_; ++b)
                     per.push_back(pairwise_mean(
                         {v.data() + batch_begin(b), static_cast<std::size_t>(batch_size(b))}));
                 },
             },
             program_.instructions()[position_]);
  ++position_;
}

void LimitState::run() {
  while (!done()) advance();
}

void LimitState::matmul(const MatMul& mm) {
  const MatrixDecl& w = program_.matrix(mm.matrix);
  const double rho = program_.matrix_ratio(mm.matrix);
  const Direction dir = mm.transposed ? Direction::Transpose : Direction::Forward;
  const Direction opp = mm.transposed ? Direction::Forward : Direction::Transpose;
  const double sigma2_this = mm.transposed ? rho * w.sigma2 : w.sigma2;
  const double sigma2_opp = mm.transposed ? w.sigma2 : rho * w.sigma2;
  // Ratio of this direction's effective variance to the opposite one.
  const double factor = sigma2_opp > 0.0 ? sigma2_this / sigma2_opp : 0.0;
  const Eigen::VectorXd& x_all = samples(mm.input);

  ZNode node;
  node.kind = ZNode::Kind::GVarSum;
  node.family = family_name(mm.matrix, dir);
  Eigen::VectorXd z(options_.ensemble);
  bool degenerate = false;
  std::vector<std::string> prior;
  Eigen::MatrixXd coef;  // prior inputs x replicates
  Eigen::VectorXd infl_se;

  for (std::size_t bt = 0; bt < batches_; ++bt) {
    HatEnsemble& ens = ensembles_[bt];
    const Eigen::Index lo = batch_begin(bt), len = batch_size(bt);
    const auto seg = [&](const std::string& v) { return samples(v).segment(lo, len); };
    const Eigen::VectorXd x = x_all.segment(lo, len);

    HatFamily& fam = ens.family_for(mm.matrix, dir, sigma2_this);
    Eigen::VectorXd c(static_cast<Eigen::Index>(fam.inputs.size()));
    for (std::size_t j = 0; j < fam.inputs.size(); ++j)
      c(static_cast<Eigen::Index>(j)) = sigma2_this * mean_product(seg(fam.inputs[j]), x);
    const double v = sigma2_this * mean_product(x, x);
    const auto ext = ens.hat_extend(fam, c, v, options_.pinv_tol);
    fam.inputs.push_back(mm.input);
    fam.outputs.push_back(mm.output);
    degenerate = degenerate || ext.degenerate;
    node.hat_column = ext.column;
    z.segment(lo, len) = ens.column(ext.column);

    const HatFamily* other = ens.family(mm.matrix, opp);
    if (!other || other->inputs.empty()) continue;
    const auto k = static_cast<Eigen::Index>(other->inputs.size());
    if (bt == 0) {
      prior = other->inputs;
      coef.resize(k, static_cast<Eigen::Index>(batches_));
      infl_se.setZero(k);
    }
    Eigen::MatrixXd y(len, k);
    Eigen::MatrixXd h(len, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      y.col(j) = seg(other->inputs[static_cast<std::size_t>(j)]);
      h.col(j) = ens.column(other->columns[static_cast<std::size_t>(j)]);
    }
    Eigen::MatrixXd cmat(k, k);
    Eigen::VectorXd b(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      b(i) = mean_product(h.col(i), x);
      for (Eigen::Index j = 0; j <= i; ++j)
        cmat(i, j) = cmat(j, i) = mean_product(y.col(i), y.col(j));
    }
    const Eigen::MatrixXd cinv = pseudoinverse(cmat, options_.pinv_tol);
    const Eigen::VectorXd a0 = cinv * b;
    coef.col(static_cast<Eigen::Index>(bt)) = factor * a0;
    z.segment(lo, len) += y * coef.col(static_cast<Eigen::Index>(bt));
    if (batches_ == 1) {
      // Single replicate: first-order influence of each sample on a0.
      const Eigen::VectorXd ya = y * a0;
      const Eigen::MatrixXd resid =
          (h.array().colwise() * x.array() - y.array().colwise() * ya.array()).matrix();
      const Eigen::MatrixXd infl = resid * cinv.transpose();
      for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::VectorXd col = infl.col(j);
        infl_se(j) = std::abs(factor) *
                     mean_stderr({col.data(), static_cast<std::size_t>(col.size())}).stderr_;
      }
    }
  }
  if (degenerate)
    diagnostics_.push_back({"DegenerateGVar", mm.output,
                            "conditional variance vanishes; hat is a fixed linear image of "
                            "earlier hats"});
  for (std::size_t j = 0; j < prior.size(); ++j) {
    const Eigen::VectorXd row = coef.row(static_cast<Eigen::Index>(j)).transpose();
    const Estimate e = mean_stderr({row.data(), static_cast<std::size_t>(row.size())});
    const double se = batches_ == 1 ? infl_se(static_cast<Eigen::Index>(j)) : e.stderr_;
    zdot_.push_back({mm.output, prior[j], e.value, se});
    node.dot.emplace_back(prior[j], e.value);
  }
  nodes_.emplace(mm.output, std::move(node));
  samples_.emplace(mm.output, std::move(z));
}

const Eigen::VectorXd& LimitState::samples(const std::string& vector) const {
  auto it = samples_.find(vector);
  if (it == samples_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("no limit for vector '{}'", vector));
  return it->second;
}

const ZNode& LimitState::node(const std::string& vector) const {
  auto it = nodes_.find(vector);
  if (it == nodes_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("no limit for vector '{}'", vector));
  return it->second;
}

Estimate LimitState::expect(const NonlinExpr& psi, const std::vector<std::string>& vectors) const {
  if (static_cast<int>(vectors.size()) != psi.arity() || psi.param_arity() != 0)
    throw Error(ErrorKind::ArityMismatch,
                fmt::format("test function takes {} inputs, got {}", psi.arity(), vectors.size()));
  for (const auto& v : vectors)
    if (program_.class_of_vector(v).id != program_.class_of_vector(vectors.front()).id)
      throw Error(ErrorKind::DimClassConflict,
                  fmt::format("'{}' and '{}' live in different classes", vectors.front(), v));
  return estimate(evaluate(psi, vectors, {}));
}

Estimate LimitState::scalar_limit(const std::string& name) const {
  auto it = scalars_.find(name);
  if (it == scalars_.end())
    throw Error(ErrorKind::UnknownSymbol, fmt::format("no limit for scalar '{}'", name));
  return it->second;
}

std::vector<ZDotCoefficient> LimitState::zdot_of(const std::string& gvar) const {
  std::vector<ZDotCoefficient> out;
  for (const auto& z : zdot_)
    if (z.gvar == gvar) out.push_back(z);
  return out;
}

LimitState compute_limit(const Program& program, LimitOptions options) {
  LimitState state(program, options);
  state.run();
  return state;
}

}  // namespace ntp
