#include "ntp/word.hpp"

#include <charconv>

#include <fmt/format.h>

#include "ntp/error.hpp"
#include "ntp/parallel.hpp"
#include "ntp/rng.hpp"

namespace ntp {

namespace {

constexpr int kProbeBlock = 32;

WordShape factor_shape(const Program& program, const WordFactor& f) {
  if (const auto* m = std::get_if<MatrixFactor>(&f)) {
    const MatrixDecl& decl = program.matrix(m->name);
    std::string rows = program.class_of_label(decl.rows).id;
    std::string cols = program.class_of_label(decl.cols).id;
    if (m->transposed) std::swap(rows, cols);
    return {rows, cols};
  }
  const auto& d = std::get<DiagFactor>(f);
  if (!d.psi.bounded())
    throw Error(ErrorKind::UnboundedDiagonal,
                fmt::format("diagonal function '{}' is not bounded", d.psi.to_string()));
  if (static_cast<int>(d.vectors.size()) != d.psi.arity() || d.psi.param_arity() != 0)
    throw Error(ErrorKind::ArityMismatch,
                fmt::format("diagonal function '{}' applied to {} vectors", d.psi.to_string(),
                            d.vectors.size()));
  if (d.vectors.empty()) throw Error(ErrorKind::ArityMismatch, "diagonal factor needs a vector");
  const std::string cls = program.class_of_vector(d.vectors.front()).id;
  for (const auto& v : d.vectors)
    if (program.class_of_vector(v).id != cls)
      throw Error(ErrorKind::DimClassConflict,
                  fmt::format("diagonal inputs '{}' and '{}' differ in class", d.vectors.front(), v));
  return {cls, cls};
}

Eigen::VectorXd diag_values(const Realization& r, const DiagFactor& d) {
  std::vector<std::span<const double>> cols;
  for (const auto& name : d.vectors) {
    const auto& v = r.vector(name);
    cols.emplace_back(v.data(), static_cast<std::size_t>(v.size()));
  }
  Eigen::VectorXd out(cols.front().size());
  d.psi.eval_columns(cols, {}, {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Eigen::MatrixXd apply_word(const Realization& r, const MatrixWord& word, Eigen::MatrixXd y) {
  for (auto it = word.factors.rbegin(); it != word.factors.rend(); ++it) {
    if (const auto* m = std::get_if<MatrixFactor>(&*it)) {
      const RowMatrix& w = r.matrix(m->name);
      const auto inner = m->transposed ? w.rows() : w.cols();
      if (y.rows() != inner)
        throw Error(ErrorKind::ShapeMismatch,
                    fmt::format("factor {}{} expects length {}, got {}", m->name,
                                m->transposed ? "^T" : "", inner, y.rows()));
      if (m->transposed)
        y = w.transpose() * y;
      else
        y = w * y;
    } else {
      const Eigen::VectorXd d = diag_values(r, std::get<DiagFactor>(*it));
      if (y.rows() != d.size())
        throw Error(ErrorKind::ShapeMismatch,
                    fmt::format("diagonal factor has length {}, probe {}", d.size(), y.rows()));
      y = d.asDiagonal() * y;
    }
  }
  return y;
}

WordShape square_shape(const Program& program, const WordPoly& poly) {
  auto shape = poly_shape(program, poly);
  if (shape && !shape->square())
    throw Error(ErrorKind::ShapeMismatch,
                fmt::format("word maps class '{}' to '{}', not square", shape->in, shape->out));
  return shape.value_or(WordShape{});
}

double identity_trace(const WordPoly& poly) {
  double s = 0.0;
  for (const auto& t : poly.terms) s += t.coef;
  return s;
}

Eigen::MatrixXd probe_block(std::uint64_t seed, int n, int first, int count) {
  Eigen::MatrixXd z(n, count);
  for (int j = 0; j < count; ++j)
    NormalStream(seed, "probe", static_cast<std::uint64_t>(first + j))
        .fill({z.col(j).data(), static_cast<std::size_t>(n)});
  return z;
}

}  // namespace

std::optional<WordShape> word_shape(const Program& program, const MatrixWord& word) {
  std::optional<WordShape> shape;
  for (const auto& f : word.factors) {
    const WordShape s = factor_shape(program, f);
    if (!shape) {
      shape = s;
    } else {
      if (shape->in != s.out)
        throw Error(ErrorKind::ShapeMismatch,
                    fmt::format("adjacent factors do not compose: class '{}' against '{}'",
                                shape->in, s.out));
      shape->in = s.in;
    }
  }
  return shape;
}

std::optional<WordShape> poly_shape(const Program& program, const WordPoly& poly) {
  std::optional<WordShape> shape;
  bool has_identity = false;
  for (const auto& t : poly.terms) {
    auto s = word_shape(program, t.word);
    if (!s) {
      has_identity = true;
      continue;
    }
    if (shape && *shape != *s)
      throw Error(ErrorKind::ShapeMismatch, "polynomial terms have different shapes");
    shape = s;
  }
  if (has_identity && shape && !shape->square())
    throw Error(ErrorKind::ShapeMismatch, "identity term added to a non-square word");
  return shape;
}

Eigen::MatrixXd word_apply_block(const Realization& r, const WordPoly& poly,
                                 const Eigen::MatrixXd& block) {
  poly_shape(r.program(), poly);
  Eigen::MatrixXd out;
  bool first = true;
  for (const auto& t : poly.terms) {
    Eigen::MatrixXd y = apply_word(r, t.word, block);
    if (first) {
      out = t.coef * y;
      first = false;
    } else {
      if (y.rows() != out.rows())
        throw Error(ErrorKind::ShapeMismatch, "polynomial terms have different output sizes");
      out += t.coef * y;
    }
  }
  if (poly.terms.empty()) out = Eigen::MatrixXd::Zero(block.rows(), block.cols());
  return out;
}

Eigen::VectorXd word_apply(const Realization& r, const WordPoly& poly,
                           const Eigen::VectorXd& probe) {
  return word_apply_block(r, poly, probe);
}

Eigen::MatrixXd materialize(const Realization& r, const WordPoly& poly,
                            const ExecOptions& options) {
  const WordShape shape = square_shape(r.program(), poly);
  if (shape.in.empty())
    throw Error(ErrorKind::InvalidArgument, "identity word has no intrinsic size");
  const int n = r.dims().at(shape.in);
  if (n > options.exact_cap)
    throw Error(ErrorKind::CapExceeded,
                fmt::format("size {} exceeds the exact cap {}", n, options.exact_cap));
  if (auto d = diagonal_values(r, poly)) return Eigen::MatrixXd(d->asDiagonal());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (const auto& t : poly.terms) {
    if (t.word.factors.empty()) {
      out.diagonal().array() += t.coef;
      continue;
    }
    // Start from the rightmost factor itself instead of multiplying an identity.
    const auto last = t.word.factors.end() - 1;
    Eigen::MatrixXd y;
    if (const auto* m = std::get_if<MatrixFactor>(&*last)) {
      const RowMatrix& w = r.matrix(m->name);
      y = m->transposed ? Eigen::MatrixXd(w.transpose()) : Eigen::MatrixXd(w);
    } else {
      y = diag_values(r, std::get<DiagFactor>(*last)).asDiagonal();
    }
    out += t.coef * apply_word(r, MatrixWord{{t.word.factors.begin(), last}}, std::move(y));
  }
  return out;
}

std::optional<Eigen::VectorXd> diagonal_values(const Realization& r, const WordPoly& poly) {
  const auto shape = poly_shape(r.program(), poly);
  if (!shape) return std::nullopt;
  for (const auto& t : poly.terms)
    for (const auto& f : t.word.factors)
      if (!std::holds_alternative<DiagFactor>(f)) return std::nullopt;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(r.dims().at(shape->in));
  for (const auto& t : poly.terms) {
    Eigen::VectorXd term = Eigen::VectorXd::Constant(out.size(), t.coef);
    for (const auto& f : t.word.factors) term.array() *= diag_values(r, std::get<DiagFactor>(f)).array();
    out += term;
  }
  return out;
}

TraceMethod TraceMethod::parse(const std::string& text) {
  if (text == "exact") return exact();
  const std::string prefix = "hutch:";
  if (text.rfind(prefix, 0) == 0) {
    int p = 0;
    const char* first = text.data() + prefix.size();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, p);
    if (ec == std::errc() && ptr == last && p > 0) return hutchinson(p);
  }
  throw Error(ErrorKind::InvalidArgument,
              fmt::format("trace method '{}' is not 'exact' or 'hutch:<p>'", text));
}

std::string TraceMethod::to_string() const {
  return kind == Kind::Exact ? "exact" : fmt::format("hutch:{}", probes);
}

Estimate trace_moment(const Realization& r, const WordPoly& poly, TraceMethod method,
                      const ExecOptions& options) {
  const WordShape shape = square_shape(r.program(), poly);
  if (shape.in.empty()) return {identity_trace(poly), 0.0};
  const int n = r.dims().at(shape.in);
  if (method.kind == TraceMethod::Kind::Exact) {
    const Eigen::MatrixXd m = materialize(r, poly, options);
    return {m.trace() / n, 0.0};
  }
  return spectral_moments(r, poly, 1, method, options).front();
}

std::vector<Estimate> spectral_moments(const Realization& r, const WordPoly& poly, int k_max,
                                       TraceMethod method, const ExecOptions& options) {
  if (k_max < 1) throw Error(ErrorKind::InvalidArgument, "k_max must be positive");
  const WordShape shape = square_shape(r.program(), poly);
  std::vector<Estimate> out(static_cast<std::size_t>(k_max));
  if (shape.in.empty()) {
    const double c = identity_trace(poly);
    double v = 1.0;
    for (auto& e : out) e.value = v *= c;
    return out;
  }
  const int n = r.dims().at(shape.in);

  if (method.kind == TraceMethod::Kind::Exact) {
    const std::vector<double> eig = eig_spectrum(r, poly, options);
    std::vector<double> power(eig.size(), 1.0);
    for (int k = 0; k < k_max; ++k) {
      for (std::size_t i = 0; i < eig.size(); ++i) power[i] *= eig[i];
      out[static_cast<std::size_t>(k)].value = pairwise_mean(power);
    }
    return out;
  }

  const int p = method.probes;
  const int blocks = (p + kProbeBlock - 1) / kProbeBlock;
  // values[k][j]: probe j's estimate of the k-th moment
  std::vector<std::vector<double>> values(static_cast<std::size_t>(k_max),
                                          std::vector<double>(static_cast<std::size_t>(p)));
  parallel_for(static_cast<std::size_t>(blocks), options.threads, [&](std::size_t b) {
    const int first = static_cast<int>(b) * kProbeBlock;
    const int count = std::min(kProbeBlock, p - first);
    const Eigen::MatrixXd z = probe_block(r.seed(), n, first, count);
    Eigen::MatrixXd y = z;
    for (int k = 0; k < k_max; ++k) {
      y = word_apply_block(r, poly, y);
      for (int j = 0; j < count; ++j)
        values[static_cast<std::size_t>(k)][static_cast<std::size_t>(first + j)] =
            z.col(j).dot(y.col(j)) / n;
    }
  });
  for (int k = 0; k < k_max; ++k) {
    out[static_cast<std::size_t>(k)] = mean_stderr(values[static_cast<std::size_t>(k)]);
  }
  return out;
}

std::vector<double> eig_spectrum(const Realization& r, const WordPoly& poly,
                                 const ExecOptions& options) {
  const Eigen::MatrixXd m = materialize(r, poly, options);
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& v = eig.eigenvalues();
  return {v.data(), v.data() + v.size()};
}

}  // namespace ntp
