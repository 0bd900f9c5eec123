#include "ntp/laws.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "ntp/error.hpp"

namespace ntp {

namespace {

// Kahan-compensated accumulator.
class KahanSum {
 public:
  void add(double x) {
    const double y = x - comp_;
    const double t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

FormalSeries truncated(const FormalSeries& f, int K) {
  FormalSeries out;
  out.c.assign(static_cast<std::size_t>(K + 1), 0.0);
  for (int k = 0; k <= K; ++k) out.c[static_cast<std::size_t>(k)] = f.coef(k);
  return out;
}

FormalSeries derivative(const FormalSeries& f) {
  FormalSeries d;
  d.c.assign(static_cast<std::size_t>(std::max(1, f.order())), 0.0);
  for (int k = 1; k <= f.order(); ++k) d.c[static_cast<std::size_t>(k - 1)] = k * f.coef(k);
  return d;
}

double binomial(int n, int k) {
  BigInt b = 1;
  for (int i = 1; i <= k; ++i) b = b * (n - k + i) / i;
  return b.convert_to<double>();
}

}  // namespace

BigInt catalan(int k) {
  if (k < 0) throw Error(ErrorKind::InvalidArgument, "catalan index must be non-negative");
  std::vector<BigInt> c(static_cast<std::size_t>(k + 1));
  c[0] = 1;
  for (int n = 0; n < k; ++n) {
    BigInt s = 0;
    for (int i = 0; i <= n; ++i) s += c[static_cast<std::size_t>(i)] * c[static_cast<std::size_t>(n - i)];
    c[static_cast<std::size_t>(n + 1)] = s;
  }
  return c.back();
}

double catalan_value(int k) { return catalan(k).convert_to<double>(); }

double semicircle_moment(int r) {
  if (r < 0) throw Error(ErrorKind::InvalidArgument, "moment order must be non-negative");
  return r % 2 == 0 ? catalan_value(r / 2) : 0.0;
}

double semicircle_b_coeff(int t, int r) {
  if (r < 0 || r > t) throw Error(ErrorKind::InvalidArgument, "need 0 <= r <= t");
  return (t - r) % 2 == 0 ? catalan_value((t - r) / 2) : 0.0;
}

double mp_moment(int r, double rho, MpMethod method) {
  if (r < 1) throw Error(ErrorKind::InvalidArgument, "moment order must be >= 1");
  if (!(rho > 0.0)) throw Error(ErrorKind::InvalidArgument, "rho must be positive");
  if (method == MpMethod::Explicit) {
    KahanSum s;
    for (int k = 0; 2 * k <= r - 1; ++k)
      s.add(std::pow(rho, k) * std::pow(1.0 + rho, r - 1 - 2 * k) * binomial(r - 1, 2 * k) *
            catalan_value(k));
    return s.value();
  }
  std::vector<double> m(static_cast<std::size_t>(r + 1), 0.0);
  m[1] = 1.0;
  if (r >= 2) m[2] = 1.0 + rho;
  for (int s = 3; s <= r; ++s) {
    KahanSum acc;
    for (int q = 1; q <= s - 2; ++q)
      acc.add(m[static_cast<std::size_t>(q)] * m[static_cast<std::size_t>(s - 1 - q)]);
    m[static_cast<std::size_t>(s)] = rho * acc.value() + (1.0 + rho) * m[static_cast<std::size_t>(s - 1)];
  }
  return m[static_cast<std::size_t>(r)];
}

std::string Law::name() const { return kind == Kind::Semicircle ? "semicircle" : "mp"; }

double Law::moment(int r) const {
  if (r == 0) return 1.0;
  return kind == Kind::Semicircle ? semicircle_moment(r) : mp_moment(r, rho);
}

double Law::lower() const {
  if (kind == Kind::Semicircle) return -2.0;
  const double s = 1.0 - std::sqrt(rho);
  return s * s;
}

double Law::upper() const {
  if (kind == Kind::Semicircle) return 2.0;
  const double s = 1.0 + std::sqrt(rho);
  return s * s;
}

LawDensity law_density(const Law& law, double x) {
  LawDensity d;
  if (law.kind == Law::Kind::Semicircle) {
    if (std::abs(x) < 2.0) d.density = std::sqrt(4.0 - x * x) / (2.0 * std::numbers::pi);
    return d;
  }
  const double rho = law.rho;
  d.atom = std::max(0.0, 1.0 - 1.0 / rho);
  const double a = law.lower();
  const double b = law.upper();
  if (x > a && x < b && x > 0.0)
    d.density = std::sqrt((b - x) * (x - a)) / (2.0 * std::numbers::pi * rho * x);
  return d;
}

MomentSeq law_moments(const Law& law, int K) {
  MomentSeq m;
  for (int r = 1; r <= K; ++r) m.m.push_back(law.moment(r));
  return m;
}

MomentSeq point_mass_moments(double c, int K) {
  MomentSeq m;
  double v = 1.0;
  for (int r = 1; r <= K; ++r) m.m.push_back(v *= c);
  return m;
}

FormalSeries series_mul(const FormalSeries& a, const FormalSeries& b, int K) {
  FormalSeries out;
  out.c.assign(static_cast<std::size_t>(K + 1), 0.0);
  for (int k = 0; k <= K; ++k) {
    KahanSum s;
    for (int i = 0; i <= std::min(k, a.order()); ++i) s.add(a.coef(i) * b.coef(k - i));
    out.c[static_cast<std::size_t>(k)] = s.value();
  }
  return out;
}

FormalSeries series_compose(const FormalSeries& f, const FormalSeries& g, int K) {
  // Horner: f_0 + g (f_1 + g (f_2 + ...))
  FormalSeries acc;
  acc.c.assign(static_cast<std::size_t>(K + 1), 0.0);
  for (int k = f.order(); k >= 0; --k) {
    acc = series_mul(acc, g, K);
    acc.c[0] += f.coef(k);
  }
  return acc;
}

FormalSeries series_reciprocal(const FormalSeries& f, int K) {
  const double f0 = f.coef(0);
  if (f0 == 0.0 || !std::isfinite(f0))
    throw Error(ErrorKind::NonInvertibleSeries, "series with zero constant term has no reciprocal");
  FormalSeries r;
  r.c.assign(static_cast<std::size_t>(K + 1), 0.0);
  r.c[0] = 1.0 / f0;
  for (int k = 1; k <= K; ++k) {
    KahanSum s;
    for (int i = 1; i <= std::min(k, f.order()); ++i) s.add(f.coef(i) * r.c[static_cast<std::size_t>(k - i)]);
    r.c[static_cast<std::size_t>(k)] = -s.value() / f0;
  }
  return r;
}

FormalSeries series_comp_inverse(const FormalSeries& f, int K) {
  if (K < 1) throw Error(ErrorKind::InvalidArgument, "inverse order must be >= 1");
  if (f.coef(0) != 0.0)
    throw Error(ErrorKind::NonInvertibleSeries, "compositional inverse needs a zero constant term");
  const double f1 = f.coef(1);
  if (f1 == 0.0 || !std::isfinite(f1))
    throw Error(ErrorKind::NonInvertibleSeries, "compositional inverse needs a nonzero linear term");
  const FormalSeries df = derivative(f);
  FormalSeries g;
  g.c = {0.0, 1.0 / f1};
  // Newton on F(g) = f(g) - z; each pass doubles the number of exact terms.
  auto step = [&](int prec) {
    g = truncated(g, prec);
    FormalSeries residual = series_compose(f, g, prec);
    residual.c[1] -= 1.0;
    const FormalSeries slope = series_reciprocal(series_compose(df, g, prec), prec);
    const FormalSeries delta = series_mul(residual, slope, prec);
    for (int k = 0; k <= prec; ++k) g.c[static_cast<std::size_t>(k)] -= delta.coef(k);
    g.c[0] = 0.0;
  };
  int prec = 1;
  while (prec < K) {
    prec = std::min(K, 2 * prec);
    step(prec);
  }
  step(K);
  return truncated(g, K);
}

FormalSeries s_transform(const MomentSeq& m) {
  const int K = m.order();
  if (K < 1) throw Error(ErrorKind::InvalidArgument, "empty moment sequence");
  for (double v : m.m)
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "non-finite moment");
  if (m.at(1) == 0.0)
    throw Error(ErrorKind::NonInvertibleSeries, "S-transform needs a nonzero first moment");
  FormalSeries psi;
  psi.c.assign(static_cast<std::size_t>(K + 1), 0.0);
  for (int k = 1; k <= K; ++k) psi.c[static_cast<std::size_t>(k)] = m.at(k);
  const FormalSeries chi = series_comp_inverse(psi, K);
  FormalSeries s;
  s.c.assign(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) s.c[static_cast<std::size_t>(k)] = chi.coef(k + 1) + chi.coef(k);
  return s;
}

MomentSeq moments_from_s(const FormalSeries& s, int K) {
  if (K < 1) throw Error(ErrorKind::InvalidArgument, "moment order must be >= 1");
  if (s.coef(0) == 0.0)
    throw Error(ErrorKind::NonInvertibleSeries, "S-transform must have a nonzero constant term");
  // chi = z S(z) / (1 + z)
  FormalSeries chi;
  chi.c.assign(static_cast<std::size_t>(K + 1), 0.0);
  for (int k = 0; k < K; ++k) {
    KahanSum acc;
    for (int j = 0; j <= k; ++j) acc.add(((k - j) % 2 ? -1.0 : 1.0) * s.coef(j));
    chi.c[static_cast<std::size_t>(k + 1)] = acc.value();
  }
  const FormalSeries psi = series_comp_inverse(chi, K);
  MomentSeq m;
  for (int k = 1; k <= K; ++k) m.m.push_back(psi.coef(k));
  return m;
}

MomentSeq free_mul_conv(const MomentSeq& a, const MomentSeq& b, int K) {
  if (K < 1 || K > std::min(a.order(), b.order()))
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("order {} exceeds the operands' orders {} and {}", K, a.order(),
                            b.order()));
  const FormalSeries sa = s_transform(a);
  const FormalSeries sb = s_transform(b);
  return moments_from_s(series_mul(sa, sb, K - 1), K);
}

}  // namespace ntp
