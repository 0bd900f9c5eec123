#pragma once

#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace ntp {

using BigInt = boost::multiprecision::cpp_int;

/// Catalan number via C_{k+1} = sum_i C_i C_{k-i}.
BigInt catalan(int k);
double catalan_value(int k);

/// Moments of the semicircle law on [-2, 2].
double semicircle_moment(int r);

/// b_r^t = C_{(t-r)/2} for even t - r, else 0.
double semicircle_b_coeff(int t, int r);

enum class MpMethod { Explicit, Recurrence };

/// r-th moment of the Marchenko-Pastur law with shape ratio rho.
double mp_moment(int r, double rho, MpMethod method = MpMethod::Explicit);

struct Law {
  enum class Kind { Semicircle, MarchenkoPastur };
  Kind kind = Kind::Semicircle;
  double rho = 1.0;

  static Law semicircle() { return {Kind::Semicircle, 1.0}; }
  static Law mp(double rho) { return {Kind::MarchenkoPastur, rho}; }
  std::string name() const;
  double moment(int r) const;
  /// Support of the continuous part.
  double lower() const;
  double upper() const;
};

struct LawDensity {
  double density = 0.0;  // continuous part
  double atom = 0.0;     // point mass at 0
};

LawDensity law_density(const Law& law, double x);

/// Truncated moment sequence m_1..m_K (m_0 = 1 implicit).
struct MomentSeq {
  std::vector<double> m;

  int order() const { return static_cast<int>(m.size()); }
  double at(int k) const { return m.at(static_cast<std::size_t>(k - 1)); }
  bool operator==(const MomentSeq&) const = default;
};

MomentSeq law_moments(const Law& law, int K);
MomentSeq point_mass_moments(double c, int K);

/// Truncated power series c_0 + c_1 z + ... + c_K z^K.
struct FormalSeries {
  std::vector<double> c;

  int order() const { return static_cast<int>(c.size()) - 1; }
  double coef(int k) const {
    return k >= 0 && k < static_cast<int>(c.size()) ? c[static_cast<std::size_t>(k)] : 0.0;
  }
  bool operator==(const FormalSeries&) const = default;
};

FormalSeries series_mul(const FormalSeries& a, const FormalSeries& b, int K);
/// f(g(z)) truncated to order K.
FormalSeries series_compose(const FormalSeries& f, const FormalSeries& g, int K);
/// 1/f; requires f(0) != 0. Errors: NonInvertibleSeries.
FormalSeries series_reciprocal(const FormalSeries& f, int K);
/// g with f(g(z)) = z; requires c_0 = 0 and c_1 != 0. Errors: NonInvertibleSeries.
FormalSeries series_comp_inverse(const FormalSeries& f, int K);

/// S(z) = chi(z)(1+z)/z, chi the compositional inverse of sum_k m_k z^k.
/// Result has order K-1. Errors: NonInvertibleSeries when m_1 = 0.
FormalSeries s_transform(const MomentSeq& m);
MomentSeq moments_from_s(const FormalSeries& s, int K);

/// Moments of the free multiplicative convolution a [x] b.
MomentSeq free_mul_conv(const MomentSeq& a, const MomentSeq& b, int K);

}  // namespace ntp
