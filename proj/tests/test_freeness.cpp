#include <doctest.h>

#include <algorithm>

#include <fmt/format.h>

#include "ntp/dsl.hpp"
#include "ntp/error.hpp"
#include "ntp/freeness.hpp"
#include "ntp/limit.hpp"
#include "ntp/realization.hpp"
#include "support.hpp"

using namespace ntp;

namespace {

Realization realize(const Program& p, int n, std::uint64_t seed) { return instantiate(p, dims_for(p, n), seed); }

LimitOptions ensemble(int n) {
  LimitOptions o;
  o.ensemble = n;
  o.seed = 3;
  return o;
}

}  // namespace

TEST_CASE("centered_trace of a single factor vanishes") {
  const Program p = bundled("fip.ntp");
  const Realization r = realize(p, 128, 1);
  for (const char* text : {"mat W W^T", "diag h step(x1)", "mat W + W^T"}) {
    const AlternatingWord w = parse_word(text);
    CHECK(std::abs(centered_trace(r, w, TraceMethod::exact()).value) <= 1e-14);
    CHECK(std::abs(centered_trace(r, w, TraceMethod::hutchinson(16)).value) <= 1e-14);
  }
}

TEST_CASE("centered_trace rejects non-alternating words") {
  const Program p = bundled("fip.ntp");
  const Realization r = realize(p, 32, 1);
  CHECK_THROWS_AS(centered_trace(r, parse_word("mat W\nmat W^T"), TraceMethod::exact()), Error);
  CHECK_THROWS_AS(check_alternating(parse_word("diag h step(x1)\ndiag u step(x1)")), Error);
  CHECK_NOTHROW(check_alternating(parse_word("diag h step(x1)\nmat W\ndiag u step(x1)")));
  CHECK_THROWS_AS(freeness_sweep(p, parse_word("mat W\nmat W W^T"), {32}, 1), Error);
}

TEST_CASE("negative control matches the coordinatewise oracle") {
  const Program p = bundled("fip.ntp");
  const Realization r = realize(p, 1024, 2);
  const Eigen::VectorXd& h = r.vector("h");
  double frac = 0.0;
  for (int i = 0; i < h.size(); ++i) frac += h(i) > 0 ? 1.0 : 0.0;
  frac /= static_cast<double>(h.size());
  const double value = centered_trace(r, bundled_word("fip_control.word"), TraceMethod::exact()).value;
  CHECK(value == doctest::Approx(frac * (1 - frac)).epsilon(1e-12));
  CHECK(std::abs(value - 0.25) <= 0.01);
}

TEST_CASE("cyclic rotations give the same centered trace") {
  const Program p = bundled("fip.ntp");
  const Realization r = realize(p, 160, 5);
  AlternatingWord w = bundled_word("fip_sym_mixed.word");
  const double base = centered_trace(r, w, TraceMethod::exact()).value;
  for (std::size_t k = 1; k < w.factors.size(); ++k) {
    std::rotate(w.factors.begin(), w.factors.begin() + 1, w.factors.end());
    CHECK(std::abs(centered_trace(r, w, TraceMethod::exact()).value - base) <= 1e-12);
  }
}

TEST_CASE("exact and Hutchinson centered traces agree") {
  const Program p = bundled("fip.ntp");
  const Realization r = realize(p, 256, 9);
  const AlternatingWord w = bundled_word("fip_gram_step.word");
  const double exact = centered_trace(r, w, TraceMethod::exact()).value;
  const Estimate h = centered_trace(r, w, TraceMethod::hutchinson(2000));
  CHECK(std::abs(h.value - exact) <= 4 * h.stderr_);
}

TEST_CASE("freeness_sweep: free words decay, the control does not") {
  const Program p = bundled("fip.ntp");
  const FreenessReport free = freeness_sweep(p, bundled_word("fip_gram_step.word"), {64, 512}, 8);
  REQUIRE(free.rows.size() == 2);
  CHECK(free.rows[0].n == 64);
  CHECK(free.rows[1].seed_count == 8);
  CHECK(free.rows[1].median_abs < free.rows[0].median_abs);
  CHECK(free.slope < -0.2);

  const FreenessReport control = freeness_sweep(p, bundled_word("fip_control.word"), {64, 256, 1024}, 8);
  CHECK(std::abs(control.slope) < 0.2);
  for (const auto& row : control.rows) CHECK(row.median_abs >= 0.15);

  CHECK_THROWS_AS(freeness_sweep(p, bundled_word("fip_control.word"), {256, 64}, 2), Error);
}

TEST_CASE("fip_witness_program") {
  const Program base = parse_program("matrix W : n x n\nvector vbar : n\nh = matmul W vbar\n");
  SUBCASE("empty word") {
    WitnessNames names;
    const Program w = fip_witness_program(base, AlternatingWord{}, &names, "n");
    const Estimate e = compute_limit(w, ensemble(100000)).scalar_limit(names.final_scalar);
    CHECK(std::abs(e.value - 1.0) <= 3 * e.stderr_);
  }
  SUBCASE("W W^T") {
    WitnessNames names;
    const Program w = fip_witness_program(base, parse_word("mat W W^T"), &names);
    REQUIRE(names.tau.size() == 1);
    const LimitState s = compute_limit(w, ensemble(200000));
    const Estimate tau = s.scalar_limit(names.tau[0]);
    const Estimate fin = s.scalar_limit(names.final_scalar);
    CHECK(std::abs(tau.value - 1.0) <= 3 * tau.stderr_);
    CHECK(std::abs(fin.value) <= 3 * fin.stderr_);
  }
  SUBCASE("diagonal then symmetric") {
    WitnessNames names;
    const AlternatingWord word = parse_word("diag h step(x1)\nmat W + W^T");
    const Program w = fip_witness_program(base, word, &names);
    const Estimate fin = compute_limit(w, ensemble(200000)).scalar_limit(names.final_scalar);
    CHECK(std::abs(fin.value) <= 3 * fin.stderr_);

    // Finite-n witness tracks the centered trace seed by seed.
    std::vector<double> diff;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const Realization r = realize(w, 256, seed);
      diff.push_back(r.scalar(names.final_scalar) - centered_trace(r, word, TraceMethod::exact()).value);
    }
    const Estimate d = mean_stderr(diff);
    CHECK(std::abs(d.value) <= 4 * d.stderr_);
  }
  CHECK_THROWS_AS(fip_witness_program(base, parse_word("mat W\nmat W^T")), Error);
}

TEST_CASE("mlp_forward_variances") {
  for (double q : mlp_forward_variances(expr::identity(), 1.7, 4)) CHECK(q == doctest::Approx(1.7));
  const auto relu = mlp_forward_variances(expr::relu(), 2.0, 3);
  CHECK(relu[0] == 2.0);
  CHECK(relu[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(relu[2] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mlp_forward_variances(expr::step(), 1.0, 2)[1] == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("d_squared_moments") {
  const MomentSeq one = d_squared_moments(NonlinExpr::constant(1.0).with_signature(1, 0), 0.7, 5);
  for (int k = 1; k <= 5; ++k) CHECK(one.at(k) == doctest::Approx(1.0));
  const MomentSeq half = d_squared_moments(expr::step(), 3.0, 5);
  for (int k = 1; k <= 5; ++k) CHECK(half.at(k) == doctest::Approx(0.5).epsilon(2e-3));

  const Program p = parse_program("vector h : n\nd = moment (1 - tanh(x1)^2)^2 (h)\n");
  const Estimate mc = compute_limit(p, ensemble(200000)).scalar_limit("d");
  const double quad = d_squared_moments(expr::tanh_derivative(), 1.0, 1).at(1);
  CHECK(std::abs(mc.value - quad) <= 3 * mc.stderr_);
}

TEST_CASE("jacobian_limit_moments") {
  const Activation id = Activation::named("identity");
  const MomentSeq l2 = jacobian_limit_moments(2, id, 1.0, {}, 4);
  const double mp1[] = {1, 2, 5, 14};
  for (int k = 1; k <= 4; ++k) CHECK(l2.at(k) == doctest::Approx(mp1[k - 1]).epsilon(1e-12));
  const MomentSeq l3 = jacobian_limit_moments(3, id, 1.0, {}, 4);
  const double fuss[] = {1, 3, 12, 55};
  for (int k = 1; k <= 4; ++k) CHECK(l3.at(k) == doctest::Approx(fuss[k - 1]).epsilon(1e-12));
  CHECK(jacobian_limit_moments(2, Activation::named("relu"), 1.0, {}, 3).at(1) ==
        doctest::Approx(0.5).epsilon(1e-6));
  const MomentSeq rect = jacobian_limit_moments(2, id, 1.0, {0.5}, 3);
  CHECK(rect.at(1) == doctest::Approx(mp_moment(1, 0.5, MpMethod::Explicit)));
  CHECK(rect.at(2) == doctest::Approx(mp_moment(2, 0.5, MpMethod::Explicit)));
}

TEST_CASE("jacobian program matches the bundled files") {
  for (const char* act : {"identity", "relu", "tanh"})
    for (int L : {2, 3}) {
      const Program built = jacobian_program(L, Activation::named(act), 1.0);
      CHECK(built == bundled(fmt::format("mlp_L{}_{}.ntp", L, act)));
    }
}

TEST_CASE("jacobian_finite: eigen and Hutchinson paths agree") {
  for (const char* act : {"identity", "relu", "tanh"}) {
    const Activation a = Activation::named(act);
    const auto exact = jacobian_finite(3, 64, a, 1.0, 2, 3, TraceMethod::exact());
    const auto hutch = jacobian_finite(3, 64, a, 1.0, 2, 3, TraceMethod::hutchinson(512));
    REQUIRE(exact.size() == hutch.size());
    for (std::size_t k = 0; k < exact.size(); ++k)
      CHECK(std::abs(exact[k].value - hutch[k].value) <= 4 * hutch[k].stderr_);
  }
}

TEST_CASE("jacobian_finite approaches the limit") {
  const Activation relu = Activation::named("relu");
  const auto lim = jacobian_limit_moments(2, relu, 1.0, {}, 3);
  std::vector<double> m1;
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    m1.push_back(jacobian_finite(2, 256, relu, 1.0, seed, 1, TraceMethod::exact())[0].value);
  CHECK(std::abs(mean_stderr(m1).value - lim.at(1)) <= 0.1 * lim.at(1));
}
