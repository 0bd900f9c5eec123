#include <doctest.h>

#include <random>

#include "ntp/dsl.hpp"
#include "ntp/error.hpp"
#include "ntp/laws.hpp"
#include "ntp/realization.hpp"
#include "ntp/word.hpp"
#include "support.hpp"

using namespace ntp;

namespace {

MatrixWord word_of(std::initializer_list<WordFactor> f) { return MatrixWord{f}; }

const WordFactor W{MatrixFactor{"W", false}};
const WordFactor WT{MatrixFactor{"W", true}};

Program square_program() {
  return parse_program("matrix W : n x n\nmatrix V : n x n var 2\nvector a : n\nvector b : n\n"
                       "x = matmul W a\n");
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1e-300, b.norm());
}

}  // namespace

TEST_CASE("instantiate: semicircle recursion matches powers of W + W^T") {
  const Program p = bundled("semicircle.ntp");
  const Realization r = instantiate(p, dims_for(p, 4), 7);
  const Eigen::MatrixXd w = r.matrix("W");
  const Eigen::MatrixXd a = w + w.transpose();
  Eigen::VectorXd z = r.vector("z0");
  for (int t = 1; t <= 6; ++t) {
    z = a * z;
    const Eigen::VectorXd& got = r.vector("z" + std::to_string(t));
    CHECK((got - z).norm() <= 1e-12 * z.norm());
  }
}

TEST_CASE("instantiate: GIA-break forward pass gives x1 = 1 exactly") {
  const Program p = bundled("gia_break.ntp");
  const Realization r = instantiate(p, dims_for(p, 64), 1);
  CHECK(r.vector("x1") == Eigen::VectorXd::Ones(64));
}

TEST_CASE("instantiate is deterministic and seed-sensitive") {
  const Program p = bundled("mp_rho0.5.ntp");
  const Realization a = instantiate(p, dims_for(p, 32), 3);
  const Realization b = instantiate(p, dims_for(p, 32), 3);
  const Realization c = instantiate(p, dims_for(p, 32), 4);
  CHECK(a.matrix("A") == b.matrix("A"));
  CHECK(a.vector("v4") == b.vector("v4"));
  CHECK_FALSE(a.matrix("A") == c.matrix("A"));
  CHECK(a.matrix("A").rows() == 16);
  CHECK(a.matrix("A").cols() == 32);
}

TEST_CASE("instantiate enforces the memory cap") {
  const Program p = bundled("atav.ntp");
  ExecOptions small;
  small.max_dim = 100;
  CHECK_THROWS_AS(instantiate(p, dims_for(p, 128), 0, small), Error);
}

TEST_CASE("matrix entries have variance sigma2 / cols") {
  const Program p = parse_program("class m ratio 0.5\nmatrix B : m x n var 3\n");
  const Realization r = instantiate(p, dims_for(p, 1024), 2);
  const double var = r.matrix("B").squaredNorm() / static_cast<double>(r.matrix("B").size());
  CHECK(var == doctest::Approx(3.0 / 1024).epsilon(0.01));
}

TEST_CASE("empirical_average") {
  const Program p = parse_program("vector v : n\nvector w : n\nclass m ratio 1\nvector u : m\n");
  ExecOptions big;
  big.max_dim = 1000000;
  const Realization r = instantiate(p, dims_for(p, 1000000), 5, big);
  CHECK(std::abs(empirical_average(r, expr::square(), {"v"}) - 1.0) < 0.01);
  CHECK(empirical_average(r, NonlinExpr::constant(3.0).with_signature(1, 0), {"v"}) == 3.0);
  const double diff =
      empirical_average(r, expr::product(), {"v", "v"}) - empirical_average(r, expr::product(), {"v", "w"});
  CHECK(std::abs(diff - 1.0) < 0.01);
  CHECK_THROWS_AS(empirical_average(r, expr::product(), {"v", "u"}), Error);
}

TEST_CASE("word_apply") {
  const Program p = square_program();
  const Realization r = instantiate(p, dims_for(p, 64), 9);
  const Eigen::MatrixXd w = r.matrix("W");
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(64);
  e1(0) = 1.0;
  CHECK(word_apply(r, word_of({W}), e1) == w.col(0));

  const Eigen::VectorXd v = r.vector("a");
  const Eigen::VectorXd dense = (w.transpose() * w) * v;
  CHECK((word_apply(r, word_of({WT, W}), v) - dense).norm() <= 1e-12 * dense.norm());

  const WordFactor mask{DiagFactor{{"x"}, expr::step()}};
  const Eigen::VectorXd masked = word_apply(r, word_of({mask}), v);
  for (int i = 0; i < 64; ++i) CHECK(masked(i) == (r.vector("x")(i) > 0 ? v(i) : 0.0));

  CHECK_THROWS_AS(word_apply(r, word_of({W}), Eigen::VectorXd::Zero(3)), Error);
  CHECK_THROWS_AS(word_shape(p, word_of({WordFactor{DiagFactor{{"x"}, expr::relu()}}})), Error);
}

TEST_CASE("word_apply equals the dense product on random words") {
  const Program p = square_program();
  const Realization r = instantiate(p, dims_for(p, 96), 4);
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> pick(0, 4);
  std::uniform_int_distribution<int> len(1, 6);
  const Eigen::MatrixXd w = r.matrix("W"), v = r.matrix("V");
  Eigen::VectorXd dstep(96), dtanh(96);
  for (int i = 0; i < 96; ++i) {
    dstep(i) = r.vector("x")(i) > 0 ? 1.0 : 0.0;
    dtanh(i) = std::tanh(r.vector("a")(i));
  }
  const Eigen::MatrixXd probe = Eigen::MatrixXd::Random(96, 3);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixWord word;
    Eigen::MatrixXd dense = Eigen::MatrixXd::Identity(96, 96);
    const int L = len(rng);
    for (int i = 0; i < L; ++i) {
      switch (pick(rng)) {
        case 0: word.factors.push_back(W); dense = dense * w; break;
        case 1: word.factors.push_back(WT); dense = dense * w.transpose(); break;
        case 2: word.factors.emplace_back(MatrixFactor{"V", true}); dense = dense * v.transpose(); break;
        case 3: word.factors.emplace_back(DiagFactor{{"x"}, expr::step()}); dense = dense * dstep.asDiagonal(); break;
        default: word.factors.emplace_back(DiagFactor{{"a"}, expr::tanh()}); dense = dense * dtanh.asDiagonal(); break;
      }
    }
    CHECK(rel_err(word_apply_block(r, word, probe), dense * probe) <= 1e-10);
  }
}

TEST_CASE("trace_moment") {
  const Program p = square_program();
  const Realization r = instantiate(p, dims_for(p, 128), 1);
  CHECK(trace_moment(r, MatrixWord{}, TraceMethod::exact()).value == 1.0);
  CHECK(trace_moment(r, MatrixWord{}, TraceMethod::hutchinson(8)).value == 1.0);

  const WordPoly sym = word_of({WT, MatrixFactor{"V", false}, W});
  const Estimate exact = trace_moment(r, sym, TraceMethod::exact());
  const Estimate hutch = trace_moment(r, sym, TraceMethod::hutchinson(64));
  CHECK(std::abs(hutch.value - exact.value) <= 4 * hutch.stderr_);

  std::vector<double> eig = eig_spectrum(r, sym);
  double s = 0.0;
  for (double e : eig) s += e;
  CHECK(std::abs(s / 128 - exact.value) <= 1e-8 * std::abs(exact.value));
  CHECK_THROWS_AS(trace_moment(r, word_of({MatrixFactor{"V", false}, W}),
                               TraceMethod::exact(), ExecOptions{8192, 64, 1}),
                  Error);
}

TEST_CASE("trace_moment: W W^T has unit normalized trace") {
  const Program p = parse_program("matrix W : n x n\n");
  std::vector<double> vals;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Realization r = instantiate(p, dims_for(p, 2048), seed);
    vals.push_back(trace_moment(r, word_of({W, WT}), TraceMethod::hutchinson(32)).value);
  }
  CHECK(std::abs(mean_stderr(vals).value - 1.0) < 0.05);
}

TEST_CASE("Hutchinson estimator is unbiased on random symmetric words") {
  const Program p = square_program();
  ExecOptions opts;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Realization r = instantiate(p, dims_for(p, 256), seed);
    const WordPoly word = seed % 2 ? WordPoly(word_of({WT, WordFactor{DiagFactor{{"x"}, expr::step()}}, W}))
                                   : WordPoly(word_of({W, WT}));
    const Eigen::MatrixXd m = materialize(r, word);
    const double exact = m.trace() / 256;
    // Var(z^T M z) = 2 ||M||_F^2 for symmetric M.
    const double sd = std::sqrt(2.0 * m.squaredNorm()) / 256 / std::sqrt(10000.0);
    const Estimate h = trace_moment(r, word, TraceMethod::hutchinson(10000), opts);
    CHECK(std::abs(h.value - exact) <= 5 * sd);
  }
}

TEST_CASE("spectral moments of the semicircle at n = 2048") {
  const Program p = parse_program("matrix W : n x n var 0.5\n");
  const Realization r = instantiate(p, dims_for(p, 2048), 3);
  WordPoly a;
  a.terms = {{1.0, word_of({W})}, {1.0, word_of({WT})}};
  const auto m = spectral_moments(r, a, 4, TraceMethod::hutchinson(32));
  CHECK(std::abs(m[1].value - 1.0) <= 0.05);
  CHECK(std::abs(m[2].value) <= 0.05);
  CHECK(std::abs(m[3].value - 2.0) <= 0.1);
}

TEST_CASE("eig_spectrum") {
  const Program p = parse_program("matrix W : n x n\nvector v : n\n");
  const Realization r = instantiate(p, dims_for(p, 512), 8);
  WordPoly zero;
  zero.terms = {{0.0, word_of({W})}};
  for (double e : eig_spectrum(r, zero)) CHECK(e == 0.0);
  WordPoly id;
  id.terms = {{1.0, word_of({WordFactor{DiagFactor{{"v"}, NonlinExpr::constant(1.0).with_signature(1, 0)}}})}};
  for (double e : eig_spectrum(r, id)) CHECK(e == 1.0);

  // 20-bin histogram of W W^T against the MP(1) density.
  const std::vector<double> eig = eig_spectrum(r, word_of({W, WT}));
  const Law mp = Law::mp(1.0);
  const double lo = mp.lower(), hi = mp.upper(), width = (hi - lo) / 20;
  double worst = 0.0;
  for (int b = 0; b < 20; ++b) {
    const double a = lo + b * width;
    int count = 0;
    for (double e : eig) count += (e >= a && (e < a + width || (b == 19 && e <= hi + 1e-9)));
    double mass = 0.0;
    for (int i = 0; i < 200; ++i) mass += law_density(mp, a + (i + 0.5) * width / 200).density * width / 200;
    worst = std::max(worst, std::abs(count / 512.0 - mass) / width);
  }
  CHECK(worst <= 0.15);
  CHECK_THROWS_AS(eig_spectrum(r, word_of({W, WT}), ExecOptions{8192, 256, 1}), Error);
}

TEST_CASE("threads do not change Hutchinson results") {
  const Program p = square_program();
  const Realization r = instantiate(p, dims_for(p, 200), 2);
  const WordPoly word = word_of({W, WT});
  const Estimate one = trace_moment(r, word, TraceMethod::hutchinson(200), ExecOptions{8192, 1024, 1});
  const Estimate many = trace_moment(r, word, TraceMethod::hutchinson(200), ExecOptions{8192, 1024, 8});
  CHECK(one.value == many.value);
  CHECK(one.stderr_ == many.stderr_);
}
