#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "ntp/dsl.hpp"
#include "ntp/error.hpp"
#include "ntp/program.hpp"

using namespace ntp;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

double eval1(const NonlinExpr& e, double x) { return eval_nonlin(e, std::vector<double>{x}, {}); }

std::set<std::set<std::string>> as_partition(const std::vector<std::vector<std::string>>& cdc) {
  std::set<std::set<std::string>> out;
  for (const auto& c : cdc) out.emplace(c.begin(), c.end());
  return out;
}

const char* kSemicircle = R"(
matrix W : n x n var 0.5
vector v : n
x = matmul W v
y = matmul W^T v
z = nonlin add(x, y)
)";

std::string mlp_source(int L, bool tie) {
  std::string s = "vector x0 : d\n";
  for (int l = 1; l <= L; ++l)
    s += "matrix W" + std::to_string(l) + " : c" + std::to_string(l) + " x " +
         (l == 1 ? std::string("d") : "c" + std::to_string(l - 1)) + " var 2\n";
  std::string prev = "x0";
  for (int l = 1; l <= L; ++l) {
    const std::string h = "h" + std::to_string(l);
    s += h + " = matmul W" + std::to_string(l) + " " + prev + "\n";
    prev = "x" + std::to_string(l);
    s += prev + " = nonlin relu(x1) (" + h + ")\n";
  }
  if (tie)
    for (int l = 2; l <= L; ++l) s += "equiv h1 h" + std::to_string(l) + "\n";
  return s;
}

}  // namespace

TEST_CASE("eval_nonlin examples") {
  CHECK(eval1(expr::relu(), -1.0) == 0.0);
  CHECK(eval1(NonlinExpr::mul(expr::step(), NonlinExpr::constant(2.0)), 0.3) == 2.0);
  CHECK(eval1(expr::square(), 3.0) == 9.0);
  CHECK(eval1(expr::step(), 0.0) == 0.0);
  CHECK(kind_of([] { eval_nonlin(expr::product(), std::vector<double>{1.0}, {}); }) ==
        ErrorKind::ArityMismatch);
}

TEST_CASE("bounded expressions stay inside their static range") {
  const std::vector<std::string> sources = {
      "step(x1)", "tanh(x1) * 3 - 1", "clamp(x1 * x1, -1, 2)", "1 - tanh(x1)^2",
      "max(step(x1), tanh(x1)) + min(clamp(x1, 0, 1), 0.5)", "abs(tanh(x1)) * step(x1 - 1)"};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (const auto& src : sources) {
    const NonlinExpr e = parse_expr(src);
    REQUIRE(e.bounded());
    const Interval range = e.range();
    for (int i = 0; i < 100000; ++i) {
      const double v = eval1(e, u(rng));
      CHECK_MESSAGE((v >= range.lo && v <= range.hi), src);
    }
  }
  CHECK_FALSE(parse_expr("relu(x1)").bounded());
  CHECK_FALSE(parse_expr("x1 * step(x1)").bounded());
}

TEST_CASE("build_program examples") {
  const Program p = parse_program(kSemicircle);
  CHECK(p.classes().size() == 1);
  CHECK(p.instructions().size() == 3);

  const Program empty = build_program({});
  CHECK(empty.vectors().empty());
  CHECK(empty.classes().empty());

  CHECK(kind_of([] { parse_program("matrix W : a x b\nvector v : a\nx = matmul W v\n"); }) ==
        ErrorKind::DimClassConflict);
  CHECK(kind_of([] { parse_program("vector v : n\nx = matmul W v\n"); }) ==
        ErrorKind::UndeclaredSymbol);
  CHECK(kind_of([] { parse_program("vector v : n\nvector v : n\n"); }) ==
        ErrorKind::DuplicateSymbol);
  CHECK(kind_of([] { parse_program("vector v : n\nx = nonlin x1 * x2 (v)\n"); }) ==
        ErrorKind::ArityMismatch);
}

TEST_CASE("CDC partition") {
  const Program mlp = parse_program(mlp_source(3, false));
  const auto cdc = compute_cdc(mlp);
  CHECK(cdc.size() == 4);  // input class plus one per layer
  CHECK(as_partition(cdc).count({"h2", "x2"}) == 1);

  const Program tied = parse_program(mlp_source(3, true));
  CHECK(compute_cdc(tied).size() == 2);
  CHECK(as_partition(compute_cdc(tied)).count({"h1", "x1", "h2", "x2", "h3", "x3"}) == 1);

  const Program square = parse_program(kSemicircle);
  CHECK(compute_cdc(square).size() == 1);

  // Idempotent and insensitive to topologically valid reorderings.
  CHECK(compute_cdc(mlp) == compute_cdc(mlp));
  std::vector<Declaration> decls = tied.declarations();
  std::stable_partition(decls.begin(), decls.end(),
                        [](const Declaration& d) { return std::holds_alternative<EquivDecl>(d); });
  CHECK(as_partition(compute_cdc(build_program(decls))) == as_partition(compute_cdc(tied)));
}

TEST_CASE("G-vars are initial vectors and MatMul outputs") {
  const Program p = parse_program(kSemicircle);
  CHECK(p.gvars() == std::vector<std::string>{"v", "x", "y"});
  CHECK_FALSE(p.is_gvar("z"));
}

TEST_CASE("covariance repair") {
  const Program ok = parse_program("vector a : n\nvector b : n\ncov a b 1.0000000000001\n");
  CHECK(ok.init_blocks().front().cov(0, 1) <= 1.0000000000001);
  CHECK(kind_of([] { parse_program("vector a : n\nvector b : n\ncov a b 1.5\n"); }) ==
        ErrorKind::NonPSD);
}

TEST_CASE("scalar rules converge to their limit") {
  const Program p = parse_program("scalar c limit 0 rule 0 1 / 1\n");
  CHECK(p.init_scalars().front().rule.at(100.0) == doctest::Approx(0.01));
  CHECK(kind_of([] { parse_program("scalar c limit 1 rule 0 1 / 1\n"); }) ==
        ErrorKind::InvalidArgument);
}
