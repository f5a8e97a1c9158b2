#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sieve/energy.hpp>

#include <cmath>
#include <random>

using namespace sieve;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int m, int n, double norm) {
  std::normal_distribution<double> g;
  Matrix F(m, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i) F(i, j) = g(rng);
  return F * (norm / F.norm());
}

// Central differences of W, entry by entry.
Matrix fd_gradient(const EnergyDensity& W, const Matrix& F, double h) {
  Matrix G(F.rows(), F.cols());
  for (int j = 0; j < F.cols(); ++j)
    for (int i = 0; i < F.rows(); ++i) {
      Matrix a = F, b = F;
      a(i, j) += h;
      b(i, j) -= h;
      G(i, j) = (W.regularized_value(a) - W.regularized_value(b)) / (2 * h);
    }
  return G;
}

// Brute-force inf over a scalar z: a fine scan followed by golden refinement
// of the best bracket.
double brute_inf(const std::function<double(double)>& f, double lo, double hi) {
  const int n = 20001;
  double best = f(lo), arg = lo;
  for (int k = 1; k < n; ++k) {
    const double z = lo + (hi - lo) * k / (n - 1);
    if (const double v = f(z); v < best) best = v, arg = z;
  }
  double a = arg - (hi - lo) / (n - 1), b = arg + (hi - lo) / (n - 1);
  const double r = (std::sqrt(5.0) - 1) / 2;
  for (int it = 0; it < 200; ++it) {
    const double c = b - r * (b - a), d = a + r * (b - a);
    if (f(c) < f(d)) b = d;
    else a = c;
  }
  return std::min(best, f(0.5 * (a + b)));
}

}  // namespace

TEST_CASE("eval of the power kind follows |F|^p") {
  const auto W = EnergyDensity::power(1, 3, 1.5);
  CHECK(eval(W, Matrix::Zero(1, 3)) == 0.0);
  Matrix F(1, 3);
  F << 2, 0, 0;
  CHECK(eval(W, F) == doctest::Approx(2.8284271247461903).epsilon(1e-14));
}

TEST_CASE("double well vanishes at its wells") {
  Matrix A(1, 3);
  A << 0.3, -1.0, 0.5;
  const auto W = EnergyDensity::double_well(A, 2.0);
  CHECK(eval(W, A) == 0.0);
  CHECK(eval(W, -A) == 0.0);
  CHECK(eval(W, Matrix::Zero(1, 3)) == doctest::Approx(A.squaredNorm()));
}

TEST_CASE("shape mismatch names expected and given shapes") {
  const auto W = EnergyDensity::power(2, 3, 1.5);
  try {
    eval(W, Matrix::Zero(1, 3));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::validation);
    CHECK(std::string(e.what()).find("expected 2x3, given 1x3") != std::string::npos);
  }
}

TEST_CASE("gradient of the quadratic power is 2F") {
  std::mt19937_64 rng(3);
  const auto W = EnergyDensity::power(2, 3, 2.0);
  for (int k = 0; k < 5; ++k) {
    const Matrix F = random_matrix(rng, 2, 3, 1.7);
    CHECK((gradient(W, F) - 2 * F).norm() <= 1e-14 * F.norm());
  }
}

TEST_CASE("regularized gradient vanishes at the origin and exact gradient refuses it") {
  const auto W = EnergyDensity::power(1, 3, 1.5);
  CHECK(gradient(W.with_reg_eps(1e-6), Matrix::Zero(1, 3)).norm() == 0.0);
  try {
    gradient(W, Matrix::Zero(1, 3));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("non-differentiable point") != std::string::npos);
  }
}

TEST_CASE("power gradient matches central differences at unit norm") {
  std::mt19937_64 rng(11);
  const auto W = EnergyDensity::power(1, 3, 1.5);
  for (int k = 0; k < 20; ++k) {
    const Matrix F = random_matrix(rng, 1, 3, 1.0);
    const Matrix g = gradient(W, F), fd = fd_gradient(W, F, 1e-5);
    CHECK((g - fd).norm() / g.norm() < 1e-6);
  }
}

TEST_CASE("gradient consistency for every shipped kind") {
  std::mt19937_64 rng(5);
  Matrix M(2, 2);
  M << 2.0, 0.5, -0.3, 1.0;
  Matrix A = Matrix::Zero(2, 3);
  A(0, 0) = 1.0;
  A(1, 2) = -0.5;
  const std::vector<EnergyDensity> kinds = {
      EnergyDensity::power(2, 3, 1.5).with_reg_eps(1e-3),
      EnergyDensity::anisotropic(M, 3, 2.5).with_reg_eps(1e-3),
      EnergyDensity::double_well(A, 1.5).with_reg_eps(1e-3),
      EnergyDensity::sum({EnergyDensity::power(2, 3, 1.5), EnergyDensity::power_term(2, 3, 0.75, 1.5)})
          .with_reg_eps(1e-3)};
  for (const auto& W : kinds) {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      Matrix F = random_matrix(rng, 2, 3, 0.2 + 2.0 * (k % 10) / 10.0);
      // keep away from the switching set of the double well
      if (W.kind() == DensityKind::double_well && std::abs((F - A).norm() - (F + A).norm()) < 1e-2) continue;
      const Matrix g = gradient(W, F), fd = fd_gradient(W, F, 1e-6);
      worst = std::max(worst, (g - fd).norm() / std::max(g.norm(), 1e-8));
    }
    CHECK_MESSAGE(worst < 1e-4, W.name());
  }
}

TEST_CASE("power kind is p-homogeneous") {
  std::mt19937_64 rng(8);
  const auto W = EnergyDensity::power(2, 4, 1.5);
  for (double lambda : {0.1, 0.5, 3.0, 17.0}) {
    const Matrix F = random_matrix(rng, 2, 4, 1.3);
    CHECK(eval(W, lambda * F) == doctest::Approx(std::pow(lambda, 1.5) * eval(W, F)).epsilon(1e-13));
  }
}

TEST_CASE("validate_growth accepts the power kind with beta 1") {
  const auto rep = validate_growth(EnergyDensity::power(1, 3, 1.5), 200, 50.0);
  CHECK(rep.pass);
  CHECK(rep.zero_at_origin);
  CHECK(rep.empirical_beta <= 1.0);
  CHECK(rep.empirical_beta > 0.99);
  CHECK(rep.empirical_lipschitz > 0.0);
}

TEST_CASE("validate_growth rejects exponential growth") {
  const auto W = EnergyDensity::custom("exp", 1, 3, 1.5, 1.0,
                                       [](const Gradient& F) { return std::exp(F.norm()) - 1.0; });
  const auto rep = validate_growth(W, 200, 20.0);
  CHECK_FALSE(rep.pass);
  CHECK_FALSE(rep.upper_bound_ok);
  CHECK(rep.worst_upper_sample.norm() >= 10.0);
}

TEST_CASE("validate_growth rejects a nonzero value at the origin") {
  const auto W = EnergyDensity::custom("offset", 1, 3, 1.5, 2.0,
                                       [](const Gradient& F) { return std::pow(F.norm(), 1.5) + 1.0; });
  const auto rep = validate_growth(W, 100, 5.0);
  CHECK_FALSE(rep.zero_at_origin);
  CHECK(rep.value_at_origin == 1.0);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("reduce_wbar of the power kind drops the last column") {
  const ReducedDensity rd{EnergyDensity::power(1, 3, 1.5), ReductionMode::wbar, {}};
  Matrix Fbar(1, 2);
  Fbar << 0.6, 0.8;
  CHECK(reduce_wbar(rd, Fbar) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("reduce_wbar of a shifted power vanishes at the reduced shift") {
  Matrix A(1, 3);
  A << 0.4, -0.2, 0.7;
  const auto W = EnergyDensity::custom("shifted", 1, 3, 1.5, 4.0, [A](const Gradient& F) {
    return std::pow((Matrix(F) - A).norm(), 1.5);
  });
  const ReducedDensity rd{W, ReductionMode::wbar, {}};
  CHECK(reduce_wbar(rd, A.leftCols(2)) <= 1e-9);
}

TEST_CASE("reduce_wbar of a double well matches a brute-force scan") {
  Matrix A(1, 3);
  A << 1.0, 0.0, 0.8;
  const auto W = EnergyDensity::double_well(A, 2.0);
  const ReducedDensity rd{W, ReductionMode::wbar, {}};
  for (double x : {-0.5, 0.0, 0.25, 0.9}) {
    Matrix Fbar(1, 2);
    Fbar << x, 0.3;
    const double oracle = brute_inf(
        [&](double z) {
          Matrix F(1, 3);
          F << x, 0.3, z;
          return eval(W, F);
        },
        -5.0, 5.0);
    CHECK(reduce_wbar(rd, Fbar) == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("reduced value never exceeds the base along random last columns") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  Matrix A = Matrix::Zero(2, 3);
  A(0, 0) = 1.0;
  A(1, 2) = 0.6;
  const auto W = EnergyDensity::double_well(A, 1.5);
  const ReducedDensity rd{W, ReductionMode::wbar, {}};
  for (int k = 0; k < 5; ++k) {
    const Matrix Fbar = random_matrix(rng, 2, 2, 1.0);
    const double wbar = reduce_wbar(rd, Fbar);
    for (int s = 0; s < 100; ++s) {
      Matrix F(2, 3);
      F.leftCols(2) = Fbar;
      F(0, 2) = 2 * g(rng);
      F(1, 2) = 2 * g(rng);
      CHECK(wbar <= eval(W, F) + 1e-12);
    }
  }
}

TEST_CASE("closed-form reduction agrees with the numerical infimum") {
  Matrix M(1, 1);
  M << 1.7;
  const auto W = EnergyDensity::anisotropic(M, 3, 1.5);
  const auto reduced = W.reduced();
  REQUIRE(reduced.has_value());
  const ReducedDensity rd{W, ReductionMode::wbar, {}};
  Matrix Fbar(1, 2);
  Fbar << 0.3, -1.1;
  CHECK(eval(*reduced, Fbar) == doctest::Approx(reduce_wbar(rd, Fbar)).epsilon(1e-8));
}

TEST_CASE("lamination leaves convex densities unchanged") {
  std::mt19937_64 rng(4);
  const auto W = EnergyDensity::power(2, 2, 1.5);
  for (int depth = 0; depth <= 3; ++depth) {
    const auto env = EnvelopeApprox::of(W, depth);
    for (int k = 0; k < 5; ++k) {
      const Matrix F = random_matrix(rng, 2, 2, 1.0 + k);
      CHECK(laminate_envelope(env, F) == doctest::Approx(eval(W, F)).epsilon(1e-14));
    }
  }
}

TEST_CASE("one laminate level closes the scalar double well at the origin") {
  Matrix A(1, 2);
  A << 1.0, 0.5;
  const auto W = EnergyDensity::double_well(A, 2.0);
  const auto env = EnvelopeApprox::of(W, 1);
  // oracle: the laminate between the wells +A and -A with t = 1/2 has value 0
  CHECK(laminate_envelope(env, Matrix::Zero(1, 2)) <= 1e-12);
}

TEST_CASE("envelope chain is monotone in depth") {
  std::mt19937_64 rng(9);
  Matrix A(1, 2);
  A << 1.0, -0.4;
  const auto W = EnergyDensity::double_well(A, 2.0);
  const auto e1 = EnvelopeApprox::of(W, 1), e2 = EnvelopeApprox::of(W, 2), e3 = EnvelopeApprox::of(W, 3);
  for (int k = 0; k < 50; ++k) {
    const Matrix F = random_matrix(rng, 1, 2, 0.1 + 0.05 * k);
    const double b = eval(W, F), v1 = laminate_envelope(e1, F), v2 = laminate_envelope(e2, F),
                 v3 = laminate_envelope(e3, F);
    CHECK(v1 <= b + 1e-14);
    CHECK(v2 <= v1 + 1e-14);
    CHECK(v3 <= v2 + 1e-14);
  }
}

TEST_CASE("g_limit of p-homogeneous and lower-order perturbed densities") {
  std::mt19937_64 rng(2);
  const Matrix F = random_matrix(rng, 1, 3, 1.3);
  const auto W = EnergyDensity::power(1, 3, 1.5);
  CHECK(g_limit(W, F).value == doctest::Approx(eval(W, F)).epsilon(1e-12));
  CHECK(g_limit(W, Matrix::Zero(1, 3)).value == 0.0);

  const auto V = EnergyDensity::sum({W, EnergyDensity::power_term(1, 3, 0.75, 1.5)});
  const auto res = g_limit(V, F);
  CHECK(std::abs(res.value - eval(W, F)) / eval(W, F) < 1e-4);
  CHECK(res.sequence.size() == res.r.size());
}

TEST_CASE("g_limit schedule needs two decades") {
  const auto W = EnergyDensity::power(1, 3, 1.5);
  const double r[] = {1.0, 0.5, 0.25};
  CHECK_THROWS_AS(g_limit(W, Matrix::Ones(1, 3), r), Error);
}
