#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sieve/cell.hpp>

#include <cmath>

using namespace sieve;

namespace {

constexpr double kPi = 3.14159265358979323846;

Vector vec1(double v) { return Vector::Constant(1, v); }

// Composite Simpson quadrature of the radial capacity integral. The tail to
// infinity is taken in s = r_in e^x and cut where the integrand falls below
// 1e-16 of its initial value.
double capacity_oracle(int d, double p, double r_in, double r_out) {
  const double k = (d - 1.0) / (p - 1.0);
  const int n = 200000;
  auto simpson = [&](auto f, double a, double b) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
    return s * h / 3;
  };
  double integral;
  if (std::isinf(r_out))
    integral = simpson([&](double x) { return std::pow(r_in, 1 - k) * std::exp((1 - k) * x); }, 0.0,
                       37.0 / (k - 1));
  else
    integral = simpson([&](double s) { return std::pow(s, -k); }, r_in, r_out);
  const double sphere = 2 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d);
  return sphere * std::pow(integral, 1 - p);
}

CellProblemSpec small(Regime regime, double z, double ell = 1.0) {
  auto spec = CellProblemSpec::scalar(regime, 2, 1.5, z, ell);
  spec.N_list = {2.0, 3.0, 4.0};
  spec.resolution = 0.25;
  return spec;
}

}  // namespace

TEST_CASE("radial capacity agrees with quadrature") {
  CHECK(radial_capacity(3, 2.0, 1.0, kInfinity) == doctest::Approx(4 * kPi).epsilon(1e-13));
  CHECK(radial_capacity(3, 2.0, 1.0, 2.0) == doctest::Approx(8 * kPi).epsilon(1e-13));
  for (auto [d, p] : {std::pair{2, 1.5}, {3, 1.5}, {3, 2.0}, {3, 2.5}, {4, 2.0}, {4, 3.0}})
    for (double r_out : {1.5, 2.0, 8.0, kInfinity}) {
      const double ref = capacity_oracle(d, p, 1.0, r_out);
      CHECK(radial_capacity(d, p, 1.0, r_out) == doctest::Approx(ref).epsilon(1e-7));
    }
  CHECK(radial_capacity(3, 2.0, 2.0, 4.0) == doctest::Approx(capacity_oracle(3, 2.0, 2.0, 4.0)).epsilon(1e-7));
}

TEST_CASE("radial capacity decreases in the outer radius") {
  double prev = radial_capacity(3, 1.5, 1.0, 1.1);
  for (double r : {1.5, 2.0, 4.0, 10.0, 100.0}) {
    const double v = radial_capacity(3, 1.5, 1.0, r);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(radial_capacity(3, 2.0, 1.0, 10.0) > radial_capacity(3, 2.0, 1.0, kInfinity));
}

TEST_CASE("radial capacity errors") {
  try {
    radial_capacity(3, 3.0, 1.0, 2.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "capacity degenerate (infinite-extent potential)");
    CHECK(e.kind() == ErrorKind::domain);
  }
  CHECK_THROWS_AS(radial_capacity(3, 2.0, 2.0, 1.0), Error);
}

TEST_CASE("extrapolation of model sequences") {
  const std::vector<double> N = {2, 4, 8};
  const auto ex = extrapolate(N, {5 + 3.0 / 2, 5 + 3.0 / 4, 5 + 3.0 / 8}, 1.0);
  CHECK(ex.limit() == doctest::Approx(5.0).epsilon(1e-13));
  CHECK(ex.residual() < 1e-13);
  CHECK(ex.free.rate == doctest::Approx(1.0).epsilon(1e-6));

  const auto flat = extrapolate(N, {2.5, 2.5, 2.5}, 1.0);
  CHECK(flat.limit() == 2.5);
  CHECK(flat.residual() == 0.0);
}

TEST_CASE("extrapolation of truncated capacities") {
  const std::vector<double> N = {2, 4, 8};
  const std::vector<double> caps = {8 * kPi, 16 * kPi / 3, 32 * kPi / 7};
  for (std::size_t i = 0; i < N.size(); ++i) CHECK(radial_capacity(3, 2.0, 1.0, N[i]) == doctest::Approx(caps[i]));
  const auto cap = extrapolate(N, caps, 1.0, 2.0);
  CHECK(cap.limit() == doctest::Approx(4 * kPi).epsilon(1e-12));
}

TEST_CASE("extrapolation errors") {
  CHECK_THROWS_AS(extrapolate({2, 4}, {1, 1}, 1.0), Error);
  try {
    extrapolate({2, 4, 8}, {1.0, 1.1, 1.0}, 1.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "non-monotone truncation; check solver convergence");
  }
}

TEST_CASE("zero jump costs nothing in every regime") {
  for (auto regime : {Regime::finite, Regime::infinite, Regime::zero}) {
    const auto res = solve_phi(small(regime, 0.0));
    for (double v : res.phi_by_N) CHECK(v == 0.0);
    CHECK(res.phi_extrapolated == 0.0);
  }
}

TEST_CASE("cell values are non-increasing in the truncation radius") {
  for (auto regime : {Regime::finite, Regime::infinite, Regime::zero}) {
    const auto res = solve_phi(small(regime, 1.0));
    CHECK(res.converged);
    for (std::size_t i = 1; i < res.phi_by_N.size(); ++i)
      CHECK(res.phi_by_N[i] <= res.phi_by_N[i - 1] * (1 + 1e-6));
    for (double v : res.phi_by_N) CHECK(v > 0.0);
  }
}

TEST_CASE("cell values are p-homogeneous in the jump") {
  for (auto regime : {Regime::finite, Regime::infinite, Regime::zero}) {
    auto spec = small(regime, 1.0);
    spec.solver.grad_tol = 1e-10;
    const double base = solve_cell(spec, 3.0).phi;
    for (double lambda : {0.5, 2.0, 5.0}) {
      auto s = spec;
      s.z = vec1(lambda);
      CHECK(solve_cell(s, 3.0).phi == doctest::Approx(std::pow(lambda, 1.5) * base).epsilon(1e-6));
    }
  }
}

TEST_CASE("membrane cell reproduces the capacitary value") {
  auto spec = CellProblemSpec::scalar(Regime::infinite, 3, 2.0, 1.0);
  const auto res = solve_phi(spec);
  const double oracle = 0.5 * radial_capacity(3, 2.0, 1.0, kInfinity);
  CHECK(oracle == doctest::Approx(2 * kPi));
  CHECK(std::abs(res.phi_extrapolated - oracle) / oracle < 0.03);
  CHECK(res.trace_mean_dev < 0.01);

  auto doubled = spec;
  doubled.z = vec1(2.0);
  const auto res2 = solve_phi(doubled);
  CHECK(res2.phi_extrapolated == doctest::Approx(4 * res.phi_extrapolated).epsilon(1e-6));
}

TEST_CASE("symmetric scalar cells split the jump evenly on the hole") {
  for (auto regime : {Regime::finite, Regime::zero}) {
    const auto res = solve_phi(small(regime, 1.0));
    CHECK(res.trace_mean_dev < 0.01);
  }
}

TEST_CASE("zero-regime value is insensitive to doubling the vertical truncation") {
  const double N = 4.0;
  const auto W = EnergyDensity::power(1, 3, 1.5);
  auto solve = [&](double T) {
    CellDomainSpec dom;
    dom.d = 2;
    dom.N = N;
    dom.half_height = T;
    dom.resolution = 0.25;
    const auto mesh = build_slit_mesh(dom);
    BoundaryCondition bc;
    bc.set(BoundaryTag::lateral_upper, vec1(1.0))
        .set(BoundaryTag::lateral_lower, vec1(0.0))
        .set(BoundaryTag::top_cap, vec1(1.0))
        .set(BoundaryTag::bottom_cap, vec1(0.0));
    const auto res = minimize(mesh, W, bc, 1.0);
    REQUIRE(res.diagnostics.converged);
    return res.diagnostics.final_energy;
  };
  const double a = solve(N), b = solve(2 * N);
  CHECK(std::abs(a - b) / a < 0.01);
  auto spec = CellProblemSpec::scalar(Regime::zero, 2, 1.5, 1.0);
  spec.resolution = 0.25;
  CHECK(solve_cell(spec, N).phi == doctest::Approx(a).epsilon(1e-9));
}

TEST_CASE("upper bound scan in the symmetric scalar case") {
  auto spec = CellProblemSpec::scalar(Regime::infinite, 3, 2.0, 1.0);
  spec.N_list = {8.0};
  const auto rep = scan_upper_bound(spec, {vec1(0.5), vec1(1.0), vec1(2.0), vec1(0.0)});
  CHECK(rep.pass);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rep.entries[i].ratio > 0.97);
    CHECK(rep.entries[i].ratio <= 1.001);
  }
  CHECK(rep.entries[3].phi == 0.0);
  CHECK(rep.entries[3].pass);
}

TEST_CASE("upper bound scan with an anisotropic density") {
  auto spec = CellProblemSpec::scalar(Regime::infinite, 3, 2.0, 1.0);
  Matrix M(1, 1);
  M << std::sqrt(2.0);
  spec.density = EnergyDensity::anisotropic(M, 4, 2.0);
  spec.N_list = {8.0};
  const auto rep = scan_upper_bound(spec, {vec1(0.5), vec1(1.0)});
  CHECK(spec.limit_density().beta() == doctest::Approx(2.0));
  CHECK(rep.pass);
  CHECK(rep.empirical_c <= 2.0);
  CHECK(rep.empirical_c > 1.9);
}

TEST_CASE("Lipschitz scan along a ray") {
  auto spec = CellProblemSpec::scalar(Regime::infinite, 3, 2.0, 1.0);
  spec.N_list = {8.0};
  std::vector<std::pair<Vector, Vector>> pairs;
  for (double t : {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0})
    pairs.emplace_back(vec1(t), vec1(t + 0.25));
  pairs.emplace_back(vec1(1.0), vec1(1.0));
  const auto rep = scan_lipschitz(spec, pairs);
  CHECK(rep.skipped == 1);
  CHECK(rep.pairs.size() == 10);
  CHECK(rep.finite);
  CHECK(rep.stable);
  // phi(t) = c t^2 with c = 2^{1-p} Cap(B_1; B_N), so every ratio equals c
  const double c = 0.5 * radial_capacity(3, 2.0, 1.0, 8.0);
  CHECK(rep.worst <= 1.05 * c);
  CHECK(rep.worst_fine <= 1.05 * c);
}

TEST_CASE("Lipschitz scan is consistent with homogeneity and small jumps") {
  auto spec = CellProblemSpec::scalar(Regime::infinite, 3, 2.0, 1.0);
  spec.N_list = {4.0};
  spec.solver.grad_tol = 1e-10;
  const double w = 0.8;
  auto s = spec;
  s.z = vec1(w);
  const double phi_w = solve_cell(s, 4.0).phi;
  s.z = vec1(2 * w);
  const double phi_2w = solve_cell(s, 4.0).phi;
  CHECK(phi_2w - phi_w == doctest::Approx(3.0 * phi_w).epsilon(1e-6));

  std::vector<std::pair<Vector, Vector>> tiny;
  for (int k = 1; k <= 10; ++k) tiny.emplace_back(vec1(1e-4 * k), vec1(-1e-4 * k));
  const auto rep = scan_lipschitz(spec, tiny);
  const double c = 0.5 * radial_capacity(3, 2.0, 1.0, 4.0);
  for (const auto& pr : rep.pairs) CHECK(pr.ratio <= 1.05 * c);
}

TEST_CASE("continuity in ell towards the membrane value") {
  auto spec = CellProblemSpec::scalar(Regime::finite, 3, 2.0, 1.0);
  const auto rep = scan_ell_continuity(spec, {1, 2, 4, 8, 16}, 4.0);
  CHECK(rep.decreasing);
  CHECK(rep.rows[4].gap < 0.1);
  CHECK(rep.pass);
  CHECK(std::isinf(rep.rows.back().ell));

  auto zero = spec;
  zero.z = vec1(0.0);
  const auto rep0 = scan_ell_continuity(zero, {1, 16}, 4.0);
  for (const auto& r : rep0.rows) CHECK(r.phi == 0.0);
}

TEST_CASE("cell spec validation") {
  auto spec = CellProblemSpec::scalar(Regime::infinite, 3, 3.0, 1.0);
  try {
    spec.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("1 < p < n-1") != std::string::npos);
  }
  spec = CellProblemSpec::scalar(Regime::infinite, 3, 2.0, 1.0);
  spec.N_list = {4.0, 2.0};
  CHECK_THROWS_AS(spec.validate(), Error);
  CHECK(spec.p_star() == doctest::Approx(6.0));
}
