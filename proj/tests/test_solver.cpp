#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sieve/cell.hpp>
#include <sieve/solver.hpp>

#include <cmath>
#include <random>

using namespace sieve;

namespace {

constexpr double kPi = 3.14159265358979323846;

Vector vec1(double v) { return Vector::Constant(1, v); }

// Slit cell with z above and 0 below on the lateral boundary.
struct SlitProblem {
  SlitMesh mesh;
  BoundaryCondition bc;
};

SlitProblem slit_problem(double z, double h = 0.25) {
  CellDomainSpec spec;
  spec.d = 3;
  spec.N = 3;
  spec.resolution = h;
  SlitProblem pr{build_slit_mesh(spec), {}};
  pr.bc.set(BoundaryTag::lateral_upper, vec1(z)).set(BoundaryTag::lateral_lower, vec1(0.0));
  return pr;
}

// Concentric shell s in (1, 2) on a slab of unit height with potential 1 on
// the inner core and 0 on the lateral boundary.
double shell_energy(double p, double h) {
  CellDomainSpec spec;
  spec.d = 3;
  spec.N = 2;
  spec.half_height = 0.5;
  spec.resolution = h;
  spec.vertical_resolution = 0.25;
  spec.slit = false;
  const auto mesh = build_slit_mesh(spec);
  BoundaryCondition bc;
  bc.set(BoundaryTag::inner_core, vec1(1.0))
      .set(BoundaryTag::lateral_upper, vec1(0.0))
      .set(BoundaryTag::lateral_lower, vec1(0.0));
  const auto res = minimize(mesh, EnergyDensity::power(1, 4, p), bc, 1.0);
  REQUIRE(res.diagnostics.converged);
  return res.diagnostics.final_energy;
}

// Independent radial oracle: the minimiser of int |psi'|^p s^2 ds with
// psi(1) = 1, psi(2) = 0 has psi' = -c s^{-2/(p-1)}, so the energy is
// 4 pi (int_1^2 s^{-2/(p-1)} ds)^{1-p}.
double shell_oracle(double p) {
  const int n = 200000;
  double integral = 0.0;
  for (int k = 0; k < n; ++k) {
    const double s = 1.0 + (k + 0.5) / n;
    integral += std::pow(s, -2.0 / (p - 1)) / n;
  }
  return 4 * kPi * std::pow(integral, 1 - p);
}

}  // namespace

TEST_CASE("zero data gives the zero field") {
  auto pr = slit_problem(0.0);
  const auto res = minimize(pr.mesh, EnergyDensity::power(1, 4, 1.5), pr.bc, 1.0);
  CHECK(res.field.norm() == 0.0);
  CHECK(res.diagnostics.final_energy == 0.0);
  CHECK(res.diagnostics.converged);
}

TEST_CASE("shell capacity with p = 2") {
  const double oracle = shell_oracle(2.0);
  CHECK(oracle == doctest::Approx(8 * kPi).epsilon(1e-8));
  CHECK(radial_capacity(3, 2.0, 1.0, 2.0) == doctest::Approx(oracle).epsilon(1e-8));
  const double e = shell_energy(2.0, 0.05);
  CHECK(std::abs(e - 8 * kPi) / (8 * kPi) < 0.01);
}

TEST_CASE("shell capacity with p = 1.5") {
  const double oracle = shell_oracle(1.5);
  CHECK(radial_capacity(3, 1.5, 1.0, 2.0) == doctest::Approx(oracle).epsilon(1e-8));
  const double e = shell_energy(1.5, 0.05);
  CHECK(std::abs(e - oracle) / oracle < 0.01);
}

TEST_CASE("assembled gradient agrees with finite differences") {
  auto pr = slit_problem(1.0);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  Field z(1, pr.mesh.num_nodes());
  for (int i = 0; i < z.cols(); ++i) z(0, i) = g(rng);
  CHECK(check_gradient(pr.mesh, EnergyDensity::power(1, 4, 2.0), z, 1.0, 40) < 1e-8);
  CHECK(check_gradient(pr.mesh, EnergyDensity::power(1, 4, 1.5).with_reg_eps(1e-3), z, 1.0, 40) < 1e-4);
  CHECK(check_gradient(pr.mesh, EnergyDensity::power(1, 4, 1.5).with_reg_eps(1e-3), z, 3.0, 40) < 1e-4);
}

TEST_CASE("constant field is stationary on a mesh without a slit") {
  CellDomainSpec spec;
  spec.d = 2;
  spec.N = 2;
  spec.slit = false;
  const auto mesh = build_slit_mesh(spec);
  const auto W = EnergyDensity::power(1, 3, 1.5).with_reg_eps(1e-3);
  Field grad;
  assemble_energy(mesh, W, Field::Constant(1, mesh.num_nodes(), 0.7), 1.0, &grad);
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("energy decreases within each stage and Dirichlet data is exact") {
  auto pr = slit_problem(1.0);
  const auto res = minimize(pr.mesh, EnergyDensity::power(1, 4, 1.5), pr.bc, 1.0);
  CHECK(res.diagnostics.converged);
  CHECK(res.diagnostics.monotone);
  for (const auto& st : res.diagnostics.stages) CHECK(st.monotone);
  for (int id : pr.mesh.tags.at(BoundaryTag::lateral_upper)) CHECK(res.field(0, id) == 1.0);
  for (int id : pr.mesh.tags.at(BoundaryTag::lateral_lower))
    if (pr.mesh.node_side[id] < 0) CHECK(res.field(0, id) == 0.0);
}

TEST_CASE("convex problem reaches the same energy from two starting fields") {
  auto pr = slit_problem(1.0);
  const auto W = EnergyDensity::power(1, 4, 1.5);
  SolveOptions opts;
  opts.grad_tol = 1e-10;
  const auto a = minimize(pr.mesh, W, pr.bc, 1.0, opts);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(-1.0, 2.0);
  Field start(1, pr.mesh.num_nodes());
  for (int i = 0; i < start.cols(); ++i) start(0, i) = U(rng);
  const auto b = minimize(pr.mesh, W, pr.bc, 1.0, opts, start);
  CHECK(a.diagnostics.converged);
  CHECK(b.diagnostics.converged);
  CHECK(std::abs(a.diagnostics.final_energy - b.diagnostics.final_energy) / a.diagnostics.final_energy < 1e-6);
}

TEST_CASE("regularization gap vanishes at order at least p/2") {
  auto pr = slit_problem(1.0);
  const double p = 1.5;
  const auto W = EnergyDensity::power(1, 4, p);
  std::vector<double> gaps;
  const std::vector<double> eps = {1e-2, 1e-3, 1e-4};
  for (double e : eps) {
    SolveOptions opts;
    opts.continuation.clear();
    for (double c = 1e-1; c >= e * (1 - 1e-9); c /= 10) opts.continuation.push_back(c);
    const auto res = minimize(pr.mesh, W, pr.bc, 1.0, opts);
    gaps.push_back(res.diagnostics.regularization_gap);
  }
  for (std::size_t k = 0; k + 1 < gaps.size(); ++k)
    CHECK(std::log10(gaps[k] / gaps[k + 1]) >= p / 2);
}

TEST_CASE("invalid options are rejected") {
  SolveOptions opts;
  opts.continuation = {1e-3, 1e-2};
  CHECK_THROWS_AS(opts.validate(), Error);
  opts = {};
  opts.grad_tol = 0.0;
  CHECK_THROWS_AS(opts.validate(), Error);
}
