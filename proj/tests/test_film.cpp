#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sieve/film.hpp>

#include <cmath>

using namespace sieve;

namespace {

Vector vec1(double v) { return Vector::Constant(1, v); }

FilmSpec default_film() {
  FilmSpec spec;
  spec.omega = Rectangle{};
  spec.eps = 0.25;
  spec.delta = 0.01;
  spec.r = 0.01;
  return spec;
}

RegimeSequences membrane_schedule() {
  return {ScaleSequence::power(2, -1), ScaleSequence::power(2, -5), ScaleSequence::power(2, -4), 3, 1.5};
}

}  // namespace

TEST_CASE("film grid resolves holes and thickness") {
  const auto spec = default_film();
  const auto grid = build_film_grid(spec);
  CHECK(grid.cx.size() == 3);
  CHECK(grid.cy.size() == 3);
  CHECK(grid.nz1() == spec.layers + 1);
  CHECK(grid.z_upper.front() == 0.0);
  CHECK(grid.z_upper.back() == doctest::Approx(spec.delta));
  CHECK(grid.z_lower.back() == 0.0);
  for (std::size_t i = 1; i < grid.x.size(); ++i) {
    CHECK(grid.x[i] > grid.x[i - 1]);
    CHECK(grid.x[i] - grid.x[i - 1] <= spec.max_step() * (1 + 1e-12));
  }
  // lateral step near a centre is r / hole_divisions
  bool found = false;
  for (std::size_t i = 1; i < grid.x.size(); ++i)
    if (std::abs(grid.x[i - 1] - 0.25) < 1e-12)
      found = std::abs(grid.x[i] - grid.x[i - 1] - spec.r / spec.hole_divisions) < 1e-12;
  CHECK(found);
  int inside = 0;
  for (auto h : grid.hole) inside += h;
  CHECK(inside > 0);
}

TEST_CASE("film geometry errors") {
  auto spec = default_film();
  spec.r = 0.2;
  CHECK_THROWS_WITH_AS(spec.validate(), "holes overlap: need r < eps/2", Error);
  spec = default_film();
  spec.hole_divisions = 1;
  CHECK_THROWS_WITH_AS(spec.validate(), "holes unresolved: need >= 2 voxels across r", Error);
  spec = default_film();
  spec.layers = 1;
  CHECK_THROWS_WITH_AS(spec.validate(), "film unresolved: need >= 2 voxels through delta", Error);
  spec = default_film();
  spec.voxel_budget = 1000;
  try {
    build_film_grid(spec);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).rfind("voxel budget exceeded", 0) == 0);
  }
}

TEST_CASE("zero field has zero film energy") {
  const auto spec = default_film();
  const auto grid = build_film_grid(spec);
  const auto zero = [](double, double, double) { return vec1(0.0); };
  const auto f = make_film_field(grid, 1, zero, zero);
  CHECK(direct_film_energy(spec, grid, EnergyDensity::power(1, 3, 1.5), f) == 0.0);
}

TEST_CASE("lateral ramp on both films has energy two") {
  const auto spec = default_film();
  const auto grid = build_film_grid(spec);
  const auto ramp = [](double x, double, double) { return vec1(x); };
  const auto f = make_film_field(grid, 1, ramp, ramp);
  CHECK(direct_film_energy(spec, grid, EnergyDensity::power(1, 3, 1.5), f) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("film energy is p-homogeneous") {
  const auto spec = default_film();
  const auto grid = build_film_grid(spec);
  const auto W = EnergyDensity::power(1, 3, 1.5);
  const auto up = [](double x, double y, double z) { return vec1(std::sin(3 * x) * y + 20 * z); };
  const auto lo = [](double x, double y, double z) { return vec1(x * y - 5 * z * z); };
  const double e = direct_film_energy(spec, grid, W, make_film_field(grid, 1, up, lo));
  for (double lambda : {0.5, 2.0, 5.0}) {
    const auto f = make_film_field(
        grid, 1, [&](double x, double y, double z) { return Vector(lambda * up(x, y, z)); },
        [&](double x, double y, double z) { return Vector(lambda * lo(x, y, z)); });
    CHECK(direct_film_energy(spec, grid, W, f) == doctest::Approx(std::pow(lambda, 1.5) * e).epsilon(1e-12));
  }
}

TEST_CASE("layer-wise affine fields match the closed form") {
  auto spec = default_film();
  spec.omega = Rectangle{0.0, 1.0, 0.0, 0.5};
  const auto grid = build_film_grid(spec);
  Matrix A(2, 3);
  A << 0.4, -0.1, 0.6, 0.2, 0.9, -0.3;
  Matrix Fbar(2, 2);
  Fbar << 1.1, -0.7, 0.3, 0.25;
  const auto W = EnergyDensity::double_well(A, 1.5);
  const auto affine = [&](double x, double y, double) {
    Vector v = Fbar.col(0) * x + Fbar.col(1) * y;
    v(0) += 0.3;
    return v;
  };
  const auto f = make_film_field(grid, 2, affine, affine);
  Matrix F = Matrix::Zero(2, 3);
  F.leftCols(2) = Fbar;
  const double closed = 2 * spec.omega.area() * eval(W, F);
  CHECK(direct_film_energy(spec, grid, W, f) == doctest::Approx(closed).epsilon(1e-12));
}

TEST_CASE("hole nodes share one trace") {
  const auto spec = default_film();
  const auto grid = build_film_grid(spec);
  const auto f = make_film_field(
      grid, 1, [](double, double, double) { return vec1(1.0); }, [](double, double, double) { return vec1(0.0); });
  const int kl = grid.nz1() - 1;
  for (int j = 0; j < grid.ny1(); ++j)
    for (int i = 0; i < grid.nx1(); ++i) {
      const std::size_t lat = grid.index(i, j, 0);
      const double up = f.upper(0, grid.index(i, j, 0)), lo = f.lower(0, grid.index(i, j, kl));
      if (grid.hole[lat]) {
        CHECK(up == 0.5);
        CHECK(lo == 0.5);
      } else {
        CHECK(up == 1.0);
        CHECK(lo == 0.0);
      }
    }
  FilmField bad = f;
  for (std::size_t k = 0; k < grid.lateral_nodes(); ++k)
    if (grid.hole[k]) {
      bad.upper(0, k) = 0.9;
      break;
    }
  CHECK_THROWS_WITH_AS(direct_film_energy(spec, grid, EnergyDensity::power(1, 3, 1.5), bad),
                       "mid-plane trace differs inside a hole", Error);
}

TEST_CASE("trend without a jump has zero gap") {
  TrendOptions opts;
  opts.j0 = 1;
  opts.j1 = 3;
  const auto rep = gamma_trend(membrane_schedule(), vec1(0.5), vec1(0.5), EnergyDensity::power(1, 3, 1.5), opts);
  REQUIRE(rep.rows.size() == 3);
  for (const auto& row : rep.rows) {
    CHECK(row.film_energy == 0.0);
    CHECK(row.limit == 0.0);
    CHECK(row.gap == 0.0);
  }
  CHECK(rep.monotone);
  CHECK(rep.pass);
}

TEST_CASE("trend truncates the schedule when the budget is exhausted") {
  TrendOptions opts;
  opts.j0 = 1;
  opts.j1 = 3;
  opts.film.voxel_budget = 3e4;
  opts.growth_candidates = {};
  const auto rep = gamma_trend(membrane_schedule(), vec1(0.0), vec1(0.0), EnergyDensity::power(1, 3, 1.5), opts);
  CHECK(rep.rows.size() < 3);
  REQUIRE_FALSE(rep.warnings.empty());
  CHECK(rep.warnings.front().find("schedule truncated") != std::string::npos);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("trend input errors") {
  TrendOptions opts;
  auto glued = membrane_schedule();
  glued.delta = ScaleSequence::power(2, -6);
  glued.r = ScaleSequence::power(2, -3);
  CHECK_THROWS_AS(gamma_trend(glued, vec1(1.0), vec1(0.0), EnergyDensity::power(1, 3, 1.5), opts), Error);
  auto n4 = membrane_schedule();
  n4.n = 4;
  n4.p = 2.0;
  CHECK_THROWS_AS(gamma_trend(n4, vec1(1.0), vec1(0.0), EnergyDensity::power(1, 3, 2.0), opts), Error);
}
