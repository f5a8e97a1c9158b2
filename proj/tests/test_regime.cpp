#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sieve/regime.hpp>

#include <cmath>

using namespace sieve;

namespace {

RegimeSequences schedule(double e_eps, double e_delta, double e_r, int n = 3, double p = 1.5) {
  return {ScaleSequence::power(2, e_eps), ScaleSequence::power(2, e_delta), ScaleSequence::power(2, e_r), n, p};
}

RegimeSequences listed(const RegimeSequences& s, int terms) {
  RegimeSequences out = s;
  std::vector<double> e, d, r;
  for (int j = 1; j <= terms; ++j) {
    e.push_back(s.eps.at(j));
    d.push_back(s.delta.at(j));
    r.push_back(s.r.at(j));
  }
  out.eps = ScaleSequence::list(e);
  out.delta = ScaleSequence::list(d);
  out.r = ScaleSequence::list(r);
  return out;
}

std::string error_of(const RegimeSequences& s) {
  try {
    classify(s);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

Vector vec1(double v) { return Vector::Constant(1, v); }

}  // namespace

TEST_CASE("membrane-dominated schedule") {
  const auto rep = classify(schedule(-1, -5, -4));
  CHECK(std::isinf(rep.ell));
  CHECK(rep.R_ell == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.label == RegimeLabel::infinite);
  CHECK(rep.cell_regime() == Regime::infinite);
  CHECK(rep.R() == doctest::Approx(1.0));
  CHECK(rep.symbolic);
}

TEST_CASE("balanced schedule") {
  const auto rep = classify(schedule(-1, -4, -4));
  CHECK(rep.ell == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.R_ell == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.R_zero == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.consistency < 1e-9);
  CHECK(rep.label == RegimeLabel::finite);
}

TEST_CASE("thick-hole schedule") {
  const auto rep = classify(schedule(-1, -1.5, -7.0 / 3));
  CHECK(rep.ell == 0.0);
  CHECK(rep.R_zero == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.label == RegimeLabel::zero);
  CHECK(rep.cell_regime() == Regime::zero);
}

TEST_CASE("trivial schedules") {
  CHECK(classify(schedule(-1, -6, -5)).label == RegimeLabel::trivial_decoupled);
  CHECK(classify(schedule(-1, -6, -3)).label == RegimeLabel::trivial_glued);
}

TEST_CASE("finite ell with a non-unit ratio keeps the identity between couplings") {
  auto s = schedule(-1, -4, -4);
  s.r.coef = 3.0;
  const auto rep = classify(s);
  CHECK(rep.ell == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(rep.R_zero == doctest::Approx(rep.ell * rep.R_ell).epsilon(1e-9));
  CHECK(rep.consistency < 1e-9);
}

TEST_CASE("list sequences reproduce the exponent-form limits") {
  for (auto s : {schedule(-1, -5, -4), schedule(-1, -4, -4), schedule(-1, -1.5, -7.0 / 3)}) {
    const auto sym = classify(s);
    const auto num = classify(listed(s, 6));
    CHECK_FALSE(num.symbolic);
    CHECK(num.label == sym.label);
    if (std::isfinite(sym.ell)) CHECK(num.ell == doctest::Approx(sym.ell).epsilon(1e-9));
    CHECK(num.R() == doctest::Approx(sym.R()).epsilon(1e-9));
  }
  const auto fin = classify(listed(schedule(-1, -4, -4), 6));
  CHECK(fin.consistency < 1e-9);
}

TEST_CASE("classification errors") {
  CHECK(error_of(schedule(-1, -1, -4)) == "not a thin-film-dominant regime (outside the modelled scope)");
  CHECK(error_of(schedule(-1, -5, -1)) == "hole radius must be o(eps)");
  auto bad_p = schedule(-1, -5, -4, 3, 2.0);
  CHECK(error_of(bad_p).find("1 < p < n-1") != std::string::npos);

  auto osc = listed(schedule(-1, -4, -4), 8);
  for (std::size_t j = 0; j < osc.r.values.size(); ++j) osc.r.values[j] *= j % 2 ? 1.0 : 2.0;
  CHECK(error_of(osc) == "ell undefined");

  auto mixed = schedule(-1, -4, -4);
  mixed.eps = ScaleSequence::list({0.5, 0.25, 0.125});
  CHECK(error_of(mixed) == "mix of list and exponent-form sequences");
}

TEST_CASE("limit energy without a jump has no interfacial term") {
  const Rectangle omega;
  const auto W = EnergyDensity::power(1, 3, 1.5);
  const auto u = GridField::sample(omega, 16, 16, 1, [](double x, double y) { return vec1(std::sin(x) + y * y); });
  const auto e = assemble_limit(u, u, relaxed_membrane_density(W), 1.0, PhiTable::homogeneous(1.5, 4.0));
  CHECK(e.interfacial == 0.0);
  CHECK(e.membrane_upper == e.membrane_lower);
  CHECK(e.membrane_upper > 0.0);
}

TEST_CASE("limit energy of constant states is phi of the jump") {
  const Rectangle omega;
  const auto W = EnergyDensity::power(1, 3, 1.5);
  const auto phi = PhiTable::homogeneous(1.5, 4.0);
  const auto up = GridField::sample(omega, 8, 8, 1, [](double, double) { return vec1(2.0); });
  const auto lo = GridField::sample(omega, 8, 8, 1, [](double, double) { return vec1(0.0); });
  const auto e = assemble_limit(up, lo, relaxed_membrane_density(W), 1.0, phi);
  CHECK(e.membrane_upper == 0.0);
  CHECK(e.membrane_lower == 0.0);
  CHECK(e.total() == doctest::Approx(4.0 * std::pow(2.0, 1.5)).epsilon(1e-13));
}

TEST_CASE("limit energy of affine states matches hand quadrature") {
  const Rectangle omega{0.0, 2.0, 0.0, 0.5};
  const auto W = EnergyDensity::power(1, 3, 1.5);
  const double a = 0.3, b = -1.2, c = 0.7, R = 2.5, unit = 3.1;
  const auto up = GridField::sample(omega, 10, 5, 1, [&](double x, double y) { return vec1(a * x + b * y); });
  const auto lo = GridField::sample(omega, 10, 5, 1, [&](double x, double y) { return vec1(a * x + b * y - c); });
  const auto e = assemble_limit(up, lo, relaxed_membrane_density(W), R, PhiTable::homogeneous(1.5, unit));
  const double area = 1.0;
  const double expected = area * 2 * std::pow(std::hypot(a, b), 1.5) + R * unit * std::pow(c, 1.5) * area;
  CHECK(e.total() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("tabulated phi refuses to extrapolate") {
  const auto phi = PhiTable::tabulated({0.5, 1.0}, {0.3, 1.0});
  CHECK(phi(vec1(0.0)) == 0.0);
  CHECK(phi(vec1(0.25)) == doctest::Approx(0.15));
  CHECK(phi(vec1(-0.75)) == doctest::Approx(0.65));
  try {
    phi(vec1(1.5));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::domain);
    CHECK(std::string(e.what()).find("phi table range exceeded: |z| = 1.5") != std::string::npos);
  }
  CHECK_THROWS_AS(PhiTable::tabulated({}, {}), Error);
}

TEST_CASE("homogeneous phi scales with the jump") {
  const auto phi = PhiTable::homogeneous(1.5, 2.0);
  Vector z(2);
  z << 3.0, 4.0;
  CHECK(phi(z) == doctest::Approx(2.0 * std::pow(5.0, 1.5)));
  CHECK(std::isinf(phi.max_radius()));
}

TEST_CASE("Poincare ratio of the linear profile on the square") {
  const auto profiles = standard_poincare_profiles();
  const std::vector<PoincareProfile> x1 = {profiles[1]};
  const auto rep = poincare_check(PoincareShape::square, 2.0, {1.0}, {1.0}, x1);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].ratio == doctest::Approx(1.0 / 12).epsilon(1e-10));

  const auto scaled = poincare_check(PoincareShape::square, 2.0, {1e-3}, {1e-2}, x1);
  CHECK(scaled.rows[0].ratio == doctest::Approx(1.0 / 12).epsilon(1e-8));
}

TEST_CASE("Poincare ratio of a constant is zero") {
  const auto profiles = standard_poincare_profiles();
  const auto rep = poincare_check(PoincareShape::ball, 1.5, {1.0, 0.1}, {1.0, 0.01}, {profiles[0]});
  for (const auto& row : rep.rows) {
    CHECK(row.lhs == 0.0);
    CHECK(row.ratio == 0.0);
  }
}

TEST_CASE("Poincare ratio is scale invariant on every shape") {
  const std::vector<double> rho = {1.0, 1e-1, 1e-2, 1e-3}, delta = {1.0, 1e-1, 1e-2, 1e-3};
  for (auto shape : {PoincareShape::square, PoincareShape::ball, PoincareShape::annulus_in_square}) {
    const auto rep = poincare_check(shape, 1.5, rho, delta, standard_poincare_profiles(), 32);
    CHECK_MESSAGE(rep.pass, to_string(shape));
    CHECK(rep.variation < 0.05);
    CHECK(rep.max_ratio > 0.0);
    CHECK(rep.rows.size() == 4 * 4 * 4);
  }
}
