#ifndef SIEVE_REGIME_HPP
#define SIEVE_REGIME_HPP

#include <sieve/cell.hpp>
#include <sieve/energy.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sieve {

/// x_j = coef * base^(exponent * j), or an explicit list x_1, x_2, ...
struct ScaleSequence {
  double coef = 1.0;
  double base = 2.0;
  double exponent = -1.0;
  std::vector<double> values;  // non-empty selects the list form

  static ScaleSequence power(double base, double exponent, double coef = 1.0);
  static ScaleSequence list(std::vector<double> values);

  bool is_list() const { return !values.empty(); }
  /// Value at index j >= 1 (1-based for lists).
  double at(int j) const;
  /// ln(x_{j+1} / x_j) for the exponent form.
  double log_rate() const;
};

struct RegimeSequences {
  ScaleSequence eps, delta, r;
  int n = 3;
  double p = 1.5;
};

enum class RegimeLabel { infinite, finite, zero, trivial_decoupled, trivial_glued };

std::string to_string(RegimeLabel label);

struct RegimeReport {
  double ell = 0.0;     // 0, positive, or kInfinity
  double R_ell = 0.0;   // lim r^{n-1-p} / eps^{n-1}
  double R_zero = 0.0;  // lim r^{n-p} / (delta eps^{n-1})
  RegimeLabel label = RegimeLabel::infinite;
  double consistency = 0.0;  // |R_zero - ell R_ell| / |R_zero| for finite ell
  bool symbolic = true;

  /// The coupling constant multiplying the interfacial term.
  double R() const;
  /// Cell regime matching the label (finite, infinite or zero).
  Regime cell_regime() const;
};

RegimeReport classify(const RegimeSequences& seq);

/// Axis-aligned rectangle in the plane.
struct Rectangle {
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  double area() const { return (x1 - x0) * (y1 - y0); }
  bool contains(double x, double y) const { return x > x0 && x < x1 && y > y0 && y < y1; }
  void validate() const;
};

/// Nodal values on a uniform (nx + 1) x (ny + 1) grid over a rectangle.
struct GridField {
  Rectangle omega;
  int nx = 1, ny = 1;
  Field values;  // m x ((nx + 1) (ny + 1)), x index fastest

  static GridField sample(const Rectangle& omega, int nx, int ny, int m,
                          const std::function<Vector(double, double)>& fn);
  int m() const { return static_cast<int>(values.rows()); }
};

/// phi as a function of the jump z: |z|^p phi_unit for isotropic p-homogeneous
/// g, or a table over |z| with linear interpolation that refuses to
/// extrapolate.
class PhiTable {
 public:
  static PhiTable homogeneous(double p, double phi_unit);
  static PhiTable tabulated(std::vector<double> radii, std::vector<double> values);
  /// Solves the cell problem at |z| = 1 (p-homogeneous g) or at every radius.
  static PhiTable from_cell(const CellProblemSpec& spec, const std::vector<double>& radii = {});

  double operator()(const Vector& z) const;
  bool is_homogeneous() const { return radii_.empty(); }
  double max_radius() const { return radii_.empty() ? kInfinity : radii_.back(); }

 private:
  double p_ = 2.0;
  double unit_ = 0.0;
  std::vector<double> radii_, values_;
};

/// Q W-bar surrogate on m x 2 used by the membrane terms: the closed-form
/// reduction when it is convex, otherwise a lamination envelope of it.
std::function<double(const Gradient&)> relaxed_membrane_density(const EnergyDensity& W,
                                                                int envelope_depth = 1);

struct LimitEnergy {
  double membrane_upper = 0.0;
  double membrane_lower = 0.0;
  double interfacial = 0.0;  // R * int phi(u+ - u-)
  double total() const { return membrane_upper + membrane_lower + interfacial; }
};

/// int QW(D u+) + int QW(D u-) + R int phi(u+ - u-) with midpoint quadrature.
LimitEnergy assemble_limit(const GridField& u_plus, const GridField& u_minus,
                           const std::function<double(const Gradient&)>& relaxed, double R,
                           const PhiTable& phi);

enum class PoincareShape { ball, square, annulus_in_square };

std::string to_string(PoincareShape shape);
PoincareShape poincare_shape_from_string(const std::string& name);

/// Scalar profile u(x) = f(x_a / rho, x_n / delta) with its gradient in the
/// rescaled variables.
struct PoincareProfile {
  std::string name;
  std::function<double(double, double, double)> value;
  std::function<Eigen::Vector3d(double, double, double)> gradient;
};

std::vector<PoincareProfile> standard_poincare_profiles();

struct PoincareRow {
  std::string profile;
  double rho = 0.0, delta = 0.0;
  double lhs = 0.0, rhs = 0.0, ratio = 0.0;
};

struct PoincareReport {
  std::vector<PoincareRow> rows;
  double max_ratio = 0.0;
  double variation = 0.0;  // max over profiles of (max - min) / max ratio across (rho, delta)
  bool pass = true;
};

/// Ratio int |u - mean|^p / int (rho^p |D_a u|^p + delta^p |D_n u|^p) over
/// A_rho x (0, delta), the mean taken over A_rho (or B_rho for the pair).
PoincareReport poincare_check(PoincareShape shape, double p, const std::vector<double>& rho_list,
                              const std::vector<double>& delta_list,
                              const std::vector<PoincareProfile>& profiles, int cells = 64);

}  // namespace sieve

#endif  // SIEVE_REGIME_HPP
