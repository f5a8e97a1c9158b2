#ifndef SIEVE_FILM_HPP
#define SIEVE_FILM_HPP

#include <sieve/cell.hpp>
#include <sieve/energy.hpp>
#include <sieve/regime.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sieve {

/// Two films of thickness delta over omega, joined through holes of radius r
/// centred on the lattice eps Z^2 inside omega (n = 3).
struct FilmSpec {
  Rectangle omega;
  double eps = 0.25;
  double delta = 0.01;
  double r = 0.01;
  int hole_divisions = 8;     // lateral step r / hole_divisions near each hole
  double hole_core = 2.0;     // uniform steps out to hole_core * r
  double growth = 1.3;        // geometric growth of lateral steps beyond the core
  double h_max = 0.0;         // 0 selects eps / 16
  int layers = 2;             // voxels through each film
  double voxel_budget = 8e6;

  double max_step() const { return h_max > 0 ? h_max : eps / 16.0; }
  void validate() const;
};

/// Tensor voxel grid of both films. Node (i, j, k) of a layer has index
/// i + nx1 (j + ny1 k); k = 0 is the bottom of the layer, so the mid-plane is
/// k = layers for the lower film and k = 0 for the upper one.
struct FilmGrid {
  std::vector<double> x, y;
  std::vector<double> z_upper, z_lower;  // ascending
  std::vector<double> cx, cy;            // hole centres are cx x cy
  std::vector<std::uint8_t> hole;        // lateral nodes strictly inside a hole
  double r = 0.0;

  int nx1() const { return static_cast<int>(x.size()); }
  int ny1() const { return static_cast<int>(y.size()); }
  int nz1() const { return static_cast<int>(z_upper.size()); }
  std::size_t lateral_nodes() const { return x.size() * y.size(); }
  std::size_t layer_nodes() const { return lateral_nodes() * z_upper.size(); }
  std::size_t voxels() const {
    return 2 * (x.size() - 1) * (y.size() - 1) * (z_upper.size() - 1);
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + x.size() * (static_cast<std::size_t>(j) + y.size() * k);
  }
};

/// Lateral axis on [a, b] graded around each centre.
std::vector<double> film_axis(double a, double b, const std::vector<double>& centers,
                              const FilmSpec& spec);

/// Throws a validation error when the voxel count exceeds the budget.
FilmGrid build_film_grid(const FilmSpec& spec);

struct FilmField {
  Field upper, lower;  // m x layer_nodes
};

/// Samples fn(x, y, z) on both films. Mid-plane nodes inside holes take the
/// mean of the two sides, so the trace is shared there.
FilmField make_film_field(const FilmGrid& grid, int m,
                          const std::function<Vector(double, double, double)>& upper,
                          const std::function<Vector(double, double, double)>& lower);

/// (1 / delta) sum of W(Du) over the Kuhn tetrahedra of both films.
double direct_film_energy(const FilmSpec& spec, const FilmGrid& grid, const EnergyDensity& W,
                          const FilmField& field);

struct TrendOptions {
  Rectangle omega;
  int j0 = 1, j1 = 4;
  FilmSpec film;                 // lateral grading and budget; eps, delta, r and omega are set per j
  std::vector<double> growth_candidates = {1.2, 1.3, 1.4, 1.5, 1.75, 2.0};
  double cell_resolution = 0.25;
  double cell_grading = 1.15;
  double cell_min_size_factor = 1.0 / 32.0;
  std::vector<double> phi_N_list = {4.0, 8.0, 16.0};
  double cell_N_cap = 512.0;  // cell radius used for blending is min(eps / (2 r), cap)
  SolveOptions solver;
};

struct TrendRow {
  int j = 0;
  double eps = 0.0, delta = 0.0, r = 0.0;
  double N = 0.0;       // eps / (2 r)
  double N_cell = 0.0;  // truncation radius of the blended cell minimiser
  double ell = 0.0, R = 0.0;
  std::size_t voxels = 0;
  double growth = 0.0;
  int holes = 0;
  double film_energy = 0.0;
  double limit = 0.0;
  double gap = 0.0;  // |film - limit| / limit, or the film energy when the limit is 0
  double cell_phi = 0.0;
  bool cell_converged = true;
};

struct TrendReport {
  RegimeReport regime;
  double phi = 0.0;  // phi(u+ - u-) of the limit
  std::vector<TrendRow> rows;
  std::vector<std::string> warnings;
  bool monotone = true;  // gap non-increasing over the last three rows
  bool pass = true;
};

/// Builds recovery-style fields (u+ above, u- below, the rescaled cell
/// minimiser around every hole) for j = j0..j1 and compares their film energy
/// with the limit energy. A geometry that cannot be resolved within budget
/// truncates the schedule with a warning.
TrendReport gamma_trend(const RegimeSequences& schedule, const Vector& u_plus,
                        const Vector& u_minus, const EnergyDensity& W, const TrendOptions& opts);

}  // namespace sieve

#endif  // SIEVE_FILM_HPP
