#ifndef SIEVE_CELL_HPP
#define SIEVE_CELL_HPP

#include <sieve/energy.hpp>
#include <sieve/mesh.hpp>
#include <sieve/solver.hpp>

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sieve {

enum class Regime { finite, infinite, zero };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string& name);

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Truncated interfacial cell problem around one hole.
///   finite:   g(D_a zeta | ell D_t zeta) on (B_N x (-1, 1)) minus the slit
///   infinite: two membranes with the reduced density, sharing the hole trace
///   zero:     g(D zeta) on (B_N x (-N, N)) minus the slit, data on all of
///             the outer boundary
struct CellProblemSpec {
  Regime regime = Regime::infinite;
  double ell = 1.0;  // finite regime only
  Vector z;
  int d = 3;
  double p = 2.0;
  std::optional<EnergyDensity> density;  // limit density g on m x (d + 1)
  std::vector<double> N_list = {4.0, 8.0, 16.0};
  double resolution = 0.25;
  double grading = 1.15;
  double min_size_factor = 1.0 / 32.0;
  MeshMode mode = MeshMode::axisymmetric;  // finite and zero regimes
  SolveOptions solver;

  /// Default density |F|^p on 1 x (d + 1), jump z = (value).
  static CellProblemSpec scalar(Regime regime, int d, double p, double z, double ell = 1.0);

  double p_star() const;
  const EnergyDensity& limit_density() const;
  void validate() const;
  CellDomainSpec domain(double N) const;
};

struct CellSolve {
  double N = 0.0;
  double phi = 0.0;
  int nodes = 0;
  SolveDiagnostics diagnostics;
  double trace_mean_dev = 0.0;  // relative to |z|; 0 when z = 0
  double trace_max_dev = 0.0;
};

struct ExtrapolationFit {
  double limit = 0.0;
  double amplitude = 0.0;
  double rate = 0.0;
  double residual = 0.0;  // root mean square
};

struct Extrapolation {
  ExtrapolationFit fixed;
  ExtrapolationFit free;
  double limit() const { return fixed.limit; }
  double residual() const { return fixed.residual; }
};

struct CellResult {
  std::vector<CellSolve> solves;
  std::vector<double> N;
  std::vector<double> phi_by_N;
  double phi_extrapolated = 0.0;
  Extrapolation fit;
  bool extrapolated = false;  // false with fewer than three radii
  double trace_mean_dev = 0.0;
  double trace_max_dev = 0.0;
  bool envelope_surrogate = false;
  bool converged = true;
};

/// Cap_p(B_{r_in}; B_{r_out}) in R^d; r_out may be kInfinity.
double radial_capacity(int d, double p, double r_in, double r_out);

/// Density used by the cell solves: g itself, or its reduction (and lamination
/// surrogate when the reduction is not convex) in the infinite regime.
struct CellDensity {
  EnergyDensity density;
  bool envelope_surrogate = false;
};
CellDensity cell_density(const CellProblemSpec& spec);

CellSolve solve_cell(const CellProblemSpec& spec, double N);

/// Truncated minimiser with its mesh, for sampling the cell profile.
struct CellField {
  SlitMesh mesh;
  Field field;
  CellSolve solve;
};
CellField solve_cell_field(const CellProblemSpec& spec, double N);
CellResult solve_phi(const CellProblemSpec& spec);

/// Capacitary tail rate (n - p) / (p - 1) of the truncation error, with n the
/// dimension of the far field (d, or d + 1 in the zero regime).
double tail_rate(const CellProblemSpec& spec);

/// Fits phi_N = phi_inf + a N^{-q} with q fixed and with q free. With
/// capacitary_p > 1 the fit is done on phi^{-1/(p-1)}, which is affine in
/// N^{-q} for radial condensers; 0 keeps the plain power law.
Extrapolation extrapolate(const std::vector<double>& N, const std::vector<double>& phi,
                          double rate, double capacitary_p = 0.0);

/// Upper bound of the truncated cell value at radius N for |F|^p-type data:
/// beta 2^{1-p} |z|^p Cap_p(B_1; B_N) (finite, infinite) and
/// beta 2^{-p} |z|^p Cap_p(B_1; B_N in R^{d+1}) (zero).
double capacity_bound(const CellProblemSpec& spec, double z_norm, double N);

struct UpperBoundEntry {
  Vector z;
  double phi = 0.0;
  double phi_fine = 0.0;
  double bound = 0.0;
  double ratio = 0.0;  // phi / (bound / beta)
  double margin = 0.0;
  bool pass = false;
};

struct UpperBoundReport {
  std::vector<UpperBoundEntry> entries;
  double empirical_c = 0.0;  // max phi / (2^{1-p} |z|^p Cap), or 2^{-p} in the zero regime
  bool pass = true;
};

/// Solves at N = spec.N_list.back() on two mesh levels (h, h / 2); the
/// margin is twice their difference.
UpperBoundReport scan_upper_bound(const CellProblemSpec& spec, const std::vector<Vector>& z_samples);

struct LipschitzPair {
  Vector z, w;
  double ratio = 0.0;
  double ratio_fine = 0.0;
};

struct LipschitzReport {
  std::vector<LipschitzPair> pairs;
  double worst = 0.0;
  double worst_fine = 0.0;
  double stability = 0.0;  // max(worst, worst_fine) / min(worst, worst_fine)
  bool finite = true;
  bool stable = true;
  int skipped = 0;
};

LipschitzReport scan_lipschitz(const CellProblemSpec& spec,
                               const std::vector<std::pair<Vector, Vector>>& pairs);

struct EllRow {
  double ell = 0.0;  // kInfinity for the membrane row
  double phi = 0.0;
  double gap = 0.0;  // |phi - phi_inf| / phi_inf
  double phi_over_ell = 0.0;
};

struct EllContinuityReport {
  std::vector<EllRow> rows;
  double phi_infinite = 0.0;
  double phi_zero = 0.0;  // truncated zero-regime value on the same lateral axis
  bool decreasing = true;
  bool pass = true;
};

/// Compares phi^(ell) for each ell (on the axisymmetric cell at radius N)
/// with the membrane value on the same radial axis.
EllContinuityReport scan_ell_continuity(const CellProblemSpec& spec, const std::vector<double>& ells,
                                        double N);

}  // namespace sieve

#endif  // SIEVE_CELL_HPP
