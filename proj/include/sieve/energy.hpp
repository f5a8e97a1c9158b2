#ifndef SIEVE_ENERGY_HPP
#define SIEVE_ENERGY_HPP

#include <sieve/types.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sieve {

/// Smoothed norm power (|G|^2 + eps^2)^{q/2} - eps^q. Reduces to |G|^q for
/// eps = 0.
template <typename Derived>
typename Derived::Scalar smoothed_norm_power(const Eigen::MatrixBase<Derived>& G,
                                             typename Derived::Scalar q,
                                             typename Derived::Scalar eps) {
  using std::pow;
  const auto s = G.squaredNorm();
  if (eps == 0) return q == 2 ? s : pow(s, q / 2);
  return pow(s + eps * eps, q / 2) - pow(eps, q);
}

/// One term c |M (F - A)|^q of a stored-energy density. `left` and `shift`
/// are left empty when they are the identity and zero respectively.
struct NormPowerTerm {
  double coef = 1.0;
  double exponent = 2.0;
  Matrix left;
  Matrix shift;
};

enum class DensityKind { power, anisotropic, double_well, sum, custom };

std::string to_string(DensityKind kind);

/// A stored-energy density W : R^{m x n} -> [0, inf) with p-growth.
///
/// Internally W is a sum of components; each component is either the
/// minimum over a few norm-power terms or an opaque callable. That covers
/// the power, anisotropic and double-well kinds and any sum of them while
/// keeping closed-form reductions available.
class EnergyDensity {
 public:
  using ValueFn = std::function<double(const Gradient&)>;
  using GradientFn = std::function<Gradient(const Gradient&)>;

  /// c |F|^p
  static EnergyDensity power(int m, int n, double p, double coef = 1.0);
  /// |M F|^p with M an invertible m x m matrix.
  static EnergyDensity anisotropic(const Matrix& M, int n, double p);
  /// min(|F - A|^p, |F + A|^p)
  static EnergyDensity double_well(const Matrix& A, double p);
  /// c |F|^q as a lower-order term of a density with growth exponent p.
  static EnergyDensity power_term(int m, int n, double q, double p, double coef = 1.0);
  static EnergyDensity sum(const std::vector<EnergyDensity>& parts);
  static EnergyDensity custom(std::string name, int m, int n, double p, double beta,
                              ValueFn value, GradientFn gradient = {},
                              bool convex = false);

  int rows() const { return m_; }
  int cols() const { return n_; }
  double p() const { return p_; }
  double beta() const { return beta_; }
  double reg_eps() const { return reg_eps_; }
  DensityKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  EnergyDensity with_reg_eps(double eps) const;
  EnergyDensity with_beta(double beta) const;

  /// Exact value W(F).
  double value(const Gradient& F) const;
  /// Value with every norm-power term smoothed by reg_eps.
  double regularized_value(const Gradient& F) const;
  /// Smoothed value and its derivative with respect to F.
  double value_and_gradient(const Gradient& F, Gradient& dW) const;

  bool is_convex() const;
  bool is_p_homogeneous() const;
  /// True when W(F R) = W(F) for every rotation R of the first `lateral`
  /// columns.
  bool is_laterally_isotropic(int lateral) const;

  /// inf_z W(Fbar | z) in closed form, when the structure allows it.
  std::optional<EnergyDensity> reduced() const;
  /// lim_{r->0} r^p W(F / r) in closed form, when the structure allows it.
  std::optional<EnergyDensity> scaling_limit() const;

  /// Characteristic matrix size (largest well); 0 for centred densities.
  double scale_hint() const;
  /// Rank-one directions a (x) b suggested by the structure (differences of
  /// wells).
  std::vector<std::pair<SmallVector, SmallVector>> rank_one_hints() const;

 private:
  struct Component {
    std::vector<NormPowerTerm> terms;  // min over terms
    ValueFn value;                     // set for opaque components
    GradientFn gradient;
    bool convex = false;
  };

  double component_value(const Component& c, const Gradient& F, double eps) const;
  double component_gradient(const Component& c, const Gradient& F, double eps,
                            Gradient& dW) const;

  int m_ = 1;
  int n_ = 1;
  double p_ = 2.0;
  double beta_ = 1.0;
  double reg_eps_ = 0.0;
  DensityKind kind_ = DensityKind::power;
  std::string name_ = "power";
  std::vector<Component> components_;
};

double eval(const EnergyDensity& density, const Matrix& F);

/// Derivative of the smoothed density. Throws for reg_eps = 0 at the
/// singular point of a term with exponent below 2.
Matrix gradient(const EnergyDensity& density, const Matrix& F);

struct GrowthReport {
  bool pass = false;
  bool zero_at_origin = false;
  bool lower_bound_ok = false;
  bool upper_bound_ok = false;
  double value_at_origin = 0.0;
  /// max over samples of W(F) / (|F|^p + 1)
  double empirical_beta = 0.0;
  /// max over samples of (|F|^p - 1) - W(F); <= 0 when the lower bound holds
  double worst_lower_violation = 0.0;
  /// max |W(F1) - W(F2)| / ((1 + |F1|^{p-1} + |F2|^{p-1}) |F1 - F2|)
  double empirical_lipschitz = 0.0;
  Matrix worst_upper_sample;
  int samples = 0;
  std::vector<std::string> failures;
};

GrowthReport validate_growth(const EnergyDensity& density, int sample_budget,
                             double radius, std::uint64_t seed = 1);

struct InnerSolverSettings {
  double span_factor = 1.5;  // multiplies the growth-derived radius
  int grid_points = 21;      // per coordinate and level
  int levels = 14;
  double tolerance = 1e-12;
};

enum class ReductionMode { wbar, gbar };

struct ReducedDensity {
  EnergyDensity base;
  ReductionMode mode = ReductionMode::wbar;
  InnerSolverSettings inner;
};

/// Radius that contains every minimiser z of W(Fbar | .), derived from the
/// growth sandwich.
double reduction_radius(const EnergyDensity& base, double fbar_norm);

double reduce_wbar(const ReducedDensity& reduced, const Matrix& Fbar);

struct EnvelopeApprox {
  /// Density over R^{m x d}; evaluated through `value` so reduced or
  /// otherwise composed densities can be laminated too.
  std::function<double(const Gradient&)> base;
  int m = 1;
  int d = 1;
  int depth = 1;
  int direction_budget = 8;
  int t_points = 3;          // odd, so t = 1/2 is sampled
  int s_points = 4;          // per sign
  double amplitude_span = 0; // 0 selects 2 max(|F|, scale_hint)
  double scale_hint = 0;
  std::vector<std::pair<SmallVector, SmallVector>> hints;
  bool base_is_convex = false;

  static EnvelopeApprox of(const EnergyDensity& density, int depth);
};

double laminate_envelope(const EnvelopeApprox& env, const Matrix& F);

struct GLimitResult {
  double value = 0.0;
  std::vector<double> r;
  std::vector<double> sequence;  // r^p env(W)(F / r)
  double residual = 0.0;
  int envelope_depth = 0;
  bool growth_ok = true;
};

inline constexpr double kDefaultRSchedule[] = {1.0, 1e-1, 1e-2, 1e-3};

GLimitResult g_limit(const EnergyDensity& density, const Matrix& F,
                     std::span<const double> r_schedule = kDefaultRSchedule,
                     int envelope_depth = 1, double tolerance = 1e-3);

}  // namespace sieve

#endif  // SIEVE_ENERGY_HPP
