#include <sieve/energy.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace sieve {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_shape(int m, int n) {
  if (m < 1 || n < 1 || m > kMaxRows || n > kMaxCols)
    throw Error(ErrorKind::validation,
                "density shape " + shape_string(m, n) + " outside supported range 1x1.." +
                    shape_string(kMaxRows, kMaxCols));
}

void check_exponent(double p) {
  if (!(p > 1.0) || !std::isfinite(p))
    throw Error(ErrorKind::validation, "growth exponent must satisfy 1 < p");
}

Gradient term_argument(const NormPowerTerm& t, const Gradient& F) {
  Gradient G = F;
  if (t.shift.size() != 0) G -= t.shift;
  if (t.left.size() != 0) {
    Gradient MG = t.left * G;
    return MG;
  }
  return G;
}

double term_value(const NormPowerTerm& t, const Gradient& F, double eps) {
  return t.coef * smoothed_norm_power(term_argument(t, F), t.exponent, eps);
}

bool same_matrix(const Matrix& a, const Matrix& b) {
  if (a.size() == 0 || b.size() == 0) {
    const double na = a.size() ? a.norm() : 0.0;
    const double nb = b.size() ? b.norm() : 0.0;
    return na == 0.0 && nb == 0.0;
  }
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

Matrix last_column_or_zero(const Matrix& shift, int m) {
  if (shift.size() == 0) return Matrix::Zero(m, 1);
  return shift.rightCols(1);
}

}  // namespace

std::string to_string(DensityKind kind) {
  switch (kind) {
    case DensityKind::power: return "power";
    case DensityKind::anisotropic: return "anisotropic";
    case DensityKind::double_well: return "double_well";
    case DensityKind::sum: return "sum";
    case DensityKind::custom: return "custom";
  }
  return "unknown";
}

EnergyDensity EnergyDensity::power(int m, int n, double p, double coef) {
  check_shape(m, n);
  check_exponent(p);
  if (!(coef > 0)) throw Error(ErrorKind::validation, "power coefficient must be positive");
  EnergyDensity w;
  w.m_ = m;
  w.n_ = n;
  w.p_ = p;
  w.beta_ = std::max(1.0, coef);
  w.kind_ = DensityKind::power;
  w.name_ = "power";
  w.components_.push_back(Component{{NormPowerTerm{coef, p, {}, {}}}, {}, {}, true});
  return w;
}

EnergyDensity EnergyDensity::power_term(int m, int n, double q, double p, double coef) {
  check_shape(m, n);
  check_exponent(p);
  if (!(q > 0) || q > p)
    throw Error(ErrorKind::validation, "lower-order term exponent must lie in (0, p]");
  EnergyDensity w;
  w.m_ = m;
  w.n_ = n;
  w.p_ = p;
  w.beta_ = coef;
  w.kind_ = DensityKind::power;
  w.name_ = "power_term";
  w.components_.push_back(Component{{NormPowerTerm{coef, q, {}, {}}}, {}, {}, q >= 1.0});
  return w;
}

EnergyDensity EnergyDensity::anisotropic(const Matrix& M, int n, double p) {
  check_shape(static_cast<int>(M.rows()), n);
  check_exponent(p);
  if (M.rows() != M.cols())
    throw Error(ErrorKind::validation, "anisotropy matrix must be square, got " +
                                           shape_string(M.rows(), M.cols()));
  Eigen::JacobiSVD<Matrix> svd(M);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (!(smin > 0)) throw Error(ErrorKind::validation, "anisotropy matrix must be invertible");
  EnergyDensity w;
  w.m_ = static_cast<int>(M.rows());
  w.n_ = n;
  w.p_ = p;
  w.beta_ = std::max(1.0, std::pow(smax, p));
  w.kind_ = DensityKind::anisotropic;
  w.name_ = "anisotropic";
  w.components_.push_back(Component{{NormPowerTerm{1.0, p, M, {}}}, {}, {}, true});
  return w;
}

EnergyDensity EnergyDensity::double_well(const Matrix& A, double p) {
  check_shape(static_cast<int>(A.rows()), static_cast<int>(A.cols()));
  check_exponent(p);
  EnergyDensity w;
  w.m_ = static_cast<int>(A.rows());
  w.n_ = static_cast<int>(A.cols());
  w.p_ = p;
  w.beta_ = std::pow(2.0, p - 1) * std::max(1.0, std::pow(A.norm(), p));
  w.kind_ = DensityKind::double_well;
  w.name_ = "double_well";
  Component c;
  c.terms.push_back(NormPowerTerm{1.0, p, {}, A});
  c.terms.push_back(NormPowerTerm{1.0, p, {}, -A});
  c.convex = A.norm() == 0.0;
  w.components_.push_back(std::move(c));
  return w;
}

EnergyDensity EnergyDensity::sum(const std::vector<EnergyDensity>& parts) {
  if (parts.empty()) throw Error(ErrorKind::validation, "sum of zero densities");
  EnergyDensity w = parts.front();
  w.kind_ = DensityKind::sum;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto& q = parts[i];
    if (q.m_ != w.m_ || q.n_ != w.n_)
      throw Error(ErrorKind::validation, "sum of densities with shapes " +
                                             shape_string(w.m_, w.n_) + " and " +
                                             shape_string(q.m_, q.n_));
    w.p_ = std::max(w.p_, q.p_);
    w.beta_ += q.beta_;
    w.reg_eps_ = std::max(w.reg_eps_, q.reg_eps_);
    w.name_ += "+" + q.name_;
    w.components_.insert(w.components_.end(), q.components_.begin(), q.components_.end());
  }
  return w;
}

EnergyDensity EnergyDensity::custom(std::string name, int m, int n, double p, double beta,
                                    ValueFn value, GradientFn gradient, bool convex) {
  check_shape(m, n);
  check_exponent(p);
  if (!value) throw Error(ErrorKind::validation, "custom density needs a value function");
  EnergyDensity w;
  w.m_ = m;
  w.n_ = n;
  w.p_ = p;
  w.beta_ = beta;
  w.kind_ = DensityKind::custom;
  w.name_ = std::move(name);
  w.components_.push_back(Component{{}, std::move(value), std::move(gradient), convex});
  return w;
}

EnergyDensity EnergyDensity::with_reg_eps(double eps) const {
  if (!(eps >= 0)) throw Error(ErrorKind::validation, "reg_eps must be non-negative");
  EnergyDensity w = *this;
  w.reg_eps_ = eps;
  return w;
}

EnergyDensity EnergyDensity::with_beta(double beta) const {
  EnergyDensity w = *this;
  w.beta_ = beta;
  return w;
}

double EnergyDensity::component_value(const Component& c, const Gradient& F,
                                      double eps) const {
  if (c.value) return c.value(F);
  double best = kInf;
  for (const auto& t : c.terms) best = std::min(best, term_value(t, F, eps));
  return best;
}

double EnergyDensity::component_gradient(const Component& c, const Gradient& F, double eps,
                                         Gradient& dW) const {
  if (c.value) {
    const double v = c.value(F);
    if (c.gradient) {
      dW = c.gradient(F);
      return v;
    }
    const double h = 1e-6 * std::max(1.0, F.norm());
    dW.setZero(F.rows(), F.cols());
    Gradient Fp = F;
    for (Eigen::Index j = 0; j < F.cols(); ++j)
      for (Eigen::Index i = 0; i < F.rows(); ++i) {
        const double keep = Fp(i, j);
        Fp(i, j) = keep + h;
        const double up = c.value(Fp);
        Fp(i, j) = keep - h;
        const double down = c.value(Fp);
        Fp(i, j) = keep;
        dW(i, j) = (up - down) / (2 * h);
      }
    return v;
  }
  std::size_t arg = 0;
  double best = kInf;
  for (std::size_t k = 0; k < c.terms.size(); ++k) {
    const double v = term_value(c.terms[k], F, eps);
    if (v < best) {
      best = v;
      arg = k;
    }
  }
  const auto& t = c.terms[arg];
  const Gradient G = term_argument(t, F);
  const double s = G.squaredNorm();
  const double q = t.exponent;
  double factor;
  if (eps == 0.0) {
    if (q < 2.0 && s == 0.0)
      throw Error(ErrorKind::numerical,
                  "non-differentiable point: reg_eps = 0 with exponent below 2 at a zero "
                  "argument");
    factor = q == 2.0 ? 2.0 * t.coef : t.coef * q * std::pow(s, q / 2 - 1);
  } else {
    factor = t.coef * q * std::pow(s + eps * eps, q / 2 - 1);
  }
  if (t.left.size() != 0)
    dW = factor * (t.left.transpose() * G);
  else
    dW = factor * G;
  return best;
}

double EnergyDensity::value(const Gradient& F) const {
  double v = 0.0;
  for (const auto& c : components_) v += component_value(c, F, 0.0);
  return v;
}

double EnergyDensity::regularized_value(const Gradient& F) const {
  double v = 0.0;
  for (const auto& c : components_) v += component_value(c, F, reg_eps_);
  return v;
}

double EnergyDensity::value_and_gradient(const Gradient& F, Gradient& dW) const {
  dW.setZero(F.rows(), F.cols());
  Gradient part;
  double v = 0.0;
  for (const auto& c : components_) {
    v += component_gradient(c, F, reg_eps_, part);
    dW += part;
  }
  return v;
}

bool EnergyDensity::is_convex() const {
  return std::all_of(components_.begin(), components_.end(), [](const Component& c) {
    if (c.value) return c.convex;
    if (c.terms.size() == 1) return c.terms.front().exponent >= 1.0;
    return c.convex;
  });
}

bool EnergyDensity::is_p_homogeneous() const {
  return std::all_of(components_.begin(), components_.end(), [&](const Component& c) {
    if (c.value) return false;
    return std::all_of(c.terms.begin(), c.terms.end(), [&](const NormPowerTerm& t) {
      return t.exponent == p_ && (t.shift.size() == 0 || t.shift.norm() == 0.0);
    });
  });
}

bool EnergyDensity::is_laterally_isotropic(int lateral) const {
  return std::all_of(components_.begin(), components_.end(), [&](const Component& c) {
    if (c.value) return false;
    return std::all_of(c.terms.begin(), c.terms.end(), [&](const NormPowerTerm& t) {
      return t.shift.size() == 0 || t.shift.leftCols(lateral).norm() == 0.0;
    });
  });
}

std::optional<EnergyDensity> EnergyDensity::reduced() const {
  if (n_ < 2) return std::nullopt;
  // inf over the last column decouples term by term when all terms share the
  // same last-column shift; a lone min-component decouples regardless.
  const bool lone_min = components_.size() == 1 && !components_.front().value;
  std::optional<Matrix> common;
  for (const auto& c : components_) {
    if (c.value) return std::nullopt;
    if (lone_min) break;
    for (const auto& t : c.terms) {
      const Matrix a = last_column_or_zero(t.shift, m_);
      if (!common) common = a;
      else if (!((*common - a).norm() == 0.0)) return std::nullopt;
    }
  }
  EnergyDensity w = *this;
  w.n_ = n_ - 1;
  w.name_ = name_ + "_reduced";
  for (auto& c : w.components_)
    for (auto& t : c.terms)
      if (t.shift.size() != 0) {
        Matrix s = t.shift.leftCols(n_ - 1);
        t.shift = s.norm() == 0.0 ? Matrix() : s;
      }
  return w;
}

std::optional<EnergyDensity> EnergyDensity::scaling_limit() const {
  EnergyDensity w = *this;
  w.components_.clear();
  w.name_ = name_ + "_limit";
  for (const auto& c : components_) {
    if (c.value) return std::nullopt;
    Component lim;
    bool vanishes = false;
    for (const auto& t : c.terms) {
      if (t.exponent > p_) return std::nullopt;
      if (t.exponent < p_) {
        vanishes = true;  // r^{p-q} |M(F - rA)|^q -> 0
        continue;
      }
      lim.terms.push_back(NormPowerTerm{t.coef, t.exponent, t.left, {}});
    }
    if (vanishes || lim.terms.empty()) continue;
    // identical alternatives collapse
    std::vector<NormPowerTerm> unique;
    for (auto& t : lim.terms) {
      const bool dup = std::any_of(unique.begin(), unique.end(), [&](const NormPowerTerm& u) {
        return u.coef == t.coef && same_matrix(u.left, t.left);
      });
      if (!dup) unique.push_back(t);
    }
    lim.terms = std::move(unique);
    lim.convex = lim.terms.size() == 1;
    w.components_.push_back(std::move(lim));
  }
  if (w.components_.empty()) return std::nullopt;
  bool all_power = std::all_of(w.components_.begin(), w.components_.end(), [](const Component& c) {
    return c.terms.size() == 1 && c.terms.front().left.size() == 0;
  });
  if (all_power && w.components_.size() == 1) w.kind_ = DensityKind::power;
  return w;
}

double EnergyDensity::scale_hint() const {
  double s = 0.0;
  for (const auto& c : components_)
    for (const auto& t : c.terms)
      if (t.shift.size() != 0) s = std::max(s, t.shift.norm());
  return s;
}

std::vector<std::pair<SmallVector, SmallVector>> EnergyDensity::rank_one_hints() const {
  std::vector<std::pair<SmallVector, SmallVector>> hints;
  for (const auto& c : components_) {
    for (std::size_t a = 0; a < c.terms.size(); ++a)
      for (std::size_t b = a + 1; b < c.terms.size(); ++b) {
        Matrix D = Matrix::Zero(m_, n_);
        if (c.terms[a].shift.size()) D += c.terms[a].shift;
        if (c.terms[b].shift.size()) D -= c.terms[b].shift;
        if (D.norm() == 0.0) continue;
        Eigen::JacobiSVD<Matrix> svd(D, Eigen::ComputeThinU | Eigen::ComputeThinV);
        hints.emplace_back(svd.matrixU().col(0), svd.matrixV().col(0));
      }
  }
  return hints;
}

double eval(const EnergyDensity& density, const Matrix& F) {
  if (F.rows() != density.rows() || F.cols() != density.cols())
    throw Error(ErrorKind::validation, "dimension mismatch: expected " +
                                           shape_string(density.rows(), density.cols()) +
                                           ", given " + shape_string(F.rows(), F.cols()));
  return density.value(F);
}

Matrix gradient(const EnergyDensity& density, const Matrix& F) {
  if (F.rows() != density.rows() || F.cols() != density.cols())
    throw Error(ErrorKind::validation, "dimension mismatch: expected " +
                                           shape_string(density.rows(), density.cols()) +
                                           ", given " + shape_string(F.rows(), F.cols()));
  Gradient dW;
  density.value_and_gradient(F, dW);
  return dW;
}

GrowthReport validate_growth(const EnergyDensity& density, int sample_budget, double radius,
                             std::uint64_t seed) {
  if (sample_budget < 100)
    throw Error(ErrorKind::validation, "validate_growth needs sample_budget >= 100");
  if (!(radius > 0)) throw Error(ErrorKind::validation, "sampling radius must be positive");

  const int m = density.rows();
  const int n = density.cols();
  const double p = density.p();
  std::vector<Gradient> samples;
  samples.push_back(Gradient::Zero(m, n));
  for (double scale : {0.25, 0.5, 1.0})
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) {
        Gradient E = Gradient::Zero(m, n);
        E(i, j) = scale * radius;
        samples.push_back(E);
        samples.push_back(-E);
      }
  for (int i = 0; i < m; ++i) {
    Gradient R = Gradient::Zero(m, n);
    R.row(i).setConstant(radius / std::sqrt(double(n)));
    samples.push_back(R);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  const int dim = m * n;
  for (int k = 0; k < sample_budget; ++k) {
    Gradient G(m, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) G(i, j) = normal(rng);
    const double rad = radius * std::pow(uniform(rng), 1.0 / dim);
    G *= rad / G.norm();
    samples.push_back(G);
  }

  GrowthReport rep;
  rep.samples = static_cast<int>(samples.size());
  rep.value_at_origin = density.value(Gradient::Zero(m, n));
  rep.zero_at_origin = std::abs(rep.value_at_origin) <= 1e-14;
  rep.worst_lower_violation = -kInf;
  std::vector<double> values(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double v = density.value(samples[k]);
    values[k] = v;
    const double np = std::pow(samples[k].norm(), p);
    rep.worst_lower_violation = std::max(rep.worst_lower_violation, (np - 1.0) - v);
    const double b = v / (np + 1.0);
    if (k == 0 || b > rep.empirical_beta) {
      rep.empirical_beta = b;
      rep.worst_upper_sample = samples[k];
    }
  }
  // p-Lipschitz quotient on neighbouring samples and on small perturbations
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    const auto& A = samples[k];
    for (int pass = 0; pass < 2; ++pass) {
      Gradient B;
      double vb;
      if (pass == 0) {
        B = samples[k + 1];
        vb = values[k + 1];
      } else {
        B = A;
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < m; ++i) B(i, j) += 1e-3 * radius * normal(rng);
        vb = density.value(B);
      }
      const double dist = (A - B).norm();
      if (dist == 0.0) continue;
      const double w = (1.0 + std::pow(A.norm(), p - 1) + std::pow(B.norm(), p - 1)) * dist;
      rep.empirical_lipschitz = std::max(rep.empirical_lipschitz, std::abs(values[k] - vb) / w);
    }
  }
  const double tol = 1e-12;
  rep.lower_bound_ok = rep.worst_lower_violation <= tol;
  rep.upper_bound_ok = rep.empirical_beta <= density.beta() * (1 + tol);
  if (!rep.zero_at_origin)
    rep.failures.push_back("W(0) = " + std::to_string(rep.value_at_origin) + ", expected 0");
  if (!rep.lower_bound_ok)
    rep.failures.push_back("lower growth bound |F|^p - 1 <= W(F) violated by " +
                           std::to_string(rep.worst_lower_violation));
  if (!rep.upper_bound_ok)
    rep.failures.push_back("upper growth bound violated: empirical beta " +
                           std::to_string(rep.empirical_beta) + " > declared " +
                           std::to_string(density.beta()) + " at |F| = " +
                           std::to_string(rep.worst_upper_sample.norm()));
  rep.pass = rep.failures.empty();
  return rep;
}

double reduction_radius(const EnergyDensity& base, double fbar_norm) {
  const double p = base.p();
  return std::pow(base.beta() * (std::pow(fbar_norm, p) + 1.0) + 1.0, 1.0 / p);
}

double reduce_wbar(const ReducedDensity& reduced, const Matrix& Fbar) {
  const auto& W = reduced.base;
  const int m = W.rows();
  const int n = W.cols();
  if (Fbar.rows() != m || Fbar.cols() != n - 1)
    throw Error(ErrorKind::validation, "dimension mismatch: expected " +
                                           shape_string(m, n - 1) + ", given " +
                                           shape_string(Fbar.rows(), Fbar.cols()));
  const auto& s = reduced.inner;
  const int G = std::max(3, s.grid_points | 1);
  const double R = s.span_factor * reduction_radius(W, Fbar.norm());

  Gradient F(m, n);
  F.leftCols(n - 1) = Fbar;
  auto objective = [&](const SmallVector& z) {
    F.col(n - 1) = z;
    return W.value(F);
  };

  struct Candidate {
    double value;
    SmallVector z;
  };
  // enumerate a grid of G^m points centred at `centre` with half width w
  auto scan = [&](const SmallVector& centre, double w) {
    std::vector<Candidate> out;
    long total = 1;
    for (int i = 0; i < m; ++i) total *= G;
    out.reserve(total);
    SmallVector z(m);
    for (long idx = 0; idx < total; ++idx) {
      long rest = idx;
      for (int i = 0; i < m; ++i) {
        const long k = rest % G;
        rest /= G;
        z(i) = centre(i) - w + 2.0 * w * double(k) / double(G - 1);
      }
      out.push_back({objective(z), z});
    }
    return out;
  };

  const SmallVector origin = SmallVector::Zero(m);
  auto coarse = scan(origin, R);
  std::vector<std::size_t> order(coarse.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return coarse[a].value < coarse[b].value; });
  const auto& best0 = coarse[order.front()];
  if ((best0.z.cwiseAbs().array() >= R * (1 - 1e-12)).any())
    throw Error(ErrorKind::numerical,
                "reduce_wbar: minimum on the boundary of the search box; increase span_factor");

  // a small beam keeps separate basins alive (double wells)
  const double spacing0 = 2.0 * R / double(G - 1);
  std::vector<SmallVector> beam;
  for (std::size_t k : order) {
    const auto& c = coarse[k];
    const bool distinct = std::all_of(beam.begin(), beam.end(), [&](const SmallVector& b) {
      return (b - c.z).norm() > 2.5 * spacing0;
    });
    if (distinct) beam.push_back(c.z);
    if (beam.size() == 3) break;
  }

  double best = best0.value;
  for (const auto& start : beam) {
    SmallVector centre = start;
    double w = spacing0;
    double local = objective(centre);
    for (int level = 0; level < s.levels; ++level) {
      auto pts = scan(centre, w);
      auto it = std::min_element(pts.begin(), pts.end(), [](const Candidate& a, const Candidate& b) {
        return a.value < b.value;
      });
      const double prev = local;
      if (it->value <= local) {
        local = it->value;
        centre = it->z;
      }
      w *= 4.0 / double(G - 1);  // two grid spacings of the current level
      if (std::abs(prev - local) <= s.tolerance * std::max(1.0, std::abs(local)) && level > 3 &&
          w < 1e-9 * R)
        break;
    }
    best = std::min(best, local);
  }
  return best;
}

EnvelopeApprox EnvelopeApprox::of(const EnergyDensity& density, int depth) {
  EnvelopeApprox env;
  env.base = [density](const Gradient& F) { return density.value(F); };
  env.m = density.rows();
  env.d = density.cols();
  env.depth = depth;
  env.scale_hint = density.scale_hint();
  env.hints = density.rank_one_hints();
  env.base_is_convex = density.is_convex();
  return env;
}

namespace {

std::vector<std::pair<SmallVector, SmallVector>> lamination_directions(const EnvelopeApprox& env) {
  std::vector<std::pair<SmallVector, SmallVector>> dirs = env.hints;
  std::vector<SmallVector> as, bs;
  for (int i = 0; i < env.m; ++i) as.push_back(SmallVector::Unit(env.m, i));
  for (int i = 0; i < env.d; ++i) bs.push_back(SmallVector::Unit(env.d, i));
  for (int i = 0; i < env.d; ++i)
    for (int j = i + 1; j < env.d; ++j) {
      bs.push_back((SmallVector::Unit(env.d, i) + SmallVector::Unit(env.d, j)) / std::sqrt(2.0));
      bs.push_back((SmallVector::Unit(env.d, i) - SmallVector::Unit(env.d, j)) / std::sqrt(2.0));
    }
  for (int i = 0; i < env.m; ++i)
    for (int j = i + 1; j < env.m; ++j)
      as.push_back((SmallVector::Unit(env.m, i) + SmallVector::Unit(env.m, j)) / std::sqrt(2.0));
  int budget = env.direction_budget;
  for (const auto& b : bs)
    for (const auto& a : as) {
      if (budget-- <= 0) return dirs;
      dirs.emplace_back(a, b);
    }
  return dirs;
}

double laminate_level(const EnvelopeApprox& env,
                      const std::vector<std::pair<SmallVector, SmallVector>>& dirs,
                      const std::vector<double>& ts, const std::vector<double>& ss, int level,
                      const Gradient& F) {
  if (level == 0) return env.base(F);
  double best = laminate_level(env, dirs, ts, ss, level - 1, F);
  Gradient plus, minus;
  for (const auto& [a, b] : dirs) {
    const Gradient ab = a * b.transpose();
    for (double t : ts)
      for (double s : ss) {
        plus = F + (1 - t) * s * ab;
        minus = F - t * s * ab;
        const double v = t * laminate_level(env, dirs, ts, ss, level - 1, plus) +
                         (1 - t) * laminate_level(env, dirs, ts, ss, level - 1, minus);
        best = std::min(best, v);
      }
  }
  return best;
}

}  // namespace

double laminate_envelope(const EnvelopeApprox& env, const Matrix& F) {
  if (env.depth < 0) throw Error(ErrorKind::validation, "lamination depth must be >= 0");
  if (F.rows() != env.m || F.cols() != env.d)
    throw Error(ErrorKind::validation, "dimension mismatch: expected " +
                                           shape_string(env.m, env.d) + ", given " +
                                           shape_string(F.rows(), F.cols()));
  const Gradient G = F;
  if (env.depth == 0 || env.base_is_convex) return env.base(G);

  const auto dirs = lamination_directions(env);
  std::vector<double> ts;
  const int T = std::max(1, env.t_points | 1);
  for (int i = 1; i <= T; ++i) ts.push_back(double(i) / double(T + 1));
  const double span =
      env.amplitude_span > 0 ? env.amplitude_span
                             : 2.0 * std::max({G.norm(), env.scale_hint, 1e-3});
  std::vector<double> ss;
  const int S = std::max(1, env.s_points);
  for (int i = 1; i <= S; ++i) {
    ss.push_back(span * double(i) / double(S));
    ss.push_back(-span * double(i) / double(S));
  }
  return laminate_level(env, dirs, ts, ss, env.depth, G);
}

namespace {

// v(r) = g + c r^alpha through three points; returns (g, alpha) or nullopt
std::optional<std::pair<double, double>> power_law_limit(double r1, double r2, double r3,
                                                         double v1, double v2, double v3) {
  const double d1 = v1 - v2;
  const double d2 = v2 - v3;
  if (d2 == 0.0 || d1 == 0.0 || (d1 > 0) != (d2 > 0)) return std::nullopt;
  const double target = d1 / d2;
  auto ratio = [&](double a) {
    return (std::pow(r1, a) - std::pow(r2, a)) / (std::pow(r2, a) - std::pow(r3, a));
  };
  double lo = 1e-6, hi = 40.0;
  if (!(ratio(lo) < target && ratio(hi) > target)) return std::nullopt;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ratio(mid) < target ? lo : hi) = mid;
  }
  const double alpha = 0.5 * (lo + hi);
  const double c = d2 / (std::pow(r2, alpha) - std::pow(r3, alpha));
  return std::make_pair(v3 - c * std::pow(r3, alpha), alpha);
}

}  // namespace

GLimitResult g_limit(const EnergyDensity& density, const Matrix& F,
                     std::span<const double> r_schedule, int envelope_depth, double tolerance) {
  if (F.rows() != density.rows() || F.cols() != density.cols())
    throw Error(ErrorKind::validation, "dimension mismatch: expected " +
                                           shape_string(density.rows(), density.cols()) +
                                           ", given " + shape_string(F.rows(), F.cols()));
  if (r_schedule.size() < 3)
    throw Error(ErrorKind::validation, "r_schedule needs at least 3 entries");
  for (std::size_t i = 0; i < r_schedule.size(); ++i) {
    if (!(r_schedule[i] > 0)) throw Error(ErrorKind::validation, "r_schedule must be positive");
    if (i > 0 && !(r_schedule[i] < r_schedule[i - 1]))
      throw Error(ErrorKind::validation, "r_schedule must be decreasing");
  }
  if (r_schedule.front() / r_schedule.back() < 100.0 * (1 - 1e-12))
    throw Error(ErrorKind::validation, "r_schedule must span at least two decades");

  GLimitResult res;
  res.envelope_depth = envelope_depth;
  const double p = density.p();
  EnvelopeApprox env = EnvelopeApprox::of(density, envelope_depth);
  for (double r : r_schedule) {
    res.r.push_back(r);
    const Matrix Fr = F / r;
    res.sequence.push_back(std::pow(r, p) * laminate_envelope(env, Fr));
  }
  const std::size_t k = res.sequence.size() - 1;
  const double vk = res.sequence[k];
  const double scale = std::max(std::abs(vk), 1e-300);
  const double spread = std::abs(res.sequence[k - 1] - vk);
  if (F.norm() == 0.0 || spread <= 1e-14 * std::max(1.0, std::abs(vk))) {
    res.value = vk;
    res.residual = spread;
  } else {
    auto last = power_law_limit(res.r[k - 2], res.r[k - 1], res.r[k], res.sequence[k - 2],
                                res.sequence[k - 1], vk);
    if (!last)
      throw Error(ErrorKind::numerical, "limit not resolved; possible subsequence dependence");
    res.value = last->first;
    if (k >= 3) {
      auto prev = power_law_limit(res.r[k - 3], res.r[k - 2], res.r[k - 1], res.sequence[k - 3],
                                  res.sequence[k - 2], res.sequence[k - 1]);
      res.residual = prev ? std::abs(prev->first - res.value) : kInf;
    } else {
      res.residual = std::abs(vk - res.value);
    }
    if (!(res.residual <= tolerance * std::max(scale, std::abs(res.value))))
      throw Error(ErrorKind::numerical, "limit not resolved; possible subsequence dependence");
  }
  const double np = std::pow(F.norm(), p);
  const double slack = 1e-6 * std::max(np, 1e-300);
  res.growth_ok = res.value >= np - slack && res.value <= density.beta() * np + slack;
  return res;
}

}  // namespace sieve
