#include <sieve/regime.hpp>

#include <algorithm>
#include <cmath>

namespace sieve {

namespace {

constexpr double kRateTol = 1e-12;

// Limit of a product of powers of exponent-form sequences: prod x_k^{a_k}.
double monomial_limit(const std::vector<std::pair<const ScaleSequence*, double>>& factors) {
  double rate = 0.0, scale = 0.0, log_coef = 0.0;
  for (const auto& [seq, a] : factors) {
    rate += a * seq->log_rate();
    scale += std::abs(a * seq->log_rate());
    log_coef += a * std::log(seq->coef);
  }
  if (std::abs(rate) <= kRateTol * (1.0 + scale)) return std::exp(log_coef);
  return rate < 0 ? 0.0 : kInfinity;
}

// Limit from the last three terms of a positive sequence, on a log scale:
// geometric increments diverge, contracting increments are extrapolated.
std::optional<double> numeric_limit(const std::vector<double>& x) {
  const std::size_t k = x.size();
  const double L1 = std::log(x[k - 3]), L2 = std::log(x[k - 2]), L3 = std::log(x[k - 1]);
  const double d1 = L2 - L1, d2 = L3 - L2;
  const double tiny = 1e-10 * (1.0 + std::abs(L3));
  if (std::abs(d1) <= tiny && std::abs(d2) <= tiny) return std::exp(L3);
  if (d1 * d2 > 0) {
    const double rho = d2 / d1;
    if (rho >= 0.9 && std::abs(d2) > 1e-3) return d2 > 0 ? kInfinity : 0.0;
    if (rho < 0.9) return std::exp(L3 + d2 * rho / (1.0 - rho));
  }
  if (std::abs(d2) <= tiny) return std::exp(L3);
  return std::nullopt;
}

std::optional<double> list_limit(const RegimeSequences& s, double ae, double ad, double ar) {
  const std::size_t k =
      std::min({s.eps.values.size(), s.delta.values.size(), s.r.values.size()});
  if (k < 3) throw Error(ErrorKind::validation, "list sequences need at least 3 terms");
  std::vector<double> x(k);
  for (std::size_t j = 0; j < k; ++j)
    x[j] = std::pow(s.eps.values[j], ae) * std::pow(s.delta.values[j], ad) *
           std::pow(s.r.values[j], ar);
  return numeric_limit(x);
}

RegimeLabel label_for(double R, RegimeLabel nontrivial) {
  if (R == 0.0) return RegimeLabel::trivial_decoupled;
  if (std::isinf(R)) return RegimeLabel::trivial_glued;
  return nontrivial;
}

double gauss_point(int i) { return 0.5 + (i == 0 ? -0.5 : 0.5) / std::sqrt(3.0); }

}  // namespace

ScaleSequence ScaleSequence::power(double base, double exponent, double coef) {
  ScaleSequence s;
  s.base = base;
  s.exponent = exponent;
  s.coef = coef;
  return s;
}

ScaleSequence ScaleSequence::list(std::vector<double> values) {
  ScaleSequence s;
  s.values = std::move(values);
  return s;
}

double ScaleSequence::at(int j) const {
  if (is_list()) {
    if (j < 1 || j > static_cast<int>(values.size()))
      throw Error(ErrorKind::validation, "sequence index " + std::to_string(j) + " out of range");
    return values[j - 1];
  }
  return coef * std::pow(base, exponent * j);
}

double ScaleSequence::log_rate() const { return exponent * std::log(base); }

std::string to_string(RegimeLabel label) {
  switch (label) {
    case RegimeLabel::infinite: return "infinite";
    case RegimeLabel::finite: return "finite";
    case RegimeLabel::zero: return "zero";
    case RegimeLabel::trivial_decoupled: return "trivial_decoupled";
    case RegimeLabel::trivial_glued: return "trivial_glued";
  }
  return "unknown";
}

double RegimeReport::R() const {
  switch (label) {
    case RegimeLabel::infinite:
    case RegimeLabel::finite: return R_ell;
    case RegimeLabel::zero: return R_zero;
    case RegimeLabel::trivial_decoupled: return 0.0;
    case RegimeLabel::trivial_glued: return kInfinity;
  }
  return 0.0;
}

Regime RegimeReport::cell_regime() const {
  if (ell == 0.0) return Regime::zero;
  if (std::isinf(ell)) return Regime::infinite;
  return Regime::finite;
}

RegimeReport classify(const RegimeSequences& seq) {
  const int n = seq.n;
  const double p = seq.p;
  if (n < 3) throw Error(ErrorKind::validation, "dimension n must be >= 3");
  if (!(p > 1.0 && p < n - 1))
    throw Error(ErrorKind::validation, "exponent must satisfy 1 < p < n-1 (p = " +
                                           std::to_string(p) + ", n = " + std::to_string(n) + ")");
  const bool lists = seq.eps.is_list() || seq.delta.is_list() || seq.r.is_list();
  if (lists && !(seq.eps.is_list() && seq.delta.is_list() && seq.r.is_list()))
    throw Error(ErrorKind::validation, "mix of list and exponent-form sequences");

  RegimeReport rep;
  rep.symbolic = !lists;
  auto limit = [&](double ae, double ad, double ar, const char* what) {
    if (!lists)
      return monomial_limit({{&seq.eps, ae}, {&seq.delta, ad}, {&seq.r, ar}});
    auto v = list_limit(seq, ae, ad, ar);
    if (!v) throw Error(ErrorKind::numerical, what);
    return *v;
  };
  for (const ScaleSequence* s : {&seq.eps, &seq.delta, &seq.r}) {
    if (lists) {
      if (std::any_of(s->values.begin(), s->values.end(), [](double v) { return !(v > 0); }))
        throw Error(ErrorKind::validation, "sequence values must be positive");
    } else if (!(s->coef > 0) || !(s->base > 0) || !(s->log_rate() < 0)) {
      throw Error(ErrorKind::validation, "sequences must be positive and tend to 0");
    }
  }
  if (lists && (limit(1, 0, 0, "eps does not converge") != 0.0 ||
                limit(0, 1, 0, "delta does not converge") != 0.0 ||
                limit(0, 0, 1, "r does not converge") != 0.0))
    throw Error(ErrorKind::validation, "sequences must tend to 0");
  if (limit(-1, 1, 0, "delta/eps does not converge") != 0.0)
    throw Error(ErrorKind::validation, "not a thin-film-dominant regime (outside the modelled scope)");
  if (limit(-1, 0, 1, "r/eps does not converge") != 0.0)
    throw Error(ErrorKind::validation, "hole radius must be o(eps)");

  rep.ell = limit(0, -1, 1, "ell undefined");
  rep.R_ell = limit(-(n - 1.0), 0, n - 1.0 - p, "R undefined");
  rep.R_zero = limit(-(n - 1.0), -1, n - p, "R undefined");
  if (std::isinf(rep.ell)) {
    rep.label = label_for(rep.R_ell, RegimeLabel::infinite);
  } else if (rep.ell > 0) {
    rep.label = label_for(rep.R_ell, RegimeLabel::finite);
    if (rep.R_zero > 0 && std::isfinite(rep.R_zero))
      rep.consistency = std::abs(rep.R_zero - rep.ell * rep.R_ell) / rep.R_zero;
  } else {
    rep.label = label_for(rep.R_zero, RegimeLabel::zero);
  }
  return rep;
}

void Rectangle::validate() const {
  if (!(x1 > x0) || !(y1 > y0)) throw Error(ErrorKind::validation, "empty rectangle");
}

GridField GridField::sample(const Rectangle& omega, int nx, int ny, int m,
                            const std::function<Vector(double, double)>& fn) {
  omega.validate();
  if (nx < 1 || ny < 1) throw Error(ErrorKind::validation, "grid needs at least one cell");
  GridField g;
  g.omega = omega;
  g.nx = nx;
  g.ny = ny;
  g.values.resize(m, static_cast<Eigen::Index>(nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const double x = omega.x0 + (omega.x1 - omega.x0) * i / nx;
      const double y = omega.y0 + (omega.y1 - omega.y0) * j / ny;
      const Vector v = fn(x, y);
      if (v.size() != m) throw Error(ErrorKind::validation, "sampled value has wrong size");
      g.values.col(i + (nx + 1) * j) = v;
    }
  return g;
}

PhiTable PhiTable::homogeneous(double p, double phi_unit) {
  if (!(p > 1.0) || !(phi_unit >= 0))
    throw Error(ErrorKind::validation, "homogeneous phi needs p > 1 and phi(unit) >= 0");
  PhiTable t;
  t.p_ = p;
  t.unit_ = phi_unit;
  return t;
}

PhiTable PhiTable::tabulated(std::vector<double> radii, std::vector<double> values) {
  if (radii.empty() || radii.size() != values.size() || (radii.size() < 2 && radii[0] == 0.0))
    throw Error(ErrorKind::validation, "phi table needs a positive |z| entry");
  for (std::size_t i = 0; i < radii.size(); ++i)
    if (!(radii[i] >= 0) || (i > 0 && !(radii[i] > radii[i - 1])))
      throw Error(ErrorKind::validation, "phi table radii must be increasing and >= 0");
  PhiTable t;
  if (radii.front() > 0) {
    radii.insert(radii.begin(), 0.0);
    values.insert(values.begin(), 0.0);
  }
  t.radii_ = std::move(radii);
  t.values_ = std::move(values);
  return t;
}

PhiTable PhiTable::from_cell(const CellProblemSpec& spec, const std::vector<double>& radii) {
  const auto& g = spec.limit_density();
  const int m = g.rows();
  const Vector dir = spec.z.size() == m && spec.z.norm() > 0 ? Vector(spec.z.normalized())
                                                             : Vector(Vector::Unit(m, 0));
  auto phi_at = [&](double radius) {
    CellProblemSpec s = spec;
    s.z = radius * dir;
    return solve_phi(s).phi_extrapolated;
  };
  if (radii.empty()) {
    if (!g.is_p_homogeneous())
      throw Error(ErrorKind::validation, "non-homogeneous density needs a |z| table");
    return homogeneous(spec.p, phi_at(1.0));
  }
  std::vector<double> values;
  for (double r : radii) values.push_back(phi_at(r));
  return tabulated(radii, values);
}

double PhiTable::operator()(const Vector& z) const {
  const double r = z.norm();
  if (radii_.empty()) return unit_ * std::pow(r, p_);
  if (r > radii_.back() * (1 + 1e-12))
    throw Error(ErrorKind::domain, "phi table range exceeded: |z| = " + std::to_string(r) +
                                       " requires a table up to at least that radius (covers [0, " +
                                       std::to_string(radii_.back()) + "])");
  const auto it = std::upper_bound(radii_.begin(), radii_.end(), r);
  const std::size_t i = std::clamp<std::size_t>(it - radii_.begin(), 1, radii_.size() - 1);
  const double t = (r - radii_[i - 1]) / (radii_[i] - radii_[i - 1]);
  return (1 - t) * values_[i - 1] + t * values_[i];
}

std::function<double(const Gradient&)> relaxed_membrane_density(const EnergyDensity& W,
                                                                int envelope_depth) {
  if (W.cols() < 2) throw Error(ErrorKind::validation, "membrane density needs n >= 2 columns");
  if (auto reduced = W.reduced()) {
    if (reduced->is_convex()) return [d = *reduced](const Gradient& F) { return d.value(F); };
    auto env = EnvelopeApprox::of(*reduced, envelope_depth);
    return [env](const Gradient& F) { return laminate_envelope(env, Matrix(F)); };
  }
  EnvelopeApprox env;
  const ReducedDensity rd{W, ReductionMode::wbar, {}};
  env.base = [rd](const Gradient& F) { return reduce_wbar(rd, Matrix(F)); };
  env.m = W.rows();
  env.d = W.cols() - 1;
  env.depth = envelope_depth;
  env.scale_hint = W.scale_hint();
  for (const auto& [a, b] : W.rank_one_hints())
    if (b.head(env.d).norm() > 0) env.hints.emplace_back(a, b.head(env.d).normalized());
  return [env](const Gradient& F) { return laminate_envelope(env, Matrix(F)); };
}

LimitEnergy assemble_limit(const GridField& u_plus, const GridField& u_minus,
                           const std::function<double(const Gradient&)>& relaxed, double R,
                           const PhiTable& phi) {
  if (u_plus.nx != u_minus.nx || u_plus.ny != u_minus.ny || u_plus.m() != u_minus.m() ||
      u_plus.omega.x0 != u_minus.omega.x0 || u_plus.omega.x1 != u_minus.omega.x1 ||
      u_plus.omega.y0 != u_minus.omega.y0 || u_plus.omega.y1 != u_minus.omega.y1)
    throw Error(ErrorKind::validation, "u+ and u- must share the quadrature grid");
  if (!(R >= 0) || !std::isfinite(R))
    throw Error(ErrorKind::validation, "coupling R must be finite and >= 0");
  const int nx = u_plus.nx, ny = u_plus.ny, m = u_plus.m();
  const double hx = (u_plus.omega.x1 - u_plus.omega.x0) / nx;
  const double hy = (u_plus.omega.y1 - u_plus.omega.y0) / ny;
  const double area = hx * hy;
  LimitEnergy out;
  Gradient F(m, 2);
  auto cell = [&](const GridField& g, int i, int j, Vector& mid) {
    const auto v00 = g.values.col(i + (nx + 1) * j), v10 = g.values.col(i + 1 + (nx + 1) * j);
    const auto v01 = g.values.col(i + (nx + 1) * (j + 1));
    const auto v11 = g.values.col(i + 1 + (nx + 1) * (j + 1));
    F.col(0) = 0.5 * ((v10 + v11) - (v00 + v01)) / hx;
    F.col(1) = 0.5 * ((v01 + v11) - (v00 + v10)) / hy;
    mid = 0.25 * (v00 + v10 + v01 + v11);
  };
  Vector mp, mm;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      cell(u_plus, i, j, mp);
      out.membrane_upper += area * relaxed(F);
      cell(u_minus, i, j, mm);
      out.membrane_lower += area * relaxed(F);
      if (R > 0) out.interfacial += area * R * phi(mp - mm);
    }
  return out;
}

std::string to_string(PoincareShape shape) {
  switch (shape) {
    case PoincareShape::ball: return "ball";
    case PoincareShape::square: return "square";
    case PoincareShape::annulus_in_square: return "annulus_in_square";
  }
  return "unknown";
}

PoincareShape poincare_shape_from_string(const std::string& name) {
  if (name == "ball") return PoincareShape::ball;
  if (name == "square") return PoincareShape::square;
  if (name == "annulus_in_square") return PoincareShape::annulus_in_square;
  throw Error(ErrorKind::validation, "unknown shape '" + name + "'");
}

std::vector<PoincareProfile> standard_poincare_profiles() {
  std::vector<PoincareProfile> out;
  out.push_back({"constant", [](double, double, double) { return 1.0; },
                 [](double, double, double) { return Eigen::Vector3d::Zero().eval(); }});
  out.push_back({"x1", [](double a, double, double) { return a; },
                 [](double, double, double) { return Eigen::Vector3d(1, 0, 0); }});
  out.push_back({"mixed", [](double a, double b, double t) { return a * b + t * a + t * t; },
                 [](double a, double b, double t) { return Eigen::Vector3d(b + t, a, a + 2 * t); }});
  out.push_back({"wave",
                 [](double a, double b, double t) { return std::sin(2 * a + t) * std::cos(b); },
                 [](double a, double b, double t) {
                   return Eigen::Vector3d(2 * std::cos(2 * a + t) * std::cos(b),
                                          -std::sin(2 * a + t) * std::sin(b),
                                          std::cos(2 * a + t) * std::cos(b));
                 }});
  return out;
}

PoincareReport poincare_check(PoincareShape shape, double p, const std::vector<double>& rho_list,
                              const std::vector<double>& delta_list,
                              const std::vector<PoincareProfile>& profiles, int cells) {
  if (!(p >= 1.0)) throw Error(ErrorKind::validation, "Poincare exponent must be >= 1");
  if (cells < 4) throw Error(ErrorKind::validation, "Poincare quadrature needs >= 4 cells");
  // reference shape: bounding box and membership tests for A and for the
  // averaging set B
  double lo = 0.0, hi = 1.0;
  std::function<bool(double, double)> in_A, in_B;
  switch (shape) {
    case PoincareShape::square:
      in_A = [](double, double) { return true; };
      in_B = in_A;
      break;
    case PoincareShape::ball:
      lo = -1.0;
      in_A = [](double a, double b) { return a * a + b * b < 1.0; };
      in_B = in_A;
      break;
    case PoincareShape::annulus_in_square:
      lo = -1.0;
      in_A = [](double, double) { return true; };
      in_B = [](double a, double b) {
        const double s = a * a + b * b;
        return s > 0.16 && s < 0.64;
      };
      break;
  }
  const int cz = std::max(8, cells / 4);
  PoincareReport rep;
  for (const auto& prof : profiles) {
    double rmin = kInfinity, rmax = 0.0;
    for (double rho : rho_list)
      for (double delta : delta_list) {
        if (!(rho > 0) || !(delta > 0))
          throw Error(ErrorKind::validation, "rho and delta must be positive");
        const double hx = rho * (hi - lo) / cells, hz = delta / cz;
        const double w = hx * hx * hz / 8.0;
        // physical quadrature points, 2 x 2 x 2 Gauss per cell
        auto for_points = [&](const std::function<void(double, double, double, double, double)>& f) {
          for (int k = 0; k < cz; ++k)
            for (int j = 0; j < cells; ++j)
              for (int i = 0; i < cells; ++i)
                for (int q = 0; q < 8; ++q) {
                  const double x1 = rho * lo + hx * (i + gauss_point(q & 1));
                  const double x2 = rho * lo + hx * (j + gauss_point((q >> 1) & 1));
                  const double xn = hz * (k + gauss_point((q >> 2) & 1));
                  f(x1, x2, xn, x1 / rho, x2 / rho);
                }
        };
        double mass = 0.0, sum = 0.0;
        for_points([&](double, double, double xn, double a, double b) {
          if (!in_B(a, b)) return;
          mass += w;
          sum += w * prof.value(a, b, xn / delta);
        });
        const double mean = sum / mass;
        double lhs = 0.0, rhs = 0.0;
        for_points([&](double, double, double xn, double a, double b) {
          if (!in_A(a, b)) return;
          const double t = xn / delta;
          lhs += w * std::pow(std::abs(prof.value(a, b, t) - mean), p);
          const Eigen::Vector3d g = prof.gradient(a, b, t);
          const double lateral = std::hypot(g[0] / rho, g[1] / rho);
          const double vertical = std::abs(g[2] / delta);
          rhs += w * (std::pow(rho * lateral, p) + std::pow(delta * vertical, p));
        });
        PoincareRow row{prof.name, rho, delta, lhs, rhs, rhs > 0 ? lhs / rhs : 0.0};
        rmin = std::min(rmin, row.ratio);
        rmax = std::max(rmax, row.ratio);
        rep.max_ratio = std::max(rep.max_ratio, row.ratio);
        rep.rows.push_back(row);
      }
    if (rmax > 0) rep.variation = std::max(rep.variation, (rmax - rmin) / rmax);
  }
  rep.pass = rep.variation < 0.05;
  return rep;
}

}  // namespace sieve
