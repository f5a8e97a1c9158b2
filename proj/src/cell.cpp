#include <sieve/cell.hpp>
#include <sieve/parallel.hpp>

#include <algorithm>
#include <cmath>
#include <map>

namespace sieve {

namespace {

// Least squares for phi = L + a x with x = N^{-q}.
ExtrapolationFit fit_fixed(const std::vector<double>& N, const std::vector<double>& phi, double q) {
  const std::size_t k = N.size();
  Eigen::MatrixXd A(k, 2);
  Eigen::VectorXd y(k);
  for (std::size_t i = 0; i < k; ++i) {
    A(i, 0) = 1.0;
    A(i, 1) = std::pow(N[i], -q);
    y[i] = phi[i];
  }
  const Eigen::Vector2d c = A.colPivHouseholderQr().solve(y);
  ExtrapolationFit f;
  f.limit = c[0];
  f.amplitude = c[1];
  f.rate = q;
  f.residual = std::sqrt((A * c - y).squaredNorm() / static_cast<double>(k));
  return f;
}

double trace_deviation(const SlitMesh& mesh, const Field& u, const Vector& z, double& max_dev) {
  max_dev = 0.0;
  const double zn = z.norm();
  if (zn == 0.0 || mesh.shared_hole_nodes.empty()) return 0.0;
  double sum = 0.0;
  for (int n : mesh.shared_hole_nodes) {
    const double dev = (u.col(n) - 0.5 * z).norm() / zn;
    sum += dev;
    max_dev = std::max(max_dev, dev);
  }
  return sum / static_cast<double>(mesh.shared_hole_nodes.size());
}

CellProblemSpec refined(const CellProblemSpec& spec) {
  CellProblemSpec fine = spec;
  fine.resolution = 0.5 * spec.resolution;
  return fine;
}

}  // namespace

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::finite: return "finite";
    case Regime::infinite: return "infinite";
    case Regime::zero: return "zero";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& name) {
  if (name == "finite") return Regime::finite;
  if (name == "infinite") return Regime::infinite;
  if (name == "zero") return Regime::zero;
  throw Error(ErrorKind::validation, "unknown regime '" + name + "'");
}

CellProblemSpec CellProblemSpec::scalar(Regime regime, int d, double p, double z, double ell) {
  CellProblemSpec spec;
  spec.regime = regime;
  spec.ell = ell;
  spec.d = d;
  spec.p = p;
  spec.z = Vector::Constant(1, z);
  spec.density = EnergyDensity::power(1, d + 1, p);
  return spec;
}

double CellProblemSpec::p_star() const { return d * p / (d - p); }

const EnergyDensity& CellProblemSpec::limit_density() const {
  if (!density) throw Error(ErrorKind::validation, "cell problem has no density");
  return *density;
}

void CellProblemSpec::validate() const {
  if (d < 2) throw Error(ErrorKind::validation, "lateral dimension d must be >= 2");
  if (!(p > 1.0 && p < d))
    throw Error(ErrorKind::validation, "exponent must satisfy 1 < p < n-1 (p = " +
                                           std::to_string(p) + ", n-1 = " + std::to_string(d) +
                                           ")");
  const auto& g = limit_density();
  if (g.p() != p)
    throw Error(ErrorKind::validation, "density exponent differs from the cell exponent");
  if (g.cols() != d + 1)
    throw Error(ErrorKind::validation, "density must act on m x (d + 1) matrices");
  if (z.size() != g.rows())
    throw Error(ErrorKind::validation, "jump z has " + std::to_string(z.size()) +
                                           " components, density has m = " +
                                           std::to_string(g.rows()));
  if (!z.allFinite()) throw Error(ErrorKind::validation, "jump z is not finite");
  if (regime == Regime::finite && !(ell > 0 && std::isfinite(ell)))
    throw Error(ErrorKind::validation, "finite regime needs 0 < ell < inf");
  if (N_list.empty()) throw Error(ErrorKind::validation, "N_list is empty");
  for (std::size_t i = 0; i < N_list.size(); ++i) {
    if (!(N_list[i] > 1.0)) throw Error(ErrorKind::validation, "truncation radii must exceed 1");
    if (i > 0 && !(N_list[i] > N_list[i - 1]))
      throw Error(ErrorKind::validation, "N_list must be strictly increasing");
  }
  if (mode == MeshMode::membrane)
    throw Error(ErrorKind::validation, "membrane layout is selected by the infinite regime");
  solver.validate();
}

CellDomainSpec CellProblemSpec::domain(double N) const {
  CellDomainSpec dom;
  dom.d = d;
  dom.N = N;
  dom.half_height = regime == Regime::zero ? N : 1.0;
  dom.mode = regime == Regime::infinite ? MeshMode::membrane : mode;
  dom.resolution = resolution;
  dom.grading = grading;
  dom.min_size_factor = min_size_factor;
  return dom;
}

double radial_capacity(int d, double p, double r_in, double r_out) {
  if (d < 2) throw Error(ErrorKind::validation, "dimension must be >= 2");
  if (!(p > 1.0)) throw Error(ErrorKind::validation, "exponent must exceed 1");
  if (p >= d) throw Error(ErrorKind::domain, "capacity degenerate (infinite-extent potential)");
  if (!(r_in > 0)) throw Error(ErrorKind::validation, "inner radius must be positive");
  if (!(r_in < r_out)) throw Error(ErrorKind::domain, "inner radius must be below outer radius");
  // minimiser psi' ~ s^{-k}; Cap = |S^{d-1}| (int s^{-k} ds)^{1-p}
  const double k = (d - 1.0) / (p - 1.0);
  double integral;
  if (std::isinf(r_out))
    integral = std::pow(r_in, 1.0 - k) / (k - 1.0);
  else if (k == 1.0)
    integral = std::log(r_out / r_in);
  else
    integral = (std::pow(r_out, 1.0 - k) - std::pow(r_in, 1.0 - k)) / (1.0 - k);
  return sphere_measure(d) * std::pow(integral, 1.0 - p);
}

CellDensity cell_density(const CellProblemSpec& spec) {
  const auto& g = spec.limit_density();
  if (spec.regime != Regime::infinite) return {g, false};
  auto reduced = g.reduced();
  if (!reduced)
    throw Error(ErrorKind::validation,
                "membrane cell needs a density with a closed-form reduction");
  if (reduced->is_convex()) return {*reduced, false};
  auto env = EnvelopeApprox::of(*reduced, 1);
  auto value = [env](const Gradient& F) { return laminate_envelope(env, Matrix(F)); };
  return {EnergyDensity::custom(reduced->name() + "_laminate", reduced->rows(), reduced->cols(),
                                reduced->p(), reduced->beta(), value),
          true};
}

double tail_rate(const CellProblemSpec& spec) {
  const double n = spec.regime == Regime::zero ? spec.d + 1.0 : spec.d;
  return (n - spec.p) / (spec.p - 1.0);
}

CellField solve_cell_field(const CellProblemSpec& spec, double N) {
  spec.validate();
  const auto cd = cell_density(spec);
  CellField out{build_slit_mesh(spec.domain(N)), {}, {}};
  const Vector zero = Vector::Zero(spec.z.size());
  BoundaryCondition bc;
  bc.set(BoundaryTag::lateral_upper, spec.z);
  bc.set(BoundaryTag::lateral_lower, zero);
  if (spec.regime == Regime::zero) {
    bc.set(BoundaryTag::top_cap, spec.z);
    bc.set(BoundaryTag::bottom_cap, zero);
  }
  const double scale = spec.regime == Regime::finite ? spec.ell : 1.0;
  auto res = minimize(out.mesh, cd.density, bc, scale, spec.solver);
  out.solve.N = N;
  out.solve.phi = res.diagnostics.final_energy;
  out.solve.nodes = out.mesh.num_nodes();
  out.solve.diagnostics = res.diagnostics;
  out.solve.trace_mean_dev = trace_deviation(out.mesh, res.field, spec.z, out.solve.trace_max_dev);
  out.field = std::move(res.field);
  return out;
}

CellSolve solve_cell(const CellProblemSpec& spec, double N) {
  return solve_cell_field(spec, N).solve;
}

CellResult solve_phi(const CellProblemSpec& spec) {
  spec.validate();
  CellResult result;
  result.envelope_surrogate = cell_density(spec).envelope_surrogate;
  result.solves.resize(spec.N_list.size());
  run_tasks(spec.N_list.size(), [&](std::size_t i) {
    result.solves[i] = solve_cell(spec, spec.N_list[i]);
  });
  for (const auto& s : result.solves) {
    result.N.push_back(s.N);
    result.phi_by_N.push_back(s.phi);
    result.converged = result.converged && s.diagnostics.converged;
  }
  const auto& last = result.solves.back();
  result.trace_mean_dev = last.trace_mean_dev;
  result.trace_max_dev = last.trace_max_dev;
  if (result.N.size() >= 3) {
    result.fit = extrapolate(result.N, result.phi_by_N, tail_rate(spec), spec.p);
    result.phi_extrapolated = result.fit.limit();
    result.extrapolated = true;
  } else {
    result.phi_extrapolated = result.phi_by_N.back();
  }
  return result;
}

Extrapolation extrapolate(const std::vector<double>& N, const std::vector<double>& phi,
                          double rate, double capacitary_p) {
  if (N.size() != phi.size()) throw Error(ErrorKind::validation, "N and phi differ in length");
  if (N.size() < 3) throw Error(ErrorKind::validation, "extrapolation needs at least 3 points");
  if (!(rate > 0)) throw Error(ErrorKind::validation, "extrapolation rate must be positive");
  if (capacitary_p != 0.0 && !(capacitary_p > 1.0))
    throw Error(ErrorKind::validation, "capacitary exponent must exceed 1");
  for (std::size_t i = 0; i < N.size(); ++i) {
    if (!(N[i] > 0) || (i > 0 && !(N[i] > N[i - 1])))
      throw Error(ErrorKind::validation, "N values must be positive and increasing");
    if (!std::isfinite(phi[i])) throw Error(ErrorKind::validation, "phi values must be finite");
    if (i > 0 && phi[i] > phi[i - 1] + 1e-6 * std::abs(phi[i - 1]))
      throw Error(ErrorKind::numerical, "non-monotone truncation; check solver convergence");
  }
  if (std::all_of(phi.begin(), phi.end(), [&](double v) { return v == phi.front(); })) {
    Extrapolation flat;
    flat.fixed = {phi.front(), 0.0, rate, 0.0};
    flat.free = flat.fixed;
    return flat;
  }
  // capacitary form: phi^{-1/(p-1)} is affine in N^{-q} for radial condensers
  const bool transform =
      capacitary_p > 1.0 && std::all_of(phi.begin(), phi.end(), [](double v) { return v > 0; });
  const double e = transform ? -1.0 / (capacitary_p - 1.0) : 1.0;
  auto forward = [&](double v) { return transform ? std::pow(v, e) : v; };
  auto back = [&](double v) { return transform ? std::pow(v, 1.0 / e) : v; };
  std::vector<double> y(phi.size());
  std::transform(phi.begin(), phi.end(), y.begin(), forward);
  auto to_phi = [&](ExtrapolationFit f) {
    double ss = 0.0;
    for (std::size_t i = 0; i < N.size(); ++i) {
      const double r = back(f.limit + f.amplitude * std::pow(N[i], -f.rate)) - phi[i];
      ss += r * r;
    }
    f.limit = back(f.limit);
    f.residual = std::sqrt(ss / static_cast<double>(N.size()));
    return f;
  };

  Extrapolation ex;
  const ExtrapolationFit fixed = fit_fixed(N, y, rate);
  ex.fixed = to_phi(fixed);
  const double spread = std::abs(y.front() - y.back());
  if (!(spread > 1e-14 * std::max(1.0, std::abs(y.front())))) {
    ex.free = ex.fixed;
    return ex;
  }
  // free rate: scan log q, then golden-section refinement
  auto resid = [&](double lq) { return fit_fixed(N, y, std::exp(lq)).residual; };
  const double lo = std::log(0.02), hi = std::log(20.0);
  const int grid = 400;
  int best = 0;
  double best_r = resid(lo);
  for (int i = 1; i <= grid; ++i) {
    const double r = resid(lo + (hi - lo) * i / grid);
    if (r < best_r) best_r = r, best = i;
  }
  double a = lo + (hi - lo) * std::max(0, best - 1) / grid;
  double b = lo + (hi - lo) * std::min(grid, best + 1) / grid;
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - golden * (b - a), d = a + golden * (b - a);
  double fc = resid(c), fd = resid(d);
  for (int it = 0; it < 100 && b - a > 1e-12; ++it) {
    if (fc < fd) {
      b = d, d = c, fd = fc;
      c = b - golden * (b - a), fc = resid(c);
    } else {
      a = c, c = d, fc = fd;
      d = a + golden * (b - a), fd = resid(d);
    }
  }
  ex.free = to_phi(fit_fixed(N, y, std::exp(0.5 * (a + b))));
  return ex;
}

double capacity_bound(const CellProblemSpec& spec, double z_norm, double N) {
  const double beta = spec.limit_density().beta();
  if (z_norm == 0.0) return 0.0;
  if (spec.regime == Regime::zero)
    return beta * std::pow(2.0, -spec.p) * std::pow(z_norm, spec.p) *
           radial_capacity(spec.d + 1, spec.p, 1.0, N);
  return beta * std::pow(2.0, 1.0 - spec.p) * std::pow(z_norm, spec.p) *
         radial_capacity(spec.d, spec.p, 1.0, N);
}

UpperBoundReport scan_upper_bound(const CellProblemSpec& spec,
                                  const std::vector<Vector>& z_samples) {
  spec.validate();
  const double N = spec.N_list.back();
  const double beta = spec.limit_density().beta();
  UpperBoundReport rep;
  rep.entries.resize(z_samples.size());
  run_tasks(z_samples.size(), [&](std::size_t i) {
    CellProblemSpec s = spec;
    s.z = z_samples[i];
    auto& e = rep.entries[i];
    e.z = s.z;
    e.phi = solve_cell(s, N).phi;
    e.phi_fine = solve_cell(refined(s), N).phi;
    e.margin = 2.0 * std::abs(e.phi - e.phi_fine);
    e.bound = capacity_bound(s, s.z.norm(), N);
    e.ratio = e.bound > 0 ? e.phi_fine / (e.bound / beta) : 0.0;
    e.pass = std::max(e.phi, e.phi_fine) <= e.bound + e.margin;
  });
  for (const auto& e : rep.entries) {
    rep.pass = rep.pass && e.pass;
    rep.empirical_c = std::max(rep.empirical_c, e.ratio);
  }
  return rep;
}

LipschitzReport scan_lipschitz(const CellProblemSpec& spec,
                               const std::vector<std::pair<Vector, Vector>>& pairs) {
  spec.validate();
  const double N = spec.N_list.back();
  const double p = spec.p;
  LipschitzReport rep;
  // distinct jump vectors, solved once per mesh level
  std::map<std::vector<double>, std::size_t> index;
  std::vector<Vector> points;
  auto key = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  for (const auto& [z, w] : pairs) {
    if (z == w) continue;
    for (const Vector* v : {&z, &w})
      if (index.emplace(key(*v), points.size()).second) points.push_back(*v);
  }
  std::vector<double> coarse(points.size()), fine(points.size());
  run_tasks(2 * points.size(), [&](std::size_t t) {
    const std::size_t i = t / 2;
    CellProblemSpec s = t % 2 ? refined(spec) : spec;
    s.z = points[i];
    (t % 2 ? fine : coarse)[i] = solve_cell(s, N).phi;
  });
  for (const auto& [z, w] : pairs) {
    if (z == w) {
      ++rep.skipped;
      continue;
    }
    const std::size_t iz = index.at(key(z)), iw = index.at(key(w));
    const double weight =
        (z - w).norm() * (std::pow(z.norm(), p - 1.0) + std::pow(w.norm(), p - 1.0));
    LipschitzPair lp{z, w, std::abs(coarse[iz] - coarse[iw]) / weight,
                     std::abs(fine[iz] - fine[iw]) / weight};
    rep.finite = rep.finite && std::isfinite(lp.ratio) && std::isfinite(lp.ratio_fine);
    rep.worst = std::max(rep.worst, lp.ratio);
    rep.worst_fine = std::max(rep.worst_fine, lp.ratio_fine);
    rep.pairs.push_back(lp);
  }
  const double lo = std::min(rep.worst, rep.worst_fine), hi = std::max(rep.worst, rep.worst_fine);
  rep.stability = lo > 0 ? hi / lo : (hi == 0 ? 1.0 : kInfinity);
  rep.stable = rep.finite && rep.stability < 2.0;
  return rep;
}

EllContinuityReport scan_ell_continuity(const CellProblemSpec& spec,
                                        const std::vector<double>& ells, double N) {
  if (ells.empty()) throw Error(ErrorKind::validation, "ell list is empty");
  for (std::size_t i = 0; i < ells.size(); ++i)
    if (!(ells[i] > 0 && std::isfinite(ells[i])) || (i > 0 && !(ells[i] > ells[i - 1])))
      throw Error(ErrorKind::validation, "ell list must be positive, finite and increasing");
  CellProblemSpec base = spec;
  base.N_list = {N};
  base.mode = MeshMode::axisymmetric;
  EllContinuityReport rep;
  rep.rows.resize(ells.size());
  double phi_inf = 0.0, phi_zero = 0.0;
  run_tasks(ells.size() + 2, [&](std::size_t i) {
    CellProblemSpec s = base;
    if (i < ells.size()) {
      s.regime = Regime::finite;
      s.ell = ells[i];
      rep.rows[i].ell = ells[i];
      rep.rows[i].phi = solve_cell(s, N).phi;
    } else if (i == ells.size()) {
      s.regime = Regime::infinite;
      phi_inf = solve_cell(s, N).phi;
    } else {
      s.regime = Regime::zero;
      phi_zero = solve_cell(s, N).phi;
    }
  });
  rep.phi_infinite = phi_inf;
  rep.phi_zero = phi_zero;
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    auto& r = rep.rows[i];
    r.gap = phi_inf > 0 ? std::abs(r.phi - phi_inf) / phi_inf : 0.0;
    r.phi_over_ell = r.phi / r.ell;
    if (i > 0 && phi_inf > 0 && !(r.gap < rep.rows[i - 1].gap)) rep.decreasing = false;
  }
  EllRow inf_row;
  inf_row.ell = kInfinity;
  inf_row.phi = phi_inf;
  rep.rows.push_back(inf_row);
  rep.pass = rep.decreasing && rep.rows[ells.size() - 1].gap < 0.1;
  return rep;
}

}  // namespace sieve
