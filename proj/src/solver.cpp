#include <sieve/solver.hpp>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

namespace sieve {

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Dofs {
  std::vector<int> free_nodes;
  std::vector<int> free_index;  // node -> position in free_nodes, -1 if constrained
  Field fixed;                  // m x num_nodes with Dirichlet values, zero elsewhere
};

Dofs classify_dofs(const SlitMesh& mesh, const BoundaryCondition& bc, int m) {
  Dofs dofs;
  dofs.fixed = Field::Zero(m, mesh.num_nodes());
  std::vector<char> constrained(mesh.num_nodes(), 0);
  for (const auto& [tag, value] : bc.assignments) {
    if (value.size() != m)
      throw Error(ErrorKind::validation, "boundary value for " + to_string(tag) + " has size " +
                                             std::to_string(value.size()) + ", expected " +
                                             std::to_string(m));
    if (!value.allFinite())
      throw Error(ErrorKind::validation, "boundary value for " + to_string(tag) + " not finite");
    auto it = mesh.tags.find(tag);
    if (it == mesh.tags.end() || it->second.empty())
      throw Error(ErrorKind::validation, "mesh has no nodes tagged " + to_string(tag));
    for (int n : it->second) {
      if (constrained[n] && dofs.fixed.col(n) != value)
        throw Error(ErrorKind::validation,
                    "conflicting boundary values at node " + std::to_string(n));
      constrained[n] = 1;
      dofs.fixed.col(n) = value;
    }
  }
  dofs.free_index.assign(mesh.num_nodes(), -1);
  for (int n = 0; n < mesh.num_nodes(); ++n)
    if (!constrained[n]) {
      dofs.free_index[n] = static_cast<int>(dofs.free_nodes.size());
      dofs.free_nodes.push_back(n);
    }
  return dofs;
}

// Scalar weighted stiffness sum_e w_e c_e B_e^T D B_e on the free nodes,
// with c_e the curvature of |F|^p at the current element gradient.
class Preconditioner {
 public:
  void build(const SlitMesh& mesh, const Dofs& dofs, const GradientEmbedding& emb,
             const Field& u, double p, double eps) {
    const int ne = mesh.num_elements();
    const int dim = mesh.dim;
    Eigen::VectorXd metric = Eigen::VectorXd::Ones(dim);
    if (mesh.spec.mode != MeshMode::membrane) metric[dim - 1] = emb.vertical_scale * emb.vertical_scale;
    std::vector<double> norms(ne);
    double mean_sq = 0.0, total_w = 0.0;
    Gradient F;
    for (int e = 0; e < ne; ++e) {
      emb.embed(element_gradient(mesh, u, e), F);
      norms[e] = F.squaredNorm();
      mean_sq += mesh.weights[e] * norms[e];
      total_w += mesh.weights[e];
    }
    const double floor_sq = std::max(eps * eps, 1e-6 * mean_sq / total_w);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(ne) * (dim + 1) * (dim + 1));
    for (int e = 0; e < ne; ++e) {
      const double c = p * std::pow(norms[e] + floor_sq, 0.5 * (p - 2.0));
      const auto& B = mesh.shape_gradients[e];
      const Eigen::MatrixXd Ke = mesh.weights[e] * c * B.transpose() * metric.asDiagonal() * B;
      for (int a = 0; a <= dim; ++a) {
        const int ia = dofs.free_index[mesh.elements(a, e)];
        if (ia < 0) continue;
        for (int b = 0; b <= dim; ++b) {
          const int ib = dofs.free_index[mesh.elements(b, e)];
          if (ib >= 0) trip.emplace_back(ia, ib, Ke(a, b));
        }
      }
    }
    const int nf = static_cast<int>(dofs.free_nodes.size());
    SparseMatrix K(nf, nf);
    K.setFromTriplets(trip.begin(), trip.end());
    double max_diag = 0.0;
    for (int i = 0; i < nf; ++i) max_diag = std::max(max_diag, K.coeff(i, i));
    for (int i = 0; i < nf; ++i) K.coeffRef(i, i) += 1e-12 * max_diag + 1e-300;
    solver_.compute(K);
    if (solver_.info() != Eigen::Success)
      throw Error(ErrorKind::numerical, "preconditioner factorisation failed");
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& r, int m) const {
    const Eigen::Index nf = r.size() / m;
    Eigen::MatrixXd R = Eigen::Map<const Eigen::MatrixXd>(r.data(), m, nf).transpose();
    Eigen::MatrixXd Z = solver_.solve(R);
    Eigen::MatrixXd Zt = Z.transpose();
    return Eigen::Map<const Eigen::VectorXd>(Zt.data(), r.size());
  }

 private:
  Eigen::SimplicialLDLT<SparseMatrix> solver_;
};

struct Problem {
  const SlitMesh& mesh;
  const Dofs& dofs;
  EnergyDensity density;
  double scale;
  int m;
  Field u;
  Field grad;

  void scatter(const Eigen::VectorXd& x) {
    for (std::size_t j = 0; j < dofs.free_nodes.size(); ++j)
      u.col(dofs.free_nodes[j]) = x.segment(m * static_cast<Eigen::Index>(j), m);
  }

  double eval(const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    scatter(x);
    const double f = assemble_energy(mesh, density, u, scale, &grad);
    if (!std::isfinite(f)) throw Error(ErrorKind::numerical, "density/field blow-up");
    g.resize(x.size());
    for (std::size_t j = 0; j < dofs.free_nodes.size(); ++j)
      g.segment(m * static_cast<Eigen::Index>(j), m) = grad.col(dofs.free_nodes[j]);
    return f;
  }
};

struct LineSearchResult {
  bool ok = false;
  double alpha = 0.0;
  double f = 0.0;
  Eigen::VectorXd x, g;
};

double cubic_minimizer(double a, double fa, double da, double b, double fb, double db) {
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  if (disc < 0) return 0.5 * (a + b);
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
  return std::isfinite(t) ? t : 0.5 * (a + b);
}

// Strong Wolfe search; near roundoff level the approximate Wolfe test
// replaces sufficient decrease.
LineSearchResult line_search(Problem& prob, const Eigen::VectorXd& x, double f0,
                             const Eigen::VectorXd& g0, const Eigen::VectorXd& dir, double c1,
                             double c2) {
  const double d0 = g0.dot(dir);
  const double ftol = 1e-12 * std::max(1.0, std::abs(f0));
  LineSearchResult best;
  best.f = f0;
  auto trial = [&](double a, double& f, double& df, Eigen::VectorXd& xa, Eigen::VectorXd& ga) {
    xa = x + a * dir;
    f = prob.eval(xa, ga);
    df = ga.dot(dir);
  };
  auto wolfe = [&](double a, double f, double df) {
    const bool armijo = f <= f0 + c1 * a * d0;
    const bool approx = std::abs(f - f0) <= ftol && df <= (2.0 * c1 - 1.0) * d0;
    return (armijo || approx) && std::abs(df) <= -c2 * d0;
  };
  auto accept = [&](double a, double f, Eigen::VectorXd& xa, Eigen::VectorXd& ga) {
    LineSearchResult r;
    r.ok = true;
    r.alpha = a;
    r.f = f;
    r.x = std::move(xa);
    r.g = std::move(ga);
    return r;
  };
  auto remember = [&](double a, double f, const Eigen::VectorXd& xa, const Eigen::VectorXd& ga) {
    if (f < best.f - ftol) {
      best.alpha = a;
      best.f = f;
      best.x = xa;
      best.g = ga;
    }
  };

  double a_prev = 0.0, f_prev = f0, d_prev = d0;
  double a = 1.0;
  Eigen::VectorXd xa, ga;
  for (int i = 0; i < 30; ++i) {
    double f, df;
    trial(a, f, df, xa, ga);
    if (wolfe(a, f, df)) return accept(a, f, xa, ga);
    remember(a, f, xa, ga);
    double lo, flo, dlo, hi, fhi, dhi;
    bool zoom = false;
    if (f > f0 + c1 * a * d0 + ftol || (i > 0 && f >= f_prev)) {
      lo = a_prev, flo = f_prev, dlo = d_prev, hi = a, fhi = f, dhi = df;
      zoom = true;
    } else if (df >= 0) {
      lo = a, flo = f, dlo = df, hi = a_prev, fhi = f_prev, dhi = d_prev;
      zoom = true;
    }
    if (zoom) {
      for (int k = 0; k < 40; ++k) {
        const double left = std::min(lo, hi), right = std::max(lo, hi);
        const double width = right - left;
        double aj = cubic_minimizer(lo, flo, dlo, hi, fhi, dhi);
        aj = std::clamp(aj, left + 0.1 * width, right - 0.1 * width);
        double fj, dj;
        trial(aj, fj, dj, xa, ga);
        if (wolfe(aj, fj, dj)) return accept(aj, fj, xa, ga);
        remember(aj, fj, xa, ga);
        if (fj > f0 + c1 * aj * d0 + ftol || fj >= flo) {
          hi = aj, fhi = fj, dhi = dj;
        } else {
          if (dj * (hi - lo) >= 0) hi = lo, fhi = flo, dhi = dlo;
          lo = aj, flo = fj, dlo = dj;
        }
        if (width < 1e-14 * std::max(1.0, right)) break;
      }
      break;
    }
    a_prev = a, f_prev = f, d_prev = df;
    a *= 2.0;
  }
  if (best.alpha > 0) best.ok = true;
  return best;
}

}  // namespace

BoundaryCondition& BoundaryCondition::set(BoundaryTag tag, const Vector& value) {
  for (auto& [t, v] : assignments)
    if (t == tag) throw Error(ErrorKind::validation, "tag " + to_string(tag) + " assigned twice");
  assignments.emplace_back(tag, value);
  return *this;
}

const Vector* BoundaryCondition::find(BoundaryTag tag) const {
  for (const auto& [t, v] : assignments)
    if (t == tag) return &v;
  return nullptr;
}

void SolveOptions::validate() const {
  if (!(grad_tol > 0) || !(stage_tol > 0))
    throw Error(ErrorKind::validation, "solver tolerances must be positive");
  if (max_iters < 1 || memory < 1 || refresh_interval < 1)
    throw Error(ErrorKind::validation, "max_iters, memory and refresh_interval must be >= 1");
  if (!(0 < c1 && c1 < c2 && c2 < 1))
    throw Error(ErrorKind::validation, "line search needs 0 < c1 < c2 < 1");
  if (continuation.empty()) throw Error(ErrorKind::validation, "continuation is empty");
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    if (!(continuation[i] >= 0))
      throw Error(ErrorKind::validation, "continuation values must be >= 0");
    if (i > 0 && !(continuation[i] < continuation[i - 1]))
      throw Error(ErrorKind::validation, "continuation must be strictly decreasing");
  }
}

Field initial_guess(const SlitMesh& mesh, const BoundaryCondition& bc, int m) {
  const Vector zero = Vector::Zero(m);
  const Vector* up = bc.find(BoundaryTag::lateral_upper);
  const Vector* lo = bc.find(BoundaryTag::lateral_lower);
  const Vector vu = up ? *up : zero;
  const Vector vl = lo ? *lo : zero;
  Field u(m, mesh.num_nodes());
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    const int s = mesh.node_side[n];
    u.col(n) = s > 0 ? vu : (s < 0 ? vl : Vector(0.5 * (vu + vl)));
  }
  const Dofs dofs = classify_dofs(mesh, bc, m);
  for (int n = 0; n < mesh.num_nodes(); ++n)
    if (dofs.free_index[n] < 0) u.col(n) = dofs.fixed.col(n);
  return u;
}

SolveResult minimize(const SlitMesh& mesh, const EnergyDensity& density,
                     const BoundaryCondition& bc, double vertical_scale, const SolveOptions& opts,
                     const std::optional<Field>& initial) {
  opts.validate();
  if (bc.assignments.empty())
    throw Error(ErrorKind::validation, "boundary condition must constrain at least one tag");
  const int m = density.rows();
  const Dofs dofs = classify_dofs(mesh, bc, m);
  const auto emb = make_embedding(mesh, density, vertical_scale);

  Field u0 = initial ? *initial : initial_guess(mesh, bc, m);
  if (u0.rows() != m || u0.cols() != mesh.num_nodes())
    throw Error(ErrorKind::validation, "initial field shape mismatch");
  for (int n = 0; n < mesh.num_nodes(); ++n)
    if (dofs.free_index[n] < 0) u0.col(n) = dofs.fixed.col(n);

  const int nf = static_cast<int>(dofs.free_nodes.size());
  Eigen::VectorXd x(static_cast<Eigen::Index>(m) * nf);
  for (int j = 0; j < nf; ++j) x.segment(m * j, m) = u0.col(dofs.free_nodes[j]);

  Problem prob{mesh, dofs, density, vertical_scale, m, u0, Field()};
  SolveResult result;
  auto& diag = result.diagnostics;
  diag.converged = true;
  double gref = -1.0;

  for (std::size_t stage = 0; stage < opts.continuation.size(); ++stage) {
    const double eps = opts.continuation[stage];
    const bool last = stage + 1 == opts.continuation.size();
    prob.density = density.with_reg_eps(eps);
    StageDiagnostics sd;
    sd.reg_eps = eps;
    Eigen::VectorXd g;
    double f = nf > 0 ? prob.eval(x, g) : assemble_energy(mesh, prob.density, prob.u, vertical_scale, nullptr);
    if (gref < 0) {
      gref = nf > 0 ? g.norm() : 0.0;
      diag.initial_grad_norm = gref;
    }
    const double tol = (last ? opts.grad_tol : std::max(opts.grad_tol, opts.stage_tol)) * gref;
    std::deque<Eigen::VectorXd> S, Y;
    std::deque<double> rho;
    Preconditioner P;
    int since_refresh = opts.refresh_interval;
    double gamma = 1.0;
    sd.converged = nf == 0 || g.norm() <= tol;
    while (!sd.converged && sd.iterations < opts.max_iters) {
      if (since_refresh >= opts.refresh_interval) {
        prob.scatter(x);
        P.build(mesh, dofs, emb, prob.u, density.p(), eps);
        S.clear(), Y.clear(), rho.clear();
        gamma = 1.0;
        since_refresh = 0;
      }
      // two-loop recursion with the stiffness as initial metric
      Eigen::VectorXd q = g;
      std::vector<double> alpha(S.size());
      for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
        alpha[i] = rho[i] * S[i].dot(q);
        q -= alpha[i] * Y[i];
      }
      Eigen::VectorXd r = gamma * P.apply(q, m);
      for (std::size_t i = 0; i < S.size(); ++i) {
        const double beta = rho[i] * Y[i].dot(r);
        r += S[i] * (alpha[i] - beta);
      }
      Eigen::VectorXd dir = -r;
      if (!(g.dot(dir) < 0)) {
        S.clear(), Y.clear(), rho.clear();
        dir = -P.apply(g, m);
      }
      auto ls = line_search(prob, x, f, g, dir, opts.c1, opts.c2);
      if (!ls.ok && !S.empty()) {
        S.clear(), Y.clear(), rho.clear();
        gamma = 1.0;
        dir = -P.apply(g, m);
        ls = line_search(prob, x, f, g, dir, opts.c1, opts.c2);
      }
      if (!ls.ok) break;  // stagnation at roundoff level
      Eigen::VectorXd s = ls.x - x, y = ls.g - g;
      const double sy = s.dot(y);
      if (sy > 1e-16 * s.norm() * y.norm()) {
        if (static_cast<int>(S.size()) == opts.memory) S.pop_front(), Y.pop_front(), rho.pop_front();
        S.push_back(s);
        Y.push_back(y);
        rho.push_back(1.0 / sy);
        gamma = sy / y.dot(P.apply(y, m));
      }
      if (ls.f > f + 1e-12 * std::max(1.0, std::abs(f))) sd.monotone = false;
      x = std::move(ls.x);
      g = std::move(ls.g);
      f = ls.f;
      ++sd.iterations;
      ++since_refresh;
      sd.converged = g.norm() <= tol;
    }
    sd.energy = f;
    sd.grad_norm = nf > 0 ? g.norm() : 0.0;
    diag.total_iterations += sd.iterations;
    diag.monotone = diag.monotone && sd.monotone;
    diag.stages.push_back(sd);
    if (last) {
      diag.converged = sd.converged;
      diag.grad_norm = sd.grad_norm;
      diag.regularized_energy = f;
    }
  }
  prob.scatter(x);
  result.field = prob.u;
  diag.final_energy = integrate_energy(mesh, density.with_reg_eps(0.0), result.field, vertical_scale);
  diag.regularization_gap = std::abs(diag.regularized_energy - diag.final_energy);
  return result;
}

double check_gradient(const SlitMesh& mesh, const EnergyDensity& density, const Field& field,
                      double vertical_scale, int probes, std::uint64_t seed, double step) {
  if (probes < 1) return 0.0;
  const auto emb = make_embedding(mesh, density, vertical_scale);
  Field grad;
  assemble_energy(mesh, density, field, vertical_scale, &grad);
  const double gscale = grad.cwiseAbs().maxCoeff();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_node(0, mesh.num_nodes() - 1);
  std::uniform_int_distribution<int> pick_comp(0, static_cast<int>(field.rows()) - 1);
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    const int node = pick_node(rng), comp = pick_comp(rng);
    std::vector<int> local;
    for (int e = 0; e < mesh.num_elements(); ++e)
      for (int a = 0; a <= mesh.dim; ++a)
        if (mesh.elements(a, e) == node) {
          local.push_back(e);
          break;
        }
    Field u = field;
    auto local_energy = [&](double v) {
      u(comp, node) = v;
      double sum = 0.0;
      Gradient F;
      for (int e : local) {
        emb.embed(element_gradient(mesh, u, e), F);
        sum += mesh.weights[e] * density.regularized_value(F);
      }
      return sum;
    };
    const double x0 = field(comp, node);
    const double h = step * std::max(1.0, std::abs(x0));
    const double fd = (local_energy(x0 + h) - local_energy(x0 - h)) / (2.0 * h);
    const double an = grad(comp, node);
    const double denom = std::max({std::abs(an), std::abs(fd), 1e-6 * gscale, 1e-300});
    worst = std::max(worst, std::abs(an - fd) / denom);
  }
  return worst;
}

}  // namespace sieve
