#include <sieve/film.hpp>
#include <sieve/parallel.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

namespace sieve {

namespace {

// Offsets 0 = o_0 < o_1 < ... < o_k = H of the graded steps leaving a centre.
std::vector<double> graded_offsets(double H, const FilmSpec& spec) {
  const double h0 = spec.r / spec.hole_divisions;
  const double hmax = std::max(spec.max_step(), h0);
  std::vector<double> o{0.0};
  double step = h0;
  while (o.back() < H) {
    if (o.back() + step > spec.hole_core * spec.r * (1 + 1e-12)) step = std::min(step * spec.growth, hmax);
    o.push_back(o.back() + step);
  }
  // the closing point H replaces any node closer than 0.3 steps to it
  while (o.size() > 1 && o.back() > H - 0.3 * step) o.pop_back();
  o.push_back(H);
  return o;
}

std::vector<double> lattice_centers(double a, double b, double eps) {
  std::vector<double> c;
  for (long k = static_cast<long>(std::floor(a / eps)); k * eps < b; ++k)
    if (k * eps > a) c.push_back(k * eps);
  return c;
}

double nearest(const std::vector<double>& c, double x) {
  const auto it = std::lower_bound(c.begin(), c.end(), x);
  if (it == c.end()) return c.back();
  if (it == c.begin()) return *it;
  return (x - *(it - 1) <= *it - x) ? *(it - 1) : *it;
}

// Kuhn split: for each axis permutation the tetrahedron follows the voxel
// edges in that order, so each gradient column is one edge difference.
constexpr std::array<std::array<int, 3>, 6> kKuhn = {
    {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

}  // namespace

void FilmSpec::validate() const {
  omega.validate();
  if (!(eps > 0) || !(delta > 0) || !(r > 0))
    throw Error(ErrorKind::validation, "eps, delta and r must be positive");
  if (!(r < eps / 2)) throw Error(ErrorKind::validation, "holes overlap: need r < eps/2");
  if (hole_divisions < 2)
    throw Error(ErrorKind::validation, "holes unresolved: need >= 2 voxels across r");
  if (layers < 2)
    throw Error(ErrorKind::validation, "film unresolved: need >= 2 voxels through delta");
  if (!(growth >= 1.0) || !(hole_core > 0))
    throw Error(ErrorKind::validation, "growth must be >= 1 and hole_core positive");
  if (!(voxel_budget > 0)) throw Error(ErrorKind::validation, "voxel budget must be positive");
}

std::vector<double> film_axis(double a, double b, const std::vector<double>& centers,
                              const FilmSpec& spec) {
  std::vector<double> x;
  auto append = [&](double v) {
    if (x.empty() || v > x.back() + 1e-14 * (1.0 + std::abs(v))) x.push_back(v);
  };
  if (centers.empty()) {
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / spec.max_step() - 1e-9)));
    for (int i = 0; i <= n; ++i) append(a + (b - a) * i / n);
    return x;
  }
  // left boundary segment, then centre-to-centre segments split at midpoints
  {
    const auto o = graded_offsets(centers.front() - a, spec);
    append(a);
    for (std::size_t i = o.size() - 1; i-- > 1;) append(centers.front() - o[i]);
    append(centers.front());
  }
  for (std::size_t k = 0; k + 1 < centers.size(); ++k) {
    const double c0 = centers[k], c1 = centers[k + 1];
    const double mid = 0.5 * (c0 + c1);
    const auto o = graded_offsets(mid - c0, spec);
    for (std::size_t i = 1; i + 1 < o.size(); ++i) append(c0 + o[i]);
    append(mid);
    for (std::size_t i = o.size() - 1; i-- > 1;) append(c1 - o[i]);
    append(c1);
  }
  {
    const auto o = graded_offsets(b - centers.back(), spec);
    for (std::size_t i = 1; i < o.size(); ++i) append(i + 1 == o.size() ? b : centers.back() + o[i]);
  }
  return x;
}

FilmGrid build_film_grid(const FilmSpec& spec) {
  spec.validate();
  FilmGrid g;
  g.r = spec.r;
  g.cx = lattice_centers(spec.omega.x0, spec.omega.x1, spec.eps);
  g.cy = lattice_centers(spec.omega.y0, spec.omega.y1, spec.eps);
  g.x = film_axis(spec.omega.x0, spec.omega.x1, g.cx, spec);
  g.y = film_axis(spec.omega.y0, spec.omega.y1, g.cy, spec);
  const double voxels = 2.0 * (g.x.size() - 1.0) * (g.y.size() - 1.0) * spec.layers;
  if (voxels > spec.voxel_budget)
    throw Error(ErrorKind::validation, "voxel budget exceeded: " + std::to_string(voxels) +
                                           " > " + std::to_string(spec.voxel_budget));
  for (int k = 0; k <= spec.layers; ++k) {
    g.z_upper.push_back(spec.delta * k / spec.layers);
    g.z_lower.push_back(-spec.delta * (spec.layers - k) / spec.layers);
  }
  g.hole.assign(g.lateral_nodes(), 0);
  if (!g.cx.empty() && !g.cy.empty())
    for (int j = 0; j < g.ny1(); ++j)
      for (int i = 0; i < g.nx1(); ++i) {
        const double dx = g.x[i] - nearest(g.cx, g.x[i]), dy = g.y[j] - nearest(g.cy, g.y[j]);
        g.hole[g.index(i, j, 0)] = std::hypot(dx, dy) < spec.r * (1 - 1e-12);
      }
  return g;
}

FilmField make_film_field(const FilmGrid& grid, int m,
                          const std::function<Vector(double, double, double)>& upper,
                          const std::function<Vector(double, double, double)>& lower) {
  FilmField f;
  f.upper.resize(m, static_cast<Eigen::Index>(grid.layer_nodes()));
  f.lower.resize(m, static_cast<Eigen::Index>(grid.layer_nodes()));
  const int nx1 = grid.nx1(), nz1 = grid.nz1(), top = nz1 - 1;
  for_each_chunk(grid.ny1(), [&](int, std::size_t jb, std::size_t je) {
    for (std::size_t j = jb; j < je; ++j)
      for (int k = 0; k < nz1; ++k)
        for (int i = 0; i < nx1; ++i) {
          const auto jj = static_cast<int>(j);
          const Vector a = upper(grid.x[i], grid.y[j], grid.z_upper[k]);
          const Vector b = lower(grid.x[i], grid.y[j], grid.z_lower[k]);
          if (a.size() != m || b.size() != m)
            throw Error(ErrorKind::validation, "film field has the wrong number of components");
          f.upper.col(grid.index(i, jj, k)) = a;
          f.lower.col(grid.index(i, jj, k)) = b;
        }
    for (std::size_t j = jb; j < je; ++j)
      for (int i = 0; i < nx1; ++i) {
        const auto jj = static_cast<int>(j);
        if (!grid.hole[grid.index(i, jj, 0)]) continue;
        const Vector mean = 0.5 * (f.upper.col(grid.index(i, jj, 0)) + f.lower.col(grid.index(i, jj, top)));
        f.upper.col(grid.index(i, jj, 0)) = mean;
        f.lower.col(grid.index(i, jj, top)) = mean;
      }
  });
  return f;
}

double direct_film_energy(const FilmSpec& spec, const FilmGrid& grid, const EnergyDensity& W,
                          const FilmField& field) {
  spec.validate();
  if (W.cols() != 3) throw Error(ErrorKind::validation, "direct film energy needs n = 3");
  const int m = W.rows();
  const auto nodes = static_cast<Eigen::Index>(grid.layer_nodes());
  if (field.upper.rows() != m || field.lower.rows() != m || field.upper.cols() != nodes ||
      field.lower.cols() != nodes)
    throw Error(ErrorKind::validation, "film field does not match grid and density");
  const int top = grid.nz1() - 1;
  for (std::size_t q = 0; q < grid.lateral_nodes(); ++q) {
    if (!grid.hole[q]) continue;
    const auto a = field.upper.col(static_cast<Eigen::Index>(q));
    const auto b = field.lower.col(static_cast<Eigen::Index>(q + grid.lateral_nodes() * top));
    if ((a - b).norm() > 1e-12 * (1.0 + a.norm()))
      throw Error(ErrorKind::validation, "mid-plane trace differs inside a hole");
  }
  const std::size_t nx = grid.x.size() - 1, ny = grid.y.size() - 1, nz = top;
  const std::size_t per_layer = nx * ny * nz;
  const double energy = deterministic_sum(2 * per_layer, [&](std::size_t b, std::size_t e) {
    Gradient F(m, 3);
    double sum = 0.0;
    for (std::size_t v = b; v < e; ++v) {
      const bool up = v < per_layer;
      const std::size_t w = up ? v : v - per_layer;
      const int i = static_cast<int>(w % nx), j = static_cast<int>((w / nx) % ny);
      const int k = static_cast<int>(w / (nx * ny));
      const Field& u = up ? field.upper : field.lower;
      const auto& z = up ? grid.z_upper : grid.z_lower;
      const std::array<double, 3> h = {grid.x[i + 1] - grid.x[i], grid.y[j + 1] - grid.y[j],
                                       z[k + 1] - z[k]};
      double cell = 0.0;
      for (const auto& perm : kKuhn) {
        std::array<int, 3> at = {i, j, k};
        auto prev = static_cast<Eigen::Index>(grid.index(at[0], at[1], at[2]));
        for (int axis : perm) {
          ++at[axis];
          const auto next = static_cast<Eigen::Index>(grid.index(at[0], at[1], at[2]));
          F.col(axis) = (u.col(next) - u.col(prev)) / h[axis];
          prev = next;
        }
        cell += W.value(F);
      }
      sum += cell * h[0] * h[1] * h[2] / 6.0;
    }
    return sum;
  });
  return energy / spec.delta;
}

TrendReport gamma_trend(const RegimeSequences& schedule, const Vector& u_plus,
                        const Vector& u_minus, const EnergyDensity& W, const TrendOptions& opts) {
  if (schedule.n != 3) throw Error(ErrorKind::validation, "film simulation needs n = 3");
  if (W.cols() != 3 || W.rows() != u_plus.size() || W.rows() != u_minus.size())
    throw Error(ErrorKind::validation, "density shape does not match the targets");
  if (std::abs(W.p() - schedule.p) > 1e-12)
    throw Error(ErrorKind::validation, "schedule exponent differs from the density exponent");
  if (opts.j1 < opts.j0 || opts.j0 < 1) throw Error(ErrorKind::validation, "empty schedule");
  opts.omega.validate();

  TrendReport rep;
  rep.regime = classify(schedule);
  if (rep.regime.label == RegimeLabel::trivial_glued)
    throw Error(ErrorKind::validation, "glued regime: the limit forces u+ = u-");
  const Vector z = u_plus - u_minus;
  const bool coupled = rep.regime.label != RegimeLabel::trivial_decoupled;

  auto cell_spec = [&](double ell, std::vector<double> N_list) {
    CellProblemSpec c;
    c.regime = rep.regime.cell_regime();
    c.ell = ell;
    c.z = z;
    c.d = 2;
    c.p = W.p();
    c.density = W;
    c.N_list = std::move(N_list);
    c.resolution = opts.cell_resolution;
    c.grading = opts.cell_grading;
    c.min_size_factor = opts.cell_min_size_factor;
    c.solver = opts.solver;
    return c;
  };

  PhiTable phi = PhiTable::homogeneous(W.p(), 0.0);
  if (coupled && z.norm() > 0) {
    const auto spec = cell_spec(std::isfinite(rep.regime.ell) ? rep.regime.ell : 1.0, opts.phi_N_list);
    phi = W.is_p_homogeneous() ? PhiTable::from_cell(spec) : PhiTable::from_cell(spec, {z.norm()});
  }
  rep.phi = phi(z);
  const auto relaxed = relaxed_membrane_density(W);
  const auto constant = [&](const Vector& c) {
    return GridField::sample(opts.omega, 1, 1, static_cast<int>(c.size()),
                             [&](double, double) { return c; });
  };
  const double R = coupled ? rep.regime.R() : 0.0;
  const double limit = assemble_limit(constant(u_plus), constant(u_minus), relaxed, R, phi).total();

  const int count = opts.j1 - opts.j0 + 1;
  std::vector<std::optional<TrendRow>> rows(count);
  std::vector<std::string> failures(count);
  run_tasks(count, [&](std::size_t idx) {
    TrendRow row;
    row.j = opts.j0 + static_cast<int>(idx);
    row.eps = schedule.eps.at(row.j);
    row.delta = schedule.delta.at(row.j);
    row.r = schedule.r.at(row.j);
    row.N = row.eps / (2.0 * row.r);
    row.N_cell = std::min(row.N, opts.cell_N_cap);
    row.ell = row.r / row.delta;
    row.R = R;
    row.limit = limit;
    FilmSpec fs = opts.film;
    fs.omega = opts.omega;
    fs.eps = row.eps;
    fs.delta = row.delta;
    fs.r = row.r;
    std::optional<FilmGrid> grid;
    std::vector<double> growths{opts.film.growth};
    for (double g : opts.growth_candidates)
      if (g > opts.film.growth) growths.push_back(g);
    for (double g : growths) {
      fs.growth = g;
      try {
        grid = build_film_grid(fs);
        break;
      } catch (const Error& e) {
        if (std::string(e.what()).rfind("voxel budget exceeded", 0) != 0) throw;
      }
    }
    if (!grid) {
      failures[idx] = "j = " + std::to_string(row.j) + ": geometry not resolvable within the voxel budget";
      return;
    }
    row.growth = fs.growth;
    row.voxels = grid->voxels();
    row.holes = static_cast<int>(grid->cx.size() * grid->cy.size());

    const Regime regime = rep.regime.cell_regime();
    std::optional<CellField> cell;
    if (z.norm() > 0) {
      try {
        cell = solve_cell_field(cell_spec(row.ell, {row.N_cell}), row.N_cell);
      } catch (const Error& e) {
        failures[idx] = "j = " + std::to_string(row.j) + ": cell problem unavailable (" + e.what() + ")";
        return;
      }
      row.cell_phi = cell->solve.phi;
      row.cell_converged = cell->solve.diagnostics.converged;
    }
    auto sampler = [&](const Vector& far, int side) {
      return [&, side](double x, double y, double x3) -> Vector {
        if (!cell || grid->cx.empty() || grid->cy.empty()) return far;
        const double s = std::hypot(x - nearest(grid->cx, x), y - nearest(grid->cy, y)) / row.r;
        if (s >= row.N_cell) return far;
        double t = 0.0;
        if (regime == Regime::finite) t = x3 / row.delta;
        if (regime == Regime::zero) t = x3 / row.r;
        return u_minus + Vector(sample_field(cell->mesh, cell->field, s, t, side));
      };
    };
    const FilmField field =
        make_film_field(*grid, static_cast<int>(z.size()), sampler(u_plus, 1), sampler(u_minus, -1));
    row.film_energy = direct_film_energy(fs, *grid, W, field);
    row.gap = limit > 0 ? std::abs(row.film_energy - limit) / limit : row.film_energy;
    rows[idx] = row;
  });
  for (int i = 0; i < count; ++i) {
    if (!rows[i]) {
      rep.warnings.push_back(failures[i] + "; schedule truncated");
      break;
    }
    rep.rows.push_back(*rows[i]);
  }

  const std::size_t k = rep.rows.size();
  for (std::size_t i = k >= 3 ? k - 2 : 1; i < k; ++i)
    if (rep.rows[i].gap > rep.rows[i - 1].gap * (1 + 1e-12)) rep.monotone = false;
  if (k < 3) {
    rep.pass = false;
    rep.warnings.push_back("fewer than three schedule entries");
  } else if (coupled && limit > 0) {
    rep.pass = rep.monotone && rep.rows.back().gap < 0.15;
  } else {
    // decoupling: the film energy itself falls over the last three entries
    const double peak = std::max_element(rep.rows.begin(), rep.rows.end(), [](const auto& a, const auto& b) {
                          return a.gap < b.gap;
                        })->gap;
    rep.pass = rep.monotone && (rep.rows.back().gap < peak || peak == 0.0);
  }
  return rep;
}

}  // namespace sieve
