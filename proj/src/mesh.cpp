#include <sieve/mesh.hpp>
#include <sieve/parallel.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace sieve {

namespace {

constexpr double kPi = std::numbers::pi;

double unit_ball_volume(int d) { return sphere_measure(d) / d; }

// Exact integral of s^k over a triangle with vertex abscissae s1, s2, s3.
double triangle_moment(double area, int k, double s1, double s2, double s3) {
  double sum = 0.0;
  for (int a = 0; a <= k; ++a)
    for (int b = 0; a + b <= k; ++b)
      sum += std::pow(s1, a) * std::pow(s2, b) * std::pow(s3, k - a - b);
  double factor = 2.0;
  for (int i = 1; i <= k; ++i) factor *= i;
  for (int i = 1; i <= k + 2; ++i) factor /= i;
  return area * factor * sum;
}

struct Builder {
  SlitMesh& mesh;
  std::vector<double> coords;  // flattened, dim per node
  std::vector<int> side;
  std::vector<int> conn;
  std::vector<int> esides;

  int add_node(std::initializer_list<double> x, int s) {
    coords.insert(coords.end(), x);
    side.push_back(s);
    return static_cast<int>(side.size()) - 1;
  }
  void add_element(std::initializer_list<int> nodes, int s) {
    conn.insert(conn.end(), nodes);
    esides.push_back(s);
  }
  void finish() {
    const int dim = mesh.dim;
    const int nn = static_cast<int>(side.size());
    mesh.nodes = Eigen::Map<Eigen::MatrixXd>(coords.data(), dim, nn);
    mesh.node_side = Eigen::Map<Eigen::VectorXi>(side.data(), nn);
    const int ne = static_cast<int>(esides.size());
    mesh.elements = Eigen::Map<Eigen::MatrixXi>(conn.data(), dim + 1, ne);
    mesh.element_side = Eigen::Map<Eigen::VectorXi>(esides.data(), ne);
  }
};

// Shape gradients and measure of every simplex; the axisymmetric weight
// integrates |S^{d-1}| s^{d-1} exactly.
void compute_geometry(SlitMesh& mesh) {
  const int dim = mesh.dim;
  const int ne = mesh.num_elements();
  const int d = mesh.spec.d;
  const double omega = sphere_measure(d);
  mesh.shape_gradients.resize(ne);
  mesh.weights.resize(ne);
  for (int e = 0; e < ne; ++e) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3> J(dim, dim);
    for (int k = 0; k < dim; ++k)
      J.col(k) = mesh.nodes.col(mesh.elements(k + 1, e)) - mesh.nodes.col(mesh.elements(0, e));
    const double det = J.determinant();
    if (!(std::abs(det) > 1e-300))
      throw Error(ErrorKind::numerical, "degenerate element " + std::to_string(e));
    const auto Jinv = J.inverse();
    ShapeGradient B(dim, dim + 1);
    B.rightCols(dim) = Jinv.transpose();
    B.col(0) = -B.rightCols(dim).rowwise().sum();
    mesh.shape_gradients[e] = B;
    double measure = std::abs(det);
    for (int k = 2; k <= dim; ++k) measure /= k;
    if (mesh.spec.mode == MeshMode::axisymmetric) {
      const auto& n = mesh.elements;
      mesh.weights[e] = omega * triangle_moment(measure, d - 1, mesh.nodes(0, n(0, e)),
                                                mesh.nodes(0, n(1, e)), mesh.nodes(0, n(2, e)));
    } else if (mesh.spec.mode == MeshMode::membrane) {
      const double a = mesh.nodes(0, mesh.elements(0, e));
      const double b = mesh.nodes(0, mesh.elements(1, e));
      mesh.weights[e] = omega * std::abs(std::pow(b, d) - std::pow(a, d)) / d;
    } else {
      mesh.weights[e] = measure;
    }
  }
}

void validate(const CellDomainSpec& spec) {
  if (!(spec.N > spec.hole_radius)) throw Error(ErrorKind::validation, "empty slit");
  if (spec.hole_radius != 1.0)
    throw Error(ErrorKind::validation, "hole_radius is fixed at 1");
  if (spec.d < 2) throw Error(ErrorKind::validation, "lateral dimension d must be >= 2");
  if (spec.mode == MeshMode::full && spec.d != 2)
    throw Error(ErrorKind::validation, "unsupported dimension");
  if (!(spec.resolution > 0) || !(spec.half_height > 0))
    throw Error(ErrorKind::validation, "resolution and half_height must be positive");
  if (spec.resolution > (spec.N - 1.0) / 4.0 * (1 + 1e-12))
    throw Error(ErrorKind::validation, "slit unresolved");
  if (!(spec.grading >= 1.0)) throw Error(ErrorKind::validation, "grading must be >= 1");
  if (!(spec.min_size_factor > 0) || spec.min_size_factor > 1)
    throw Error(ErrorKind::validation, "min_size_factor must lie in (0, 1]");
  if (spec.vertical_resolution < 0)
    throw Error(ErrorKind::validation, "vertical_resolution must be >= 0");
}

std::vector<double> radial_nodes(const CellDomainSpec& spec) {
  auto inner = graded_axis(1.0, -1.0, 1.0, spec.resolution, spec.grading, spec.min_size_factor);
  auto outer =
      graded_axis(1.0, 1.0, spec.N - 1.0, spec.resolution, spec.grading, spec.min_size_factor);
  std::vector<double> s(inner.rbegin(), inner.rend());
  s.front() = 0.0;
  s.insert(s.end(), outer.begin() + 1, outer.end());
  return s;
}

std::vector<double> vertical_nodes(const CellDomainSpec& spec) {
  const double hv = spec.vertical_resolution > 0 ? spec.vertical_resolution : spec.resolution;
  auto up = graded_axis(0.0, 1.0, spec.half_height, hv, spec.grading, spec.min_size_factor);
  std::vector<double> t;
  for (auto it = up.rbegin(); it + 1 != up.rend(); ++it) t.push_back(-*it);
  t.insert(t.end(), up.begin(), up.end());
  return t;
}

bool duplicated(const CellDomainSpec& spec, double s) {
  return spec.slit && s >= spec.hole_radius - 1e-12;
}

void build_axisymmetric(SlitMesh& mesh) {
  const auto& spec = mesh.spec;
  mesh.dim = 2;
  mesh.radial_axis = radial_nodes(spec);
  mesh.vertical_axis = vertical_nodes(spec);
  const auto& S = mesh.radial_axis;
  const auto& T = mesh.vertical_axis;
  const int ns = static_cast<int>(S.size());
  const int nt = static_cast<int>(T.size());
  const int k0 = nt / 2;
  mesh.grid_upper.resize(ns, nt);
  mesh.grid_lower.resize(ns, nt);
  Builder b{mesh, {}, {}, {}, {}};
  for (int k = 0; k < nt; ++k) {
    for (int i = 0; i < ns; ++i) {
      if (k != k0) {
        const int id = b.add_node({S[i], T[k]}, T[k] > 0 ? 1 : -1);
        mesh.grid_upper(i, k) = mesh.grid_lower(i, k) = id;
      } else if (duplicated(spec, S[i])) {
        const int up = b.add_node({S[i], 0.0}, 1);
        const int lo = b.add_node({S[i], 0.0}, -1);
        mesh.grid_upper(i, k) = up;
        mesh.grid_lower(i, k) = lo;
        if (i + 1 < ns)
          mesh.slit_pairs.emplace_back(up, lo);
        else
          mesh.rim_pairs.emplace_back(up, lo);
      } else {
        const int id = b.add_node({S[i], 0.0}, 0);
        mesh.grid_upper(i, k) = mesh.grid_lower(i, k) = id;
        mesh.shared_hole_nodes.push_back(id);
      }
    }
  }
  for (int k = 0; k + 1 < nt; ++k) {
    const bool upper = k >= k0;
    const auto& g = upper ? mesh.grid_upper : mesh.grid_lower;
    for (int i = 0; i + 1 < ns; ++i) {
      const int a = g(i, k), bb = g(i + 1, k), c = g(i + 1, k + 1), d = g(i, k + 1);
      if (upper) {
        b.add_element({a, bb, c}, 1);
        b.add_element({a, c, d}, 1);
      } else {
        b.add_element({a, bb, d}, -1);
        b.add_element({bb, c, d}, -1);
      }
    }
  }
  b.finish();
  auto& tags = mesh.tags;
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    const double s = mesh.nodes(0, n), t = mesh.nodes(1, n);
    const int sd = mesh.node_side[n];
    if (s == S.back()) {
      if (sd >= 0) tags[BoundaryTag::lateral_upper].push_back(n);
      if (sd <= 0) tags[BoundaryTag::lateral_lower].push_back(n);
    }
    if (t == T.back()) tags[BoundaryTag::top_cap].push_back(n);
    if (t == T.front()) tags[BoundaryTag::bottom_cap].push_back(n);
    if (s == 0.0) tags[BoundaryTag::axis].push_back(n);
    if (s <= spec.hole_radius) tags[BoundaryTag::inner_core].push_back(n);
  }
}

void build_membrane(SlitMesh& mesh) {
  const auto& spec = mesh.spec;
  mesh.dim = 1;
  mesh.radial_axis = radial_nodes(spec);
  mesh.vertical_axis = {0.0};
  const auto& S = mesh.radial_axis;
  const int ns = static_cast<int>(S.size());
  mesh.grid_upper.resize(ns, 1);
  mesh.grid_lower.resize(ns, 1);
  Builder b{mesh, {}, {}, {}, {}};
  for (int i = 0; i < ns; ++i) {
    if (duplicated(spec, S[i])) {
      const int up = b.add_node({S[i]}, 1);
      const int lo = b.add_node({S[i]}, -1);
      mesh.grid_upper(i, 0) = up;
      mesh.grid_lower(i, 0) = lo;
      if (i + 1 < ns)
        mesh.slit_pairs.emplace_back(up, lo);
      else
        mesh.rim_pairs.emplace_back(up, lo);
    } else {
      const int id = b.add_node({S[i]}, 0);
      mesh.grid_upper(i, 0) = mesh.grid_lower(i, 0) = id;
      mesh.shared_hole_nodes.push_back(id);
    }
  }
  // Each membrane carries unit thickness; the hole segments appear once per
  // membrane with shared nodes.
  for (int i = 0; i + 1 < ns; ++i) {
    b.add_element({mesh.grid_upper(i, 0), mesh.grid_upper(i + 1, 0)}, 1);
    b.add_element({mesh.grid_lower(i, 0), mesh.grid_lower(i + 1, 0)}, -1);
  }
  b.finish();
  auto& tags = mesh.tags;
  tags[BoundaryTag::lateral_upper].push_back(mesh.grid_upper(ns - 1, 0));
  if (mesh.grid_lower(ns - 1, 0) != mesh.grid_upper(ns - 1, 0))
    tags[BoundaryTag::lateral_lower].push_back(mesh.grid_lower(ns - 1, 0));
  else
    tags[BoundaryTag::lateral_lower].push_back(mesh.grid_upper(ns - 1, 0));
  tags[BoundaryTag::axis].push_back(mesh.grid_upper(0, 0));
  tags[BoundaryTag::top_cap];
  tags[BoundaryTag::bottom_cap];
  for (int n = 0; n < mesh.num_nodes(); ++n)
    if (mesh.nodes(0, n) <= spec.hole_radius) tags[BoundaryTag::inner_core].push_back(n);
}

int default_segments(const CellDomainSpec& spec) {
  if (spec.angular_segments > 0) return spec.angular_segments;
  const int k = static_cast<int>(std::ceil(2.0 * kPi * spec.hole_radius / spec.resolution));
  return std::max(16, 4 * ((k + 3) / 4));
}

// d = 2: polar triangulation of the disk, extruded in t; each prism is split
// into three tetrahedra with diagonals fixed by the global vertex order, which
// keeps shared quadrilateral faces conforming.
void build_full(SlitMesh& mesh) {
  const auto& spec = mesh.spec;
  mesh.dim = 3;
  mesh.radial_axis = radial_nodes(spec);
  mesh.vertical_axis = vertical_nodes(spec);
  const auto& S = mesh.radial_axis;
  const auto& T = mesh.vertical_axis;
  const int ns = static_cast<int>(S.size());
  const int nt = static_cast<int>(T.size());
  const int k0 = nt / 2;
  const int K = default_segments(spec);

  // lateral layout: node 0 at the centre, ring i (1..ns-1) has K nodes
  std::vector<Eigen::Vector2d> lat;
  std::vector<double> lat_s;
  lat.emplace_back(0.0, 0.0);
  lat_s.push_back(0.0);
  for (int i = 1; i < ns; ++i)
    for (int k = 0; k < K; ++k) {
      const double th = 2.0 * kPi * k / K;
      lat.emplace_back(S[i] * std::cos(th), S[i] * std::sin(th));
      lat_s.push_back(S[i]);
    }
  auto ring = [&](int i, int k) { return i == 0 ? 0 : 1 + (i - 1) * K + (k % K); };
  std::vector<std::array<int, 3>> tris;
  for (int k = 0; k < K; ++k) tris.push_back({ring(0, 0), ring(1, k), ring(1, k + 1)});
  for (int i = 1; i + 1 < ns; ++i)
    for (int k = 0; k < K; ++k) {
      const int a = ring(i, k), bb = ring(i + 1, k), c = ring(i + 1, k + 1), d = ring(i, k + 1);
      tris.push_back({a, bb, c});
      tris.push_back({a, c, d});
    }

  const int nl = static_cast<int>(lat.size());
  Eigen::MatrixXi up(nl, nt), lo(nl, nt);
  Builder b{mesh, {}, {}, {}, {}};
  for (int k = 0; k < nt; ++k)
    for (int q = 0; q < nl; ++q) {
      const double x = lat[q].x(), y = lat[q].y();
      if (k != k0) {
        up(q, k) = lo(q, k) = b.add_node({x, y, T[k]}, T[k] > 0 ? 1 : -1);
      } else if (duplicated(spec, lat_s[q])) {
        up(q, k) = b.add_node({x, y, 0.0}, 1);
        lo(q, k) = b.add_node({x, y, 0.0}, -1);
        if (lat_s[q] < S.back())
          mesh.slit_pairs.emplace_back(up(q, k), lo(q, k));
        else
          mesh.rim_pairs.emplace_back(up(q, k), lo(q, k));
      } else {
        up(q, k) = lo(q, k) = b.add_node({x, y, 0.0}, 0);
        mesh.shared_hole_nodes.push_back(up(q, k));
      }
    }
  for (int k = 0; k + 1 < nt; ++k) {
    const bool upper = k >= k0;
    const auto& g = upper ? up : lo;
    for (const auto& tri : tris) {
      std::array<int, 3> v = tri;
      std::sort(v.begin(), v.end());
      const int a = g(v[0], k), bb = g(v[1], k), c = g(v[2], k);
      const int a1 = g(v[0], k + 1), b1 = g(v[1], k + 1), c1 = g(v[2], k + 1);
      const int sd = upper ? 1 : -1;
      b.add_element({a, bb, c, c1}, sd);
      b.add_element({a, bb, b1, c1}, sd);
      b.add_element({a, a1, b1, c1}, sd);
    }
  }
  b.finish();
  auto& tags = mesh.tags;
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    const double s = mesh.nodes.col(n).head<2>().norm(), t = mesh.nodes(2, n);
    const int sd = mesh.node_side[n];
    if (std::abs(s - S.back()) < 1e-12 * S.back()) {
      if (sd >= 0) tags[BoundaryTag::lateral_upper].push_back(n);
      if (sd <= 0) tags[BoundaryTag::lateral_lower].push_back(n);
    }
    if (t == T.back()) tags[BoundaryTag::top_cap].push_back(n);
    if (t == T.front()) tags[BoundaryTag::bottom_cap].push_back(n);
    if (s == 0.0) tags[BoundaryTag::axis].push_back(n);
    if (s <= spec.hole_radius * (1 + 1e-12)) tags[BoundaryTag::inner_core].push_back(n);
  }
}

}  // namespace

std::string to_string(MeshMode mode) {
  switch (mode) {
    case MeshMode::axisymmetric: return "axisymmetric";
    case MeshMode::full: return "full";
    case MeshMode::membrane: return "membrane";
  }
  return "unknown";
}

MeshMode mesh_mode_from_string(const std::string& name) {
  if (name == "axisymmetric") return MeshMode::axisymmetric;
  if (name == "full") return MeshMode::full;
  if (name == "membrane") return MeshMode::membrane;
  throw Error(ErrorKind::validation, "unknown mesh mode '" + name + "'");
}

std::string to_string(BoundaryTag tag) {
  switch (tag) {
    case BoundaryTag::lateral_upper: return "lateral_upper";
    case BoundaryTag::lateral_lower: return "lateral_lower";
    case BoundaryTag::top_cap: return "top_cap";
    case BoundaryTag::bottom_cap: return "bottom_cap";
    case BoundaryTag::axis: return "axis";
    case BoundaryTag::inner_core: return "inner_core";
  }
  return "unknown";
}

BoundaryTag boundary_tag_from_string(const std::string& name) {
  for (auto t : {BoundaryTag::lateral_upper, BoundaryTag::lateral_lower, BoundaryTag::top_cap,
                 BoundaryTag::bottom_cap, BoundaryTag::axis, BoundaryTag::inner_core})
    if (to_string(t) == name) return t;
  throw Error(ErrorKind::validation, "unknown boundary tag '" + name + "'");
}

double sphere_measure(int d) {
  if (d < 1) throw Error(ErrorKind::validation, "sphere dimension must be >= 1");
  return 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d);
}

double SlitMesh::volume() const {
  return deterministic_sum(static_cast<std::size_t>(weights.size()),
                           [&](std::size_t b, std::size_t e) {
                             return weights.segment(b, e - b).sum();
                           });
}

double SlitMesh::analytic_volume() const {
  const double ball = unit_ball_volume(spec.d) * std::pow(spec.N, spec.d);
  switch (spec.mode) {
    case MeshMode::axisymmetric: return ball * 2.0 * spec.half_height;
    case MeshMode::membrane: return 2.0 * ball;
    case MeshMode::full: {
      const int K = default_segments(spec);
      const double polygon = 0.5 * K * spec.N * spec.N * std::sin(2.0 * kPi / K);
      return polygon * 2.0 * spec.half_height;
    }
  }
  return 0.0;
}

std::vector<double> graded_axis(double anchor, double direction, double length, double h,
                                double grading, double min_size_factor) {
  if (!(length > 0) || !(h > 0))
    throw Error(ErrorKind::validation, "axis length and step must be positive");
  // distances from the anchor: graded steps rescaled to a whole number of h,
  // then uniform steps of h
  std::vector<double> pattern;
  double graded_end = 0.0;
  if (grading > 1.0 && min_size_factor < 1.0) {
    std::vector<double> steps;
    for (double st = h * min_size_factor; st < h * (1 - 1e-12); st *= grading) steps.push_back(st);
    double total = 0.0;
    for (double st : steps) total += st;
    graded_end = std::ceil(total / h - 1e-9) * h;
    const double scale = graded_end / total;
    double pos = 0.0;
    for (double st : steps) {
      pos += st * scale;
      pattern.push_back(pos);
    }
    pattern.back() = graded_end;
  }
  std::vector<double> dist{0.0};
  for (double q : pattern) {
    if (q >= length * (1 - 1e-12)) break;
    dist.push_back(q);
  }
  if (graded_end < length * (1 - 1e-12)) {
    for (long k = 1;; ++k) {
      const double q = graded_end + static_cast<double>(k) * h;
      if (q >= length * (1 - 1e-12)) break;
      dist.push_back(q);
    }
  }
  if (dist.size() >= 2) {
    const double last_step = dist.back() - dist[dist.size() - 2];
    if (length - dist.back() < 0.1 * last_step) dist.pop_back();
  }
  dist.push_back(length);
  std::vector<double> nodes(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) nodes[i] = anchor + direction * dist[i];
  return nodes;
}

SlitMesh build_slit_mesh(const CellDomainSpec& spec) {
  validate(spec);
  SlitMesh mesh;
  mesh.spec = spec;
  switch (spec.mode) {
    case MeshMode::axisymmetric: build_axisymmetric(mesh); break;
    case MeshMode::membrane: build_membrane(mesh); break;
    case MeshMode::full: build_full(mesh); break;
  }
  compute_geometry(mesh);
  return mesh;
}

Gradient element_gradient(const SlitMesh& mesh, const Field& field, int element) {
  if (element < 0 || element >= mesh.num_elements())
    throw Error(ErrorKind::validation, "element index " + std::to_string(element) +
                                           " out of range [0, " +
                                           std::to_string(mesh.num_elements()) + ")");
  if (field.cols() != mesh.num_nodes())
    throw Error(ErrorKind::validation, "field has " + std::to_string(field.cols()) +
                                           " nodes, mesh has " + std::to_string(mesh.num_nodes()));
  const auto& B = mesh.shape_gradients[element];
  Gradient G = Gradient::Zero(field.rows(), mesh.dim);
  for (int a = 0; a <= mesh.dim; ++a)
    G.noalias() += field.col(mesh.elements(a, element)) * B.col(a).transpose();
  return G;
}

void GradientEmbedding::embed(const Gradient& G, Gradient& F) const {
  F.setZero(G.rows(), density_cols);
  switch (mode) {
    case MeshMode::axisymmetric:
      F.col(0) = G.col(0);
      F.col(density_cols - 1) = vertical_scale * G.col(1);
      break;
    case MeshMode::full:
      F.col(0) = G.col(0);
      F.col(1) = G.col(1);
      F.col(2) = vertical_scale * G.col(2);
      break;
    case MeshMode::membrane:
      F.col(0) = G.col(0);
      break;
  }
}

void GradientEmbedding::pull_back(const Gradient& dW, Gradient& dG) const {
  switch (mode) {
    case MeshMode::axisymmetric:
      dG.resize(dW.rows(), 2);
      dG.col(0) = dW.col(0);
      dG.col(1) = vertical_scale * dW.col(density_cols - 1);
      break;
    case MeshMode::full:
      dG.resize(dW.rows(), 3);
      dG.col(0) = dW.col(0);
      dG.col(1) = dW.col(1);
      dG.col(2) = vertical_scale * dW.col(2);
      break;
    case MeshMode::membrane:
      dG.resize(dW.rows(), 1);
      dG.col(0) = dW.col(0);
      break;
  }
}

GradientEmbedding make_embedding(const SlitMesh& mesh, const EnergyDensity& density,
                                 double vertical_scale) {
  if (!(vertical_scale > 0) || !std::isfinite(vertical_scale))
    throw Error(ErrorKind::validation, "vertical_scale must be positive and finite");
  const int d = mesh.spec.d;
  GradientEmbedding emb{mesh.spec.mode, density.cols(), vertical_scale};
  switch (mesh.spec.mode) {
    case MeshMode::axisymmetric:
    case MeshMode::full:
      if (density.cols() != d + 1)
        throw Error(ErrorKind::validation,
                    "density has " + std::to_string(density.cols()) +
                        " columns, cell domain needs d + 1 = " + std::to_string(d + 1));
      break;
    case MeshMode::membrane:
      if (density.cols() != d)
        throw Error(ErrorKind::validation,
                    "membrane density has " + std::to_string(density.cols()) +
                        " columns, expected d = " + std::to_string(d));
      break;
  }
  if (mesh.spec.mode != MeshMode::full && !density.is_laterally_isotropic(d))
    throw Error(ErrorKind::validation,
                "axisymmetric reduction requires a laterally isotropic density");
  return emb;
}

double integrate_energy(const SlitMesh& mesh, const EnergyDensity& density, const Field& field,
                        double vertical_scale) {
  if (field.cols() != mesh.num_nodes() || field.rows() != density.rows())
    throw Error(ErrorKind::validation,
                "field shape " + shape_string(field.rows(), field.cols()) +
                    " does not match mesh/density " +
                    shape_string(density.rows(), mesh.num_nodes()));
  const auto emb = make_embedding(mesh, density, vertical_scale);
  return deterministic_sum(mesh.num_elements(), [&](std::size_t b, std::size_t e) {
    double sum = 0.0;
    Gradient F;
    for (std::size_t el = b; el < e; ++el) {
      emb.embed(element_gradient(mesh, field, static_cast<int>(el)), F);
      sum += mesh.weights[el] * density.value(F);
    }
    return sum;
  });
}

double assemble_energy(const SlitMesh& mesh, const EnergyDensity& density, const Field& field,
                       double vertical_scale, Field* grad) {
  if (field.cols() != mesh.num_nodes() || field.rows() != density.rows())
    throw Error(ErrorKind::validation,
                "field shape " + shape_string(field.rows(), field.cols()) +
                    " does not match mesh/density " +
                    shape_string(density.rows(), mesh.num_nodes()));
  const auto emb = make_embedding(mesh, density, vertical_scale);
  const int m = static_cast<int>(field.rows());
  double partial[kReductionChunks] = {};
  std::vector<Field> buffers(grad ? kReductionChunks : 0);
  for_each_chunk(mesh.num_elements(), [&](int c, std::size_t b, std::size_t e) {
    Field* g = nullptr;
    if (grad) {
      buffers[c].setZero(m, mesh.num_nodes());
      g = &buffers[c];
    }
    double sum = 0.0;
    Gradient F, dW, dG;
    for (std::size_t el = b; el < e; ++el) {
      const int ei = static_cast<int>(el);
      emb.embed(element_gradient(mesh, field, ei), F);
      const double w = mesh.weights[ei];
      if (!g) {
        sum += w * density.regularized_value(F);
        continue;
      }
      sum += w * density.value_and_gradient(F, dW);
      emb.pull_back(dW, dG);
      const auto& B = mesh.shape_gradients[ei];
      for (int a = 0; a <= mesh.dim; ++a)
        g->col(mesh.elements(a, ei)) += w * (dG * B.col(a));
    }
    partial[c] = sum;
  });
  double total = 0.0;
  for (double v : partial) total += v;
  if (grad) {
    grad->setZero(m, mesh.num_nodes());
    for (const auto& buf : buffers) *grad += buf;
  }
  return total;
}

SmallVector sample_field(const SlitMesh& mesh, const Field& field, double s, double t, int side) {
  if (mesh.spec.mode == MeshMode::full)
    throw Error(ErrorKind::validation, "sample_field needs an axisymmetric or membrane mesh");
  const auto& S = mesh.radial_axis;
  if (s < 0 || s > S.back() * (1 + 1e-12))
    throw Error(ErrorKind::validation, "sample point outside the truncated cell");
  s = std::min(s, S.back());
  const bool upper = side > 0;
  const auto& grid = upper ? mesh.grid_upper : mesh.grid_lower;
  const int ns = static_cast<int>(S.size());
  const int i = std::clamp(static_cast<int>(std::upper_bound(S.begin(), S.end(), s) - S.begin()) - 1,
                           0, ns - 2);
  const double u = (s - S[i]) / (S[i + 1] - S[i]);
  if (mesh.spec.mode == MeshMode::membrane)
    return (1 - u) * field.col(grid(i, 0)) + u * field.col(grid(i + 1, 0));

  const auto& T = mesh.vertical_axis;
  const int nt = static_cast<int>(T.size());
  const int k0 = nt / 2;
  if (std::abs(t) > T.back() * (1 + 1e-12))
    throw Error(ErrorKind::validation, "sample point outside the truncated cell");
  t = std::clamp(t, T.front(), T.back());
  int k;
  if (t > 0 || (t == 0 && upper)) {
    k = static_cast<int>(std::upper_bound(T.begin(), T.end(), t) - T.begin()) - 1;
    k = std::clamp(k, k0, nt - 2);
  } else {
    k = static_cast<int>(std::lower_bound(T.begin(), T.end(), t) - T.begin()) - 1;
    k = std::clamp(k, 0, k0 - 1);
  }
  const double v = (t - T[k]) / (T[k + 1] - T[k]);
  const auto fa = field.col(grid(i, k)), fb = field.col(grid(i + 1, k));
  const auto fc = field.col(grid(i + 1, k + 1)), fd = field.col(grid(i, k + 1));
  if (k >= k0) {
    if (u >= v) return fa + u * (fb - fa) + v * (fc - fb);
    return fa + v * (fd - fa) + u * (fc - fd);
  }
  if (u + v <= 1) return fa + u * (fb - fa) + v * (fd - fa);
  return fc + (1 - u) * (fd - fc) + (1 - v) * (fb - fc);
}

}  // namespace sieve
