#ifndef SIEVE_MESH_HPP
#define SIEVE_MESH_HPP

#include <sieve/energy.hpp>
#include <sieve/types.hpp>

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace sieve {

/// axisymmetric: (s, t) half-plane, s = |x_alpha|, weight |S^{d-1}| s^{d-1}
/// full:         (x1, x2, t), tetrahedra, d = 2 only
/// membrane:     two radial membranes (upper / lower) sharing the hole
enum class MeshMode { axisymmetric, full, membrane };

std::string to_string(MeshMode mode);
MeshMode mesh_mode_from_string(const std::string& name);

/// Truncated cell domain (B_N^d x (-T, T)) minus the slit {1 <= |x| < N, t = 0}.
struct CellDomainSpec {
  int d = 3;
  double N = 4.0;
  double half_height = 1.0;
  double hole_radius = 1.0;
  MeshMode mode = MeshMode::axisymmetric;
  double resolution = 0.25;
  double grading = 1.15;
  double min_size_factor = 1.0 / 32.0;  // smallest element = resolution * factor
  double vertical_resolution = 0.0;     // 0: same as resolution
  bool slit = true;                     // false: plain cylinder, no crack
  int angular_segments = 0;             // full mode; 0 selects from resolution
};

enum class BoundaryTag { lateral_upper, lateral_lower, top_cap, bottom_cap, axis, inner_core };

std::string to_string(BoundaryTag tag);
BoundaryTag boundary_tag_from_string(const std::string& name);

using ShapeGradient = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 3, 4>;

struct SlitMesh {
  CellDomainSpec spec;
  int dim = 2;                       // element (simplex) dimension
  Eigen::MatrixXd nodes;             // dim x num_nodes
  Eigen::MatrixXi elements;          // (dim + 1) x num_elements
  std::vector<ShapeGradient> shape_gradients;  // dim x (dim + 1), constant per element
  Eigen::VectorXd weights;           // measure of each element, angular factor included
  Eigen::VectorXi node_side;         // +1 upper, -1 lower, 0 shared
  Eigen::VectorXi element_side;
  std::vector<std::pair<int, int>> slit_pairs;  // (upper, lower), 1 <= s < N
  std::vector<std::pair<int, int>> rim_pairs;   // (upper, lower) on the lateral rim at t = 0
  std::vector<int> shared_hole_nodes;
  std::map<BoundaryTag, std::vector<int>> tags;

  // tensor axes of the axisymmetric and membrane layouts (point location)
  std::vector<double> radial_axis;
  std::vector<double> vertical_axis;
  Eigen::MatrixXi grid_upper;  // (radial, vertical) -> node, upper copy on t = 0
  Eigen::MatrixXi grid_lower;  // lower copy on t = 0, same as upper elsewhere

  int num_nodes() const { return static_cast<int>(nodes.cols()); }
  int num_elements() const { return static_cast<int>(elements.cols()); }
  double volume() const;
  /// Analytic volume of the continuum (or polygonal, in full mode) domain.
  double analytic_volume() const;
};

/// Node positions from `anchor` towards anchor + direction * length, graded
/// from `h * min_size_factor` up to `h`. Depends on `length` only through
/// truncation, so shorter axes are prefixes of longer ones.
std::vector<double> graded_axis(double anchor, double direction, double length, double h,
                                double grading, double min_size_factor);

SlitMesh build_slit_mesh(const CellDomainSpec& spec);

/// Surface measure of the unit sphere S^{d-1} in R^d.
double sphere_measure(int d);

Gradient element_gradient(const SlitMesh& mesh, const Field& field, int element);

/// Maps an element gradient into the argument of the density: lateral
/// derivatives first, `vertical_scale` times the vertical derivative last.
struct GradientEmbedding {
  MeshMode mode = MeshMode::axisymmetric;
  int density_cols = 1;
  double vertical_scale = 1.0;

  void embed(const Gradient& element_grad, Gradient& F) const;
  /// Pulls dW/dF back to the derivative with respect to the element gradient.
  void pull_back(const Gradient& dW, Gradient& element_grad_derivative) const;
};

GradientEmbedding make_embedding(const SlitMesh& mesh, const EnergyDensity& density,
                                 double vertical_scale);

/// Sum over elements of weight * W((D_alpha zeta | scale D_t zeta)) with the
/// exact (unregularised) density.
double integrate_energy(const SlitMesh& mesh, const EnergyDensity& density, const Field& field,
                        double vertical_scale);

/// Regularised energy; fills `grad` (m x num_nodes) when non-null.
double assemble_energy(const SlitMesh& mesh, const EnergyDensity& density, const Field& field,
                       double vertical_scale, Field* grad);

/// Piecewise-linear interpolant of `field` at (s, t) on an axisymmetric or
/// membrane mesh; `side` selects the sheet at t = 0 (and the membrane).
SmallVector sample_field(const SlitMesh& mesh, const Field& field, double s, double t, int side);

}  // namespace sieve

#endif  // SIEVE_MESH_HPP
