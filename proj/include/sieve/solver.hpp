#ifndef SIEVE_SOLVER_HPP
#define SIEVE_SOLVER_HPP

#include <sieve/energy.hpp>
#include <sieve/mesh.hpp>

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace sieve {

/// Dirichlet data: a constant m-vector per tag; untagged boundaries are
/// natural.
struct BoundaryCondition {
  std::vector<std::pair<BoundaryTag, Vector>> assignments;

  BoundaryCondition& set(BoundaryTag tag, const Vector& value);
  const Vector* find(BoundaryTag tag) const;
};

struct SolveOptions {
  double grad_tol = 1e-8;  // relative to the initial gradient norm
  int max_iters = 4000;    // per continuation stage
  std::vector<double> continuation = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  int memory = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  int refresh_interval = 40;  // iterations between preconditioner updates
  double stage_tol = 1e-5;    // relative tolerance of the intermediate stages

  void validate() const;
};

struct StageDiagnostics {
  double reg_eps = 0.0;
  int iterations = 0;
  double energy = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
  bool monotone = true;
};

struct SolveDiagnostics {
  double final_energy = 0.0;        // unregularised density on the solution
  double regularized_energy = 0.0;  // last stage density on the solution
  double regularization_gap = 0.0;
  double grad_norm = 0.0;
  double initial_grad_norm = 0.0;
  int total_iterations = 0;
  bool converged = false;
  bool monotone = true;
  std::vector<StageDiagnostics> stages;
};

struct SolveResult {
  Field field;
  SolveDiagnostics diagnostics;
};

/// Starting field: upper lateral data above the slit, lower data below, their
/// mean on shared nodes; Dirichlet nodes carry their values.
Field initial_guess(const SlitMesh& mesh, const BoundaryCondition& bc, int m);

SolveResult minimize(const SlitMesh& mesh, const EnergyDensity& density,
                     const BoundaryCondition& bc, double vertical_scale,
                     const SolveOptions& opts = {},
                     const std::optional<Field>& initial = std::nullopt);

/// Worst relative mismatch between the assembled gradient and central
/// differences of the local energy at randomly probed degrees of freedom.
double check_gradient(const SlitMesh& mesh, const EnergyDensity& density, const Field& field,
                      double vertical_scale, int probes, std::uint64_t seed = 1,
                      double step = 1e-5);

}  // namespace sieve

#endif  // SIEVE_SOLVER_HPP
