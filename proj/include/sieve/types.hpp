#ifndef SIEVE_TYPES_HPP
#define SIEVE_TYPES_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sieve {

// Upper bounds on the shape of a deformation gradient. Keeping the maxima
// fixed lets every per-element evaluation live on the stack.
inline constexpr int kMaxRows = 4;
inline constexpr int kMaxCols = 5;

template <typename Scalar>
using GradientT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                                Eigen::ColMajor, kMaxRows, kMaxCols>;
template <typename Scalar>
using SmallVectorT =
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxRows, 1>;

using Gradient = GradientT<double>;
using SmallVector = SmallVectorT<double>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Nodal values of a vector field: one column of m components per node.
using Field = Eigen::MatrixXd;

enum class ErrorKind {
  validation,   // bad input, violated precondition
  domain,       // mathematically undefined request
  numerical,    // a computation could not be resolved
  convergence,  // an iterative method stopped early
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace sieve

#endif  // SIEVE_TYPES_HPP
