// linsolve.hpp
//
// Plain (unpreconditioned) conjugate gradient for the symmetric positive
// definite systems V beta = U that every LEQR step reduces to.

#ifndef MEMQUANT_LINSOLVE_HPP
#define MEMQUANT_LINSOLVE_HPP

#include "memquant/core.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace memquant {

struct CgOptions {
  double tol = 1e-10;
  /// 0 selects the default of 10 * dim.
  int max_iter = 0;
  bool record_history = false;
};

struct CgResult {
  Vector x;
  int iterations = 0;
  double residual = 0.0;
  /// Euclidean residual after each iteration, index 0 is the initial one.
  std::vector<double> history;
};

/// Solves v x = u. Stops once ||v x - u||_2 <= tol * (1 + ||u||_2).
/// Throws NotSymmetric when v is asymmetric beyond 1e-10 relative and
/// NotConverged when the iteration budget runs out.
CgResult cg_solve(const Matrix& v, const Vector& u, const CgOptions& opts = {},
                  const std::optional<Vector>& x0 = std::nullopt);

/// Operator form: `apply(d, out)` must write v * d into out. Symmetry is the
/// caller's responsibility.
using LinearOperator = std::function<void(const Vector&, Vector&)>;

CgResult cg_solve_operator(const LinearOperator& apply, const Vector& u, const CgOptions& opts = {},
                           const std::optional<Vector>& x0 = std::nullopt);

bool is_symmetric(const Matrix& v, double rel_tol = 1e-10);

}  // namespace memquant

#endif  // MEMQUANT_LINSOLVE_HPP
