#include "memquant/linsolve.hpp"

#include <cmath>
#include <sstream>

namespace memquant {

bool is_symmetric(const Matrix& v, double rel_tol) {
  if (v.rows() != v.cols()) return false;
  const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
  return (v - v.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

CgResult cg_solve_operator(const LinearOperator& apply, const Vector& u, const CgOptions& opts,
                           const std::optional<Vector>& x0) {
  const auto dim = u.size();
  if (!(opts.tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "cg tolerance must be positive");
  const int max_iter = opts.max_iter > 0 ? opts.max_iter : static_cast<int>(std::max<Eigen::Index>(10 * dim, 1));
  if (x0 && x0->size() != dim) throw Error(ErrorKind::DimensionMismatch, "cg starting point has the wrong size");

  CgResult out;
  out.x = x0 ? *x0 : Vector::Zero(dim);
  const double threshold = opts.tol * (1.0 + u.norm());

  Vector vd(dim);
  apply(out.x, vd);
  Vector r = u - vd;
  Vector d = r;
  double rr = r.squaredNorm();
  out.residual = std::sqrt(rr);
  if (opts.record_history) out.history.push_back(out.residual);

  int k = 0;
  while (out.residual > threshold) {
    if (k == max_iter) {
      std::ostringstream msg;
      msg << "conjugate gradient stopped after " << k << " iterations with residual " << out.residual;
      throw Error(ErrorKind::NotConverged, msg.str());
    }
    ++k;
    apply(d, vd);
    const double curvature = d.dot(vd);
    if (!(curvature > 0.0) || !std::isfinite(curvature)) {
      std::ostringstream msg;
      msg << "nonpositive curvature " << curvature << " at iteration " << k;
      throw Error(ErrorKind::NotConverged, msg.str());
    }
    const double alpha = rr / curvature;
    out.x.noalias() += alpha * d;
    r.noalias() -= alpha * vd;
    const double rr_next = r.squaredNorm();
    const double gamma = rr_next / rr;
    d = r + gamma * d;
    rr = rr_next;
    out.residual = std::sqrt(rr);
    if (out.residual <= threshold) {
      // The recurrence residual drifts from u - v x in floating point; confirm
      // with the true residual and restart from it when they disagree.
      apply(out.x, vd);
      r = u - vd;
      rr = r.squaredNorm();
      out.residual = std::sqrt(rr);
      d = r;
    }
    if (opts.record_history) out.history.push_back(out.residual);
  }
  out.iterations = k;
  return out;
}

CgResult cg_solve(const Matrix& v, const Vector& u, const CgOptions& opts, const std::optional<Vector>& x0) {
  if (v.rows() != v.cols() || v.rows() != u.size()) {
    throw Error(ErrorKind::DimensionMismatch, "cg system dimensions disagree");
  }
  if (!is_symmetric(v)) throw Error(ErrorKind::NotSymmetric, "cg requires a symmetric matrix");
  return cg_solve_operator([&v](const Vector& d, Vector& out) { out.noalias() = v * d; }, u, opts, x0);
}

}  // namespace memquant
