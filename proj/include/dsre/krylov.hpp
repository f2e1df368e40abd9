#pragma once

#include <functional>
#include <span>

namespace dsre {

/// y = Op(x); both spans have the system size.
using LinearMap = std::function<void(std::span<const double>, std::span<double>)>;

struct KrylovStats {
  int iterations = 0;
  int restarts = 0;
  double relative_residual = 0.0;  ///< true residual ||b - A x|| / ||b||, recomputed at exit
  bool converged = false;
};

/// Right-preconditioned restarted GMRES: solves A M^{-1} y = b, x = x0 + M^{-1} y.
/// `x` holds the initial guess on entry and the iterate on exit.
KrylovStats gmres(const LinearMap& A, const LinearMap& precond, std::span<const double> b, std::span<double> x,
                  double tol, int max_iter, int restart);

}  // namespace dsre
