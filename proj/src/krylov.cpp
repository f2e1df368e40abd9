#include "dsre/krylov.hpp"

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "dsre/error.hpp"

namespace dsre {

namespace {

using Vec = Eigen::VectorXd;

void apply(const LinearMap& op, const Vec& in, Vec& out) {
  op(std::span<const double>(in.data(), static_cast<std::size_t>(in.size())),
     std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
}

}  // namespace

KrylovStats gmres(const LinearMap& A, const LinearMap& precond, std::span<const double> b_in, std::span<double> x_io,
                  double tol, int max_iter, int restart) {
  if (b_in.size() != x_io.size()) throw PreconditionError("gmres: size mismatch");
  if (tol <= 0 || max_iter < 1 || restart < 1) throw PreconditionError("gmres: invalid options");
  const auto n = static_cast<Eigen::Index>(b_in.size());
  const Eigen::Map<const Vec> b(b_in.data(), n);
  Eigen::Map<Vec> x(x_io.data(), n);

  KrylovStats st;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    x.setZero();
    st.converged = true;
    return st;
  }

  const int m = std::min<int>(restart, static_cast<int>(n));
  Eigen::MatrixXd V(n, m + 1);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
  Vec cs(m), sn(m), gvec(m + 1);
  Vec r(n), w(n), z(n), tmp(n);

  auto true_residual = [&]() {
    apply(A, x, tmp);
    r = b - tmp;
    return r.norm() / bnorm;
  };

  double rel = true_residual();
  while (st.iterations < max_iter) {
    if (rel <= tol) break;
    const double beta = r.norm();
    V.col(0) = r / beta;
    gvec.setZero();
    gvec(0) = beta;
    H.setZero();
    int j = 0;
    for (; j < m && st.iterations < max_iter; ++j) {
      ++st.iterations;
      apply(precond, V.col(j), z);
      apply(A, z, w);
      // Modified Gram-Schmidt with one reorthogonalisation pass.
      for (int pass = 0; pass < 2; ++pass) {
        for (int i = 0; i <= j; ++i) {
          const double h = V.col(i).dot(w);
          H(i, j) += h;
          w -= h * V.col(i);
        }
      }
      H(j + 1, j) = w.norm();
      if (H(j + 1, j) > 0) V.col(j + 1) = w / H(j + 1, j);
      for (int i = 0; i < j; ++i) {
        const double t = cs(i) * H(i, j) + sn(i) * H(i + 1, j);
        H(i + 1, j) = -sn(i) * H(i, j) + cs(i) * H(i + 1, j);
        H(i, j) = t;
      }
      const double den = std::hypot(H(j, j), H(j + 1, j));
      cs(j) = den > 0 ? H(j, j) / den : 1.0;
      sn(j) = den > 0 ? H(j + 1, j) / den : 0.0;
      H(j, j) = den;
      H(j + 1, j) = 0.0;
      gvec(j + 1) = -sn(j) * gvec(j);
      gvec(j) = cs(j) * gvec(j);
      if (std::abs(gvec(j + 1)) / bnorm <= tol || den == 0.0) {
        ++j;
        break;
      }
    }
    // Back-substitution on the j x j triangle, then x += M^{-1} V y.
    Vec y = H.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(gvec.head(j));
    tmp = V.leftCols(j) * y;
    apply(precond, tmp, z);
    x += z;
    ++st.restarts;
    const double prev = rel;
    rel = true_residual();
    // Stagnation: a full cycle that did not reduce the true residual.
    if (rel > 0.999 * prev && rel > tol) break;
  }
  st.relative_residual = rel;
  st.converged = rel <= tol;
  return st;
}

}  // namespace dsre
