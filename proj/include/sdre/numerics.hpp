#pragma once

// Dense small-matrix kernels used by the controller and the estimators:
// continuous algebraic Riccati / Lyapunov solvers, rank tests, RK4 and a
// central-difference Jacobian. Everything here is a pure function.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "sdre/error.hpp"

namespace sdre {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kDefaultCareTol = 1e-9;
inline constexpr double kDefaultRankTol = 1e-9;
inline constexpr double kSubspaceCondLimit = 1e10;

struct CareProblem {
    Mat A; // n x n drift
    Mat B; // n x m input (or output, for the dual filter problem)
    Mat Q; // n x n, symmetric PSD
    Mat R; // m x m, symmetric PD
};

struct CareSolution {
    Mat P;
    double residual = 0.0;
    Mat gain;
};

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

inline double inf_norm(const Mat& M) {
    return M.size() == 0 ? 0.0 : M.cwiseAbs().rowwise().sum().maxCoeff();
}

inline bool is_symmetric(const Mat& M, double rel_tol = 1e-12) {
    if (M.rows() != M.cols())
        return false;
    return inf_norm(M - M.transpose()) <= rel_tol * (1.0 + inf_norm(M));
}

inline Mat symmetrize(const Mat& M) { return 0.5 * (M + M.transpose()); }

/// Smallest eigenvalue of the symmetric part of M.
inline double min_sym_eigenvalue(const Mat& M) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(M), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double max_real_eigenvalue(const Mat& A) {
    Eigen::EigenSolver<Mat> es(A, false);
    return es.eigenvalues().real().maxCoeff();
}

inline bool is_hurwitz(const Mat& A, double margin = 1e-12) { return max_real_eigenvalue(A) < -margin; }

/// Factor L with L * L^T == M for a symmetric PSD M (eigen-based, so a
/// singular or zero covariance is fine). Throws BadCovariance otherwise.
inline Mat psd_sqrt(const Mat& M, double neg_tol = 1e-10) {
    if (M.rows() != M.cols() || !M.allFinite() || !is_symmetric(M, 1e-10))
        throw Error(ErrorCode::BadCovariance, "covariance must be a finite symmetric matrix");
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(M));
    const Vec& lambda = es.eigenvalues();
    if (lambda.size() > 0 && lambda.minCoeff() < -neg_tol * (1.0 + inf_norm(M)))
        throw Error(ErrorCode::BadCovariance, "covariance is not positive semidefinite");
    Vec root = lambda.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

// ---------------------------------------------------------------------------
// Riccati / Lyapunov
// ---------------------------------------------------------------------------

/// A^T P + P A - P B R^{-1} B^T P + Q
inline Mat care_lhs(const CareProblem& pb, const Mat& P) {
    Mat RinvBt = pb.R.llt().solve(pb.B.transpose());
    return pb.A.transpose() * P + P * pb.A - P * pb.B * RinvBt * P + pb.Q;
}

inline double care_residual(const CareProblem& pb, const Mat& P) { return care_lhs(pb, P).norm(); }

inline void validate(const CareProblem& pb) {
    const auto n = pb.A.rows();
    const auto m = pb.B.cols();
    if (n == 0 || pb.A.cols() != n || pb.B.rows() != n || m == 0 || pb.Q.rows() != n || pb.Q.cols() != n ||
        pb.R.rows() != m || pb.R.cols() != m)
        throw Error(ErrorCode::ShapeMismatch, "CARE dimensions are inconsistent");
    if (!pb.A.allFinite() || !pb.B.allFinite() || !pb.Q.allFinite() || !pb.R.allFinite())
        throw Error(ErrorCode::BadWeights, "CARE data must be finite");
    if (!is_symmetric(pb.Q, 1e-10) || min_sym_eigenvalue(pb.Q) < -1e-10)
        throw Error(ErrorCode::BadWeights, "Q must be symmetric positive semidefinite");
    if (!is_symmetric(pb.R, 1e-10) || min_sym_eigenvalue(pb.R) < 1e-10)
        throw Error(ErrorCode::BadWeights, "R must be symmetric positive definite");
}

/// Solves A^T X + X A + Q = 0 by Kronecker vectorisation. Intended for the
/// n <= 8 systems this library targets; cost is O(n^6).
inline Mat solve_lyapunov(const Mat& A, const Mat& Q) {
    const auto n = A.rows();
    if (A.cols() != n || Q.rows() != n || Q.cols() != n)
        throw Error(ErrorCode::ShapeMismatch, "Lyapunov dimensions are inconsistent");
    if (!is_hurwitz(A))
        throw Error(ErrorCode::NotHurwitz, "A has an eigenvalue with real part >= -1e-12");

    const Mat I = Mat::Identity(n, n);
    // Column-major vec: vec(A^T X) = (I kron A^T) vec(X), vec(X A) = (A^T kron I) vec(X).
    Mat K(n * n, n * n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            K.block(i * n, j * n, n, n) = I(i, j) * A.transpose() + A(j, i) * I;

    Vec rhs = -Eigen::Map<const Vec>(Q.data(), n * n);
    Vec x = K.fullPivLu().solve(rhs);
    Mat X = Eigen::Map<Mat>(x.data(), n, n);
    return symmetrize(X);
}

namespace detail {

inline Mat gain_from(const CareProblem& pb, const Mat& P) { return pb.R.llt().solve(pb.B.transpose() * P); }

// Bass's construction: for a controllable pair, K = B^T Z^{-1} with
// (A + bI) Z + Z (A + bI)^T = 2 B B^T stabilises A - B K.
inline bool bass_initial_gain(const CareProblem& pb, Mat& K) {
    const auto n = pb.A.rows();
    const double beta = std::max(0.0, max_real_eigenvalue(pb.A)) + 1.0 + inf_norm(pb.A);
    const Mat M = -(pb.A + beta * Mat::Identity(n, n));
    Mat Z;
    try {
        Z = solve_lyapunov(M.transpose(), 2.0 * pb.B * pb.B.transpose());
    } catch (const Error&) {
        return false;
    }
    Eigen::FullPivLU<Mat> lu(Z);
    if (!lu.isInvertible())
        return false;
    K = pb.B.transpose() * lu.inverse();
    return K.allFinite() && is_hurwitz(pb.A - pb.B * K);
}

// Newton-Kleinman from a stabilising gain. Returns the best P found.
inline bool newton_kleinman(const CareProblem& pb, Mat K, double tol, Mat& P_out, double& res_out,
                            int max_iter = 60) {
    bool improved = false;
    for (int it = 0; it < max_iter; ++it) {
        const Mat Ak = pb.A - pb.B * K;
        Mat P;
        try {
            P = solve_lyapunov(Ak, pb.Q + K.transpose() * pb.R * K);
        } catch (const Error&) {
            break;
        }
        const double res = care_residual(pb, P);
        if (!std::isfinite(res))
            break;
        if (res < res_out) {
            P_out = P;
            res_out = res;
            improved = true;
        }
        if (res <= tol * 1e-2)
            break;
        K = gain_from(pb, P);
    }
    return improved;
}

} // namespace detail

/// Stabilising solution of A^T P + P A - P B R^{-1} B^T P + Q = 0.
///
/// Primary path: stable invariant subspace of the Hamiltonian
/// [[A, -B R^{-1} B^T], [-Q, -A^T]]. When the eigenvector block X1 is
/// ill-conditioned, or the subspace answer misses `tol`, Newton-Kleinman
/// iteration takes over (seeded from the subspace gain when it stabilises,
/// otherwise from Bass's gain).
inline CareSolution solve_care(const CareProblem& pb, double tol = kDefaultCareTol) {
    validate(pb);
    const auto n = pb.A.rows();

    const Mat S = pb.B * pb.R.llt().solve(pb.B.transpose());
    Mat H(2 * n, 2 * n);
    H << pb.A, -S, -pb.Q, -pb.A.transpose();

    Eigen::EigenSolver<Mat> es(H);
    if (es.info() != Eigen::Success)
        throw Error(ErrorCode::SingularSubspace, "Hamiltonian eigendecomposition failed");

    const double axis_tol = 1e-11 * (1.0 + inf_norm(H));
    Eigen::MatrixXcd X(2 * n, n);
    Eigen::Index stable = 0;
    for (Eigen::Index i = 0; i < 2 * n; ++i) {
        if (es.eigenvalues()(i).real() < -axis_tol) {
            if (stable == n) {
                stable = n + 1;
                break;
            }
            X.col(stable++) = es.eigenvectors().col(i);
        }
    }
    if (stable < n)
        throw Error(ErrorCode::NotStabilizable, "Hamiltonian has fewer than n stable eigenvalues");

    Mat best_P;
    double best_res = std::numeric_limits<double>::infinity();

    if (stable == n) {
        const Eigen::MatrixXcd X1 = X.topRows(n);
        const Eigen::MatrixXcd X2 = X.bottomRows(n);
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(X1);
        const auto& sv = svd.singularValues();
        const double cond = sv(n - 1) > 0.0 ? sv(0) / sv(n - 1) : std::numeric_limits<double>::infinity();
        if (cond <= kSubspaceCondLimit) {
            // P = X2 X1^{-1}  <=>  X1^T P^T = X2^T
            Eigen::MatrixXcd Pc = X1.transpose().partialPivLu().solve(X2.transpose()).transpose();
            Mat P = symmetrize(Pc.real());
            const double res = care_residual(pb, P);
            if (P.allFinite() && std::isfinite(res)) {
                best_P = P;
                best_res = res;
            }
        }
    }

    if (!(best_res <= tol)) {
        Mat K0;
        bool seeded = false;
        if (best_P.size() != 0) {
            K0 = detail::gain_from(pb, best_P);
            seeded = K0.allFinite() && is_hurwitz(pb.A - pb.B * K0);
        }
        if (!seeded)
            seeded = detail::bass_initial_gain(pb, K0);
        if (seeded)
            detail::newton_kleinman(pb, K0, tol, best_P, best_res);
    }

    if (best_P.size() == 0 || !(best_res <= tol)) {
        char msg[160];
        std::snprintf(msg, sizeof msg,
                      "neither the Hamiltonian subspace nor Newton-Kleinman reached residual %.3g (best %.3g)", tol,
                      best_res);
        throw Error(ErrorCode::SingularSubspace, msg);
    }

    best_P = symmetrize(best_P);
    if (!(min_sym_eigenvalue(best_P) > 0.0))
        throw Error(ErrorCode::SingularSubspace, "Riccati solution is not positive definite");

    CareSolution sol;
    sol.P = best_P;
    sol.residual = best_res;
    sol.gain = detail::gain_from(pb, sol.P);
    return sol;
}

/// Filter form P A^T + A P - P C^T Rn^{-1} C P + Qn = 0, solved by duality.
/// `gain` holds the Kalman gain P C^T Rn^{-1} (n x p).
inline CareSolution solve_filter_care(const Mat& A, const Mat& C, const Mat& Qn, const Mat& Rn,
                                      double tol = kDefaultCareTol) {
    CareSolution sol = solve_care({A.transpose(), C.transpose(), Qn, Rn}, tol);
    sol.gain = Rn.llt().solve(C * sol.P).transpose();
    return sol;
}

// ---------------------------------------------------------------------------
// Rank tests
// ---------------------------------------------------------------------------

inline Mat controllability_matrix(const Mat& A, const Mat& B) {
    const auto n = A.rows();
    const auto m = B.cols();
    Mat W(n, n * m);
    Mat blk = B;
    for (Eigen::Index k = 0; k < n; ++k) {
        W.middleCols(k * m, m) = blk;
        blk = A * blk;
    }
    return W;
}

inline Mat observability_matrix(const Mat& A, const Mat& C) {
    return controllability_matrix(A.transpose(), C.transpose()).transpose();
}

/// Count of singular values above tol * sigma_max.
inline std::size_t numerical_rank(const Mat& M, double tol = kDefaultRankTol) {
    if (M.size() == 0)
        return 0;
    Eigen::JacobiSVD<Mat> svd(M);
    const Vec& sv = svd.singularValues();
    const double smax = sv.size() > 0 ? sv(0) : 0.0;
    if (!(smax > 0.0))
        return 0;
    return static_cast<std::size_t>((sv.array() > tol * smax).count());
}

inline std::size_t controllability_rank(const Mat& A, const Mat& B, double tol = kDefaultRankTol) {
    return numerical_rank(controllability_matrix(A, B), tol);
}

inline std::size_t observability_rank(const Mat& A, const Mat& C, double tol = kDefaultRankTol) {
    return numerical_rank(observability_matrix(A, C), tol);
}

// ---------------------------------------------------------------------------
// Integration and differentiation
// ---------------------------------------------------------------------------

/// Classical fourth-order Runge-Kutta step of x' = f(x).
template <typename F>
Vec rk4_step(F&& f, const Vec& x, double dt) {
    if (!(dt > 0.0))
        throw Error(ErrorCode::ValidationError, "rk4_step requires dt > 0");
    auto eval = [&](const Vec& at) {
        Vec d = f(at);
        if (!d.allFinite())
            throw Error(ErrorCode::NonFiniteDerivative, "derivative is not finite");
        return d;
    };
    const Vec k1 = eval(x);
    const Vec k2 = eval(x + 0.5 * dt * k1);
    const Vec k3 = eval(x + 0.5 * dt * k2);
    const Vec k4 = eval(x + dt * k3);
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Central-difference Jacobian; the step for coordinate i is eps * max(1, |x_i|).
template <typename F>
Mat jacobian_fd(F&& f, const Vec& x, double eps = 1e-6) {
    if (!(eps > 0.0))
        throw Error(ErrorCode::ValidationError, "jacobian_fd requires eps > 0");
    const Vec f0 = f(x);
    if (!f0.allFinite())
        throw Error(ErrorCode::NonFiniteDerivative, "function value is not finite");
    Mat J(f0.size(), x.size());
    Vec xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = eps * std::max(1.0, std::abs(x(i)));
        xp(i) = x(i) + h;
        const Vec fp = f(xp);
        xp(i) = x(i) - h;
        const Vec fm = f(xp);
        xp(i) = x(i);
        if (!fp.allFinite() || !fm.allFinite())
            throw Error(ErrorCode::NonFiniteDerivative, "function value is not finite");
        J.col(i) = (fp - fm) / (2.0 * h);
    }
    return J;
}

} // namespace sdre
