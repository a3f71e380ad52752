#pragma once

// State estimators compared by the benchmark: the SDRE Kalman filter, a
// continuous-time EKF and a bootstrap particle filter. The two Kalman-type
// filters are continuous-discrete: each step predicts over dt with RK4 and
// then folds in the sample y_k through the continuous gain, x += dt K (y - C x).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "sdre/error.hpp"
#include "sdre/models.hpp"
#include "sdre/numerics.hpp"
#include "sdre/rng.hpp"

namespace sdre {

/// Per-step event markers, OR-ed into RunResult::flags.
enum EventFlag : std::uint32_t {
    kNoEvent = 0,
    kControllabilityLoss = 1u << 0,
    kObservabilityLoss = 1u << 1,
    kWeightCollapse = 1u << 2,
    kCareFailure = 1u << 3,
    kDiverged = 1u << 4,
};

inline constexpr double kDivergenceLimit = 1e6;

struct NoiseConfig {
    Mat Qd; // process noise (continuous intensity)
    Mat Rn; // measurement noise covariance per sample

    void validate(std::size_t n, std::size_t p, bool require_pd_rn = true) const {
        if (Qd.rows() != static_cast<Eigen::Index>(n) || Qd.cols() != static_cast<Eigen::Index>(n) ||
            Rn.rows() != static_cast<Eigen::Index>(p) || Rn.cols() != static_cast<Eigen::Index>(p))
            throw Error(ErrorCode::ValidationError, "noise covariances do not match the model dimensions");
        if (!Qd.allFinite() || !is_symmetric(Qd, 1e-10) || min_sym_eigenvalue(Qd) < -1e-10)
            throw Error(ErrorCode::ValidationError, "Qd must be symmetric PSD");
        const double rmin = min_sym_eigenvalue(Rn);
        if (!Rn.allFinite() || !is_symmetric(Rn, 1e-10) || (require_pd_rn ? rmin < 1e-10 : rmin < -1e-10))
            throw Error(ErrorCode::ValidationError,
                        require_pd_rn ? "Rn must be symmetric PD" : "Rn must be symmetric PSD");
    }
};

struct KalmanState {
    Vec xhat;
    Mat P;
    Mat gain;                 // last accepted filter gain (n x p); empty before the first step
    std::uint32_t events = 0; // flags raised by the most recent step
};

struct FilterTolerances {
    double care_tol = kDefaultCareTol;
    double rank_tol = kDefaultRankTol;
};

inline bool covariance_ok(const Mat& P, double tol = 1e-10) {
    return P.allFinite() && is_symmetric(P, tol) && min_sym_eigenvalue(P) >= -tol;
}

// ---------------------------------------------------------------------------
// SDRE Kalman filter
// ---------------------------------------------------------------------------

/// One step of the SDRE-KF. The filter lives in the error coordinates of the
/// model's SDC factorisation (e = x - equilibrium); its gain comes from the
/// algebraic filter Riccati equation at the current estimate and is frozen
/// over the step, while the factorised drift A(e) e + B(e) u is re-evaluated
/// at each RK4 stage. If the SDC pair is unobservable the previous gain is
/// reused and kObservabilityLoss is raised; a Riccati failure is handled the
/// same way with kCareFailure.
inline KalmanState sdre_kf_step(const KalmanState& st, const Vec& u, const Vec& y, const ModelDef& model,
                                const NoiseConfig& noise, double dt, const FilterTolerances& tol = {}) {
    if (!(dt > 0.0))
        throw Error(ErrorCode::ValidationError, "dt must be positive");
    const Vec& xr = model.equilibrium;
    const Vec e = st.xhat - xr;
    const SdcMatrices s = model.sdc_at(e);
    const auto n = static_cast<std::size_t>(s.A.rows());

    KalmanState next = st;
    next.events = kNoEvent;

    auto reuse_gain = [&](EventFlag flag, const char* why) {
        next.events |= flag;
        if (st.gain.size() == 0)
            throw Error(flag == kObservabilityLoss ? ErrorCode::ObservabilityLoss : ErrorCode::CareFailure, why);
    };

    if (observability_rank(s.A, s.C, tol.rank_tol) < n) {
        reuse_gain(kObservabilityLoss, "SDC pair unobservable and no previous gain");
    } else {
        try {
            CareSolution sol = solve_filter_care(s.A, s.C, noise.Qd, noise.Rn, tol.care_tol);
            next.P = std::move(sol.P);
            next.gain = std::move(sol.gain);
        } catch (const Error& err) {
            if (err.code() == ErrorCode::BadWeights || err.code() == ErrorCode::ShapeMismatch)
                throw;
            reuse_gain(kCareFailure, err.what());
        }
    }

    const Vec e_pred = rk4_step(
        [&](const Vec& z) -> Vec {
            const SdcMatrices sz = model.sdc_at(z);
            return sz.A * z + sz.B * u;
        },
        e, dt);
    const Vec innovation = (y - s.C * xr) - s.C * e_pred;
    next.xhat = e_pred + dt * next.gain * innovation + xr;
    if (!next.xhat.allFinite() || next.xhat.cwiseAbs().maxCoeff() > kDivergenceLimit)
        throw Error(ErrorCode::NonFiniteState, "SDRE-KF estimate diverged");
    return next;
}

// ---------------------------------------------------------------------------
// Continuous-time EKF
// ---------------------------------------------------------------------------

/// One step of the continuous-time EKF. Noise enters additively, so the noise
/// Jacobians are L = I and M = I and the effective covariances are Qd and Rn.
/// A = df/dx at the estimate and K = P C^T Rn^{-1} are frozen over the step;
/// P follows P' = A P + P A^T - K Rn K^T + Qd.
inline KalmanState ekf_step(const KalmanState& st, const Vec& u, const Vec& y, const ModelDef& model,
                            const NoiseConfig& noise, double dt) {
    if (!(dt > 0.0))
        throw Error(ErrorCode::ValidationError, "dt must be positive");
    const auto n = st.xhat.size();
    const Mat A = model.jacobian_at(st.xhat, u);
    const Mat& C = model.C;
    const Mat L = Mat::Identity(n, n);
    const Mat M = Mat::Identity(noise.Rn.rows(), noise.Rn.rows());
    const Mat Qt = L * noise.Qd * L.transpose();
    const Mat Rt = M * noise.Rn * M.transpose();
    const Mat K = Rt.llt().solve(C * st.P).transpose();
    const Mat KRK = K * Rt * K.transpose();

    KalmanState next = st;
    next.events = kNoEvent;
    next.gain = K;

    const Vec x_pred = rk4_step([&](const Vec& z) { return model.dynamics(z, u); }, st.xhat, dt);

    // RK4 on the vectorised covariance ODE.
    const Vec p0 = Eigen::Map<const Vec>(st.P.data(), n * n);
    const Vec p1 = rk4_step(
        [&](const Vec& pv) -> Vec {
            const Eigen::Map<const Mat> P(pv.data(), n, n);
            Mat dP = A * P + P * A.transpose() - KRK + Qt;
            return Eigen::Map<const Vec>(dP.data(), n * n);
        },
        p0, dt);
    next.P = symmetrize(Eigen::Map<const Mat>(p1.data(), n, n));
    next.xhat = x_pred + dt * K * (y - C * x_pred);

    auto blown = [](const auto& m) { return !m.allFinite() || m.cwiseAbs().maxCoeff() > kDivergenceLimit; };
    if (blown(next.xhat) || blown(next.P))
        throw Error(ErrorCode::NonFiniteState, "EKF state or covariance diverged");
    return next;
}

// ---------------------------------------------------------------------------
// Particle filter
// ---------------------------------------------------------------------------

struct ParticleSet {
    Mat particles;               // n x N, one particle per column
    std::vector<double> weights; // normalised, size N
    RngStream rng;
    std::uint32_t events = 0;

    [[nodiscard]] std::size_t size() const { return weights.size(); }
    [[nodiscard]] Vec mean() const { return particles.rowwise().mean(); }
};

inline ParticleSet pf_init(const Vec& x0_mean, const Mat& P0, std::size_t N, RngStream rng) {
    if (N == 0)
        throw Error(ErrorCode::ValidationError, "particle count must be >= 1");
    if (P0.rows() != x0_mean.size())
        throw Error(ErrorCode::BadCovariance, "P0 does not match the state dimension");
    const Mat L = psd_sqrt(P0);
    ParticleSet ps{Mat(x0_mean.size(), static_cast<Eigen::Index>(N)), std::vector<double>(N, 1.0 / N),
                   std::move(rng)};
    for (std::size_t i = 0; i < N; ++i)
        ps.particles.col(static_cast<Eigen::Index>(i)) = x0_mean + ps.rng.gaussian(L);
    return ps;
}

/// Systematic resampling: N pointers (u0 + i) / N, u0 in [0, 1), walked along
/// the cumulative weights. Returns the selected parent index for each slot.
inline std::vector<std::size_t> systematic_resample(std::span<const double> weights, double u0) {
    const std::size_t N = weights.size();
    std::vector<std::size_t> idx(N);
    double cumulative = weights.empty() ? 0.0 : weights[0];
    std::size_t j = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const double pos = (u0 + static_cast<double>(i)) / static_cast<double>(N);
        while (pos >= cumulative && j + 1 < N)
            cumulative += weights[++j];
        idx[i] = j;
    }
    return idx;
}

/// Normalise log-likelihoods into weights. Returns false (and uniform weights)
/// when every likelihood is below 1e-300.
inline bool normalise_log_weights(std::span<const double> log_q, std::vector<double>& w) {
    const std::size_t N = log_q.size();
    w.assign(N, 1.0 / static_cast<double>(N));
    double max_log = -std::numeric_limits<double>::infinity();
    for (double v : log_q)
        max_log = std::max(max_log, v);
    if (!(max_log >= std::log(1e-300)))
        return false;
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        w[i] = std::exp(log_q[i] - max_log);
        sum += w[i];
    }
    for (double& wi : w)
        wi /= sum;
    return true;
}

/// Bootstrap PF step: Euler prediction x + f(x, u) dt + w with w ~ N(0, Qd dt),
/// Gaussian likelihood of y - C x under Rn, systematic resampling every step.
/// Returns the mean of the resampled particles.
inline Vec pf_step(ParticleSet& ps, const Vec& u, const Vec& y, const ModelDef& model, const NoiseConfig& noise,
                   double dt) {
    if (!(dt > 0.0))
        throw Error(ErrorCode::ValidationError, "dt must be positive");
    const auto N = static_cast<Eigen::Index>(ps.size());
    const Mat Lq = psd_sqrt(noise.Qd * dt);
    const Eigen::LLT<Mat> r_llt(noise.Rn);
    if (r_llt.info() != Eigen::Success)
        throw Error(ErrorCode::BadCovariance, "Rn must be positive definite");
    const double log_norm =
        -0.5 * (static_cast<double>(noise.Rn.rows()) * std::log(2.0 * std::numbers::pi) +
                2.0 * r_llt.matrixL().toDenseMatrix().diagonal().array().log().sum());

    std::vector<double> log_q(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) {
        auto xi = ps.particles.col(i);
        Vec moved = xi + model.dynamics(xi, u) * dt + ps.rng.gaussian(Lq);
        xi = moved;
        const Vec r = y - model.C * moved;
        log_q[static_cast<std::size_t>(i)] = log_norm - 0.5 * r.dot(r_llt.solve(r));
    }

    ps.events = kNoEvent;
    if (!normalise_log_weights(log_q, ps.weights))
        ps.events |= kWeightCollapse;

    const auto parents = systematic_resample(ps.weights, ps.rng.uniform());
    Mat resampled(ps.particles.rows(), N);
    for (Eigen::Index i = 0; i < N; ++i)
        resampled.col(i) = ps.particles.col(static_cast<Eigen::Index>(parents[static_cast<std::size_t>(i)]));
    ps.particles = std::move(resampled);
    std::fill(ps.weights.begin(), ps.weights.end(), 1.0 / static_cast<double>(N));

    Vec est = ps.mean();
    if (!est.allFinite() || est.cwiseAbs().maxCoeff() > kDivergenceLimit)
        throw Error(ErrorCode::NonFiniteState, "particle filter estimate diverged");
    return est;
}

} // namespace sdre
