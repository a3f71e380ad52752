#pragma once

// Closed-loop stochastic simulation and the Monte-Carlo batch runner.
//
// Step k: y_k = C x_k + v_k; the estimator consumes (u_{k-1}, y_k) to give
// xhat_k; the controller maps xhat_k (or x_k with no estimator) to u_k; the
// plant advances by RK4 under zero-order-hold u_k plus a process-noise
// increment w ~ N(0, Qd dt).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "sdre/control.hpp"
#include "sdre/error.hpp"
#include "sdre/estimators.hpp"
#include "sdre/models.hpp"
#include "sdre/rng.hpp"

namespace sdre {

enum class EstimatorKind { SdreKf, Ekf, Pf, None };

constexpr std::string_view to_string(EstimatorKind k) {
    switch (k) {
    case EstimatorKind::SdreKf: return "sdre-kf";
    case EstimatorKind::Ekf: return "ekf";
    case EstimatorKind::Pf: return "pf";
    case EstimatorKind::None: return "none";
    }
    return "none";
}

constexpr std::string_view display_name(EstimatorKind k) {
    switch (k) {
    case EstimatorKind::SdreKf: return "SDRE-KF";
    case EstimatorKind::Ekf: return "EKF";
    case EstimatorKind::Pf: return "PF";
    case EstimatorKind::None: return "none";
    }
    return "none";
}

inline EstimatorKind parse_estimator_kind(std::string_view s) {
    if (s == "sdre-kf" || s == "sdre_kf" || s == "sdrekf")
        return EstimatorKind::SdreKf;
    if (s == "ekf")
        return EstimatorKind::Ekf;
    if (s == "pf")
        return EstimatorKind::Pf;
    if (s == "none")
        return EstimatorKind::None;
    throw Error(ErrorCode::ValidationError, "unknown estimator '" + std::string(s) + "'");
}

struct SimConfig {
    std::string model_name = "pendulum";
    ModelParams params;
    EstimatorKind estimator = EstimatorKind::SdreKf;
    double dt = 0.01;
    double horizon = 10.0;
    std::size_t n_runs = 30;
    std::uint64_t seed = 0;
    NoiseConfig noise;       // covariances the estimators assume
    NoiseConfig truth_noise; // covariances injected into plant and sensor
    // Per-filter overrides of `noise`; an empty matrix inherits from `noise`.
    NoiseConfig sdre_kf_noise;
    NoiseConfig ekf_noise;
    ControllerConfig controller;
    std::size_t pf_particles = 500;
    Vec x0;
    Vec x0_hat;
    Mat P0;
    /// Draw the true initial state from N(x0, P0) instead of using x0 exactly.
    bool random_x0 = false;
    /// Feed the controller the true state even when an estimator runs
    /// (estimates are still produced and scored).
    bool control_from_truth = false;

    [[nodiscard]] NoiseConfig assumed_noise(EstimatorKind kind) const {
        const NoiseConfig* o = kind == EstimatorKind::SdreKf ? &sdre_kf_noise
                               : kind == EstimatorKind::Ekf  ? &ekf_noise
                                                             : nullptr;
        if (!o)
            return noise;
        return {o->Qd.size() != 0 ? o->Qd : noise.Qd, o->Rn.size() != 0 ? o->Rn : noise.Rn};
    }

    [[nodiscard]] std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon / dt)); }

    void validate() const {
        const ModelDef md = make_model(model_name, params);
        const auto n = md.n_states;
        if (!(dt > 0.0) || !std::isfinite(dt))
            throw Error(ErrorCode::ValidationError, "dt must be > 0");
        if (!(horizon >= dt) || !std::isfinite(horizon))
            throw Error(ErrorCode::ValidationError, "horizon must be >= dt");
        if (n_runs < 1)
            throw Error(ErrorCode::ValidationError, "runs must be >= 1");
        if (estimator == EstimatorKind::Pf && pf_particles < 1)
            throw Error(ErrorCode::ValidationError, "particles must be >= 1 for the particle filter");
        if (x0.size() != static_cast<Eigen::Index>(n) || x0_hat.size() != static_cast<Eigen::Index>(n))
            throw Error(ErrorCode::ValidationError, "x0 / x0_hat must have one entry per state");
        if (!x0.allFinite() || !x0_hat.allFinite())
            throw Error(ErrorCode::ValidationError, "x0 / x0_hat must be finite");
        if (P0.rows() != static_cast<Eigen::Index>(n) || P0.cols() != static_cast<Eigen::Index>(n) ||
            !covariance_ok(P0))
            throw Error(ErrorCode::ValidationError, "P0 must be an n x n symmetric PSD matrix");
        for (EstimatorKind k : {EstimatorKind::SdreKf, EstimatorKind::Ekf, EstimatorKind::Pf})
            assumed_noise(k).validate(n, md.n_outputs, true);
        truth_noise.validate(n, md.n_outputs, false);
        controller.validate(n, md.n_inputs);
    }
};

struct RunResult {
    std::size_t run_index = 0;
    EstimatorKind estimator = EstimatorKind::None;
    std::vector<double> times;
    std::vector<Vec> x_true;
    std::vector<Vec> x_hat;
    std::vector<Vec> y;
    std::vector<Vec> u;
    std::vector<std::uint32_t> flags;
    double accumulated_cost = 0.0;
    bool diverged = false;
    std::string failure;

    [[nodiscard]] std::uint32_t all_flags() const {
        std::uint32_t f = 0;
        for (auto v : flags)
            f |= v;
        return f;
    }
};

struct RunMetrics {
    Vec mse;
    Vec mae;
    bool diverged = false;
};

struct BatchMetrics {
    EstimatorKind estimator = EstimatorKind::None;
    std::size_t n_runs = 0;     // runs aggregated
    std::size_t n_excluded = 0; // diverged runs left out of the aggregate
    Vec mse;
    Vec mae;
    std::vector<RunMetrics> per_run;
};

namespace detail {

inline bool blown(const Vec& v) { return !v.allFinite() || v.cwiseAbs().maxCoeff() > kDivergenceLimit; }

// Estimator wrapper owned by one run.
class RunEstimator {
public:
    RunEstimator(const SimConfig& cfg, std::size_t run_index)
        : kind_(cfg.estimator), noise_(cfg.assumed_noise(cfg.estimator)) {
        switch (kind_) {
        case EstimatorKind::SdreKf:
        case EstimatorKind::Ekf: kalman_ = KalmanState{cfg.x0_hat, cfg.P0, Mat(), 0}; break;
        case EstimatorKind::Pf:
            pf_.emplace(pf_init(cfg.x0_hat, cfg.P0, cfg.pf_particles,
                                RngStream(cfg.seed, run_index, StreamRole::Estimator)));
            break;
        case EstimatorKind::None: break;
        }
    }

    [[nodiscard]] Vec initial_estimate(const Vec& x_true) const {
        switch (kind_) {
        case EstimatorKind::SdreKf:
        case EstimatorKind::Ekf: return kalman_.xhat;
        case EstimatorKind::Pf: return pf_->mean();
        case EstimatorKind::None: return x_true;
        }
        return x_true;
    }

    Vec step(const Vec& u, const Vec& y, const Vec& x_true, const ModelDef& model, const SimConfig& cfg,
             std::uint32_t& flags) {
        switch (kind_) {
        case EstimatorKind::SdreKf:
            kalman_ = sdre_kf_step(kalman_, u, y, model, noise_, cfg.dt,
                                   {cfg.controller.care_tol, cfg.controller.rank_tol});
            flags |= kalman_.events;
            return kalman_.xhat;
        case EstimatorKind::Ekf:
            kalman_ = ekf_step(kalman_, u, y, model, noise_, cfg.dt);
            return kalman_.xhat;
        case EstimatorKind::Pf: {
            Vec est = pf_step(*pf_, u, y, model, noise_, cfg.dt);
            flags |= pf_->events;
            return est;
        }
        case EstimatorKind::None: return x_true;
        }
        return x_true;
    }

    [[nodiscard]] const KalmanState& kalman() const { return kalman_; }
    [[nodiscard]] const ParticleSet* particles() const { return pf_ ? &*pf_ : nullptr; }

private:
    EstimatorKind kind_;
    NoiseConfig noise_;
    KalmanState kalman_;
    std::optional<ParticleSet> pf_;
};

} // namespace detail

/// Optional per-step hook used by the invariant suite; called after the
/// estimator update with the estimator's internal state.
using StepObserver = std::function<void(std::size_t step, const detail::RunEstimator&)>;

inline RunResult run_closed_loop(const SimConfig& cfg, std::size_t run_index, const StepObserver& observer = {}) {
    cfg.validate();
    const ModelDef model = make_model(cfg.model_name, cfg.params);
    const Vec& x_ref = model.equilibrium;
    const std::size_t K = cfg.steps();

    RngStream process_rng(cfg.seed, run_index, StreamRole::ProcessNoise);
    RngStream meas_rng(cfg.seed, run_index, StreamRole::MeasurementNoise);
    const Mat Lq = psd_sqrt(cfg.truth_noise.Qd * cfg.dt);
    const Mat Lr = psd_sqrt(cfg.truth_noise.Rn);

    RunResult rr;
    rr.run_index = run_index;
    rr.estimator = cfg.estimator;
    for (auto* v : {&rr.x_true, &rr.x_hat, &rr.y, &rr.u})
        v->reserve(K + 1);

    Vec x = cfg.x0;
    if (cfg.random_x0) {
        RngStream init_rng(cfg.seed, run_index, StreamRole::InitialState);
        x += init_rng.gaussian(psd_sqrt(cfg.P0));
    }

    detail::RunEstimator est(cfg, run_index);
    Vec u_prev = model.u_eq;
    Mat last_gain;
    double prev_cost = 0.0;

    for (std::size_t k = 0; k <= K; ++k) {
        std::uint32_t flags = kNoEvent;
        const double t = static_cast<double>(k) * cfg.dt;
        const Vec y = model.measure(x) + Lr * meas_rng.normal_vec(Lr.cols());

        Vec xhat;
        try {
            xhat = k == 0 ? est.initial_estimate(x) : est.step(u_prev, y, x, model, cfg, flags);
        } catch (const Error& err) {
            rr.diverged = true;
            rr.failure = err.what();
            break;
        }
        if (observer)
            observer(k, est);

        const bool use_truth = cfg.estimator == EstimatorKind::None || cfg.control_from_truth;
        const Vec& feedback = use_truth ? x : xhat;
        Vec u;
        try {
            ControlOutput co = sdre_control(feedback, x_ref, model, cfg.controller);
            if (!co.controllable)
                flags |= kControllabilityLoss;
            else
                last_gain = co.gain;
            u = co.u;
        } catch (const Error&) {
            flags |= kCareFailure;
            u = last_gain.size() != 0 ? Vec(-last_gain * (feedback - x_ref)) : model.u_eq;
        }

        const double cost = running_cost(x - x_ref, u, cfg.controller);
        if (k > 0)
            rr.accumulated_cost += 0.5 * cfg.dt * (prev_cost + cost);
        prev_cost = cost;

        rr.times.push_back(t);
        rr.x_true.push_back(x);
        rr.x_hat.push_back(xhat);
        rr.y.push_back(y);
        rr.u.push_back(u);
        rr.flags.push_back(flags);

        if (k == K)
            break;
        try {
            x = rk4_step([&](const Vec& z) { return model.dynamics(z, u); }, x, cfg.dt) +
                Lq * process_rng.normal_vec(Lq.cols());
        } catch (const Error& err) {
            rr.diverged = true;
            rr.failure = err.what();
            break;
        }
        if (detail::blown(x)) {
            rr.diverged = true;
            rr.failure = "true state exceeded the divergence limit";
            break;
        }
        u_prev = u;
    }
    if (rr.diverged && !rr.flags.empty())
        rr.flags.back() |= kDiverged;
    return rr;
}

inline RunMetrics run_metrics(const RunResult& r) {
    if (r.x_true.empty() || r.x_true.size() != r.x_hat.size())
        throw Error(ErrorCode::ShapeMismatch, "run has no samples or mismatched trajectories");
    const auto n = r.x_true.front().size();
    RunMetrics m{Vec::Zero(n), Vec::Zero(n), r.diverged};
    for (std::size_t k = 0; k < r.x_true.size(); ++k) {
        if (r.x_true[k].size() != n || r.x_hat[k].size() != n)
            throw Error(ErrorCode::ShapeMismatch, "state dimension changes within a run");
        const Vec err = r.x_true[k] - r.x_hat[k];
        m.mse += err.cwiseAbs2();
        m.mae += err.cwiseAbs();
    }
    const double count = static_cast<double>(r.x_true.size());
    m.mse /= count;
    m.mae /= count;
    return m;
}

/// Pooled per-state MSE and MAE over every (run, step) sample of the
/// non-diverged runs.
inline BatchMetrics compute_metrics(const std::vector<RunResult>& runs) {
    if (runs.empty())
        throw Error(ErrorCode::ShapeMismatch, "compute_metrics needs at least one run");
    BatchMetrics bm;
    bm.estimator = runs.front().estimator;
    const auto n = runs.front().x_true.empty() ? Eigen::Index{0} : runs.front().x_true.front().size();
    bm.mse = Vec::Zero(n);
    bm.mae = Vec::Zero(n);
    double samples = 0.0;
    for (const auto& r : runs) {
        RunMetrics rm = run_metrics(r);
        if (rm.mse.size() != n)
            throw Error(ErrorCode::ShapeMismatch, "runs disagree on the state dimension");
        if (!r.diverged) {
            const double c = static_cast<double>(r.x_true.size());
            bm.mse += rm.mse * c;
            bm.mae += rm.mae * c;
            samples += c;
            ++bm.n_runs;
        } else {
            ++bm.n_excluded;
        }
        bm.per_run.push_back(std::move(rm));
    }
    if (samples > 0.0) {
        bm.mse /= samples;
        bm.mae /= samples;
    }
    return bm;
}

/// Runs every index of the batch; results are ordered by run index and do
/// not depend on `threads`.
inline std::vector<RunResult> run_batch(const SimConfig& cfg, std::size_t threads = 1) {
    cfg.validate();
    std::vector<RunResult> out(cfg.n_runs);
    std::vector<std::string> errors(cfg.n_runs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.n_runs; i = next++) {
            try {
                out[i] = run_closed_loop(cfg, i);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, cfg.n_runs);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
    }
    for (const auto& e : errors)
        if (!e.empty())
            throw Error(ErrorCode::Diverged, e);
    return out;
}

inline constexpr double kMaxDivergedFraction = 0.10;

inline void check_divergence_ceiling(const BatchMetrics& bm) {
    const auto total = bm.n_runs + bm.n_excluded;
    if (total > 0 && static_cast<double>(bm.n_excluded) > kMaxDivergedFraction * static_cast<double>(total))
        throw Error(ErrorCode::Diverged, std::to_string(bm.n_excluded) + " of " + std::to_string(total) +
                                             " runs diverged (ceiling 10%)");
}

/// Seeded Monte-Carlo batch: n_runs independent runs aggregated by
/// compute_metrics. Throws Diverged when more than 10% of runs diverge.
inline BatchMetrics monte_carlo(const SimConfig& cfg, std::size_t threads = 1) {
    BatchMetrics bm = compute_metrics(run_batch(cfg, threads));
    check_divergence_ceiling(bm);
    return bm;
}

} // namespace sdre
