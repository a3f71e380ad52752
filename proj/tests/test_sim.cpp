#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "sdre/config.hpp"
#include "sdre/sim.hpp"

using namespace sdre;

namespace {

SimConfig noise_free(const char* preset_name, EstimatorKind kind) {
    SimConfig c = preset(preset_name);
    c.estimator = kind;
    c.truth_noise.Qd = Mat::Zero(2, 2);
    c.truth_noise.Rn = Mat::Zero(1, 1);
    c.n_runs = 1;
    return c;
}

Vec v2(double a, double b) { return Vec{{a, b}}; }

RunResult constant_error_run(double err, std::size_t steps) {
    RunResult r;
    for (std::size_t k = 0; k < steps; ++k) {
        r.times.push_back(0.01 * static_cast<double>(k));
        r.x_true.push_back(v2(1.0, 2.0));
        r.x_hat.push_back(v2(1.0 + err, 2.0));
    }
    return r;
}

} // namespace

TEST(ClosedLoop, NoiseFreePendulumMatchesReferenceTrajectory) {
    const RunResult r = run_closed_loop(noise_free("pendulum-paper", EstimatorKind::None), 0);
    ASSERT_EQ(r.times.size(), 1001u);
    // Independent reference: scipy CARE per step, same RK4 grid (tests/oracle).
    EXPECT_LE((r.x_true[100] - v2(3.3206077234684779, -0.20653703200280546)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((r.x_true[1000] - v2(3.1415980712395646, -6.2647329398312287e-06)).cwiseAbs().maxCoeff(), 1e-8);
    const Vec e_end = r.x_true.back() - v2(std::numbers::pi, 0);
    const Vec e_1s = r.x_true[100] - v2(std::numbers::pi, 0);
    EXPECT_LT(e_end.norm(), 0.01);
    EXPECT_LE(e_end.norm(), e_1s.norm());
}

TEST(ClosedLoop, NoiseFreeVdpMatchesReferenceTrajectory) {
    const RunResult r = run_closed_loop(noise_free("vdp-paper", EstimatorKind::None), 0);
    EXPECT_LE((r.x_true[100] - v2(0.60984431489906921, -0.64720291741841407)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((r.x_true[1000] - v2(-0.015789906168753261, -0.0037653563896281024)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT(r.x_true.back().norm(), 0.05);
}

TEST(ClosedLoop, ExactEstimatorReproducesTruthFeedback) {
    for (const char* p : {"pendulum-paper", "vdp-paper"}) {
        const RunResult a = run_closed_loop(noise_free(p, EstimatorKind::None), 0);
        const RunResult b = run_closed_loop(noise_free(p, EstimatorKind::SdreKf), 0);
        ASSERT_EQ(a.u.size(), b.u.size());
        double worst = 0.0;
        for (std::size_t k = 0; k < a.u.size(); ++k)
            worst = std::max(worst, (a.u[k] - b.u[k]).cwiseAbs().maxCoeff());
        EXPECT_LE(worst, 1e-9) << p;
    }
}

TEST(ClosedLoop, NoiseFreeKalmanFiltersAreExact) {
    for (const char* p : {"pendulum-paper", "vdp-paper"})
        for (EstimatorKind k : {EstimatorKind::SdreKf, EstimatorKind::Ekf}) {
            const BatchMetrics bm = compute_metrics({run_closed_loop(noise_free(p, k), 0)});
            EXPECT_LT(bm.mse.maxCoeff(), 1e-10) << p << " " << to_string(k);
        }
}

TEST(ClosedLoop, NoiseFreeParticleFilterIsLimitedByEulerPrediction) {
    // The particle filter predicts with an Euler step while the plant is
    // integrated with RK4, and it still injects its assumed process noise,
    // so a clean plant does not give a round-off level error. Without that
    // noise the cloud cannot follow the Euler drift and the loop is lost.
    for (const char* p : {"pendulum-paper", "vdp-paper"}) {
        SimConfig c = noise_free(p, EstimatorKind::Pf);
        c.P0 = Mat::Zero(2, 2);
        const BatchMetrics bm = compute_metrics({run_closed_loop(c, 0)});
        EXPECT_GT(bm.mse.maxCoeff(), 1e-10) << p;
        EXPECT_LT(bm.mse.maxCoeff(), 1e-3) << p;
    }
}

TEST(ClosedLoop, SequencesAndCost) {
    SimConfig c = preset("pendulum-paper");
    c.horizon = 2.0;
    for (EstimatorKind k : {EstimatorKind::SdreKf, EstimatorKind::Ekf, EstimatorKind::Pf, EstimatorKind::None}) {
        c.estimator = k;
        const RunResult r = run_closed_loop(c, 3);
        EXPECT_FALSE(r.diverged);
        for (const auto* seq : {&r.x_true, &r.x_hat, &r.y, &r.u})
            EXPECT_EQ(seq->size(), 201u);
        EXPECT_EQ(r.flags.size(), 201u);
        EXPECT_GE(r.accumulated_cost, 0.0);
        EXPECT_TRUE(std::isfinite(r.accumulated_cost));
    }
}

TEST(ClosedLoop, NoiseFreeCostDecaysOverWindows) {
    // Cost accrued in successive 1 s windows shrinks while the loop settles.
    SimConfig c = noise_free("pendulum-paper", EstimatorKind::None);
    double prev = std::numeric_limits<double>::infinity();
    for (int end = 1; end <= 5; ++end) {
        c.horizon = end;
        const double total = run_closed_loop(c, 0).accumulated_cost;
        c.horizon = end - 1 > 0 ? end - 1 : 0.01;
        const double before = end == 1 ? 0.0 : run_closed_loop(c, 0).accumulated_cost;
        const double window = total - before;
        EXPECT_GE(window, 0.0);
        EXPECT_LT(window, prev);
        prev = window;
    }
}

TEST(ClosedLoop, VdpFlagsControllabilityLossAtZeroCrossing) {
    SimConfig c = noise_free("vdp-paper", EstimatorKind::None);
    c.x0 = v2(0.0, 1.0);
    c.x0_hat = c.x0;
    const RunResult r = run_closed_loop(c, 0);
    EXPECT_TRUE(r.flags.front() & kControllabilityLoss);
    EXPECT_EQ(r.u.front(), Vec::Zero(1));
}

TEST(Metrics, Examples) {
    RunResult exact = constant_error_run(0.0, 5);
    const BatchMetrics z = compute_metrics({exact});
    EXPECT_EQ(z.mse, Vec::Zero(2));
    EXPECT_EQ(z.mae, Vec::Zero(2));

    const BatchMetrics m = compute_metrics({constant_error_run(0.1, 7)});
    EXPECT_NEAR(m.mse(0), 0.01, 1e-15);
    EXPECT_NEAR(m.mae(0), 0.1, 1e-15);
    EXPECT_EQ(m.mse(1), 0.0);
}

TEST(Metrics, PoolsRunsAndExcludesDiverged) {
    RunResult a = constant_error_run(0.1, 10);
    RunResult b = constant_error_run(0.3, 10);
    RunResult c = constant_error_run(5.0, 4);
    c.diverged = true;
    const BatchMetrics m = compute_metrics({a, b, c});
    EXPECT_EQ(m.n_runs, 2u);
    EXPECT_EQ(m.n_excluded, 1u);
    EXPECT_NEAR(m.mse(0), 0.05, 1e-15);
    EXPECT_NEAR(m.mae(0), 0.2, 1e-15);
    EXPECT_LE(m.mae(0) * m.mae(0), m.mse(0));
    EXPECT_EQ(m.per_run.size(), 3u);
    EXPECT_TRUE(m.per_run[2].diverged);
    EXPECT_THROW(check_divergence_ceiling(m), Error);
}

TEST(Metrics, Errors) {
    EXPECT_THROW(compute_metrics({}), Error);
    RunResult bad = constant_error_run(0.1, 3);
    bad.x_hat.pop_back();
    EXPECT_THROW(compute_metrics({bad}), Error);
    RunResult wide = constant_error_run(0.1, 3);
    wide.x_true[1] = Vec::Zero(3);
    EXPECT_THROW(compute_metrics({wide}), Error);
}

TEST(Batch, SingleRunEqualsDirectComposition) {
    SimConfig c = preset("vdp-paper");
    c.n_runs = 1;
    c.horizon = 3.0;
    const BatchMetrics a = monte_carlo(c);
    const BatchMetrics b = compute_metrics({run_closed_loop(c, 0)});
    EXPECT_EQ(a.mse, b.mse);
    EXPECT_EQ(a.mae, b.mae);
}

TEST(Batch, IndependentOfThreadCount) {
    SimConfig c = preset("pendulum-paper");
    c.n_runs = 8;
    c.horizon = 2.0;
    for (EstimatorKind k : {EstimatorKind::SdreKf, EstimatorKind::Pf}) {
        c.estimator = k;
        const auto serial = run_batch(c, 1);
        const auto parallel = run_batch(c, 4);
        for (std::size_t r = 0; r < c.n_runs; ++r) {
            EXPECT_EQ(serial[r].run_index, r);
            EXPECT_EQ(parallel[r].run_index, r);
            for (std::size_t t = 0; t < serial[r].x_hat.size(); ++t) {
                EXPECT_EQ(serial[r].x_hat[t], parallel[r].x_hat[t]);
                EXPECT_EQ(serial[r].x_true[t], parallel[r].x_true[t]);
            }
        }
        const BatchMetrics a = compute_metrics(serial);
        const BatchMetrics b = compute_metrics(parallel);
        EXPECT_EQ(a.mse, b.mse);
    }
}

TEST(Batch, PairedTruthAcrossEstimators) {
    // With truth feedback the estimator cannot influence the plant, so the
    // truth trajectory for a run index is bit-identical across estimators.
    SimConfig c = preset("pendulum-paper");
    c.horizon = 2.0;
    c.control_from_truth = true;
    c.estimator = EstimatorKind::SdreKf;
    const RunResult a = run_closed_loop(c, 5);
    for (EstimatorKind k : {EstimatorKind::Ekf, EstimatorKind::Pf, EstimatorKind::None}) {
        c.estimator = k;
        const RunResult b = run_closed_loop(c, 5);
        for (std::size_t t = 0; t < a.x_true.size(); ++t) {
            ASSERT_EQ(a.x_true[t], b.x_true[t]);
            ASSERT_EQ(a.y[t], b.y[t]);
        }
    }
}

TEST(Batch, DifferentRunsGetDifferentNoise) {
    SimConfig c = preset("pendulum-paper");
    c.horizon = 0.5;
    EXPECT_NE(run_closed_loop(c, 0).y[10], run_closed_loop(c, 1).y[10]);
    SimConfig d = c;
    d.seed = 2;
    EXPECT_NE(run_closed_loop(c, 0).y[10], run_closed_loop(d, 0).y[10]);
}

TEST(SimConfigValidation, Rejections) {
    SimConfig c = preset("pendulum-paper");
    EXPECT_NO_THROW(c.validate());
    auto expect_invalid = [](SimConfig s) {
        try {
            s.validate();
            ADD_FAILURE() << "expected ValidationError";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::ValidationError);
        }
    };
    SimConfig s = c;
    s.dt = 0;
    expect_invalid(s);
    s = c;
    s.horizon = 0.001;
    expect_invalid(s);
    s = c;
    s.n_runs = 0;
    expect_invalid(s);
    s = c;
    s.estimator = EstimatorKind::Pf;
    s.pf_particles = 0;
    expect_invalid(s);
    s = c;
    s.noise.Rn(0, 0) = 0;
    expect_invalid(s);
    s = c;
    s.x0 = Vec::Zero(3);
    expect_invalid(s);
}
