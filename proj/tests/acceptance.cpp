// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sdre/config.hpp"
#include "sdre/control.hpp"
#include "sdre/estimators.hpp"
#include "sdre/io.hpp"
#include "sdre/selftest.hpp"
#include "sdre/sim.hpp"
#include "test_util.hpp"

using namespace sdre;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::size_t worker_count() { return std::max(2u, std::thread::hardware_concurrency()); }

EstimatorBatch batch_for(SimConfig cfg, EstimatorKind kind) {
    cfg.estimator = kind;
    EstimatorBatch b{kind, run_batch(cfg, worker_count()), {}};
    b.metrics = compute_metrics(b.runs);
    return b;
}

bool within_factor(double v, double ref, double factor) { return v >= ref / factor && v <= ref * factor; }

// ---------------------------------------------------------------------------

Outcome care_correctness() {
    RngStream rng(2024);
    double worst_res = 0.0;
    std::size_t unstable = 0;
    for (int t = 0; t < 200; ++t) {
        const Eigen::Index n = 1 + t % 4;
        const Eigen::Index m = 1 + (t / 4) % n;
        const CareProblem pb = testing::random_care_problem(rng, n, m);
        const CareSolution s = solve_care(pb);
        worst_res = std::max(worst_res, care_residual(pb, s.P));
        if (!is_hurwitz(pb.A - pb.B * s.gain))
            ++unstable;
    }
    const Mat A = (Mat(2, 2) << 0, 1, 0, 0).finished();
    const Mat B = (Mat(2, 1) << 0, 1).finished();
    const CareSolution di = solve_care({A, B, Mat::Identity(2, 2), Mat::Identity(1, 1)});
    const double r3 = std::sqrt(3.0);
    const double di_err = (di.P - (Mat(2, 2) << r3, 1, 1, r3).finished()).cwiseAbs().maxCoeff();
    return {worst_res <= 1e-9 && unstable == 0 && di_err <= 1e-10,
            fmt("worst residual %.2e, %zu unstable closed loops, double integrator error %.1e", worst_res, unstable,
                di_err)};
}

Outcome linear_reduction() {
    const Mat A = (Mat(2, 2) << 0, 1, -2, -0.5).finished();
    const Mat B = (Mat(2, 1) << 0, 1).finished();
    const Mat C = (Mat(1, 2) << 1, 0).finished();
    const ModelDef md = make_linear_model(A, B, C);
    ControllerConfig cc;
    cc.Qw = (Mat(2, 2) << 3, 0, 0, 1).finished();
    cc.Rw = Mat::Constant(1, 1, 0.5);
    // Reference gains from an independent Schur-method solver.
    const Mat K_lqr = (Mat(1, 2) << 1.1622776601683791, 1.6388210117578219).finished();
    const Mat K_kf = (Mat(2, 1) << 0.76770754769784955, -0.038645893937210296).finished();
    NoiseConfig nc{(Mat(2, 2) << 0.2, 0, 0, 0.4).finished(), Mat::Constant(1, 1, 0.3)};

    RngStream rng(31);
    double err_c = 0.0, err_f = 0.0;
    KalmanState st{Vec::Zero(2), Mat::Identity(2, 2), Mat(), 0};
    for (int k = 0; k < 50; ++k) {
        const Vec x{{3 * rng.normal(), 3 * rng.normal()}};
        err_c = std::max(err_c, (sdre_control(x, Vec::Zero(2), md, cc).gain - K_lqr).cwiseAbs().maxCoeff());
        st.xhat = x;
        st = sdre_kf_step(st, Vec::Zero(1), Vec::Constant(1, rng.normal()), md, nc, 0.01);
        err_f = std::max(err_f, (st.gain - K_kf).cwiseAbs().maxCoeff());
    }
    return {err_c <= 1e-8 && err_f <= 1e-8, fmt("controller gain error %.1e, filter gain error %.1e", err_c, err_f)};
}

Outcome jacobian_fidelity() {
    double worst = 0.0;
    for (const ModelDef& md : {make_pendulum_model(), make_vdp_model()}) {
        RngStream rng(md.name == "vdp" ? 2 : 1);
        for (int s = 0; s < 100; ++s) {
            const Vec x{{-5 + 10 * rng.uniform(), -5 + 10 * rng.uniform()}};
            const Vec u = Vec::Constant(1, -2 + 4 * rng.uniform());
            const Mat fd = jacobian_fd([&](const Vec& z) { return md.dynamics(z, u); }, x);
            const Mat J = md.jacobian_at(x, u);
            worst = std::max(worst, (J - fd).cwiseAbs().maxCoeff() / (1.0 + fd.cwiseAbs().maxCoeff()));
        }
    }
    return {worst <= 1e-6, fmt("worst relative error %.2e over 200 states", worst)};
}

Outcome pf_vs_kalman() {
    // Euler-discretised linear-Gaussian plant; the particle filter sees the
    // exact transition model, so its error should match the optimal filter.
    const Mat A = (Mat(2, 2) << 0, 1, -2, -0.5).finished();
    const Mat B = (Mat(2, 1) << 0, 1).finished();
    const Mat C = (Mat(1, 2) << 1, 0).finished();
    const ModelDef md = make_linear_model(A, B, C);
    const double dt = 0.05;
    const int steps = 100;
    const std::size_t N = 5000;
    const NoiseConfig nc{(Mat(2, 2) << 0.2, 0, 0, 0.4).finished(), Mat::Constant(1, 1, 0.3)};
    const Mat P0 = 0.5 * Mat::Identity(2, 2);
    const Mat F = Mat::Identity(2, 2) + A * dt;
    const Mat Qk = nc.Qd * dt;
    const Mat Lq = psd_sqrt(Qk);
    const Mat Lr = psd_sqrt(nc.Rn);
    const Vec u0 = Vec::Zero(1);

    double se_pf = 0.0, se_kf = 0.0;
    for (std::uint64_t run = 0; run < 30; ++run) {
        RngStream proc(77, run, StreamRole::ProcessNoise);
        RngStream meas(77, run, StreamRole::MeasurementNoise);
        Vec x = RngStream(77, run, StreamRole::InitialState).gaussian(psd_sqrt(P0));
        ParticleSet ps = pf_init(Vec::Zero(2), P0, N, RngStream(77, run, StreamRole::Estimator));
        Vec m = Vec::Zero(2);
        Mat P = P0;
        for (int k = 0; k < steps; ++k) {
            x = F * x + proc.gaussian(Lq);
            const Vec y = C * x + meas.gaussian(Lr);

            m = F * m;
            P = F * P * F.transpose() + Qk;
            const Mat S = C * P * C.transpose() + nc.Rn;
            const Mat K = P * C.transpose() * S.inverse();
            m += K * (y - C * m);
            P = (Mat::Identity(2, 2) - K * C) * P;

            const Vec xp = pf_step(ps, u0, y, md, nc, dt);
            se_pf += (xp - x).squaredNorm();
            se_kf += (m - x).squaredNorm();
        }
    }
    const double rmse_pf = std::sqrt(se_pf / (30.0 * steps));
    const double rmse_kf = std::sqrt(se_kf / (30.0 * steps));
    const double ratio = rmse_pf / rmse_kf;
    return {std::abs(ratio - 1.0) <= 0.10, fmt("PF RMSE %.5f, Kalman RMSE %.5f, ratio %.4f", rmse_pf, rmse_kf, ratio)};
}

Outcome pendulum_tables() {
    const SimConfig cfg = preset("pendulum-paper");
    const EstimatorBatch sk = batch_for(cfg, EstimatorKind::SdreKf);
    const EstimatorBatch pf = batch_for(cfg, EstimatorKind::Pf);
    const double m0 = sk.metrics.mse(0), m1 = sk.metrics.mse(1);
    const bool band = m0 >= 0.00016 && m0 <= 0.00144 && within_factor(m1, 0.00251, 3.0);
    const bool order = m0 <= pf.metrics.mse(0) && m1 <= pf.metrics.mse(1);
    return {band && order && sk.metrics.n_excluded == 0 && pf.metrics.n_excluded == 0,
            fmt("SDRE-KF MSE theta %.5f theta_dot %.5f; PF %.5f %.5f", m0, m1, pf.metrics.mse(0), pf.metrics.mse(1))};
}

Outcome vdp_tables() {
    const SimConfig cfg = preset("vdp-paper");
    const double mse_ref[3][2] = {{0.00334, 0.01379}, {0.00231, 0.01160}, {0.00151, 0.01189}};
    const double mae_ref[3][2] = {{0.03255, 0.04001}, {0.03005, 0.03715}, {0.02821, 0.03770}};
    const EstimatorKind kinds[3] = {EstimatorKind::SdreKf, EstimatorKind::Ekf, EstimatorKind::Pf};
    bool ok = true;
    std::string detail;
    for (int j = 0; j < 3; ++j) {
        const EstimatorBatch b = batch_for(cfg, kinds[j]);
        ok = ok && b.metrics.n_excluded == 0;
        for (int i = 0; i < 2; ++i) {
            ok = ok && within_factor(b.metrics.mse(i), mse_ref[j][i], 5.0);
            ok = ok && within_factor(b.metrics.mae(i), mae_ref[j][i], 5.0);
        }
        detail += fmt("%s MSE %.5f/%.5f MAE %.4f/%.4f; ", std::string(display_name(kinds[j])).c_str(),
                      b.metrics.mse(0), b.metrics.mse(1), b.metrics.mae(0), b.metrics.mae(1));
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

Outcome regulation() {
    auto clean = [](const char* name) {
        SimConfig c = preset(name);
        c.estimator = EstimatorKind::None;
        c.truth_noise = {Mat::Zero(2, 2), Mat::Zero(1, 1)};
        return c;
    };
    const SimConfig cp = clean("pendulum-paper");
    const SimConfig cv = clean("vdp-paper");
    const double ep = (run_closed_loop(cp, 0).x_true.back() - Vec{{std::numbers::pi, 0.0}}).norm();
    const double ev = run_closed_loop(cv, 0).x_true.back().norm();
    return {ep < 0.01 && ev < 0.05, fmt("pendulum |x - [pi,0]| = %.2e, Van der Pol |x| = %.2e", ep, ev)};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file())
            rel.push_back(fs::relative(e.path(), a));
    std::size_t count_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file())
            ++count_b;
    files = rel.size();
    if (count_b != rel.size())
        return false;
    for (const auto& r : rel)
        if (!fs::exists(b / r) || slurp(a / r) != slurp(b / r))
            return false;
    return true;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "sdre_acceptance_determinism";
    fs::remove_all(root);
    bool ok = true;
    std::size_t files = 0;
    for (const char* name : {"pendulum-paper", "vdp-paper"}) {
        SimConfig cfg = preset(name);
        cfg.estimator = EstimatorKind::Pf;
        auto emit = [&](const std::string& tag, std::size_t threads) {
            EstimatorBatch b{cfg.estimator, run_batch(cfg, threads), {}};
            b.metrics = compute_metrics(b.runs);
            const fs::path dir = root / (std::string(name) + "_" + tag);
            emit_outputs(cfg, {b}, dir);
            return dir;
        };
        const fs::path first = emit("a", worker_count());
        const fs::path second = emit("b", worker_count());
        const fs::path serial = emit("serial", 1);
        std::size_t n1 = 0, n2 = 0;
        ok = ok && same_tree(first, second, n1) && same_tree(first, serial, n2);
        files += n1;
    }
    fs::remove_all(root);
    return {ok, fmt("%zu files per bundle compared across repeat and 1 vs %zu threads", files, worker_count())};
}

Outcome selftest() {
    const SelftestReport rep = run_selftest(5);
    std::string detail = fmt("%zu checks, %zu violations", rep.checks, rep.violations.size());
    if (!rep.violations.empty())
        detail += "; first: " + rep.violations.front();
    return {rep.passed(), detail};
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> criteria{
        {1, "CARE correctness", 5, care_correctness},
        {2, "linear reduction", 1, linear_reduction},
        {3, "Jacobian fidelity", 1, jacobian_fidelity},
        {4, "PF vs Kalman", 30, pf_vs_kalman},
        {5, "pendulum tables", 60, pendulum_tables},
        {6, "Van der Pol tables", 60, vdp_tables},
        {7, "regulation", 2, regulation},
        {8, "determinism", 60, determinism},
        {9, "invariant suite", 30, selftest},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("[%s] %d %s: %s (%.2f s of %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    secs, c.budget_s, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
