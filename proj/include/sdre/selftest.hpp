#pragma once

// Invariant suite behind `sdre_cli selftest`: runs both reference presets with
// every estimator and checks covariance symmetry/PSD at each step, particle
// weight normalisation, the SDC factorisation identities and MAE^2 <= MSE.

#include <cmath>
#include <string>
#include <vector>

#include "sdre/config.hpp"
#include "sdre/sim.hpp"

namespace sdre {

struct SelftestReport {
    std::size_t checks = 0;
    std::vector<std::string> violations;

    void expect(bool ok, const std::string& what) {
        ++checks;
        if (!ok)
            violations.push_back(what);
    }
    [[nodiscard]] bool passed() const { return violations.empty(); }
};

inline void check_factorisation(const ModelDef& model, SelftestReport& rep, std::uint64_t seed) {
    RngStream rng(seed);
    const auto n = static_cast<Eigen::Index>(model.n_states);
    for (int s = 0; s < 200; ++s) {
        Vec e(n);
        for (Eigen::Index i = 0; i < n; ++i)
            e(i) = -10.0 + 20.0 * rng.uniform();
        for (double uval : {-1.0, 0.0, 1.0}) {
            const Vec u = Vec::Constant(static_cast<Eigen::Index>(model.n_inputs), uval);
            const SdcMatrices sdc = model.sdc_at(e);
            const Vec lhs = sdc.A * e + sdc.B * u;
            const Vec rhs = model.dynamics(e + model.equilibrium, u);
            const double scale = 1.0 + rhs.cwiseAbs().maxCoeff();
            rep.expect((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12 * scale,
                       model.name + ": SDC factorisation identity broken at a sampled state");
        }
    }
}

inline SelftestReport run_selftest(std::size_t runs_per_preset = 5) {
    SelftestReport rep;
    for (const char* name : {"pendulum-paper", "vdp-paper"}) {
        SimConfig cfg = preset(name);
        cfg.n_runs = runs_per_preset;
        check_factorisation(make_model(cfg.model_name, cfg.params), rep, 7);

        for (EstimatorKind kind : {EstimatorKind::SdreKf, EstimatorKind::Ekf, EstimatorKind::Pf}) {
            cfg.estimator = kind;
            const std::string tag = std::string(name) + "/" + std::string(to_string(kind));
            std::vector<RunResult> runs(cfg.n_runs);
            for (std::size_t r = 0; r < cfg.n_runs; ++r) {
                std::size_t bad_cov = 0, bad_weights = 0;
                auto observer = [&](std::size_t, const detail::RunEstimator& est) {
                    if (kind == EstimatorKind::Pf) {
                        const ParticleSet* ps = est.particles();
                        double sum = 0.0;
                        bool uniform = true;
                        for (double w : ps->weights) {
                            sum += w;
                            uniform = uniform && w == 1.0 / static_cast<double>(ps->size());
                        }
                        if (std::abs(sum - 1.0) > 1e-12 || !uniform)
                            ++bad_weights;
                    } else if (est.kalman().P.size() != 0 && !covariance_ok(est.kalman().P)) {
                        ++bad_cov;
                    }
                };
                runs[r] = run_closed_loop(cfg, r, observer);
                const RunResult& rr = runs[r];
                rep.expect(!rr.diverged, tag + ": run " + std::to_string(r) + " diverged: " + rr.failure);
                rep.expect(bad_cov == 0, tag + ": covariance lost symmetry/PSD on " + std::to_string(bad_cov) +
                                             " steps of run " + std::to_string(r));
                rep.expect(bad_weights == 0, tag + ": particle weights not normalised on " +
                                                 std::to_string(bad_weights) + " steps of run " + std::to_string(r));
                rep.expect(rr.times.size() == cfg.steps() + 1, tag + ": trajectory length mismatch");
                bool finite = true;
                for (std::size_t k = 0; k < rr.times.size(); ++k)
                    finite = finite && rr.x_true[k].allFinite() && rr.x_hat[k].allFinite() && rr.u[k].allFinite();
                rep.expect(finite, tag + ": non-finite sample in run " + std::to_string(r));
                rep.expect(rr.accumulated_cost >= 0.0, tag + ": negative accumulated cost");
            }
            const BatchMetrics bm = compute_metrics(runs);
            for (Eigen::Index i = 0; i < bm.mse.size(); ++i) {
                rep.expect(bm.mse(i) >= 0.0 && bm.mae(i) >= 0.0, tag + ": negative metric");
                rep.expect(bm.mae(i) * bm.mae(i) <= bm.mse(i) * (1.0 + 1e-12), tag + ": MAE^2 > MSE");
            }
            for (const auto& pr : bm.per_run)
                for (Eigen::Index i = 0; i < pr.mse.size(); ++i)
                    rep.expect(pr.mae(i) * pr.mae(i) <= pr.mse(i) * (1.0 + 1e-12), tag + ": per-run MAE^2 > MSE");
        }
    }
    return rep;
}

} // namespace sdre
