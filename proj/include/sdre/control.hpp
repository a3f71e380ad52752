#pragma once

#include "sdre/models.hpp"
#include "sdre/numerics.hpp"

namespace sdre {

struct ControllerConfig {
    Mat Qw; // state weight, PSD
    Mat Rw; // input weight, PD
    double care_tol = kDefaultCareTol;
    double rank_tol = kDefaultRankTol;

    void validate(std::size_t n, std::size_t m) const {
        if (Qw.rows() != static_cast<Eigen::Index>(n) || Qw.cols() != static_cast<Eigen::Index>(n) ||
            Rw.rows() != static_cast<Eigen::Index>(m) || Rw.cols() != static_cast<Eigen::Index>(m))
            throw Error(ErrorCode::ValidationError, "controller weights do not match the model dimensions");
        if (!is_symmetric(Qw, 1e-10) || min_sym_eigenvalue(Qw) < -1e-10)
            throw Error(ErrorCode::ValidationError, "controller.Qw must be symmetric PSD");
        if (!is_symmetric(Rw, 1e-10) || min_sym_eigenvalue(Rw) < 1e-10)
            throw Error(ErrorCode::ValidationError, "controller.Rw must be symmetric PD");
        if (!(care_tol > 0.0) || !(rank_tol > 0.0))
            throw Error(ErrorCode::ValidationError, "controller tolerances must be positive");
    }
};

struct ControlOutput {
    Vec u;
    Mat gain;
    Mat P;
    bool controllable = true;
};

/// Pointwise SDRE feedback u = -R^{-1} B(e)^T P(e) e with e = x - x_ref.
///
/// Where the SDC pair loses controllability the law returns u = 0 with
/// `controllable = false`; for the Van der Pol plant this only happens at
/// x1 = 0 where B vanishes, so the input has no effect anyway. Riccati
/// failures propagate as sdre::Error.
inline ControlOutput sdre_control(const Vec& x, const Vec& x_ref, const ModelDef& model, const ControllerConfig& cfg) {
    const Vec e = x - x_ref;
    const SdcMatrices sdc = model.sdc_at(e);
    const auto n = static_cast<std::size_t>(sdc.A.rows());

    ControlOutput out;
    if (controllability_rank(sdc.A, sdc.B, cfg.rank_tol) < n) {
        out.u = Vec::Zero(sdc.B.cols());
        out.gain = Mat::Zero(sdc.B.cols(), sdc.A.rows());
        out.P = Mat::Zero(sdc.A.rows(), sdc.A.rows());
        out.controllable = false;
        return out;
    }
    CareSolution sol = solve_care({sdc.A, sdc.B, cfg.Qw, cfg.Rw}, cfg.care_tol);
    out.gain = std::move(sol.gain);
    out.P = std::move(sol.P);
    out.u = -out.gain * e;
    return out;
}

/// Integrand of the quadratic cost: 0.5 (e^T Q e + u^T R u).
inline double running_cost(const Vec& e, const Vec& u, const ControllerConfig& cfg) {
    return 0.5 * (e.dot(cfg.Qw * e) + u.dot(cfg.Rw * u));
}

} // namespace sdre
