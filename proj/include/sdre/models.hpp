#pragma once

// Benchmark plants: the damped simple pendulum regulated to its inverted
// equilibrium and the (sign-flipped) Van der Pol oscillator. Each plant is
// exposed as a ModelDef bundling the true dynamics, a state-dependent
// coefficient factorisation in error coordinates and the analytic Jacobian.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "sdre/error.hpp"
#include "sdre/numerics.hpp"

namespace sdre {

struct PendulumParams {
    double l = 1.5;  // rod length [m]
    double m = 0.5;  // bob mass [kg]
    double k = 0.5;  // friction coefficient
    double g = 9.81; // gravity [m/s^2]

    void validate() const {
        if (!(l > 0.0) || !(m > 0.0) || !(k >= 0.0) || !(g > 0.0) || !std::isfinite(l + m + k + g))
            throw Error(ErrorCode::ValidationError, "pendulum parameters need l > 0, m > 0, k >= 0, g > 0");
    }
};

struct VdpParams {
    double mu = 0.7;

    void validate() const {
        if (!std::isfinite(mu))
            throw Error(ErrorCode::ValidationError, "vdp.mu must be finite");
    }
};

struct SdcMatrices {
    Mat A; // n x n
    Mat B; // n x m
    Mat C; // p x n
};

struct ModelDef {
    std::string name;
    std::size_t n_states = 0;
    std::size_t n_inputs = 0;
    std::size_t n_outputs = 0;
    std::function<Vec(const Vec& x, const Vec& u)> dynamics;
    /// SDC matrices at the error state e = x - equilibrium.
    std::function<SdcMatrices(const Vec& e)> sdc_at;
    std::function<Mat(const Vec& x, const Vec& u)> jacobian_at;
    Mat C;            // linear measurement y = C x
    Vec equilibrium;  // regulation target
    Vec initial_state;
    Vec u_eq;         // input holding the equilibrium
    std::vector<std::string> state_labels;

    [[nodiscard]] Vec measure(const Vec& x) const { return C * x; }
};

/// sin(z)/z with the removable singularity at 0 handled by a Taylor series.
inline double sinc_stable(double z) {
    if (std::abs(z) < 1e-4) {
        const double z2 = z * z;
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0;
    }
    return std::sin(z) / z;
}

/// alpha * A1 + (1 - alpha) * A2
inline Mat blend_sdc(const Mat& A1, const Mat& A2, double alpha) {
    if (A1.rows() != A2.rows() || A1.cols() != A2.cols())
        throw Error(ErrorCode::ShapeMismatch, "blend_sdc needs equally shaped matrices");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw Error(ErrorCode::AlphaOutOfRange, "alpha must lie in [0, 1]");
    return alpha * A1 + (1.0 - alpha) * A2;
}

// ---------------------------------------------------------------------------
// Simple pendulum:  m l theta'' = -m g sin(theta) - k l theta' + T / l
// ---------------------------------------------------------------------------

inline Vec pendulum_dynamics(const Vec& x, double torque, const PendulumParams& p) {
    Vec dx(2);
    dx << x(1), -(p.g / p.l) * std::sin(x(0)) - (p.k / p.m) * x(1) + torque / (p.m * p.l * p.l);
    return dx;
}

/// Factorisation about the inverted equilibrium [pi, 0]; e = [theta - pi, theta'].
/// Uses sin(e1 + pi) = -sin(e1), so A(e) e + B T is the exact error dynamics.
inline SdcMatrices pendulum_sdc(const Vec& e, const PendulumParams& p) {
    SdcMatrices s;
    s.A.resize(2, 2);
    s.A << 0.0, 1.0, (p.g / p.l) * sinc_stable(e(0)), -p.k / p.m;
    s.B.resize(2, 1);
    s.B << 0.0, 1.0 / (p.m * p.l * p.l);
    s.C.resize(1, 2);
    s.C << 1.0, 0.0;
    return s;
}

inline Mat pendulum_jacobian(const Vec& x, double /*torque*/, const PendulumParams& p) {
    Mat J(2, 2);
    J << 0.0, 1.0, -(p.g / p.l) * std::cos(x(0)), -p.k / p.m;
    return J;
}

// ---------------------------------------------------------------------------
// Van der Pol: x1' = x2, x2' = -x1 - mu (1 - x1^2) x2 + x1 u
// ---------------------------------------------------------------------------

inline Vec vdp_dynamics(const Vec& x, double u, const VdpParams& p) {
    Vec dx(2);
    dx << x(1), -x(0) - p.mu * (1.0 - x(0) * x(0)) * x(1) + x(0) * u;
    return dx;
}

inline SdcMatrices vdp_sdc(const Vec& x, const VdpParams& p) {
    SdcMatrices s;
    s.A.resize(2, 2);
    s.A << 0.0, 1.0, -1.0, -p.mu * (1.0 - x(0) * x(0));
    s.B.resize(2, 1);
    s.B << 0.0, x(0);
    s.C.resize(1, 2);
    s.C << 1.0, 0.0;
    return s;
}

inline Mat vdp_jacobian(const Vec& x, double u, const VdpParams& p) {
    Mat J(2, 2);
    J << 0.0, 1.0, -1.0 + 2.0 * p.mu * x(0) * x(1) + u, -p.mu * (1.0 - x(0) * x(0));
    return J;
}

// ---------------------------------------------------------------------------
// ModelDef factories
// ---------------------------------------------------------------------------

inline ModelDef make_pendulum_model(const PendulumParams& p = {}) {
    p.validate();
    ModelDef md;
    md.name = "pendulum";
    md.n_states = 2;
    md.n_inputs = 1;
    md.n_outputs = 1;
    md.dynamics = [p](const Vec& x, const Vec& u) { return pendulum_dynamics(x, u(0), p); };
    md.sdc_at = [p](const Vec& e) { return pendulum_sdc(e, p); };
    md.jacobian_at = [p](const Vec& x, const Vec& u) { return pendulum_jacobian(x, u(0), p); };
    md.C = pendulum_sdc(Vec::Zero(2), p).C;
    md.equilibrium = Vec(2);
    md.equilibrium << std::numbers::pi, 0.0;
    md.initial_state = Vec(2);
    md.initial_state << std::numbers::pi + 0.5, 0.0;
    md.u_eq = Vec::Zero(1);
    md.state_labels = {"theta", "theta_dot"};
    return md;
}

inline ModelDef make_vdp_model(const VdpParams& p = {}) {
    p.validate();
    ModelDef md;
    md.name = "vdp";
    md.n_states = 2;
    md.n_inputs = 1;
    md.n_outputs = 1;
    md.dynamics = [p](const Vec& x, const Vec& u) { return vdp_dynamics(x, u(0), p); };
    md.sdc_at = [p](const Vec& e) { return vdp_sdc(e, p); };
    md.jacobian_at = [p](const Vec& x, const Vec& u) { return vdp_jacobian(x, u(0), p); };
    md.C = vdp_sdc(Vec::Zero(2), p).C;
    md.equilibrium = Vec::Zero(2);
    md.initial_state = Vec(2);
    md.initial_state << 1.0, 1.0;
    md.u_eq = Vec::Zero(1);
    md.state_labels = {"x1", "x2"};
    return md;
}

/// Constant-coefficient plant x' = A x + B u, y = C x; its SDC factorisation is
/// (A, B, C) everywhere, which makes it the reduction oracle for LQR / Kalman.
inline ModelDef make_linear_model(const Mat& A, const Mat& B, const Mat& C, std::string name = "linear") {
    if (A.rows() != A.cols() || B.rows() != A.rows() || C.cols() != A.rows())
        throw Error(ErrorCode::ShapeMismatch, "linear model dimensions are inconsistent");
    ModelDef md;
    md.name = std::move(name);
    md.n_states = static_cast<std::size_t>(A.rows());
    md.n_inputs = static_cast<std::size_t>(B.cols());
    md.n_outputs = static_cast<std::size_t>(C.rows());
    md.dynamics = [A, B](const Vec& x, const Vec& u) -> Vec { return A * x + B * u; };
    md.sdc_at = [A, B, C](const Vec&) { return SdcMatrices{A, B, C}; };
    md.jacobian_at = [A](const Vec&, const Vec&) -> Mat { return A; };
    md.C = C;
    md.equilibrium = Vec::Zero(A.rows());
    md.initial_state = Vec::Zero(A.rows());
    md.u_eq = Vec::Zero(B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        md.state_labels.push_back("x" + std::to_string(i + 1));
    return md;
}

struct ModelParams {
    PendulumParams pendulum;
    VdpParams vdp;
};

/// Registry lookup for the CLI: "pendulum" or "vdp".
inline ModelDef make_model(std::string_view name, const ModelParams& params = {}) {
    if (name == "pendulum")
        return make_pendulum_model(params.pendulum);
    if (name == "vdp")
        return make_vdp_model(params.vdp);
    throw Error(ErrorCode::ValidationError, "unknown model '" + std::string(name) + "' (expected pendulum or vdp)");
}

} // namespace sdre
