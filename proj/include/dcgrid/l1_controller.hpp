#pragma once

#include "dcgrid/core.hpp"
#include "dcgrid/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dcgrid {

struct L1Config {
    Mat3 a_m = Mat3::Zero();
    Vec3 b = Vec3(0.0, 0.0, 1.0);
    double gamma = 1e6;
    double omega_c = 2.0 * 3.14159265358979323846 * 500.0;
    double theta_max = 0.0;
    Mat3 p = Mat3::Identity();
    double epsilon = 0.0;
    double xi_sq = 0.0;
    int n_i = 0;
    // Semi-axes of the projection ellipsoid (the Θ box half-widths).
    Vec3 theta_axes = Vec3::Ones();
    // Width of the smooth projection boundary layer, as a fraction of the set.
    double proj_tolerance = 0.1;
    double d_max = 0.95;
};

struct ControllerState {
    Vec3 x_hat = Vec3::Zero();
    Vec3 theta_hat = Vec3::Zero();
    double lpf_state = 0.0;
    double xi_int = 0.0;
    double u_l1 = 0.0;
    double u_total = 0.0;
    Vec3 x_tilde = Vec3::Zero();
    bool saturated = false;
};

struct NeighborPrediction {
    Mat3 a_ij = Mat3::Zero();
    Vec3 x_hat = Vec3::Zero();
};

/// Exact zero-order-hold pair for ẋ = A x + w: x⁺ = Φ x + Γ w.
struct Zoh {
    Mat3 phi = Mat3::Identity();
    Mat3 gam = Mat3::Zero();
    double dt = 0.0;
};

inline Zoh zoh(const Mat3& a, double dt) {
    MatX m = MatX::Zero(6, 6);
    m.topLeftCorner(3, 3) = a * dt;
    m.topRightCorner(3, 3) = Mat3::Identity() * dt;
    const MatX e = linalg::expm(m);
    Zoh z;
    z.phi = e.topLeftCorner(3, 3);
    z.gam = e.topRightCorner(3, 3);
    z.dt = dt;
    return z;
}

/// Predictor drift input (everything except A_m x̂), held over the step.
inline Vec3 predictor_forcing(const L1Config& cfg, const ControllerState& st, const Vec3& x_meas,
                              const std::vector<NeighborPrediction>& neighbors, const Vec3& d_hat) {
    Vec3 w = cfg.b * (st.u_l1 + st.theta_hat.dot(x_meas)) + d_hat;
    for (const auto& nb : neighbors) w += nb.a_ij * nb.x_hat;
    return w;
}

inline Vec3 predictor_step(const L1Config& cfg, const ControllerState& st, const Vec3& x_meas,
                           const std::vector<NeighborPrediction>& neighbors, const Vec3& d_hat, const Zoh& z) {
    return z.phi * st.x_hat + z.gam * predictor_forcing(cfg, st, x_meas, neighbors, d_hat);
}

inline Vec3 predictor_step(const L1Config& cfg, const ControllerState& st, const Vec3& x_meas,
                           const std::vector<NeighborPrediction>& neighbors, const Vec3& d_hat, double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("predictor_step: dt must be positive");
    return predictor_step(cfg, st, x_meas, neighbors, d_hat, zoh(cfg.a_m, dt));
}

/// Smooth convex projection onto the ellipsoid Σ (θ_k / w_k)² ≤ 1.
/// Inside the inner ellipsoid (scaled by 1/√(1+tol)) the update passes unchanged;
/// in the boundary layer the outward normal component is faded out.
inline Vec3 project(const L1Config& cfg, const Vec3& theta, const Vec3& y) {
    const Vec3 w2 = cfg.theta_axes.cwiseProduct(cfg.theta_axes);
    const double tol = cfg.proj_tolerance;
    const double s = theta.cwiseQuotient(cfg.theta_axes).squaredNorm();
    const double f = ((1.0 + tol) * s - 1.0) / tol;
    const Vec3 grad = (2.0 * (1.0 + tol) / tol) * theta.cwiseQuotient(w2);
    const double gy = grad.dot(y);
    if (f > 0.0 && gy > 0.0) return y - grad * (gy * std::min(f, 1.0) / grad.squaredNorm());
    return y;
}

/// Radially pulls θ back inside the ellipsoid if an explicit step left it.
inline Vec3 clamp_to_set(const L1Config& cfg, const Vec3& theta) {
    const double s = theta.cwiseQuotient(cfg.theta_axes).squaredNorm();
    return s > 1.0 ? Vec3(theta / std::sqrt(s)) : theta;
}

inline Vec3 adaptive_step(const L1Config& cfg, const ControllerState& st, const Vec3& x_meas,
                          const Vec3& x_hat, double dt) {
    const Vec3 x_tilde = x_hat - x_meas;
    const double e = x_tilde.dot(cfg.p * cfg.b);
    const Vec3 raw = -x_meas * e;
    const Vec3 next = st.theta_hat + dt * cfg.gamma * project(cfg, st.theta_hat, raw);
    return clamp_to_set(cfg, next);
}

inline double lpf_step(const L1Config& cfg, double y, double raw, double dt) {
    if (!(cfg.omega_c > 0.0) || !(dt > 0.0)) throw InvalidArgument("lpf_step: omega_c and dt must be positive");
    return y + (1.0 - std::exp(-cfg.omega_c * dt)) * (raw - y);
}

/// Filtered adaptive signal u = C(s)[−θ̂ᵀx]; also advances st.lpf_state.
inline double l1_control(const L1Config& cfg, ControllerState& st, const Vec3& x_meas, double dt) {
    st.lpf_state = lpf_step(cfg, st.lpf_state, -st.theta_hat.dot(x_meas), dt);
    st.u_l1 = st.lpf_state;
    return st.u_l1;
}

struct CompositeOutput {
    double duty = 0.0;
    bool saturated = false;
};

inline CompositeOutput composite_control(double baseline_u, double u_l1, double duty_op, double d_max = 0.95) {
    if (!(duty_op > 0.0 && duty_op < 1.0)) throw InvalidArgument("composite_control: duty_op must be in (0, 1)");
    const double raw = duty_op + baseline_u + u_l1;
    CompositeOutput out;
    out.duty = std::clamp(raw, 0.0, d_max);
    out.saturated = raw > d_max || raw < 0.0;
    return out;
}

/// x̃ᵀP x̃ + θ̃ᵀΓ⁻¹θ̃ for one controller.
inline double lyapunov_value(const L1Config& cfg, const Vec3& x_tilde, const Vec3& theta_tilde) {
    return x_tilde.dot(cfg.p * x_tilde) + theta_tilde.squaredNorm() / cfg.gamma;
}

}  // namespace dcgrid
