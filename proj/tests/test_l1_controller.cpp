#include "dcgrid/dcgrid.hpp"

#include <catch_amalgamated.hpp>

#include <numbers>
#include <random>

using namespace dcgrid;
using Catch::Approx;

namespace {

L1Config small_config() {
    L1Config c;
    c.a_m = balanced_companion({Complex(-40.0), Complex(-80.0), Complex(-120.0)}).a_m;
    c.p = solve_local_are(c.a_m, 0, 0.0, 1.0);
    c.gamma = 50.0;
    c.theta_axes = Vec3(4.0, 4.0, 4.0);
    c.omega_c = 2.0 * std::numbers::pi * 5.0;
    return c;
}

}  // namespace

TEST_CASE("ZOH pair matches the matrix exponential of the augmented system") {
    const L1Config c = small_config();
    const double dt = 1e-3;
    const Zoh z = zoh(c.a_m, dt);
    CHECK((z.phi - linalg::expm(MatX(c.a_m * dt))).norm() < 1e-13);
    // Γ = A⁻¹(Φ − I) for invertible A
    const Mat3 gam = c.a_m.inverse() * (z.phi - Mat3::Identity());
    CHECK((z.gam - gam).norm() < 1e-12 * gam.norm());
    // predictor step with constant forcing equals the exact solution
    ControllerState st;
    st.x_hat = Vec3(1.0, -1.0, 0.5);
    const Vec3 d_hat(0.1, 0.2, 0.3);
    const Vec3 x_meas = Vec3::Zero();
    const Vec3 next = predictor_step(c, st, x_meas, {}, d_hat, dt);
    CHECK((next - (z.phi * st.x_hat + gam * d_hat)).norm() < 1e-12);
    CHECK_THROWS_AS(predictor_step(c, st, x_meas, {}, d_hat, 0.0), InvalidArgument);
}

TEST_CASE("unforced predictor decays") {
    const L1Config c = small_config();
    ControllerState st;
    st.x_hat = Vec3(1.0, 1.0, 1.0);
    const Zoh z = zoh(c.a_m, 1e-3);
    double prev = st.x_hat.dot(c.p * st.x_hat);
    for (int k = 0; k < 500; ++k) {
        st.x_hat = predictor_step(c, st, Vec3::Zero(), {}, Vec3::Zero(), z);
        const double v = st.x_hat.dot(c.p * st.x_hat);
        REQUIRE(v < prev);
        prev = v;
    }
    CHECK(st.x_hat.norm() < 1e-6);
}

TEST_CASE("projection passes interior updates and removes outward motion at the boundary") {
    L1Config c;
    c.theta_axes = Vec3(1.0, 2.0, 3.0);
    c.proj_tolerance = 0.1;
    const Vec3 y(0.3, -0.7, 1.1);
    CHECK((project(c, Vec3(0.1, 0.1, 0.1), y) - y).norm() == 0.0);

    const Vec3 edge(1.0, 0.0, 0.0);
    const Vec3 out = project(c, edge, Vec3(1.0, 0.5, 0.0));
    CHECK(std::abs(out[0]) < 1e-12);
    CHECK(out[1] == Approx(0.5));
    // inward motion is never altered
    const Vec3 in(-1.0, 0.5, 0.0);
    CHECK((project(c, edge, in) - in).norm() == 0.0);

    CHECK((clamp_to_set(c, Vec3(2.0, 0.0, 0.0)) - edge).norm() < 1e-15);
    CHECK((clamp_to_set(c, Vec3(0.5, 0.5, 0.5)) - Vec3(0.5, 0.5, 0.5)).norm() == 0.0);
}

TEST_CASE("adaptive estimate stays in the ellipsoid under aggressive updates") {
    L1Config c = small_config();
    c.gamma = 1e8;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd(0.0, 10.0);
    ControllerState st;
    for (int k = 0; k < 2000; ++k) {
        const Vec3 x(nd(rng), nd(rng), nd(rng));
        const Vec3 xh(nd(rng), nd(rng), nd(rng));
        st.theta_hat = adaptive_step(c, st, x, xh, 1e-3);
        REQUIRE(st.theta_hat.cwiseQuotient(c.theta_axes).squaredNorm() <= 1.0 + 1e-12);
    }
}

TEST_CASE("low-pass filter has unit DC gain and -3 dB at the cutoff") {
    L1Config c;
    c.omega_c = 2.0 * std::numbers::pi * 500.0;
    const double dt = 1e-6;
    // step response reaches 1 − 1/e after one time constant
    double y = 0.0;
    const int tau_steps = static_cast<int>(std::round(1.0 / (c.omega_c * dt)));
    for (int k = 0; k < tau_steps; ++k) y = lpf_step(c, y, 1.0, dt);
    CHECK(y == Approx(1.0 - std::exp(-tau_steps * c.omega_c * dt)).epsilon(1e-9));

    // sinusoid at ωc: steady-state amplitude 1/√2
    y = 0.0;
    double peak = 0.0;
    const double period = 2.0 * std::numbers::pi / c.omega_c;
    const int n = static_cast<int>(12.0 * period / dt);
    for (int k = 0; k < n; ++k) {
        y = lpf_step(c, y, std::sin(c.omega_c * k * dt), dt);
        if (k * dt > 8.0 * period) peak = std::max(peak, std::abs(y));
    }
    CHECK(peak == Approx(1.0 / std::sqrt(2.0)).epsilon(1e-2));
    CHECK_THROWS_AS(lpf_step(c, 0.0, 1.0, 0.0), InvalidArgument);
}

TEST_CASE("composite duty is clamped and saturation is reported") {
    const auto a = composite_control(0.01, 0.02, 0.7);
    CHECK(a.duty == Approx(0.73));
    CHECK_FALSE(a.saturated);
    const auto hi = composite_control(0.3, 0.1, 0.7);
    CHECK(hi.duty == 0.95);
    CHECK(hi.saturated);
    const auto lo = composite_control(-0.6, -0.3, 0.7);
    CHECK(lo.duty == 0.0);
    CHECK(lo.saturated);
    CHECK_THROWS_AS(composite_control(0.0, 0.0, 1.0), InvalidArgument);
}

TEST_CASE("prediction error converges when the plant matches the reference model up to θ") {
    L1Config c = small_config();
    const Vec3 theta_true(1.0, -0.5, 0.8);
    const double dt = 1e-4;
    const Zoh z = zoh(c.a_m, dt);
    ControllerState st;
    Vec3 x(0.5, -0.2, 0.1);
    st.x_hat = x + Vec3(0.2, 0.2, 0.2);
    double early = 0.0;
    for (int k = 0; k < 200000; ++k) {
        const double u = l1_control(c, st, x, dt);
        // plant: ẋ = A_m x + b(u + θᵀx), same hold as the predictor
        const Vec3 x_next = z.phi * x + z.gam * (c.b * (u + theta_true.dot(x)));
        const Vec3 xh_next = predictor_step(c, st, x, {}, Vec3::Zero(), z);
        st.theta_hat = adaptive_step(c, st, x, st.x_hat, dt);
        x = x_next;
        st.x_hat = xh_next;
        if (k == 100) early = (st.x_hat - x).norm();
    }
    CHECK((st.x_hat - x).norm() < 1e-3 * early);
    CHECK(x.norm() < 1e-3);
}

TEST_CASE("Lyapunov value combines tracking and parameter error") {
    L1Config c;
    c.p = Mat3::Identity() * 2.0;
    c.gamma = 4.0;
    CHECK(lyapunov_value(c, Vec3(1.0, 0.0, 0.0), Vec3(2.0, 0.0, 0.0)) == Approx(2.0 + 1.0));
}
