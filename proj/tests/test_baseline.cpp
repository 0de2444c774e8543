#include "dcgrid/dcgrid.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace dcgrid;
using Catch::Approx;

namespace {

NominalModel table1_nominal(NodeId id) {
    const auto t = table1::topology();
    return nominal_model(t.dgu(id), table1_settings().nominal_for(id));
}

}  // namespace

TEST_CASE("scalar LQR gain") {
    // ẋ = x + u, q = 3, r = 1 → p = 3, k = 3
    MatX a(1, 1), q(1, 1);
    a << 1.0;
    q << 3.0;
    VecX b(1);
    b << 1.0;
    CHECK(lqr_gain(a, b, q, 1.0)(0) == Approx(3.0).epsilon(1e-12));
    CHECK_THROWS_AS(lqr_gain(a, b, q, 0.0), InvalidArgument);
    q << -1.0;
    CHECK_THROWS_AS(lqr_gain(a, b, q, 1.0), InvalidArgument);
}

TEST_CASE("LQR stabilizes random controllable plants") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    int tried = 0;
    while (tried < 25) {
        MatX a(3, 3);
        VecX b(3);
        for (int i = 0; i < 3; ++i) {
            b[i] = nd(rng);
            for (int j = 0; j < 3; ++j) a(i, j) = 2.0 * nd(rng);
        }
        if (!linalg::is_controllable(a, b)) continue;
        ++tried;
        const auto k = lqr_gain(a, b, MatX::Identity(3, 3), 0.5);
        CHECK(linalg::is_hurwitz(a - b * k));
    }
}

TEST_CASE("LQI on the nominal six-unit models gives Hurwitz loops") {
    SECTION("unit state weights leave a slow integral pole") {
        const Mat3 q = Vec3(1.0, 100.0, 1000.0).asDiagonal();
        for (NodeId id = 1; id <= 6; ++id) {
            const auto m = table1_nominal(id);
            const auto k = synth_lqi(m.a, m.b, q, 1.0);
            const CVecX ev = linalg::eigenvalues(m.a - m.b * k.vec().transpose());
            double slowest = 1e300;
            for (Eigen::Index e = 0; e < ev.size(); ++e) {
                CHECK(ev[e].real() < 0.0);
                slowest = std::min(slowest, std::abs(ev[e]));
            }
            // the integral pole lands near sqrt(q_xi / q_v) rad/s
            CHECK(slowest == Approx(std::sqrt(1000.0 / 100.0)).epsilon(1e-3));
        }
    }
    SECTION("default weights put every pole above 100 rad/s") {
        for (NodeId id = 1; id <= 6; ++id) {
            const auto m = table1_nominal(id);
            const auto k = design_baseline(m, BaselineSettings{});
            const CVecX ev = linalg::eigenvalues(m.a - m.b * k.vec().transpose());
            for (Eigen::Index e = 0; e < ev.size(); ++e) {
                CHECK(ev[e].real() < 0.0);
                CHECK(std::abs(ev[e]) > 100.0);
            }
        }
    }
}

TEST_CASE("default baseline weights stabilize every unit on its own plant") {
    const auto t = table1::topology();
    const auto design = design_grid(t, table1_settings());
    for (const auto& d : t.dgus) {
        const auto s = linearize(t, d.id);
        const Vec3 k = design.dgus.at(d.id).gains.vec();
        CHECK(linalg::is_hurwitz(s.a_ii_aug - s.b_i_aug * k.transpose()));
        // and with every line removed
        const auto iso = linearize(d, compute_operating_point(d), {});
        CHECK(linalg::is_hurwitz(iso.a_ii_aug - iso.b_i_aug * k.transpose()));
    }
}

TEST_CASE("pole placement hits the requested poles") {
    const auto m = table1_nominal(1);
    const std::vector<Complex> poles{Complex(-1.0), Complex(-2.0), Complex(-3.0)};
    const auto k = synth_pole_place(m.a, m.b, poles);
    const CVecX ev = linalg::eigenvalues(m.a - m.b * k.vec().transpose());
    std::vector<double> re;
    for (Eigen::Index e = 0; e < ev.size(); ++e) {
        CHECK(std::abs(ev[e].imag()) < 1e-6);
        re.push_back(ev[e].real());
    }
    std::sort(re.begin(), re.end());
    CHECK(re[0] == Approx(-3.0).epsilon(1e-6));
    CHECK(re[1] == Approx(-2.0).epsilon(1e-6));
    CHECK(re[2] == Approx(-1.0).epsilon(1e-6));

    const std::vector<Complex> cplx{Complex(-500.0, 300.0), Complex(-500.0, -300.0), Complex(-800.0)};
    const auto k2 = synth_pole_place(m.a, m.b, cplx);
    const CVecX ev2 = linalg::eigenvalues(m.a - m.b * k2.vec().transpose());
    for (const auto& p : cplx) {
        double best = 1e300;
        for (Eigen::Index e = 0; e < ev2.size(); ++e) best = std::min(best, std::abs(ev2[e] - p));
        CHECK(best < 1e-6 * std::abs(p));
    }

    const std::vector<Complex> open{Complex(-1.0, 1.0), Complex(-2.0, 1.0), Complex(-3.0)};
    CHECK_THROWS_AS(synth_pole_place(m.a, m.b, open), InvalidArgument);
}

TEST_CASE("uncontrollable pairs are rejected") {
    Mat3 a = Mat3::Zero();
    a(0, 0) = -1.0;
    a(1, 1) = -2.0;
    a(2, 2) = -3.0;
    const Vec3 b(1.0, 1.0, 0.0);
    CHECK_THROWS_AS(synth_lqi(a, b, Mat3::Identity(), 1.0), UncontrollableError);
    CHECK_THROWS_AS(synth_pole_place(a, b, {Complex(-1.0), Complex(-2.0), Complex(-4.0)}), UncontrollableError);
}

TEST_CASE("closed-loop Lyapunov function decays monotonically from a voltage offset") {
    const auto m = table1_nominal(2);
    const auto k = design_baseline(m, BaselineSettings{});
    const Mat3 acl = m.a - m.b * k.vec().transpose();
    const MatX x = linalg::solve_lyapunov(acl, Mat3::Identity());
    const Mat3 step = linalg::expm(acl * 20e-6);
    Vec3 s(0.0, 1.0, 0.0);
    double v = s.dot(x * s);
    for (int n = 0; n < 5000; ++n) {
        s = step * s;
        const double next = s.dot(x * s);
        REQUIRE(next < v);
        v = next;
    }
    CHECK(std::abs(s[1]) < 1e-3);
}

TEST_CASE("integral action removes the steady-state voltage error under a load disturbance") {
    for (NodeId id = 1; id <= 6; ++id) {
        const auto t = table1::topology();
        const auto& d = t.dgu(id);
        const auto iso = linearize(d, compute_operating_point(d), {});
        const auto k = design_baseline(table1_nominal(id), BaselineSettings{});
        const Mat3 acl = iso.a_ii_aug - iso.b_i_aug * k.vec().transpose();
        const Vec3 e(iso.e_i[0], iso.e_i[1], 0.0);
        // equilibrium for a 5 A step in the load current
        const Vec3 x = acl.fullPivLu().solve(-e * 5.0);
        CHECK(std::abs(x[1]) < 1e-9);
        CHECK(std::abs(x[0]) > 0.0);
    }
}

TEST_CASE("baseline control law is −K x") {
    const BaselineGains k{1.0, 2.0, -3.0};
    CHECK(baseline_control(k, Vec3(1.0, 1.0, 1.0)) == Approx(0.0));
    CHECK(baseline_control(k, Vec3(1.0, 0.0, 0.0)) == Approx(-1.0));
    CHECK_THROWS_AS(BaselineGains::from(VecX::Ones(2)), InvalidArgument);
}
