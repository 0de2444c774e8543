#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace dcgrid;
using Catch::Approx;

namespace {

DguParams unit(NodeId id) {
    auto d = table1::dgus()[0];
    d.id = id;
    return d;
}

BusNetwork star(std::vector<double> r, double g_bus) {
    BusNetwork net;
    const NodeId bus = static_cast<NodeId>(r.size()) + 1;
    for (std::size_t k = 0; k < r.size(); ++k) {
        net.dgus.push_back(unit(static_cast<NodeId>(k + 1)));
        net.branches.emplace_back(static_cast<NodeId>(k + 1), bus, r[k], 10e-6 * (k + 1));
    }
    net.bus_nodes.push_back({bus, g_bus, 0.0});
    return net;
}

}  // namespace

TEST_CASE("DGU validation rejects non-physical parameters") {
    auto d = unit(1);
    REQUIRE_NOTHROW(d.validate());
    auto bad = d;
    bad.l_t = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = d;
    bad.c_t = -1e-6;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = d;
    bad.v_in = 400.0;  // boost cannot step down
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = d;
    bad.p_load = -1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("topology rejects bad lines") {
    MicrogridTopology t;
    t.add_dgu(unit(1));
    t.add_dgu(unit(2));
    CHECK_THROWS_AS(t.add_dgu(unit(2)), InvalidArgument);
    CHECK_THROWS_AS(t.add_line({1, 1, 1.0, 1e-6}), InvalidArgument);
    CHECK_THROWS_AS(t.add_line({1, 3, 1.0, 1e-6}), InvalidArgument);
    CHECK_THROWS_AS(t.add_line({1, 2, 0.0, 1e-6}), InvalidArgument);
    t.add_line({2, 1, 1.0, 1e-6});
    CHECK_THROWS_AS(t.add_line({1, 2, 2.0, 1e-6}), InvalidArgument);
    // stored with ordered endpoints and found from either side
    CHECK(t.lines.front().a == 1);
    CHECK(t.lines.front().b == 2);
    CHECK(t.find_line(2, 1) != nullptr);
}

TEST_CASE("neighbor map of the six-unit grid is symmetric") {
    const auto t = table1::topology();
    const auto m = t.neighbor_map();
    REQUIRE(m.size() == 6);
    std::size_t edges = 0;
    for (const auto& [i, ns] : m) {
        edges += ns.size();
        for (NodeId j : ns) CHECK(m.at(j).count(i) == 1);
    }
    CHECK(edges == 2 * t.lines.size());
    CHECK(m.at(1) == std::set<NodeId>{2, 3, 6});
}

TEST_CASE("operating point of a lossless boost stage") {
    const auto dgus = table1::dgus();
    const auto op1 = compute_operating_point(dgus[0]);
    CHECK(op1.i_t_bar == Approx(2500.0 / 95.0).epsilon(5e-3));
    for (const auto& d : dgus) {
        const auto op = compute_operating_point(d);
        CHECK(std::abs(d.v_in / (1.0 - op.duty) - d.v_ref) < 1e-9);
        // input power equals load power
        CHECK(op.i_t_bar * d.v_in == Approx(d.p_load).epsilon(1e-12));
    }
    auto idle = dgus[0];
    idle.p_load = 0.0;
    CHECK(compute_operating_point(idle).i_t_bar == 0.0);
}

TEST_CASE("linear model matches finite differences of the averaged equations") {
    const auto t = table1::topology();
    const auto& d = t.dgu(1);
    const auto op = compute_operating_point(d);
    const auto s = linearize(t, 1);

    CHECK(s.b_i[0] == Approx(1.338e7).epsilon(1e-3));
    CHECK(s.a_ij_aug.at(2)(1, 1) == Approx(5.3148e4).epsilon(1e-4));

    // The load current is an exogenous disturbance, so it is frozen here and
    // only the line currents respond to v.
    DguParams noload = d;
    noload.p_load = 0.0;
    const double i_load = d.p_load / d.v_ref;
    auto rhs = [&](double i, double v, double duty, std::map<NodeId, double> vn) {
        double inj = -i_load;
        for (const auto& [line, other] : t.neighbors(1)) inj += (vn.at(other.id) - v) / line.r;
        return oracle::dgu_rhs(noload, i, v, duty, inj);
    };
    std::map<NodeId, double> vn;
    for (const auto& [line, other] : t.neighbors(1)) vn[other.id] = d.v_ref;

    const double hi = 1e-4, hv = 1e-3, hd = 1e-7;
    const Vec2 di = (rhs(op.i_t_bar + hi, d.v_ref, op.duty, vn) - rhs(op.i_t_bar - hi, d.v_ref, op.duty, vn)) / (2 * hi);
    const Vec2 dv = (rhs(op.i_t_bar, d.v_ref + hv, op.duty, vn) - rhs(op.i_t_bar, d.v_ref - hv, op.duty, vn)) / (2 * hv);
    const Vec2 dd = (rhs(op.i_t_bar, d.v_ref, op.duty + hd, vn) - rhs(op.i_t_bar, d.v_ref, op.duty - hd, vn)) / (2 * hd);
    auto rel = [](const Vec2& a, const Vec2& b) { return (a - b).norm() / b.norm(); };
    CHECK(rel(di, s.a_ii.col(0)) < 1e-6);
    CHECK(rel(dv, s.a_ii.col(1)) < 1e-6);
    CHECK(rel(dd, s.b_i) < 1e-6);

    for (const auto& [j, aij] : s.a_ij_aug) {
        auto up = vn, dn = vn;
        up[j] += hv;
        dn[j] -= hv;
        const Vec2 dj = (rhs(op.i_t_bar, d.v_ref, op.duty, up) - rhs(op.i_t_bar, d.v_ref, op.duty, dn)) / (2 * hv);
        CHECK(std::abs(dj[0]) < 1e-9);
        CHECK(dj[1] == Approx(aij(1, 1)).epsilon(1e-6));
    }
    // the operating point is the lossless one: only the r_t drop is left over
    const Vec2 f0 = rhs(op.i_t_bar, d.v_ref, op.duty, vn);
    CHECK(f0[0] == Approx(-d.r_t * op.i_t_bar / d.l_t).epsilon(1e-9));
    CHECK(std::abs(f0[1]) < 1e-9 * std::abs(s.b_i[0]));
}

TEST_CASE("global closed loop of the six-unit grid with baseline gains is Hurwitz") {
    const auto t = table1::topology();
    const auto design = design_grid(t, table1_settings());
    std::map<NodeId, SmallSignalModel> models;
    std::map<NodeId, Vec3> gains;
    for (const auto& d : t.dgus) {
        models[d.id] = linearize(t, d.id);
        gains[d.id] = design.dgus.at(d.id).gains.vec();
    }
    const MatX g = assemble_global(t, models, gains);
    REQUIRE(g.rows() == 18);
    CHECK(linalg::is_hurwitz(g));
    gains.erase(3);
    CHECK_THROWS_AS(assemble_global(t, models, gains), InvalidArgument);
}

TEST_CASE("Kron reduction of a star agrees with nodal analysis") {
    for (double g_bus : {0.0, 0.1}) {
        const auto net = star({1.0, 2.0, 3.0}, g_bus);
        const auto c = oracle::kron_matches_nodal_analysis(net);
        INFO(c.detail);
        CHECK(c.pass);
        const auto k = kron_reduce(net);
        CHECK(k.topology.lines.size() == 3);
        // Y-Δ: r_ab = (r_a r_b + r_b r_c + r_c r_a) / r_c when the bus is unloaded
        if (g_bus == 0.0) CHECK(k.topology.find_line(1, 2)->r == Approx(11.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("Kron reduction of two series branches adds resistances and inductances") {
    auto net = star({0.5, 1.0}, 0.0);
    const auto k = kron_reduce(net);
    REQUIRE(k.topology.lines.size() == 1);
    CHECK(k.topology.lines[0].r == Approx(1.5).epsilon(1e-12));
    CHECK(k.topology.lines[0].l == Approx(30e-6).epsilon(1e-12));
    CHECK(k.i_injection.norm() == 0.0);
}

TEST_CASE("Kron reduction turns a bus current draw into DGU-side loads") {
    auto net = star({1.0, 3.0}, 0.0);
    net.bus_nodes[0].i_load = 8.0;
    const auto c = oracle::kron_matches_nodal_analysis(net);
    INFO(c.detail);
    CHECK(c.pass);
    const auto k = kron_reduce(net);
    // current divider: the lower-resistance side supplies 3/4
    CHECK(k.topology.dgu(1).i_load == Approx(6.0).epsilon(1e-12));
    CHECK(k.topology.dgu(2).i_load == Approx(2.0).epsilon(1e-12));
}

TEST_CASE("Kron reduction rejects a disconnected bus network") {
    auto net = star({1.0, 2.0}, 0.0);
    net.bus_nodes.push_back({7, 0.01, 0.0});
    CHECK_THROWS_AS(kron_reduce(net), DisconnectedNetworkError);
    auto net2 = star({1.0, 2.0}, 0.0);
    net2.dgus.push_back(unit(9));
    CHECK_THROWS_AS(kron_reduce(net2), DisconnectedNetworkError);
}
