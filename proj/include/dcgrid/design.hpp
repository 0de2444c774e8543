#pragma once

#include "dcgrid/baseline.hpp"
#include "dcgrid/certification.hpp"
#include "dcgrid/grid_model.hpp"
#include "dcgrid/l1_controller.hpp"
#include "dcgrid/linalg.hpp"
#include "dcgrid/table1.hpp"

#include <map>
#include <numbers>
#include <optional>
#include <vector>

namespace dcgrid {

struct NominalPlant {
    double l_t = table1::kNominalL;
    double c_t = table1::kNominalC;
    double r_t = table1::kNominalR;
    std::optional<double> duty;  // defaults to the true steady-state duty
};

struct BaselineSettings {
    enum class Method { lqi, poles };
    Method method = Method::lqi;
    Vec3 q_diag = Vec3(1e-2, 1e-5, 1e5);
    double r = 1e3;
    std::vector<Complex> poles;
};

struct L1Settings {
    bool enabled = true;
    std::vector<Complex> poles{Complex(-4e5), Complex(-8e5), Complex(-1.2e6)};
    double gamma = 1e6;
    double omega_c = 2.0 * std::numbers::pi * 500.0;
    std::optional<Vec3> theta_halfwidth;
    double epsilon_rel = 0.01;
    double proj_tolerance = 0.1;
    bool warm_start = false;
};

struct DesignSettings {
    NominalPlant nominal_default;
    std::map<NodeId, NominalPlant> nominal;
    BaselineSettings baseline;
    L1Settings l1;

    NominalPlant nominal_for(NodeId id) const {
        const auto it = nominal.find(id);
        return it == nominal.end() ? nominal_default : it->second;
    }
};

/// Settings matching the built-in six-DGU system, including its per-unit nominal duties.
inline DesignSettings table1_settings() {
    DesignSettings s;
    for (int k = 0; k < 6; ++k) {
        NominalPlant p;
        p.duty = table1::kNominalDuty[static_cast<std::size_t>(k)];
        s.nominal[k + 1] = p;
    }
    return s;
}

struct BalancedModel {
    Mat3 a_m = Mat3::Zero();
    Vec3 s = Vec3::Ones();  // diagonal of the balancing similarity
};

/// S · companion(poles) · S⁻¹ with S = diag(a², a, 1), a the geometric mean pole magnitude.
inline BalancedModel balanced_companion(const std::vector<Complex>& poles) {
    if (poles.size() != 3) throw InvalidArgument("A_m needs exactly three poles");
    for (const auto& p : poles)
        if (!(p.real() < 0.0)) throw InvalidArgument("A_m poles must lie in the open left half-plane");
    BalancedModel m;
    const double a = linalg::root_scale(poles);
    m.s = linalg::balancing_diagonal(a, 3);
    m.a_m = m.s.asDiagonal() * linalg::companion(linalg::poly_from_roots(poles)) * m.s.cwiseInverse().asDiagonal();
    return m;
}

/// Augmented nominal design model of one DGU (no line terms).
struct NominalModel {
    Mat3 a = Mat3::Zero();
    Vec3 b = Vec3::Zero();
};

inline NominalModel nominal_model(const DguParams& dgu, const NominalPlant& nom) {
    DguParams d = dgu;
    const double duty = nom.duty.value_or(1.0 - dgu.v_in / dgu.v_ref);
    d.l_t = nom.l_t;
    d.c_t = nom.c_t;
    d.r_t = nom.r_t;
    d.v_in = d.v_ref * (1.0 - duty);
    const auto s = linearize(d, compute_operating_point(d), {});
    return {s.a_ii_aug, s.b_i_aug};
}

inline BaselineGains design_baseline(const NominalModel& m, const BaselineSettings& b) {
    if (b.method == BaselineSettings::Method::poles) return synth_pole_place(m.a, m.b, b.poles);
    return synth_lqi(m.a, m.b, Mat3(b.q_diag.asDiagonal()), b.r);
}

/// Canonical coordinates z = M x̄ of the design: M = S·T, T from the nominal pair.
inline Mat3 canonical_map(const NominalModel& m, const BalancedModel& bm) {
    return bm.s.asDiagonal() * Mat3(linalg::canonical_transform(m.a, m.b));
}

/// Default Θ half-widths: 50% of the largest magnitude, over the six built-in
/// units, of each last-row coefficient of the true baseline closed loop
/// written in the balanced canonical coordinates.
inline Vec3 default_theta_halfwidth(const DesignSettings& settings) {
    const auto topo = table1::topology();
    const auto bm = balanced_companion(settings.l1.poles);
    const DesignSettings t1 = table1_settings();
    Vec3 w = Vec3::Zero();
    for (const auto& d : topo.dgus) {
        NominalPlant nom = t1.nominal_for(d.id);
        const NominalPlant user = settings.nominal_for(d.id);
        nom.l_t = user.l_t;
        nom.c_t = user.c_t;
        nom.r_t = user.r_t;
        const auto k = design_baseline(nominal_model(d, nom), settings.baseline);
        const auto s = linearize(topo, d.id);
        const Mat3 acl = s.a_ii_aug - s.b_i_aug * k.vec().transpose();
        const CVecX ev = linalg::eigenvalues(acl);
        const std::vector<Complex> roots(ev.data(), ev.data() + ev.size());
        const Mat3 canon = bm.s.asDiagonal() * linalg::companion(linalg::poly_from_roots(roots)) * bm.s.cwiseInverse().asDiagonal();
        w = w.cwiseMax(0.5 * canon.row(2).transpose().cwiseAbs());
    }
    return w;
}

struct DguDesign {
    NodeId id = 0;
    OperatingPoint op;
    NominalModel nominal;
    BaselineGains gains;
    Mat3 m = Mat3::Identity();
    Mat3 m_inv = Mat3::Identity();
    L1Config l1;
};

struct GridDesign {
    std::map<NodeId, DguDesign> dgus;
    CertReport report;
    Vec3 theta_halfwidth = Vec3::Zero();
};

inline CertInput cert_input(const MicrogridTopology& topo, NodeId id, const DesignSettings& settings,
                            const BalancedModel& bm, const Vec3& w) {
    CertInput in;
    in.id = id;
    in.a_m = bm.a_m;
    in.omega_c = settings.l1.omega_c;
    in.theta_max = theta_bound(-w, w);
    in.epsilon_rel = settings.l1.epsilon_rel;
    for (const auto& [j, aij] : linearize(topo, id).a_ij_aug) in.couplings.push_back(aij);
    return in;
}

inline std::vector<CertInput> cert_inputs(const MicrogridTopology& topo, const DesignSettings& settings) {
    const auto bm = balanced_companion(settings.l1.poles);
    const Vec3 w = settings.l1.theta_halfwidth.value_or(default_theta_halfwidth(settings));
    std::vector<CertInput> out;
    for (const auto& d : topo.dgus) out.push_back(cert_input(topo, d.id, settings, bm, w));
    return out;
}

inline DguDesign design_dgu(const MicrogridTopology& topo, NodeId id, const DesignSettings& settings,
                            const BalancedModel& bm, const Vec3& w, const CertRecord& rec) {
    const auto& d = topo.dgu(id);
    DguDesign g;
    g.id = id;
    g.op = compute_operating_point(d);
    g.nominal = nominal_model(d, settings.nominal_for(id));
    g.gains = design_baseline(g.nominal, settings.baseline);
    g.m = canonical_map(g.nominal, bm);
    g.m_inv = g.m.inverse();
    L1Config& c = g.l1;
    c.a_m = bm.a_m;
    c.gamma = settings.l1.gamma;
    c.omega_c = settings.l1.omega_c;
    c.theta_axes = w.cwiseMax(1e-300);
    c.theta_max = theta_bound(-w, w);
    c.proj_tolerance = settings.l1.proj_tolerance;
    c.n_i = rec.n_i;
    c.xi_sq = rec.xi_sq;
    c.epsilon = rec.epsilon;
    if (rec.are_pass || rec.p_min_eigenvalue > 0.0) {
        c.p = rec.p;
    } else {
        // uncertified unit: fall back to the decoupled Lyapunov certificate
        c.p = solve_local_are(bm.a_m, 0, 0.0, 1.0);
    }
    return g;
}

/// Designs every DGU of the topology and certifies the result.
inline GridDesign design_grid(const MicrogridTopology& topo, const DesignSettings& settings) {
    GridDesign gd;
    const auto bm = balanced_companion(settings.l1.poles);
    gd.theta_halfwidth = settings.l1.theta_halfwidth.value_or(default_theta_halfwidth(settings));
    std::vector<CertInput> inputs;
    for (const auto& d : topo.dgus) inputs.push_back(cert_input(topo, d.id, settings, bm, gd.theta_halfwidth));
    gd.report = certify(inputs);
    for (const auto& d : topo.dgus)
        gd.dgus[d.id] = design_dgu(topo, d.id, settings, bm, gd.theta_halfwidth, gd.report.record(d.id));
    return gd;
}

}  // namespace dcgrid
