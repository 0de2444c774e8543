// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>

using namespace dcgrid;
using oracle::Check;
using oracle::fmt;

namespace {

const std::filesystem::path kConfigs = DCGRID_CONFIG_DIR;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const EventWindow& window_at(const SimResult& r, double t0) {
    for (const auto& w : r.windows)
        if (std::abs(w.t0 - t0) < 1e-9) return w;
    throw std::runtime_error("no analysis window starting at t=" + fmt(t0));
}

struct Timed {
    SimResult result;
    double wall = 0.0;
    double t_end = 0.0;
};

Timed simulate(const std::string& file) {
    const auto cfg = load_config(kConfigs / file);
    const auto t0 = std::chrono::steady_clock::now();
    Simulator sim(cfg.grid, cfg.scenario, cfg.design);
    Timed out{sim.run(), 0.0, cfg.scenario.t_end};
    out.wall = seconds_since(t0);
    return out;
}

Check criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dgus = table1::dgus();
    double err = 0.0;
    for (std::size_t k = 0; k < dgus.size(); ++k)
        err = std::max(err, std::abs(compute_operating_point(dgus[k]).duty - table1::kDutyRow[k]));
    const double wall = seconds_since(t0);
    return {err <= 5e-4 && wall < 1e-3, "max |D - D_table| = " + fmt(err) + ", " + fmt(wall * 1e3) + " ms"};
}

Check criterion2() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = load_config(kConfigs / "table1_radial.toml");
    const auto design = design_grid(cfg.design_topology(), cfg.design);
    const double wall = seconds_since(t0);
    const auto& rep = design.report;
    bool ok = rep.global_pass && rep.records.size() == 6;
    double worst_res = 0.0, min_eig = 1e300, min_margin = 1e300, max_lambda = 0.0;
    for (const auto& r : rep.records) {
        ok = ok && r.are_residual < 1e-8 && r.p_min_eigenvalue > 0.0 && r.gamma > r.gamma_threshold && r.lambda < 1.0;
        worst_res = std::max(worst_res, r.are_residual);
        min_eig = std::min(min_eig, r.p_min_eigenvalue);
        min_margin = std::min(min_margin, r.gamma - r.gamma_threshold);
        max_lambda = std::max(max_lambda, r.lambda);
    }
    ok = ok && wall < 1.0;
    return {ok, "ARE residual " + fmt(worst_res) + ", min eig(P) " + fmt(min_eig) + ", min gamma margin " + fmt(min_margin) +
                    ", max lambda " + fmt(max_lambda) + ", " + fmt(wall) + " s"};
}

Check criteria3and4(Check& c4) {
    const auto run = simulate("scenario_pnp.toml");
    const auto& res = run.result;
    const auto t = res.trace.times();

    // plug-in window: every connected unit (including the new one) stays within ±2%
    const auto& w = window_at(res, 0.05);
    double worst_pct = 0.0, worst_settle = 0.0;
    bool settled = true;
    for (const auto& [id, m] : w.metrics) {
        const auto v = res.trace.voltage(id);
        const double vref = m.target;
        for (std::size_t k = 0; k < t.size(); ++k)
            if (t[k] >= w.t0 && t[k] <= w.t1) worst_pct = std::max(worst_pct, 100.0 * std::abs(v[k] - vref) / vref);
        worst_settle = std::max(worst_settle, m.settling_time);
        settled = settled && m.settled;
    }
    const bool has6 = w.metrics.count(6) == 1;
    const double wall_per_half_second = run.wall * 0.5 / run.t_end;
    const bool ok3 = has6 && worst_pct <= 2.0 && settled && worst_settle <= 50e-3 && wall_per_half_second < 60.0;

    const auto& wf = window_at(res, 0.15);
    const auto& m1 = wf.metrics.at(1);
    c4 = {m1.peak_deviation <= 2.0 && m1.settled && m1.settling_time <= 15e-3,
          "DGU1 peak deviation " + fmt(m1.peak_deviation) + " V, settling " + fmt(m1.settling_time * 1e3) + " ms"};
    return {ok3, "max |v - v_ref| " + fmt(worst_pct) + " %, max settling " + fmt(worst_settle * 1e3) + " ms, wall " +
                     fmt(wall_per_half_second) + " s per 0.5 s simulated"};
}

Check criterion5() {
    const auto run = simulate("scenario_load_step.toml");
    const auto& w = window_at(run.result, 0.3);
    const auto& m6 = w.metrics.at(6);
    double worst_settle = 0.0;
    bool settled = true;
    for (const auto& [id, m] : w.metrics) {
        worst_settle = std::max(worst_settle, m.settling_time);
        settled = settled && m.settled;
    }
    return {m6.overshoot_pct <= 12.0 && settled && worst_settle <= 60e-3,
            "DGU6 overshoot " + fmt(m6.overshoot_pct) + " %, max settling " + fmt(worst_settle * 1e3) + " ms"};
}

Check criterion6() {
    const auto run = simulate("scenario_ref_step.toml");
    const auto& w = window_at(run.result, 0.4);
    const auto& m5 = w.metrics.at(5);
    return {m5.settled && std::abs(m5.steady_state_error) < 1e-3 && std::abs(m5.target - 377.0) < 1e-12,
            "DGU5 steady-state error " + fmt(m5.steady_state_error * 1e3) + " mV, settling " + fmt(m5.settling_time * 1e3) +
                " ms"};
}

Check criterion7() {
    const auto run = simulate("scenario_bus.toml");
    const auto& res = run.result;
    auto worst = [&](double t0, double& settle) {
        settle = 0.0;
        bool ok = true;
        for (const auto& [id, m] : window_at(res, t0).metrics) {
            settle = std::max(settle, m.settling_time);
            ok = ok && m.settled;
        }
        return ok;
    };
    double s_in = 0.0, s_out = 0.0, s_load = 0.0;
    const bool a = worst(0.1, s_in) && s_in <= 40e-3;
    const bool b = worst(0.2, s_out) && s_out <= 60e-3;
    const bool c = worst(0.3, s_load) && s_load <= 30e-3;
    return {a && b && c && res.report.global_pass, "plug-in " + fmt(s_in * 1e3) + " ms, plug-out " + fmt(s_out * 1e3) +
                                                         " ms, 18 kW step " + fmt(s_load * 1e3) + " ms, certified " +
                                                         (res.report.global_pass ? "yes" : "no")};
}

Check criterion8() {
    const std::vector<std::pair<std::string, std::function<Check()>>> props{
        {"projection", [] { return oracle::projection_boundedness(); }},
        {"lyapunov", [] { return oracle::lyapunov_nonincrease(); }},
        {"decoupling", [] { return oracle::decoupling_limit(); }},
        {"kron", [] { return oracle::kron_corpus(kConfigs); }},
        {"rk4", [] { return oracle::rk4_order(); }},
        {"l1norm", [] { return oracle::l1_norm_scalar(); }},
        {"are", [] { return oracle::scalar_are(); }},
        {"min_distance", [] { return oracle::min_distance_normal(); }},
    };
    bool ok = true;
    std::string detail;
    for (const auto& [name, f] : props) {
        Check c;
        try {
            c = f();
        } catch (const std::exception& e) {
            c = {false, std::string("threw: ") + e.what()};
        }
        ok = ok && c.pass;
        detail += "\n    " + name + ": " + (c.pass ? "ok" : "FAILED") + " (" + c.detail + ")";
    }
    return {ok, detail};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int n, const std::string& what, const std::function<Check()>& f) {
        Check c;
        try {
            c = f();
        } catch (const std::exception& e) {
            c = {false, std::string("threw: ") + e.what()};
        }
        if (!c.pass) ++failures;
        std::cout << "criterion " << n << ": " << (c.pass ? "PASS" : "FAIL") << "  " << what << "  [" << c.detail << "]"
                  << std::endl;
    };

    report(1, "operating-point duty cycles", criterion1);
    report(2, "six-unit certification", criterion2);
    Check c4{false, "not run"};
    report(3, "plug-in stability", [&] { return criteria3and4(c4); });
    report(4, "topology change", [&] { return c4; });
    report(5, "load step", criterion5);
    report(6, "reference step", criterion6);
    report(7, "bus-connected suite", criterion7);
    report(8, "property suite", criterion8);
    report(9, "certification locality", [] { return oracle::locality(); });
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
