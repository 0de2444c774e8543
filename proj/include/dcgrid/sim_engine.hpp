#pragma once

#include "dcgrid/baseline.hpp"
#include "dcgrid/core.hpp"
#include "dcgrid/design.hpp"
#include "dcgrid/grid_model.hpp"
#include "dcgrid/l1_controller.hpp"
#include "dcgrid/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace dcgrid {

enum class LineModel { dynamic, qsl };
enum class PlantMode { nonlinear, linear };
enum class ControlMode { l1, baseline, open_loop };

inline std::string to_string(LineModel m) { return m == LineModel::dynamic ? "dynamic" : "qsl"; }

/// Piecewise-linear current table, time measured from the event that installs it.
/// Holds the last value after the final breakpoint.
struct LoadProfile {
    std::vector<double> t;
    std::vector<double> i;

    double at(double tau) const {
        if (t.empty()) return 0.0;
        if (tau <= t.front()) return i.front();
        if (tau >= t.back()) return i.back();
        const auto it = std::upper_bound(t.begin(), t.end(), tau);
        const auto k = static_cast<std::size_t>(it - t.begin());
        const double w = (tau - t[k - 1]) / (t[k] - t[k - 1]);
        return i[k - 1] + w * (i[k] - i[k - 1]);
    }

    void validate() const {
        if (t.size() != i.size() || t.empty()) throw InvalidArgument("load profile needs matching, non-empty t and i tables");
        for (std::size_t k = 1; k < t.size(); ++k)
            if (!(t[k] > t[k - 1])) throw InvalidArgument("load profile times must increase strictly");
    }
};

struct SimEvent {
    enum class Kind { plug_in, plug_out, line_fault, line_restore, load_step, ref_step, load_profile };
    double t = 0.0;
    Kind kind = Kind::load_step;
    NodeId node = 0;
    NodeId node_b = 0;  // second endpoint for line events
    double value = 0.0;  // W for load steps, V for reference steps
    LoadProfile profile;
};

inline std::string to_string(SimEvent::Kind k) {
    switch (k) {
        case SimEvent::Kind::plug_in: return "plug_in";
        case SimEvent::Kind::plug_out: return "plug_out";
        case SimEvent::Kind::line_fault: return "line_fault";
        case SimEvent::Kind::line_restore: return "line_restore";
        case SimEvent::Kind::load_step: return "load_step";
        case SimEvent::Kind::ref_step: return "ref_step";
        case SimEvent::Kind::load_profile: return "load_profile";
    }
    return "unknown";
}

inline std::string describe(const SimEvent& e) {
    std::ostringstream os;
    const bool line = e.kind == SimEvent::Kind::line_fault || e.kind == SimEvent::Kind::line_restore;
    os << to_string(e.kind) << (line ? " line " : " node ") << e.node;
    if (line) os << "-" << e.node_b;
    if (e.kind == SimEvent::Kind::load_step || e.kind == SimEvent::Kind::ref_step) os << " -> " << e.value;
    os << " at t=" << e.t;
    return os.str();
}

struct Scenario {
    LineModel line_model = LineModel::dynamic;
    PlantMode plant = PlantMode::nonlinear;
    ControlMode control = ControlMode::l1;
    double t_end = 0.5;
    double dt_plant = 1e-6;
    double dt_ctrl = 40e-6;
    int record_stride = 1;  // in control ticks
    std::vector<SimEvent> events;
    std::set<NodeId> initially_inactive;
    std::set<std::pair<NodeId, NodeId>> initially_faulted;

    int substeps() const {
        const double r = dt_ctrl / dt_plant;
        const auto n = static_cast<int>(std::llround(r));
        if (n < 1 || std::abs(r - n) > 1e-9 * r) throw InvalidArgument("dt_ctrl must be an integer multiple of dt_plant");
        return n;
    }

    void validate() const {
        if (!(t_end >= 0.0)) throw InvalidArgument("t_end must be non-negative");
        if (!(dt_plant > 0.0) || !(dt_ctrl > 0.0)) throw InvalidArgument("time steps must be positive");
        if (dt_plant > dt_ctrl) throw InvalidArgument("dt_plant must not exceed dt_ctrl");
        substeps();
        if (record_stride < 1) throw InvalidArgument("record_stride must be at least 1");
        for (std::size_t k = 1; k < events.size(); ++k)
            if (events[k].t < events[k - 1].t) throw InvalidArgument("events must be sorted by time");
        for (const auto& e : events)
            if (e.kind == SimEvent::Kind::load_profile) e.profile.validate();
    }
};

/// Physical network the plant runs on. Without bus nodes it is a load-connected
/// topology; with bus nodes the branches are solved algebraically.
struct Grid {
    std::vector<DguParams> dgus;
    std::vector<BusNode> buses;
    std::vector<LineParams> lines;

    static Grid from(const MicrogridTopology& t) { return {t.dgus, {}, t.lines}; }
    static Grid from(const BusNetwork& n) { return {n.dgus, n.bus_nodes, n.branches}; }

    bool has_buses() const { return !buses.empty(); }

    BusNetwork as_bus_network() const { return {dgus, buses, lines}; }

    /// Load-connected topology the controllers are designed on.
    MicrogridTopology design_topology() const {
        if (!has_buses()) {
            MicrogridTopology t;
            for (const auto& d : dgus) t.add_dgu(d);
            for (const auto& l : lines) t.add_line(l);
            return t;
        }
        return kron_reduce(as_bus_network()).topology;
    }
};

struct DguSample {
    double v_dc = 0.0;
    double i_t = 0.0;
    double duty = 0.0;
    double u_l1 = 0.0;
    double x_tilde = 0.0;
    double theta = 0.0;
};

struct TraceRecord {
    double t = 0.0;
    std::vector<DguSample> dgus;
};

struct Trace {
    std::vector<NodeId> ids;
    std::vector<TraceRecord> records;

    std::size_t column(NodeId id) const {
        for (std::size_t k = 0; k < ids.size(); ++k)
            if (ids[k] == id) return k;
        throw InvalidArgument("trace has no DGU " + std::to_string(id));
    }
    std::vector<double> times() const {
        std::vector<double> t;
        t.reserve(records.size());
        for (const auto& r : records) t.push_back(r.t);
        return t;
    }
    std::vector<double> voltage(NodeId id) const {
        const auto c = column(id);
        std::vector<double> v;
        v.reserve(records.size());
        for (const auto& r : records) v.push_back(r.dgus[c].v_dc);
        return v;
    }

    void write_csv(std::ostream& os) const {
        os << "t";
        for (NodeId id : ids)
            os << ",v_dc_" << id << ",i_t_" << id << ",duty_" << id << ",u_l1_" << id << ",x_tilde_" << id << ",theta_" << id;
        os << "\n";
        os << std::setprecision(9);
        for (const auto& r : records) {
            os << r.t;
            for (const auto& s : r.dgus)
                os << "," << s.v_dc << "," << s.i_t << "," << s.duty << "," << s.u_l1 << "," << s.x_tilde << "," << s.theta;
            os << "\n";
        }
    }
};

/// Thrown when the state becomes non-finite or runs away; carries the trace up to the last good step.
class SimulationDiverged : public DivergenceError {
public:
    SimulationDiverged(const std::string& what, Trace last_good, double t_fail)
        : DivergenceError(what), trace(std::move(last_good)), t(t_fail) {}
    Trace trace;
    double t;
};

struct EventWindow {
    double t0 = 0.0;
    double t1 = 0.0;
    std::string label;
    std::map<NodeId, TransientMetrics> metrics;
};

struct SimResult {
    Trace trace;
    std::vector<EventWindow> windows;
    std::vector<std::string> warnings;
    CertReport report;
};

/// Per-DGU controller bookkeeping owned by the simulator.
struct DguRuntime {
    ControllerState ctl;
    double duty = 0.0;
    bool active = true;
    bool predictor_ready = false;
    Vec3 z_prev = Vec3::Zero();
    Vec3 d_prev = Vec3::Zero();
    std::optional<Vec3> theta_saved;
    double v_ref = 0.0;
    double g_load = 0.0;
    double i_const = 0.0;
    std::optional<std::pair<double, LoadProfile>> profile;
};

class Simulator {
public:
    Simulator(Grid grid, Scenario scenario, DesignSettings settings = {})
        : grid_(std::move(grid)), sc_(std::move(scenario)), settings_(std::move(settings)) {
        init();
    }

    const Grid& grid() const { return grid_; }
    const Scenario& scenario() const { return sc_; }
    const GridDesign& design() const { return design_; }
    double time() const { return static_cast<double>(step_) * sc_.dt_plant; }
    const std::vector<double>& state() const { return x_; }
    bool dgu_active(NodeId id) const { return rt_[dgu_index(id)].active; }
    bool line_active(NodeId a, NodeId b) const { return line_on_[line_index(a, b)]; }
    const DguRuntime& runtime(NodeId id) const { return rt_[dgu_index(id)]; }

    double v_dc(NodeId id) const { return x_[2 * dgu_index(id) + 1]; }
    double i_t(NodeId id) const { return x_[2 * dgu_index(id)]; }

    /// Signed line current flowing from `from` into `to` (A); I(a,b) = −I(b,a).
    double line_current(NodeId from, NodeId to) const {
        const std::size_t k = line_index(from, to);
        if (!line_on_[k]) return 0.0;
        const auto& l = grid_.lines[k];
        double i_ab;
        if (dynamic_lines()) {
            i_ab = x_[2 * nd_ + k];
        } else {
            const auto vn = node_voltages(x_, time());
            i_ab = (vn.at(l.a) - vn.at(l.b)) / l.r;
        }
        return from == l.a ? i_ab : -i_ab;
    }

    /// Σ R i² over converter parasitics and active lines (W).
    double resistive_dissipation() const {
        double p = 0.0;
        for (std::size_t k = 0; k < nd_; ++k)
            if (rt_[k].active) p += grid_.dgus[k].r_t * x_[2 * k] * x_[2 * k];
        for (std::size_t k = 0; k < grid_.lines.size(); ++k) {
            if (!line_on_[k]) continue;
            const double i = line_current(grid_.lines[k].a, grid_.lines[k].b);
            p += grid_.lines[k].r * i * i;
        }
        return p;
    }

    /// Plant right-hand side for the given state and duties at time t.
    std::vector<double> plant_derivatives(const std::vector<double>& x, const std::vector<double>& duty, double t) const {
        std::vector<double> dx(x.size(), 0.0);
        if (sc_.plant == PlantMode::linear) {
            linear_derivatives(x, duty, t, dx);
            return dx;
        }
        std::vector<double> inj(nd_, 0.0);
        if (dynamic_lines()) {
            for (std::size_t k = 0; k < grid_.lines.size(); ++k) {
                if (!line_on_[k]) continue;
                const auto& l = grid_.lines[k];
                const std::size_t a = dgu_index(l.a), b = dgu_index(l.b);
                const double i_ab = x[2 * nd_ + k];
                dx[2 * nd_ + k] = (x[2 * a + 1] - x[2 * b + 1] - l.r * i_ab) / l.l;
                inj[a] -= i_ab;
                inj[b] += i_ab;
            }
        } else {
            network_injections(x, t, inj);
        }
        for (std::size_t k = 0; k < nd_; ++k) {
            if (!rt_[k].active) continue;
            const auto& d = grid_.dgus[k];
            const double it = x[2 * k], v = x[2 * k + 1];
            const double m = 1.0 - duty[k];
            dx[2 * k] = (d.v_in - m * v - d.r_t * it) / d.l_t;
            dx[2 * k + 1] = (m * it + inj[k] - load_current(k, v, t)) / d.c_t;
        }
        return dx;
    }

    void apply_event(const SimEvent& e) {
        using K = SimEvent::Kind;
        switch (e.kind) {
            case K::plug_in: {
                const std::size_t k = dgu_index(e.node);
                if (rt_[k].active) throw InvalidArgument("plug-in of already active DGU " + std::to_string(e.node));
                rt_[k].active = true;
                precharge(k);
                for (std::size_t l = 0; l < grid_.lines.size(); ++l)
                    if (grid_.lines[l].touches(e.node)) line_on_[l] = lines_allowed(l);
                break;
            }
            case K::plug_out: {
                const std::size_t k = dgu_index(e.node);
                if (!rt_[k].active) throw InvalidArgument("plug-out of inactive DGU " + std::to_string(e.node));
                rt_[k].active = false;
                rt_[k].theta_saved = rt_[k].ctl.theta_hat;
                for (std::size_t l = 0; l < grid_.lines.size(); ++l)
                    if (grid_.lines[l].touches(e.node)) set_line(l, false);
                break;
            }
            case K::line_fault: {
                const std::size_t l = line_index(e.node, e.node_b);
                if (faulted_[l]) throw InvalidArgument("line " + std::to_string(e.node) + "-" + std::to_string(e.node_b) + " is already faulted");
                faulted_[l] = true;
                set_line(l, false);
                break;
            }
            case K::line_restore: {
                const std::size_t l = line_index(e.node, e.node_b);
                if (!faulted_[l]) throw InvalidArgument("line " + std::to_string(e.node) + "-" + std::to_string(e.node_b) + " is not faulted");
                faulted_[l] = false;
                set_line(l, lines_allowed(l));
                break;
            }
            case K::load_step: {
                if (!(e.value >= 0.0)) throw InvalidArgument("load step power must be non-negative");
                if (auto k = find_dgu(e.node)) {
                    rt_[*k].g_load = e.value / (nominal_v_[*k] * nominal_v_[*k]);
                } else {
                    auto& b = grid_.buses[bus_index(e.node)];
                    b.g_load = e.value / (kBusVoltage * kBusVoltage);
                }
                break;
            }
            case K::ref_step: {
                const std::size_t k = dgu_index(e.node);
                if (!(e.value > grid_.dgus[k].v_in)) throw InvalidArgument("reference must exceed the input voltage");
                rt_[k].v_ref = e.value;
                break;
            }
            case K::load_profile: {
                e.profile.validate();
                if (auto k = find_dgu(e.node))
                    rt_[*k].profile = std::make_pair(e.t, e.profile);
                else
                    bus_profile_[bus_index(e.node)] = std::make_pair(e.t, e.profile);
                break;
            }
        }
        refresh_network();
    }

    /// Advances one plant step (running the controllers first on a control tick).
    void step() {
        const double t = time();
        while (next_event_ < sc_.events.size() && sc_.events[next_event_].t <= t + 1e-12) {
            const auto& e = sc_.events[next_event_];
            try {
                apply_event(e);
            } catch (const InvalidArgument& err) {
                throw InvalidArgument(std::string(err.what()) + " (event: " + describe(e) + ")");
            }
            ++next_event_;
        }
        if (step_ % substeps_ == 0) {
            control_tick();
            if ((step_ / substeps_) % sc_.record_stride == 0) record();
        }
        rk4(t);
        ++step_;
        check_finite();
    }

    SimResult run() {
        sc_.validate();
        const auto n_steps = static_cast<long long>(std::llround(sc_.t_end / sc_.dt_plant));
        while (step_ < n_steps) step();
        if (n_steps > 0 && step_ % substeps_ == 0) {
            // final sample at t_end
            const double t = time();
            while (next_event_ < sc_.events.size() && sc_.events[next_event_].t <= t + 1e-12) apply_event(sc_.events[next_event_++]);
            control_tick();
            record();
        }
        SimResult res;
        res.trace = trace_;
        res.warnings = warnings_;
        res.report = design_.report;
        res.windows = event_windows();
        return res;
    }

    const Trace& trace() const { return trace_; }

    static constexpr double kBusVoltage = 380.0;

private:
    Grid grid_;
    Scenario sc_;
    DesignSettings settings_;
    GridDesign design_;
    std::size_t nd_ = 0;
    std::vector<double> x_;
    std::vector<DguRuntime> rt_;
    std::vector<double> nominal_v_;
    std::vector<bool> line_on_;
    std::vector<bool> faulted_;
    std::vector<std::optional<std::pair<double, LoadProfile>>> bus_profile_;
    std::vector<std::vector<NeighborPrediction>> coupling_;  // per DGU, aligned with coupling_src_
    std::vector<std::vector<std::size_t>> coupling_src_;
    std::vector<SmallSignalModel> linear_models_;
    Eigen::FullPivLU<MatX> ybb_lu_;
    std::map<NodeId, std::size_t> bus_pos_;
    Zoh zoh_;
    int substeps_ = 1;
    long long step_ = 0;
    std::size_t next_event_ = 0;
    Trace trace_;
    std::vector<std::string> warnings_;
    std::vector<double> t_events_applied_;

    bool dynamic_lines() const {
        return sc_.plant == PlantMode::nonlinear && sc_.line_model == LineModel::dynamic && !grid_.has_buses();
    }

    std::optional<std::size_t> find_dgu(NodeId id) const {
        for (std::size_t k = 0; k < nd_; ++k)
            if (grid_.dgus[k].id == id) return k;
        return std::nullopt;
    }
    std::size_t dgu_index(NodeId id) const {
        if (auto k = find_dgu(id)) return *k;
        throw InvalidArgument("unknown DGU " + std::to_string(id));
    }
    std::size_t bus_index(NodeId id) const {
        for (std::size_t k = 0; k < grid_.buses.size(); ++k)
            if (grid_.buses[k].id == id) return k;
        throw InvalidArgument("unknown node " + std::to_string(id));
    }
    std::size_t line_index(NodeId a, NodeId b) const {
        for (std::size_t k = 0; k < grid_.lines.size(); ++k)
            if (grid_.lines[k].connects(a, b)) return k;
        throw InvalidArgument("unknown line " + std::to_string(a) + "-" + std::to_string(b));
    }
    bool node_active(NodeId id) const {
        if (auto k = find_dgu(id)) return rt_[*k].active;
        return true;  // bus nodes are always present
    }
    bool lines_allowed(std::size_t l) const {
        return !faulted_[l] && node_active(grid_.lines[l].a) && node_active(grid_.lines[l].b);
    }
    void set_line(std::size_t l, bool on) {
        line_on_[l] = on;
        if (!on && dynamic_lines()) x_[2 * nd_ + l] = 0.0;
    }

    double load_current(std::size_t k, double v, double t) const {
        const auto& r = rt_[k];
        double i = r.g_load * v + r.i_const;
        if (r.profile) i += r.profile->second.at(t - r.profile->first);
        return i;
    }

    // Node voltages with bus voltages from the nodal solve.
    std::map<NodeId, double> node_voltages(const std::vector<double>& x, double t) const {
        std::map<NodeId, double> v;
        for (std::size_t k = 0; k < nd_; ++k) v[grid_.dgus[k].id] = x[2 * k + 1];
        if (!grid_.has_buses()) return v;
        const auto nb = static_cast<Eigen::Index>(grid_.buses.size());
        VecX rhs = VecX::Zero(nb);
        for (Eigen::Index k = 0; k < nb; ++k) {
            const auto& b = grid_.buses[static_cast<std::size_t>(k)];
            rhs[k] = -b.i_load;
            if (const auto& p = bus_profile_[static_cast<std::size_t>(k)]) rhs[k] -= p->second.at(t - p->first);
        }
        for (std::size_t l = 0; l < grid_.lines.size(); ++l) {
            if (!line_on_[l]) continue;
            const auto& ln = grid_.lines[l];
            const auto ia = bus_pos_.find(ln.a), ib = bus_pos_.find(ln.b);
            if (ia != bus_pos_.end() && ib == bus_pos_.end())
                rhs[static_cast<Eigen::Index>(ia->second)] += v.at(ln.b) / ln.r;
            if (ib != bus_pos_.end() && ia == bus_pos_.end())
                rhs[static_cast<Eigen::Index>(ib->second)] += v.at(ln.a) / ln.r;
        }
        const VecX vb = ybb_lu_.solve(rhs);
        for (Eigen::Index k = 0; k < nb; ++k) v[grid_.buses[static_cast<std::size_t>(k)].id] = vb[k];
        return v;
    }

    void network_injections(const std::vector<double>& x, double t, std::vector<double>& inj) const {
        if (!grid_.has_buses()) {
            for (std::size_t l = 0; l < grid_.lines.size(); ++l) {
                if (!line_on_[l]) continue;
                const auto& ln = grid_.lines[l];
                const std::size_t a = dgu_index(ln.a), b = dgu_index(ln.b);
                const double i_ab = (x[2 * a + 1] - x[2 * b + 1]) / ln.r;
                inj[a] -= i_ab;
                inj[b] += i_ab;
            }
            return;
        }
        const auto v = node_voltages(x, t);
        for (std::size_t l = 0; l < grid_.lines.size(); ++l) {
            if (!line_on_[l]) continue;
            const auto& ln = grid_.lines[l];
            const double i_ab = (v.at(ln.a) - v.at(ln.b)) / ln.r;
            if (auto a = find_dgu(ln.a)) inj[*a] -= i_ab;
            if (auto b = find_dgu(ln.b)) inj[*b] += i_ab;
        }
    }

    void linear_derivatives(const std::vector<double>& x, const std::vector<double>& duty, double t,
                            std::vector<double>& dx) const {
        for (std::size_t k = 0; k < nd_; ++k) {
            if (!rt_[k].active) continue;
            const auto& dz = design_.dgus.at(grid_.dgus[k].id);
            const auto& s = linear_models_[k];
            const Vec2 xk(x[2 * k] - dz.op.i_t_bar, x[2 * k + 1] - dz.op.v_dc_bar);
            const double du = duty[k] - dz.op.duty;
            const double di_load = load_current(k, dz.op.v_dc_bar, t) - dz.op.i_t_bar * (1.0 - dz.op.duty);
            Vec2 d = s.a_ii * xk + s.b_i * du + s.e_i * di_load;
            for (const auto& [j, aij] : s.a_ij_aug) {
                const std::size_t jj = dgu_index(j);
                const auto& dj = design_.dgus.at(j);
                d[1] += aij(1, 1) * (x[2 * jj + 1] - dj.op.v_dc_bar);
            }
            dx[2 * k] = d[0];
            dx[2 * k + 1] = d[1];
        }
    }

    void refresh_network() {
        if (grid_.has_buses()) {
            const auto nb = static_cast<Eigen::Index>(grid_.buses.size());
            MatX ybb = MatX::Zero(nb, nb);
            for (Eigen::Index k = 0; k < nb; ++k) ybb(k, k) = grid_.buses[static_cast<std::size_t>(k)].g_load;
            for (std::size_t l = 0; l < grid_.lines.size(); ++l) {
                if (!line_on_[l]) continue;
                const auto& ln = grid_.lines[l];
                const double g = 1.0 / ln.r;
                const auto ia = bus_pos_.find(ln.a), ib = bus_pos_.find(ln.b);
                if (ia != bus_pos_.end()) ybb(static_cast<Eigen::Index>(ia->second), static_cast<Eigen::Index>(ia->second)) += g;
                if (ib != bus_pos_.end()) ybb(static_cast<Eigen::Index>(ib->second), static_cast<Eigen::Index>(ib->second)) += g;
                if (ia != bus_pos_.end() && ib != bus_pos_.end()) {
                    ybb(static_cast<Eigen::Index>(ia->second), static_cast<Eigen::Index>(ib->second)) -= g;
                    ybb(static_cast<Eigen::Index>(ib->second), static_cast<Eigen::Index>(ia->second)) -= g;
                }
            }
            ybb_lu_.compute(ybb);
            if (!ybb_lu_.isInvertible()) throw InvalidArgument("bus network has a floating interior node");
        }
        rebuild_couplings();
        if (sc_.plant == PlantMode::linear) rebuild_linear_models();
    }

    // Load-connected view of the currently active network.
    MicrogridTopology active_topology() const {
        MicrogridTopology t;
        if (!grid_.has_buses()) {
            for (std::size_t k = 0; k < nd_; ++k)
                if (rt_[k].active) t.dgus.push_back(grid_.dgus[k]);
            for (std::size_t l = 0; l < grid_.lines.size(); ++l)
                if (line_on_[l]) t.lines.push_back(grid_.lines[l]);
            return t;
        }
        BusNetwork net;
        for (std::size_t k = 0; k < nd_; ++k)
            if (rt_[k].active) net.dgus.push_back(grid_.dgus[k]);
        net.bus_nodes = grid_.buses;
        for (std::size_t l = 0; l < grid_.lines.size(); ++l)
            if (line_on_[l]) net.branches.push_back(grid_.lines[l]);
        if (net.dgus.empty()) return t;
        // isolated pieces are dropped from the reduction
        if (!net.is_connected()) {
            std::set<NodeId> keep;
            std::map<NodeId, std::vector<NodeId>> adj;
            for (const auto& br : net.branches) {
                adj[br.a].push_back(br.b);
                adj[br.b].push_back(br.a);
            }
            std::vector<NodeId> stack;
            for (const auto& d : net.dgus) {
                keep.insert(d.id);
                stack.push_back(d.id);
            }
            while (!stack.empty()) {
                const NodeId n = stack.back();
                stack.pop_back();
                for (NodeId m : adj[n])
                    if (keep.insert(m).second) stack.push_back(m);
            }
            std::vector<BusNode> buses;
            for (const auto& b : net.bus_nodes)
                if (keep.count(b.id)) buses.push_back(b);
            net.bus_nodes = buses;
            std::vector<DguParams> dg = net.dgus;
            // the reduction needs one connected piece per call; merge the pieces' lines
            MicrogridTopology merged;
            std::set<NodeId> done;
            for (const auto& d : dg) {
                if (done.count(d.id)) continue;
                std::set<NodeId> comp{d.id};
                std::vector<NodeId> st{d.id};
                while (!st.empty()) {
                    const NodeId n = st.back();
                    st.pop_back();
                    for (NodeId m : adj[n])
                        if (comp.insert(m).second) st.push_back(m);
                }
                BusNetwork piece;
                for (const auto& x : dg)
                    if (comp.count(x.id)) piece.dgus.push_back(x), done.insert(x.id);
                for (const auto& b : net.bus_nodes)
                    if (comp.count(b.id)) piece.bus_nodes.push_back(b);
                for (const auto& br : net.branches)
                    if (comp.count(br.a) && comp.count(br.b)) piece.branches.push_back(br);
                const auto red = kron_reduce(piece).topology;
                for (const auto& x : red.dgus) merged.dgus.push_back(x);
                for (const auto& l : red.lines) merged.lines.push_back(l);
            }
            return merged;
        }
        return kron_reduce(net).topology;
    }

    void rebuild_couplings() {
        coupling_.assign(nd_, {});
        coupling_src_.assign(nd_, {});
        const auto topo = active_topology();
        for (const auto& l : topo.lines) {
            for (int side = 0; side < 2; ++side) {
                const NodeId i = side == 0 ? l.a : l.b;
                const NodeId j = side == 0 ? l.b : l.a;
                const std::size_t ki = dgu_index(i), kj = dgu_index(j);
                const auto& di = design_.dgus.at(i);
                const auto& dj = design_.dgus.at(j);
                NeighborPrediction nb;
                nb.a_ij = di.m * coupling_matrix(l.r, grid_.dgus[ki].c_t) * dj.m_inv;
                coupling_[ki].push_back(nb);
                coupling_src_[ki].push_back(kj);
            }
        }
    }

    void rebuild_linear_models() {
        linear_models_.assign(nd_, {});
        const auto topo = active_topology();
        for (std::size_t k = 0; k < nd_; ++k) {
            if (!rt_[k].active) continue;
            const auto& d = grid_.dgus[k];
            std::vector<std::pair<LineParams, DguParams>> nbrs;
            for (const auto& l : topo.lines)
                if (l.touches(d.id)) nbrs.emplace_back(l, grid_.dgus[dgu_index(l.other(d.id))]);
            // linearize about the design operating point (the DGU's own rating)
            linear_models_[k] = linearize(d, design_.dgus.at(d.id).op, nbrs);
        }
    }

    Vec3 measured(std::size_t k) const {
        const auto& dz = design_.dgus.at(grid_.dgus[k].id);
        return Vec3(x_[2 * k] - dz.op.i_t_bar, x_[2 * k + 1] - dz.op.v_dc_bar, rt_[k].ctl.xi_int);
    }

    // Solves the steady state of DGU k for output voltage v and outgoing current i_out.
    std::pair<double, double> steady_inductor(std::size_t k, double v, double i_out) const {
        const auto& d = grid_.dgus[k];
        const double disc = d.v_in * d.v_in - 4.0 * v * d.r_t * i_out;
        if (disc < 0.0) throw InvalidArgument("DGU " + std::to_string(d.id) + " has no steady state at v = " + std::to_string(v));
        const double m = (d.v_in + std::sqrt(disc)) / (2.0 * v);
        return {i_out / m, 1.0 - m};
    }

    // Sets the integral state so the composite law reproduces `duty` at the current state.
    void align_controller(std::size_t k, double duty) {
        auto& r = rt_[k];
        r.duty = duty;
        const auto& dz = design_.dgus.at(grid_.dgus[k].id);
        if (sc_.control == ControlMode::open_loop) return;
        const auto& g = dz.gains;
        const double ii = x_[2 * k] - dz.op.i_t_bar;
        const double vv = x_[2 * k + 1] - dz.op.v_dc_bar;
        r.ctl.xi_int = g.k_xi != 0.0 ? (dz.op.duty - duty - g.k_i * ii - g.k_v * vv) / g.k_xi : 0.0;
        r.ctl.lpf_state = 0.0;
        r.ctl.u_l1 = 0.0;
        r.ctl.u_total = duty - dz.op.duty;
        r.ctl.theta_hat = (settings_.l1.warm_start && r.theta_saved) ? *r.theta_saved : Vec3::Zero();
        r.ctl.x_hat = dz.m * measured(k);
        r.ctl.x_tilde.setZero();
        r.predictor_ready = false;
    }

    void precharge(std::size_t k) {
        const auto& r = rt_[k];
        const double v = r.v_ref;
        const double i_out = load_current(k, v, time());
        const auto [it, duty] = steady_inductor(k, v, i_out);
        x_[2 * k] = it;
        x_[2 * k + 1] = v;
        align_controller(k, duty);
    }

    void init() {
        sc_.validate();
        substeps_ = sc_.substeps();
        nd_ = grid_.dgus.size();
        if (nd_ == 0) throw InvalidArgument("grid has no DGUs");
        if (sc_.plant == PlantMode::linear && grid_.has_buses())
            throw InvalidArgument("linear plant mode supports load-connected grids only");
        for (const auto& d : grid_.dgus) d.validate();
        for (const auto& l : grid_.lines) {
            l.validate();
            if (dynamic_lines() && !(l.l > 0.0))
                throw InvalidArgument("dynamic line model needs positive inductance on line " + std::to_string(l.a) + "-" + std::to_string(l.b));
        }
        if (grid_.has_buses()) grid_.as_bus_network().validate();
        for (std::size_t k = 0; k < grid_.buses.size(); ++k) bus_pos_[grid_.buses[k].id] = k;
        for (const auto& l : grid_.lines) {
            if (!find_dgu(l.a) && !bus_pos_.count(l.a)) throw InvalidArgument("line references unknown node " + std::to_string(l.a));
            if (!find_dgu(l.b) && !bus_pos_.count(l.b)) throw InvalidArgument("line references unknown node " + std::to_string(l.b));
        }
        for (const auto& e : sc_.events) check_event_targets(e);

        design_ = design_grid(grid_.design_topology(), settings_);
        if (!design_.report.global_pass) warnings_.push_back("controller design did not pass certification");
        zoh_ = zoh(design_.dgus.begin()->second.l1.a_m, sc_.dt_ctrl);

        rt_.assign(nd_, {});
        nominal_v_.assign(nd_, 0.0);
        for (std::size_t k = 0; k < nd_; ++k) {
            const auto& d = grid_.dgus[k];
            rt_[k].v_ref = d.v_ref;
            nominal_v_[k] = d.v_ref;
            rt_[k].g_load = d.load_conductance();
            rt_[k].i_const = d.i_load;
            rt_[k].active = !sc_.initially_inactive.count(d.id);
        }
        bus_profile_.assign(grid_.buses.size(), std::nullopt);
        faulted_.assign(grid_.lines.size(), false);
        for (std::size_t l = 0; l < grid_.lines.size(); ++l)
            faulted_[l] = sc_.initially_faulted.count(grid_.lines[l].key()) > 0;
        line_on_.assign(grid_.lines.size(), false);
        for (std::size_t l = 0; l < grid_.lines.size(); ++l) line_on_[l] = lines_allowed(l);
        x_.assign(2 * nd_ + (dynamic_lines() ? grid_.lines.size() : 0), 0.0);
        refresh_network();
        equilibrium_start();
        trace_.ids.clear();
        for (const auto& d : grid_.dgus) trace_.ids.push_back(d.id);
    }

    void check_event_targets(const SimEvent& e) const {
        using K = SimEvent::Kind;
        switch (e.kind) {
            case K::plug_in:
            case K::plug_out:
            case K::ref_step: dgu_index(e.node); break;
            case K::line_fault:
            case K::line_restore: line_index(e.node, e.node_b); break;
            case K::load_step:
            case K::load_profile:
                if (!find_dgu(e.node)) bus_index(e.node);
                break;
        }
    }

    // Network steady state with every active PCC at its reference.
    void equilibrium_start() {
        for (std::size_t k = 0; k < nd_; ++k) x_[2 * k + 1] = rt_[k].v_ref;
        std::vector<double> inj(nd_, 0.0);
        if (sc_.plant == PlantMode::linear) {
            for (std::size_t k = 0; k < nd_; ++k) {
                const auto& dz = design_.dgus.at(grid_.dgus[k].id);
                x_[2 * k] = dz.op.i_t_bar;
                x_[2 * k + 1] = dz.op.v_dc_bar;
                align_controller(k, dz.op.duty);
            }
            return;
        }
        network_injections(x_, 0.0, inj);
        if (dynamic_lines()) {
            for (std::size_t l = 0; l < grid_.lines.size(); ++l) {
                if (!line_on_[l]) continue;
                const auto& ln = grid_.lines[l];
                x_[2 * nd_ + l] = (x_[2 * dgu_index(ln.a) + 1] - x_[2 * dgu_index(ln.b) + 1]) / ln.r;
            }
        }
        for (std::size_t k = 0; k < nd_; ++k) {
            const double v = x_[2 * k + 1];
            const double i_out = rt_[k].active ? load_current(k, v, 0.0) - inj[k] : load_current(k, v, 0.0);
            const auto [it, duty] = steady_inductor(k, v, i_out);
            x_[2 * k] = it;
            align_controller(k, duty);
        }
    }

    void control_tick() {
        const double dt = sc_.dt_ctrl;
        const bool use_l1 = sc_.control == ControlMode::l1 && settings_.l1.enabled;
        // snapshots of every predictor from the previous tick
        std::vector<Vec3> snap(nd_);
        for (std::size_t k = 0; k < nd_; ++k) snap[k] = rt_[k].ctl.x_hat;

        for (std::size_t k = 0; k < nd_; ++k) {
            auto& r = rt_[k];
            if (!r.active || sc_.control == ControlMode::open_loop) continue;
            const auto& dz = design_.dgus.at(grid_.dgus[k].id);
            const Vec3 xbar = measured(k);
            double u_l1 = 0.0;
            if (use_l1) {
                if (r.predictor_ready) {
                    std::vector<NeighborPrediction> nbs = coupling_[k];
                    for (std::size_t n = 0; n < nbs.size(); ++n) {
                        const std::size_t j = coupling_src_[k][n];
                        nbs[n].x_hat = rt_[j].active ? snap[j] : Vec3::Zero();
                    }
                    r.ctl.x_hat = predictor_step(dz.l1, r.ctl, r.z_prev, nbs, r.d_prev, zoh_);
                }
                const Vec3 z = dz.m * xbar;
                r.ctl.theta_hat = adaptive_step(dz.l1, r.ctl, z, r.ctl.x_hat, dt);
                r.ctl.x_tilde = r.ctl.x_hat - z;
                u_l1 = l1_control(dz.l1, r.ctl, z, dt);
                r.z_prev = z;
                r.d_prev = dz.m * Vec3(0.0, 0.0, r.v_ref - dz.op.v_dc_bar);
                r.predictor_ready = true;
            }
            const double u_bl = baseline_control(dz.gains, xbar);
            const auto out = composite_control(u_bl, u_l1, dz.op.duty, dz.l1.d_max);
            r.duty = out.duty;
            r.ctl.u_total = out.duty - dz.op.duty;
            r.ctl.saturated = out.saturated;
            if (!out.saturated) r.ctl.xi_int += dt * (r.v_ref - x_[2 * k + 1]);
        }
    }

    void record() {
        TraceRecord rec;
        rec.t = time();
        rec.dgus.resize(nd_);
        for (std::size_t k = 0; k < nd_; ++k) {
            auto& s = rec.dgus[k];
            s.v_dc = x_[2 * k + 1];
            s.i_t = x_[2 * k];
            s.duty = rt_[k].duty;
            s.u_l1 = rt_[k].ctl.u_l1;
            s.x_tilde = rt_[k].ctl.x_tilde.norm();
            s.theta = rt_[k].ctl.theta_hat.norm();
        }
        trace_.records.push_back(std::move(rec));
    }

    void rk4(double t) {
        const double h = sc_.dt_plant;
        std::vector<double> duty(nd_);
        for (std::size_t k = 0; k < nd_; ++k) duty[k] = rt_[k].duty;
        const std::size_t n = x_.size();
        std::vector<double> tmp(n);
        const auto k1 = plant_derivatives(x_, duty, t);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x_[i] + 0.5 * h * k1[i];
        const auto k2 = plant_derivatives(tmp, duty, t + 0.5 * h);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x_[i] + 0.5 * h * k2[i];
        const auto k3 = plant_derivatives(tmp, duty, t + 0.5 * h);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x_[i] + h * k3[i];
        const auto k4 = plant_derivatives(tmp, duty, t + h);
        for (std::size_t i = 0; i < n; ++i) x_[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    void check_finite() {
        double vmax = 0.0;
        for (const auto& d : grid_.dgus) vmax = std::max(vmax, d.v_ref);
        for (std::size_t i = 0; i < x_.size(); ++i) {
            const bool bad = !std::isfinite(x_[i]) || (i < 2 * nd_ && i % 2 == 1 && std::abs(x_[i]) > 10.0 * vmax) ||
                             std::abs(x_[i]) > 1e6;
            if (bad) {
                std::ostringstream os;
                os << "simulation diverged at t=" << time() << " s";
                if (i < 2 * nd_) os << " (DGU " << grid_.dgus[i / 2].id << (i % 2 ? " voltage" : " current") << ")";
                throw SimulationDiverged(os.str(), trace_, time());
            }
        }
    }

    std::vector<EventWindow> event_windows() const {
        std::vector<EventWindow> out;
        const auto t = trace_.times();
        if (t.empty()) return out;
        std::vector<double> starts;
        std::vector<std::string> labels;
        if (sc_.events.empty() || sc_.events.front().t > 1e-12) {
            starts.push_back(0.0);
            labels.push_back("initial");
        }
        for (const auto& e : sc_.events) {
            if (e.t > sc_.t_end) break;
            if (!starts.empty() && std::abs(e.t - starts.back()) < 1e-12) {
                labels.back() += "; " + describe(e);
                continue;
            }
            starts.push_back(e.t);
            labels.push_back(describe(e));
        }
        // replay events to know the active set and reference per window
        std::map<NodeId, double> vref;
        std::set<NodeId> active;
        for (const auto& d : grid_.dgus) {
            vref[d.id] = d.v_ref;
            if (!sc_.initially_inactive.count(d.id)) active.insert(d.id);
        }
        std::size_t ev = 0;
        for (std::size_t w = 0; w < starts.size(); ++w) {
            EventWindow win;
            win.t0 = starts[w];
            win.t1 = w + 1 < starts.size() ? starts[w + 1] : sc_.t_end;
            win.label = labels[w];
            std::map<NodeId, double> step_from;
            while (ev < sc_.events.size() && sc_.events[ev].t <= win.t0 + 1e-12) {
                const auto& e = sc_.events[ev++];
                if (e.kind == SimEvent::Kind::plug_in) active.insert(e.node);
                if (e.kind == SimEvent::Kind::plug_out) active.erase(e.node);
                if (e.kind == SimEvent::Kind::ref_step) {
                    step_from[e.node] = vref[e.node];
                    vref[e.node] = e.value;
                }
            }
            for (NodeId id : active) {
                try {
                    std::optional<double> from;
                    if (auto it = step_from.find(id); it != step_from.end()) from = it->second;
                    win.metrics[id] = analyze_window(t, trace_.voltage(id), win.t0, win.t1, vref[id], 1.0, from);
                } catch (const InvalidArgument&) {
                    // window too short to analyze
                }
            }
            out.push_back(std::move(win));
        }
        return out;
    }
};

inline nlohmann::json to_json(const std::vector<EventWindow>& windows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& w : windows) {
        nlohmann::json o;
        o["t0"] = w.t0;
        o["t1"] = w.t1;
        o["event"] = w.label;
        o["dgus"] = nlohmann::json::object();
        for (const auto& [id, m] : w.metrics) o["dgus"][std::to_string(id)] = to_json(m);
        j.push_back(o);
    }
    return j;
}

/// Summary document written next to the trace.
inline nlohmann::json metrics_json(const SimResult& r) {
    nlohmann::json j;
    j["windows"] = to_json(r.windows);
    double max_settle = 0.0, max_peak = 0.0;
    bool all_settled = true;
    for (const auto& w : r.windows)
        for (const auto& [id, m] : w.metrics) {
            max_settle = std::max(max_settle, m.settling_time);
            max_peak = std::max(max_peak, m.peak_deviation);
            all_settled = all_settled && m.settled;
        }
    j["max_settling_time"] = max_settle;
    j["max_peak_deviation"] = max_peak;
    j["all_settled"] = all_settled;
    j["certified"] = r.report.global_pass;
    j["warnings"] = r.warnings;
    return j;
}

}  // namespace dcgrid
