#pragma once

#include "dcgrid/core.hpp"
#include "dcgrid/design.hpp"
#include "dcgrid/grid_model.hpp"
#include "dcgrid/sim_engine.hpp"
#include "dcgrid/table1.hpp"

#include "toml.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dcgrid {

struct OutputSettings {
    std::string dir = "out";
    std::string trace = "trace.csv";
    std::string metrics = "metrics.json";
    std::string report = "cert_report.json";
};

struct Config {
    Grid grid;
    DesignSettings design;
    Scenario scenario;
    OutputSettings output;
    std::string source;
    toml::table doc;

    MicrogridTopology design_topology() const { return grid.design_topology(); }
    bool has_bus_network() const { return grid.has_buses(); }
};

namespace cfg_detail {

inline std::string where(const std::string& src, const toml::node& n) {
    const auto& b = n.source().begin;
    std::ostringstream os;
    os << src << ":" << b.line << ":" << b.column;
    return os.str();
}

inline std::string where(const std::string& src, const toml::table& t) { return where(src, static_cast<const toml::node&>(t)); }

inline void allow_keys(const std::string& src, const toml::table& t, const std::string& section,
                       std::initializer_list<std::string_view> keys) {
    const std::set<std::string_view> ok(keys);
    for (const auto& [k, v] : t) {
        if (!ok.count(k.str()))
            throw ConfigError(where(src, v) + ": unknown key '" + std::string(k.str()) + "' in [" + section + "]");
    }
}

inline double number(const std::string& src, const toml::node& n, const std::string& key) {
    if (const auto* i = n.as_integer()) return static_cast<double>(i->get());
    if (const auto* f = n.as_floating_point()) return f->get();
    throw ConfigError(where(src, n) + ": '" + key + "' must be a number");
}

inline double number_or(const std::string& src, const toml::table& t, const std::string& key, double fallback) {
    const toml::node* n = t.get(key);
    return n ? number(src, *n, key) : fallback;
}

inline double number_req(const std::string& src, const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) throw ConfigError(where(src, t) + ": missing required key '" + key + "' in [" + section + "]");
    return number(src, *n, key);
}

inline int integer(const std::string& src, const toml::node& n, const std::string& key) {
    if (const auto* i = n.as_integer()) return static_cast<int>(i->get());
    throw ConfigError(where(src, n) + ": '" + key + "' must be an integer");
}

inline int integer_req(const std::string& src, const toml::table& t, const std::string& key, const std::string& section) {
    const toml::node* n = t.get(key);
    if (!n) throw ConfigError(where(src, t) + ": missing required key '" + key + "' in [" + section + "]");
    return integer(src, *n, key);
}

inline bool boolean_or(const std::string& src, const toml::table& t, const std::string& key, bool fallback) {
    const toml::node* n = t.get(key);
    if (!n) return fallback;
    if (const auto* b = n->as_boolean()) return b->get();
    throw ConfigError(where(src, *n) + ": '" + key + "' must be a boolean");
}

inline std::string string_or(const std::string& src, const toml::table& t, const std::string& key, std::string fallback) {
    const toml::node* n = t.get(key);
    if (!n) return fallback;
    if (const auto* s = n->as_string()) return s->get();
    throw ConfigError(where(src, *n) + ": '" + key + "' must be a string");
}

inline const toml::table* subtable(const std::string& src, const toml::table& t, const std::string& key) {
    const toml::node* n = t.get(key);
    if (!n) return nullptr;
    if (const auto* tt = n->as_table()) return tt;
    throw ConfigError(where(src, *n) + ": '" + key + "' must be a table");
}

inline std::vector<const toml::table*> table_array(const std::string& src, const toml::table& t, const std::string& key) {
    std::vector<const toml::table*> out;
    const toml::node* n = t.get(key);
    if (!n) return out;
    const auto* arr = n->as_array();
    if (!arr) throw ConfigError(where(src, *n) + ": '" + key + "' must be an array of tables");
    for (const auto& e : *arr) {
        const auto* tt = e.as_table();
        if (!tt) throw ConfigError(where(src, e) + ": entries of '" + key + "' must be tables");
        out.push_back(tt);
    }
    return out;
}

inline std::vector<double> numbers(const std::string& src, const toml::table& t, const std::string& key) {
    std::vector<double> out;
    const toml::node* n = t.get(key);
    if (!n) return out;
    const auto* arr = n->as_array();
    if (!arr) throw ConfigError(where(src, *n) + ": '" + key + "' must be an array of numbers");
    for (const auto& e : *arr) out.push_back(number(src, e, key));
    return out;
}

// Poles as plain reals or as [re, im] pairs.
inline std::vector<Complex> poles(const std::string& src, const toml::table& t, const std::string& key) {
    std::vector<Complex> out;
    const toml::node* n = t.get(key);
    if (!n) return out;
    const auto* arr = n->as_array();
    if (!arr) throw ConfigError(where(src, *n) + ": '" + key + "' must be an array");
    for (const auto& e : *arr) {
        if (const auto* pair = e.as_array()) {
            if (pair->size() != 2) throw ConfigError(where(src, e) + ": complex pole must be [re, im]");
            out.emplace_back(number(src, *pair->get(0), key), number(src, *pair->get(1), key));
        } else {
            out.emplace_back(number(src, e, key), 0.0);
        }
    }
    return out;
}

inline DguParams parse_dgu(const std::string& src, const toml::table& t, std::map<NodeId, NominalPlant>& nominal,
                           const NominalPlant& nominal_default) {
    allow_keys(src, t, "grid.dgus", {"id", "v_in", "r_t", "l_t", "c_t", "p_rated", "p_load", "v_ref", "f_s", "i_load", "nominal_duty"});
    DguParams d;
    d.id = integer_req(src, t, "id", "grid.dgus");
    d.v_in = number_req(src, t, "v_in", "grid.dgus");
    d.r_t = number_req(src, t, "r_t", "grid.dgus");
    d.l_t = number_req(src, t, "l_t", "grid.dgus");
    d.c_t = number_req(src, t, "c_t", "grid.dgus");
    d.v_ref = number_req(src, t, "v_ref", "grid.dgus");
    d.p_load = number_or(src, t, "p_load", 0.0);
    d.p_rated = number_or(src, t, "p_rated", 5000.0);
    d.f_s = number_or(src, t, "f_s", 25e3);
    d.i_load = number_or(src, t, "i_load", 0.0);
    if (const toml::node* n = t.get("nominal_duty")) {
        NominalPlant p = nominal_default;
        p.duty = number(src, *n, "nominal_duty");
        nominal[d.id] = p;
    }
    try {
        d.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(where(src, t) + ": " + e.what());
    }
    return d;
}

inline LineParams parse_line(const std::string& src, const toml::table& t) {
    allow_keys(src, t, "grid.lines", {"a", "b", "r", "l"});
    LineParams l(integer_req(src, t, "a", "grid.lines"), integer_req(src, t, "b", "grid.lines"),
                 number_req(src, t, "r", "grid.lines"), number_or(src, t, "l", 0.0));
    try {
        l.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(where(src, t) + ": " + e.what());
    }
    return l;
}

inline SimEvent parse_event(const std::string& src, const toml::table& t) {
    using K = SimEvent::Kind;
    const std::string kind = string_or(src, t, "kind", "");
    SimEvent e;
    e.t = number_req(src, t, "t", "scenario.events");
    if (kind == "plug_in" || kind == "plug_out") {
        allow_keys(src, t, "scenario.events", {"t", "kind", "node"});
        e.kind = kind == "plug_in" ? K::plug_in : K::plug_out;
        e.node = integer_req(src, t, "node", "scenario.events");
    } else if (kind == "line_fault" || kind == "line_restore") {
        allow_keys(src, t, "scenario.events", {"t", "kind", "a", "b"});
        e.kind = kind == "line_fault" ? K::line_fault : K::line_restore;
        e.node = integer_req(src, t, "a", "scenario.events");
        e.node_b = integer_req(src, t, "b", "scenario.events");
    } else if (kind == "load_step") {
        allow_keys(src, t, "scenario.events", {"t", "kind", "node", "power"});
        e.kind = K::load_step;
        e.node = integer_req(src, t, "node", "scenario.events");
        e.value = number_req(src, t, "power", "scenario.events");
    } else if (kind == "ref_step") {
        allow_keys(src, t, "scenario.events", {"t", "kind", "node", "v_ref"});
        e.kind = K::ref_step;
        e.node = integer_req(src, t, "node", "scenario.events");
        e.value = number_req(src, t, "v_ref", "scenario.events");
    } else if (kind == "load_profile") {
        allow_keys(src, t, "scenario.events", {"t", "kind", "node", "times", "currents"});
        e.kind = K::load_profile;
        e.node = integer_req(src, t, "node", "scenario.events");
        e.profile.t = numbers(src, t, "times");
        e.profile.i = numbers(src, t, "currents");
        try {
            e.profile.validate();
        } catch (const InvalidArgument& err) {
            throw ConfigError(where(src, t) + ": " + err.what());
        }
    } else {
        throw ConfigError(where(src, t) + ": unknown event kind '" + kind + "'");
    }
    return e;
}

}  // namespace cfg_detail

/// Parses and validates a configuration document.
inline Config parse_config(std::string_view text, const std::string& source = "<config>") {
    using namespace cfg_detail;
    Config c;
    c.source = source;
    try {
        c.doc = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
        throw ConfigError(os.str());
    }
    const auto& doc = c.doc;
    const std::string& src = source;
    allow_keys(src, doc, "root", {"grid", "nominal", "baseline", "l1", "scenario", "output"});

    // nominal design plant
    if (const auto* t = subtable(src, doc, "nominal")) {
        allow_keys(src, *t, "nominal", {"l_t", "c_t", "r_t"});
        c.design.nominal_default.l_t = number_or(src, *t, "l_t", c.design.nominal_default.l_t);
        c.design.nominal_default.c_t = number_or(src, *t, "c_t", c.design.nominal_default.c_t);
        c.design.nominal_default.r_t = number_or(src, *t, "r_t", c.design.nominal_default.r_t);
    }

    // grid
    const auto* grid = subtable(src, doc, "grid");
    if (!grid) throw ConfigError(src + ": missing [grid] section");
    allow_keys(src, *grid, "grid", {"preset", "dgus", "lines", "bus_nodes"});
    const std::string preset = string_or(src, *grid, "preset", "");
    if (!preset.empty()) {
        if (preset != "table1") throw ConfigError(where(src, *grid->get("preset")) + ": unknown preset '" + preset + "'");
        const auto t1 = table1::topology();
        c.grid = Grid::from(t1);
        for (const auto& [id, p] : table1_settings().nominal) {
            NominalPlant q = c.design.nominal_default;
            q.duty = p.duty;
            c.design.nominal[id] = q;
        }
    }
    for (const auto* t : table_array(src, *grid, "dgus")) {
        const DguParams d = parse_dgu(src, *t, c.design.nominal, c.design.nominal_default);
        for (const auto& x : c.grid.dgus)
            if (x.id == d.id) throw ConfigError(where(src, *t) + ": duplicate DGU id " + std::to_string(d.id));
        c.grid.dgus.push_back(d);
    }
    for (const auto* t : table_array(src, *grid, "bus_nodes")) {
        allow_keys(src, *t, "grid.bus_nodes", {"id", "g_load", "p_load", "i_load"});
        BusNode b;
        b.id = integer_req(src, *t, "id", "grid.bus_nodes");
        b.g_load = number_or(src, *t, "g_load", 0.0);
        if (t->get("p_load")) {
            if (t->get("g_load")) throw ConfigError(where(src, *t) + ": give either g_load or p_load, not both");
            b.g_load = number_or(src, *t, "p_load", 0.0) / (Simulator::kBusVoltage * Simulator::kBusVoltage);
        }
        b.i_load = number_or(src, *t, "i_load", 0.0);
        if (b.g_load < 0.0) throw ConfigError(where(src, *t) + ": bus load must be non-negative");
        c.grid.buses.push_back(b);
    }
    for (const auto* t : table_array(src, *grid, "lines")) c.grid.lines.push_back(parse_line(src, *t));
    if (c.grid.dgus.empty()) throw ConfigError(where(src, *grid) + ": grid has no DGUs");
    try {
        if (c.grid.has_buses()) {
            c.grid.as_bus_network().validate();
        } else {
            MicrogridTopology t;
            t.dgus = c.grid.dgus;
            t.lines = c.grid.lines;
            t.validate();
        }
    } catch (const DisconnectedNetworkError&) {
        throw;
    } catch (const InvalidArgument& e) {
        throw ConfigError(where(src, *grid) + ": " + e.what());
    }
    for (auto& [id, p] : c.design.nominal) {
        p.l_t = c.design.nominal_default.l_t;
        p.c_t = c.design.nominal_default.c_t;
        p.r_t = c.design.nominal_default.r_t;
    }

    // baseline
    if (const auto* t = subtable(src, doc, "baseline")) {
        allow_keys(src, *t, "baseline", {"method", "q", "r", "poles"});
        const std::string m = string_or(src, *t, "method", "lqi");
        if (m == "lqi") {
            c.design.baseline.method = BaselineSettings::Method::lqi;
        } else if (m == "poles") {
            c.design.baseline.method = BaselineSettings::Method::poles;
        } else {
            throw ConfigError(where(src, *t->get("method")) + ": method must be \"lqi\" or \"poles\"");
        }
        const auto q = numbers(src, *t, "q");
        if (!q.empty()) {
            if (q.size() != 3) throw ConfigError(where(src, *t->get("q")) + ": q needs three diagonal weights");
            c.design.baseline.q_diag = Vec3(q[0], q[1], q[2]);
        }
        c.design.baseline.r = number_or(src, *t, "r", c.design.baseline.r);
        c.design.baseline.poles = poles(src, *t, "poles");
        if (c.design.baseline.method == BaselineSettings::Method::poles && c.design.baseline.poles.size() != 3)
            throw ConfigError(where(src, *t) + ": pole placement needs three poles");
    }

    // l1
    if (const auto* t = subtable(src, doc, "l1")) {
        allow_keys(src, *t, "l1", {"enabled", "poles", "gamma", "omega_c", "theta_halfwidth", "epsilon_rel", "proj_tolerance", "warm_start"});
        auto& l = c.design.l1;
        l.enabled = boolean_or(src, *t, "enabled", l.enabled);
        if (const auto p = poles(src, *t, "poles"); !p.empty()) l.poles = p;
        if (l.poles.size() != 3) throw ConfigError(where(src, *t) + ": l1.poles needs three entries");
        l.gamma = number_or(src, *t, "gamma", l.gamma);
        l.omega_c = number_or(src, *t, "omega_c", l.omega_c);
        l.epsilon_rel = number_or(src, *t, "epsilon_rel", l.epsilon_rel);
        l.proj_tolerance = number_or(src, *t, "proj_tolerance", l.proj_tolerance);
        l.warm_start = boolean_or(src, *t, "warm_start", l.warm_start);
        const auto w = numbers(src, *t, "theta_halfwidth");
        if (!w.empty()) {
            if (w.size() != 3) throw ConfigError(where(src, *t->get("theta_halfwidth")) + ": theta_halfwidth needs three entries");
            l.theta_halfwidth = Vec3(w[0], w[1], w[2]);
        }
        if (!(l.gamma > 0.0)) throw ConfigError(where(src, *t) + ": gamma must be positive");
        if (!(l.omega_c > 0.0)) throw ConfigError(where(src, *t) + ": omega_c must be positive");
        if (!(l.epsilon_rel > 0.0)) throw ConfigError(where(src, *t) + ": epsilon_rel must be positive");
        if (!(l.proj_tolerance > 0.0)) throw ConfigError(where(src, *t) + ": proj_tolerance must be positive");
        for (const auto& p : l.poles)
            if (!(p.real() < 0.0)) throw ConfigError(where(src, *t) + ": l1.poles must have negative real parts");
    }

    // scenario
    if (const auto* t = subtable(src, doc, "scenario")) {
        allow_keys(src, *t, "scenario", {"line_model", "plant", "control", "t_end", "dt_plant", "dt_ctrl", "record_stride",
                                         "initially_inactive", "initially_faulted", "events"});
        auto& s = c.scenario;
        const std::string lm = string_or(src, *t, "line_model", "dynamic");
        if (lm == "dynamic") s.line_model = LineModel::dynamic;
        else if (lm == "qsl") s.line_model = LineModel::qsl;
        else throw ConfigError(where(src, *t->get("line_model")) + ": line_model must be \"dynamic\" or \"qsl\"");
        const std::string pl = string_or(src, *t, "plant", "nonlinear");
        if (pl == "nonlinear") s.plant = PlantMode::nonlinear;
        else if (pl == "linear") s.plant = PlantMode::linear;
        else throw ConfigError(where(src, *t->get("plant")) + ": plant must be \"nonlinear\" or \"linear\"");
        const std::string ct = string_or(src, *t, "control", "l1");
        if (ct == "l1") s.control = ControlMode::l1;
        else if (ct == "baseline") s.control = ControlMode::baseline;
        else if (ct == "open_loop") s.control = ControlMode::open_loop;
        else throw ConfigError(where(src, *t->get("control")) + ": control must be \"l1\", \"baseline\" or \"open_loop\"");
        s.t_end = number_or(src, *t, "t_end", s.t_end);
        s.dt_plant = number_or(src, *t, "dt_plant", s.dt_plant);
        s.dt_ctrl = number_or(src, *t, "dt_ctrl", s.dt_ctrl);
        if (const toml::node* n = t->get("record_stride")) s.record_stride = integer(src, *n, "record_stride");
        for (double v : numbers(src, *t, "initially_inactive")) s.initially_inactive.insert(static_cast<NodeId>(v));
        if (const toml::node* n = t->get("initially_faulted")) {
            const auto* arr = n->as_array();
            if (!arr) throw ConfigError(where(src, *n) + ": initially_faulted must be an array of [a, b] pairs");
            for (const auto& e : *arr) {
                const auto* pr = e.as_array();
                if (!pr || pr->size() != 2) throw ConfigError(where(src, e) + ": expected [a, b]");
                const int a = integer(src, *pr->get(0), "initially_faulted");
                const int b = integer(src, *pr->get(1), "initially_faulted");
                s.initially_faulted.insert({std::min(a, b), std::max(a, b)});
            }
        }
        for (const auto* e : table_array(src, *t, "events")) s.events.push_back(parse_event(src, *e));
        try {
            s.validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(where(src, *t) + ": " + e.what());
        }
    }

    // output
    if (const auto* t = subtable(src, doc, "output")) {
        allow_keys(src, *t, "output", {"dir", "trace", "metrics", "report"});
        c.output.dir = string_or(src, *t, "dir", c.output.dir);
        c.output.trace = string_or(src, *t, "trace", c.output.trace);
        c.output.metrics = string_or(src, *t, "metrics", c.output.metrics);
        c.output.report = string_or(src, *t, "report", c.output.report);
    }
    return c;
}

inline Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

/// Replaces the numeric scalar at a dotted key (e.g. "l1.omega_c") and re-validates.
inline Config with_override(const Config& base, const std::string& dotted, double value) {
    toml::table doc = base.doc;
    std::vector<std::string> parts;
    std::stringstream ss(dotted);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    if (parts.size() < 2) throw ConfigError("sweep key '" + dotted + "' must name a section and a key");
    toml::table* t = &doc;
    for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
        toml::node* n = t->get(parts[k]);
        if (!n) {
            t->insert(parts[k], toml::table{});
            n = t->get(parts[k]);
        }
        t = n->as_table();
        if (!t) throw ConfigError("sweep key '" + dotted + "' does not address a table");
    }
    const std::string& leaf = parts.back();
    if (toml::node* n = t->get(leaf)) {
        if (!n->is_number()) throw ConfigError("sweep key '" + dotted + "' is not a numeric scalar");
        if (n->is_integer() && value == std::floor(value))
            t->insert_or_assign(leaf, static_cast<int64_t>(value));
        else
            t->insert_or_assign(leaf, value);
    } else if (value == std::floor(value) && std::abs(value) < 9e15) {
        // absent key: integer-valued keys such as record_stride need an integer
        t->insert_or_assign(leaf, static_cast<int64_t>(value));
    } else {
        t->insert_or_assign(leaf, value);
    }
    std::ostringstream os;
    os << doc;
    return parse_config(os.str(), base.source + " [" + dotted + "=" + std::to_string(value) + "]");
}

/// Load-connected TOML document equivalent to a bus-network config.
inline toml::table kron_document(const Config& c) {
    if (!c.has_bus_network()) throw ConfigError(c.source + ": config has no bus network ([[grid.bus_nodes]])");
    const auto red = kron_reduce(c.grid.as_bus_network());
    toml::table out;
    toml::table grid;
    toml::array dgus;
    for (const auto& d : red.topology.dgus) {
        toml::table t{{"id", d.id}, {"v_in", d.v_in}, {"r_t", d.r_t}, {"l_t", d.l_t}, {"c_t", d.c_t}, {"p_rated", d.p_rated},
                      {"p_load", d.p_load}, {"v_ref", d.v_ref}, {"f_s", d.f_s}};
        if (d.i_load != 0.0) t.insert("i_load", d.i_load);
        if (const auto it = c.design.nominal.find(d.id); it != c.design.nominal.end() && it->second.duty)
            t.insert("nominal_duty", *it->second.duty);
        dgus.push_back(std::move(t));
    }
    toml::array lines;
    for (const auto& l : red.topology.lines) lines.push_back(toml::table{{"a", l.a}, {"b", l.b}, {"r", l.r}, {"l", l.l}});
    grid.insert("dgus", std::move(dgus));
    grid.insert("lines", std::move(lines));
    out.insert("grid", std::move(grid));
    for (const char* sec : {"nominal", "baseline", "l1"})
        if (const toml::node* n = c.doc.get(sec)) out.insert(sec, *n);
    return out;
}

}  // namespace dcgrid
