#include "dcgrid/dcgrid.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace dcgrid;

namespace {

enum Exit { kOk = 0, kConfig = 1, kCert = 2, kDiverged = 3 };

struct Options {
    std::string config;
    std::string out;
    std::string line_model;
    long long seed = 0;
    bool quiet = false;
    std::string param;
    std::string values;
};

void log(const Options& o, const std::string& msg) {
    if (!o.quiet) std::cout << msg << '\n';
}

fs::path out_dir(const Options& o, const Config& c) {
    fs::path d = o.out.empty() ? fs::path(c.output.dir) : fs::path(o.out);
    fs::create_directories(d);
    return d;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
    f << text;
}

void apply_line_model(const Options& o, Config& c) {
    if (o.line_model == "dynamic") c.scenario.line_model = LineModel::dynamic;
    if (o.line_model == "qsl") c.scenario.line_model = LineModel::qsl;
}

double max_lambda(const CertReport& r) {
    double m = 0.0;
    for (const auto& rec : r.records) m = std::max(m, rec.lambda);
    return m;
}

int cmd_certify(const Options& o) {
    const Config c = load_config(o.config);
    const auto design = design_grid(c.design_topology(), c.design);
    const auto& rep = design.report;
    const fs::path p = out_dir(o, c) / c.output.report;
    write_file(p, to_json(rep).dump(2) + "\n");
    for (const auto& r : rep.records) {
        std::ostringstream os;
        os << "DGU " << r.id << ": " << (r.pass ? "PASS" : "FAIL") << "  gamma=" << r.gamma << "  threshold=" << r.gamma_threshold
           << "  lambda=" << r.lambda;
        for (const auto& f : r.failures) os << "\n    " << f;
        log(o, os.str());
    }
    log(o, std::string("global: ") + (rep.global_pass ? "PASS" : "FAIL") + "  -> " + p.string());
    return rep.global_pass ? kOk : kCert;
}

int cmd_simulate(const Options& o) {
    Config c = load_config(o.config);
    apply_line_model(o, c);
    const fs::path dir = out_dir(o, c);
    Simulator sim(c.grid, c.scenario, c.design);
    if (!sim.design().report.global_pass)
        std::cerr << "warning: certification failed; simulating anyway\n";
    write_file(dir / c.output.report, to_json(sim.design().report).dump(2) + "\n");
    try {
        const auto res = sim.run();
        std::ofstream csv(dir / c.output.trace);
        res.trace.write_csv(csv);
        write_file(dir / c.output.metrics, metrics_json(res).dump(2) + "\n");
        for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
        std::ostringstream os;
        os << "simulated " << c.scenario.t_end << " s (" << to_string(c.scenario.line_model) << " lines), "
           << res.trace.records.size() << " samples -> " << dir.string();
        log(o, os.str());
        return kOk;
    } catch (const SimulationDiverged& e) {
        std::ofstream csv(dir / c.output.trace);
        e.trace.write_csv(csv);
        std::cerr << "error: " << e.what() << '\n';
        return kDiverged;
    }
}

struct SweepRow {
    double value = 0.0;
    double lambda = 0.0;
    bool global_pass = false;
    double max_settling = 0.0;
    double max_peak = 0.0;
    bool diverged = false;
};

std::vector<double> parse_values(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        if (tok.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) throw ConfigError("sweep value '" + tok + "' is not a number");
        out.push_back(v);
    }
    return out;
}

SweepRow sweep_point(const Config& c, double value) {
    SweepRow row;
    row.value = value;
    Simulator sim(c.grid, c.scenario, c.design);
    row.lambda = max_lambda(sim.design().report);
    row.global_pass = sim.design().report.global_pass;
    try {
        const auto j = metrics_json(sim.run());
        row.max_settling = j["max_settling_time"].get<double>();
        row.max_peak = j["max_peak_deviation"].get<double>();
    } catch (const DivergenceError&) {
        row.diverged = true;
        row.max_settling = std::numeric_limits<double>::quiet_NaN();
        row.max_peak = std::numeric_limits<double>::quiet_NaN();
    }
    return row;
}

int cmd_sweep(const Options& o) {
    Config base = load_config(o.config);
    apply_line_model(o, base);
    const auto values = parse_values(o.values);
    std::vector<Config> configs;
    for (double v : values) {
        Config c = with_override(base, o.param, v);
        apply_line_model(o, c);
        configs.push_back(std::move(c));
    }

    std::vector<SweepRow> rows(values.size());
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t start = 0; start < values.size(); start += workers) {
        std::vector<std::future<SweepRow>> batch;
        for (std::size_t k = start; k < std::min(values.size(), start + workers); ++k)
            batch.push_back(std::async(std::launch::async, sweep_point, std::cref(configs[k]), values[k]));
        for (std::size_t k = 0; k < batch.size(); ++k) rows[start + k] = batch[k].get();
    }

    const fs::path p = out_dir(o, base) / "sweep.csv";
    std::ofstream f(p);
    f << std::setprecision(9);
    f << "value,lambda,global_pass,max_settling,max_peak,diverged\n";
    for (const auto& r : rows)
        f << r.value << ',' << r.lambda << ',' << (r.global_pass ? 1 : 0) << ',' << r.max_settling << ',' << r.max_peak << ','
          << (r.diverged ? 1 : 0) << '\n';
    log(o, "swept " + o.param + " over " + std::to_string(values.size()) + " values -> " + p.string());
    return kOk;
}

int cmd_kron(const Options& o) {
    const Config c = load_config(o.config);
    std::ostringstream os;
    os << "# load-connected equivalent of " << fs::path(o.config).filename().string() << "\n";
    os << kron_document(c) << "\n";
    if (o.out.empty()) {
        std::cout << os.str();
        return kOk;
    }
    fs::path p(o.out);
    if (p.extension() != ".toml") {
        fs::create_directories(p);
        p /= "reduced.toml";
    } else if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    write_file(p, os.str());
    log(o, "wrote " + p.string());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dcgrid: plug-and-play certification and simulation of DC microgrids"};
    app.require_subcommand(1);
    Options o;

    auto common = [&o](CLI::App* sc, bool with_line_model) {
        sc->add_option("--config", o.config, "TOML configuration file")->required()->check(CLI::ExistingFile);
        sc->add_option("--out", o.out, "Output directory (kron: output file or directory)");
        if (with_line_model)
            sc->add_option("--line-model", o.line_model, "Line model override")->check(CLI::IsMember({"dynamic", "qsl"}));
        sc->add_option("--seed", o.seed, "Reserved; simulations are deterministic");
        sc->add_flag("--quiet", o.quiet, "Suppress progress output");
    };

    auto* certify = app.add_subcommand("certify", "Certify every DGU and write the report");
    common(certify, false);
    auto* simulate = app.add_subcommand("simulate", "Run a scenario and write the trace and metrics");
    common(simulate, true);
    auto* sweep = app.add_subcommand("sweep", "Vary one numeric parameter and tabulate the results");
    common(sweep, true);
    sweep->add_option("--param", o.param, "Dotted key, e.g. l1.omega_c")->required();
    sweep->add_option("--values", o.values, "Comma-separated values")->required();
    auto* kron = app.add_subcommand("kron", "Reduce a bus network to its load-connected equivalent");
    common(kron, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (certify->parsed()) return cmd_certify(o);
        if (simulate->parsed()) return cmd_simulate(o);
        if (sweep->parsed()) return cmd_sweep(o);
        if (kron->parsed()) return cmd_kron(o);
    } catch (const DisconnectedNetworkError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kCert;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    }
    return kConfig;
}
