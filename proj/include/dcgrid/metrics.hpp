#pragma once

#include "dcgrid/core.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace dcgrid {

struct TransientMetrics {
    double overshoot_pct = 0.0;            // of the step magnitude (reference steps) or of v_ref (disturbances)
    double overshoot_pct_of_ref = 0.0;     // peak excursion beyond target, % of target
    double overshoot_pct_of_excursion = 0.0;  // rebound past target, % of the first excursion
    double settling_time = 0.0;
    bool settled = true;
    double peak_deviation = 0.0;
    double steady_state_error = 0.0;
    double band_pct = 1.0;
    double target = 0.0;
    double window = 0.0;
};

/// Transient figures of merit of v(t) over [t0, t1].
///
/// `step_from` marks a reference step from that value to `target`; without it
/// the window is treated as a disturbance response around a constant target.
inline TransientMetrics analyze_window(const std::vector<double>& t, const std::vector<double>& v, double t0, double t1,
                                       double target, double band_pct = 1.0,
                                       std::optional<double> step_from = std::nullopt) {
    if (t.size() != v.size()) throw InvalidArgument("analyze_window: time and value lengths differ");
    std::vector<double> tw, vw;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] >= t0 - 1e-12 && t[k] <= t1 + 1e-12) {
            tw.push_back(t[k]);
            vw.push_back(v[k]);
        }
    }
    if (tw.size() < 20) throw InvalidArgument("analyze_window: window has fewer than 20 samples");

    TransientMetrics m;
    m.band_pct = band_pct;
    m.target = target;
    m.window = t1 - t0;

    double up = 0.0, down = 0.0;
    std::size_t k_up = 0, k_down = 0;
    for (std::size_t k = 0; k < vw.size(); ++k) {
        const double d = vw[k] - target;
        if (d > up) {
            up = d;
            k_up = k;
        }
        if (-d > down) {
            down = -d;
            k_down = k;
        }
    }
    m.peak_deviation = std::max(up, down);

    if (step_from) {
        const double mag = std::abs(target - *step_from);
        const double beyond = target >= *step_from ? up : down;
        m.overshoot_pct = mag > 0.0 ? 100.0 * beyond / mag : 0.0;
        m.overshoot_pct_of_ref = 100.0 * beyond / std::abs(target);
        m.overshoot_pct_of_excursion = m.overshoot_pct;
    } else {
        m.overshoot_pct_of_ref = 100.0 * m.peak_deviation / std::abs(target);
        m.overshoot_pct = m.overshoot_pct_of_ref;
        // the excursion that comes first is the primary one; the other side is the rebound
        const bool up_first = up > 0.0 && (down == 0.0 || k_up <= k_down);
        const double primary = up_first ? up : down;
        const std::size_t k_primary = up_first ? k_up : k_down;
        double rebound = 0.0;
        for (std::size_t k = k_primary; k < vw.size(); ++k) {
            const double d = (vw[k] - target) * (up_first ? -1.0 : 1.0);
            rebound = std::max(rebound, d);
        }
        m.overshoot_pct_of_excursion = primary > 0.0 ? 100.0 * rebound / primary : 0.0;
    }

    const double band = band_pct / 100.0 * std::abs(target);
    std::optional<std::size_t> last_out;
    for (std::size_t k = 0; k < vw.size(); ++k)
        if (std::abs(vw[k] - target) > band) last_out = k;
    if (!last_out) {
        m.settling_time = 0.0;
    } else if (*last_out + 1 == vw.size()) {
        m.settled = false;
        m.settling_time = m.window;
    } else {
        const std::size_t k = *last_out;
        const double e0 = std::abs(vw[k] - target) - band;
        const double e1 = std::abs(vw[k + 1] - target) - band;
        const double frac = e0 / (e0 - e1);
        m.settling_time = tw[k] + frac * (tw[k + 1] - tw[k]) - t0;
    }

    const std::size_t n_tail = std::max<std::size_t>(1, vw.size() / 10);
    double acc = 0.0;
    for (std::size_t k = vw.size() - n_tail; k < vw.size(); ++k) acc += vw[k];
    m.steady_state_error = acc / static_cast<double>(n_tail) - target;
    return m;
}

inline nlohmann::json to_json(const TransientMetrics& m) {
    return nlohmann::json{
        {"overshoot_pct", m.overshoot_pct},
        {"overshoot_pct_of_ref", m.overshoot_pct_of_ref},
        {"overshoot_pct_of_excursion", m.overshoot_pct_of_excursion},
        {"settling_time", m.settling_time},
        {"settled", m.settled},
        {"peak_deviation", m.peak_deviation},
        {"steady_state_error", m.steady_state_error},
        {"band_pct", m.band_pct},
        {"target", m.target},
        {"window", m.window},
    };
}

}  // namespace dcgrid
