#pragma once

// Built-in six-DGU test system (per-unit ratings, lines and nominal design plant).

#include "dcgrid/grid_model.hpp"

#include <array>
#include <vector>

namespace dcgrid::table1 {

inline constexpr std::array<double, 6> kDutyRow{0.7507, 0.7372, 0.7633, 0.723, 0.7576, 0.7636};
inline constexpr std::array<double, 6> kNominalDuty{0.7368, 0.7368, 0.7368, 0.723, 0.7368, 0.7368};
inline constexpr double kNominalL = 2.794e-6;
inline constexpr double kNominalC = 60.6e-6;
inline constexpr double kNominalR = 0.1;

inline std::vector<DguParams> dgus() {
    const double v_in[6] = {95, 100, 90, 105, 92, 90};
    const double v_ref[6] = {381, 380.5, 380.2, 379, 379.5, 380.7};
    const double l_t[6] = {28.47e-6, 89.62e-6, 192.5e-6, 70e-6, 35e-6, 93.34e-6};
    const double c_t[6] = {37.632e-6, 51.67e-6, 40.73e-6, 37e-6, 31e-6, 24.66e-6};
    const double r_t[6] = {0.02, 0.04, 0.02, 0.2, 0.4, 0.5};
    const double p_load[6] = {2500, 2000, 1800, 2500, 3000, 2500};
    std::vector<DguParams> out;
    for (int k = 0; k < 6; ++k) {
        DguParams d;
        d.id = k + 1;
        d.v_in = v_in[k];
        d.v_ref = v_ref[k];
        d.l_t = l_t[k];
        d.c_t = c_t[k];
        d.r_t = r_t[k];
        d.p_rated = 5000;
        d.p_load = p_load[k];
        d.f_s = 25e3;
        out.push_back(d);
    }
    return out;
}

inline std::vector<LineParams> lines() {
    return {
        {1, 2, 0.5, 10e-6}, {1, 3, 2.0, 70e-6}, {1, 6, 10.0, 800e-6}, {2, 4, 4.0, 70e-6},
        {3, 4, 4.0, 70e-6}, {4, 5, 15.0, 25e-6}, {5, 6, 4.0, 90e-6},
    };
}

inline MicrogridTopology topology() {
    MicrogridTopology t;
    for (const auto& d : dgus()) t.add_dgu(d);
    for (const auto& l : lines()) t.add_line(l);
    return t;
}

}  // namespace dcgrid::table1
