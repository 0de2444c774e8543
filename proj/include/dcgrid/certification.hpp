#pragma once

#include "dcgrid/core.hpp"
#include "dcgrid/linalg.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dcgrid {

inline double coupling_bound(const std::vector<Mat3>& couplings) {
    double s = 0.0;
    for (const auto& a : couplings) {
        Eigen::SelfAdjointEigenSolver<Mat3> es(a.transpose() * a);
        s += es.eigenvalues().maxCoeff();
    }
    return s;
}

namespace detail {

inline double golden_min(const std::function<double(double)>& f, double lo, double hi, double& arg, int iters = 100) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int k = 0; k < iters && (b - a) > 1e-14 * std::max(1.0, std::abs(a) + std::abs(b)); ++k) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    arg = fc < fd ? c : d;
    return std::min(fc, fd);
}

}  // namespace detail

/// Distance to instability γ = min_ω σ_min(A − jωI) of a Hurwitz matrix.
///
/// Bisection on δ: δ ≥ γ exactly when the Hamiltonian [[A, −δI], [δI, −Aᵀ]]
/// has an eigenvalue jω; each candidate ω is verified against σ_min directly.
/// The final value is polished by golden-section search around the
/// frequencies seen during the bisection.
inline double min_distance(const MatX& a) {
    if (a.rows() != a.cols()) throw InvalidArgument("min_distance: matrix must be square");
    const Eigen::Index n = a.rows();
    const CVecX ev = linalg::eigenvalues(a);
    double hi = std::numeric_limits<double>::infinity();
    std::vector<double> freqs{0.0};
    for (Eigen::Index k = 0; k < n; ++k) {
        if (!(ev[k].real() < 0.0)) throw InvalidArgument("min_distance: matrix is not Hurwitz");
        hi = std::min(hi, -ev[k].real());
        freqs.push_back(std::abs(ev[k].imag()));
    }
    const double anorm = a.norm();
    const double tol = 1e-6 * anorm;
    double lo = 0.0;
    auto sigma = [&](double w) { return linalg::sigma_min_shifted(a, w); };

    const MatX id = MatX::Identity(n, n);
    for (int it = 0; it < 200; ++it) {
        if (hi - lo <= tol && hi - lo <= 1e-9 * hi) break;
        const double delta = 0.5 * (lo + hi);
        MatX h(2 * n, 2 * n);
        h << a, -delta * id, delta * id, -a.transpose();
        const CVecX hv = linalg::eigenvalues(h);
        bool crossing = false;
        for (Eigen::Index k = 0; k < hv.size(); ++k) {
            if (std::abs(hv[k].real()) > 1e-6 * std::abs(hv[k]) + 1e-8 * h.norm()) continue;
            const double w = std::abs(hv[k].imag());
            if (sigma(w) <= delta * (1.0 + 1e-9)) {
                crossing = true;
                freqs.push_back(w);
            }
        }
        if (crossing)
            hi = delta;
        else
            lo = delta;
    }

    double best = hi;
    for (double w0 : freqs) {
        const double span = std::max(best, 1e-12 * std::max(1.0, w0));
        double arg = w0;
        const double v = detail::golden_min(sigma, std::max(0.0, w0 - span), w0 + span, arg);
        best = std::min({best, v, sigma(w0)});
    }
    return best;
}

/// Stabilizing solution of A_mᵀP + P A_m + N P P + (Ξ² + ε) I = 0.
inline MatX solve_local_are(const MatX& a_m, int n_i, double xi_sq, double epsilon) {
    const Eigen::Index n = a_m.rows();
    if (n_i < 0 || xi_sq < 0.0 || !(epsilon > 0.0)) throw InvalidArgument("solve_local_are: invalid arguments");
    const MatX q = (xi_sq + epsilon) * MatX::Identity(n, n);
    if (n_i == 0) {
        if (!linalg::is_hurwitz(a_m)) throw HyperbolicityError("A_m is not Hurwitz");
        return linalg::solve_lyapunov(a_m, q);
    }
    const MatX g = -static_cast<double>(n_i) * MatX::Identity(n, n);
    return linalg::solve_riccati(a_m, g, q);
}

inline MatX local_are_residual(const MatX& a_m, int n_i, double xi_sq, double epsilon, const MatX& p) {
    const Eigen::Index n = a_m.rows();
    return a_m.transpose() * p + p * a_m + static_cast<double>(n_i) * p * p + (xi_sq + epsilon) * MatX::Identity(n, n);
}

/// Residual norm divided by the sum of the norms of the four terms.
inline double local_are_relative_residual(const MatX& a_m, int n_i, double xi_sq, double epsilon, const MatX& p) {
    const Eigen::Index n = a_m.rows();
    const double scale = (a_m.transpose() * p).norm() + (p * a_m).norm() + static_cast<double>(n_i) * (p * p).norm() +
                         (xi_sq + epsilon) * std::sqrt(static_cast<double>(n));
    return local_are_residual(a_m, n_i, xi_sq, epsilon, p).norm() / scale;
}

inline double theta_bound(const Vec3& lower, const Vec3& upper) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
        if (!std::isfinite(lower[k]) || !std::isfinite(upper[k]) || lower[k] > upper[k])
            throw InvalidArgument("theta_bound: invalid box");
        s += std::max(std::abs(lower[k]), std::abs(upper[k]));
    }
    return s;
}

namespace detail {

// Adaptive Gauss–Kronrod (7/15) quadrature of a vector-valued integrand.
template <class F>
VecX gk15(const F& f, double a, double b, Eigen::Index dim, double abs_tol, int depth = 0) {
    static constexpr double xk[8] = {0.991455371120812639, 0.949107912342758525, 0.864864423359769073,
                                     0.741531185599394440, 0.586087235467691130, 0.405845151377397167,
                                     0.207784955007898468, 0.000000000000000000};
    static constexpr double wk[8] = {0.022935322010529225, 0.063092092629978553, 0.104790010322250184,
                                     0.140653259715525919, 0.169004726639267903, 0.190350578064785410,
                                     0.204432940075298892, 0.209482141084727828};
    static constexpr double wg[4] = {0.129484966168869693, 0.279705391489276668, 0.381830050505118945,
                                     0.417959183673469388};
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    VecX k = VecX::Zero(dim), g = VecX::Zero(dim);
    const VecX fc = f(c);
    k += wk[7] * fc;
    g += wg[3] * fc;
    for (int i = 0; i < 7; ++i) {
        const VecX f1 = f(c - h * xk[i]);
        const VecX f2 = f(c + h * xk[i]);
        k += wk[i] * (f1 + f2);
        if (i % 2 == 1) g += wg[i / 2] * (f1 + f2);
    }
    k *= h;
    g *= h;
    const double err = (k - g).cwiseAbs().maxCoeff();
    if (err <= abs_tol || depth >= 40) return k;
    return gk15(f, a, c, dim, 0.5 * abs_tol, depth + 1) + gk15(f, c, b, dim, 0.5 * abs_tol, depth + 1);
}

}  // namespace detail

/// ‖G‖_L1 for G(s) = (sI − A_m)⁻¹ b · (1 − ω_c/(s + ω_c)), row-wise max of the
/// integrated absolute impulse responses.
inline double l1_norm_g(const MatX& a_m, const VecX& b, double omega_c) {
    if (!(omega_c > 0.0)) throw InvalidArgument("l1_norm_g: omega_c must be positive");
    if (!linalg::is_hurwitz(a_m)) throw InvalidArgument("l1_norm_g: A_m is not Hurwitz");
    const Eigen::Index n = a_m.rows();
    // state [x; f]: ẋ = A_m x − b f + b δ, ḟ = −ω_c f + ω_c δ, output x
    MatX ag = MatX::Zero(n + 1, n + 1);
    ag.topLeftCorner(n, n) = a_m;
    ag.topRightCorner(n, 1) = -b;
    ag(n, n) = -omega_c;
    VecX bg(n + 1);
    bg << b, omega_c;
    const CVecX ev = linalg::eigenvalues(ag);
    double slow = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < ev.size(); ++k) slow = std::min(slow, std::abs(ev[k].real()));
    const double horizon = 40.0 / slow;

    auto integrand = [&](double t) -> VecX { return linalg::expm(ag * t).topRows(n) * bg; };
    auto abs_integrand = [&](double t) -> VecX { return integrand(t).cwiseAbs(); };
    // scale for the absolute tolerance: peak of the response on a coarse grid
    double peak = 0.0;
    for (int k = 0; k <= 64; ++k) peak = std::max(peak, integrand(horizon * k / 64.0).cwiseAbs().maxCoeff());
    peak = std::max(peak, b.cwiseAbs().maxCoeff());
    // split into chunks so that sign changes are resolved early
    VecX acc = VecX::Zero(n);
    const int chunks = 64;
    for (int k = 0; k < chunks; ++k) {
        const double t0 = horizon * k / chunks, t1 = horizon * (k + 1) / chunks;
        acc += detail::gk15(abs_integrand, t0, t1, n, 1e-13 * peak * horizon / chunks);
    }
    return acc.maxCoeff();
}

struct L1NormResult {
    double l1_norm = 0.0;
    double lambda = 0.0;
    bool pass = true;
};

inline L1NormResult l1_norm_condition(const MatX& a_m, const VecX& b, double omega_c, double theta_max) {
    L1NormResult r;
    r.l1_norm = l1_norm_g(a_m, b, omega_c);
    r.lambda = r.l1_norm * theta_max;
    r.pass = r.lambda < 1.0;
    return r;
}

/// Design data certification needs for one DGU.
struct CertInput {
    NodeId id = 0;
    Mat3 a_m = Mat3::Zero();
    Vec3 b = Vec3(0.0, 0.0, 1.0);
    double omega_c = 0.0;
    double theta_max = 0.0;
    double epsilon_rel = 0.01;  // ε = epsilon_rel · (Ξ² + 1)
    std::vector<Mat3> couplings;
};

struct CertRecord {
    NodeId id = 0;
    int n_i = 0;
    double xi_sq = 0.0;
    double epsilon = 0.0;
    double gamma = 0.0;
    double gamma_threshold = 0.0;
    double are_residual = std::numeric_limits<double>::quiet_NaN();
    double are_residual_abs = std::numeric_limits<double>::quiet_NaN();
    double p_min_eigenvalue = std::numeric_limits<double>::quiet_NaN();
    double l1_norm = 0.0;
    double lambda = 0.0;
    double theta_max = 0.0;
    bool distance_pass = false;
    bool are_pass = false;
    bool l1_pass = false;
    bool pass = false;
    std::vector<std::string> failures;
    Mat3 p = Mat3::Zero();
};

inline constexpr double kAreTolerance = 1e-8;

inline CertRecord certify_dgu(const CertInput& in) {
    CertRecord r;
    r.id = in.id;
    r.n_i = static_cast<int>(in.couplings.size());
    r.xi_sq = coupling_bound(in.couplings);
    r.epsilon = in.epsilon_rel * (r.xi_sq + 1.0);
    r.gamma = min_distance(in.a_m);
    r.gamma_threshold = std::sqrt(static_cast<double>(r.n_i) * r.xi_sq);
    r.distance_pass = r.gamma > r.gamma_threshold;
    if (!r.distance_pass) r.failures.push_back("distance: gamma <= sqrt(N_i * Xi^2)");

    try {
        const MatX p = solve_local_are(in.a_m, r.n_i, r.xi_sq, r.epsilon);
        r.p = p;
        r.are_residual = local_are_relative_residual(in.a_m, r.n_i, r.xi_sq, r.epsilon, p);
        r.are_residual_abs = local_are_residual(in.a_m, r.n_i, r.xi_sq, r.epsilon, p).norm();
        Eigen::SelfAdjointEigenSolver<MatX> es(p);
        r.p_min_eigenvalue = es.eigenvalues().minCoeff();
        r.are_pass = r.are_residual < kAreTolerance && r.p_min_eigenvalue > 0.0;
        if (!r.are_pass) r.failures.push_back("are: residual or positivity check failed");
    } catch (const HyperbolicityError& e) {
        r.are_pass = false;
        r.failures.push_back(std::string("are: ") + e.what());
    }

    r.theta_max = in.theta_max;
    const auto l1 = l1_norm_condition(in.a_m, in.b, in.omega_c, in.theta_max);
    r.l1_norm = l1.l1_norm;
    r.lambda = l1.lambda;
    r.l1_pass = l1.pass;
    if (!r.l1_pass) r.failures.push_back("l1_norm: lambda >= 1");
    r.pass = r.distance_pass && r.are_pass && r.l1_pass;
    return r;
}

struct CertReport {
    std::vector<CertRecord> records;
    bool global_pass = false;

    const CertRecord& record(NodeId id) const {
        for (const auto& r : records)
            if (r.id == id) return r;
        throw InvalidArgument("no certification record for DGU " + std::to_string(id));
    }

    void finalize() {
        std::sort(records.begin(), records.end(), [](const CertRecord& a, const CertRecord& b) { return a.id < b.id; });
        global_pass = !records.empty() &&
                      std::all_of(records.begin(), records.end(), [](const CertRecord& r) { return r.pass; });
    }
};

inline CertReport certify(const std::vector<CertInput>& inputs) {
    CertReport rep;
    for (const auto& in : inputs) rep.records.push_back(certify_dgu(in));
    rep.finalize();
    return rep;
}

/// Re-certifies only the DGUs in `touched`; other records are copied from `previous`.
inline CertReport recertify(const CertReport& previous, const std::vector<CertInput>& inputs, const std::set<NodeId>& touched) {
    CertReport rep;
    for (const auto& in : inputs) {
        bool reused = false;
        if (!touched.count(in.id)) {
            for (const auto& r : previous.records) {
                if (r.id == in.id) {
                    rep.records.push_back(r);
                    reused = true;
                    break;
                }
            }
        }
        if (!reused) rep.records.push_back(certify_dgu(in));
    }
    rep.finalize();
    return rep;
}

inline nlohmann::json to_json(const CertRecord& r) {
    auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["id"] = r.id;
    j["n_i"] = r.n_i;
    j["xi_sq"] = num(r.xi_sq);
    j["epsilon"] = num(r.epsilon);
    j["gamma"] = num(r.gamma);
    j["gamma_threshold"] = num(r.gamma_threshold);
    j["are_residual"] = num(r.are_residual);
    j["are_residual_abs"] = num(r.are_residual_abs);
    j["p_min_eigenvalue"] = num(r.p_min_eigenvalue);
    j["l1_norm"] = num(r.l1_norm);
    j["lambda"] = num(r.lambda);
    j["theta_max"] = num(r.theta_max);
    j["distance_pass"] = r.distance_pass;
    j["are_pass"] = r.are_pass;
    j["l1_pass"] = r.l1_pass;
    j["pass"] = r.pass;
    j["failures"] = r.failures;
    return j;
}

inline nlohmann::json to_json(const CertReport& rep) {
    nlohmann::json j;
    j["global_pass"] = rep.global_pass;
    j["dgus"] = nlohmann::json::array();
    for (const auto& r : rep.records) j["dgus"].push_back(to_json(r));
    return j;
}

}  // namespace dcgrid
