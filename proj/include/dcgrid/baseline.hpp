#pragma once

#include "dcgrid/core.hpp"
#include "dcgrid/linalg.hpp"

#include <algorithm>
#include <vector>

namespace dcgrid {

struct BaselineGains {
    double k_i = 0.0;
    double k_v = 0.0;
    double k_xi = 0.0;

    Vec3 vec() const { return Vec3(k_i, k_v, k_xi); }
    static BaselineGains from(const Eigen::Ref<const VecX>& k) {
        if (k.size() != 3) throw InvalidArgument("baseline gains need 3 entries");
        return {k[0], k[1], k[2]};
    }
};

/// Infinite-horizon LQR gain for ẋ = A x + b u with cost ∫ xᵀQx + r u².
inline Eigen::RowVectorXd lqr_gain(const MatX& a, const VecX& b, const MatX& q, double r) {
    if (!(r > 0.0)) throw InvalidArgument("input weight r must be positive");
    if (a.rows() != a.cols() || b.size() != a.rows() || q.rows() != a.rows() || q.cols() != a.cols())
        throw InvalidArgument("lqr_gain: dimension mismatch");
    if (!linalg::is_controllable(a, b)) throw UncontrollableError("(A, B) pair is not controllable");
    Eigen::SelfAdjointEigenSolver<MatX> qe(0.5 * (q + q.transpose()));
    if (qe.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, q.norm()))
        throw InvalidArgument("state weight must be positive semidefinite");

    const MatX x = linalg::solve_riccati(a, b * b.transpose() / r, q);
    return b.transpose() * x / r;
}

inline BaselineGains synth_lqi(const Mat3& a, const Vec3& b, const Mat3& q, double r) {
    const Eigen::RowVectorXd k = lqr_gain(a, b, q, r);
    const MatX acl = a - b * k;
    if (!linalg::is_hurwitz(acl)) throw Error("LQI synthesis produced a non-Hurwitz closed loop");
    return BaselineGains::from(k.transpose());
}

/// Gain placing eig(A − bK) at the requested poles (via the canonical form).
inline Eigen::RowVectorXd place_gain(const MatX& a, const VecX& b, const std::vector<Complex>& poles) {
    const Eigen::Index n = a.rows();
    if (static_cast<Eigen::Index>(poles.size()) != n) throw InvalidArgument("need one pole per state");
    // conjugate closure: every pole with nonzero imaginary part must have its mirror
    std::vector<bool> used(poles.size(), false);
    for (std::size_t i = 0; i < poles.size(); ++i) {
        if (used[i]) continue;
        const double im = poles[i].imag();
        const double tol = 1e-9 * std::max(1.0, std::abs(poles[i]));
        if (std::abs(im) <= tol) {
            used[i] = true;
            continue;
        }
        bool found = false;
        for (std::size_t j = 0; j < poles.size(); ++j) {
            if (j == i || used[j]) continue;
            if (std::abs(poles[j] - std::conj(poles[i])) <= tol) {
                used[i] = used[j] = true;
                found = true;
                break;
            }
        }
        if (!found) throw InvalidArgument("pole set is not closed under conjugation");
    }
    if (!linalg::is_controllable(a, b)) throw UncontrollableError("(A, B) pair is not controllable");

    const MatX t = linalg::canonical_transform(a, b);
    const CVecX ev = linalg::eigenvalues(a);
    std::vector<Complex> open(ev.data(), ev.data() + ev.size());
    const VecX co = linalg::poly_from_roots(open);
    const VecX cd = linalg::poly_from_roots(poles);
    Eigen::RowVectorXd kc(n);
    for (Eigen::Index k = 0; k < n; ++k) kc[k] = cd[n - k] - co[n - k];
    return kc * t;
}

inline BaselineGains synth_pole_place(const Mat3& a, const Vec3& b, const std::vector<Complex>& poles) {
    return BaselineGains::from(place_gain(a, b, poles).transpose());
}

inline double baseline_control(const BaselineGains& k, const Vec3& x_aug) {
    return -(k.k_i * x_aug[0] + k.k_v * x_aug[1] + k.k_xi * x_aug[2]);
}

}  // namespace dcgrid
