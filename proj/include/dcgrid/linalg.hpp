#pragma once

#include "dcgrid/core.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace dcgrid::linalg {

inline CVecX eigenvalues(const MatX& a) {
    Eigen::EigenSolver<MatX> es(a, /*computeEigenvectors=*/false);
    return es.eigenvalues();
}

inline double spectral_abscissa(const MatX& a) {
    const CVecX ev = eigenvalues(a);
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < ev.size(); ++k) m = std::max(m, ev[k].real());
    return m;
}

inline bool is_hurwitz(const MatX& a) { return spectral_abscissa(a) < 0.0; }

inline MatX expm(const MatX& a) { return a.exp(); }

/// Solves Aᵀ X + X A + Q = 0 by Kronecker vectorization (small n only).
inline MatX solve_lyapunov(const MatX& a, const MatX& q) {
    const Eigen::Index n = a.rows();
    const MatX id = MatX::Identity(n, n);
    MatX kron(n * n, n * n);
    const MatX at = a.transpose();
    // vec(Aᵀ X) = (I ⊗ Aᵀ) vec(X), vec(X A) = (Aᵀ ⊗ I) vec(X)
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            kron.block(i * n, j * n, n, n) = id(i, j) * at + at(i, j) * id;
    const VecX rhs = -Eigen::Map<const VecX>(q.data(), n * n);
    const VecX x = kron.fullPivLu().solve(rhs);
    MatX out = Eigen::Map<const MatX>(x.data(), n, n);
    return 0.5 * (out + out.transpose());
}

/// Residual of Aᵀ X + X A − X G X + Q.
inline MatX riccati_residual(const MatX& a, const MatX& g, const MatX& q, const MatX& x) {
    return a.transpose() * x + x * a - x * g * x + q;
}

/// Scale used to normalize a Riccati residual: sum of the norms of its terms.
inline double riccati_scale(const MatX& a, const MatX& g, const MatX& q, const MatX& x) {
    return (a.transpose() * x).norm() + (x * a).norm() + (x * g * x).norm() + q.norm();
}

/// Diagonal D (returned as a vector) balancing the Riccati data under the
/// state scaling x = D x̃, i.e. A → D⁻¹AD, G → D⁻¹GD⁻¹, Q → DQD.
/// Osborne-style sweeps equalize the magnitudes that grow and shrink with d_k.
inline VecX riccati_balance(const MatX& a, const MatX& g, const MatX& q, int sweeps = 20) {
    const Eigen::Index n = a.rows();
    VecX d = VecX::Ones(n);
    MatX as = a, gs = g, qs = q;
    for (int s = 0; s < sweeps; ++s) {
        bool changed = false;
        for (Eigen::Index k = 0; k < n; ++k) {
            double grow = 0.0, shrink = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j != k) {
                    grow += as(j, k) * as(j, k);
                    shrink += as(k, j) * as(k, j);
                }
                grow += qs(k, j) * qs(k, j) + qs(j, k) * qs(j, k);
                shrink += gs(k, j) * gs(k, j) + gs(j, k) * gs(j, k);
            }
            if (grow <= 0.0 || shrink <= 0.0) continue;
            const double f = std::pow(shrink / grow, 0.25);
            if (std::abs(std::log(f)) < 1e-3) continue;
            changed = true;
            d[k] *= f;
            as.row(k) /= f;
            as.col(k) *= f;
            gs.row(k) /= f;
            gs.col(k) /= f;
            qs.row(k) *= f;
            qs.col(k) *= f;
        }
        if (!changed) break;
    }
    return d;
}

/// Stabilizing solution of Aᵀ X + X A − X G X + Q = 0 (G, Q symmetric).
///
/// The stable invariant subspace [U1; U2] of the (balanced) Hamiltonian
/// [[A, −G], [−Q, −Aᵀ]] is taken from its eigenvectors and X = U2 U1⁻¹.
/// A few Newton steps on the Riccati map then polish the result.
/// Throws HyperbolicityError when the Hamiltonian has eigenvalues on (or
/// numerically indistinguishable from) the imaginary axis.
inline MatX solve_riccati(const MatX& a0, const MatX& g0, const MatX& q0, int newton_steps = 8) {
    const Eigen::Index n = a0.rows();
    if (a0.cols() != n || g0.rows() != n || g0.cols() != n || q0.rows() != n || q0.cols() != n)
        throw InvalidArgument("solve_riccati: dimension mismatch");

    const VecX d = riccati_balance(a0, g0, q0);
    const MatX a = d.cwiseInverse().asDiagonal() * a0 * d.asDiagonal();
    const MatX g = d.cwiseInverse().asDiagonal() * g0 * d.cwiseInverse().asDiagonal();
    const MatX q = d.asDiagonal() * q0 * d.asDiagonal();

    MatX h(2 * n, 2 * n);
    h << a, -g, -q, -a.transpose();

    Eigen::ComplexEigenSolver<MatX> es(h);
    if (es.info() != Eigen::Success) throw HyperbolicityError("Hamiltonian eigen-decomposition failed");
    const CVecX& ev = es.eigenvalues();
    const double tol = 1e-10 * h.norm();

    std::vector<Eigen::Index> stable;
    for (Eigen::Index k = 0; k < ev.size(); ++k) {
        if (std::abs(ev[k].real()) <= tol)
            throw HyperbolicityError("Hamiltonian has eigenvalues on the imaginary axis");
        if (ev[k].real() < 0.0) stable.push_back(k);
    }
    if (static_cast<Eigen::Index>(stable.size()) != n)
        throw HyperbolicityError("Hamiltonian stable subspace has wrong dimension");

    CMatX u(2 * n, n);
    for (Eigen::Index c = 0; c < n; ++c) u.col(c) = es.eigenvectors().col(stable[static_cast<std::size_t>(c)]);
    const CMatX u1 = u.topRows(n);
    const CMatX u2 = u.bottomRows(n);
    Eigen::FullPivLU<CMatX> lu(u1);
    if (!lu.isInvertible()) throw HyperbolicityError("stable subspace is not a graph subspace");
    MatX x = (u2 * lu.inverse()).real();
    x = 0.5 * (x + x.transpose());

    // Newton: (A − G X)ᵀ Δ + Δ (A − G X) = −F(X)
    double best = riccati_residual(a, g, q, x).norm();
    for (int it = 0; it < newton_steps; ++it) {
        const MatX acl = a - g * x;
        if (!is_hurwitz(acl)) break;
        const MatX f = riccati_residual(a, g, q, x);
        MatX next = x + solve_lyapunov(acl, f);
        next = 0.5 * (next + next.transpose());
        const double r = riccati_residual(a, g, q, next).norm();
        if (!(r < best)) break;
        best = r;
        x = next;
    }
    const MatX out = d.cwiseInverse().asDiagonal() * x * d.cwiseInverse().asDiagonal();
    return 0.5 * (out + out.transpose());
}

/// Real monic polynomial coefficients (highest power first, leading 1) from roots.
inline VecX poly_from_roots(std::span<const Complex> roots) {
    std::vector<Complex> c{Complex(1.0, 0.0)};
    for (const Complex& r : roots) {
        std::vector<Complex> next(c.size() + 1, Complex(0.0, 0.0));
        for (std::size_t k = 0; k < c.size(); ++k) {
            next[k] += c[k];
            next[k + 1] -= r * c[k];
        }
        c = std::move(next);
    }
    VecX out(static_cast<Eigen::Index>(c.size()));
    for (std::size_t k = 0; k < c.size(); ++k) out[static_cast<Eigen::Index>(k)] = c[k].real();
    return out;
}

/// Companion matrix in control canonical form: ones on the superdiagonal,
/// last row −[c_n, …, c_1] for the monic polynomial sⁿ + c_1 sⁿ⁻¹ + … + c_n.
inline MatX companion(const VecX& monic) {
    const Eigen::Index n = monic.size() - 1;
    MatX a = MatX::Zero(n, n);
    for (Eigen::Index k = 0; k + 1 < n; ++k) a(k, k + 1) = 1.0;
    for (Eigen::Index k = 0; k < n; ++k) a(n - 1, k) = -monic[n - k];
    return a;
}

/// Diagonal similarity diag(aⁿ⁻¹, …, a, 1) that turns a companion matrix with
/// roots of magnitude ~a into a matrix with entries of magnitude ~a while
/// keeping the input direction eₙ.
inline VecX balancing_diagonal(double scale, Eigen::Index n) {
    VecX d(n);
    for (Eigen::Index k = 0; k < n; ++k) d[k] = std::pow(scale, static_cast<double>(n - 1 - k));
    return d;
}

/// Geometric mean of the root magnitudes.
inline double root_scale(std::span<const Complex> roots) {
    double s = 0.0;
    for (const Complex& r : roots) s += std::log(std::abs(r));
    return std::exp(s / static_cast<double>(roots.size()));
}

inline MatX controllability_matrix(const MatX& a, const MatX& b) {
    const Eigen::Index n = a.rows();
    MatX w(n, n);
    VecX col = b.col(0);
    for (Eigen::Index k = 0; k < n; ++k) {
        w.col(k) = col;
        col = a * col;
    }
    return w;
}

/// Controllability test on the column-normalized controllability matrix.
inline bool is_controllable(const MatX& a, const MatX& b, double rcond_tol = 1e-12) {
    MatX w = controllability_matrix(a, b);
    for (Eigen::Index k = 0; k < w.cols(); ++k) {
        const double nk = w.col(k).norm();
        if (nk == 0.0) return false;
        w.col(k) /= nk;
    }
    Eigen::JacobiSVD<MatX> svd(w);
    const VecX s = svd.singularValues();
    return s[s.size() - 1] > rcond_tol * s[0];
}

/// T with T A T⁻¹ = companion(charpoly(A)) and T b = eₙ for a controllable SISO pair.
inline MatX canonical_transform(const MatX& a, const MatX& b) {
    const Eigen::Index n = a.rows();
    MatX w = controllability_matrix(a, b);
    VecX colscale(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        colscale[k] = w.col(k).norm();
        w.col(k) /= colscale[k];
    }
    Eigen::FullPivLU<MatX> lu(w);
    if (!lu.isInvertible()) throw UncontrollableError("canonical_transform: pair is not controllable");
    const MatX winv = lu.inverse();
    const Eigen::RowVectorXd t1 = winv.row(n - 1) / colscale[n - 1];
    MatX t(n, n);
    Eigen::RowVectorXd row = t1;
    for (Eigen::Index k = 0; k < n; ++k) {
        t.row(k) = row;
        row = row * a;
    }
    return t;
}

/// Smallest singular value of (A − jωI).
inline double sigma_min_shifted(const MatX& a, double omega) {
    const Eigen::Index n = a.rows();
    CMatX m = a.cast<Complex>();
    for (Eigen::Index k = 0; k < n; ++k) m(k, k) -= Complex(0.0, omega);
    Eigen::JacobiSVD<CMatX> svd(m);
    return svd.singularValues()[n - 1];
}

}  // namespace dcgrid::linalg
