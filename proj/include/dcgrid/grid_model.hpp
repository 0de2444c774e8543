#pragma once

#include "dcgrid/core.hpp"
#include "dcgrid/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace dcgrid {

struct DguParams {
    NodeId id = 0;
    double v_in = 0.0;
    double r_t = 0.0;
    double l_t = 0.0;
    double c_t = 0.0;
    double p_rated = 0.0;
    double p_load = 0.0;
    double v_ref = 0.0;
    double f_s = 25e3;
    // Constant-current draw at the PCC (A). Only produced by Kron reduction of
    // bus-side current injections; zero for ordinary load-connected DGUs.
    double i_load = 0.0;

    void validate() const {
        const std::string who = "DGU " + std::to_string(id) + ": ";
        if (!(v_in > 0.0)) throw InvalidArgument(who + "v_in must be positive");
        if (!(l_t > 0.0)) throw InvalidArgument(who + "l_t must be positive");
        if (!(c_t > 0.0)) throw InvalidArgument(who + "c_t must be positive");
        if (!(r_t >= 0.0)) throw InvalidArgument(who + "r_t must be non-negative");
        if (!(v_in < v_ref)) throw InvalidArgument(who + "boost requires v_in < v_ref");
        if (!(p_load >= 0.0)) throw InvalidArgument(who + "p_load must be non-negative");
    }

    // Load conductance used by the plant: constant impedance sized at v_ref.
    double load_conductance() const { return p_load / (v_ref * v_ref); }
};

struct LineParams {
    NodeId a = 0;
    NodeId b = 0;
    double r = 0.0;
    double l = 0.0;

    LineParams() = default;
    LineParams(NodeId i, NodeId j, double r_ij, double l_ij) : a(std::min(i, j)), b(std::max(i, j)), r(r_ij), l(l_ij) {}

    bool connects(NodeId i, NodeId j) const { return (a == i && b == j) || (a == j && b == i); }
    bool touches(NodeId i) const { return a == i || b == i; }
    NodeId other(NodeId i) const { return i == a ? b : a; }
    std::pair<NodeId, NodeId> key() const { return {a, b}; }

    void validate() const {
        if (a == b) throw InvalidArgument("line endpoints must be distinct (" + std::to_string(a) + ")");
        if (!(r > 0.0)) throw InvalidArgument("line " + std::to_string(a) + "-" + std::to_string(b) + ": r must be positive");
        if (!(l >= 0.0)) throw InvalidArgument("line " + std::to_string(a) + "-" + std::to_string(b) + ": l must be non-negative");
    }
};

class MicrogridTopology {
public:
    std::vector<DguParams> dgus;
    std::vector<LineParams> lines;

    void add_dgu(const DguParams& d) {
        d.validate();
        if (has_dgu(d.id)) throw InvalidArgument("duplicate DGU id " + std::to_string(d.id));
        dgus.push_back(d);
    }

    void add_line(const LineParams& l) {
        l.validate();
        if (!has_dgu(l.a) || !has_dgu(l.b))
            throw InvalidArgument("line " + std::to_string(l.a) + "-" + std::to_string(l.b) + " references an unknown DGU");
        if (find_line(l.a, l.b)) throw InvalidArgument("duplicate line " + std::to_string(l.a) + "-" + std::to_string(l.b));
        lines.push_back(LineParams(l.a, l.b, l.r, l.l));
    }

    bool has_dgu(NodeId id) const {
        return std::any_of(dgus.begin(), dgus.end(), [&](const DguParams& d) { return d.id == id; });
    }

    std::size_t index_of(NodeId id) const {
        for (std::size_t k = 0; k < dgus.size(); ++k)
            if (dgus[k].id == id) return k;
        throw InvalidArgument("unknown DGU id " + std::to_string(id));
    }

    const DguParams& dgu(NodeId id) const { return dgus[index_of(id)]; }
    DguParams& dgu(NodeId id) { return dgus[index_of(id)]; }

    const LineParams* find_line(NodeId i, NodeId j) const {
        for (const auto& l : lines)
            if (l.connects(i, j)) return &l;
        return nullptr;
    }

    std::vector<std::pair<LineParams, DguParams>> neighbors(NodeId id) const {
        std::vector<std::pair<LineParams, DguParams>> out;
        for (const auto& l : lines)
            if (l.touches(id)) out.emplace_back(l, dgu(l.other(id)));
        return out;
    }

    std::map<NodeId, std::set<NodeId>> neighbor_map() const {
        std::map<NodeId, std::set<NodeId>> m;
        for (const auto& d : dgus) m[d.id];
        for (const auto& l : lines) {
            m[l.a].insert(l.b);
            m[l.b].insert(l.a);
        }
        return m;
    }

    void validate() const {
        std::set<NodeId> ids;
        for (const auto& d : dgus) {
            d.validate();
            if (!ids.insert(d.id).second) throw InvalidArgument("duplicate DGU id " + std::to_string(d.id));
        }
        std::set<std::pair<NodeId, NodeId>> seen;
        for (const auto& l : lines) {
            l.validate();
            if (!ids.count(l.a) || !ids.count(l.b))
                throw InvalidArgument("line " + std::to_string(l.a) + "-" + std::to_string(l.b) + " references an unknown DGU");
            if (!seen.insert(l.key()).second)
                throw InvalidArgument("duplicate line " + std::to_string(l.a) + "-" + std::to_string(l.b));
        }
    }
};

struct BusNode {
    NodeId id = 0;
    double g_load = 0.0;  // shunt conductance to ground (S)
    double i_load = 0.0;  // constant current drawn from the node (A)
};

struct BusNetwork {
    std::vector<DguParams> dgus;
    std::vector<BusNode> bus_nodes;
    std::vector<LineParams> branches;

    std::vector<NodeId> all_nodes() const {
        std::vector<NodeId> ids;
        for (const auto& d : dgus) ids.push_back(d.id);
        for (const auto& b : bus_nodes) ids.push_back(b.id);
        return ids;
    }

    bool is_connected() const {
        const auto ids = all_nodes();
        if (ids.empty()) return false;
        std::map<NodeId, std::vector<NodeId>> adj;
        for (const auto& br : branches) {
            adj[br.a].push_back(br.b);
            adj[br.b].push_back(br.a);
        }
        std::set<NodeId> seen{ids.front()};
        std::vector<NodeId> stack{ids.front()};
        while (!stack.empty()) {
            const NodeId n = stack.back();
            stack.pop_back();
            for (NodeId m : adj[n])
                if (seen.insert(m).second) stack.push_back(m);
        }
        return std::all_of(ids.begin(), ids.end(), [&](NodeId n) { return seen.count(n) > 0; });
    }

    void validate() const {
        if (dgus.empty()) throw InvalidArgument("bus network needs at least one DGU");
        std::set<NodeId> ids;
        for (const auto& d : dgus) {
            d.validate();
            if (!ids.insert(d.id).second) throw InvalidArgument("duplicate node id " + std::to_string(d.id));
        }
        for (const auto& b : bus_nodes) {
            if (!ids.insert(b.id).second) throw InvalidArgument("duplicate node id " + std::to_string(b.id));
            if (!(b.g_load >= 0.0)) throw InvalidArgument("bus " + std::to_string(b.id) + ": g_load must be non-negative");
        }
        for (const auto& br : branches) {
            if (br.a == br.b) throw InvalidArgument("branch endpoints must be distinct");
            if (!ids.count(br.a) || !ids.count(br.b))
                throw InvalidArgument("branch " + std::to_string(br.a) + "-" + std::to_string(br.b) + " references an unknown node");
            if (!(br.r > 0.0))
                throw InvalidArgument("branch " + std::to_string(br.a) + "-" + std::to_string(br.b) + " has zero resistance");
        }
        if (!is_connected()) throw DisconnectedNetworkError("bus network is not connected");
    }
};

struct OperatingPoint {
    double duty = 0.0;
    double i_t_bar = 0.0;
    double v_dc_bar = 0.0;
    double r_load_equiv = std::numeric_limits<double>::infinity();
};

inline OperatingPoint compute_operating_point(const DguParams& dgu) {
    if (!(dgu.v_in > 0.0)) throw InvalidArgument("operating point: v_in must be positive");
    if (!(dgu.v_in < dgu.v_ref)) throw InvalidArgument("operating point: v_in must be below v_ref for a boost stage");
    if (!(dgu.p_load >= 0.0)) throw InvalidArgument("operating point: p_load must be non-negative");
    OperatingPoint op;
    op.duty = 1.0 - dgu.v_in / dgu.v_ref;
    op.v_dc_bar = dgu.v_ref;
    const double p = dgu.p_load + dgu.i_load * dgu.v_ref;
    if (p > 0.0) {
        op.r_load_equiv = dgu.v_ref * dgu.v_ref / p;
        const double m = 1.0 - op.duty;
        op.i_t_bar = dgu.v_in / (m * m * op.r_load_equiv);
    } else {
        op.r_load_equiv = std::numeric_limits<double>::infinity();
        op.i_t_bar = 0.0;
    }
    return op;
}

struct SmallSignalModel {
    Mat2 a_ii = Mat2::Zero();
    Vec2 b_i = Vec2::Zero();
    Vec2 e_i = Vec2::Zero();
    Eigen::RowVector2d c_i = Eigen::RowVector2d(0.0, 1.0);
    Mat3 a_ii_aug = Mat3::Zero();
    Vec3 b_i_aug = Vec3::Zero();
    std::map<NodeId, Mat3> a_ij_aug;
};

inline Mat3 coupling_matrix(double r_ij, double c_ti) {
    Mat3 m = Mat3::Zero();
    m(1, 1) = 1.0 / (r_ij * c_ti);
    return m;
}

inline SmallSignalModel linearize(const DguParams& dgu, const OperatingPoint& op,
                                  const std::vector<std::pair<LineParams, DguParams>>& neighbors) {
    const double m = 1.0 - op.duty;
    if (std::abs(op.v_dc_bar * m - dgu.v_in) > 1e-9 * dgu.v_in)
        throw InvalidArgument("linearize: operating point inconsistent with DGU");
    SmallSignalModel s;
    double ysum = 0.0;
    for (const auto& [line, other] : neighbors) {
        ysum += 1.0 / line.r;
        s.a_ij_aug[other.id] = coupling_matrix(line.r, dgu.c_t);
    }
    s.a_ii << -dgu.r_t / dgu.l_t, -m / dgu.l_t, m / dgu.c_t, -ysum / dgu.c_t;
    s.b_i << op.v_dc_bar / dgu.l_t, -op.i_t_bar / dgu.c_t;
    s.e_i << 0.0, -1.0 / dgu.c_t;
    s.a_ii_aug.setZero();
    s.a_ii_aug.topLeftCorner<2, 2>() = s.a_ii;
    s.a_ii_aug(2, 1) = -1.0;  // xi' = v_ref - v
    s.b_i_aug << s.b_i, 0.0;
    return s;
}

inline SmallSignalModel linearize(const MicrogridTopology& topo, NodeId id) {
    const auto& d = topo.dgu(id);
    return linearize(d, compute_operating_point(d), topo.neighbors(id));
}

// Block matrix with A_ii − B_i K_i on the diagonal and A_ij off the diagonal,
// in the order of topo.dgus.
inline MatX assemble_global(const MicrogridTopology& topo, const std::map<NodeId, SmallSignalModel>& models,
                            const std::map<NodeId, Vec3>& gains) {
    const auto n = static_cast<Eigen::Index>(topo.dgus.size());
    if (models.size() != topo.dgus.size() || gains.size() != topo.dgus.size())
        throw InvalidArgument("assemble_global: need exactly one model and one gain set per DGU");
    MatX g = MatX::Zero(3 * n, 3 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const NodeId id = topo.dgus[static_cast<std::size_t>(k)].id;
        const auto mi = models.find(id);
        const auto ki = gains.find(id);
        if (mi == models.end() || ki == gains.end()) throw InvalidArgument("assemble_global: missing model or gains for DGU " + std::to_string(id));
        g.block<3, 3>(3 * k, 3 * k) = mi->second.a_ii_aug - mi->second.b_i_aug * ki->second.transpose();
        for (const auto& [j, aij] : mi->second.a_ij_aug) {
            const auto col = static_cast<Eigen::Index>(topo.index_of(j));
            g.block<3, 3>(3 * k, 3 * col) = aij;
        }
    }
    return g;
}

struct KronReduction {
    MicrogridTopology topology;
    std::vector<NodeId> order;  // DGU ids, row order of y_reduced
    MatX y_reduced;             // Schur complement of the nodal conductance matrix
    VecX i_injection;           // equivalent injections at the DGU nodes (A, positive into the node)
    VecX g_shunt;               // row sums of y_reduced (S)
};

namespace detail {

// Minimum-resistance path between two DGUs that only passes through bus nodes.
inline std::optional<std::pair<double, double>> dominant_path(const BusNetwork& net, NodeId from, NodeId to,
                                                              const std::set<NodeId>& interior) {
    std::map<NodeId, std::vector<const LineParams*>> adj;
    for (const auto& br : net.branches) {
        adj[br.a].push_back(&br);
        adj[br.b].push_back(&br);
    }
    using Item = std::pair<double, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    std::map<NodeId, double> dist{{from, 0.0}};
    std::map<NodeId, double> ind{{from, 0.0}};
    pq.push({0.0, from});
    while (!pq.empty()) {
        const auto [d, n] = pq.top();
        pq.pop();
        if (d > dist[n]) continue;
        if (n == to) return std::make_pair(d, ind[n]);
        if (n != from && !interior.count(n)) continue;
        for (const LineParams* br : adj[n]) {
            const NodeId m = br->other(n);
            if (m != to && !interior.count(m)) continue;
            const double nd = d + br->r;
            auto it = dist.find(m);
            if (it == dist.end() || nd < it->second) {
                dist[m] = nd;
                ind[m] = ind[n] + br->l;
                pq.push({nd, m});
            }
        }
    }
    return std::nullopt;
}

}  // namespace detail

inline MatX nodal_conductance(const std::vector<NodeId>& ids, const std::vector<LineParams>& branches,
                              const std::map<NodeId, double>& shunt = {}) {
    std::map<NodeId, Eigen::Index> idx;
    for (std::size_t k = 0; k < ids.size(); ++k) idx[ids[k]] = static_cast<Eigen::Index>(k);
    const auto n = static_cast<Eigen::Index>(ids.size());
    MatX y = MatX::Zero(n, n);
    for (const auto& br : branches) {
        const double g = 1.0 / br.r;
        const auto i = idx.at(br.a);
        const auto j = idx.at(br.b);
        y(i, i) += g;
        y(j, j) += g;
        y(i, j) -= g;
        y(j, i) -= g;
    }
    for (const auto& [id, g] : shunt) y(idx.at(id), idx.at(id)) += g;
    return y;
}

inline KronReduction kron_reduce(const BusNetwork& net) {
    net.validate();
    std::vector<NodeId> dg_ids;
    for (const auto& d : net.dgus) dg_ids.push_back(d.id);
    std::vector<NodeId> ids = dg_ids;
    std::map<NodeId, double> shunt;
    std::set<NodeId> interior;
    for (const auto& b : net.bus_nodes) {
        ids.push_back(b.id);
        interior.insert(b.id);
        if (b.g_load > 0.0) shunt[b.id] = b.g_load;
    }
    const MatX y = nodal_conductance(ids, net.branches, shunt);
    const auto nd = static_cast<Eigen::Index>(dg_ids.size());
    const auto nb = static_cast<Eigen::Index>(net.bus_nodes.size());

    VecX jb(nb);
    for (Eigen::Index k = 0; k < nb; ++k) jb[k] = -net.bus_nodes[static_cast<std::size_t>(k)].i_load;

    KronReduction out;
    out.order = dg_ids;
    if (nb > 0) {
        const MatX ybb = y.bottomRightCorner(nb, nb);
        Eigen::FullPivLU<MatX> lu(ybb);
        if (!lu.isInvertible()) throw DisconnectedNetworkError("interior bus block is singular");
        const MatX ydb = y.topRightCorner(nd, nb);
        out.y_reduced = y.topLeftCorner(nd, nd) - ydb * lu.solve(y.bottomLeftCorner(nb, nd));
        out.i_injection = -ydb * lu.solve(jb);
    } else {
        out.y_reduced = y;
        out.i_injection = VecX::Zero(nd);
    }
    out.y_reduced = 0.5 * (out.y_reduced + out.y_reduced.transpose());
    out.g_shunt = out.y_reduced.rowwise().sum();

    const double scale = out.y_reduced.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < nd; ++k) {
        DguParams d = net.dgus[static_cast<std::size_t>(k)];
        const double g = std::abs(out.g_shunt[k]) > 1e-12 * scale ? out.g_shunt[k] : 0.0;
        d.p_load += g * d.v_ref * d.v_ref;
        d.i_load -= out.i_injection[k];
        out.topology.dgus.push_back(d);
    }
    for (Eigen::Index i = 0; i < nd; ++i) {
        for (Eigen::Index j = i + 1; j < nd; ++j) {
            const double yij = out.y_reduced(i, j);
            if (!(-yij > 1e-12 * scale)) continue;
            const double r = -1.0 / yij;
            const NodeId a = dg_ids[static_cast<std::size_t>(i)];
            const NodeId b = dg_ids[static_cast<std::size_t>(j)];
            double l = 0.0;
            if (const auto path = detail::dominant_path(net, a, b, interior); path && path->first > 0.0)
                l = r * path->second / path->first;
            out.topology.lines.emplace_back(a, b, r, l);
        }
    }
    return out;
}

}  // namespace dcgrid
