#pragma once

#include <limits>

#include "stabcert/ball.hpp"
#include "stabcert/network.hpp"

namespace stabcert {

/// Split state per hidden neuron, flat-indexed layer by layer:
/// 0 = free, +1 = forced-active (z >= 0), -1 = forced-inactive (z < 0).
struct SplitState {
    std::vector<std::int8_t> s;

    static SplitState none(const Network& net) {
        SplitState st;
        st.s.assign(static_cast<std::size_t>(net.total_hidden_neurons()), 0);
        return st;
    }

    int count() const {
        int n = 0;
        for (auto v : s) n += v != 0;
        return n;
    }
};

/// Flat index of hidden neuron j in hidden layer t.
inline int flat_neuron_index(const Network& net, int layer, int j) {
    int off = 0;
    for (int t = 0; t < layer; ++t) off += net.hidden_size(t);
    return off + j;
}

/// Pre-activation bounds per hidden layer, valid for every x in the ball
/// that satisfies the split constraints. `infeasible` marks an interval
/// emptied by a split intersection (vacuous subdomain).
struct LayerBounds {
    std::vector<Vec> lower, upper;
    bool infeasible = false;

    int n_layers() const { return static_cast<int>(lower.size()); }

    bool is_unstable(int layer, int j) const {
        return lower[static_cast<std::size_t>(layer)](j) < 0.0 &&
               upper[static_cast<std::size_t>(layer)](j) > 0.0;
    }
};

namespace detail {

struct Box {
    Vec lo, hi;
    Vec center() const { return 0.5 * (lo + hi); }
    Vec radius() const { return 0.5 * (hi - lo); }
};

inline Box affine_box(const Mat& W, const Vec& b, const Box& in) {
    const Vec c = W * in.center() + b;
    const Vec r = W.cwiseAbs() * in.radius();
    return {c - r, c + r};
}

/// Applies the split half-line and the ReLU to a pre-activation box.
/// Returns false when the intersection is empty.
inline bool gate_box(std::int8_t split, double& l, double& u, double& pl, double& pu) {
    if (split == +1) l = std::max(l, 0.0);
    if (split == -1) u = std::min(u, 0.0);
    if (l > u) return false;
    if (split == -1) {
        pl = pu = 0.0;
    } else {
        pl = std::max(l, 0.0);
        pu = std::max(u, 0.0);
    }
    return true;
}

}  // namespace detail

/// Layer-by-layer interval arithmetic seeded by the ball; split neurons get
/// their interval intersected with the split half-line. The network must
/// have identity normalization (fold first).
inline LayerBounds interval_bounds(const Network& net, const PerturbationBall& ball,
                                   const SplitState& splits) {
    require(ball.dim() == net.input_dim(), "interval_bounds: ball dimension mismatch");
    LayerBounds lb;
    detail::Box box{ball.lo(), ball.hi()};
    const int H = net.num_hidden_layers();
    for (int t = 0; t < H; ++t) {
        const Layer& lay = net.layer(t);
        detail::Box pre = detail::affine_box(lay.W, lay.b, box);
        Vec pl(pre.lo.size()), pu(pre.lo.size());
        for (int j = 0; j < pre.lo.size(); ++j) {
            const std::int8_t sp = splits.s[static_cast<std::size_t>(flat_neuron_index(net, t, j))];
            if (!detail::gate_box(sp, pre.lo(j), pre.hi(j), pl(j), pu(j))) lb.infeasible = true;
        }
        lb.lower.push_back(pre.lo);
        lb.upper.push_back(pre.hi);
        if (lb.infeasible) {
            // Fill remaining layers with the unconstrained propagation shape
            // so callers can still index; bounds are meaningless past here.
            for (int r = t + 1; r < H; ++r) {
                lb.lower.push_back(Vec::Zero(net.hidden_size(r)));
                lb.upper.push_back(Vec::Zero(net.hidden_size(r)));
            }
            return lb;
        }
        box = {pl, pu};
    }
    return lb;
}

/// Interval lower bound on a linear functional of the output over the ball.
inline double interval_objective_bound(const Network& net, const PerturbationBall& ball,
                                       const SplitState& splits, const Vec& objective) {
    LayerBounds lb = interval_bounds(net, ball, splits);
    if (lb.infeasible) return std::numeric_limits<double>::infinity();
    detail::Box box{ball.lo(), ball.hi()};
    const int H = net.num_hidden_layers();
    if (H > 0) {
        Vec pl(net.hidden_size(H - 1)), pu(net.hidden_size(H - 1));
        // Rebuild the last post-activation box from the recorded bounds.
        box = {ball.lo(), ball.hi()};
        for (int t = 0; t < H; ++t) {
            Vec l = lb.lower[static_cast<std::size_t>(t)], u = lb.upper[static_cast<std::size_t>(t)];
            Vec post_l(l.size()), post_u(l.size());
            for (int j = 0; j < l.size(); ++j) {
                double ll = l(j), uu = u(j);
                const std::int8_t sp = splits.s[static_cast<std::size_t>(flat_neuron_index(net, t, j))];
                detail::gate_box(sp, ll, uu, post_l(j), post_u(j));
            }
            box = {post_l, post_u};
        }
    }
    const Layer& out = net.layer(net.num_layers() - 1);
    detail::Box ob = detail::affine_box(out.W, out.b, box);
    double bound = 0.0;
    for (int i = 0; i < objective.size(); ++i)
        bound += objective(i) >= 0.0 ? objective(i) * ob.lo(i) : objective(i) * ob.hi(i);
    return bound;
}

}  // namespace stabcert
