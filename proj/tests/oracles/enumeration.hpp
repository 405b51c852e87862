#pragma once

#include <functional>
#include <vector>

#include "stabcert/ball.hpp"
#include "stabcert/network.hpp"

namespace testutil {

using stabcert::Mat;
using stabcert::Vec;

/// All vertices of {x : A x <= b} found by enumerating d-subsets of active
/// constraints. Exact for small dimension; the polytopes here are always
/// box-bounded.
struct VertexSet {
    std::vector<Vec> pts;
    bool feasible() const { return !pts.empty(); }
};

inline VertexSet polytope_vertices(const Mat& A, const Vec& b) {
    const int d = static_cast<int>(A.cols());
    const int m = static_cast<int>(A.rows());
    VertexSet out;
    std::vector<int> idx(static_cast<std::size_t>(d));
    std::function<void(int, int)> rec = [&](int start, int k) {
        if (k == d) {
            Mat S(d, d);
            Vec rhs(d);
            for (int i = 0; i < d; ++i) {
                S.row(i) = A.row(idx[static_cast<std::size_t>(i)]);
                rhs(i) = b(idx[static_cast<std::size_t>(i)]);
            }
            Eigen::FullPivLU<Mat> lu(S);
            if (!lu.isInvertible()) return;
            Vec x = lu.solve(rhs);
            for (int r = 0; r < m; ++r)
                if (A.row(r).dot(x) > b(r) + 1e-7 * (1.0 + std::abs(b(r)))) return;
            out.pts.push_back(std::move(x));
            return;
        }
        for (int i = start; i <= m - (d - k); ++i) {
            idx[static_cast<std::size_t>(k)] = i;
            rec(i + 1, k + 1);
        }
    };
    rec(0, 0);
    return out;
}

inline double min_affine_over(const VertexSet& vs, const Vec& c, double c0, Vec* argmin = nullptr) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec& x : vs.pts) {
        const double v = c.dot(x) + c0;
        if (v < best) {
            best = v;
            if (argmin) *argmin = x;
        }
    }
    return best;
}

struct EnumerationResult {
    double min_value = std::numeric_limits<double>::infinity();
    Vec argmin;
    long patterns = 0;
};

/// Exact minimum of objective.logits over the ball by exhausting ReLU
/// activation patterns layer by layer, with vertex-enumeration feasibility
/// pruning. Independent of the library's bound machinery: composes affine
/// maps directly from the raw weights.
inline EnumerationResult enumerate_min_objective(const stabcert::Network& net,
                                                 const stabcert::PerturbationBall& ball,
                                                 const Vec& objective) {
    const int d = net.input_dim();
    EnumerationResult res;

    Mat box_A(2 * d, d);
    Vec box_b(2 * d);
    box_A.topRows(d) = Mat::Identity(d, d);
    box_A.bottomRows(d) = -Mat::Identity(d, d);
    box_b.head(d) = ball.hi();
    box_b.tail(d) = -ball.lo();

    struct Frame {
        Mat M;    // pre-activations of the current layer as M x + off
        Vec off;
        Mat A;    // accumulated constraints
        Vec b;
    };

    std::function<void(int, const Frame&)> rec = [&](int layer, const Frame& fr) {
        if (layer == net.num_hidden_layers()) {
            const stabcert::Layer& out = net.layer(net.num_layers() - 1);
            // fr.M/off here hold the POST-activations of the last hidden layer.
            const Vec c = (objective.transpose() * out.W * fr.M).transpose();
            const double c0 = objective.dot(out.W * fr.off + out.b);
            VertexSet vs = polytope_vertices(fr.A, fr.b);
            ++res.patterns;
            if (!vs.feasible()) return;
            Vec arg;
            const double v = min_affine_over(vs, c, c0, &arg);
            if (v < res.min_value) {
                res.min_value = v;
                res.argmin = arg;
            }
            return;
        }
        const stabcert::Layer& lay = net.layer(layer);
        Mat Mz = lay.W * fr.M;
        Vec dz = lay.W * fr.off + lay.b;
        const int nj = static_cast<int>(Mz.rows());
        for (long mask = 0; mask < (1L << nj); ++mask) {
            Frame child;
            child.A = Mat(fr.A.rows() + nj, d);
            child.b = Vec(fr.A.rows() + nj);
            child.A.topRows(fr.A.rows()) = fr.A;
            child.b.head(fr.A.rows()) = fr.b;
            Mat Mhat = Mz;
            Vec dhat = dz;
            for (int j = 0; j < nj; ++j) {
                const bool active = (mask >> j) & 1;
                if (active) {
                    child.A.row(fr.A.rows() + j) = -Mz.row(j);  // -z_j <= 0
                    child.b(fr.A.rows() + j) = dz(j);
                } else {
                    child.A.row(fr.A.rows() + j) = Mz.row(j);  // z_j <= 0
                    child.b(fr.A.rows() + j) = -dz(j);
                    Mhat.row(j).setZero();
                    dhat(j) = 0.0;
                }
            }
            if (!polytope_vertices(child.A, child.b).feasible()) {
                ++res.patterns;
                continue;
            }
            child.M = Mhat;
            child.off = dhat;
            rec(layer + 1, child);
        }
    };

    Frame root{Mat::Identity(d, d), Vec::Zero(d), box_A, box_b};
    rec(0, root);
    return res;
}

}  // namespace testutil
