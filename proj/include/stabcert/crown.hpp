#pragma once

#include "stabcert/bounds.hpp"

namespace stabcert {

/// Linear lower-bound form a.x + c over the input box.
struct LinearForm {
    Vec a;
    double c = 0.0;
};

/// Split-parameterized form (a + P*beta).x + q.beta + c. Valid for the
/// relaxation choices it was built with.
struct BetaLinearForm {
    Vec a;
    Mat P;  // input_dim x n_split
    Vec q;
    double c = 0.0;

    LinearForm at(const Vec& beta) const {
        LinearForm f;
        f.a = a + P * beta;
        f.c = c + q.dot(beta);
        return f;
    }
};

/// Exact minimum of a linear form over the weighted l-inf ball: the dual
/// l1 sum with per-dimension radii.
inline double closed_form_inner_min(const LinearForm& f, const PerturbationBall& ball) {
    require(f.a.size() == ball.dim(), "closed_form_inner_min: dimension mismatch");
    return f.a.dot(ball.center) - f.a.cwiseAbs().dot(ball.radii) + f.c;
}

inline double closed_form_inner_min(const BetaLinearForm& f, const Vec& beta,
                                    const PerturbationBall& ball) {
    return closed_form_inner_min(f.at(beta), ball);
}

/// CROWN default lower slope: 1 when the upper half dominates, else 0
/// (minimizes the relaxation area).
inline double default_alpha(double l, double u) { return u >= -l ? 1.0 : 0.0; }

namespace detail {

enum class ReluKind : std::int8_t { Pass, Blocked, LowerSlope, UpperSlope };

struct NeuronRelax {
    ReluKind kind;
    double d = 0.0;          // diagonal entry applied to the coefficient
    double intercept = 0.0;  // constant added per unit of (negative) coefficient
    std::int8_t split_sign = 0;  // S: -1 forced-active, +1 forced-inactive
};

struct RelaxRecord {
    int layer = 0;
    Vec a_hat;  // coefficient over the post-activation, before relaxation
    std::vector<NeuronRelax> relax;
};

struct BackwardTape {
    std::vector<RelaxRecord> records;  // in pass order: layer k-1 down to 0
};

/// Backward propagation of a linear objective over z_k (the pre-activation
/// of hidden layer k; k = num_hidden_layers() means the output) down to the
/// input. `alpha` may be empty (defaults);
/// `beta` may be empty (zeros). Both are flat over all hidden neurons.
inline LinearForm backward_pass(const Network& net, const LayerBounds& lb,
                                const SplitState& splits, const Vec& alpha, const Vec& beta,
                                int k, const Vec& objective, BackwardTape* tape = nullptr,
                                BetaLinearForm* beta_form = nullptr,
                                std::vector<int>* beta_order = nullptr) {
    Eigen::RowVectorXd A = objective.transpose();
    double constant = 0.0;

    // Side rows for materializing P and q: one per split neuron encountered.
    std::vector<Eigen::RowVectorXd> extra;
    std::vector<double> extra_const;
    std::vector<int> extra_flat;

    for (int i = k; i >= 0; --i) {
        const Layer& lay = net.layer(i);
        constant += A.dot(lay.b);
        A = A * lay.W;
        if (beta_form) {
            for (std::size_t m = 0; m < extra.size(); ++m) {
                extra_const[m] += extra[m].dot(net.layer(i).b);
                extra[m] = extra[m] * net.layer(i).W;
            }
        }
        if (i == 0) break;

        const int s = i - 1;
        const Vec& l = lb.lower[static_cast<std::size_t>(s)];
        const Vec& u = lb.upper[static_cast<std::size_t>(s)];
        RelaxRecord rec;
        rec.layer = s;
        if (tape) rec.a_hat = A.transpose();
        rec.relax.resize(static_cast<std::size_t>(A.size()));

        Eigen::RowVectorXd An(A.size());
        for (int j = 0; j < A.size(); ++j) {
            NeuronRelax nr;
            const int flat = flat_neuron_index(net, s, j);
            const std::int8_t sp = splits.s[static_cast<std::size_t>(flat)];
            double lj = l(j), uj = u(j);
            if (sp == +1) lj = std::max(lj, 0.0);
            if (sp == -1) uj = std::min(uj, 0.0);
            if (sp == +1 || lj >= 0.0) {
                nr.kind = ReluKind::Pass;
                nr.d = 1.0;
            } else if (sp == -1 || uj <= 0.0) {
                nr.kind = ReluKind::Blocked;
                nr.d = 0.0;
            } else if (uj - lj < 1e-12) {
                // Degenerate interval: decide by midpoint sign.
                nr.kind = (lj + uj >= 0.0) ? ReluKind::Pass : ReluKind::Blocked;
                nr.d = (nr.kind == ReluKind::Pass) ? 1.0 : 0.0;
            } else if (A(j) >= 0.0) {
                nr.kind = ReluKind::LowerSlope;
                nr.d = alpha.size() ? std::clamp(alpha(flat), 0.0, 1.0) : default_alpha(lj, uj);
            } else {
                nr.kind = ReluKind::UpperSlope;
                nr.d = uj / (uj - lj);
                nr.intercept = -uj * lj / (uj - lj);
            }
            nr.split_sign = sp == 0 ? 0 : static_cast<std::int8_t>(sp == +1 ? -1 : +1);
            double coeff = A(j) * nr.d;
            if (nr.kind == ReluKind::UpperSlope) constant += A(j) * nr.intercept;
            if (sp != 0) {
                const double b = beta.size() ? std::max(0.0, beta(flat)) : 0.0;
                coeff += b * static_cast<double>(nr.split_sign);
                if (beta_form) {
                    // New side row: this beta's direct entry into layer s.
                    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(A.size());
                    row(j) = static_cast<double>(nr.split_sign);
                    extra.push_back(std::move(row));
                    extra_const.push_back(0.0);
                    extra_flat.push_back(flat);
                }
            }
            An(j) = coeff;
            rec.relax[static_cast<std::size_t>(j)] = nr;
        }
        if (beta_form) {
            // Side rows created in earlier (higher) layers pass through this
            // relaxation with the same diagonal selections; their share of
            // the upper-relaxation intercept goes into q, not c.
            const int layer_lo = flat_neuron_index(net, s, 0);
            const int layer_hi = layer_lo + net.hidden_size(s);
            for (std::size_t m = 0; m < extra.size(); ++m) {
                if (extra_flat[m] >= layer_lo && extra_flat[m] < layer_hi)
                    continue;  // created at this layer, already over z_s
                Eigen::RowVectorXd rn(A.size());
                for (int j = 0; j < A.size(); ++j) {
                    const NeuronRelax& nr = rec.relax[static_cast<std::size_t>(j)];
                    if (nr.kind == ReluKind::UpperSlope)
                        extra_const[m] += extra[m](j) * nr.intercept;
                    rn(j) = extra[m](j) * nr.d;
                }
                extra[m] = rn;
            }
        }
        A = An;
        if (tape) tape->records.push_back(std::move(rec));
    }

    LinearForm merged{A.transpose(), constant};
    if (beta_form) {
        const int nsplit = static_cast<int>(extra.size());
        beta_form->P = Mat::Zero(net.input_dim(), nsplit);
        beta_form->q = Vec::Zero(nsplit);
        for (int m = 0; m < nsplit; ++m) {
            beta_form->P.col(m) = extra[static_cast<std::size_t>(m)].transpose();
            beta_form->q(m) = extra_const[static_cast<std::size_t>(m)];
        }
        Vec beta_used = Vec::Zero(nsplit);
        for (int m = 0; m < nsplit; ++m)
            beta_used(m) = beta.size() ? std::max(0.0, beta(extra_flat[static_cast<std::size_t>(m)])) : 0.0;
        beta_form->a = merged.a - beta_form->P * beta_used;
        beta_form->c = merged.c - beta_form->q.dot(beta_used);
        if (beta_order) *beta_order = extra_flat;
    }
    return merged;
}

/// Gradient of the closed-form bound w.r.t. alpha and beta (flat vectors),
/// for the relaxation choices recorded on the tape. Uses the envelope
/// theorem at the inner minimizer.
inline void backward_gradients(const Network& net, const BackwardTape& tape,
                               const PerturbationBall& ball, const LinearForm& merged,
                               Vec& grad_alpha, Vec& grad_beta) {
    const int n_hidden = net.total_hidden_neurons();
    grad_alpha = Vec::Zero(n_hidden);
    grad_beta = Vec::Zero(n_hidden);

    // Minimizer of the merged form over the ball.
    Vec xstar = ball.center;
    for (int i = 0; i < xstar.size(); ++i) {
        if (merged.a(i) > 0.0)
            xstar(i) -= ball.radii(i);
        else if (merged.a(i) < 0.0)
            xstar(i) += ball.radii(i);
    }

    // Adjoint sweep from the input side back up through the recorded steps.
    Vec adj = xstar;
    for (int r = static_cast<int>(tape.records.size()) - 1; r >= 0; --r) {
        const RelaxRecord& rec = tape.records[static_cast<std::size_t>(r)];
        const Layer& lay = net.layer(rec.layer);
        Vec adj_z = lay.W * adj + lay.b;  // d(bound)/d(coefficient over z_layer)
        Vec adj_hat(adj_z.size());
        for (int j = 0; j < adj_z.size(); ++j) {
            const NeuronRelax& nr = rec.relax[static_cast<std::size_t>(j)];
            const int flat = flat_neuron_index(net, rec.layer, j);
            adj_hat(j) = nr.d * adj_z(j);
            if (nr.kind == ReluKind::UpperSlope) adj_hat(j) += nr.intercept;
            if (nr.kind == ReluKind::LowerSlope) grad_alpha(flat) = rec.a_hat(j) * adj_z(j);
            if (nr.split_sign != 0) grad_beta(flat) = static_cast<double>(nr.split_sign) * adj_z(j);
        }
        adj = adj_hat;
    }
}

}  // namespace detail

/// Verification objective row over the output logits: minimize
/// t * (stable - unstable) where t is the sign of the center margin.
inline Vec margin_objective(double center_margin) {
    const double t = center_margin >= 0.0 ? 1.0 : -1.0;
    Vec c(2);
    c << -t, t;
    return c;
}

struct CrownResult {
    LinearForm form;
    double bound = 0.0;
    BetaLinearForm beta_form;       // populated when splits are present
    std::vector<int> beta_order;    // flat neuron index per beta column
};

/// One backward CROWN pass for a linear objective over the output, with the
/// given slopes and split multipliers. The returned bound is the exact
/// minimum of the returned linear form over the ball.
inline CrownResult crown_backward(const Network& net, const PerturbationBall& ball,
                                  const LayerBounds& bounds, const SplitState& splits,
                                  const Vec& alpha, const Vec& beta, const Vec& objective) {
    require(net.normalization().shift.isZero(0.0) &&
                (net.normalization().scale.array() == 1.0).all(),
            "crown_backward: fold normalization first");
    CrownResult res;
    const bool want_beta = splits.count() > 0;
    res.form = detail::backward_pass(net, bounds, splits, alpha, beta, net.num_hidden_layers(),
                                     objective, nullptr, want_beta ? &res.beta_form : nullptr,
                                     want_beta ? &res.beta_order : nullptr);
    res.bound = closed_form_inner_min(res.form, ball);
    return res;
}

/// Pre-activation bounds per layer: interval arithmetic tightened by one
/// CROWN backward pass per layer, intersected with the split half-lines.
inline LayerBounds refined_layer_bounds(const Network& net, const PerturbationBall& ball,
                                        const SplitState& splits) {
    LayerBounds lb = interval_bounds(net, ball, splits);
    if (lb.infeasible) return lb;
    const Vec empty;
    for (int t = 1; t < net.num_hidden_layers(); ++t) {
        Vec& l = lb.lower[static_cast<std::size_t>(t)];
        Vec& u = lb.upper[static_cast<std::size_t>(t)];
        const int n = static_cast<int>(l.size());
        for (int j = 0; j < n; ++j) {
            Vec ej = Vec::Zero(n);
            ej(j) = 1.0;
            const LinearForm flo = detail::backward_pass(net, lb, splits, empty, empty, t, ej);
            ej(j) = -1.0;
            const LinearForm fhi = detail::backward_pass(net, lb, splits, empty, empty, t, ej);
            l(j) = std::max(l(j), closed_form_inner_min(flo, ball));
            u(j) = std::min(u(j), -closed_form_inner_min(fhi, ball));
        }
        for (int j = 0; j < n; ++j) {
            const std::int8_t sp = splits.s[static_cast<std::size_t>(flat_neuron_index(net, t, j))];
            if (sp == +1) l(j) = std::max(l(j), 0.0);
            if (sp == -1) u(j) = std::min(u(j), 0.0);
            if (l(j) > u(j)) {
                lb.infeasible = true;
                return lb;
            }
        }
    }
    return lb;
}

/// Default slopes for every hidden neuron under the given bounds.
inline Vec default_alphas(const Network& net, const LayerBounds& lb) {
    Vec a = Vec::Ones(net.total_hidden_neurons());
    for (int t = 0; t < net.num_hidden_layers(); ++t)
        for (int j = 0; j < net.hidden_size(t); ++j)
            a(flat_neuron_index(net, t, j)) =
                default_alpha(lb.lower[static_cast<std::size_t>(t)](j),
                              lb.upper[static_cast<std::size_t>(t)](j));
    return a;
}

struct AscentResult {
    double bound = 0.0;
    Vec alpha;
    Vec beta;
    LinearForm form;  // form achieving the best bound
};

/// Projected gradient ascent on (alpha, beta), best-so-far bound kept.
/// Also probes the all-zero and all-one slope endpoints, which are exact
/// for single-kink instances.
inline AscentResult ascend_bound(const Network& net, const PerturbationBall& ball,
                                 const LayerBounds& bounds, const SplitState& splits,
                                 Vec alpha, Vec beta, int iters, double lr,
                                 const Vec& objective) {
    AscentResult best;
    best.bound = -std::numeric_limits<double>::infinity();

    auto evaluate = [&](const Vec& a, const Vec& b, detail::BackwardTape* tape,
                        LinearForm* form_out) -> double {
        detail::BackwardTape local;
        LinearForm f = detail::backward_pass(net, bounds, splits, a, b, net.num_hidden_layers(),
                                             objective, tape ? tape : &local);
        const double g = closed_form_inner_min(f, ball);
        if (form_out) *form_out = f;
        return g;
    };

    auto consider = [&](const Vec& a, const Vec& b, double g, const LinearForm& f) {
        if (g > best.bound) {
            best.bound = g;
            best.alpha = a;
            best.beta = b;
            best.form = f;
        }
    };

    const int n_hidden = net.total_hidden_neurons();
    if (alpha.size() == 0) alpha = default_alphas(net, bounds);
    if (beta.size() == 0) beta = Vec::Zero(n_hidden);

    {
        LinearForm f;
        const double g = evaluate(alpha, beta, nullptr, &f);
        consider(alpha, beta, g, f);
    }
    for (double endpoint : {0.0, 1.0}) {
        LinearForm f;
        const Vec ae = Vec::Constant(n_hidden, endpoint);
        const double g = evaluate(ae, beta, nullptr, &f);
        consider(ae, beta, g, f);
    }

    Vec a = alpha, b = beta;
    double step = lr;
    for (int it = 0; it < iters; ++it) {
        detail::BackwardTape tape;
        LinearForm f;
        const double g = evaluate(a, b, &tape, &f);
        consider(a, b, g, f);
        Vec ga, gb;
        detail::backward_gradients(net, tape, ball, f, ga, gb);
        a = (a + step * ga).cwiseMax(0.0).cwiseMin(1.0);
        b = (b + step * gb).cwiseMax(0.0);
        step *= 0.98;
    }
    {
        LinearForm f;
        const double g = evaluate(a, b, nullptr, &f);
        consider(a, b, g, f);
    }
    return best;
}

struct AlphaCrownResult {
    double bound = 0.0;
    Vec alpha;
};

/// CROWN with the lower slopes optimized by projected gradient ascent.
/// Returned bound is never below the default-slope CROWN bound.
inline AlphaCrownResult alpha_crown(const Network& raw_net, const PerturbationBall& ball,
                                    int iters = 20, double lr = 0.1) {
    const Network net = raw_net.fold_normalization();
    require(net.head() == Head::Classifier2Logit, "alpha_crown: classifier head required");
    const SplitState splits = SplitState::none(net);
    const LayerBounds lb = refined_layer_bounds(net, ball, splits);
    const Vec obj = margin_objective(net.margin(ball.center));
    AscentResult r = ascend_bound(net, ball, lb, splits, Vec(), Vec(), iters, lr, obj);
    return {r.bound, r.alpha};
}

}  // namespace stabcert
