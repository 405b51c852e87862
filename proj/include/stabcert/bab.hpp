#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <queue>

#include "stabcert/attack.hpp"
#include "stabcert/crown.hpp"
#include "stabcert/simplex.hpp"

namespace stabcert {

enum class VerifyStatus { SafeIncomplete, SafeComplete, Unsafe, Unknown };

inline std::string to_string(VerifyStatus s) {
    switch (s) {
        case VerifyStatus::SafeIncomplete: return "safe-incomplete";
        case VerifyStatus::SafeComplete: return "safe-complete";
        case VerifyStatus::Unsafe: return "unsafe";
        default: return "unknown";
    }
}

inline bool is_safe(VerifyStatus s) {
    return s == VerifyStatus::SafeIncomplete || s == VerifyStatus::SafeComplete;
}

struct VerifyOutcome {
    VerifyStatus status = VerifyStatus::Unknown;
    double bound = -std::numeric_limits<double>::infinity();
    std::optional<Vec> counterexample;
    double counterexample_margin = 0.0;
    long domains = 0;
    double t_pgd = 0.0, t_alpha = 0.0, t_bab = 0.0;
};

/// One branch-and-bound subproblem: the ball restricted by the split
/// constraints, with its warm-started ascent state and certified bound.
struct Domain {
    SplitState splits;
    Vec alpha, beta;
    LayerBounds bounds;
    double bound = -std::numeric_limits<double>::infinity();
    bool vacuous = false;  // split constraints are unsatisfiable in the ball
    bool exact = false;    // affine subdomain decided by LP, bound is exact
    Vec candidate;         // inner minimizer, a counterexample candidate
};

namespace detail {

inline bool has_free_unstable(const Network& net, const Domain& d) {
    for (int t = 0; t < net.num_hidden_layers(); ++t)
        for (int j = 0; j < net.hidden_size(t); ++j) {
            const int flat = flat_neuron_index(net, t, j);
            if (d.splits.s[static_cast<std::size_t>(flat)] == 0 && d.bounds.is_unstable(t, j))
                return true;
        }
    return false;
}

struct AffineLeaf {
    Vec a;
    double c = 0.0;
    Mat G;
    Vec h;
};

/// Affine restriction of the objective on a fully decided subdomain, plus
/// the split half-space constraints expressed over the input.
inline AffineLeaf affine_leaf(const Network& net, const Domain& d, const Vec& objective) {
    const int dim = net.input_dim();
    Mat M = Mat::Identity(dim, dim);
    Vec off = Vec::Zero(dim);
    std::vector<Vec> grows;
    std::vector<double> grhs;
    for (int t = 0; t < net.num_hidden_layers(); ++t) {
        const Layer& lay = net.layer(t);
        Mat Mz = lay.W * M;
        Vec dz = lay.W * off + lay.b;
        for (int j = 0; j < net.hidden_size(t); ++j) {
            const int flat = flat_neuron_index(net, t, j);
            const std::int8_t sp = d.splits.s[static_cast<std::size_t>(flat)];
            const double l = d.bounds.lower[static_cast<std::size_t>(t)](j);
            const double u = d.bounds.upper[static_cast<std::size_t>(t)](j);
            bool active;
            if (sp == +1) {
                active = true;
                grows.push_back(-Mz.row(j).transpose());
                grhs.push_back(dz(j));
            } else if (sp == -1) {
                active = false;
                grows.push_back(Mz.row(j).transpose());
                grhs.push_back(-dz(j));
            } else if (l >= 0.0) {
                active = true;
            } else if (u <= 0.0) {
                active = false;
            } else if (u - l < 1e-12) {
                active = l + u >= 0.0;
            } else {
                throw DomainError("affine_leaf: free unstable neuron present");
            }
            if (!active) {
                Mz.row(j).setZero();
                dz(j) = 0.0;
            }
        }
        M = std::move(Mz);
        off = std::move(dz);
    }
    const Layer& out = net.layer(net.num_layers() - 1);
    AffineLeaf leaf;
    leaf.a = (objective.transpose() * out.W * M).transpose();
    leaf.c = objective.dot(out.W * off + out.b);
    leaf.G = Mat(static_cast<int>(grows.size()), dim);
    leaf.h = Vec(static_cast<int>(grows.size()));
    for (std::size_t r = 0; r < grows.size(); ++r) {
        leaf.G.row(static_cast<int>(r)) = grows[r].transpose();
        leaf.h(static_cast<int>(r)) = grhs[r];
    }
    return leaf;
}

inline Vec inner_minimizer(const LinearForm& f, const PerturbationBall& ball) {
    Vec x = ball.center;
    for (int i = 0; i < x.size(); ++i) {
        if (f.a(i) > 0.0)
            x(i) -= ball.radii(i);
        else if (f.a(i) < 0.0)
            x(i) += ball.radii(i);
    }
    return x;
}

}  // namespace detail

/// Bounds one domain: refreshes its layer bounds, then either decides the
/// affine subdomain exactly by LP or runs joint projected ascent on
/// (alpha, beta). The bound never drops below `parent_bound`, which remains
/// valid on the child subdomain.
inline void beta_crown_domain(const Network& net, const PerturbationBall& ball, Domain& d,
                              int iters, double lr, const Vec& objective,
                              double parent_bound = -std::numeric_limits<double>::infinity()) {
    d.bounds = refined_layer_bounds(net, ball, d.splits);
    if (d.bounds.infeasible) {
        d.vacuous = true;
        d.exact = true;
        d.bound = std::numeric_limits<double>::infinity();
        return;
    }
    if (!detail::has_free_unstable(net, d)) {
        const detail::AffineLeaf leaf = detail::affine_leaf(net, d, objective);
        const LpResult lp = solve_box_lp(leaf.a, ball.lo(), ball.hi(), leaf.G, leaf.h);
        if (lp.status == LpStatus::Infeasible) {
            d.vacuous = true;
            d.exact = true;
            d.bound = std::numeric_limits<double>::infinity();
            return;
        }
        d.exact = true;
        d.candidate = lp.x;
        d.bound = std::max(lp.objective + leaf.c, parent_bound);
        return;
    }
    AscentResult r = ascend_bound(net, ball, d.bounds, d.splits, d.alpha, d.beta, iters, lr,
                                  objective);
    d.alpha = r.alpha;
    d.beta = r.beta;
    d.candidate = detail::inner_minimizer(r.form, ball);
    const double ibp = interval_objective_bound(net, ball, d.splits, objective);
    d.bound = std::max({r.bound, ibp, parent_bound});
}

struct BabConfig {
    long max_domains = 200000;
    double max_seconds = 120.0;
    int ascent_iters = 20;
    double lr = 0.1;
    bool hunt_counterexamples = true;
    int hunt_steps = 12;
};

namespace detail {

/// Short sign-gradient descent on the defended margin from a given start,
/// projected onto the ball; the cheap counterexample hunt run per domain.
inline std::optional<Vec> hunt_from(const Network& net, const PerturbationBall& ball, Vec x,
                                    double m0, int steps) {
    const double defend = m0 > 0.0 ? 1.0 : -1.0;
    x = ball.project(x);
    for (int s = 0; s <= steps; ++s) {
        if (net.margin(x) * m0 < 0.0) return x;
        if (s == steps) break;
        Vec g = net.input_gradient(x);
        Vec step(x.size());
        for (int i = 0; i < x.size(); ++i) {
            const double dir = -defend * (g(i) > 0.0 ? 1.0 : (g(i) < 0.0 ? -1.0 : 0.0));
            step(i) = 0.2 * dir * ball.radii(i);
        }
        x = ball.project(x + step);
    }
    return std::nullopt;
}

}  // namespace detail

/// Complete verification by ReLU splitting. Worklist ordered by lowest
/// bound; the highest-scoring unstable neuron (largest relaxation area
/// u*(-l)/(u-l)) is split into forced-active / forced-inactive children.
/// Deterministic: ties break on insertion order.
inline VerifyOutcome branch_and_bound(const Network& raw_net, const PerturbationBall& ball,
                                      const BabConfig& cfg = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const Network net = raw_net.fold_normalization();
    require(net.head() == Head::Classifier2Logit, "branch_and_bound: classifier head required");
    const double m0 = net.margin(ball.center);
    require(m0 != 0.0, "branch_and_bound: zero-margin center is ambiguous");
    const Vec obj = margin_objective(m0);

    VerifyOutcome out;
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    auto check_candidate = [&](const Vec& x) -> bool {
        if (x.size() == 0) return false;
        const Vec xp = ball.project(x);
        const double m = net.margin(xp);
        if (m * m0 < 0.0) {
            out.status = VerifyStatus::Unsafe;
            out.counterexample = xp;
            out.counterexample_margin = m;
            return true;
        }
        return false;
    };

    Domain root;
    root.splits = SplitState::none(net);
    beta_crown_domain(net, ball, root, cfg.ascent_iters, cfg.lr, obj);
    out.domains = 1;
    if (check_candidate(root.candidate)) {
        out.t_bab = elapsed();
        return out;
    }
    double min_leaf = std::numeric_limits<double>::infinity();
    long undecided_leaves = 0;

    struct Entry {
        double bound;
        long seq;
        std::shared_ptr<Domain> dom;
        bool operator<(const Entry& o) const {
            return bound != o.bound ? bound > o.bound : seq > o.seq;  // min-heap
        }
    };
    std::priority_queue<Entry> work;
    long seq = 0;

    auto settle = [&](std::shared_ptr<Domain> d) -> bool {
        // Returns true when a counterexample ended the search.
        if (d->vacuous) return false;
        if (check_candidate(d->candidate)) return true;
        if (cfg.hunt_counterexamples && d->candidate.size() > 0) {
            auto ce = detail::hunt_from(net, ball, d->candidate, m0, cfg.hunt_steps);
            if (ce && check_candidate(*ce)) return true;
        }
        if (d->bound > 0.0) {
            min_leaf = std::min(min_leaf, d->bound);
            return false;
        }
        if (d->exact) {
            ++undecided_leaves;  // exact minimum is <= 0 yet not a strict flip
            return false;
        }
        work.push({d->bound, seq++, std::move(d)});
        return false;
    };

    if (settle(std::make_shared<Domain>(std::move(root)))) {
        out.t_bab = elapsed();
        return out;
    }

    while (!work.empty()) {
        if (out.domains >= cfg.max_domains || elapsed() > cfg.max_seconds) {
            out.status = VerifyStatus::Unknown;
            out.bound = work.top().bound;
            out.t_bab = elapsed();
            return out;
        }
        const std::shared_ptr<Domain> d = work.top().dom;
        work.pop();

        int best_layer = -1, best_j = -1;
        double best_score = -1.0;
        for (int t = 0; t < net.num_hidden_layers(); ++t)
            for (int j = 0; j < net.hidden_size(t); ++j) {
                const int flat = flat_neuron_index(net, t, j);
                if (d->splits.s[static_cast<std::size_t>(flat)] != 0) continue;
                if (!d->bounds.is_unstable(t, j)) continue;
                const double l = d->bounds.lower[static_cast<std::size_t>(t)](j);
                const double u = d->bounds.upper[static_cast<std::size_t>(t)](j);
                const double score = u * (-l) / (u - l);
                if (score > best_score + 1e-15) {
                    best_score = score;
                    best_layer = t;
                    best_j = j;
                }
            }
        if (best_layer < 0) {
            // No splittable neuron; cannot refine further.
            out.status = VerifyStatus::Unknown;
            out.bound = d->bound;
            out.t_bab = elapsed();
            return out;
        }
        const int flat = flat_neuron_index(net, best_layer, best_j);
        for (std::int8_t sign : {std::int8_t{+1}, std::int8_t{-1}}) {
            auto child = std::make_shared<Domain>(*d);
            child->splits.s[static_cast<std::size_t>(flat)] = sign;
            child->exact = false;
            child->vacuous = false;
            beta_crown_domain(net, ball, *child, cfg.ascent_iters, cfg.lr, obj, d->bound);
            ++out.domains;
            if (settle(std::move(child))) {
                out.t_bab = elapsed();
                return out;
            }
        }
    }

    out.t_bab = elapsed();
    if (undecided_leaves > 0) {
        out.status = VerifyStatus::Unknown;
        out.bound = 0.0;
        return out;
    }
    out.status = VerifyStatus::SafeComplete;
    out.bound = min_leaf;
    return out;
}

struct VerifyConfig {
    bool use_pgd = true;
    AttackConfig pgd{};
    int alpha_iters = 20;
    double lr = 0.1;
    BabConfig bab{};
};

/// Staged verification: PGD attack, then alpha-CROWN, then branch-and-bound
/// beta-CROWN, returning at the first conclusive stage.
inline VerifyOutcome verify_pipeline(const Network& raw_net, const PerturbationBall& ball,
                                     const VerifyConfig& cfg = {}) {
    using clock = std::chrono::steady_clock;
    require(raw_net.head() == Head::Classifier2Logit, "verify: classifier head required");
    const double m0 = raw_net.margin(ball.center);
    require(m0 != 0.0, "verify: zero-margin center is ambiguous");

    VerifyOutcome out;
    if (cfg.use_pgd) {
        const auto t0 = clock::now();
        AttackResult atk = pgd_attack(raw_net, ball, cfg.pgd);
        out.t_pgd = std::chrono::duration<double>(clock::now() - t0).count();
        if (atk.found) {
            out.status = VerifyStatus::Unsafe;
            out.counterexample = atk.x_adv;
            out.counterexample_margin = atk.margin;
            return out;
        }
    }
    {
        const auto t0 = clock::now();
        const Network net = raw_net.fold_normalization();
        const AlphaCrownResult ac = alpha_crown(raw_net, ball, cfg.alpha_iters, cfg.lr);
        const double ibp = interval_objective_bound(net, ball, SplitState::none(net),
                                                    margin_objective(m0));
        out.bound = std::max(ac.bound, ibp);
        out.t_alpha = std::chrono::duration<double>(clock::now() - t0).count();
        if (out.bound > 0.0) {
            out.status = VerifyStatus::SafeIncomplete;
            return out;
        }
    }
    VerifyOutcome bab = branch_and_bound(raw_net, ball, cfg.bab);
    bab.t_pgd = out.t_pgd;
    bab.t_alpha = out.t_alpha;
    bab.bound = std::max(bab.bound, out.bound);
    return bab;
}

struct PerturbationSweepResult {
    double safe_scale = 0.0;      // largest scale verified safe
    double not_safe_scale = 0.0;  // smallest probed scale that failed to verify
    double unsafe_scale = std::numeric_limits<double>::quiet_NaN();  // smallest observed unsafe
    VerifyStatus safe_status = VerifyStatus::SafeIncomplete;
    VerifyStatus boundary_status = VerifyStatus::Unknown;
    std::vector<std::pair<double, VerifyStatus>> probes;
};

/// Bisects the global scale applied to the ball radii for the largest
/// certified-safe multiplier. Unknown outcomes count as not-safe, shrinking
/// the claimed scale conservatively.
inline PerturbationSweepResult max_safe_perturbation(const Network& net,
                                                     const PerturbationBall& base_ball,
                                                     const VerifyConfig& cfg, double max_scale,
                                                     double resolution) {
    require(max_scale > 0.0 && resolution > 0.0, "max_safe_perturbation: bad schedule");
    PerturbationSweepResult res;
    auto probe = [&](double s) -> VerifyStatus {
        if (s == 0.0) return VerifyStatus::SafeIncomplete;
        const VerifyOutcome o = verify_pipeline(net, base_ball.scaled(s), cfg);
        res.probes.emplace_back(s, o.status);
        return o.status;
    };
    double lo = 0.0, hi = max_scale;
    const VerifyStatus top = probe(max_scale);
    if (is_safe(top)) {
        res.safe_scale = max_scale;
        res.not_safe_scale = std::numeric_limits<double>::infinity();
        res.safe_status = top;
        res.boundary_status = top;
        return res;
    }
    res.boundary_status = top;
    if (top == VerifyStatus::Unsafe) res.unsafe_scale = max_scale;
    while (hi - lo > resolution) {
        const double mid = 0.5 * (lo + hi);
        const VerifyStatus st = probe(mid);
        if (is_safe(st)) {
            lo = mid;
            res.safe_status = st;
        } else {
            hi = mid;
            res.boundary_status = st;
            if (st == VerifyStatus::Unsafe)
                res.unsafe_scale = std::isnan(res.unsafe_scale) ? mid
                                                                : std::min(res.unsafe_scale, mid);
        }
    }
    res.safe_scale = lo;
    res.not_safe_scale = hi;
    return res;
}

}  // namespace stabcert
