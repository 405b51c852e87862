#pragma once

#include <optional>

#include "stabcert/ball.hpp"
#include "stabcert/network.hpp"

namespace stabcert {

struct AttackConfig {
    int steps = 50;
    double eta = 0.1;   // step size as a fraction of each dimension's radius
    int restarts = 10;
    std::uint64_t seed = 1;
    bool scale_step_by_radii = true;  // false: raw sign steps of size eta

    void validate() const {
        require(steps >= 1, "attack: steps must be >= 1");
        require(eta > 0.0 && eta <= 1.0, "attack: eta must be in (0, 1]");
        require(restarts >= 1, "attack: restarts must be >= 1");
    }
};

struct AttackResult {
    bool found = false;
    Vec x_adv;
    double margin = 0.0;
    int restarts_used = 0;
};

/// Projected gradient ascent on the cross-entropy loss against the center's
/// class. Steps move along sign(grad), scaled per dimension by the ball
/// radii so heterogeneous units are handled; frozen dimensions stay put.
/// Restart 0 starts at the center, later restarts at uniform ball samples.
/// Returns the first sign-flipping input found, in restart order.
inline AttackResult pgd_attack(const Network& net, const PerturbationBall& ball,
                               const AttackConfig& cfg) {
    cfg.validate();
    require(net.head() == Head::Classifier2Logit, "pgd_attack: classifier head required");
    require(ball.dim() == net.input_dim(), "pgd_attack: ball dimension mismatch");
    const double m0 = net.margin(ball.center);
    require(m0 != 0.0, "pgd_attack: zero-margin center is ambiguous");
    const double defend = m0 > 0.0 ? 1.0 : -1.0;

    Rng rng(cfg.seed);
    AttackResult res;
    for (int r = 0; r < cfg.restarts; ++r) {
        res.restarts_used = r + 1;
        Vec x = (r == 0) ? ball.center : ball.sample(rng);
        for (int s = 0; s <= cfg.steps; ++s) {
            const double m = net.margin(x);
            if (m * m0 < 0.0) {
                res.found = true;
                res.x_adv = ball.project(x);
                res.margin = net.margin(res.x_adv);
                if (res.margin * m0 < 0.0) return res;
                res.found = false;  // projection pushed it back across; keep going
            }
            if (s == cfg.steps) break;
            // Raising the loss of the defended class = lowering defend*margin.
            Vec g = net.input_gradient(x);
            Vec step(x.size());
            for (int i = 0; i < x.size(); ++i) {
                const double dir = -defend * (g(i) > 0.0 ? 1.0 : (g(i) < 0.0 ? -1.0 : 0.0));
                step(i) = cfg.eta * dir * (cfg.scale_step_by_radii ? ball.radii(i) : 1.0);
            }
            x = ball.project(x + step);
        }
    }
    res.found = false;
    return res;
}

}  // namespace stabcert
