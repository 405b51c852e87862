#pragma once

#include "stabcert/common.hpp"

namespace stabcert {

/// Weighted l-infinity box around a center point, in physical units.
/// Radii may be zero (frozen dimensions).
struct PerturbationBall {
    Vec center;
    Vec radii;

    PerturbationBall() = default;
    PerturbationBall(Vec c, Vec r) : center(std::move(c)), radii(std::move(r)) {
        require(center.size() == radii.size(), "ball: center/radii dimension mismatch");
        require((radii.array() >= 0.0).all(), "ball: radii must be >= 0");
    }

    int dim() const { return static_cast<int>(center.size()); }
    Vec lo() const { return center - radii; }
    Vec hi() const { return center + radii; }

    bool contains(const Vec& x, double tol = 1e-9) const {
        return ((x - center).cwiseAbs().array() <= radii.array() + tol).all();
    }

    /// Elementwise clamp onto the box (the projection operator).
    Vec project(const Vec& x) const {
        return x.cwiseMax(lo()).cwiseMin(hi());
    }

    Vec sample(Rng& rng) const {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Vec x(dim());
        for (int i = 0; i < dim(); ++i) x(i) = center(i) + radii(i) * u(rng);
        return x;
    }

    PerturbationBall scaled(double s) const {
        return PerturbationBall(center, radii * s);
    }
};

/// Radii from per-dimension percentages of the center magnitude, shrunk so
/// the box never crosses the given physical floors.
inline PerturbationBall ball_from_percent(const Vec& center, const Vec& percent,
                                          const Vec& floor_value) {
    require(center.size() == percent.size() && center.size() == floor_value.size(),
            "ball_from_percent: dimension mismatch");
    Vec radii(center.size());
    for (int i = 0; i < center.size(); ++i) {
        double r = percent(i) / 100.0 * std::abs(center(i));
        if (std::isfinite(floor_value(i))) r = std::min(r, std::max(0.0, center(i) - floor_value(i)));
        radii(i) = r;
    }
    return PerturbationBall(center, radii);
}

}  // namespace stabcert
