#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stabcert {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Domain-level error (bad input, inconsistent dimensions, malformed files).
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Solver failed to converge; carries the final residual.
struct ConvergenceError : std::runtime_error {
    double residual;
    ConvergenceError(const std::string& msg, double res)
        : std::runtime_error(msg), residual(res) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw DomainError(msg);
}

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Deterministic RNG used everywhere a seed appears in a config.
using Rng = std::mt19937_64;

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots so the outcome is independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned nw = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(nw);
    std::atomic<std::size_t> next{0};
    for (unsigned w = 0; w < nw; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace stabcert
