#pragma once

#include <random>

#include "stabcert/network.hpp"

namespace testutil {

using stabcert::Mat;
using stabcert::Vec;

/// Random ReLU net with the given layer sizes (input first, output last).
inline stabcert::Network random_network(const std::vector<int>& sizes, std::uint64_t seed,
                                        stabcert::Head head, double weight_scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, weight_scale);
    std::vector<stabcert::Layer> layers;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        Mat W(sizes[i + 1], sizes[i]);
        Vec b(sizes[i + 1]);
        for (int r = 0; r < W.rows(); ++r) {
            for (int c = 0; c < W.cols(); ++c) W(r, c) = nd(rng) / std::sqrt(sizes[i]);
            b(r) = 0.3 * nd(rng);
        }
        layers.push_back({std::move(W), std::move(b)});
    }
    const int d = sizes.front();
    stabcert::Normalization norm{Vec::Zero(d), Vec::Ones(d)};
    return stabcert::Network(std::move(layers), head, std::move(norm));
}

inline Vec random_vec(int n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

/// Independent forward oracle: plain loops over raw weight arrays, no reuse
/// of the library's propagation code.
inline std::vector<double> forward_oracle(const stabcert::Network& net,
                                          const std::vector<double>& x_raw) {
    std::vector<double> h(x_raw.size());
    for (std::size_t i = 0; i < x_raw.size(); ++i)
        h[i] = (x_raw[i] - net.normalization().shift(static_cast<int>(i))) /
               net.normalization().scale(static_cast<int>(i));
    const int L = net.num_layers();
    for (int l = 0; l < L; ++l) {
        const stabcert::Layer& lay = net.layer(l);
        std::vector<double> z(static_cast<std::size_t>(lay.W.rows()), 0.0);
        for (int r = 0; r < lay.W.rows(); ++r) {
            double acc = lay.b(r);
            for (int c = 0; c < lay.W.cols(); ++c) acc += lay.W(r, c) * h[static_cast<std::size_t>(c)];
            z[static_cast<std::size_t>(r)] = acc;
        }
        if (l + 1 < L)
            for (auto& v : z) v = v > 0.0 ? v : 0.0;
        h = std::move(z);
    }
    return h;
}

inline std::string data_path(const std::string& name) {
    return std::string(STABCERT_DATA_DIR) + "/" + name;
}

}  // namespace testutil
