#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stabcert/network.hpp"

namespace stabcert {

enum class Loss { CrossEntropy, MeanSquaredError };

struct TrainingConfig {
    std::vector<int> hidden_sizes{16, 16};
    int epochs = 200;
    int batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    Loss loss = Loss::CrossEntropy;
    std::uint64_t seed = 1;

    void validate() const {
        require(epochs >= 1, "training: epochs must be >= 1");
        require(learning_rate > 0.0, "training: learning rate must be > 0");
        require(batch_size >= 1, "training: batch size must be >= 1");
        for (int h : hidden_sizes) require(h >= 1, "training: hidden size must be >= 1");
    }
};

/// Rows of features with a scalar target each. For classification targets
/// are the labels {0,1}; for regression the raw TSI values.
struct TrainingSet {
    std::vector<Vec> inputs;
    std::vector<double> targets;

    std::size_t size() const { return inputs.size(); }
};

struct TrainResult {
    Network net;
    std::vector<double> epoch_loss;
};

namespace detail {

inline Normalization fit_normalization(const TrainingSet& data) {
    const int d = static_cast<int>(data.inputs.front().size());
    Vec mean = Vec::Zero(d), var = Vec::Zero(d);
    for (const Vec& x : data.inputs) mean += x;
    mean /= static_cast<double>(data.size());
    for (const Vec& x : data.inputs) var += (x - mean).cwiseAbs2();
    var /= static_cast<double>(data.size());
    Vec scale = var.cwiseSqrt().cwiseMax(1e-8);
    return {mean, scale};
}

inline std::vector<Layer> init_layers(const std::vector<int>& sizes, Rng& rng) {
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const int fan_in = sizes[i], fan_out = sizes[i + 1];
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Mat W(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) W(r, c) = u(rng);
        layers.push_back({std::move(W), Vec::Zero(fan_out)});
    }
    return layers;
}

}  // namespace detail

/// Minibatch gradient descent with momentum on a freshly initialized ReLU
/// network. Fixed seed gives bit-identical weights across runs.
inline TrainResult train(const TrainingSet& data, const TrainingConfig& cfg) {
    cfg.validate();
    require(!data.inputs.empty(), "train: empty dataset");
    require(data.inputs.size() == data.targets.size(), "train: inputs/targets size mismatch");
    const int input_dim = static_cast<int>(data.inputs.front().size());
    const bool classify = cfg.loss == Loss::CrossEntropy;
    if (classify)
        for (double t : data.targets)
            require(t == 0.0 || t == 1.0, "train: classifier labels must be 0 or 1");

    std::vector<int> sizes;
    sizes.push_back(input_dim);
    for (int h : cfg.hidden_sizes) sizes.push_back(h);
    sizes.push_back(classify ? 2 : 1);

    Rng rng(cfg.seed);
    std::vector<Layer> layers = detail::init_layers(sizes, rng);
    Normalization norm = detail::fit_normalization(data);

    // Regression targets are standardized for conditioning; the de-scaling
    // folds into the final layer afterwards, so the stored network outputs
    // raw units.
    double t_shift = 0.0, t_scale = 1.0;
    if (!classify) {
        for (double t : data.targets) t_shift += t;
        t_shift /= static_cast<double>(data.size());
        double var = 0.0;
        for (double t : data.targets) var += (t - t_shift) * (t - t_shift);
        var /= static_cast<double>(data.size());
        t_scale = std::sqrt(var);
        if (t_scale < 1e-9) t_scale = 1.0;
    }

    const std::size_t L = layers.size();
    std::vector<Mat> vel_W(L);
    std::vector<Vec> vel_b(L);
    for (std::size_t l = 0; l < L; ++l) {
        vel_W[l] = Mat::Zero(layers[l].W.rows(), layers[l].W.cols());
        vel_b[l] = Vec::Zero(layers[l].b.size());
    }

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<double> epoch_loss;
    std::vector<Vec> acts(L + 1);   // post-activation per layer, acts[0] = normalized input
    std::vector<Vec> pre(L);        // pre-activation per layer
    std::vector<Mat> grad_W(L);
    std::vector<Vec> grad_b(L);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total_loss = 0.0;
        for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (std::size_t l = 0; l < L; ++l) {
                grad_W[l] = Mat::Zero(layers[l].W.rows(), layers[l].W.cols());
                grad_b[l] = Vec::Zero(layers[l].b.size());
            }
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                acts[0] = (data.inputs[idx] - norm.shift).cwiseQuotient(norm.scale);
                for (std::size_t l = 0; l < L; ++l) {
                    pre[l] = layers[l].W * acts[l] + layers[l].b;
                    acts[l + 1] = (l + 1 < L) ? pre[l].cwiseMax(0.0) : pre[l];
                }
                Vec delta;  // dLoss/d(pre-activation of final layer)
                if (classify) {
                    const Vec& z = acts[L];
                    const double zmax = std::max(z(0), z(1));
                    const double e0 = std::exp(z(0) - zmax), e1 = std::exp(z(1) - zmax);
                    const double p1 = e1 / (e0 + e1);
                    const double y = data.targets[idx];
                    total_loss += -(y * std::log(std::max(p1, 1e-300)) +
                                    (1.0 - y) * std::log(std::max(1.0 - p1, 1e-300)));
                    delta = Vec(2);
                    delta(0) = (1.0 - p1) - (1.0 - y);
                    delta(1) = p1 - y;
                } else {
                    const double target = (data.targets[idx] - t_shift) / t_scale;
                    const double err = acts[L](0) - target;
                    total_loss += err * err * t_scale * t_scale;  // recorded in raw units
                    delta = Vec::Constant(1, 2.0 * err);
                }
                for (int l = static_cast<int>(L) - 1; l >= 0; --l) {
                    const std::size_t ul = static_cast<std::size_t>(l);
                    grad_W[ul] += delta * acts[ul].transpose();
                    grad_b[ul] += delta;
                    if (l > 0) {
                        delta = layers[ul].W.transpose() * delta;
                        const Vec& z = pre[ul - 1];
                        for (int j = 0; j < delta.size(); ++j)
                            if (z(j) <= 0.0) delta(j) = 0.0;
                    }
                }
            }
            for (std::size_t l = 0; l < L; ++l) {
                vel_W[l] = cfg.momentum * vel_W[l] - cfg.learning_rate * inv_batch * grad_W[l];
                vel_b[l] = cfg.momentum * vel_b[l] - cfg.learning_rate * inv_batch * grad_b[l];
                layers[l].W += vel_W[l];
                layers[l].b += vel_b[l];
            }
        }
        const double mean_loss = total_loss / static_cast<double>(data.size());
        if (!std::isfinite(mean_loss))
            throw ConvergenceError("train: loss diverged to non-finite value at epoch " +
                                       std::to_string(epoch),
                                   mean_loss);
        epoch_loss.push_back(mean_loss);
    }

    if (!classify) {
        layers.back().W *= t_scale;
        layers.back().b = layers.back().b * t_scale + Vec::Constant(1, t_shift);
    }
    Head head = classify ? Head::Classifier2Logit : Head::RegressorScalar;
    return {Network(std::move(layers), head, std::move(norm)), std::move(epoch_loss)};
}

}  // namespace stabcert
