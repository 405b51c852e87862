#pragma once

#include <fstream>
#include <json.hpp>
#include <optional>

#include "stabcert/common.hpp"

namespace stabcert {

enum class Head { Classifier2Logit, RegressorScalar };

inline std::string to_string(Head h) {
    return h == Head::Classifier2Logit ? "classifier-2-logit" : "regressor-scalar";
}

inline Head head_from_string(const std::string& s) {
    if (s == "classifier-2-logit") return Head::Classifier2Logit;
    if (s == "regressor-scalar") return Head::RegressorScalar;
    throw DomainError("unknown network head: " + s);
}

struct Layer {
    Mat W;  // out x in
    Vec b;
};

/// Per-feature affine normalization applied before the first layer:
/// x_norm = (x - shift) / scale.
struct Normalization {
    Vec shift;
    Vec scale;
};

/// Feed-forward ReLU network. Hidden layers are followed by ReLU; the final
/// layer is affine. Immutable after construction/loading.
class Network {
public:
    Network() = default;
    Network(std::vector<Layer> layers, Head head, Normalization norm)
        : layers_(std::move(layers)), head_(head), norm_(std::move(norm)) {
        validate();
    }

    int input_dim() const { return static_cast<int>(layers_.front().W.cols()); }
    int output_dim() const { return static_cast<int>(layers_.back().W.rows()); }
    int num_layers() const { return static_cast<int>(layers_.size()); }
    int num_hidden_layers() const { return num_layers() - 1; }
    Head head() const { return head_; }
    const Layer& layer(int i) const { return layers_[static_cast<std::size_t>(i)]; }
    const std::vector<Layer>& layers() const { return layers_; }
    const Normalization& normalization() const { return norm_; }

    int hidden_size(int i) const { return static_cast<int>(layers_[static_cast<std::size_t>(i)].W.rows()); }

    int total_hidden_neurons() const {
        int n = 0;
        for (int i = 0; i + 1 < num_layers(); ++i) n += hidden_size(i);
        return n;
    }

    Vec normalize(const Vec& x) const {
        return (x - norm_.shift).cwiseQuotient(norm_.scale);
    }

    /// All pre-activation vectors per hidden layer plus the final output.
    struct Activations {
        std::vector<Vec> pre;  // pre[i] = z^(i+1), hidden layers only
        Vec output;
    };

    Vec forward(const Vec& x) const {
        return forward_full(x).output;
    }

    Activations forward_full(const Vec& x) const {
        require(x.size() == input_dim(), "forward: input dimension mismatch");
        Activations act;
        Vec h = normalize(x);
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
            Vec z = layers_[i].W * h + layers_[i].b;
            act.pre.push_back(z);
            h = z.cwiseMax(0.0);
        }
        act.output = layers_.back().W * h + layers_.back().b;
        return act;
    }

    /// Stable-minus-unstable logit difference. Positive = classified stable.
    double margin(const Vec& x) const {
        require(head_ == Head::Classifier2Logit, "margin: requires classifier-2-logit head");
        Vec out = forward(x);
        return out(1) - out(0);
    }

    /// Reverse-mode gradient of a linear functional c.out of the output
    /// w.r.t. the raw (unnormalized) input. ReLU subgradient at 0 is 0.
    Vec input_gradient_of(const Vec& x, const Vec& c) const {
        Activations act = forward_full(x);
        require(c.size() == output_dim(), "input_gradient_of: objective dimension mismatch");
        Vec g = layers_.back().W.transpose() * c;
        for (int i = num_hidden_layers() - 1; i >= 0; --i) {
            const Vec& z = act.pre[static_cast<std::size_t>(i)];
            for (int j = 0; j < g.size(); ++j)
                if (z(j) <= 0.0) g(j) = 0.0;
            g = layers_[static_cast<std::size_t>(i)].W.transpose() * g;
        }
        return g.cwiseQuotient(norm_.scale);
    }

    /// Gradient of margin (classifier) or of the scalar output (regressor).
    /// For the regressor, `value` receives the output.
    Vec input_gradient(const Vec& x, double* value = nullptr) const {
        if (head_ == Head::Classifier2Logit) {
            Vec c(2);
            c << -1.0, 1.0;
            if (value) *value = margin(x);
            return input_gradient_of(x, c);
        }
        Vec c = Vec::Ones(1);
        if (value) *value = forward(x)(0);
        return input_gradient_of(x, c);
    }

    /// Returns an equivalent network with the normalization folded into the
    /// first affine layer, so it operates directly on raw physical units.
    Network fold_normalization() const {
        std::vector<Layer> folded = layers_;
        Mat& W1 = folded.front().W;
        Vec& b1 = folded.front().b;
        Vec inv_scale = norm_.scale.cwiseInverse();
        b1 -= W1 * norm_.shift.cwiseQuotient(norm_.scale);
        for (int c = 0; c < W1.cols(); ++c) W1.col(c) *= inv_scale(c);
        Normalization identity{Vec::Zero(input_dim()), Vec::Ones(input_dim())};
        return Network(std::move(folded), head_, std::move(identity));
    }

    void validate() const {
        require(!layers_.empty(), "network: at least one layer required");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            require(layers_[i].b.size() == layers_[i].W.rows(),
                    "network: bias/weight row mismatch in layer " + std::to_string(i));
            if (i + 1 < layers_.size())
                require(layers_[i + 1].W.cols() == layers_[i].W.rows(),
                        "network: layer " + std::to_string(i) + " output dim does not feed layer " +
                            std::to_string(i + 1));
        }
        require(norm_.shift.size() == input_dim() && norm_.scale.size() == input_dim(),
                "network: normalization dimension mismatch");
        require((norm_.scale.array() > 0.0).all(), "network: normalization scales must be positive");
        if (head_ == Head::Classifier2Logit)
            require(output_dim() == 2, "network: classifier head requires 2 outputs");
        else
            require(output_dim() == 1, "network: regressor head requires 1 output");
    }

private:
    std::vector<Layer> layers_;
    Head head_ = Head::RegressorScalar;
    Normalization norm_;
};

namespace detail {

inline nlohmann::json matrix_to_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Mat matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw DomainError("network file: matrix must be a non-empty array of rows");
    const std::size_t rows = j.size(), cols = j[0].size();
    Mat m(static_cast<int>(rows), static_cast<int>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (j[r].size() != cols) throw DomainError("network file: ragged weight matrix");
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
    }
    return m;
}

inline nlohmann::json vector_to_json(const Vec& v) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Vec vector_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw DomainError("network file: expected array");
    Vec v(static_cast<int>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
    return v;
}

}  // namespace detail

inline nlohmann::json network_to_json(const Network& net) {
    nlohmann::json j;
    j["input_dim"] = net.input_dim();
    j["head"] = to_string(net.head());
    j["normalization"] = {{"shift", detail::vector_to_json(net.normalization().shift)},
                          {"scale", detail::vector_to_json(net.normalization().scale)}};
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers())
        layers.push_back({{"W", detail::matrix_to_json(l.W)}, {"b", detail::vector_to_json(l.b)}});
    j["layers"] = std::move(layers);
    return j;
}

inline Network network_from_json(const nlohmann::json& j) {
    try {
        const int input_dim = j.at("input_dim").get<int>();
        Head head = head_from_string(j.at("head").get<std::string>());
        Normalization norm{detail::vector_from_json(j.at("normalization").at("shift")),
                           detail::vector_from_json(j.at("normalization").at("scale"))};
        std::vector<Layer> layers;
        for (const auto& lj : j.at("layers"))
            layers.push_back({detail::matrix_from_json(lj.at("W")), detail::vector_from_json(lj.at("b"))});
        require(!layers.empty() && layers.front().W.cols() == input_dim,
                "network file: declared input_dim does not match first layer");
        return Network(std::move(layers), head, std::move(norm));
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("network file: ") + e.what());
    }
}

inline void save_network(const Network& net, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "save_network: cannot open " + path);
    out << network_to_json(net).dump(2) << "\n";
}

inline Network load_network(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_network: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("network file parse error: ") + e.what());
    }
    return network_from_json(j);
}

}  // namespace stabcert
