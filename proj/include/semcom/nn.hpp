#pragma once

// Small fully-connected networks with explicit backpropagation. Samples are
// stored column-wise: an input batch is (inputs x batch).

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "semcom/error.hpp"
#include "semcom/rng.hpp"

namespace semcom::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// SiLU: x * sigmoid(x).
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

struct MlpGrads {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    void set_zero() {
        for (auto& w : weights) w.setZero();
        for (auto& b : biases) b.setZero();
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& w : weights) s += w.squaredNorm();
        for (const auto& b : biases) s += b.squaredNorm();
        return s;
    }

    void scale(double f) {
        for (auto& w : weights) w *= f;
        for (auto& b : biases) b *= f;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.insert(out.end(), weights[l].data(), weights[l].data() + weights[l].size());
            out.insert(out.end(), biases[l].data(), biases[l].data() + biases[l].size());
        }
        return out;
    }
};

// Hidden layers use SiLU; the output layer is linear.
class Mlp {
public:
    struct Cache {
        std::vector<Matrix> inputs;       // input to each layer
        std::vector<Matrix> pre;          // pre-activation of each layer
    };

    Mlp() = default;

    // sizes = {inputs, hidden..., outputs}
    Mlp(std::vector<std::size_t> sizes, Rng& rng) : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2) throw Error("Mlp needs at least input and output sizes");
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            const auto in = static_cast<Eigen::Index>(sizes_[l]);
            const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
            const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
            Matrix w(out, in);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
            weights_.push_back(std::move(w));
            biases_.push_back(Vector::Zero(out));
        }
    }

    const std::vector<std::size_t>& sizes() const { return sizes_; }
    std::size_t inputs() const { return sizes_.front(); }
    std::size_t outputs() const { return sizes_.back(); }
    std::size_t layers() const { return weights_.size(); }

    std::vector<Matrix>& weights() { return weights_; }
    const std::vector<Matrix>& weights() const { return weights_; }
    std::vector<Vector>& biases() { return biases_; }
    const std::vector<Vector>& biases() const { return biases_; }

    MlpGrads zero_grads() const {
        MlpGrads g;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            g.weights.push_back(Matrix::Zero(weights_[l].rows(), weights_[l].cols()));
            g.biases.push_back(Vector::Zero(biases_[l].size()));
        }
        return g;
    }

    Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
        if (static_cast<std::size_t>(x.rows()) != inputs()) throw Error("Mlp::forward: input size mismatch");
        if (cache) {
            cache->inputs.clear();
            cache->pre.clear();
        }
        Matrix a = x;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Matrix z = weights_[l] * a;
            z.colwise() += biases_[l];
            if (cache) {
                cache->inputs.push_back(a);
                cache->pre.push_back(z);
            }
            if (l + 1 < weights_.size()) {
                a = z.unaryExpr([](double v) { return silu(v); });
            } else {
                a = std::move(z);
            }
        }
        return a;
    }

    // Accumulates parameter gradients of sum(dout .* output) into `grads` and
    // returns the gradient with respect to the input.
    Matrix backward(const Cache& cache, const Matrix& dout, MlpGrads& grads) const {
        Matrix delta = dout;
        for (std::size_t l = weights_.size(); l-- > 0;) {
            if (l + 1 < weights_.size()) {
                delta = delta.cwiseProduct(cache.pre[l].unaryExpr([](double v) { return silu_grad(v); }));
            }
            grads.weights[l].noalias() += delta * cache.inputs[l].transpose();
            grads.biases[l] += delta.rowwise().sum();
            delta = weights_[l].transpose() * delta;
        }
        return delta;
    }

    std::vector<double> parameters() const {
        std::vector<double> out;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.insert(out.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
            out.insert(out.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
        }
        return out;
    }

    void set_parameters(std::span<const double> p) {
        std::size_t k = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            for (Eigen::Index i = 0; i < weights_[l].size(); ++i) weights_[l].data()[i] = p[k++];
            for (Eigen::Index i = 0; i < biases_[l].size(); ++i) biases_[l].data()[i] = p[k++];
        }
        if (k != p.size()) throw Error("Mlp::set_parameters: size mismatch");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
        return n;
    }

private:
    std::vector<std::size_t> sizes_;
    std::vector<Matrix> weights_;  // (out x in)
    std::vector<Vector> biases_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables global-norm clipping
};

class Adam {
public:
    Adam() = default;
    Adam(const Mlp& net, AdamConfig cfg) : cfg_(cfg), m_(net.zero_grads()), v_(net.zero_grads()) {}

    void step(Mlp& net, MlpGrads grads) {
        if (cfg_.clip_norm > 0) {
            const double norm = std::sqrt(grads.squared_norm());
            if (norm > cfg_.clip_norm) grads.scale(cfg_.clip_norm / norm);
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            param.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
        };
        for (std::size_t l = 0; l < net.layers(); ++l) {
            update(net.weights()[l], m_.weights[l], v_.weights[l], grads.weights[l]);
            update(net.biases()[l], m_.biases[l], v_.biases[l], grads.biases[l]);
        }
    }

    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    MlpGrads m_;
    MlpGrads v_;
    long long t_ = 0;
};

}  // namespace semcom::nn
