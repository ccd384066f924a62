#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "dcss/matrix.hpp"

namespace dcss {

enum class Activation { Relu, Tanh, Linear };

struct FcLayer {
    Matrix w;               // out x in
    std::vector<double> b;  // out
    Activation act = Activation::Relu;
};

struct FcGrad {
    Matrix dw;
    std::vector<double> db;
};

// Plain fully-connected stack. The activation of each layer is part of the
// layer itself; the encoder ends in tanh, the decoder in a linear layer.
struct Mlp {
    std::vector<FcLayer> layers;

    std::size_t in_dim() const { return layers.front().w.cols; }
    std::size_t out_dim() const { return layers.back().w.rows; }
};

struct MlpCache {
    std::vector<Matrix> inputs;   // per layer, B x in
    std::vector<Matrix> outputs;  // per layer, B x out (post-activation)
};

inline Matrix mlp_forward(const Mlp& net, const Matrix& x, MlpCache* cache = nullptr) {
    if (x.cols != net.in_dim()) throw std::invalid_argument("mlp_forward: input dim mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->outputs.clear();
    }
    Matrix cur = x;
    for (const FcLayer& layer : net.layers) {
        Matrix y(cur.rows, layer.w.rows);
        gemm(false, true, 1.0, cur, layer.w, 0.0, y);
        for (std::size_t i = 0; i < y.rows; ++i) {
            double* r = y.row(i);
            for (std::size_t j = 0; j < y.cols; ++j) {
                double v = r[j] + layer.b[j];
                switch (layer.act) {
                    case Activation::Relu: v = v > 0.0 ? v : 0.0; break;
                    case Activation::Tanh: v = std::tanh(v); break;
                    case Activation::Linear: break;
                }
                r[j] = v;
            }
        }
        if (cache) {
            cache->inputs.push_back(std::move(cur));
            cache->outputs.push_back(y);
        }
        cur = std::move(y);
    }
    return cur;
}

inline std::vector<FcGrad> make_mlp_grad(const Mlp& net) {
    std::vector<FcGrad> g;
    g.reserve(net.layers.size());
    for (const FcLayer& l : net.layers)
        g.push_back({Matrix(l.w.rows, l.w.cols), std::vector<double>(l.b.size(), 0.0)});
    return g;
}

// Accumulates parameter gradients into `grads` and returns the gradient
// w.r.t. the network input. `d_out` is the gradient w.r.t. the final
// post-activation output.
inline Matrix mlp_backward(const Mlp& net, const MlpCache& cache, Matrix d_out,
                           std::vector<FcGrad>& grads) {
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const FcLayer& layer = net.layers[li];
        const Matrix& y = cache.outputs[li];
        const Matrix& x = cache.inputs[li];
        // through the activation
        for (std::size_t i = 0; i < d_out.data.size(); ++i) {
            switch (layer.act) {
                case Activation::Relu:
                    if (y.data[i] <= 0.0) d_out.data[i] = 0.0;
                    break;
                case Activation::Tanh:
                    d_out.data[i] *= 1.0 - y.data[i] * y.data[i];
                    break;
                case Activation::Linear: break;
            }
        }
        gemm(true, false, 1.0, d_out, x, 1.0, grads[li].dw);
        for (std::size_t i = 0; i < d_out.rows; ++i) {
            const double* r = d_out.row(i);
            for (std::size_t j = 0; j < d_out.cols; ++j) grads[li].db[j] += r[j];
        }
        if (li == 0) {
            Matrix dx(d_out.rows, layer.w.cols);
            gemm(false, false, 1.0, d_out, layer.w, 0.0, dx);
            return dx;
        }
        Matrix dx(d_out.rows, layer.w.cols);
        gemm(false, false, 1.0, d_out, layer.w, 0.0, dx);
        d_out = std::move(dx);
    }
    return {};
}

// RBF layer with a temperature softmax on top: the clustering head.
//   phi_j(z) = exp(-|z - c_j|^2 / (2 sigma_j^2)),  p = softmax(T * phi)
// Widths are stored in log-space so they stay positive under gradient steps.
struct RbfSoftmaxHead {
    Matrix centers;                 // K x m
    std::vector<double> log_sigma;  // K
    double temperature = 20.0;
    bool train_sigma = true;
};

struct RbfGrad {
    Matrix d_centers;
    std::vector<double> d_log_sigma;
};

struct RbfCache {
    Matrix z;    // B x m
    Matrix q;    // B x K, |z - c|^2 / (2 sigma^2)
    Matrix phi;  // B x K
    Matrix p;    // B x K
};

inline Matrix rbf_head_forward(const RbfSoftmaxHead& head, const Matrix& z,
                               RbfCache* cache = nullptr) {
    const std::size_t b = z.rows, m = z.cols, k = head.centers.rows;
    if (m != head.centers.cols) throw std::invalid_argument("rbf head: dim mismatch");
    if (head.temperature <= 0.0) throw std::invalid_argument("rbf head: temperature <= 0");
    Matrix q(b, k), phi(b, k), p(b, k);
    for (std::size_t i = 0; i < b; ++i) {
        double max_u = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double sigma = std::exp(head.log_sigma[c]);
            q(i, c) = squared_distance(z.row(i), head.centers.row(c), m) /
                      (2.0 * sigma * sigma);
            phi(i, c) = std::exp(-q(i, c));
            max_u = std::max(max_u, head.temperature * phi(i, c));
        }
        double norm = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            p(i, c) = std::exp(head.temperature * phi(i, c) - max_u);
            norm += p(i, c);
        }
        for (std::size_t c = 0; c < k; ++c) p(i, c) /= norm;
    }
    if (cache) {
        cache->z = z;
        cache->q = q;
        cache->phi = phi;
        cache->p = p;
    }
    return p;
}

inline RbfGrad make_rbf_grad(const RbfSoftmaxHead& head) {
    return {Matrix(head.centers.rows, head.centers.cols),
            std::vector<double>(head.log_sigma.size(), 0.0)};
}

// `d_p` is the gradient w.r.t. the output probabilities; returns the gradient
// w.r.t. the embedding input and accumulates center/width gradients.
inline Matrix rbf_head_backward(const RbfSoftmaxHead& head, const RbfCache& cache,
                                const Matrix& d_p, RbfGrad& grads) {
    const std::size_t b = cache.z.rows, m = cache.z.cols, k = head.centers.rows;
    Matrix dz(b, m);
    for (std::size_t i = 0; i < b; ++i) {
        double dot = 0.0;
        for (std::size_t c = 0; c < k; ++c) dot += d_p(i, c) * cache.p(i, c);
        for (std::size_t c = 0; c < k; ++c) {
            // softmax + temperature, then phi = exp(-q)
            const double d_phi = head.temperature * cache.p(i, c) * (d_p(i, c) - dot);
            const double d_q = -cache.phi(i, c) * d_phi;
            const double sigma = std::exp(head.log_sigma[c]);
            const double inv_s2 = 1.0 / (sigma * sigma);
            const double* zr = cache.z.row(i);
            const double* cr = head.centers.row(c);
            for (std::size_t d = 0; d < m; ++d) {
                const double diff = (zr[d] - cr[d]) * inv_s2;
                dz(i, d) += d_q * diff;
                grads.d_centers(c, d) -= d_q * diff;
            }
            if (head.train_sigma) grads.d_log_sigma[c] += d_q * (-2.0 * cache.q(i, c));
        }
    }
    return dz;
}

// He-initialized fully-connected stack: weights N(0, 2/fan_in), biases zero.
inline Mlp make_mlp(const std::vector<std::size_t>& dims,
                    const std::vector<Activation>& acts, std::mt19937_64& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw std::invalid_argument("make_mlp: inconsistent layer spec");
    for (std::size_t d : dims)
        if (d == 0) throw std::invalid_argument("make_mlp: zero-dimensional layer");
    Mlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        FcLayer layer;
        layer.w = Matrix(dims[l + 1], dims[l]);
        layer.b.assign(dims[l + 1], 0.0);
        layer.act = acts[l];
        std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(dims[l])));
        for (double& v : layer.w.data) v = he(rng);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

// Mean over the batch of squared reconstruction norms (Frobenius over rows).
inline double reconstruction_loss(const Matrix& x, const Matrix& xhat) {
    if (!x.same_shape(xhat)) throw std::invalid_argument("reconstruction_loss: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double d = xhat.data[i] - x.data[i];
        s += d * d;
    }
    return s / static_cast<double>(x.rows);
}

inline Matrix reconstruction_loss_grad(const Matrix& x, const Matrix& xhat) {
    Matrix g(x.rows, x.cols);
    const double scale = 2.0 / static_cast<double>(x.rows);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        g.data[i] = scale * (xhat.data[i] - x.data[i]);
    return g;
}

// Adam with bias correction. `weight_decay` is an L2 penalty added to the
// gradient before the moment updates.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> m, v;
};

inline void adam_step(std::vector<std::span<double>> params,
                      std::vector<std::span<const double>> grads, double lr,
                      double weight_decay, AdamState& state) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: block count mismatch");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    state.t++;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t blk = 0; blk < params.size(); ++blk) {
        auto p = params[blk];
        auto g = grads[blk];
        auto& m = state.m[blk];
        auto& v = state.v[blk];
        if (p.size() != g.size() || p.size() != m.size())
            throw std::invalid_argument("adam_step: block shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] + weight_decay * p[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace dcss
