#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcss/data.hpp"
#include "dcss/kmeans.hpp"
#include "dcss/matrix.hpp"
#include "dcss/metrics.hpp"
#include "dcss/nn.hpp"

namespace dcss {

struct TrainConfig {
    int k = 4;
    int m = 10;  // embedding dimension
    std::vector<int> hidden = {500, 500, 2000};
    double lambda1 = 0.01;
    double lambda2 = 0.01;
    int pretrain_epochs = 1000;
    int train_epochs = 100;
    double lr_pretrain = 5e-4;
    double lr_train = 5e-4;
    double weight_decay_pretrain = 1e-5;
    int batch_size = 256;
    double temperature = 20.0;
    double sigma_init = 0.1;
    std::uint64_t seed = 0;
    int rbf_restarts = 10;
    bool train_sigma = true;
    bool early_stop = false;

    void validate(std::size_t n) const {
        if (k < 2) throw std::invalid_argument("config: k must be >= 2");
        if (m < 1) throw std::invalid_argument("config: embedding dim must be positive");
        if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
        if (lambda1 < 0.0 || lambda2 < 0.0)
            throw std::invalid_argument("config: lambdas must be nonnegative");
        if (lr_pretrain <= 0.0 || lr_train <= 0.0)
            throw std::invalid_argument("config: learning rates must be positive");
        if (weight_decay_pretrain < 0.0)
            throw std::invalid_argument("config: weight decay must be nonnegative");
        if (pretrain_epochs < 0 || train_epochs < 0)
            throw std::invalid_argument("config: epoch counts must be nonnegative");
        if (temperature <= 0.0) throw std::invalid_argument("config: temperature must be positive");
        if (sigma_init <= 0.0) throw std::invalid_argument("config: sigma_init must be positive");
        if (rbf_restarts < 1) throw std::invalid_argument("config: rbf_restarts must be positive");
        for (int h : hidden)
            if (h < 1) throw std::invalid_argument("config: hidden dims must be positive");
        if (n > 0 && static_cast<std::size_t>(k) >= n)
            throw std::invalid_argument("config: k must be smaller than the dataset");
    }
};

struct EpochRecord {
    int epoch = 0;
    double l_rec = 0.0;
    double l_cl = 0.0;
    double l_reg = 0.0;
    double total = 0.0;
    double wall_seconds = 0.0;
};

struct TrainingTrace {
    std::vector<EpochRecord> epochs;
    int degenerate_batches = 0;
    // Full-dataset diagnostics taken at the stage boundaries (joint stage only).
    bool has_diagnostics = false;
    double sf_initial = 0.0, sf_final = 0.0;
    double entropy_initial = 0.0, entropy_final = 0.0;
};

struct ClusteringSolution {
    std::vector<int> labels;  // argmax of probs, lowest index on ties
    Matrix probs;             // n x K
    Matrix embeddings;        // n x m
};

struct NumericError : std::runtime_error {
    TrainingTrace trace;
    NumericError(const std::string& what, TrainingTrace t)
        : std::runtime_error(what), trace(std::move(t)) {}
};

struct DcssModel {
    Mlp encoder;
    Mlp decoder;
    RbfSoftmaxHead head;
};

struct DcssGrad {
    std::vector<FcGrad> encoder;
    std::vector<FcGrad> decoder;
    RbfGrad head;
};

inline DcssModel make_model(std::size_t input_dim, const TrainConfig& cfg) {
    cfg.validate(0);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> enc_dims{input_dim};
    for (int h : cfg.hidden) enc_dims.push_back(static_cast<std::size_t>(h));
    enc_dims.push_back(static_cast<std::size_t>(cfg.m));
    std::vector<Activation> enc_acts(enc_dims.size() - 2, Activation::Relu);
    enc_acts.push_back(Activation::Tanh);

    std::vector<std::size_t> dec_dims(enc_dims.rbegin(), enc_dims.rend());
    std::vector<Activation> dec_acts(dec_dims.size() - 2, Activation::Relu);
    dec_acts.push_back(Activation::Linear);

    DcssModel model;
    model.encoder = make_mlp(enc_dims, enc_acts, rng);
    model.decoder = make_mlp(dec_dims, dec_acts, rng);
    model.head.centers = Matrix(static_cast<std::size_t>(cfg.k),
                                static_cast<std::size_t>(cfg.m));
    model.head.log_sigma.assign(cfg.k, std::log(cfg.sigma_init));
    model.head.temperature = cfg.temperature;
    model.head.train_sigma = cfg.train_sigma;
    return model;
}

inline DcssGrad make_grad(const DcssModel& model) {
    return {make_mlp_grad(model.encoder), make_mlp_grad(model.decoder),
            make_rbf_grad(model.head)};
}

inline void zero_grad(DcssGrad& g) {
    for (auto& l : g.encoder) {
        l.dw.fill(0.0);
        std::fill(l.db.begin(), l.db.end(), 0.0);
    }
    for (auto& l : g.decoder) {
        l.dw.fill(0.0);
        std::fill(l.db.begin(), l.db.end(), 0.0);
    }
    g.head.d_centers.fill(0.0);
    std::fill(g.head.d_log_sigma.begin(), g.head.d_log_sigma.end(), 0.0);
}

// Parameter/gradient blocks in declaration order. `with_head` leaves the
// clustering head out during pretraining.
inline std::vector<std::span<double>> param_blocks(DcssModel& model, bool with_head = true) {
    std::vector<std::span<double>> blocks;
    for (auto& l : model.encoder.layers) {
        blocks.emplace_back(l.w.data);
        blocks.emplace_back(l.b);
    }
    for (auto& l : model.decoder.layers) {
        blocks.emplace_back(l.w.data);
        blocks.emplace_back(l.b);
    }
    if (with_head) {
        blocks.emplace_back(model.head.centers.data);
        blocks.emplace_back(model.head.log_sigma);
    }
    return blocks;
}

inline std::vector<std::span<const double>> grad_blocks(const DcssGrad& g,
                                                        bool with_head = true) {
    std::vector<std::span<const double>> blocks;
    for (const auto& l : g.encoder) {
        blocks.emplace_back(l.dw.data);
        blocks.emplace_back(l.db);
    }
    for (const auto& l : g.decoder) {
        blocks.emplace_back(l.dw.data);
        blocks.emplace_back(l.db);
    }
    if (with_head) {
        blocks.emplace_back(g.head.d_centers.data);
        blocks.emplace_back(g.head.d_log_sigma);
    }
    return blocks;
}

namespace detail {

inline Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx,
                          std::size_t begin, std::size_t count) {
    Matrix out(count, x.cols);
    for (std::size_t i = 0; i < count; ++i) {
        const double* src = x.row(idx[begin + i]);
        std::copy(src, src + x.cols, out.row(i));
    }
    return out;
}

// Returns true when some cluster's leave-one-out probability mass is below
// the soft-singleton threshold for any point in the batch.
inline bool degenerate_mass(const Matrix& probs) {
    std::vector<double> col_mass(probs.cols, 0.0);
    for (std::size_t i = 0; i < probs.rows; ++i)
        for (std::size_t c = 0; c < probs.cols; ++c) col_mass[c] += probs(i, c);
    for (std::size_t i = 0; i < probs.rows; ++i)
        for (std::size_t c = 0; c < probs.cols; ++c)
            if (col_mass[c] - probs(i, c) < kEpsMass) return true;
    return false;
}

// Routes distance-entry gradients back to the embedding coordinates.
inline void distance_backward(const Matrix& z, const Matrix& dist, const Matrix& d_dist,
                              Matrix& dz) {
    const std::size_t n = z.rows, m = z.cols;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = dist(i, j);
            if (d <= 0.0) continue;
            const double g = (d_dist(i, j) + d_dist(j, i)) / d;
            const double* zi = z.row(i);
            const double* zj = z.row(j);
            for (std::size_t t = 0; t < m; ++t) {
                const double diff = g * (zi[t] - zj[t]);
                dz(i, t) += diff;
                dz(j, t) -= diff;
            }
        }
    }
}

inline double full_reconstruction_loss(const DcssModel& model, const Matrix& x,
                                       std::size_t eval_batch = 4096) {
    double total = 0.0;
    for (std::size_t start = 0; start < x.rows; start += eval_batch) {
        const std::size_t b = std::min(eval_batch, x.rows - start);
        Matrix xb(b, x.cols);
        std::copy(x.row(start), x.row(start) + b * x.cols, xb.data.begin());
        Matrix z = mlp_forward(model.encoder, xb);
        Matrix xhat = mlp_forward(model.decoder, z);
        total += reconstruction_loss(xb, xhat) * static_cast<double>(b);
    }
    return total / static_cast<double>(x.rows);
}

struct BatchTerms {
    double l_rec = 0.0, l_cl = 0.0, l_reg = 0.0;
    bool degenerate = false;

    double total(double lambda1, double lambda2) const {
        return l_rec + lambda1 * l_cl + lambda2 * l_reg;
    }
};

}  // namespace detail

inline ClusteringSolution infer(const DcssModel& model, const Matrix& x,
                                std::size_t eval_batch = 4096) {
    ClusteringSolution sol;
    sol.embeddings = Matrix(x.rows, model.encoder.out_dim());
    sol.probs = Matrix(x.rows, model.head.centers.rows);
    sol.labels.resize(x.rows);
    for (std::size_t start = 0; start < x.rows; start += eval_batch) {
        const std::size_t b = std::min(eval_batch, x.rows - start);
        Matrix xb(b, x.cols);
        std::copy(x.row(start), x.row(start) + b * x.cols, xb.data.begin());
        Matrix z = mlp_forward(model.encoder, xb);
        Matrix p = rbf_head_forward(model.head, z);
        std::copy(z.data.begin(), z.data.end(), sol.embeddings.row(start));
        std::copy(p.data.begin(), p.data.end(), sol.probs.row(start));
    }
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* r = sol.probs.row(i);
        sol.labels[i] = static_cast<int>(
            std::max_element(r, r + sol.probs.cols) - r);  // first max wins
    }
    return sol;
}

namespace detail {

// Loss terms and parameter gradients for one batch of the composite loss
//   L = L_rec + lambda1 (1 - Sf) + lambda2 * mean entropy.
// With use_cluster_terms false only the reconstruction path runs. The
// soft-silhouette gradient is skipped (contributes 0) on a degenerate batch.
inline BatchTerms batch_loss_and_grad(const DcssModel& model, const Matrix& xb,
                                      double lambda1, double lambda2,
                                      bool use_cluster_terms, DcssGrad& grads) {
    BatchTerms terms;
    zero_grad(grads);

    MlpCache enc_cache, dec_cache;
    Matrix z = mlp_forward(model.encoder, xb, &enc_cache);
    Matrix xhat = mlp_forward(model.decoder, z, &dec_cache);
    terms.l_rec = reconstruction_loss(xb, xhat);

    Matrix dz = mlp_backward(model.decoder, dec_cache,
                             reconstruction_loss_grad(xb, xhat), grads.decoder);

    if (use_cluster_terms) {
        RbfCache head_cache;
        Matrix p = rbf_head_forward(model.head, z, &head_cache);
        Matrix dist = pairwise_euclidean(z);
        Matrix dp(p.rows, p.cols);
        terms.degenerate = degenerate_mass(p);

        const SilhouetteReport sf = soft_silhouette(dist, p);
        terms.l_cl = 1.0 - sf.total;
        terms.l_reg = entropy_regularizer(p);

        if (lambda1 > 0.0 && !terms.degenerate) {
            const SoftSilhouetteGrad g = soft_silhouette_grad(dist, p);
            for (std::size_t i = 0; i < dp.data.size(); ++i)
                dp.data[i] -= lambda1 * g.d_probs.data[i];
            Matrix d_dist = g.d_dist;
            for (double& v : d_dist.data) v *= -lambda1;
            distance_backward(z, dist, d_dist, dz);
        }
        if (lambda2 > 0.0) {
            const Matrix ge = entropy_regularizer_grad(p);
            for (std::size_t i = 0; i < dp.data.size(); ++i)
                dp.data[i] += lambda2 * ge.data[i];
        }
        Matrix dz_head = rbf_head_backward(model.head, head_cache, dp, grads.head);
        for (std::size_t i = 0; i < dz.data.size(); ++i) dz.data[i] += dz_head.data[i];
    }

    mlp_backward(model.encoder, enc_cache, std::move(dz), grads.encoder);
    return terms;
}

// One loop serves both stages; the joint flag enables the clustering head,
// the soft-silhouette term and the entropy term.
inline TrainingTrace train_loop(DcssModel& model, const Matrix& x, const TrainConfig& cfg,
                                bool joint, AdamState* adam_out = nullptr,
                                const AdamState* adam_in = nullptr) {
    cfg.validate(x.rows);
    if (!x.all_finite()) throw std::invalid_argument("training data contains non-finite values");

    const int epochs = joint ? cfg.train_epochs : cfg.pretrain_epochs;
    const double lr = joint ? cfg.lr_train : cfg.lr_pretrain;
    const double wd = joint ? 0.0 : cfg.weight_decay_pretrain;
    const double lambda1 = joint ? cfg.lambda1 : 0.0;
    const double lambda2 = joint ? cfg.lambda2 : 0.0;
    const bool use_cluster_terms = joint && (lambda1 > 0.0 || lambda2 > 0.0);

    TrainingTrace trace;
    if (joint) {
        ClusteringSolution sol = infer(model, x);
        trace.has_diagnostics = true;
        trace.sf_initial = soft_silhouette_points(sol.embeddings, sol.probs).total;
        trace.entropy_initial = entropy_regularizer(sol.probs);
    }
    trace.epochs.push_back({0, full_reconstruction_loss(model, x), 0.0, 0.0, 0.0, 0.0});
    trace.epochs[0].total = trace.epochs[0].l_rec;

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(x.rows);
    std::iota(order.begin(), order.end(), 0);

    // Resuming the stage-1 moment estimates matters: a fresh Adam state moves
    // every coordinate by ~lr regardless of gradient size for the first steps,
    // which is enough to wreck a converged autoencoder of this width. Blocks
    // the resumed state does not cover (the head, during stage 2) start at
    // zero moments.
    AdamState adam;
    if (adam_in) {
        adam = *adam_in;
        const auto blocks = param_blocks(model, joint);
        if (adam.m.size() > blocks.size())
            throw std::invalid_argument("train: optimizer state has too many blocks");
        for (std::size_t b = adam.m.size(); b < blocks.size(); ++b) {
            adam.m.emplace_back(blocks[b].size(), 0.0);
            adam.v.emplace_back(blocks[b].size(), 0.0);
        }
    }
    DcssGrad grads = make_grad(model);
    const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);

        double sum_rec = 0.0, sum_cl = 0.0, sum_reg = 0.0;
        std::size_t samples = 0;
        for (std::size_t start = 0; start < x.rows; start += bsz) {
            std::size_t b = std::min(bsz, x.rows - start);
            if (b < bsz && b < static_cast<std::size_t>(2 * cfg.k)) break;  // drop tiny remainder
            if (b < 2) break;

            Matrix xb = gather_rows(x, order, start, b);
            const BatchTerms terms =
                batch_loss_and_grad(model, xb, lambda1, lambda2, use_cluster_terms, grads);
            if (terms.degenerate) trace.degenerate_batches++;

            if (!std::isfinite(terms.total(lambda1, lambda2)))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch),
                                   trace);

            adam_step(param_blocks(model, joint), grad_blocks(grads, joint), lr, wd, adam);

            sum_rec += terms.l_rec * static_cast<double>(b);
            sum_cl += terms.l_cl * static_cast<double>(b);
            sum_reg += terms.l_reg * static_cast<double>(b);
            samples += b;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        if (samples > 0) {
            rec.l_rec = sum_rec / static_cast<double>(samples);
            rec.l_cl = sum_cl / static_cast<double>(samples);
            rec.l_reg = sum_reg / static_cast<double>(samples);
        }
        rec.total = rec.l_rec + lambda1 * rec.l_cl + lambda2 * rec.l_reg;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        trace.epochs.push_back(rec);

        if (cfg.early_stop && trace.epochs.size() > 11) {
            const double prev = trace.epochs[trace.epochs.size() - 11].total;
            const double cur = rec.total;
            if (prev > 0.0 && (prev - cur) / prev < 1e-5) break;
        }
    }

    if (joint) {
        ClusteringSolution sol = infer(model, x);
        trace.sf_final = soft_silhouette_points(sol.embeddings, sol.probs).total;
        trace.entropy_final = entropy_regularizer(sol.probs);
    }
    if (adam_out) *adam_out = std::move(adam);
    return trace;
}

}  // namespace detail

// Stage 1: reconstruction-only autoencoder training. The clustering head is
// not touched.
inline TrainingTrace pretrain(DcssModel& model, const Matrix& x, const TrainConfig& cfg,
                              AdamState* adam_out = nullptr,
                              const AdamState* adam_in = nullptr) {
    return detail::train_loop(model, x, cfg, false, adam_out, adam_in);
}

// Steps 3-4: k-means over the pretrained embeddings seeds the RBF centers.
// Widths start at the rms within-cluster distance (floored at sigma_init):
// a width far below the embedding scale underflows every phi and leaves the
// head with no gradient. The returned result doubles as the AE+k-means
// baseline solution.
inline KMeansResult init_cluster_head(DcssModel& model, const Matrix& x,
                                      const TrainConfig& cfg) {
    cfg.validate(x.rows);
    Matrix z = infer(model, x).embeddings;
    KMeansResult km = kmeans(z, cfg.k, cfg.rbf_restarts, 300, cfg.seed);
    model.head.centers = km.centers;
    model.head.log_sigma.assign(cfg.k, std::log(cfg.sigma_init));
    std::vector<double> sq(cfg.k, 0.0);
    std::vector<std::size_t> cnt(cfg.k, 0);
    for (std::size_t i = 0; i < z.rows; ++i) {
        const int c = km.labels[i];
        sq[c] += squared_distance(z.row(i), km.centers.row(c), z.cols);
        cnt[c]++;
    }
    for (int c = 0; c < cfg.k; ++c) {
        if (cnt[c] == 0) continue;
        const double rms = std::sqrt(sq[c] / static_cast<double>(cnt[c]));
        model.head.log_sigma[c] = std::log(std::max(cfg.sigma_init, rms));
    }
    return km;
}

// Stage 2: joint training of encoder, decoder and clustering head on the
// composite loss  L_rec + lambda1 (1 - Sf) + lambda2 * mean entropy.
inline TrainingTrace train(DcssModel& model, const Matrix& x, const TrainConfig& cfg,
                           AdamState* adam_out = nullptr,
                           const AdamState* adam_in = nullptr) {
    return detail::train_loop(model, x, cfg, true, adam_out, adam_in);
}

struct MetricsReport {
    // Flat named scalars, emitted as-is into the JSON report.
    std::vector<std::pair<std::string, double>> values;
    bool external_metrics_present = false;

    void add(const std::string& name, double v) { values.emplace_back(name, v); }
    double get(const std::string& name) const {
        for (const auto& [k, v] : values)
            if (k == name) return v;
        throw std::out_of_range("metric not found: " + name);
    }
};

// Internal metrics on the embedding space plus NMI/ARI against the ground
// truth when labels are available.
inline MetricsReport evaluate(const ClusteringSolution& sol,
                              const std::vector<int>& truth_labels) {
    MetricsReport rep;
    const int k = static_cast<int>(sol.probs.cols);
    HardPartition pred{sol.labels, k};
    rep.add("soft_silhouette", soft_silhouette_points(sol.embeddings, sol.probs).total);
    rep.add("silhouette", hard_silhouette_points(sol.embeddings, pred).total);
    if (!truth_labels.empty()) {
        if (truth_labels.size() != sol.labels.size())
            throw std::invalid_argument("evaluate: label length mismatch");
        HardPartition truth{truth_labels, distinct_label_count(truth_labels)};
        rep.add("nmi", nmi(truth, pred));
        rep.add("ari", ari(truth, pred));
        rep.external_metrics_present = true;
    }
    return rep;
}

inline double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Population standard deviation (divide by n).
inline double population_sd(const std::vector<double>& v) {
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size()));
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace dcss
