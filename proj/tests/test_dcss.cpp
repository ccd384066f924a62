#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "dcss/dcss.hpp"
#include "oracles.hpp"

using namespace dcss;

namespace {

TrainConfig toy_config() {
    TrainConfig cfg;
    cfg.k = 2;
    cfg.m = 2;
    cfg.hidden = {4};
    cfg.batch_size = 8;
    cfg.pretrain_epochs = 3;
    cfg.train_epochs = 3;
    cfg.sigma_init = 0.5;
    cfg.temperature = 5.0;
    cfg.rbf_restarts = 4;
    cfg.seed = 1;
    return cfg;
}

Matrix random_batch(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Matrix m(n, d);
    for (double& v : m.data) v = unit(rng);
    return m;
}

// Tiny two-blob dataset in [0,1]^d.
Matrix two_blobs(std::size_t per_cluster, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> norm(0.0, 0.05);
    Matrix x(2 * per_cluster, d);
    for (std::size_t i = 0; i < 2 * per_cluster; ++i) {
        const double base = i < per_cluster ? 0.25 : 0.75;
        for (std::size_t j = 0; j < d; ++j) x(i, j) = base + norm(rng);
    }
    return x;
}

std::vector<double> flatten_params(DcssModel& model) {
    std::vector<double> out;
    for (auto blk : param_blocks(model, true)) out.insert(out.end(), blk.begin(), blk.end());
    return out;
}

}  // namespace

TEST_CASE("composite-loss gradient matches finite differences on a toy model") {
    std::mt19937_64 rng(2);
    TrainConfig cfg = toy_config();
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t d = 6;
        DcssModel model = make_model(d, cfg);
        // spread the centers so the head is informative
        std::normal_distribution<double> norm(0.0, 0.4);
        for (double& v : model.head.centers.data) v = norm(rng);
        // jitter every parameter off the init point: zero biases park dead
        // relu units exactly on their kink, where finite differences and the
        // subgradient legitimately disagree
        std::normal_distribution<double> jitter(0.0, 0.05);
        for (auto blk : param_blocks(model, true))
            for (double& v : blk) v += jitter(rng);
        const Matrix xb = random_batch(8, d, rng);
        const double l1 = 0.5, l2 = 0.3;

        DcssGrad grads = make_grad(model);
        detail::batch_loss_and_grad(model, xb, l1, l2, true, grads);

        auto params = param_blocks(model, true);
        auto gblocks = grad_blocks(grads, true);
        for (std::size_t blk = 0; blk < params.size(); ++blk) {
            for (std::size_t i = 0; i < params[blk].size(); ++i) {
                const double orig = params[blk][i];
                const double fd = oracle::central_diff(
                    [&](double v) {
                        params[blk][i] = v;
                        DcssGrad scratch = make_grad(model);
                        const auto t = detail::batch_loss_and_grad(model, xb, l1, l2,
                                                                   true, scratch);
                        params[blk][i] = orig;
                        return t.total(l1, l2);
                    },
                    orig);
                if (std::fabs(fd) < 1e-10 && std::fabs(gblocks[blk][i]) < 1e-10) continue;
                REQUIRE(oracle::rel_error(gblocks[blk][i], fd) < 1e-4);
            }
        }
    }
}

TEST_CASE("zero-loss configuration has zero gradients") {
    TrainConfig cfg = toy_config();
    DcssModel model = make_model(3, cfg);
    // identity-free check: loss terms off, perfect reconstruction not needed
    Matrix xb(4, 3, 0.0);
    for (auto& l : model.encoder.layers) {
        l.w.fill(0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    for (auto& l : model.decoder.layers) {
        l.w.fill(0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    DcssGrad grads = make_grad(model);
    const auto t = detail::batch_loss_and_grad(model, xb, 0.0, 0.0, false, grads);
    CHECK(t.l_rec == 0.0);
    for (auto blk : grad_blocks(grads, true))
        for (double g : blk) CHECK(g == 0.0);
}

TEST_CASE("entropy gradient vanishes at exactly uniform assignments") {
    // Symmetric geometry: one point equidistant from both centers.
    TrainConfig cfg = toy_config();
    DcssModel model = make_model(2, cfg);
    model.head.centers(0, 0) = 1.0;
    model.head.centers(1, 0) = -1.0;
    RbfCache cache;
    const Matrix z(1, 2, 0.0);
    const Matrix p = rbf_head_forward(model.head, z, &cache);
    CHECK(p(0, 0) == Catch::Approx(0.5).margin(1e-12));
    const Matrix ge = entropy_regularizer_grad(p);
    RbfGrad hg = make_rbf_grad(model.head);
    const Matrix dz = rbf_head_backward(model.head, cache, ge, hg);
    // softmax Jacobian annihilates the constant gradient direction
    for (double v : dz.data) CHECK(v == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("pretraining") {
    std::mt19937_64 rng(5);
    const Matrix x = two_blobs(24, 6, rng);
    TrainConfig cfg = toy_config();
    cfg.pretrain_epochs = 40;
    cfg.lr_pretrain = 1e-2;

    SECTION("reduces the reconstruction loss") {
        DcssModel model = make_model(6, cfg);
        const TrainingTrace trace = pretrain(model, x, cfg);
        REQUIRE(trace.epochs.size() == 41u);
        CHECK(trace.epochs.back().l_rec < 0.5 * trace.epochs.front().l_rec);
    }
    SECTION("zero epochs leaves parameters untouched") {
        cfg.pretrain_epochs = 0;
        DcssModel model = make_model(6, cfg);
        DcssModel before = model;
        pretrain(model, x, cfg);
        CHECK(flatten_params(model) == flatten_params(before));
    }
    SECTION("is independent of the lambdas") {
        DcssModel a = make_model(6, cfg);
        DcssModel b = make_model(6, cfg);
        TrainConfig cfg_b = cfg;
        cfg_b.lambda1 = 7.0;
        cfg_b.lambda2 = 3.0;
        pretrain(a, x, cfg);
        pretrain(b, x, cfg_b);
        CHECK(flatten_params(a) == flatten_params(b));
    }
}

TEST_CASE("stage 2 with zero lambdas equals continued reconstruction training") {
    std::mt19937_64 rng(7);
    const Matrix x = two_blobs(16, 5, rng);
    TrainConfig cfg = toy_config();
    cfg.weight_decay_pretrain = 0.0;
    cfg.pretrain_epochs = 5;
    cfg.train_epochs = 5;
    cfg.lr_pretrain = cfg.lr_train = 1e-3;

    DcssModel a = make_model(5, cfg);
    DcssModel b = a;
    pretrain(a, x, cfg);
    TrainConfig zero = cfg;
    zero.lambda1 = zero.lambda2 = 0.0;
    train(b, x, zero);
    for (std::size_t l = 0; l < a.encoder.layers.size(); ++l)
        CHECK(a.encoder.layers[l].w.data == b.encoder.layers[l].w.data);
    for (std::size_t l = 0; l < a.decoder.layers.size(); ++l)
        CHECK(a.decoder.layers[l].w.data == b.decoder.layers[l].w.data);

    SECTION("resumed optimizer state holds with the same carryover") {
        DcssModel c = make_model(5, cfg);
        DcssModel d = c;
        AdamState adam_c, adam_d;
        pretrain(c, x, cfg, &adam_c);
        pretrain(c, x, cfg, nullptr, &adam_c);
        pretrain(d, x, cfg, &adam_d);
        TrainConfig zero2 = cfg;
        zero2.lambda1 = zero2.lambda2 = 0.0;
        train(d, x, zero2, nullptr, &adam_d);
        for (std::size_t l = 0; l < c.encoder.layers.size(); ++l)
            CHECK(c.encoder.layers[l].w.data == d.encoder.layers[l].w.data);
    }
    SECTION("oversized resumed state is rejected") {
        AdamState bloated;
        for (int i = 0; i < 64; ++i) bloated.m.emplace_back(1, 0.0), bloated.v.emplace_back(1, 0.0);
        DcssModel e = make_model(5, cfg);
        CHECK_THROWS_AS(train(e, x, cfg, nullptr, &bloated), std::invalid_argument);
    }
}

TEST_CASE("cluster head initialization from k-means") {
    std::mt19937_64 rng(9);
    const Matrix x = two_blobs(32, 6, rng);
    TrainConfig cfg = toy_config();
    cfg.pretrain_epochs = 60;
    cfg.lr_pretrain = 1e-2;

    DcssModel model = make_model(6, cfg);
    pretrain(model, x, cfg);
    const KMeansResult km = init_cluster_head(model, x, cfg);

    // Argmax of the head tracks nearest-center, so the k-means labeling is
    // reproduced (up to points near the width-weighted boundary).
    const ClusteringSolution sol = infer(model, x);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < x.rows; ++i)
        if (sol.labels[i] == km.labels[i]) agree++;
    CHECK(static_cast<double>(agree) / static_cast<double>(x.rows) >= 0.95);

    SECTION("widths start at the within-cluster scale, floored at sigma_init") {
        const Matrix z = infer(model, x).embeddings;
        for (int c = 0; c < cfg.k; ++c) {
            double sq = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < z.rows; ++i) {
                if (km.labels[i] != c) continue;
                sq += squared_distance(z.row(i), km.centers.row(c), z.cols);
                cnt++;
            }
            const double rms = std::sqrt(sq / static_cast<double>(cnt));
            const double expected = std::max(cfg.sigma_init, rms);
            CHECK(model.head.log_sigma[c] == Catch::Approx(std::log(expected)).margin(1e-12));
        }
    }

    SECTION("deterministic per seed") {
        DcssModel m2 = make_model(6, cfg);
        pretrain(m2, x, cfg);
        const KMeansResult km2 = init_cluster_head(m2, x, cfg);
        CHECK(km2.labels == km.labels);
        CHECK(km2.centers.data == km.centers.data);
    }
    SECTION("k >= n is rejected") {
        TrainConfig bad = cfg;
        bad.k = static_cast<int>(x.rows);
        CHECK_THROWS_AS(init_cluster_head(model, x, bad), std::invalid_argument);
    }
}

TEST_CASE("joint training sharpens and separates on a toy problem") {
    std::mt19937_64 rng(11);
    const Matrix x = two_blobs(32, 6, rng);
    TrainConfig cfg = toy_config();
    cfg.pretrain_epochs = 60;
    cfg.train_epochs = 40;
    cfg.lr_pretrain = 1e-2;
    cfg.lr_train = 5e-3;
    cfg.lambda1 = 0.05;
    cfg.lambda2 = 0.05;

    DcssModel model = make_model(6, cfg);
    pretrain(model, x, cfg);
    init_cluster_head(model, x, cfg);
    const TrainingTrace trace = train(model, x, cfg);

    REQUIRE(trace.has_diagnostics);
    CHECK(trace.sf_final > trace.sf_initial);
    CHECK(trace.entropy_final < trace.entropy_initial);

    SECTION("trace totals equal their recomputed parts") {
        for (const EpochRecord& r : trace.epochs) {
            const double recomputed = r.l_rec + cfg.lambda1 * r.l_cl + cfg.lambda2 * r.l_reg;
            CHECK(r.total == Catch::Approx(recomputed).margin(1e-12));
        }
    }
}

TEST_CASE("inference") {
    std::mt19937_64 rng(13);
    const Matrix x = two_blobs(20, 4, rng);
    TrainConfig cfg = toy_config();
    DcssModel model = make_model(4, cfg);
    std::normal_distribution<double> norm(0.0, 0.5);
    for (double& v : model.head.centers.data) v = norm(rng);

    const ClusteringSolution a = infer(model, x, 64);
    const ClusteringSolution b = infer(model, x, 7);  // awkward batch boundary
    SECTION("labels are the row-wise argmax") {
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double* r = a.probs.row(i);
            CHECK(a.labels[i] ==
                  static_cast<int>(std::max_element(r, r + a.probs.cols) - r));
        }
    }
    SECTION("results are independent of evaluation batching") {
        for (std::size_t i = 0; i < a.probs.data.size(); ++i)
            CHECK(a.probs.data[i] == Catch::Approx(b.probs.data[i]).margin(1e-12));
        CHECK(a.labels == b.labels);
    }
    SECTION("repeated inference is identical") {
        const ClusteringSolution c = infer(model, x, 64);
        CHECK(a.probs.data == c.probs.data);
        CHECK(a.labels == c.labels);
    }
}

TEST_CASE("evaluation reports") {
    SECTION("perfect agreement") {
        ClusteringSolution sol;
        sol.labels = {0, 0, 1, 1};
        sol.probs = one_hot({sol.labels, 2});
        sol.embeddings = Matrix(4, 2);
        sol.embeddings(2, 0) = sol.embeddings(3, 0) = 5.0;
        const MetricsReport rep = evaluate(sol, {1, 1, 0, 0});
        CHECK(rep.get("nmi") == Catch::Approx(1.0));
        CHECK(rep.get("ari") == Catch::Approx(1.0));
        CHECK(rep.external_metrics_present);
    }
    SECTION("constant prediction gives zero nmi") {
        ClusteringSolution sol;
        sol.labels = {0, 0, 0, 0};
        sol.probs = Matrix(4, 2);
        for (std::size_t i = 0; i < 4; ++i) sol.probs(i, 0) = 1.0;
        sol.embeddings = Matrix(4, 2);
        sol.embeddings(1, 0) = 1.0;
        sol.embeddings(2, 0) = 2.0;
        sol.embeddings(3, 0) = 3.0;
        const MetricsReport rep = evaluate(sol, {0, 0, 1, 1});
        CHECK(rep.get("nmi") == 0.0);
    }
    SECTION("missing labels omit external metrics") {
        ClusteringSolution sol;
        sol.labels = {0, 1};
        sol.probs = one_hot({sol.labels, 2});
        sol.embeddings = Matrix(2, 1);
        sol.embeddings(1, 0) = 1.0;
        const MetricsReport rep = evaluate(sol, {});
        CHECK_FALSE(rep.external_metrics_present);
        CHECK_THROWS_AS(rep.get("nmi"), std::out_of_range);
    }
    SECTION("seed aggregation arithmetic") {
        const std::vector<double> vals{0.9, 1.0};
        CHECK(mean_of(vals) == Catch::Approx(0.95));
        CHECK(population_sd(vals) == Catch::Approx(0.05));
        CHECK(median_of({0.3, 0.1, 0.2}) == Catch::Approx(0.2));
    }
}

TEST_CASE("config validation") {
    TrainConfig cfg = toy_config();
    cfg.k = 1;
    CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
    cfg = toy_config();
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
    cfg = toy_config();
    cfg.temperature = -1.0;
    CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
    cfg = toy_config();
    cfg.k = 100;
    CHECK_THROWS_AS(cfg.validate(100), std::invalid_argument);
    CHECK_NOTHROW(toy_config().validate(100));
}

TEST_CASE("non-finite input data is rejected") {
    TrainConfig cfg = toy_config();
    DcssModel model = make_model(3, cfg);
    Matrix x(8, 3, 0.5);
    x(2, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(pretrain(model, x, cfg), std::invalid_argument);
}
