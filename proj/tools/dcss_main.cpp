#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcss/checkpoint.hpp"
#include "dcss/dcss.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kSchemaVersion = 1;

// Output root: DCSS_OUT_ROOT reroots relative --out-dir values.
fs::path resolve_out_dir(const std::string& out_dir) {
    fs::path p(out_dir);
    if (const char* root = std::getenv("DCSS_OUT_ROOT"); root && *root && p.is_relative())
        p = fs::path(root) / p;
    fs::create_directories(p);
    return p;
}

std::string fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::uint64_t h = 1469598103934665603ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_trace_csv(const fs::path& path, const dcss::TrainingTrace& pre,
                     const dcss::TrainingTrace& joint) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "stage,epoch,l_rec,l_cl,l_reg,total,wall_seconds\n";
    auto dump = [&](const char* stage, const dcss::TrainingTrace& t) {
        for (const auto& e : t.epochs)
            out << stage << ',' << e.epoch << ',' << e.l_rec << ',' << e.l_cl << ','
                << e.l_reg << ',' << e.total << ',' << e.wall_seconds << "\n";
    };
    dump("pretrain", pre);
    dump("train", joint);
}

// Minimal static scatter of the first two embedding dimensions.
void write_scatter_svg(const fs::path& path, const dcss::Matrix& z,
                       const std::vector<int>& labels) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    const std::size_t n = z.rows;
    double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        lo0 = std::min(lo0, z(i, 0)), hi0 = std::max(hi0, z(i, 0));
        const double y = z.cols > 1 ? z(i, 1) : 0.0;
        lo1 = std::min(lo1, y), hi1 = std::max(hi1, y);
    }
    const double s0 = hi0 > lo0 ? 560.0 / (hi0 - lo0) : 1.0;
    const double s1 = hi1 > lo1 ? 560.0 / (hi1 - lo1) : 1.0;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\">\n";
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 20.0 + (z(i, 0) - lo0) * s0;
        const double y = 580.0 - ((z.cols > 1 ? z(i, 1) : 0.0) - lo1) * s1;
        out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2\" fill=\""
            << palette[labels[i] % 8] << "\"/>\n";
    }
    out << "</svg>\n";
}

struct DatasetArgs {
    std::string path;
    std::string label_column;  // header name or column index; empty = no labels
    std::string labels_path;   // separate one-column labels file
};

dcss::DataMatrix load_dataset(const DatasetArgs& a) {
    std::optional<std::string> col;
    if (!a.label_column.empty()) col = a.label_column;
    dcss::DataMatrix data = dcss::minmax_normalize(dcss::load_csv(a.path, col));
    if (!a.labels_path.empty()) {
        const dcss::DataMatrix lab = dcss::load_csv(a.labels_path, std::string("0"));
        if (lab.labels.size() != data.n())
            throw std::invalid_argument(a.labels_path + ": row count does not match data");
        data.labels = lab.labels;
    }
    return data;
}

json config_json(const dcss::TrainConfig& cfg) {
    json j;
    j["k"] = cfg.k;
    j["embedding_dim"] = cfg.m;
    j["hidden"] = cfg.hidden;
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["pretrain_epochs"] = cfg.pretrain_epochs;
    j["train_epochs"] = cfg.train_epochs;
    j["lr_pretrain"] = cfg.lr_pretrain;
    j["lr_train"] = cfg.lr_train;
    j["weight_decay_pretrain"] = cfg.weight_decay_pretrain;
    j["batch_size"] = cfg.batch_size;
    j["temperature"] = cfg.temperature;
    j["sigma_init"] = cfg.sigma_init;
    j["rbf_restarts"] = cfg.rbf_restarts;
    j["train_sigma"] = cfg.train_sigma;
    j["early_stop"] = cfg.early_stop;
    return j;
}

void add_config_flags(CLI::App* cmd, dcss::TrainConfig& cfg) {
    cmd->add_option("--k", cfg.k, "number of clusters");
    cmd->add_option("--embedding-dim", cfg.m, "embedding dimension");
    cmd->add_option("--hidden", cfg.hidden, "encoder hidden layer widths");
    cmd->add_option("--lambda1", cfg.lambda1, "soft-silhouette loss weight");
    cmd->add_option("--lambda2", cfg.lambda2, "entropy loss weight");
    cmd->add_option("--pretrain-epochs", cfg.pretrain_epochs, "stage-1 epochs");
    cmd->add_option("--train-epochs", cfg.train_epochs, "stage-2 epochs");
    cmd->add_option("--lr-pretrain", cfg.lr_pretrain, "stage-1 learning rate");
    cmd->add_option("--lr-train", cfg.lr_train, "stage-2 learning rate");
    cmd->add_option("--weight-decay", cfg.weight_decay_pretrain, "stage-1 L2 penalty");
    cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size");
    cmd->add_option("--temperature", cfg.temperature, "softmax temperature");
    cmd->add_option("--sigma-init", cfg.sigma_init, "initial RBF width");
    cmd->add_option("--rbf-restarts", cfg.rbf_restarts, "k-means restarts for head init");
    cmd->add_flag("--train-sigma,!--freeze-sigma", cfg.train_sigma, "learn RBF widths");
    cmd->add_flag("--early-stop", cfg.early_stop, "stop on training-loss plateau");
}

// ---------------------------------------------------------------- generate

int cmd_generate(const dcss::SyntheticSpec& spec, const std::string& out_dir) {
    const fs::path dir = resolve_out_dir(out_dir);
    const dcss::SyntheticData data = dcss::generate_synthetic(spec);
    dcss::save_csv((dir / "features.csv").string(), data.data.features);
    dcss::save_labels_csv((dir / "labels.csv").string(), data.data.labels);
    dcss::save_csv((dir / "latent.csv").string(), data.latent);

    json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["tool_version"] = kToolVersion;
    manifest["command"] = "generate";
    json sp;
    sp["n_per_cluster"] = spec.n_per_cluster;
    sp["k"] = spec.k;
    sp["latent_dim"] = spec.latent_dim;
    sp["hidden_dim"] = spec.hidden_dim;
    sp["output_dim"] = spec.output_dim;
    sp["center_spread"] = spec.center_spread;
    sp["within_sd"] = spec.within_sd;
    sp["min_separation_sds"] = spec.min_separation_sds;
    sp["seed"] = spec.seed;
    manifest["spec"] = sp;
    manifest["artifacts"] = {{"features", "features.csv"},
                             {"labels", "labels.csv"},
                             {"latent", "latent.csv"}};
    manifest["features_fnv1a64"] = fnv1a64_file((dir / "features.csv").string());
    write_json_file(dir / "manifest.json", manifest);
    std::cout << "wrote " << data.data.n() << "x" << data.data.dim() << " features to "
              << dir.string() << "\n";
    return 0;
}

// --------------------------------------------------------------------- run

struct SeedOutcome {
    std::uint64_t seed = 0;
    dcss::TrainingTrace pre, joint;
    dcss::MetricsReport metrics;
    double ae_kmeans_nmi = 0.0, ae_kmeans_ari = 0.0;
    std::string error;   // non-empty on failure
    int exit_code = 0;
};

SeedOutcome run_one_seed(const dcss::DataMatrix& data, dcss::TrainConfig cfg,
                         std::uint64_t seed, const fs::path& dir, bool emit_plots) {
    SeedOutcome out;
    out.seed = seed;
    cfg.seed = seed;
    const std::string tag = "seed" + std::to_string(seed);
    try {
        dcss::DcssModel model = dcss::make_model(data.dim(), cfg);
        dcss::AdamState pre_adam;
        out.pre = dcss::pretrain(model, data.features, cfg, &pre_adam);
        const dcss::KMeansResult km = dcss::init_cluster_head(model, data.features, cfg);
        if (data.has_labels()) {
            const dcss::HardPartition truth{data.labels,
                                            dcss::distinct_label_count(data.labels)};
            const dcss::HardPartition ae_pred{km.labels, cfg.k};
            out.ae_kmeans_nmi = dcss::nmi(truth, ae_pred);
            out.ae_kmeans_ari = dcss::ari(truth, ae_pred);
        }
        dcss::AdamState adam;
        out.joint = dcss::train(model, data.features, cfg, &adam, &pre_adam);

        const dcss::ClusteringSolution sol = dcss::infer(model, data.features);
        out.metrics = dcss::evaluate(sol, data.labels);

        dcss::save_checkpoint((dir / ("checkpoint_" + tag + ".bin")).string(), model,
                              {seed, data.dim()}, &adam);
        write_trace_csv(dir / ("trace_" + tag + ".csv"), out.pre, out.joint);
        dcss::save_labels_csv((dir / ("labels_" + tag + ".csv")).string(), sol.labels);
        dcss::save_csv((dir / ("probs_" + tag + ".csv")).string(), sol.probs);
        if (emit_plots)
            write_scatter_svg(dir / ("embedding_" + tag + ".svg"), sol.embeddings,
                              sol.labels);
    } catch (const dcss::NumericError& e) {
        write_trace_csv(dir / ("trace_" + tag + ".csv"), out.pre, e.trace);
        out.error = e.what();
        out.exit_code = 3;
    } catch (const std::exception& e) {
        out.error = e.what();
        out.exit_code = 2;
    }
    return out;
}

int cmd_run(const DatasetArgs& ds, dcss::TrainConfig cfg, std::vector<std::uint64_t> seeds,
            int jobs, const std::string& out_dir, bool emit_plots) {
    const fs::path dir = resolve_out_dir(out_dir);
    const dcss::DataMatrix data = load_dataset(ds);
    cfg.validate(data.n());
    std::sort(seeds.begin(), seeds.end());
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
    if (seeds.empty()) throw std::invalid_argument("run: need at least one seed");

    std::vector<SeedOutcome> outcomes(seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < seeds.size(); i = next.fetch_add(1))
            outcomes[i] = run_one_seed(data, cfg, seeds[i], dir, emit_plots);
    };
    const int nthreads = std::max(1, std::min<int>(jobs, static_cast<int>(seeds.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    int exit_code = 0;
    for (const auto& o : outcomes) {
        if (o.exit_code != 0) {
            std::cerr << "seed " << o.seed << ": " << o.error << "\n";
            exit_code = std::max(exit_code, o.exit_code);
        }
    }
    if (exit_code != 0) return exit_code;

    json report;
    report["schema_version"] = kSchemaVersion;
    report["tool_version"] = kToolVersion;
    report["reconstruction_only"] = cfg.lambda1 == 0.0 && cfg.lambda2 == 0.0;
    report["n"] = data.n();
    report["d"] = data.dim();

    std::vector<double> nmis, aris, sfs;
    json per_seed = json::array();
    for (const auto& o : outcomes) {
        json s;
        s["seed"] = o.seed;
        for (const auto& [name, value] : o.metrics.values) s[name] = value;
        if (o.metrics.external_metrics_present) {
            s["ae_kmeans_nmi"] = o.ae_kmeans_nmi;
            s["ae_kmeans_ari"] = o.ae_kmeans_ari;
            nmis.push_back(o.metrics.get("nmi"));
            aris.push_back(o.metrics.get("ari"));
        }
        s["l_rec_pretrain_initial"] = o.pre.epochs.front().l_rec;
        s["l_rec_pretrain_final"] = o.pre.epochs.back().l_rec;
        s["sf_initial"] = o.joint.sf_initial;
        s["sf_final"] = o.joint.sf_final;
        s["entropy_initial"] = o.joint.entropy_initial;
        s["entropy_final"] = o.joint.entropy_final;
        s["degenerate_batches"] = o.pre.degenerate_batches + o.joint.degenerate_batches;
        per_seed.push_back(s);
        sfs.push_back(o.metrics.get("soft_silhouette"));
    }
    report["sf_mean"] = dcss::mean_of(sfs);
    report["sf_sd"] = dcss::population_sd(sfs);
    if (!nmis.empty()) {
        report["nmi_mean"] = dcss::mean_of(nmis);
        report["nmi_sd"] = dcss::population_sd(nmis);
        report["nmi_median"] = dcss::median_of(nmis);
        report["ari_mean"] = dcss::mean_of(aris);
        report["ari_sd"] = dcss::population_sd(aris);
        report["ari_median"] = dcss::median_of(aris);
    }
    report["per_seed"] = per_seed;
    write_json_file(dir / "report.json", report);

    json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["tool_version"] = kToolVersion;
    manifest["command"] = "run";
    manifest["config"] = config_json(cfg);
    manifest["seeds"] = seeds;
    manifest["dataset"] = {{"path", ds.path},
                           {"fnv1a64", fnv1a64_file(ds.path)},
                           {"label_column", ds.label_column},
                           {"labels_path", ds.labels_path},
                           {"n", data.n()},
                           {"d", data.dim()}};
    json artifacts;
    artifacts["report"] = "report.json";
    for (std::uint64_t s : seeds) {
        const std::string tag = "seed" + std::to_string(s);
        artifacts["checkpoint_" + tag] = "checkpoint_" + tag + ".bin";
        artifacts["trace_" + tag] = "trace_" + tag + ".csv";
        artifacts["labels_" + tag] = "labels_" + tag + ".csv";
    }
    manifest["artifacts"] = artifacts;
    write_json_file(dir / "manifest.json", manifest);

    std::cout << report.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------- baseline

int cmd_baseline(const DatasetArgs& ds, int k, int restarts, std::uint64_t seed,
                 const std::string& checkpoint, const std::string& out_dir) {
    const fs::path dir = resolve_out_dir(out_dir);
    const dcss::DataMatrix data = load_dataset(ds);
    if (k < 2) {
        if (!data.has_labels())
            throw std::invalid_argument("baseline: --k required when data has no labels");
        k = dcss::distinct_label_count(data.labels);
    }

    json report;
    report["schema_version"] = kSchemaVersion;
    report["tool_version"] = kToolVersion;
    report["n"] = data.n();
    report["d"] = data.dim();
    report["k"] = k;

    const dcss::KMeansResult raw = dcss::kmeans(data.features, k, restarts, 300, seed);
    report["kmeans_sse"] = raw.sse;
    report["kmeans_silhouette"] =
        dcss::hard_silhouette_points(data.features, {raw.labels, k}).total;
    if (data.has_labels()) {
        const dcss::HardPartition truth{data.labels, dcss::distinct_label_count(data.labels)};
        report["kmeans_nmi"] = dcss::nmi(truth, {raw.labels, k});
        report["kmeans_ari"] = dcss::ari(truth, {raw.labels, k});
    }
    dcss::save_labels_csv((dir / "kmeans_labels.csv").string(), raw.labels);

    if (!checkpoint.empty()) {
        dcss::DcssModel model = dcss::load_checkpoint(checkpoint);
        const dcss::Matrix z = dcss::infer(model, data.features).embeddings;
        const dcss::KMeansResult emb = dcss::kmeans(z, k, restarts, 300, seed);
        report["ae_kmeans_sse"] = emb.sse;
        report["ae_kmeans_silhouette"] =
            dcss::hard_silhouette_points(z, {emb.labels, k}).total;
        if (data.has_labels()) {
            const dcss::HardPartition truth{data.labels,
                                            dcss::distinct_label_count(data.labels)};
            report["ae_kmeans_nmi"] = dcss::nmi(truth, {emb.labels, k});
            report["ae_kmeans_ari"] = dcss::ari(truth, {emb.labels, k});
        }
        dcss::save_labels_csv((dir / "ae_kmeans_labels.csv").string(), emb.labels);
    }
    write_json_file(dir / "baseline_report.json", report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

// ------------------------------------------------------------------- score

int cmd_score(const std::string& data_path, const std::string& labels_path,
              const std::string& probs_path, const std::string& out_dir) {
    const fs::path dir = resolve_out_dir(out_dir);
    const dcss::DataMatrix data = dcss::load_csv(data_path);

    dcss::SilhouetteReport rep;
    std::string kind;
    if (!labels_path.empty()) {
        const dcss::DataMatrix lab = dcss::load_csv(labels_path, std::string("0"));
        if (lab.labels.size() != data.n())
            throw std::invalid_argument("score: labels row count does not match data");
        rep = dcss::hard_silhouette_points(
            data.features, {lab.labels, dcss::distinct_label_count(lab.labels)});
        kind = "hard";
    } else {
        const dcss::DataMatrix probs = dcss::load_csv(probs_path);
        if (probs.n() != data.n())
            throw std::invalid_argument("score: probabilities row count does not match data");
        rep = dcss::soft_silhouette_points(data.features, probs.features);
        kind = "soft";
    }

    dcss::Matrix per(rep.per_point.size(), 1);
    per.data = rep.per_point;
    dcss::save_csv((dir / "scores.csv").string(), per, {"silhouette"});

    json report;
    report["schema_version"] = kSchemaVersion;
    report["tool_version"] = kToolVersion;
    report["kind"] = kind;
    report["n"] = data.n();
    report["total"] = rep.total;
    report["degenerate"] = rep.degenerate;
    write_json_file(dir / "score_report.json", report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep clustering by soft-silhouette optimization"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    app.set_config("--config", "", "config file with [subcommand] sections of key = value lines");
    app.allow_config_extras(CLI::config_extras_mode::error);

    // generate
    dcss::SyntheticSpec spec;
    std::string gen_out = "synthetic_out";
    auto* gen = app.add_subcommand("generate", "write a synthetic clustered dataset");
    gen->fallthrough(true);
    gen->add_option("--n-per-cluster", spec.n_per_cluster, "points per cluster");
    gen->add_option("--k", spec.k, "number of clusters");
    gen->add_option("--latent-dim", spec.latent_dim, "latent dimension");
    gen->add_option("--hidden-dim", spec.hidden_dim, "mixing layer width");
    gen->add_option("--output-dim", spec.output_dim, "observed dimension");
    gen->add_option("--spread", spec.center_spread, "latent center spread");
    gen->add_option("--within-sd", spec.within_sd, "within-cluster sd");
    gen->add_option("--min-separation", spec.min_separation_sds,
                    "pairwise center margin in sd units");
    gen->add_option("--seed", spec.seed, "generator seed");
    gen->add_option("--out-dir", gen_out, "output directory");

    // run
    DatasetArgs run_ds;
    dcss::TrainConfig run_cfg;
    std::vector<std::uint64_t> seeds = {0};
    int jobs = 1;
    bool emit_plots = false;
    std::string run_out = "run_out";
    auto* run = app.add_subcommand("run", "train the full clustering pipeline");
    run->fallthrough(true);
    run->add_option("--data", run_ds.path, "features CSV")->required();
    auto* run_lc = run->add_option("--label-column", run_ds.label_column,
                                   "ground-truth column (header name or index), evaluation only");
    run->add_option("--labels", run_ds.labels_path, "separate ground-truth labels CSV")
        ->excludes(run_lc);
    add_config_flags(run, run_cfg);
    run->add_option("--seeds", seeds, "seeds to run");
    run->add_option("--jobs", jobs, "parallel seed workers");
    run->add_flag("--emit-plots", emit_plots, "write embedding scatter SVGs");
    run->add_option("--out-dir", run_out, "output directory");

    // baseline
    DatasetArgs base_ds;
    int base_k = 0, base_restarts = 100;
    std::uint64_t base_seed = 0;
    std::string base_ckpt, base_out = "baseline_out";
    bool embedded = false;
    auto* base = app.add_subcommand("baseline", "k-means baselines");
    base->fallthrough(true);
    base->add_option("--data", base_ds.path, "features CSV")->required();
    auto* base_lc =
        base->add_option("--label-column", base_ds.label_column, "ground-truth column");
    base->add_option("--labels", base_ds.labels_path, "separate ground-truth labels CSV")
        ->excludes(base_lc);
    base->add_option("--k", base_k, "number of clusters (default: from labels)");
    base->add_option("--restarts", base_restarts, "k-means restarts");
    base->add_option("--seed", base_seed, "k-means seed");
    base->add_option("--checkpoint", base_ckpt, "trained model for the embedded baseline");
    base->add_flag("--embedded", embedded, "require the embedded-space baseline");
    base->add_option("--out-dir", base_out, "output directory");

    // score
    std::string score_data, score_labels, score_probs, score_out = "score_out";
    auto* score = app.add_subcommand("score", "silhouette of an existing clustering");
    score->fallthrough(true);
    score->add_option("--data", score_data, "points CSV")->required();
    auto* lab_opt = score->add_option("--labels", score_labels, "hard labels CSV");
    score->add_option("--probs", score_probs, "soft assignment CSV")->excludes(lab_opt);
    score->add_option("--out-dir", score_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(spec, gen_out);
        if (run->parsed()) return cmd_run(run_ds, run_cfg, seeds, jobs, run_out, emit_plots);
        if (base->parsed()) {
            if (embedded && base_ckpt.empty())
                throw std::invalid_argument("baseline: --embedded requires --checkpoint");
            return cmd_baseline(base_ds, base_k, base_restarts, base_seed, base_ckpt,
                                base_out);
        }
        if (score->parsed()) {
            if (score_labels.empty() == score_probs.empty())
                throw std::invalid_argument("score: pass exactly one of --labels / --probs");
            return cmd_score(score_data, score_labels, score_probs, score_out);
        }
    } catch (const dcss::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
