#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcss/matrix.hpp"

namespace dcss {

struct DataMatrix {
    Matrix features;         // n x d
    std::vector<int> labels;  // empty when absent; evaluation only
    std::vector<double> feature_mins, feature_maxs;  // recorded at normalization

    bool has_labels() const { return !labels.empty(); }
    std::size_t n() const { return features.rows; }
    std::size_t dim() const { return features.cols; }
};

struct SyntheticSpec {
    int n_per_cluster = 2500;
    int k = 4;
    int latent_dim = 2;
    int hidden_dim = 10;
    int output_dim = 100;
    double center_spread = 5.0;       // sd of the raw latent center draw
    double within_sd = 1.0;           // within-cluster standard deviation
    double min_separation_sds = 6.0;  // enforced pairwise center margin
    std::uint64_t seed = 0;
};

struct SyntheticData {
    DataMatrix data;  // n x output_dim observations plus labels
    Matrix latent;    // n x latent_dim ground-truth coordinates
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Latent Gaussian clusters pushed through x = logistic(U logistic(W z)).
// Centers are rescaled so every pair is at least min_separation_sds apart
// (in within-cluster sd units); W and U are fresh N(0,1) draws per seed.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.k < 1 || spec.n_per_cluster < 1 || spec.latent_dim < 1 ||
        spec.hidden_dim < 1 || spec.output_dim < 1 || spec.within_sd <= 0.0)
        throw std::invalid_argument("generate_synthetic: invalid spec");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> stdnorm(0.0, 1.0);

    const std::size_t ld = spec.latent_dim;
    Matrix centers(spec.k, ld);
    for (double& v : centers.data) v = spec.center_spread * stdnorm(rng);
    if (spec.k > 1) {
        double min_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < centers.rows; ++i)
            for (std::size_t j = i + 1; j < centers.rows; ++j)
                min_d = std::min(min_d, euclidean_distance(centers.row(i), centers.row(j), ld));
        const double target = spec.min_separation_sds * spec.within_sd;
        if (min_d < target && min_d > 0.0) {
            const double scale = target / min_d;
            for (double& v : centers.data) v *= scale;
        }
    }

    const std::size_t n = static_cast<std::size_t>(spec.k) * spec.n_per_cluster;
    SyntheticData out;
    out.latent = Matrix(n, ld);
    out.data.labels.resize(n);
    for (int c = 0; c < spec.k; ++c) {
        for (int s = 0; s < spec.n_per_cluster; ++s) {
            const std::size_t i = static_cast<std::size_t>(c) * spec.n_per_cluster + s;
            out.data.labels[i] = c;
            for (std::size_t d = 0; d < ld; ++d)
                out.latent(i, d) = centers(c, d) + spec.within_sd * stdnorm(rng);
        }
    }

    Matrix w(spec.hidden_dim, ld), u(spec.output_dim, spec.hidden_dim);
    for (double& v : w.data) v = stdnorm(rng);
    for (double& v : u.data) v = stdnorm(rng);

    Matrix h(n, spec.hidden_dim);
    gemm(false, true, 1.0, out.latent, w, 0.0, h);
    for (double& v : h.data) v = logistic(v);
    out.data.features = Matrix(n, spec.output_dim);
    gemm(false, true, 1.0, h, u, 0.0, out.data.features);
    for (double& v : out.data.features.data) v = logistic(v);
    return out;
}

// Per-feature (x - min) / (max - min); constant features map to 0.
inline DataMatrix minmax_normalize(DataMatrix data) {
    const std::size_t n = data.n(), d = data.dim();
    if (n < 1) throw std::invalid_argument("minmax_normalize: empty data");
    data.feature_mins.assign(d, std::numeric_limits<double>::infinity());
    data.feature_maxs.assign(d, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = data.features.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            data.feature_mins[j] = std::min(data.feature_mins[j], r[j]);
            data.feature_maxs[j] = std::max(data.feature_maxs[j], r[j]);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double* r = data.features.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double span = data.feature_maxs[j] - data.feature_mins[j];
            r[j] = span > 0.0 ? (r[j] - data.feature_mins[j]) / span : 0.0;
        }
    }
    return data;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    return cells;
}

inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(*b))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
    if (b == e) return false;
    auto [ptr, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && ptr == e;
}

}  // namespace detail

// Numeric CSV with optional header row and optional label column (by header
// name, or by index when there is no header). Ragged or non-numeric rows
// produce an error naming the offending location.
inline DataMatrix load_csv(const std::string& path,
                           std::optional<std::string> label_column = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.find_first_not_of(", \t\r") != std::string::npos)
            lines.push_back(line);
    }
    if (lines.empty()) throw std::runtime_error(path + ": empty file");

    auto first = detail::split_csv_line(lines[0]);
    const std::size_t width = first.size();

    // Header detection: any non-numeric cell in the first row.
    double tmp;
    bool has_header = false;
    for (const auto& c : first)
        if (!detail::parse_double(c, tmp)) has_header = true;

    std::optional<std::size_t> label_idx;
    if (label_column) {
        if (has_header) {
            for (std::size_t j = 0; j < first.size(); ++j)
                if (first[j] == *label_column) label_idx = j;
        }
        if (!label_idx) {  // fall back to a numeric index
            std::size_t idx;
            auto [p, ec] = std::from_chars(label_column->data(),
                                           label_column->data() + label_column->size(), idx);
            if (ec == std::errc() && p == label_column->data() + label_column->size() &&
                idx < width)
                label_idx = idx;
        }
        if (!label_idx)
            throw std::runtime_error(path + ": label column '" + *label_column + "' not found");
    }

    const std::size_t start = has_header ? 1 : 0;
    const std::size_t n = lines.size() - start;
    if (n == 0) throw std::runtime_error(path + ": no data rows");
    const std::size_t d = width - (label_idx ? 1 : 0);

    DataMatrix data;
    data.features = Matrix(n, d);
    if (label_idx) data.labels.resize(n);
    std::vector<double> raw_labels(label_idx ? n : 0);

    for (std::size_t r = 0; r < n; ++r) {
        auto cells = detail::split_csv_line(lines[start + r]);
        if (cells.size() != width)
            throw std::runtime_error(path + ": ragged row at line " +
                                     std::to_string(start + r + 1));
        std::size_t fj = 0;
        for (std::size_t j = 0; j < width; ++j) {
            double v;
            if (!detail::parse_double(cells[j], v))
                throw std::runtime_error(path + ": non-numeric cell at line " +
                                         std::to_string(start + r + 1) + ", column " +
                                         std::to_string(j + 1));
            if (label_idx && j == *label_idx)
                raw_labels[r] = v;
            else
                data.features(r, fj++) = v;
        }
    }

    if (label_idx) {
        // Map raw label values to dense ids 0..K-1 in sorted order.
        std::vector<double> uniq(raw_labels);
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        for (std::size_t r = 0; r < n; ++r)
            data.labels[r] = static_cast<int>(
                std::lower_bound(uniq.begin(), uniq.end(), raw_labels[r]) - uniq.begin());
    }
    return data;
}

inline void save_csv(const std::string& path, const Matrix& m,
                     const std::vector<std::string>& header = {}) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    if (!header.empty()) {
        for (std::size_t j = 0; j < header.size(); ++j)
            out << header[j] << (j + 1 < header.size() ? "," : "\n");
    }
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j)
            out << m(i, j) << (j + 1 < m.cols ? "," : "\n");
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline void save_labels_csv(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (int l : labels) out << l << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline int distinct_label_count(const std::vector<int>& labels) {
    if (labels.empty()) return 0;
    return *std::max_element(labels.begin(), labels.end()) + 1;
}

}  // namespace dcss
