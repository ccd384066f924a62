#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "dcss/matrix.hpp"

namespace dcss {

struct KMeansResult {
    Matrix centers;           // k x m
    std::vector<int> labels;  // length n
    double sse = 0.0;         // best total within-cluster sum of squares
    int restarts_used = 0;
};

namespace detail {

inline int nearest_center(const double* x, const Matrix& centers, std::size_t m) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows; ++c) {
        const double d = squared_distance(x, centers.row(c), m);
        if (d < best_d) {  // ties keep the lowest index
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

inline Matrix kmeanspp_seed(const Matrix& pts, int k, std::mt19937_64& rng) {
    const std::size_t n = pts.rows, m = pts.cols;
    Matrix centers(static_cast<std::size_t>(k), m);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::size_t idx = first(rng);
    std::copy(pts.row(idx), pts.row(idx) + m, centers.row(0));

    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(pts.row(i), centers.row(c - 1), m));
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = unit(rng) * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = first(rng);  // all points coincide with chosen centers
        }
        std::copy(pts.row(pick), pts.row(pick) + m, centers.row(c));
    }
    return centers;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding and multi-restart selection.
// Deterministic for a fixed seed; the best-SSE restart wins (lowest restart
// index on ties). Emptied clusters are re-seeded to the point farthest from
// its current center.
inline KMeansResult kmeans(const Matrix& pts, int k, int restarts = 100,
                           int max_iter = 300, std::uint64_t seed = 0) {
    const std::size_t n = pts.rows, m = pts.cols;
    if (k < 1) throw std::invalid_argument("kmeans: k must be positive");
    if (n < static_cast<std::size_t>(k)) throw std::invalid_argument("kmeans: n < k");
    if (restarts < 1) throw std::invalid_argument("kmeans: need at least one restart");

    std::mt19937_64 rng(seed);
    KMeansResult best;
    best.sse = std::numeric_limits<double>::infinity();

    for (int r = 0; r < restarts; ++r) {
        Matrix centers = detail::kmeanspp_seed(pts, k, rng);
        std::vector<int> labels(n, -1);
        std::vector<std::size_t> counts(k, 0);

        for (int it = 0; it < max_iter; ++it) {
            bool changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                const int c = detail::nearest_center(pts.row(i), centers, m);
                if (c != labels[i]) {
                    labels[i] = c;
                    changed = true;
                }
            }
            if (!changed) break;

            centers.fill(0.0);
            std::fill(counts.begin(), counts.end(), 0);
            for (std::size_t i = 0; i < n; ++i) {
                counts[labels[i]]++;
                const double* x = pts.row(i);
                double* ctr = centers.row(labels[i]);
                for (std::size_t d = 0; d < m; ++d) ctr[d] += x[d];
            }
            for (int c = 0; c < k; ++c) {
                if (counts[c] == 0) continue;
                double* ctr = centers.row(c);
                for (std::size_t d = 0; d < m; ++d) ctr[d] /= static_cast<double>(counts[c]);
            }
            for (int c = 0; c < k; ++c) {
                if (counts[c] > 0) continue;
                // farthest point from its current center takes over
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = squared_distance(pts.row(i), centers.row(labels[i]), m);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                std::copy(pts.row(far), pts.row(far) + m, centers.row(c));
            }
        }

        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            sse += squared_distance(pts.row(i), centers.row(labels[i]), m);

        if (sse < best.sse) {
            best.centers = std::move(centers);
            best.labels = std::move(labels);
            best.sse = sse;
        }
        best.restarts_used = r + 1;
    }
    return best;
}

}  // namespace dcss
