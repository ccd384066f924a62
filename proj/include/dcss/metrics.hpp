#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dcss/matrix.hpp"

namespace dcss {

// Own-cluster probability mass below this is treated as a soft singleton.
inline constexpr double kEpsMass = 1e-12;
// Clamp inside logarithms of the entropy term.
inline constexpr double kEpsLog = 1e-12;

struct HardPartition {
    std::vector<int> labels;  // values in 0..k-1
    int k = 0;
};

struct SilhouetteReport {
    std::vector<double> per_point;
    double total = 0.0;
    // Set when a singleton cluster (hard), a near-zero own-cluster mass
    // (soft) or an empty cluster was encountered.
    bool degenerate = false;
};

inline void validate_partition(const HardPartition& part) {
    if (part.k < 2) throw std::invalid_argument("partition needs at least 2 clusters");
    for (int l : part.labels)
        if (l < 0 || l >= part.k)
            throw std::invalid_argument("cluster label out of range");
}

inline void validate_soft_assignment(const Matrix& probs) {
    for (std::size_t i = 0; i < probs.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < probs.cols; ++j) {
            if (probs(i, j) < 0.0)
                throw std::invalid_argument("negative assignment probability");
            s += probs(i, j);
        }
        if (std::fabs(s - 1.0) > 1e-9)
            throw std::invalid_argument("assignment row does not sum to 1");
    }
}

namespace detail {

// Shared per-point silhouette core for the hard score. dist_row(i, buf)
// fills buf with the distances from point i to every point.
template <typename DistRowFn>
SilhouetteReport hard_silhouette_impl(std::size_t n, const HardPartition& part,
                                      DistRowFn&& dist_row) {
    validate_partition(part);
    if (part.labels.size() != n) throw std::invalid_argument("label/point count mismatch");
    if (n < 2) throw std::invalid_argument("need at least 2 points");
    const int k = part.k;

    std::vector<std::size_t> counts(k, 0);
    for (int l : part.labels) counts[l]++;
    const bool has_empty = std::any_of(counts.begin(), counts.end(),
                                       [](std::size_t c) { return c == 0; });

    SilhouetteReport rep;
    rep.per_point.assign(n, 0.0);
    rep.degenerate = has_empty;

    std::vector<double> buf(n);
    std::vector<double> cluster_sum(k);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dist_row(i, buf);
        std::fill(cluster_sum.begin(), cluster_sum.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) cluster_sum[part.labels[j]] += buf[j];

        const int own = part.labels[i];
        if (counts[own] <= 1) {
            rep.degenerate = true;
            rep.per_point[i] = 0.0;  // singleton convention
            continue;
        }
        const double a = cluster_sum[own] / static_cast<double>(counts[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == own || counts[c] == 0) continue;
            b = std::min(b, cluster_sum[c] / static_cast<double>(counts[c]));
        }
        double s = 0.0;
        if (std::isfinite(b)) {
            const double m = std::max(a, b);
            s = m > 0.0 ? (b - a) / m : 0.0;
        }
        rep.per_point[i] = s;
        total += s;
    }
    rep.total = total / static_cast<double>(n);
    return rep;
}

// Shared per-point core for the soft score. Per point i and cluster J the
// expected distance is  A[i][J] = sum_j P[j][J] d(i,j) / sum_{j!=i} P[j][J].
template <typename DistRowFn>
SilhouetteReport soft_silhouette_impl(std::size_t n, const Matrix& probs,
                                      DistRowFn&& dist_row, bool validate = true) {
    if (probs.rows != n) throw std::invalid_argument("probability/point count mismatch");
    if (n < 2) throw std::invalid_argument("need at least 2 points");
    const std::size_t k = probs.cols;
    if (k < 2) throw std::invalid_argument("need at least 2 clusters");
    if (validate) validate_soft_assignment(probs);

    std::vector<double> col_mass(k, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < k; ++c) col_mass[c] += probs(j, c);

    SilhouetteReport rep;
    rep.per_point.assign(n, 0.0);

    std::vector<double> buf(n);
    std::vector<double> num(k), a(k);
    std::vector<bool> valid(k);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dist_row(i, buf);
        std::fill(num.begin(), num.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double d = buf[j];
            for (std::size_t c = 0; c < k; ++c) num[c] += probs(j, c) * d;
        }
        for (std::size_t c = 0; c < k; ++c) {
            const double den = col_mass[c] - probs(i, c);
            valid[c] = den >= kEpsMass;
            a[c] = valid[c] ? num[c] / den : 0.0;
            if (!valid[c]) rep.degenerate = true;
        }
        // Two smallest valid expected distances give b for every own cluster.
        std::size_t min1 = k, min2 = k;
        for (std::size_t c = 0; c < k; ++c) {
            if (!valid[c]) continue;
            if (min1 == k || a[c] < a[min1]) {
                min2 = min1;
                min1 = c;
            } else if (min2 == k || a[c] < a[min2]) {
                min2 = c;
            }
        }
        double sf = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (!valid[c]) continue;  // soft singleton: conditional term is 0
            const std::size_t bi = (c == min1) ? min2 : min1;
            if (bi == k) continue;  // no other valid cluster
            const double b = a[bi];
            const double m = std::max(a[c], b);
            const double s = m > 0.0 ? (b - a[c]) / m : 0.0;
            sf += probs(i, c) * s;
        }
        rep.per_point[i] = sf;
        total += sf;
    }
    rep.total = total / static_cast<double>(n);
    return rep;
}

}  // namespace detail

inline SilhouetteReport hard_silhouette(const Matrix& dist, const HardPartition& part) {
    if (dist.rows != dist.cols) throw std::invalid_argument("distance matrix not square");
    return detail::hard_silhouette_impl(
        dist.rows, part, [&](std::size_t i, std::vector<double>& buf) {
            const double* r = dist.row(i);
            std::copy(r, r + dist.cols, buf.begin());
        });
}

// Hard silhouette straight from points, without materializing the n x n
// distance matrix.
inline SilhouetteReport hard_silhouette_points(const Matrix& points,
                                               const HardPartition& part) {
    return detail::hard_silhouette_impl(
        points.rows, part, [&](std::size_t i, std::vector<double>& buf) {
            const double* xi = points.row(i);
            for (std::size_t j = 0; j < points.rows; ++j)
                buf[j] = euclidean_distance(xi, points.row(j), points.cols);
        });
}

inline SilhouetteReport soft_silhouette(const Matrix& dist, const Matrix& probs) {
    if (dist.rows != dist.cols) throw std::invalid_argument("distance matrix not square");
    return detail::soft_silhouette_impl(
        dist.rows, probs, [&](std::size_t i, std::vector<double>& buf) {
            const double* r = dist.row(i);
            std::copy(r, r + dist.cols, buf.begin());
        });
}

inline SilhouetteReport soft_silhouette_points(const Matrix& points, const Matrix& probs) {
    return detail::soft_silhouette_impl(
        points.rows, probs, [&](std::size_t i, std::vector<double>& buf) {
            const double* xi = points.row(i);
            for (std::size_t j = 0; j < points.rows; ++j)
                buf[j] = euclidean_distance(xi, points.row(j), points.cols);
        });
}

struct SoftSilhouetteGrad {
    Matrix d_probs;  // n x K, gradient of Sf w.r.t. each assignment entry
    Matrix d_dist;   // n x n, gradient of Sf w.r.t. each distance entry
};

// Analytic gradient of the total soft silhouette Sf with respect to the raw
// (unnormalized) assignment entries and the distance entries. Ties in the
// min/max take the lowest cluster index. Throws if any expected-distance
// denominator is degenerate; training guards that case upstream.
inline SoftSilhouetteGrad soft_silhouette_grad(const Matrix& dist, const Matrix& probs) {
    const std::size_t n = dist.rows;
    if (dist.cols != n) throw std::invalid_argument("distance matrix not square");
    if (probs.rows != n) throw std::invalid_argument("probability/point count mismatch");
    const std::size_t k = probs.cols;
    if (n < 2 || k < 2) throw std::invalid_argument("need n >= 2 and K >= 2");

    std::vector<double> col_mass(k, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < k; ++c) col_mass[c] += probs(j, c);

    const double inv_n = 1.0 / static_cast<double>(n);
    Matrix a_mat(n, k);    // expected distances A[i][c]
    Matrix den_mat(n, k);  // their denominators
    Matrix g_a(n, k);      // dSf / dA
    SoftSilhouetteGrad out;
    out.d_probs = Matrix(n, k);
    out.d_dist = Matrix(n, n);

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            double num = 0.0;
            for (std::size_t j = 0; j < n; ++j) num += probs(j, c) * dist(i, j);
            const double den = col_mass[c] - probs(i, c);
            if (den < kEpsMass)
                throw std::runtime_error("soft_silhouette_grad: degenerate cluster mass");
            a_mat(i, c) = num / den;
            den_mat(i, c) = den;
        }
        // b index for own cluster c: argmin over the others (lowest index wins).
        std::size_t min1 = 0, min2 = k;
        for (std::size_t c = 1; c < k; ++c) {
            if (a_mat(i, c) < a_mat(i, min1)) {
                min2 = min1;
                min1 = c;
            } else if (min2 == k || a_mat(i, c) < a_mat(i, min2)) {
                min2 = c;
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t bi = (c == min1) ? min2 : min1;
            const double a = a_mat(i, c);
            const double b = a_mat(i, bi);
            const double m = std::max(a, b);
            const double s = m > 0.0 ? (b - a) / m : 0.0;
            out.d_probs(i, c) += inv_n * s;  // direct dependence of sf_i on P[i][c]
            if (m <= 0.0) continue;
            const double w = probs(i, c) * inv_n;
            double ds_da, ds_db;
            if (a >= b) {  // max resolves to a (ties pick the own-cluster term)
                ds_da = -b / (a * a);
                ds_db = 1.0 / a;
            } else {
                ds_da = -1.0 / b;
                ds_db = a / (b * b);
            }
            g_a(i, c) += w * ds_da;
            g_a(i, bi) += w * ds_db;
        }
    }

    // Chain A -> P and A -> d.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            const double g = g_a(i, c);
            if (g == 0.0) continue;
            const double inv_den = 1.0 / den_mat(i, c);
            const double a = a_mat(i, c);
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) {
                    out.d_probs(j, c) += g * (dist(i, j) - a) * inv_den;
                    out.d_dist(i, j) += g * probs(j, c) * inv_den;
                }
            }
        }
    }
    return out;
}

// Mean per-point assignment entropy (natural log), clamped so one-hot rows
// contribute exactly 0.
inline double entropy_regularizer(const Matrix& probs) {
    double total = 0.0;
    for (double p : probs.data) total -= p * std::log(std::max(p, kEpsLog));
    return probs.rows > 0 ? total / static_cast<double>(probs.rows) : 0.0;
}

// Gradient of entropy_regularizer w.r.t. each raw probability entry.
inline Matrix entropy_regularizer_grad(const Matrix& probs) {
    Matrix g(probs.rows, probs.cols);
    const double inv_n = 1.0 / static_cast<double>(probs.rows);
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
        const double p = probs.data[i];
        g.data[i] = p >= kEpsLog ? -(std::log(p) + 1.0) * inv_n
                                 : -std::log(kEpsLog) * inv_n;
    }
    return g;
}

namespace detail {

struct Contingency {
    std::vector<std::vector<long long>> table;  // ka x kb
    std::vector<long long> row_sums, col_sums;
    long long n = 0;
};

inline Contingency contingency_table(const HardPartition& a, const HardPartition& b) {
    if (a.labels.size() != b.labels.size())
        throw std::invalid_argument("partition length mismatch");
    if (a.labels.empty()) throw std::invalid_argument("empty partitions");
    const int ka = std::max(a.k, *std::max_element(a.labels.begin(), a.labels.end()) + 1);
    const int kb = std::max(b.k, *std::max_element(b.labels.begin(), b.labels.end()) + 1);
    Contingency c;
    c.table.assign(ka, std::vector<long long>(kb, 0));
    c.row_sums.assign(ka, 0);
    c.col_sums.assign(kb, 0);
    c.n = static_cast<long long>(a.labels.size());
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        c.table[a.labels[i]][b.labels[i]]++;
        c.row_sums[a.labels[i]]++;
        c.col_sums[b.labels[i]]++;
    }
    return c;
}

inline double entropy_of_counts(const std::vector<long long>& counts, long long n) {
    double h = 0.0;
    for (long long c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(n);
        h -= p * std::log(p);
    }
    return h;
}

inline double pairs2(long long c) { return 0.5 * static_cast<double>(c) * static_cast<double>(c - 1); }

}  // namespace detail

// Normalized mutual information, 2 I(Y,C) / (H(Y) + H(C)), natural logs.
inline double nmi(const HardPartition& truth, const HardPartition& pred) {
    const auto c = detail::contingency_table(truth, pred);
    const double hy = detail::entropy_of_counts(c.row_sums, c.n);
    const double hc = detail::entropy_of_counts(c.col_sums, c.n);
    double mi = 0.0;
    for (std::size_t i = 0; i < c.table.size(); ++i) {
        for (std::size_t j = 0; j < c.table[i].size(); ++j) {
            const long long nij = c.table[i][j];
            if (nij == 0) continue;
            const double pij = static_cast<double>(nij) / static_cast<double>(c.n);
            mi += pij * std::log(static_cast<double>(c.n) * static_cast<double>(nij) /
                                 (static_cast<double>(c.row_sums[i]) *
                                  static_cast<double>(c.col_sums[j])));
        }
    }
    if (hy + hc == 0.0) return 1.0;  // both partitions trivial and identical
    if (mi <= 0.0) return 0.0;
    return 2.0 * mi / (hy + hc);
}

// Hubert-Arabie adjusted Rand index via the pair-counting closed form.
inline double ari(const HardPartition& truth, const HardPartition& pred) {
    const auto c = detail::contingency_table(truth, pred);
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& row : c.table)
        for (long long v : row) sum_ij += detail::pairs2(v);
    for (long long v : c.row_sums) sum_a += detail::pairs2(v);
    for (long long v : c.col_sums) sum_b += detail::pairs2(v);
    const double total_pairs = detail::pairs2(c.n);
    if (total_pairs == 0.0) return 1.0;
    const double expected = sum_a * sum_b / total_pairs;
    const double max_index = 0.5 * (sum_a + sum_b);
    const double denom = max_index - expected;
    if (denom == 0.0) return 1.0;  // both partitions trivial
    return (sum_ij - expected) / denom;
}

inline Matrix pairwise_euclidean(const Matrix& points) {
    const std::size_t n = points.rows;
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = euclidean_distance(points.row(i), points.row(j), points.cols);
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

// One-hot encoding of a hard partition, for soft-hard reduction checks.
inline Matrix one_hot(const HardPartition& part) {
    Matrix p(part.labels.size(), part.k);
    for (std::size_t i = 0; i < part.labels.size(); ++i) p(i, part.labels[i]) = 1.0;
    return p;
}

}  // namespace dcss
