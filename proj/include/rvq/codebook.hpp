#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rvq/errors.hpp"
#include "rvq/math.hpp"
#include "rvq/rng.hpp"

namespace rvq {

inline constexpr double kDefaultEmaDecay = 0.99;
inline constexpr double kEmaEpsilon = 1e-5;
inline constexpr double kDefaultDeadCodeThreshold = 1e-2;
inline constexpr int kDefaultKmeansIters = 50;

/// One vector-quantizer codebook: M code vectors of dimension `dim` plus the
/// moving-average state used to refit them during training. Entry indices are
/// 0-based and stable across updates.
struct Codebook {
    std::size_t dim = 0;
    std::vector<Vec> entries;
    std::vector<double> ema_counts;
    std::vector<Vec> ema_sums;
    double decay = kDefaultEmaDecay;

    std::size_t size() const { return entries.size(); }

    bool operator==(const Codebook&) const = default;
};

struct KMeansStats {
    int iterations = 0;
    /// Sum of squared distances to the nearest centroid after each Lloyd
    /// iteration (index 0 is the error right after seeding).
    std::vector<double> inertia;
    bool converged = false;
};

namespace detail {

inline void check_features(const std::vector<Vec>& features) {
    if (features.empty()) throw ConfigError("codebook: empty feature list");
    std::size_t dim = features.front().size();
    for (const Vec& f : features) {
        if (f.size() != dim)
            throw ConfigError("codebook: inconsistent feature dimensions (" +
                              std::to_string(f.size()) + " vs " + std::to_string(dim) + ")");
        if (!all_finite(f)) throw ConfigError("codebook: non-finite feature value");
    }
}

inline std::size_t count_distinct(std::vector<Vec> features) {
    std::sort(features.begin(), features.end());
    return static_cast<std::size_t>(
        std::distance(features.begin(), std::unique(features.begin(), features.end())));
}

/// Index of the centroid nearest to `f`; ties break toward the lowest index.
inline std::size_t nearest_centroid(const Vec& f, const std::vector<Vec>& centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centroids.size(); ++j) {
        double d = squared_l2(f, centroids[j]);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

} // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Runs until the assignment
/// reaches a fixpoint or `max_iters` passes, whichever comes first. The
/// result is a deterministic function of (features, m, max_iters, seed).
/// Clusters that lose all members keep their previous centroid.
inline Codebook init_kmeans(const std::vector<Vec>& features, std::size_t m,
                            int max_iters, std::uint64_t seed,
                            KMeansStats* stats = nullptr) {
    detail::check_features(features);
    if (m < 1) throw ConfigError("init_kmeans: M must be >= 1");
    if (max_iters < 1) throw ConfigError("init_kmeans: max_iters must be >= 1");
    if (m > features.size() || m > detail::count_distinct(features))
        throw ConfigError("init_kmeans: M (" + std::to_string(m) +
                          ") exceeds the number of distinct feature vectors");

    const std::size_t n = features.size();
    const std::size_t dim = features.front().size();
    Rng rng = Rng::seeded(seed);

    // k-means++ seeding: first center uniform, the rest proportional to the
    // squared distance to the closest center chosen so far.
    std::vector<Vec> centroids;
    centroids.reserve(m);
    centroids.push_back(features[rng.uniform_int(n)]);
    std::vector<double> dist2(n);
    while (centroids.size() < m) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = squared_l2(features[i], centroids.back());
            if (centroids.size() == 1 || d < dist2[i]) dist2[i] = d;
            total += dist2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dist2[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
            // Skip duplicates of existing centers (zero remaining distance).
            while (dist2[pick] == 0.0) pick = (pick + 1) % n;
        } else {
            pick = rng.uniform_int(n);
        }
        centroids.push_back(features[pick]);
    }

    std::vector<std::size_t> assign(n, 0);
    std::vector<std::size_t> counts(m, 0);
    auto inertia_of = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += squared_l2(features[i], centroids[assign[i]]);
        return s;
    };

    for (std::size_t i = 0; i < n; ++i) assign[i] = detail::nearest_centroid(features[i], centroids);
    if (stats) {
        stats->inertia.clear();
        stats->inertia.push_back(inertia_of());
        stats->converged = false;
    }

    int it = 0;
    for (; it < max_iters; ++it) {
        // Means of the current assignment.
        std::vector<Vec> sums(m, Vec(dim, 0.0));
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            add_in_place(sums[assign[i]], features[i]);
            counts[assign[i]]++;
        }
        for (std::size_t j = 0; j < m; ++j) {
            if (counts[j] == 0) continue;
            for (std::size_t d = 0; d < dim; ++d)
                centroids[j][d] = sums[j][d] / static_cast<double>(counts[j]);
        }

        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t a = detail::nearest_centroid(features[i], centroids);
            if (a != assign[i]) {
                assign[i] = a;
                changed = true;
            }
        }
        if (stats) stats->inertia.push_back(inertia_of());
        if (!changed) {
            if (stats) stats->converged = true;
            ++it;
            break;
        }
    }
    if (stats) stats->iterations = it;

    Codebook cb;
    cb.dim = dim;
    cb.entries = std::move(centroids);
    cb.ema_counts.resize(m);
    cb.ema_sums.assign(m, Vec(dim, 0.0));
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) counts[assign[i]]++;
    for (std::size_t j = 0; j < m; ++j) {
        cb.ema_counts[j] = static_cast<double>(counts[j]);
        for (std::size_t d = 0; d < dim; ++d)
            cb.ema_sums[j][d] = cb.entries[j][d] * cb.ema_counts[j];
    }
    return cb;
}

/// One exponential-moving-average refit step.
///
/// For every entry i with batch count n_i and batch feature sum s_i:
///   ema_counts[i] <- decay * ema_counts[i] + (1 - decay) * n_i
///   ema_sums[i]   <- decay * ema_sums[i]   + (1 - decay) * s_i
/// Entries that received data are re-normalized to
/// ema_sums[i] / max(ema_counts[i], kEmaEpsilon); entries with no data this
/// batch keep their value while their accumulators decay.
inline Codebook ema_update(Codebook cb, const std::vector<Vec>& features,
                           const std::vector<std::uint32_t>& assignments) {
    if (features.size() != assignments.size())
        throw ConfigError("ema_update: features and assignments differ in length");
    const std::size_t m = cb.size();
    std::vector<double> batch_counts(m, 0.0);
    std::vector<Vec> batch_sums(m, Vec(cb.dim, 0.0));
    for (std::size_t i = 0; i < features.size(); ++i) {
        std::uint32_t j = assignments[i];
        if (j >= m) throw ConfigError("ema_update: assignment index " + std::to_string(j) +
                                      " out of range for codebook of size " + std::to_string(m));
        if (features[i].size() != cb.dim)
            throw ConfigError("ema_update: feature dimension mismatch");
        batch_counts[j] += 1.0;
        add_in_place(batch_sums[j], features[i]);
    }
    for (std::size_t j = 0; j < m; ++j) {
        cb.ema_counts[j] = cb.decay * cb.ema_counts[j] + (1.0 - cb.decay) * batch_counts[j];
        for (std::size_t d = 0; d < cb.dim; ++d)
            cb.ema_sums[j][d] = cb.decay * cb.ema_sums[j][d] + (1.0 - cb.decay) * batch_sums[j][d];
        if (batch_counts[j] > 0.0) {
            double denom = std::max(cb.ema_counts[j], kEmaEpsilon);
            for (std::size_t d = 0; d < cb.dim; ++d) cb.entries[j][d] = cb.ema_sums[j][d] / denom;
        }
    }
    return cb;
}

/// Replace entries whose usage dropped below `threshold` with features drawn
/// (seeded) from the batch. Returns the updated codebook and how many entries
/// were reseeded.
inline std::pair<Codebook, std::size_t> reseed_dead_codes(Codebook cb,
                                                          const std::vector<Vec>& features,
                                                          double threshold,
                                                          std::uint64_t seed) {
    if (threshold < 0.0) throw ConfigError("reseed_dead_codes: threshold must be >= 0");
    std::size_t dead = 0;
    for (double c : cb.ema_counts)
        if (c < threshold) ++dead;
    if (dead == 0) return {std::move(cb), 0};
    if (features.empty())
        throw ConfigError("reseed_dead_codes: empty feature batch while dead codes exist");

    Rng rng = Rng::seeded(seed);
    std::size_t reseeded = 0;
    for (std::size_t j = 0; j < cb.size(); ++j) {
        if (cb.ema_counts[j] >= threshold) continue;
        const Vec& f = features[rng.uniform_int(features.size())];
        if (f.size() != cb.dim) throw ConfigError("reseed_dead_codes: feature dimension mismatch");
        cb.entries[j] = f;
        cb.ema_counts[j] = 1.0;
        cb.ema_sums[j] = f;
        ++reseeded;
    }
    return {std::move(cb), reseeded};
}

} // namespace rvq
