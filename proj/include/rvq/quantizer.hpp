#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rvq/codebook.hpp"
#include "rvq/errors.hpp"
#include "rvq/math.hpp"
#include "rvq/rng.hpp"

namespace rvq {

inline constexpr int kDefaultTopK = 10;
inline constexpr double kDefaultTemperature = 5.0;

enum class SelectionMode {
    Deterministic,    // always the nearest codeword
    ProbabilisticTopK // one stage samples from its top-K neighborhood
};

/// How codewords are selected during encoding. `perturbed_stage` is 1-based
/// and names the single stage that samples instead of taking the nearest
/// codeword; it must be set iff mode is ProbabilisticTopK. Exactly one stage
/// is ever perturbed per forward pass.
struct QuantizerConfig {
    SelectionMode mode = SelectionMode::Deterministic;
    int k = kDefaultTopK;
    double temperature = kDefaultTemperature;
    std::optional<int> perturbed_stage;
};

struct Candidate {
    std::uint32_t index = 0;
    double distance = 0.0; // Euclidean, not squared
};

/// Candidates sorted ascending by distance, ties broken toward the lower
/// index. Element 0 is the nearest codeword.
using CandidateList = std::vector<Candidate>;

/// N-stage residual quantizer; every stage shares the feature dimension.
struct ResidualQuantizer {
    std::vector<Codebook> stages;

    std::size_t num_stages() const { return stages.size(); }
    std::size_t dim() const { return stages.empty() ? 0 : stages.front().dim; }

    void check() const {
        if (stages.empty()) throw ConfigError("ResidualQuantizer: needs at least one stage");
        for (const Codebook& cb : stages) {
            if (cb.dim != dim()) throw ConfigError("ResidualQuantizer: stages disagree on dimension");
            if (cb.size() == 0) throw ConfigError("ResidualQuantizer: empty codebook stage");
        }
    }

    bool operator==(const ResidualQuantizer&) const = default;
};

/// Outcome of encoding one vector. `indices[n]` is the codeword chosen at
/// stage n, `residuals[n]` the residual left after stage n, and `quantized`
/// the sum of the selected code vectors. `sampled_stage` is set (1-based)
/// when a stage was probabilistically perturbed.
struct QuantizationResult {
    std::vector<std::uint32_t> indices;
    Vec quantized;
    std::vector<Vec> residuals;
    std::optional<int> sampled_stage;
};

namespace detail {

inline void check_query(const Vec& z, const Codebook& cb, const char* who) {
    if (z.size() != cb.dim)
        throw ConfigError(std::string(who) + ": query dimension " + std::to_string(z.size()) +
                          " does not match codebook dimension " + std::to_string(cb.dim));
    if (!all_finite(z)) throw ConfigError(std::string(who) + ": non-finite query vector");
}

} // namespace detail

/// Nearest codeword by Euclidean distance, lowest index on ties.
inline Candidate nearest_codeword(const Vec& z, const Codebook& cb) {
    detail::check_query(z, cb, "nearest_codeword");
    Candidate best{0, std::sqrt(squared_l2(z, cb.entries[0]))};
    for (std::uint32_t j = 1; j < cb.size(); ++j) {
        double d = std::sqrt(squared_l2(z, cb.entries[j]));
        if (d < best.distance) best = Candidate{j, d};
    }
    return best;
}

/// The min(k, M) nearest codewords, sorted ascending by distance with
/// lowest-index tie-break. k larger than the codebook is clamped to M.
inline CandidateList top_k_candidates(const Vec& z, const Codebook& cb, int k) {
    detail::check_query(z, cb, "top_k_candidates");
    if (k < 1) throw ConfigError("top_k_candidates: k must be >= 1");
    const std::size_t m = cb.size();
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), m);

    CandidateList all(m);
    for (std::uint32_t j = 0; j < m; ++j)
        all[j] = Candidate{j, std::sqrt(squared_l2(z, cb.entries[j]))};
    auto cmp = [](const Candidate& a, const Candidate& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.index < b.index;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kk), all.end(), cmp);
    all.resize(kk);
    return all;
}

/// Distance-weighted sampling probabilities over a candidate list:
///   P_i = exp(-d_i / tau) / sum_j exp(-d_j / tau)
/// The minimum distance is subtracted before exponentiation so the softmax is
/// stable for any distance scale. Output order matches the candidate order.
inline std::vector<double> sampling_distribution(const CandidateList& candidates,
                                                 double temperature) {
    if (candidates.empty()) throw ConfigError("sampling_distribution: empty candidate list");
    if (!(temperature > 0.0)) throw ConfigError("sampling_distribution: temperature must be > 0");
    double dmin = candidates.front().distance;
    for (const Candidate& c : candidates) dmin = std::min(dmin, c.distance);
    std::vector<double> p(candidates.size());
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        p[i] = std::exp(-(candidates[i].distance - dmin) / temperature);
        total += p[i];
    }
    for (double& v : p) v /= total;
    return p;
}

/// Categorical draw over the candidate order via inverse CDF. Advances `rng`.
inline std::uint32_t sample_codeword(const std::vector<double>& dist,
                                     const CandidateList& candidates, Rng& rng) {
    if (dist.size() != candidates.size())
        throw ConfigError("sample_codeword: distribution and candidate list differ in length");
    if (dist.empty()) throw ConfigError("sample_codeword: empty distribution");
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        acc += dist[i];
        if (u < acc) return candidates[i].index;
    }
    return candidates.back().index;
}

/// Collect warnings for a (config, quantizer) pair. A config asking for more
/// candidates than a stage holds is usable (k clamps to the stage size) but
/// worth flagging.
inline std::vector<std::string> validate_config(const QuantizerConfig& cfg,
                                                const ResidualQuantizer& rvq) {
    rvq.check();
    if (cfg.k < 1) throw ConfigError("QuantizerConfig: k must be >= 1");
    if (!(cfg.temperature > 0.0)) throw ConfigError("QuantizerConfig: temperature must be > 0");
    const int n = static_cast<int>(rvq.num_stages());
    if (cfg.mode == SelectionMode::ProbabilisticTopK) {
        if (!cfg.perturbed_stage)
            throw ConfigError("QuantizerConfig: probabilistic mode requires perturbed_stage");
        if (*cfg.perturbed_stage < 1 || *cfg.perturbed_stage > n)
            throw ConfigError("QuantizerConfig: perturbed_stage " +
                              std::to_string(*cfg.perturbed_stage) + " outside [1, " +
                              std::to_string(n) + "]");
    } else if (cfg.perturbed_stage) {
        throw ConfigError("QuantizerConfig: perturbed_stage is only valid in probabilistic mode");
    }
    std::vector<std::string> warnings;
    for (std::size_t s = 0; s < rvq.num_stages(); ++s) {
        if (static_cast<std::size_t>(cfg.k) > rvq.stages[s].size())
            warnings.push_back("stage " + std::to_string(s + 1) + ": k=" + std::to_string(cfg.k) +
                               " exceeds codebook size " + std::to_string(rvq.stages[s].size()) +
                               ", clamping");
    }
    return warnings;
}

/// Encode one vector through the cascade. Stage n quantizes the residual of
/// stages 1..n-1; in probabilistic mode the single stage named by
/// `perturbed_stage` samples from its top-K neighborhood and every other
/// stage takes the nearest codeword. The sampled codeword feeds the residual
/// recursion exactly like a deterministic pick. Deterministic mode never
/// touches `rng`.
inline QuantizationResult rvq_encode(const Vec& z, const ResidualQuantizer& rvq,
                                     const QuantizerConfig& cfg, Rng& rng) {
    rvq.check();
    if (z.size() != rvq.dim())
        throw ConfigError("rvq_encode: input dimension " + std::to_string(z.size()) +
                          " does not match quantizer dimension " + std::to_string(rvq.dim()));
    const int n_stages = static_cast<int>(rvq.num_stages());
    int perturbed = 0;
    if (cfg.mode == SelectionMode::ProbabilisticTopK) {
        if (!cfg.perturbed_stage || *cfg.perturbed_stage < 1 || *cfg.perturbed_stage > n_stages)
            throw ConfigError("rvq_encode: perturbed_stage must lie in [1, " +
                              std::to_string(n_stages) + "]");
        perturbed = *cfg.perturbed_stage;
    }

    QuantizationResult out;
    out.indices.reserve(rvq.num_stages());
    out.residuals.reserve(rvq.num_stages());
    out.quantized.assign(z.size(), 0.0);
    Vec residual = z;
    for (int n = 1; n <= n_stages; ++n) {
        const Codebook& cb = rvq.stages[static_cast<std::size_t>(n - 1)];
        std::uint32_t pick;
        if (n == perturbed) {
            CandidateList cands = top_k_candidates(residual, cb, cfg.k);
            std::vector<double> dist = sampling_distribution(cands, cfg.temperature);
            pick = sample_codeword(dist, cands, rng);
            out.sampled_stage = n;
        } else {
            pick = nearest_codeword(residual, cb).index;
        }
        const Vec& code = cb.entries[pick];
        add_in_place(out.quantized, code);
        sub_in_place(residual, code);
        out.indices.push_back(pick);
        out.residuals.push_back(residual);
    }
    return out;
}

/// Sum the code vectors named by one index per stage.
inline Vec rvq_decode(const std::vector<std::uint32_t>& indices, const ResidualQuantizer& rvq) {
    rvq.check();
    if (indices.size() != rvq.num_stages())
        throw ConfigError("rvq_decode: expected " + std::to_string(rvq.num_stages()) +
                          " indices, got " + std::to_string(indices.size()));
    Vec out(rvq.dim(), 0.0);
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const Codebook& cb = rvq.stages[n];
        if (indices[n] >= cb.size())
            throw ConfigError("rvq_decode: index " + std::to_string(indices[n]) +
                              " out of range at stage " + std::to_string(n + 1));
        add_in_place(out, cb.entries[indices[n]]);
    }
    return out;
}

} // namespace rvq
