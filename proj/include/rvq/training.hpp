#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rvq/codec.hpp"
#include "rvq/errors.hpp"
#include "rvq/quantizer.hpp"

namespace rvq {

inline constexpr double kBaselineLearningRate = 3e-4;
inline constexpr double kFinetuneLearningRate = 1e-4;
inline constexpr double kDivergenceLossLimit = 1e6;
inline constexpr int kDefaultStepsPerStage = 500;

enum class UpdateScope {
    DownstreamOfL, // freeze encoder and codebook stages before the perturbed one
    All,
};

inline const char* update_scope_name(UpdateScope s) {
    return s == UpdateScope::DownstreamOfL ? "downstream_of_l" : "all";
}

inline UpdateScope update_scope_from_name(const std::string& name) {
    if (name == "downstream_of_l") return UpdateScope::DownstreamOfL;
    if (name == "all") return UpdateScope::All;
    throw ConfigError("unknown update scope '" + name + "'");
}

struct TrainConfig {
    double learning_rate = kBaselineLearningRate;
    int steps = 2000;
    int batch_size = 64;
    std::uint64_t seed = 1;
    QuantizerConfig quantizer;
    UpdateScope update_scope = UpdateScope::DownstreamOfL;
    double dead_code_threshold = kDefaultDeadCodeThreshold;

    void check() const {
        if (!(learning_rate >= 0.0)) throw ConfigError("TrainConfig: learning_rate must be >= 0");
        if (steps < 0) throw ConfigError("TrainConfig: steps must be >= 0");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    }
};

/// Stage visit order for progressive fine-tuning; defaults to last-to-first.
struct ProgressiveSchedule {
    std::vector<int> stage_sequence; // 1-based stage indices
    int steps_per_stage = kDefaultStepsPerStage;

    static ProgressiveSchedule last_to_first(int n_stages, int steps_per_stage) {
        ProgressiveSchedule s;
        s.steps_per_stage = steps_per_stage;
        for (int l = n_stages; l >= 1; --l) s.stage_sequence.push_back(l);
        return s;
    }
};

struct PhaseLog {
    int stage = 0;
    int steps = 0;
    double final_loss = 0.0;
    double eval_mse = 0.0; // deterministic reconstruction MSE after the phase
};

struct TrainReport {
    std::vector<double> loss_trace;
    std::vector<double> per_stage_mse;     // reconstruction MSE using stage prefixes 1..n
    std::vector<double> usage_entropy;     // codeword usage entropy per stage, bits
    std::uint64_t seed = 0;
    std::string update_scope;
    bool diverged = false;
    int divergence_step = -1;
    std::vector<PhaseLog> phases;
    std::vector<int> stage_trace; // perturbed stage per step (0 = none)
    std::uint64_t reseed_total = 0;
};

namespace detail {

struct StepOutcome {
    double loss = 0.0;
    bool diverged = false;
};

/// One SGD + EMA step. `min_trainable_stage` is the first (1-based) codebook
/// stage allowed to move; `train_encoder` gates the encoder weight update.
/// The decoder always trains.
inline StepOutcome train_step(ToyCodec& codec, const std::vector<Vec>& dataset,
                              const TrainConfig& cfg, const QuantizerConfig& qcfg, Rng& data_rng,
                              Rng& forward_rng, Rng& reseed_rng, bool train_encoder,
                              int min_trainable_stage, std::uint64_t* reseed_total) {
    // batch_size covering the dataset selects it whole, in order (full-batch
    // gradient); otherwise items are drawn with replacement.
    std::vector<Vec> batch;
    if (static_cast<std::size_t>(cfg.batch_size) >= dataset.size()) {
        batch = dataset;
    } else {
        batch.resize(static_cast<std::size_t>(cfg.batch_size));
        for (auto& item : batch) item = dataset[data_rng.uniform_int(dataset.size())];
    }

    ForwardResult fwd = forward(codec, batch, qcfg, forward_rng, /*want_grads=*/true);

    const double lr = cfg.learning_rate;
    if (lr > 0.0) {
        if (train_encoder) {
            for (std::size_t i = 0; i < codec.enc_w.data.size(); ++i)
                codec.enc_w.data[i] -= lr * fwd.grads.enc_w.data[i];
            for (std::size_t i = 0; i < codec.enc_b.size(); ++i)
                codec.enc_b[i] -= lr * fwd.grads.enc_b[i];
        }
        for (std::size_t i = 0; i < codec.dec_w.data.size(); ++i)
            codec.dec_w.data[i] -= lr * fwd.grads.dec_w.data[i];
        for (std::size_t i = 0; i < codec.dec_b.size(); ++i)
            codec.dec_b[i] -= lr * fwd.grads.dec_b[i];
    }

    // EMA refit on the indices that were actually selected, sampled or not.
    const std::size_t n_stages = codec.rvq.num_stages();
    for (std::size_t s = 0; s < n_stages; ++s) {
        if (static_cast<int>(s) + 1 < min_trainable_stage) continue;
        std::vector<Vec> stage_inputs(batch.size());
        std::vector<std::uint32_t> assignments(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const QuantizationResult& q = fwd.quantized[b];
            stage_inputs[b] = s == 0 ? fwd.latents[b] : q.residuals[s - 1];
            assignments[b] = q.indices[s];
        }
        codec.rvq.stages[s] = ema_update(std::move(codec.rvq.stages[s]), stage_inputs, assignments);
        Rng stage_rng = reseed_rng.split(s);
        auto [reseeded_cb, n_reseeded] = reseed_dead_codes(
            std::move(codec.rvq.stages[s]), stage_inputs, cfg.dead_code_threshold,
            stage_rng.next_u64());
        codec.rvq.stages[s] = std::move(reseeded_cb);
        if (reseed_total) *reseed_total += n_reseeded;
    }

    StepOutcome out;
    out.loss = fwd.loss.total;
    out.diverged = !std::isfinite(out.loss) || out.loss > kDivergenceLossLimit;
    return out;
}

/// Mean deterministic reconstruction error over a seeded sample of frames.
inline double eval_recon_mse(const ToyCodec& codec, const std::vector<Vec>& dataset,
                             std::uint64_t seed) {
    const std::size_t sample_n = std::min<std::size_t>(dataset.size(), 1024);
    Rng rng = Rng::seeded(seed).split(0xE7A);
    QuantizerConfig det;
    Rng dummy = Rng::seeded(0);
    double total = 0.0;
    for (std::size_t i = 0; i < sample_n; ++i) {
        const Vec& x = dataset[sample_n == dataset.size() ? i : rng.uniform_int(dataset.size())];
        QuantizationResult q = rvq_encode(codec.encode(x), codec.rvq, det, dummy);
        Vec y = codec.decode_latent(q.quantized);
        total += squared_l2(y, x);
    }
    return total / static_cast<double>(sample_n);
}

/// Final-pass statistics for a report: reconstruction MSE through stage
/// prefixes and codeword usage entropy per stage, over a seeded sample.
inline void report_stats(const ToyCodec& codec, const std::vector<Vec>& dataset,
                         std::uint64_t seed, TrainReport& report) {
    const std::size_t n_stages = codec.rvq.num_stages();
    const std::size_t sample_n = std::min<std::size_t>(dataset.size(), 4096);
    Rng rng = Rng::seeded(seed).split(0x57A75);
    std::vector<std::vector<std::uint64_t>> usage(
        n_stages, std::vector<std::uint64_t>(codec.rvq.stages[0].size(), 0));
    std::vector<double> mse(n_stages, 0.0);
    QuantizerConfig det;
    det.mode = SelectionMode::Deterministic;
    Rng dummy = Rng::seeded(0);
    for (std::size_t i = 0; i < sample_n; ++i) {
        const Vec& x = dataset[sample_n == dataset.size() ? i : rng.uniform_int(dataset.size())];
        Vec z = codec.encode(x);
        QuantizationResult q = rvq_encode(z, codec.rvq, det, dummy);
        Vec partial(z.size(), 0.0);
        for (std::size_t s = 0; s < n_stages; ++s) {
            usage[s][q.indices[s]] += 1;
            add_in_place(partial, codec.rvq.stages[s].entries[q.indices[s]]);
            Vec y = codec.decode_latent(partial);
            double e = 0.0;
            for (std::size_t d = 0; d < x.size(); ++d) e += (y[d] - x[d]) * (y[d] - x[d]);
            mse[s] += e / static_cast<double>(x.size());
        }
    }
    report.per_stage_mse.resize(n_stages);
    report.usage_entropy.resize(n_stages);
    for (std::size_t s = 0; s < n_stages; ++s) {
        report.per_stage_mse[s] = mse[s] / static_cast<double>(sample_n);
        double h = 0.0;
        for (std::uint64_t c : usage[s]) {
            if (c == 0) continue;
            double p = static_cast<double>(c) / static_cast<double>(sample_n);
            h -= p * std::log2(p);
        }
        report.usage_entropy[s] = h;
    }
}

} // namespace detail

/// Baseline training with the conventional nearest-codeword rule: SGD on the
/// affine weights, EMA refit of every codebook stage. Aborts (with the
/// partial trace flagged) if the loss diverges.
inline std::pair<ToyCodec, TrainReport> train_baseline(ToyCodec codec,
                                                       const std::vector<Vec>& dataset,
                                                       const TrainConfig& cfg) {
    cfg.check();
    codec.check();
    if (cfg.quantizer.mode != SelectionMode::Deterministic)
        throw ConfigError("train_baseline: quantizer mode must be Deterministic");
    if (dataset.empty()) throw ConfigError("train_baseline: empty dataset");

    TrainReport report;
    report.seed = cfg.seed;
    report.update_scope = update_scope_name(cfg.update_scope);
    Rng root = Rng::seeded(cfg.seed);
    Rng data_rng = root.split(1);
    Rng forward_rng = root.split(2);

    for (int step = 0; step < cfg.steps; ++step) {
        Rng step_data = data_rng.split(static_cast<std::uint64_t>(step));
        Rng step_fwd = forward_rng.split(static_cast<std::uint64_t>(step));
        Rng step_reseed = root.split(3).split(static_cast<std::uint64_t>(step));
        detail::StepOutcome o =
            detail::train_step(codec, dataset, cfg, cfg.quantizer, step_data, step_fwd,
                               step_reseed, /*train_encoder=*/true,
                               /*min_trainable_stage=*/1, &report.reseed_total);
        report.loss_trace.push_back(o.loss);
        report.stage_trace.push_back(0);
        if (o.diverged) {
            report.diverged = true;
            report.divergence_step = step;
            break;
        }
    }
    detail::report_stats(codec, dataset, cfg.seed, report);
    return {std::move(codec), std::move(report)};
}

/// Progressive fine-tuning: visit the schedule's stages in order (by default
/// N down to 1), running `steps_per_stage` steps with that stage sampled
/// probabilistically and every other stage deterministic. With
/// UpdateScope::DownstreamOfL the encoder and the codebooks before the
/// perturbed stage are frozen for the phase; with All everything trains.
inline std::pair<ToyCodec, TrainReport> progressive_finetune(ToyCodec codec,
                                                             const std::vector<Vec>& dataset,
                                                             const ProgressiveSchedule& schedule,
                                                             const TrainConfig& cfg) {
    cfg.check();
    codec.check();
    if (cfg.quantizer.mode != SelectionMode::ProbabilisticTopK)
        throw ConfigError("progressive_finetune: quantizer mode must be ProbabilisticTopK");
    if (dataset.empty()) throw ConfigError("progressive_finetune: empty dataset");
    if (schedule.steps_per_stage < 0)
        throw ConfigError("progressive_finetune: steps_per_stage must be >= 0");
    const int n_stages = static_cast<int>(codec.rvq.num_stages());
    if (schedule.stage_sequence.empty())
        throw ConfigError("progressive_finetune: empty stage sequence");
    for (int l : schedule.stage_sequence)
        if (l < 1 || l > n_stages)
            throw ConfigError("progressive_finetune: stage " + std::to_string(l) +
                              " outside [1, " + std::to_string(n_stages) + "]");

    TrainReport report;
    report.seed = cfg.seed;
    report.update_scope = update_scope_name(cfg.update_scope);
    Rng root = Rng::seeded(cfg.seed);

    int global_step = 0;
    for (std::size_t phase = 0; phase < schedule.stage_sequence.size(); ++phase) {
        const int l = schedule.stage_sequence[phase];
        QuantizerConfig qcfg = cfg.quantizer;
        qcfg.perturbed_stage = l;
        validate_config(qcfg, codec.rvq);
        const bool train_encoder = cfg.update_scope == UpdateScope::All;
        const int min_stage = cfg.update_scope == UpdateScope::All ? 1 : l;

        PhaseLog log;
        log.stage = l;
        for (int step = 0; step < schedule.steps_per_stage; ++step, ++global_step) {
            Rng step_data = root.split(1).split(static_cast<std::uint64_t>(global_step));
            Rng step_fwd = root.split(2).split(static_cast<std::uint64_t>(global_step));
            Rng step_reseed = root.split(3).split(static_cast<std::uint64_t>(global_step));
            detail::StepOutcome o =
                detail::train_step(codec, dataset, cfg, qcfg, step_data, step_fwd, step_reseed,
                                   train_encoder, min_stage, &report.reseed_total);
            report.loss_trace.push_back(o.loss);
            report.stage_trace.push_back(l);
            log.steps += 1;
            log.final_loss = o.loss;
            if (o.diverged) {
                report.diverged = true;
                report.divergence_step = global_step;
                log.eval_mse = detail::eval_recon_mse(codec, dataset, cfg.seed);
                report.phases.push_back(log);
                detail::report_stats(codec, dataset, cfg.seed, report);
                return {std::move(codec), std::move(report)};
            }
        }
        log.eval_mse = detail::eval_recon_mse(codec, dataset, cfg.seed);
        report.phases.push_back(log);
    }
    detail::report_stats(codec, dataset, cfg.seed, report);
    return {std::move(codec), std::move(report)};
}

/// Mean reconstruction MSE when inference is forced to sample: every draw
/// perturbs one uniformly chosen stage of the cascade and re-encodes the
/// whole batch. Isolates how gracefully the decoder absorbs codeword-level
/// substitutions. Deterministic per seed.
inline double perturbation_stress(const ToyCodec& codec, const std::vector<Vec>& batch, int k,
                                  double temperature, int draws, std::uint64_t seed) {
    codec.check();
    if (draws < 1) throw ConfigError("perturbation_stress: draws must be >= 1");
    if (batch.empty()) throw ConfigError("perturbation_stress: empty batch");
    const int n_stages = static_cast<int>(codec.rvq.num_stages());
    Rng root = Rng::seeded(seed);
    double total = 0.0;
    for (int d = 0; d < draws; ++d) {
        Rng draw_rng = root.split(static_cast<std::uint64_t>(d));
        QuantizerConfig qcfg;
        qcfg.mode = SelectionMode::ProbabilisticTopK;
        qcfg.k = k;
        qcfg.temperature = temperature;
        qcfg.perturbed_stage = 1 + static_cast<int>(draw_rng.uniform_int(
                                       static_cast<std::uint64_t>(n_stages)));
        ForwardResult fwd = forward(codec, batch, qcfg, draw_rng, /*want_grads=*/false);
        total += fwd.loss.reconstruction;
    }
    return total / static_cast<double>(draws);
}

} // namespace rvq
