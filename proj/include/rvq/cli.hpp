#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvq/analysis.hpp"
#include "rvq/audio.hpp"
#include "rvq/codec.hpp"
#include "rvq/errors.hpp"
#include "rvq/manifest.hpp"
#include "rvq/parallel.hpp"
#include "rvq/quantizer.hpp"
#include "rvq/reports.hpp"
#include "rvq/serialize.hpp"
#include "rvq/training.hpp"

namespace rvq::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitIo = 4;

/// Built-in experiment defaults; a --config file and command-line flags are
/// merged over this. Six stages of 64 codewords over 32-sample frames keeps
/// a full train/finetune/eval cycle in CPU minutes.
inline json default_config() {
    return json{
        {"sample_rate", 16000},
        {"frame_len", 32},
        {"latent_dim", 8},
        {"stages", 6},
        {"codebook_size", 64},
        {"commitment_beta", kDefaultCommitmentBeta},
        {"seed", 1},
        {"gen",
         {{"clean_count", 120},
          {"eval_count", 24},
          {"noise_count", 4},
          {"clean_duration_s", 0.5},
          {"noise_duration_s", 1.5},
          {"f0_min", 120.0},
          {"f0_max", 420.0},
          {"amplitude_min", 0.35},
          {"amplitude_max", 0.7}}},
        // 3:1 baseline/finetune learning-rate split, scaled for plain SGD.
        {"train",
         {{"learning_rate", 3e-3},
          {"steps", 10000},
          {"batch_size", 64},
          {"manifest", "data/train.jsonl"}}},
        {"finetune",
         {{"learning_rate", 1e-3},
          {"steps_per_stage", 1000},
          {"batch_size", 64},
          {"k", kDefaultTopK},
          {"temperature", kDefaultTemperature},
          {"update_scope", "downstream_of_l"},
          {"checkpoint", ""},
          {"manifest", "data/train.jsonl"}}},
        {"analysis",
         {{"snr_db", 15.0},
          {"k_max", kDefaultShiftKMax},
          {"checkpoint", ""},
          {"manifest", "data/eval.jsonl"},
          {"noise_manifest", ""}}},
        {"eval",
         {{"snrs_db", json::array({15.0, 10.0})},
          {"stress_draws", 200},
          {"stress_frames", 512},
          {"stress_k", kDefaultTopK},
          {"stress_temperature", kDefaultTemperature},
          {"checkpoint", ""},
          {"baseline_checkpoint", ""},
          {"manifest", "data/eval.jsonl"}}},
        {"encode", {{"checkpoint", ""}, {"input", ""}}},
        {"decode", {{"checkpoint", ""}, {"tokens", ""}}},
    };
}

inline json deep_merge(json base, const json& over) {
    if (!base.is_object() || !over.is_object()) return over;
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (base.contains(it.key()))
            base[it.key()] = deep_merge(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
    return base;
}

struct GlobalOptions {
    std::string config_path;
    std::optional<std::int64_t> seed;
    std::string out_dir = "out";
    int threads = 1;
};

inline json effective_config(const GlobalOptions& g) {
    json cfg = default_config();
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw IoError("cannot open config file " + g.config_path);
        json user;
        try {
            user = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file " + g.config_path + ": " + e.what());
        }
        cfg = deep_merge(cfg, user);
    }
    if (g.seed) cfg["seed"] = *g.seed;
    return cfg;
}

namespace detail {

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

/// The snapshot is the effective config; outputs are addressed by --out at
/// invocation time and deliberately not recorded, so a rerun from the
/// snapshot into any directory is byte-identical.
inline void write_config_snapshot(const json& cfg, const fs::path& out_dir) {
    write_text(out_dir / "config.json", cfg.dump(2) + "\n");
}

inline std::uint64_t config_seed(const json& cfg) {
    return static_cast<std::uint64_t>(cfg.at("seed").get<std::int64_t>());
}

inline double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

/// Frames of every clean entry in manifest order, concatenated.
inline std::vector<Vec> dataset_frames(const DatasetManifest& manifest, int sample_rate,
                                       std::size_t frame_len) {
    std::vector<Vec> frames;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        if (manifest.entries[i].role != EntryRole::Clean) continue;
        AudioSignal sig = materialize_entry(manifest, i, sample_rate);
        std::vector<Vec> f = frame_features(sig, frame_len, frame_len);
        frames.insert(frames.end(), std::make_move_iterator(f.begin()),
                      std::make_move_iterator(f.end()));
    }
    if (frames.empty()) throw ConfigError("dataset has no usable clean frames");
    return frames;
}

inline std::vector<Vec> seeded_subsample(const std::vector<Vec>& frames, std::size_t limit,
                                         std::uint64_t seed) {
    if (frames.size() <= limit) return frames;
    Rng rng = Rng::seeded(seed);
    std::vector<Vec> out;
    out.reserve(limit);
    for (std::size_t i = 0; i < limit; ++i) out.push_back(frames[rng.uniform_int(frames.size())]);
    return out;
}

struct LoadedCheckpoint {
    Checkpoint ckpt;
    int sample_rate = 0;
    std::size_t frame_len = 0;
};

/// A checkpoint's own snapshot is authoritative for the framing and rate it
/// was trained with.
inline LoadedCheckpoint load_checkpoint_with_framing(const std::string& path) {
    LoadedCheckpoint lc;
    lc.ckpt = load_checkpoint(path);
    const json& snap = lc.ckpt.config_snapshot;
    if (!snap.contains("sample_rate") || !snap.contains("frame_len"))
        throw ConfigError(path + ": checkpoint snapshot lacks sample_rate/frame_len");
    lc.sample_rate = snap.at("sample_rate").get<int>();
    lc.frame_len = snap.at("frame_len").get<std::size_t>();
    if (lc.frame_len != lc.ckpt.codec.input_dim())
        throw ConfigError(path + ": snapshot frame_len disagrees with codec input dimension");
    return lc;
}

/// Deterministic full-signal round trip through the codec; output covers the
/// whole-frame prefix of the input.
inline AudioSignal codec_round_trip(const ToyCodec& codec, const AudioSignal& input,
                                    std::size_t frame_len) {
    std::vector<Vec> frames = frame_features(input, frame_len, frame_len);
    QuantizerConfig det;
    Rng dummy = Rng::seeded(0);
    AudioSignal out;
    out.sample_rate = input.sample_rate;
    out.samples.reserve(frames.size() * frame_len);
    for (const Vec& frame : frames) {
        QuantizationResult q = rvq_encode(codec.encode(frame), codec.rvq, det, dummy);
        Vec y = codec.decode_latent(q.quantized);
        out.samples.insert(out.samples.end(), y.begin(), y.end());
    }
    return out;
}

inline AudioSignal truncate_to(const AudioSignal& sig, std::size_t n) {
    AudioSignal out;
    out.sample_rate = sig.sample_rate;
    out.samples.assign(sig.samples.begin(), sig.samples.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// gen-data

inline int cmd_gen_data(const json& cfg, const GlobalOptions& g) {
    const json& gen = cfg.at("gen");
    const int sample_rate = cfg.at("sample_rate").get<int>();
    const std::size_t clean_count = gen.at("clean_count").get<std::size_t>();
    const std::size_t eval_count = gen.at("eval_count").get<std::size_t>();
    const std::size_t noise_count = gen.at("noise_count").get<std::size_t>();
    if (clean_count == 0) throw ConfigError("gen-data: clean_count must be >= 1");
    if (noise_count == 0) throw ConfigError("gen-data: noise_count must be >= 1");
    const double clean_dur = gen.at("clean_duration_s").get<double>();
    const double noise_dur = gen.at("noise_duration_s").get<double>();
    if (noise_dur < clean_dur)
        throw ConfigError("gen-data: noise_duration_s must cover clean_duration_s");

    const fs::path out_dir(g.out_dir);
    detail::ensure_dir(out_dir / "wav");
    const std::uint64_t seed = detail::config_seed(cfg);

    auto tone_spec = [&](Rng& rng) {
        GeneratorSpec spec;
        spec.kind = GeneratorKind::HarmonicTone;
        spec.duration_s = clean_dur;
        spec.f0 = detail::uniform_in(rng, gen.at("f0_min").get<double>(),
                                     gen.at("f0_max").get<double>());
        spec.amplitude = detail::uniform_in(rng, gen.at("amplitude_min").get<double>(),
                                            gen.at("amplitude_max").get<double>());
        return spec;
    };

    auto emit_set = [&](const std::string& prefix, std::uint64_t tag, std::size_t count,
                        std::vector<json>& lines) {
        for (std::size_t i = 0; i < count; ++i) {
            Rng rng = Rng::seeded(seed).split(tag).split(i);
            GeneratorSpec spec = tone_spec(rng);
            AudioSignal sig = generate(spec, sample_rate, rng.next_u64());
            char name[64];
            std::snprintf(name, sizeof name, "%s_%03zu.wav", prefix.c_str(), i);
            write_wav(sig, (out_dir / "wav" / name).string());
            lines.push_back({{"id", std::string(name, std::strlen(name) - 4)},
                             {"role", "clean"},
                             {"path", std::string("wav/") + name}});
        }
    };

    std::vector<json> train_lines, eval_lines, noise_lines;
    emit_set("clean", 1, clean_count, train_lines);
    emit_set("eval", 2, eval_count, eval_lines);
    for (std::size_t i = 0; i < noise_count; ++i) {
        Rng rng = Rng::seeded(seed).split(3).split(i);
        GeneratorSpec spec;
        spec.kind = i % 2 == 0 ? GeneratorKind::WhiteNoise : GeneratorKind::PinkNoise;
        spec.duration_s = noise_dur;
        spec.amplitude = 0.5;
        AudioSignal sig = generate(spec, sample_rate, rng.next_u64());
        char name[64];
        std::snprintf(name, sizeof name, "noise_%03zu.wav", i);
        write_wav(sig, (out_dir / "wav" / name).string());
        noise_lines.push_back({{"id", std::string(name, std::strlen(name) - 4)},
                               {"role", "noise"},
                               {"path", std::string("wav/") + name}});
    }

    auto write_manifest = [&](const std::string& file, const std::vector<json>& clean_part) {
        std::string text;
        for (const json& line : clean_part) text += line.dump() + "\n";
        for (const json& line : noise_lines) text += line.dump() + "\n";
        detail::write_text(out_dir / file, text);
    };
    write_manifest("train.jsonl", train_lines);
    write_manifest("eval.jsonl", eval_lines);
    detail::write_config_snapshot(cfg, out_dir);
    std::cout << "gen-data: wrote " << clean_count << " clean + " << eval_count << " eval + "
              << noise_count << " noise signals under " << out_dir.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const json& cfg, const GlobalOptions& g) {
    const json& tr = cfg.at("train");
    const int sample_rate = cfg.at("sample_rate").get<int>();
    const std::size_t frame_len = cfg.at("frame_len").get<std::size_t>();
    const std::uint64_t seed = detail::config_seed(cfg);

    DatasetManifest manifest = load_manifest(tr.at("manifest").get<std::string>(), seed);
    std::vector<Vec> dataset = detail::dataset_frames(manifest, sample_rate, frame_len);

    std::vector<Vec> init_sample = detail::seeded_subsample(dataset, 4096, Rng::seeded(seed).split(10).next_u64());
    ToyCodec codec = make_codec(frame_len, cfg.at("latent_dim").get<std::size_t>(),
                                cfg.at("stages").get<std::size_t>(),
                                cfg.at("codebook_size").get<std::size_t>(), init_sample, seed,
                                cfg.at("commitment_beta").get<double>());

    TrainConfig tc;
    tc.learning_rate = tr.at("learning_rate").get<double>();
    tc.steps = tr.at("steps").get<int>();
    tc.batch_size = tr.at("batch_size").get<int>();
    tc.seed = seed;
    tc.quantizer.mode = SelectionMode::Deterministic;

    auto [trained, report] = train_baseline(std::move(codec), dataset, tc);

    const fs::path out_dir(g.out_dir);
    detail::ensure_dir(out_dir);
    Checkpoint ckpt;
    ckpt.codec = std::move(trained);
    ckpt.config_snapshot = cfg;
    ckpt.rng_key = Rng::seeded(seed).key();
    ckpt.rng_counter = static_cast<std::uint64_t>(report.loss_trace.size());
    save_checkpoint(ckpt, (out_dir / "checkpoint.rvqm").string());
    detail::write_text(out_dir / "report.json", train_report_to_json(report).dump(2) + "\n");
    write_loss_trace_csv(report, (out_dir / "loss_trace.csv").string());
    detail::write_config_snapshot(cfg, out_dir);

    if (report.diverged) {
        std::cerr << "train: diverged at step " << report.divergence_step << "\n";
        return kExitDivergence;
    }
    std::cout << "train: " << report.loss_trace.size() << " steps, final loss "
              << (report.loss_trace.empty() ? 0.0 : report.loss_trace.back()) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// finetune

inline int cmd_finetune(const json& cfg, const GlobalOptions& g) {
    const json& ft = cfg.at("finetune");
    const std::string ckpt_path = ft.at("checkpoint").get<std::string>();
    if (ckpt_path.empty()) throw ConfigError("finetune: no checkpoint given");
    detail::LoadedCheckpoint lc = detail::load_checkpoint_with_framing(ckpt_path);
    const std::uint64_t seed = detail::config_seed(cfg);

    DatasetManifest manifest = load_manifest(ft.at("manifest").get<std::string>(), seed);
    std::vector<Vec> dataset = detail::dataset_frames(manifest, lc.sample_rate, lc.frame_len);

    TrainConfig tc;
    tc.learning_rate = ft.at("learning_rate").get<double>();
    tc.batch_size = ft.at("batch_size").get<int>();
    tc.seed = seed;
    tc.quantizer.mode = SelectionMode::ProbabilisticTopK;
    tc.quantizer.k = ft.at("k").get<int>();
    tc.quantizer.temperature = ft.at("temperature").get<double>();
    tc.update_scope = update_scope_from_name(ft.at("update_scope").get<std::string>());

    const int n_stages = static_cast<int>(lc.ckpt.codec.rvq.num_stages());
    ProgressiveSchedule schedule =
        ProgressiveSchedule::last_to_first(n_stages, ft.at("steps_per_stage").get<int>());
    if (ft.contains("stage_sequence")) {
        if (!ft.at("stage_sequence").is_array())
            throw ConfigError("finetune: stage_sequence must be an array of stage indices");
        schedule.stage_sequence = ft.at("stage_sequence").get<std::vector<int>>();
    }
    if (ft.contains("perturbed_stage") && ft.at("perturbed_stage").is_array())
        throw ConfigError("finetune: exactly one stage may be perturbed per pass");

    auto [tuned, report] = progressive_finetune(std::move(lc.ckpt.codec), dataset, schedule, tc);

    const fs::path out_dir(g.out_dir);
    detail::ensure_dir(out_dir);
    Checkpoint out_ckpt;
    out_ckpt.codec = std::move(tuned);
    out_ckpt.config_snapshot = cfg;
    // Keep the framing fields authoritative for downstream commands.
    out_ckpt.config_snapshot["sample_rate"] = lc.sample_rate;
    out_ckpt.config_snapshot["frame_len"] = lc.frame_len;
    out_ckpt.rng_key = Rng::seeded(seed).key();
    out_ckpt.rng_counter = static_cast<std::uint64_t>(report.loss_trace.size());
    save_checkpoint(out_ckpt, (out_dir / "checkpoint.rvqm").string());
    detail::write_text(out_dir / "report.json", train_report_to_json(report).dump(2) + "\n");
    write_loss_trace_csv(report, (out_dir / "loss_trace.csv").string());
    write_phase_metrics_csv(report, (out_dir / "phases.csv").string());
    detail::write_config_snapshot(out_ckpt.config_snapshot, out_dir);

    if (report.diverged) {
        std::cerr << "finetune: diverged at step " << report.divergence_step << "\n";
        return kExitDivergence;
    }
    std::cout << "finetune: " << report.phases.size() << " phases, stages";
    for (const PhaseLog& p : report.phases) std::cout << " " << p.stage;
    std::cout << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze-shift

inline int cmd_analyze_shift(const json& cfg, const GlobalOptions& g) {
    const json& an = cfg.at("analysis");
    const std::string ckpt_path = an.at("checkpoint").get<std::string>();
    if (ckpt_path.empty()) throw ConfigError("analyze-shift: no checkpoint given");
    detail::LoadedCheckpoint lc = detail::load_checkpoint_with_framing(ckpt_path);
    const ToyCodec& codec = lc.ckpt.codec;
    const std::uint64_t seed = detail::config_seed(cfg);
    const double snr_db = an.at("snr_db").get<double>();
    const int k_max = an.at("k_max").get<int>();

    DatasetManifest clean_manifest = load_manifest(an.at("manifest").get<std::string>(), seed);
    std::string noise_path = an.at("noise_manifest").get<std::string>();
    DatasetManifest noise_manifest =
        noise_path.empty() ? clean_manifest : load_manifest(noise_path, seed);

    std::vector<AudioSignal> noises;
    for (std::size_t i = 0; i < noise_manifest.entries.size(); ++i)
        if (noise_manifest.entries[i].role == EntryRole::Noise)
            noises.push_back(materialize_entry(noise_manifest, i, lc.sample_rate));
    if (noises.empty()) throw ConfigError("analyze-shift: no noise entries available");

    std::vector<std::size_t> clean_indices;
    for (std::size_t i = 0; i < clean_manifest.entries.size(); ++i)
        if (clean_manifest.entries[i].role == EntryRole::Clean) clean_indices.push_back(i);

    const std::size_t n_stages = codec.rvq.num_stages();
    std::vector<std::vector<ShiftHistogram>> partial(clean_indices.size());

    parallel_for(clean_indices.size(), g.threads, [&](std::size_t u) {
        const std::size_t entry = clean_indices[u];
        AudioSignal clean = materialize_entry(clean_manifest, entry, lc.sample_rate);
        Rng mix_rng = Rng::seeded(seed).split(0xA11).split(u);
        const AudioSignal& noise = noises[u % noises.size()];
        AudioSignal noisy = mix_at_snr(clean, noise, snr_db, mix_rng.next_u64());

        std::vector<Vec> clean_frames = frame_features(clean, lc.frame_len, lc.frame_len);
        std::vector<Vec> noisy_frames = frame_features(noisy, lc.frame_len, lc.frame_len);

        std::vector<ShiftHistogram> hists(n_stages);
        for (std::size_t f = 0; f < clean_frames.size(); ++f) {
            Vec zc = codec.encode(clean_frames[f]);
            Vec zn = codec.encode(noisy_frames[f]);
            for (std::size_t s = 0; s < n_stages; ++s) {
                const Codebook& cb = codec.rvq.stages[s];
                hists[s].k_max = k_max;
                hists[s].add(codeword_shift(zc, zn, cb, k_max));
                // Each signal follows its own deterministic residual path.
                sub_in_place(zc, cb.entries[nearest_codeword(zc, cb).index]);
                sub_in_place(zn, cb.entries[nearest_codeword(zn, cb).index]);
            }
        }
        partial[u] = std::move(hists);
    });

    std::vector<ShiftHistogram> stage_hists(n_stages);
    for (std::size_t s = 0; s < n_stages; ++s) stage_hists[s].k_max = k_max;
    for (const auto& hists : partial)
        for (std::size_t s = 0; s < n_stages; ++s) stage_hists[s].merge(hists[s]);

    const fs::path out_dir(g.out_dir);
    detail::ensure_dir(out_dir);
    json stages_json = json::array();
    for (std::size_t s = 0; s < n_stages; ++s) {
        char name[64];
        std::snprintf(name, sizeof name, "shift_stage%zu.csv", s + 1);
        write_shift_histogram_csv(stage_hists[s], (out_dir / name).string());
        json h = shift_histogram_to_json(stage_hists[s]);
        h["stage"] = s + 1;
        stages_json.push_back(h);
    }
    json summary = {{"checkpoint", ckpt_path},
                    {"snr_db", snr_db},
                    {"seed", seed},
                    {"k_max", k_max},
                    {"utterances", clean_indices.size()},
                    {"stages", stages_json}};
    detail::write_text(out_dir / "shift.json", summary.dump(2) + "\n");
    detail::write_config_snapshot(cfg, out_dir);
    std::cout << "analyze-shift: " << clean_indices.size() << " utterances at " << snr_db
              << " dB, stage-1 zero-shift fraction "
              << (stage_hists[0].total
                    ? static_cast<double>(stage_hists[0].count_at(0)) /
                          static_cast<double>(stage_hists[0].total)
                    : 0.0)
              << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

namespace detail {

struct ConditionResult {
    std::string name;
    std::vector<std::string> ids;
    std::vector<double> si_sdr_db;
    double mean = 0.0;
};

inline json condition_to_json(const ConditionResult& c) {
    json per = json::array();
    for (std::size_t i = 0; i < c.ids.size(); ++i)
        per.push_back({{"id", c.ids[i]}, {"si_sdr_db", c.si_sdr_db[i]}});
    return {{"condition", c.name}, {"per_utterance", per}, {"mean_si_sdr_db", c.mean}};
}

/// SI-SDR of the codec round trip per clean utterance for one condition
/// ("clean" or a mixing SNR). Mixtures are derived from (seed, utterance,
/// condition) so two models see identical inputs.
inline std::vector<ConditionResult> eval_model(const ToyCodec& codec, std::size_t frame_len,
                                               const DatasetManifest& manifest, int sample_rate,
                                               const std::vector<AudioSignal>& noises,
                                               const std::vector<double>& snrs,
                                               std::uint64_t seed, int threads) {
    std::vector<std::size_t> clean_indices;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].role == EntryRole::Clean) clean_indices.push_back(i);
    if (clean_indices.empty()) throw ConfigError("eval: no clean entries in manifest");

    std::vector<ConditionResult> results;
    results.push_back({"clean", {}, {}, 0.0});
    for (double snr : snrs) {
        char name[32];
        std::snprintf(name, sizeof name, "snr_%g", snr);
        results.push_back({name, {}, {}, 0.0});
    }
    for (ConditionResult& c : results) {
        c.ids.resize(clean_indices.size());
        c.si_sdr_db.resize(clean_indices.size());
    }

    parallel_for(clean_indices.size(), threads, [&](std::size_t u) {
        const std::size_t entry = clean_indices[u];
        AudioSignal clean = materialize_entry(manifest, entry, sample_rate);
        for (std::size_t c = 0; c < results.size(); ++c) {
            AudioSignal input;
            if (c == 0) {
                input = clean;
            } else {
                Rng mix_rng = Rng::seeded(seed).split(0xE7A1).split(u).split(c);
                input = mix_at_snr(clean, noises[u % noises.size()], snrs[c - 1],
                                   mix_rng.next_u64());
            }
            AudioSignal recon = codec_round_trip(codec, input, frame_len);
            AudioSignal ref = truncate_to(input, recon.samples.size());
            results[c].ids[u] = manifest.entries[entry].id;
            results[c].si_sdr_db[u] = si_sdr(ref, recon);
        }
    });
    for (ConditionResult& c : results) {
        double s = 0.0;
        for (double v : c.si_sdr_db) s += v;
        c.mean = c.si_sdr_db.empty() ? 0.0 : s / static_cast<double>(c.si_sdr_db.size());
    }
    return results;
}

} // namespace detail

inline int cmd_eval(const json& cfg, const GlobalOptions& g) {
    const json& ev = cfg.at("eval");
    const std::string ckpt_path = ev.at("checkpoint").get<std::string>();
    if (ckpt_path.empty()) throw ConfigError("eval: no checkpoint given");
    detail::LoadedCheckpoint lc = detail::load_checkpoint_with_framing(ckpt_path);
    const std::uint64_t seed = detail::config_seed(cfg);
    const std::vector<double> snrs = ev.at("snrs_db").get<std::vector<double>>();

    DatasetManifest manifest = load_manifest(ev.at("manifest").get<std::string>(), seed);
    std::vector<AudioSignal> noises;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].role == EntryRole::Noise)
            noises.push_back(materialize_entry(manifest, i, lc.sample_rate));
    if (!snrs.empty() && noises.empty())
        throw ConfigError("eval: manifest has no noise entries for SNR conditions");

    std::vector<Vec> frames = detail::dataset_frames(manifest, lc.sample_rate, lc.frame_len);
    std::vector<Vec> stress_batch = detail::seeded_subsample(
        frames, ev.at("stress_frames").get<std::size_t>(), Rng::seeded(seed).split(0x57E5).next_u64());

    auto conditions = detail::eval_model(lc.ckpt.codec, lc.frame_len, manifest, lc.sample_rate,
                                         noises, snrs, seed, g.threads);
    const double stress = perturbation_stress(
        lc.ckpt.codec, stress_batch, ev.at("stress_k").get<int>(),
        ev.at("stress_temperature").get<double>(), ev.at("stress_draws").get<int>(),
        Rng::seeded(seed).split(0x57E6).next_u64());

    json out;
    out["seed"] = seed;
    out["checkpoint"] = ckpt_path;
    json conds = json::array();
    for (const auto& c : conditions) conds.push_back(detail::condition_to_json(c));
    out["conditions"] = conds;
    out["perturbation_stress_mse"] = stress;

    const std::string baseline_path = ev.at("baseline_checkpoint").get<std::string>();
    if (!baseline_path.empty()) {
        detail::LoadedCheckpoint base = detail::load_checkpoint_with_framing(baseline_path);
        if (base.frame_len != lc.frame_len || base.sample_rate != lc.sample_rate)
            throw ConfigError("eval: baseline checkpoint framing differs from primary");
        auto base_conditions = detail::eval_model(base.ckpt.codec, base.frame_len, manifest,
                                                  base.sample_rate, noises, snrs, seed, g.threads);
        const double base_stress = perturbation_stress(
            base.ckpt.codec, stress_batch, ev.at("stress_k").get<int>(),
            ev.at("stress_temperature").get<double>(), ev.at("stress_draws").get<int>(),
            Rng::seeded(seed).split(0x57E6).next_u64());
        json bconds = json::array();
        for (const auto& c : base_conditions) bconds.push_back(detail::condition_to_json(c));
        out["baseline"] = {{"checkpoint", baseline_path},
                           {"conditions", bconds},
                           {"perturbation_stress_mse", base_stress}};
        json paired = json::array();
        for (std::size_t c = 0; c < conditions.size(); ++c) {
            json deltas = json::array();
            int wins = 0;
            double mean_delta = 0.0;
            for (std::size_t u = 0; u < conditions[c].si_sdr_db.size(); ++u) {
                double d = conditions[c].si_sdr_db[u] - base_conditions[c].si_sdr_db[u];
                deltas.push_back({{"id", conditions[c].ids[u]}, {"delta_db", d}});
                mean_delta += d;
                if (d > 0.0) ++wins;
            }
            if (!conditions[c].si_sdr_db.empty())
                mean_delta /= static_cast<double>(conditions[c].si_sdr_db.size());
            paired.push_back({{"condition", conditions[c].name},
                              {"deltas", deltas},
                              {"mean_delta_db", mean_delta},
                              {"wins", wins},
                              {"n", conditions[c].si_sdr_db.size()}});
        }
        out["paired"] = paired;
    }

    const fs::path out_dir(g.out_dir);
    detail::ensure_dir(out_dir);
    detail::write_text(out_dir / "metrics.json", out.dump(2) + "\n");
    detail::write_config_snapshot(cfg, out_dir);
    std::cout << "eval:";
    for (const auto& c : conditions) std::cout << " " << c.name << "=" << c.mean << "dB";
    std::cout << " stress_mse=" << stress << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// encode / decode

inline int cmd_encode(const json& cfg, const GlobalOptions& g) {
    const json& en = cfg.at("encode");
    const std::string ckpt_path = en.at("checkpoint").get<std::string>();
    const std::string input_path = en.at("input").get<std::string>();
    if (ckpt_path.empty()) throw ConfigError("encode: no checkpoint given");
    if (input_path.empty()) throw ConfigError("encode: no input WAV given");
    detail::LoadedCheckpoint lc = detail::load_checkpoint_with_framing(ckpt_path);

    AudioSignal sig = read_wav(input_path);
    if (sig.sample_rate != lc.sample_rate)
        throw ConfigError("encode: input rate " + std::to_string(sig.sample_rate) +
                          " does not match checkpoint rate " + std::to_string(lc.sample_rate));
    std::vector<Vec> frames = frame_features(sig, lc.frame_len, lc.frame_len);

    QuantizerConfig det;
    Rng dummy = Rng::seeded(0);
    std::vector<std::vector<std::uint32_t>> tokens;
    tokens.reserve(frames.size());
    for (const Vec& frame : frames) {
        QuantizationResult q = rvq_encode(lc.ckpt.codec.encode(frame), lc.ckpt.codec.rvq, det, dummy);
        tokens.push_back(q.indices);
    }

    const fs::path out_dir(g.out_dir);
    detail::ensure_dir(out_dir);
    save_tokens(tokens, (out_dir / "tokens.bin").string());
    json sidecar = {{"stages", lc.ckpt.codec.rvq.num_stages()},
                    {"frames", tokens.size()},
                    {"frame_len", lc.frame_len},
                    {"sample_rate", lc.sample_rate},
                    {"frame_rate_hz", static_cast<double>(lc.sample_rate) /
                                          static_cast<double>(lc.frame_len)}};
    detail::write_text(out_dir / "tokens.json", sidecar.dump(2) + "\n");
    detail::write_config_snapshot(cfg, out_dir);
    std::cout << "encode: " << tokens.size() << " frames x "
              << lc.ckpt.codec.rvq.num_stages() << " stages\n";
    return kExitOk;
}

inline int cmd_decode(const json& cfg, const GlobalOptions& g) {
    const json& de = cfg.at("decode");
    const std::string ckpt_path = de.at("checkpoint").get<std::string>();
    std::string tokens_path = de.at("tokens").get<std::string>();
    if (ckpt_path.empty()) throw ConfigError("decode: no checkpoint given");
    if (tokens_path.empty()) throw ConfigError("decode: no token stream given");
    detail::LoadedCheckpoint lc = detail::load_checkpoint_with_framing(ckpt_path);

    fs::path tokens_bin(tokens_path);
    if (fs::is_directory(tokens_bin)) tokens_bin /= "tokens.bin";
    fs::path sidecar_path = tokens_bin.parent_path() / "tokens.json";
    std::ifstream side(sidecar_path);
    if (!side) throw IoError("decode: cannot open sidecar " + sidecar_path.string());
    json sidecar = json::parse(side);
    const std::size_t n_stages = sidecar.at("stages").get<std::size_t>();
    const std::size_t n_frames = sidecar.at("frames").get<std::size_t>();
    if (n_stages != lc.ckpt.codec.rvq.num_stages())
        throw ConfigError("decode: token stream has " + std::to_string(n_stages) +
                          " stages, checkpoint has " +
                          std::to_string(lc.ckpt.codec.rvq.num_stages()));

    auto tokens = load_tokens(tokens_bin.string(), n_stages, n_frames);
    AudioSignal out;
    out.sample_rate = sidecar.value("sample_rate", lc.sample_rate);
    out.samples.reserve(n_frames * lc.frame_len);
    for (const auto& frame_tokens : tokens) {
        Vec zhat = rvq_decode(frame_tokens, lc.ckpt.codec.rvq);
        Vec y = lc.ckpt.codec.decode_latent(zhat);
        out.samples.insert(out.samples.end(), y.begin(), y.end());
    }
    for (double& s : out.samples) s = std::clamp(s, -1.0, 1.0);

    const fs::path out_dir(g.out_dir);
    detail::ensure_dir(out_dir);
    write_wav(out, (out_dir / "decoded.wav").string());
    detail::write_config_snapshot(cfg, out_dir);
    std::cout << "decode: wrote " << out.samples.size() << " samples\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args) {
    CLI::App app{"rvqkit: residual vector quantization with stochastic top-K training"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config_path, "JSON experiment config (merged over defaults)");
    std::int64_t seed_flag = 0;
    CLI::Option* seed_opt = app.add_option("--seed", seed_flag, "override the config seed");
    app.add_option("--out", g.out_dir, "output directory")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads for evaluation loops")
        ->check(CLI::PositiveNumber);

    std::string manifest_flag, checkpoint_flag, baseline_flag, input_flag, tokens_flag,
        noise_manifest_flag;
    double snr_flag = 0.0;
    int steps_flag = -1, steps_per_stage_flag = -1;

    CLI::App* gen = app.add_subcommand("gen-data", "materialize the synthetic dataset");
    CLI::App* train = app.add_subcommand("train", "baseline nearest-codeword training");
    CLI::Option* train_manifest = train->add_option("--manifest", manifest_flag, "dataset manifest");
    CLI::Option* train_steps = train->add_option("--steps", steps_flag, "training steps");
    CLI::App* finetune = app.add_subcommand("finetune", "progressive top-K fine-tuning");
    CLI::Option* ft_ckpt = finetune->add_option("--checkpoint", checkpoint_flag, "baseline checkpoint");
    CLI::Option* ft_manifest = finetune->add_option("--manifest", manifest_flag, "dataset manifest");
    CLI::Option* ft_steps =
        finetune->add_option("--steps-per-stage", steps_per_stage_flag, "steps per schedule stage");
    CLI::App* shift = app.add_subcommand("analyze-shift", "codeword shift histograms");
    CLI::Option* sh_ckpt = shift->add_option("--checkpoint", checkpoint_flag, "codec checkpoint");
    CLI::Option* sh_manifest = shift->add_option("--manifest", manifest_flag, "clean manifest");
    CLI::Option* sh_noise =
        shift->add_option("--noise-manifest", noise_manifest_flag, "noise manifest (defaults to --manifest)");
    CLI::Option* sh_snr = shift->add_option("--snr", snr_flag, "mixing SNR in dB");
    CLI::App* eval_cmd = app.add_subcommand("eval", "SI-SDR and perturbation stress metrics");
    CLI::Option* ev_ckpt = eval_cmd->add_option("--checkpoint", checkpoint_flag, "codec checkpoint");
    CLI::Option* ev_base =
        eval_cmd->add_option("--baseline", baseline_flag, "baseline checkpoint for paired deltas");
    CLI::Option* ev_manifest = eval_cmd->add_option("--manifest", manifest_flag, "eval manifest");
    CLI::App* encode = app.add_subcommand("encode", "encode a WAV into a token stream");
    CLI::Option* en_ckpt = encode->add_option("--checkpoint", checkpoint_flag, "codec checkpoint");
    CLI::Option* en_input = encode->add_option("--input", input_flag, "input WAV");
    CLI::App* decode = app.add_subcommand("decode", "decode a token stream into a WAV");
    CLI::Option* de_ckpt = decode->add_option("--checkpoint", checkpoint_flag, "codec checkpoint");
    CLI::Option* de_tokens = decode->add_option("--tokens", tokens_flag, "token directory or tokens.bin");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("rvqkit");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (seed_opt->count() > 0) g.seed = seed_flag;
        json cfg = effective_config(g);
        if (train->parsed()) {
            if (train_manifest->count()) cfg["train"]["manifest"] = manifest_flag;
            if (train_steps->count()) cfg["train"]["steps"] = steps_flag;
            return cmd_train(cfg, g);
        }
        if (gen->parsed()) return cmd_gen_data(cfg, g);
        if (finetune->parsed()) {
            if (ft_ckpt->count()) cfg["finetune"]["checkpoint"] = checkpoint_flag;
            if (ft_manifest->count()) cfg["finetune"]["manifest"] = manifest_flag;
            if (ft_steps->count()) cfg["finetune"]["steps_per_stage"] = steps_per_stage_flag;
            return cmd_finetune(cfg, g);
        }
        if (shift->parsed()) {
            if (sh_ckpt->count()) cfg["analysis"]["checkpoint"] = checkpoint_flag;
            if (sh_manifest->count()) cfg["analysis"]["manifest"] = manifest_flag;
            if (sh_noise->count()) cfg["analysis"]["noise_manifest"] = noise_manifest_flag;
            if (sh_snr->count()) cfg["analysis"]["snr_db"] = snr_flag;
            return cmd_analyze_shift(cfg, g);
        }
        if (eval_cmd->parsed()) {
            if (ev_ckpt->count()) cfg["eval"]["checkpoint"] = checkpoint_flag;
            if (ev_base->count()) cfg["eval"]["baseline_checkpoint"] = baseline_flag;
            if (ev_manifest->count()) cfg["eval"]["manifest"] = manifest_flag;
            return cmd_eval(cfg, g);
        }
        if (encode->parsed()) {
            if (en_ckpt->count()) cfg["encode"]["checkpoint"] = checkpoint_flag;
            if (en_input->count()) cfg["encode"]["input"] = input_flag;
            return cmd_encode(cfg, g);
        }
        if (decode->parsed()) {
            if (de_ckpt->count()) cfg["decode"]["checkpoint"] = checkpoint_flag;
            if (de_tokens->count()) cfg["decode"]["tokens"] = tokens_flag;
            return cmd_decode(cfg, g);
        }
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

} // namespace rvq::cli
