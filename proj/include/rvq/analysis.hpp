#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rvq/audio.hpp"
#include "rvq/errors.hpp"
#include "rvq/quantizer.hpp"

namespace rvq {

inline constexpr double kSiSdrCapDb = 100.0;
inline constexpr double kActivityThresholdDbfs = -40.0;
inline constexpr int kDefaultShiftKMax = 50;

namespace detail {

/// Mean squared amplitude over the active part of a signal. Activity is
/// judged on non-overlapping 20 ms frames whose RMS clears the -40 dBFS
/// threshold; fully silent stretches do not dilute the power estimate.
inline double active_power(const AudioSignal& sig) {
    if (sig.samples.empty()) throw ConfigError("active_power: empty signal");
    const std::size_t frame = std::max<std::size_t>(1, static_cast<std::size_t>(sig.sample_rate) / 50);
    const double threshold2 = std::pow(10.0, kActivityThresholdDbfs / 10.0);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < sig.samples.size(); start += frame) {
        std::size_t end = std::min(start + frame, sig.samples.size());
        double s = 0.0;
        for (std::size_t i = start; i < end; ++i) s += sig.samples[i] * sig.samples[i];
        double ms = s / static_cast<double>(end - start);
        if (ms >= threshold2) {
            sum += s;
            count += end - start;
        }
    }
    if (count == 0) throw ConfigError("active_power: signal is silent (no frame above -40 dBFS)");
    return sum / static_cast<double>(count);
}

inline double full_power(const double* p, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i] * p[i];
    return s / static_cast<double>(n);
}

} // namespace detail

/// Add a noise excerpt to `clean` scaled so the clean-to-noise power ratio
/// equals `snr_db`. Clean power is measured over active frames only; noise
/// power over the whole mixed span. A seeded random offset picks the noise
/// excerpt. The output is not re-normalized, so loud mixtures may exceed
/// [-1, 1]; use count_clipped to report that.
inline AudioSignal mix_at_snr(const AudioSignal& clean, const AudioSignal& noise, double snr_db,
                              std::uint64_t seed) {
    if (clean.sample_rate != noise.sample_rate)
        throw ConfigError("mix_at_snr: sample rate mismatch (" + std::to_string(clean.sample_rate) +
                          " vs " + std::to_string(noise.sample_rate) + ")");
    if (clean.samples.empty()) throw ConfigError("mix_at_snr: empty clean signal");
    if (noise.samples.size() < clean.samples.size())
        throw ConfigError("mix_at_snr: noise shorter than clean signal");

    const double p_clean = detail::active_power(clean);

    Rng rng = Rng::seeded(seed);
    const std::size_t span = clean.samples.size();
    const std::size_t offset = rng.uniform_int(noise.samples.size() - span + 1);
    const double p_noise = detail::full_power(noise.samples.data() + offset, span);
    if (p_noise <= 0.0) throw ConfigError("mix_at_snr: selected noise excerpt has zero power");

    const double gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
    AudioSignal out;
    out.sample_rate = clean.sample_rate;
    out.samples.resize(span);
    for (std::size_t i = 0; i < span; ++i)
        out.samples[i] = clean.samples[i] + gain * noise.samples[offset + i];
    return out;
}

/// SNR of `mixed` relative to `clean`, using the same power conventions as
/// mix_at_snr (active clean power, full-span residual power).
inline double measure_snr(const AudioSignal& clean, const AudioSignal& mixed) {
    if (clean.sample_rate != mixed.sample_rate) throw ConfigError("measure_snr: rate mismatch");
    if (clean.samples.size() != mixed.samples.size())
        throw ConfigError("measure_snr: length mismatch");
    const double p_clean = detail::active_power(clean);
    double p_res = 0.0;
    for (std::size_t i = 0; i < clean.samples.size(); ++i) {
        double d = mixed.samples[i] - clean.samples[i];
        p_res += d * d;
    }
    p_res /= static_cast<double>(clean.samples.size());
    if (p_res <= 0.0) return kSiSdrCapDb;
    return 10.0 * std::log10(p_clean / p_res);
}

/// Rank displacement of the noisy selection relative to the clean feature's
/// candidate ordering: 0 when the noisy feature still lands on the clean
/// nearest codeword, k-1 when it lands on the clean k-th candidate, nullopt
/// (overflow) when it falls outside the clean top-k_max set.
inline std::optional<int> codeword_shift(const Vec& z_clean, const Vec& z_noisy,
                                         const Codebook& codebook, int k_max) {
    if (k_max < 1) throw ConfigError("codeword_shift: k_max must be >= 1");
    if (z_clean.size() != codebook.dim || z_noisy.size() != codebook.dim)
        throw ConfigError("codeword_shift: feature dimension mismatch");
    const std::uint32_t noisy_index = nearest_codeword(z_noisy, codebook).index;
    const CandidateList clean_candidates = top_k_candidates(z_clean, codebook, k_max);
    for (std::size_t k = 0; k < clean_candidates.size(); ++k)
        if (clean_candidates[k].index == noisy_index) return static_cast<int>(k);
    return std::nullopt;
}

/// Histogram of codeword shifts with an explicit overflow bucket for shifts
/// that fall outside the top-k_max candidate window.
struct ShiftHistogram {
    std::map<int, std::uint64_t> counts;
    std::uint64_t overflow = 0;
    std::uint64_t total = 0;
    int k_max = kDefaultShiftKMax;

    void add(std::optional<int> shift) {
        if (shift)
            counts[*shift] += 1;
        else
            overflow += 1;
        total += 1;
    }

    void merge(const ShiftHistogram& other) {
        for (const auto& [k, v] : other.counts) counts[k] += v;
        overflow += other.overflow;
        total += other.total;
    }

    std::uint64_t count_at(int shift) const {
        auto it = counts.find(shift);
        return it == counts.end() ? 0 : it->second;
    }
};

inline ShiftHistogram shift_histogram(const std::vector<std::pair<Vec, Vec>>& pairs,
                                      const Codebook& codebook, int k_max) {
    if (pairs.empty()) throw ConfigError("shift_histogram: empty pair list");
    ShiftHistogram h;
    h.k_max = k_max;
    for (const auto& [clean, noisy] : pairs) h.add(codeword_shift(clean, noisy, codebook, k_max));
    return h;
}

/// Scale-invariant signal-to-distortion ratio in dB. The estimate is
/// projected onto the reference, so rescaling the estimate does not change
/// the result. Zero distortion returns the documented 100 dB cap; the value
/// is clamped to [-100, 100].
inline double si_sdr(const std::vector<double>& reference, const std::vector<double>& estimate) {
    if (reference.size() != estimate.size()) throw ConfigError("si_sdr: length mismatch");
    if (reference.empty()) throw ConfigError("si_sdr: empty signals");
    double ref_energy = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        ref_energy += reference[i] * reference[i];
        cross += estimate[i] * reference[i];
    }
    if (ref_energy <= 0.0) throw ConfigError("si_sdr: silent reference");
    const double alpha = cross / ref_energy;
    double signal_power = 0.0, error_power = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        double s = alpha * reference[i];
        double e = estimate[i] - s;
        signal_power += s * s;
        error_power += e * e;
    }
    if (error_power <= 0.0) return kSiSdrCapDb;
    if (signal_power <= 0.0) return -kSiSdrCapDb;
    double v = 10.0 * std::log10(signal_power / error_power);
    return std::clamp(v, -kSiSdrCapDb, kSiSdrCapDb);
}

inline double si_sdr(const AudioSignal& reference, const AudioSignal& estimate) {
    if (reference.sample_rate != estimate.sample_rate)
        throw ConfigError("si_sdr: sample rate mismatch");
    return si_sdr(reference.samples, estimate.samples);
}

/// Slice a signal into rectangular frames of `frame_len` samples advancing by
/// `hop`; tail samples past the last full frame are dropped.
inline std::vector<Vec> frame_features(const AudioSignal& signal, std::size_t frame_len,
                                       std::size_t hop) {
    if (frame_len < 1) throw ConfigError("frame_features: frame_len must be >= 1");
    if (hop < 1 || hop > frame_len)
        throw ConfigError("frame_features: hop must lie in [1, frame_len]");
    if (signal.samples.size() < frame_len)
        throw ConfigError("frame_features: signal shorter than one frame");
    const std::size_t count = (signal.samples.size() - frame_len) / hop + 1;
    std::vector<Vec> frames(count);
    for (std::size_t i = 0; i < count; ++i) {
        frames[i].assign(signal.samples.begin() + static_cast<std::ptrdiff_t>(i * hop),
                         signal.samples.begin() + static_cast<std::ptrdiff_t>(i * hop + frame_len));
    }
    return frames;
}

} // namespace rvq
