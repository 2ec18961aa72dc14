#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rvq/errors.hpp"
#include "rvq/math.hpp"
#include "rvq/rng.hpp"

namespace rvq {

/// Mono audio buffer. Samples are nominally in [-1, 1]; mixing can push them
/// past that transiently, which write_wav clamps (and count_clipped reports).
struct AudioSignal {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration_s() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

inline std::size_t count_clipped(const AudioSignal& sig) {
    std::size_t n = 0;
    for (double s : sig.samples)
        if (s < -1.0 || s > 1.0) ++n;
    return n;
}

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

inline void put_u16le(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
}

} // namespace detail

/// Read a RIFF/WAVE file holding 16-bit PCM mono samples. Samples are scaled
/// to [-1, 1) by division by 32768. Unknown chunks are skipped; anything that
/// is not 16-bit PCM mono is rejected with a message naming the found format.
inline AudioSignal read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw ConfigError("read_wav: " + path + " is not a RIFF/WAVE file");

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::uint32_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        char id[5] = {0};
        std::memcpy(id, &bytes[pos], 4);
        std::uint32_t len = detail::read_u32le(&bytes[pos + 4]);
        pos += 8;
        if (pos + len > bytes.size())
            throw ConfigError("read_wav: truncated chunk '" + std::string(id) + "' in " + path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) throw ConfigError("read_wav: malformed fmt chunk in " + path);
            format = detail::read_u16le(&bytes[pos]);
            channels = detail::read_u16le(&bytes[pos + 2]);
            rate = detail::read_u32le(&bytes[pos + 4]);
            bits = detail::read_u16le(&bytes[pos + 14]);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = &bytes[pos];
            data_len = len;
        }
        pos += len + (len & 1); // chunks are word-aligned
    }
    if (!have_fmt || data == nullptr)
        throw ConfigError("read_wav: missing fmt or data chunk in " + path);
    if (format != 1)
        throw ConfigError("read_wav: unsupported WAV format tag " + std::to_string(format) +
                          " in " + path + " (expected PCM=1)");
    if (channels != 1)
        throw ConfigError("read_wav: expected mono, found " + std::to_string(channels) +
                          " channels in " + path);
    if (bits != 16)
        throw ConfigError("read_wav: expected 16-bit samples, found " + std::to_string(bits) +
                          "-bit in " + path);
    if (rate == 0) throw ConfigError("read_wav: zero sample rate in " + path);

    AudioSignal sig;
    sig.sample_rate = static_cast<int>(rate);
    sig.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < sig.samples.size(); ++i) {
        std::int16_t v = static_cast<std::int16_t>(
            static_cast<std::uint16_t>(data[2 * i] | (data[2 * i + 1] << 8)));
        sig.samples[i] = static_cast<double>(v) / 32768.0;
    }
    return sig;
}

/// Write 16-bit PCM mono. Quantization rounds half away from zero and clamps
/// at the int16 bounds.
inline void write_wav(const AudioSignal& sig, const std::string& path) {
    if (sig.samples.empty()) throw ConfigError("write_wav: refusing to write an empty signal");
    if (sig.sample_rate <= 0) throw ConfigError("write_wav: invalid sample rate");

    std::vector<unsigned char> out;
    out.reserve(44 + sig.samples.size() * 2);
    std::uint32_t data_len = static_cast<std::uint32_t>(sig.samples.size() * 2);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    detail::put_u32le(out, 36 + data_len);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    detail::put_u32le(out, 16);
    detail::put_u16le(out, 1); // PCM
    detail::put_u16le(out, 1); // mono
    detail::put_u32le(out, static_cast<std::uint32_t>(sig.sample_rate));
    detail::put_u32le(out, static_cast<std::uint32_t>(sig.sample_rate) * 2);
    detail::put_u16le(out, 2);
    detail::put_u16le(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    detail::put_u32le(out, data_len);
    for (double s : sig.samples) {
        double scaled = s * 32768.0;
        double rounded = scaled >= 0.0 ? std::floor(scaled + 0.5) : std::ceil(scaled - 0.5);
        if (rounded > 32767.0) rounded = 32767.0;
        if (rounded < -32768.0) rounded = -32768.0;
        auto v = static_cast<std::int16_t>(rounded);
        detail::put_u16le(out, static_cast<std::uint16_t>(v));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("write_wav: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write_wav: short write to " + path);
}

enum class GeneratorKind { HarmonicTone, ChirpSweep, WhiteNoise, PinkNoise };

/// Synthetic source description. `f0` is the fundamental (HarmonicTone) or
/// sweep start (ChirpSweep); `f1` the sweep end; noise kinds ignore both.
struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::HarmonicTone;
    double duration_s = 1.0;
    double amplitude = 0.5;
    double f0 = 220.0;
    double f1 = 2000.0;

    void check() const {
        if (!(duration_s > 0.0)) throw ConfigError("GeneratorSpec: duration_s must be > 0");
        if (!(amplitude > 0.0) || amplitude > 1.0)
            throw ConfigError("GeneratorSpec: amplitude must lie in (0, 1]");
    }
};

inline const char* generator_kind_name(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::HarmonicTone: return "harmonic_tone";
        case GeneratorKind::ChirpSweep: return "chirp_sweep";
        case GeneratorKind::WhiteNoise: return "white_noise";
        case GeneratorKind::PinkNoise: return "pink_noise";
    }
    return "unknown";
}

inline GeneratorKind generator_kind_from_name(const std::string& name) {
    if (name == "harmonic_tone") return GeneratorKind::HarmonicTone;
    if (name == "chirp_sweep") return GeneratorKind::ChirpSweep;
    if (name == "white_noise") return GeneratorKind::WhiteNoise;
    if (name == "pink_noise") return GeneratorKind::PinkNoise;
    throw ConfigError("unknown generator kind '" + name + "'");
}

namespace detail {

inline AudioSignal gen_harmonic_tone(const GeneratorSpec& spec, int rate, Rng rng) {
    const std::size_t n = static_cast<std::size_t>(spec.duration_s * rate);
    // Fundamental plus three decaying partials, with slow vibrato so frames
    // are not all identical.
    const int partials = 4;
    std::array<double, 4> weight{};
    std::array<double, 4> phase{};
    double wsum = 0.0;
    for (int h = 0; h < partials; ++h) {
        weight[h] = 1.0 / (h + 1);
        wsum += weight[h];
        phase[h] = rng.uniform() * 2.0 * kPi;
    }
    const double vib_rate = 4.0 + 3.0 * rng.uniform();    // Hz
    const double vib_depth = 0.005 + 0.01 * rng.uniform(); // relative
    AudioSignal sig;
    sig.sample_rate = rate;
    sig.samples.resize(n);
    const double dt = 1.0 / rate;
    for (std::size_t i = 0; i < n; ++i) {
        double t = i * dt;
        double f = spec.f0 * (1.0 + vib_depth * std::sin(2.0 * kPi * vib_rate * t));
        double s = 0.0;
        for (int h = 0; h < partials; ++h) {
            phase[h] += 2.0 * kPi * f * (h + 1) * dt;
            s += weight[h] * std::sin(phase[h]);
        }
        sig.samples[i] = spec.amplitude * s / wsum;
    }
    return sig;
}

inline AudioSignal gen_chirp(const GeneratorSpec& spec, int rate, Rng rng) {
    const std::size_t n = static_cast<std::size_t>(spec.duration_s * rate);
    AudioSignal sig;
    sig.sample_rate = rate;
    sig.samples.resize(n);
    double phase = rng.uniform() * 2.0 * kPi;
    const double dt = 1.0 / rate;
    for (std::size_t i = 0; i < n; ++i) {
        double frac = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        double f = spec.f0 + (spec.f1 - spec.f0) * frac;
        phase += 2.0 * kPi * f * dt;
        sig.samples[i] = spec.amplitude * std::sin(phase);
    }
    return sig;
}

inline AudioSignal gen_white(const GeneratorSpec& spec, int rate, Rng rng) {
    const std::size_t n = static_cast<std::size_t>(spec.duration_s * rate);
    AudioSignal sig;
    sig.sample_rate = rate;
    sig.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        sig.samples[i] = spec.amplitude * (2.0 * rng.uniform() - 1.0);
    return sig;
}

/// Pink noise: white gaussian shaped by a cascade of first-order pole/zero
/// sections placed two per decade, which approximates a -3 dB/octave power
/// slope across the audio band. The output is peak-normalized to the
/// requested amplitude.
inline AudioSignal gen_pink(const GeneratorSpec& spec, int rate, Rng rng) {
    const std::size_t n = static_cast<std::size_t>(spec.duration_s * rate);
    const std::size_t warmup = static_cast<std::size_t>(rate) / 4;

    struct Section {
        double b0, b1, a1, z1 = 0.0;
        double step(double x) {
            double y = b0 * x + z1;
            z1 = b1 * x - a1 * y;
            return y;
        }
    };
    std::vector<Section> sections;
    const double fs = static_cast<double>(rate);
    const double kbt = 2.0 * fs;
    double fp = 10.0;
    while (fp < fs / 2.5) {
        double fz = fp * std::pow(10.0, 0.25);
        double wp = kbt * std::tan(kPi * fp / fs);
        double wz = kbt * std::tan(kPi * std::min(fz, 0.49 * fs) / fs);
        double g = wp / wz; // unit DC gain
        double den = kbt + wp;
        sections.push_back(Section{g * (kbt + wz) / den, g * (wz - kbt) / den, (wp - kbt) / den});
        fp *= std::sqrt(10.0);
    }

    AudioSignal sig;
    sig.sample_rate = rate;
    sig.samples.resize(n);
    double peak = 0.0;
    for (std::size_t i = 0; i < n + warmup; ++i) {
        double x = rng.gaussian();
        for (Section& s : sections) x = s.step(x);
        if (i < warmup) continue;
        sig.samples[i - warmup] = x;
        peak = std::max(peak, std::fabs(x));
    }
    if (peak > 0.0)
        for (double& s : sig.samples) s *= spec.amplitude / peak;
    return sig;
}

} // namespace detail

/// Deterministic synthesis: the result is a pure function of
/// (spec, sample_rate, seed).
inline AudioSignal generate(const GeneratorSpec& spec, int sample_rate, std::uint64_t seed) {
    spec.check();
    if (sample_rate <= 0) throw ConfigError("generate: sample rate must be positive");
    Rng rng = Rng::seeded(seed);
    switch (spec.kind) {
        case GeneratorKind::HarmonicTone: return detail::gen_harmonic_tone(spec, sample_rate, rng);
        case GeneratorKind::ChirpSweep: return detail::gen_chirp(spec, sample_rate, rng);
        case GeneratorKind::WhiteNoise: return detail::gen_white(spec, sample_rate, rng);
        case GeneratorKind::PinkNoise: return detail::gen_pink(spec, sample_rate, rng);
    }
    throw ConfigError("generate: unknown generator kind");
}

} // namespace rvq
