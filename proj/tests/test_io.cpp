#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "rvq/audio.hpp"
#include "rvq/manifest.hpp"

namespace {

namespace fs = std::filesystem;
using rvq::AudioSignal;
using rvq::GeneratorKind;
using rvq::GeneratorSpec;
using rvq::Rng;

std::string temp_path(const std::string& name) {
    return (fs::path(::testing::TempDir()) / name).string();
}

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Wav, ZeroSignalRoundTrip) {
    AudioSignal sig;
    sig.sample_rate = 22050;
    sig.samples.assign(100, 0.0);
    const std::string path = temp_path("zeros.wav");
    rvq::write_wav(sig, path);
    AudioSignal back = rvq::read_wav(path);
    EXPECT_EQ(back.sample_rate, 22050);
    EXPECT_EQ(back.samples, sig.samples);
}

TEST(Wav, WriteReadWriteIsByteIdentical) {
    GeneratorSpec spec;
    spec.kind = GeneratorKind::HarmonicTone;
    spec.duration_s = 0.05;
    spec.amplitude = 0.8;
    spec.f0 = 440.0;
    AudioSignal sig = rvq::generate(spec, 16000, 7);
    const std::string p1 = temp_path("gen1.wav");
    const std::string p2 = temp_path("gen2.wav");
    rvq::write_wav(sig, p1);
    rvq::write_wav(rvq::read_wav(p1), p2);
    EXPECT_EQ(slurp(p1), slurp(p2));
}

TEST(Wav, FullScaleSampleScaling) {
    AudioSignal sig;
    sig.sample_rate = 16000;
    sig.samples = {32767.0 / 32768.0, 1.0, -1.0, 0.5};
    const std::string path = temp_path("scale.wav");
    rvq::write_wav(sig, path);
    AudioSignal back = rvq::read_wav(path);
    EXPECT_DOUBLE_EQ(back.samples[0], 32767.0 / 32768.0); // 0x7FFF
    EXPECT_DOUBLE_EQ(back.samples[1], 32767.0 / 32768.0); // 1.0 clamps to 32767
    EXPECT_DOUBLE_EQ(back.samples[2], -1.0);
    EXPECT_DOUBLE_EQ(back.samples[3], 0.5);
}

TEST(Wav, RoundTripErrorBoundedByOneStep) {
    Rng rng = Rng::seeded(12);
    AudioSignal sig;
    sig.sample_rate = 16000;
    for (int i = 0; i < 4096; ++i) sig.samples.push_back(2.0 * rng.uniform() - 1.0);
    const std::string path = temp_path("rt.wav");
    rvq::write_wav(sig, path);
    AudioSignal back = rvq::read_wav(path);
    for (std::size_t i = 0; i < sig.samples.size(); ++i)
        EXPECT_LE(std::abs(back.samples[i] - sig.samples[i]), 1.0 / 32768.0);
}

TEST(Wav, RejectsEmptySignal) {
    AudioSignal sig;
    sig.sample_rate = 16000;
    EXPECT_THROW(rvq::write_wav(sig, temp_path("empty.wav")), rvq::ConfigError);
}

TEST(Wav, ErrorsNameTheMalformedDetail) {
    AudioSignal sig;
    sig.sample_rate = 16000;
    sig.samples.assign(16, 0.25);
    const std::string path = temp_path("base.wav");
    rvq::write_wav(sig, path);
    std::vector<unsigned char> bytes = slurp(path);

    auto write_patched = [&](const std::string& name, std::size_t offset, unsigned char value) {
        std::vector<unsigned char> patched = bytes;
        patched[offset] = value;
        std::ofstream out(temp_path(name), std::ios::binary);
        out.write(reinterpret_cast<const char*>(patched.data()),
                  static_cast<std::streamsize>(patched.size()));
        out.close();
        return temp_path(name);
    };

    // not a RIFF container
    EXPECT_THROW(rvq::read_wav(write_patched("notriff.wav", 0, 'X')), rvq::ConfigError);
    // format tag 3 (ieee float) at offset 20
    try {
        rvq::read_wav(write_patched("float.wav", 20, 3));
        FAIL() << "expected ConfigError";
    } catch (const rvq::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("format tag 3"), std::string::npos);
    }
    // stereo at offset 22
    try {
        rvq::read_wav(write_patched("stereo.wav", 22, 2));
        FAIL() << "expected ConfigError";
    } catch (const rvq::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("2 channels"), std::string::npos);
    }
    // 8-bit at offset 34
    try {
        rvq::read_wav(write_patched("8bit.wav", 34, 8));
        FAIL() << "expected ConfigError";
    } catch (const rvq::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("8-bit"), std::string::npos);
    }
    EXPECT_THROW(rvq::read_wav(temp_path("does_not_exist.wav")), rvq::IoError);
}

TEST(Generate, WhiteNoiseDeterministicPerSeed) {
    GeneratorSpec spec;
    spec.kind = GeneratorKind::WhiteNoise;
    spec.duration_s = 0.1;
    spec.amplitude = 0.5;
    AudioSignal a = rvq::generate(spec, 16000, 99);
    AudioSignal b = rvq::generate(spec, 16000, 99);
    AudioSignal c = rvq::generate(spec, 16000, 100);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_NE(a.samples, c.samples);
}

TEST(Generate, AmplitudeBounds) {
    for (auto kind : {GeneratorKind::HarmonicTone, GeneratorKind::ChirpSweep,
                      GeneratorKind::WhiteNoise, GeneratorKind::PinkNoise}) {
        GeneratorSpec spec;
        spec.kind = kind;
        spec.duration_s = 0.2;
        spec.amplitude = 0.6;
        spec.f0 = 220.0;
        spec.f1 = 3000.0;
        AudioSignal sig = rvq::generate(spec, 16000, 5);
        double peak = 0.0;
        for (double s : sig.samples) peak = std::max(peak, std::abs(s));
        EXPECT_LE(peak, 0.6 + 1e-12) << rvq::generator_kind_name(kind);
        EXPECT_GT(peak, 0.0);
    }
}

TEST(Generate, RejectsBadSpecs) {
    GeneratorSpec spec;
    spec.duration_s = 0.0;
    EXPECT_THROW(rvq::generate(spec, 16000, 1), rvq::ConfigError);
    spec.duration_s = 1.0;
    spec.amplitude = 1.5;
    EXPECT_THROW(rvq::generate(spec, 16000, 1), rvq::ConfigError);
    spec.amplitude = 0.5;
    EXPECT_THROW(rvq::generate(spec, 0, 1), rvq::ConfigError);
}

// --- pink noise spectral oracle -------------------------------------------

void fft_inplace(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * rvq::kPi / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

/// Welch PSD estimate with a Hann window, averaged over half-overlapping
/// segments.
std::vector<double> welch_psd(const std::vector<double>& x, std::size_t nfft) {
    std::vector<double> window(nfft);
    for (std::size_t i = 0; i < nfft; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * rvq::kPi * static_cast<double>(i) /
                                         static_cast<double>(nfft - 1));
    std::vector<double> psd(nfft / 2, 0.0);
    std::size_t segments = 0;
    for (std::size_t start = 0; start + nfft <= x.size(); start += nfft / 2) {
        std::vector<std::complex<double>> buf(nfft);
        for (std::size_t i = 0; i < nfft; ++i) buf[i] = x[start + i] * window[i];
        fft_inplace(buf);
        for (std::size_t k = 0; k < nfft / 2; ++k) psd[k] += std::norm(buf[k]);
        ++segments;
    }
    for (double& v : psd) v /= static_cast<double>(segments);
    return psd;
}

TEST(Generate, PinkNoiseSlopeNearMinusThreeDbPerOctave) {
    GeneratorSpec spec;
    spec.kind = GeneratorKind::PinkNoise;
    spec.duration_s = 10.0;
    spec.amplitude = 0.9;
    const int rate = 16000;
    AudioSignal sig = rvq::generate(spec, rate, 314);

    const std::size_t nfft = 8192;
    std::vector<double> psd = welch_psd(sig.samples, nfft);
    const double bin_hz = static_cast<double>(rate) / static_cast<double>(nfft);

    // mean PSD per octave band between 100 Hz and Nyquist/2
    std::vector<double> level_db, octave;
    double lo = 100.0;
    int band = 0;
    while (lo * 2.0 <= rate / 4.0 + 1e-9) {
        const double hi = lo * 2.0;
        double acc = 0.0;
        int count = 0;
        for (std::size_t k = static_cast<std::size_t>(lo / bin_hz);
             k < static_cast<std::size_t>(hi / bin_hz); ++k) {
            acc += psd[k];
            ++count;
        }
        level_db.push_back(10.0 * std::log10(acc / count));
        octave.push_back(band);
        lo = hi;
        ++band;
    }
    ASSERT_GE(level_db.size(), 4u);

    // least-squares slope in dB per octave
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < octave.size(); ++i) {
        mx += octave[i];
        my += level_db[i];
    }
    mx /= static_cast<double>(octave.size());
    my /= static_cast<double>(octave.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < octave.size(); ++i) {
        num += (octave[i] - mx) * (level_db[i] - my);
        den += (octave[i] - mx) * (octave[i] - mx);
    }
    const double slope = num / den;
    EXPECT_NEAR(slope, -3.0, 1.0);
}

// --- manifests --------------------------------------------------------------

std::string write_manifest_file(const std::string& name, const std::string& content) {
    const std::string path = temp_path(name);
    std::ofstream out(path, std::ios::trunc);
    out << content;
    return path;
}

TEST(Manifest, EmptyFileHasNoCleanEntries) {
    const std::string path = write_manifest_file("empty.jsonl", "");
    try {
        rvq::load_manifest(path);
        FAIL() << "expected ConfigError";
    } catch (const rvq::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("no clean entries"), std::string::npos);
    }
}

TEST(Manifest, CleanWavPlusNoiseGenerator) {
    AudioSignal sig;
    sig.sample_rate = 16000;
    sig.samples.assign(64, 0.1);
    rvq::write_wav(sig, temp_path("m_utt.wav"));
    const std::string path = write_manifest_file(
        "mixed.jsonl",
        "{\"id\":\"utt\",\"role\":\"clean\",\"path\":\"m_utt.wav\"}\n"
        "{\"id\":\"n0\",\"role\":\"noise\",\"generator\":{\"kind\":\"white_noise\","
        "\"duration_s\":0.5,\"amplitude\":0.5}}\n");
    rvq::DatasetManifest m = rvq::load_manifest(path, 7);
    ASSERT_EQ(m.entries.size(), 2u);
    EXPECT_EQ(m.with_role(rvq::EntryRole::Clean).size(), 1u);
    EXPECT_EQ(m.with_role(rvq::EntryRole::Noise).size(), 1u);

    AudioSignal wav = rvq::materialize_entry(m, 0, 16000);
    EXPECT_EQ(wav.samples.size(), 64u);
    AudioSignal gen1 = rvq::materialize_entry(m, 1, 16000);
    AudioSignal gen2 = rvq::materialize_entry(m, 1, 16000);
    EXPECT_EQ(gen1.samples, gen2.samples);
    EXPECT_EQ(gen1.samples.size(), 8000u);
}

TEST(Manifest, DuplicateIdErrorNamesTheId) {
    const std::string path = write_manifest_file(
        "dup.jsonl",
        "{\"id\":\"same\",\"role\":\"clean\",\"generator\":{\"kind\":\"harmonic_tone\"}}\n"
        "{\"id\":\"same\",\"role\":\"clean\",\"generator\":{\"kind\":\"harmonic_tone\"}}\n");
    try {
        rvq::load_manifest(path);
        FAIL() << "expected ConfigError";
    } catch (const rvq::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("'same'"), std::string::npos);
    }
}

TEST(Manifest, UnknownGeneratorKind) {
    const std::string path = write_manifest_file(
        "unk.jsonl", "{\"id\":\"x\",\"role\":\"clean\",\"generator\":{\"kind\":\"brown_noise\"}}\n");
    EXPECT_THROW(rvq::load_manifest(path), rvq::ConfigError);
}

TEST(Manifest, MissingFileRejectedAtLoad) {
    const std::string path = write_manifest_file(
        "missing.jsonl", "{\"id\":\"x\",\"role\":\"clean\",\"path\":\"nope_not_here.wav\"}\n");
    EXPECT_THROW(rvq::load_manifest(path), rvq::ConfigError);
}

TEST(Manifest, PathAndGeneratorAreMutuallyExclusive) {
    const std::string path = write_manifest_file(
        "both.jsonl",
        "{\"id\":\"x\",\"role\":\"clean\",\"path\":\"a.wav\","
        "\"generator\":{\"kind\":\"white_noise\"}}\n");
    EXPECT_THROW(rvq::load_manifest(path), rvq::ConfigError);
}

} // namespace
