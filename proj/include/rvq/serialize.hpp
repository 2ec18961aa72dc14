#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvq/codec.hpp"
#include "rvq/codebook.hpp"
#include "rvq/errors.hpp"
#include "rvq/quantizer.hpp"

namespace rvq {

// Binary container layout (all little-endian):
//   codebook   "RVQC" u32 version, u32 dim, u32 size, f64 decay,
//              size*dim f32 entries, size f64 ema_counts, size*dim f64 ema_sums
//   quantizer  "RVQR" u32 version, u32 stage count, stage codebooks
//   checkpoint "RVQM" u32 version, u32 input_dim, u32 latent_dim,
//              f64 commitment_beta, encoder W/b (f64), decoder W/b (f64),
//              embedded quantizer, config snapshot JSON (u64 length + bytes),
//              rng key/counter (u64 x2)
inline constexpr std::uint32_t kCodebookFormatVersion = 1;
inline constexpr std::uint32_t kQuantizerFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

namespace detail {

struct Writer {
    std::ofstream out;
    explicit Writer(const std::string& path) : out(path, std::ios::binary | std::ios::trunc) {
        if (!out) throw IoError("cannot open " + path + " for writing");
    }
    void bytes(const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f32(float v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    void magic(const char* m) { bytes(m, 4); }
    void finish(const std::string& path) {
        out.flush();
        if (!out) throw IoError("short write to " + path);
    }
};

struct Reader {
    std::ifstream in;
    std::string path;
    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError("cannot open " + p);
    }
    void bytes(void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in) throw ConfigError("truncated file " + path);
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    float f32() {
        float v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    void expect_magic(const char* m) {
        char got[4];
        bytes(got, 4);
        if (std::memcmp(got, m, 4) != 0)
            throw ConfigError(path + ": bad magic, expected '" + std::string(m, 4) + "'");
    }
};

inline void write_codebook_body(Writer& w, const Codebook& cb) {
    w.magic("RVQC");
    w.u32(kCodebookFormatVersion);
    w.u32(static_cast<std::uint32_t>(cb.dim));
    w.u32(static_cast<std::uint32_t>(cb.size()));
    w.f64(cb.decay);
    for (const Vec& e : cb.entries)
        for (double v : e) w.f32(static_cast<float>(v));
    for (double c : cb.ema_counts) w.f64(c);
    for (const Vec& s : cb.ema_sums)
        for (double v : s) w.f64(v);
}

inline Codebook read_codebook_body(Reader& r) {
    r.expect_magic("RVQC");
    std::uint32_t version = r.u32();
    if (version != kCodebookFormatVersion)
        throw ConfigError(r.path + ": unsupported codebook format version " +
                          std::to_string(version));
    Codebook cb;
    cb.dim = r.u32();
    std::uint32_t m = r.u32();
    cb.decay = r.f64();
    if (cb.dim == 0 || m == 0) throw ConfigError(r.path + ": degenerate codebook header");
    cb.entries.assign(m, Vec(cb.dim));
    for (Vec& e : cb.entries)
        for (double& v : e) v = static_cast<double>(r.f32());
    cb.ema_counts.resize(m);
    for (double& c : cb.ema_counts) c = r.f64();
    cb.ema_sums.assign(m, Vec(cb.dim));
    for (Vec& s : cb.ema_sums)
        for (double& v : s) v = r.f64();
    return cb;
}

inline void write_rvq_body(Writer& w, const ResidualQuantizer& rvq) {
    w.magic("RVQR");
    w.u32(kQuantizerFormatVersion);
    w.u32(static_cast<std::uint32_t>(rvq.num_stages()));
    for (const Codebook& cb : rvq.stages) write_codebook_body(w, cb);
}

inline ResidualQuantizer read_rvq_body(Reader& r) {
    r.expect_magic("RVQR");
    std::uint32_t version = r.u32();
    if (version != kQuantizerFormatVersion)
        throw ConfigError(r.path + ": unsupported quantizer format version " +
                          std::to_string(version));
    std::uint32_t n = r.u32();
    ResidualQuantizer rvq;
    for (std::uint32_t i = 0; i < n; ++i) rvq.stages.push_back(read_codebook_body(r));
    rvq.check();
    return rvq;
}

inline void write_matrix(Writer& w, const Matrix& m) {
    w.u32(static_cast<std::uint32_t>(m.rows));
    w.u32(static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) w.f64(v);
}

inline Matrix read_matrix(Reader& r) {
    std::uint32_t rows = r.u32();
    std::uint32_t cols = r.u32();
    Matrix m(rows, cols);
    for (double& v : m.data) v = r.f64();
    return m;
}

inline void write_vec(Writer& w, const Vec& v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) w.f64(x);
}

inline Vec read_vec(Reader& r) {
    std::uint32_t n = r.u32();
    Vec v(n);
    for (double& x : v) x = r.f64();
    return v;
}

} // namespace detail

inline void save_codebook(const Codebook& cb, const std::string& path) {
    detail::Writer w(path);
    detail::write_codebook_body(w, cb);
    w.finish(path);
}

inline Codebook load_codebook(const std::string& path) {
    detail::Reader r(path);
    return detail::read_codebook_body(r);
}

/// Lossless JSON mirror of the binary codebook, for debugging and diffing.
inline nlohmann::json codebook_to_json(const Codebook& cb) {
    nlohmann::json j;
    j["format_version"] = kCodebookFormatVersion;
    j["dim"] = cb.dim;
    j["size"] = cb.size();
    j["decay"] = cb.decay;
    j["entries"] = cb.entries;
    j["ema_counts"] = cb.ema_counts;
    j["ema_sums"] = cb.ema_sums;
    return j;
}

inline Codebook codebook_from_json(const nlohmann::json& j) {
    Codebook cb;
    cb.dim = j.at("dim").get<std::size_t>();
    cb.decay = j.at("decay").get<double>();
    cb.entries = j.at("entries").get<std::vector<Vec>>();
    cb.ema_counts = j.at("ema_counts").get<std::vector<double>>();
    cb.ema_sums = j.at("ema_sums").get<std::vector<Vec>>();
    return cb;
}

inline void save_rvq(const ResidualQuantizer& rvq, const std::string& path) {
    detail::Writer w(path);
    detail::write_rvq_body(w, rvq);
    w.finish(path);
}

inline ResidualQuantizer load_rvq(const std::string& path) {
    detail::Reader r(path);
    return detail::read_rvq_body(r);
}

/// Trained model plus the config snapshot and generator state needed to
/// reproduce or resume the run that made it.
struct Checkpoint {
    ToyCodec codec;
    nlohmann::json config_snapshot;
    std::uint64_t rng_key = 0;
    std::uint64_t rng_counter = 0;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    detail::Writer w(path);
    w.magic("RVQM");
    w.u32(kCheckpointFormatVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.codec.input_dim()));
    w.u32(static_cast<std::uint32_t>(ckpt.codec.latent_dim()));
    w.f64(ckpt.codec.commitment_beta);
    detail::write_matrix(w, ckpt.codec.enc_w);
    detail::write_vec(w, ckpt.codec.enc_b);
    detail::write_matrix(w, ckpt.codec.dec_w);
    detail::write_vec(w, ckpt.codec.dec_b);
    detail::write_rvq_body(w, ckpt.codec.rvq);
    const std::string snapshot = ckpt.config_snapshot.dump();
    w.u64(snapshot.size());
    w.bytes(snapshot.data(), snapshot.size());
    w.u64(ckpt.rng_key);
    w.u64(ckpt.rng_counter);
    w.finish(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    detail::Reader r(path);
    r.expect_magic("RVQM");
    std::uint32_t version = r.u32();
    if (version != kCheckpointFormatVersion)
        throw ConfigError(path + ": unsupported checkpoint format version " +
                          std::to_string(version));
    Checkpoint ckpt;
    std::uint32_t input_dim = r.u32();
    std::uint32_t latent_dim = r.u32();
    ckpt.codec.commitment_beta = r.f64();
    ckpt.codec.enc_w = detail::read_matrix(r);
    ckpt.codec.enc_b = detail::read_vec(r);
    ckpt.codec.dec_w = detail::read_matrix(r);
    ckpt.codec.dec_b = detail::read_vec(r);
    ckpt.codec.rvq = detail::read_rvq_body(r);
    if (ckpt.codec.input_dim() != input_dim || ckpt.codec.latent_dim() != latent_dim)
        throw ConfigError(path + ": checkpoint header disagrees with payload dimensions");
    std::uint64_t snapshot_len = r.u64();
    std::string snapshot(snapshot_len, '\0');
    if (snapshot_len > 0) r.bytes(snapshot.data(), snapshot_len);
    ckpt.config_snapshot = snapshot.empty() ? nlohmann::json::object()
                                            : nlohmann::json::parse(snapshot);
    ckpt.rng_key = r.u64();
    ckpt.rng_counter = r.u64();
    ckpt.codec.check();
    return ckpt;
}

/// Token stream: row-major (frame-major) u32 codeword indices.
inline void save_tokens(const std::vector<std::vector<std::uint32_t>>& frames,
                        const std::string& path) {
    detail::Writer w(path);
    for (const auto& frame : frames)
        for (std::uint32_t t : frame) w.u32(t);
    w.finish(path);
}

inline std::vector<std::vector<std::uint32_t>> load_tokens(const std::string& path,
                                                           std::size_t n_stages,
                                                           std::size_t n_frames) {
    detail::Reader r(path);
    std::vector<std::vector<std::uint32_t>> frames(n_frames,
                                                   std::vector<std::uint32_t>(n_stages));
    for (auto& frame : frames)
        for (std::uint32_t& t : frame) t = r.u32();
    return frames;
}

} // namespace rvq
