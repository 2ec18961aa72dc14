#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rvq/codebook.hpp"
#include "rvq/errors.hpp"
#include "rvq/math.hpp"
#include "rvq/quantizer.hpp"
#include "rvq/rng.hpp"

namespace rvq {

inline constexpr double kDefaultCommitmentBeta = 0.25;

/// Per-frame affine codec: encoder projects an input frame to the latent
/// space, the residual quantizer discretizes it, the decoder projects the
/// quantized latent back. Small enough that every gradient is hand-derived
/// and checkable against finite differences.
struct ToyCodec {
    Matrix enc_w; // latent_dim x input_dim
    Vec enc_b;
    Matrix dec_w; // input_dim x latent_dim
    Vec dec_b;
    ResidualQuantizer rvq;
    double commitment_beta = kDefaultCommitmentBeta;

    std::size_t input_dim() const { return enc_w.cols; }
    std::size_t latent_dim() const { return enc_w.rows; }

    void check() const {
        rvq.check();
        if (enc_w.rows != rvq.dim() || dec_w.cols != rvq.dim() || dec_w.rows != enc_w.cols ||
            enc_b.size() != enc_w.rows || dec_b.size() != dec_w.rows)
            throw ConfigError("ToyCodec: inconsistent encoder/decoder/quantizer dimensions");
        if (commitment_beta < 0.0) throw ConfigError("ToyCodec: commitment_beta must be >= 0");
    }

    Vec encode(const Vec& x) const { return affine(enc_w, enc_b, x); }
    Vec decode_latent(const Vec& zhat) const { return affine(dec_w, dec_b, zhat); }

    bool operator==(const ToyCodec&) const = default;
};

/// Stage-by-stage k-means on the residual stream of a feature sample; the
/// usual way to give an RVQ a sane starting point before any training.
inline ResidualQuantizer init_rvq_kmeans(const std::vector<Vec>& features, std::size_t n_stages,
                                         std::size_t codebook_size, int max_iters,
                                         std::uint64_t seed) {
    if (n_stages < 1) throw ConfigError("init_rvq_kmeans: need at least one stage");
    ResidualQuantizer rvq;
    std::vector<Vec> residuals = features;
    for (std::size_t s = 0; s < n_stages; ++s) {
        Rng stage_seed = Rng::seeded(seed).split(s);
        Codebook cb = init_kmeans(residuals, codebook_size, max_iters, stage_seed.next_u64());
        for (Vec& r : residuals) {
            const Candidate c = nearest_codeword(r, cb);
            sub_in_place(r, cb.entries[c.index]);
        }
        rvq.stages.push_back(std::move(cb));
    }
    return rvq;
}

/// Fresh codec with a seeded random orthonormal encoder, the transposed
/// decoder (so the pipeline starts as a subspace projection), and codebooks
/// fitted to the encoder's outputs on `init_features`.
inline ToyCodec make_codec(std::size_t input_dim, std::size_t latent_dim, std::size_t n_stages,
                           std::size_t codebook_size, const std::vector<Vec>& init_features,
                           std::uint64_t seed, double commitment_beta = kDefaultCommitmentBeta) {
    if (input_dim < 1 || latent_dim < 1) throw ConfigError("make_codec: zero dimension");
    ToyCodec codec;
    codec.commitment_beta = commitment_beta;
    codec.enc_w = Matrix(latent_dim, input_dim);
    codec.enc_b.assign(latent_dim, 0.0);
    codec.dec_w = Matrix(input_dim, latent_dim);
    codec.dec_b.assign(input_dim, 0.0);

    Rng rng = Rng::seeded(seed);
    Rng enc_rng = rng.split(1);
    std::vector<Vec> rows(latent_dim, Vec(input_dim));
    for (Vec& row : rows)
        for (double& w : row) w = 2.0 * enc_rng.uniform() - 1.0;
    // Gram-Schmidt; rows past input_dim (or degenerate ones) fall back to
    // plain normalization.
    for (std::size_t r = 0; r < latent_dim; ++r) {
        for (std::size_t p = 0; p < r; ++p) axpy(-dot(rows[r], rows[p]), rows[p], rows[r]);
        double n = l2_norm(rows[r]);
        if (n < 1e-9) {
            for (double& w : rows[r]) w = 2.0 * enc_rng.uniform() - 1.0;
            n = l2_norm(rows[r]);
        }
        for (double& w : rows[r]) w /= n;
    }
    for (std::size_t r = 0; r < latent_dim; ++r)
        for (std::size_t c = 0; c < input_dim; ++c) {
            codec.enc_w(r, c) = rows[r][c];
            codec.dec_w(c, r) = rows[r][c];
        }

    if (init_features.empty()) throw ConfigError("make_codec: empty init feature sample");
    std::vector<Vec> latents;
    latents.reserve(init_features.size());
    for (const Vec& x : init_features) {
        if (x.size() != input_dim) throw ConfigError("make_codec: init feature dimension mismatch");
        latents.push_back(codec.encode(x));
    }
    Rng cb_rng = rng.split(3);
    codec.rvq = init_rvq_kmeans(latents, n_stages, codebook_size, kDefaultKmeansIters,
                                cb_rng.next_u64());
    codec.check();
    return codec;
}

struct LossBreakdown {
    double total = 0.0;
    double reconstruction = 0.0;
    double commitment = 0.0;
};

struct CodecGrads {
    Matrix enc_w;
    Vec enc_b;
    Matrix dec_w;
    Vec dec_b;
};

/// Everything produced by one forward pass over a batch. `grad_quantized[b]`
/// is the loss gradient at the decoder input and `grad_encoding[b]` the
/// gradient delivered to the encoder output: the straight-through estimator
/// copies the former into the latter, plus the commitment pull.
struct ForwardResult {
    std::vector<Vec> reconstructions;
    std::vector<QuantizationResult> quantized;
    std::vector<Vec> latents; // encoder outputs, before quantization
    LossBreakdown loss;
    CodecGrads grads;
    std::vector<Vec> grad_encoding;
    std::vector<Vec> grad_quantized;
};

/// Forward pass with loss
///   L = mean_b ||y_b - x_b||^2 + beta * mean_b ||z_b - zhat_b||^2
/// where the quantization step y = dec(zhat) is bridged by the
/// straight-through estimator. Each batch item draws from its own generator
/// stream derived from `rng`, so results do not depend on evaluation order.
inline ForwardResult forward(const ToyCodec& codec, const std::vector<Vec>& batch,
                             const QuantizerConfig& cfg, Rng& rng, bool want_grads = true) {
    codec.check();
    if (batch.empty()) throw ConfigError("forward: empty batch");
    const std::size_t b_n = batch.size();
    const std::size_t d_in = codec.input_dim();
    const std::size_t d_lat = codec.latent_dim();

    Rng batch_rng = rng.split(rng.next_u64());

    ForwardResult out;
    out.reconstructions.resize(b_n);
    out.quantized.resize(b_n);
    out.latents.resize(b_n);
    out.grad_encoding.resize(b_n);
    out.grad_quantized.resize(b_n);
    if (want_grads) {
        out.grads.enc_w = Matrix(d_lat, d_in);
        out.grads.enc_b.assign(d_lat, 0.0);
        out.grads.dec_w = Matrix(d_in, d_lat);
        out.grads.dec_b.assign(d_in, 0.0);
    }

    const double recon_norm = 1.0 / static_cast<double>(b_n);
    const double commit_norm = 1.0 / static_cast<double>(b_n);

    for (std::size_t b = 0; b < b_n; ++b) {
        const Vec& x = batch[b];
        if (x.size() != d_in) throw ConfigError("forward: batch item dimension mismatch");
        Vec z = codec.encode(x);
        Rng item_rng = batch_rng.split(b);
        QuantizationResult q = rvq_encode(z, codec.rvq, cfg, item_rng);
        Vec y = codec.decode_latent(q.quantized);

        for (std::size_t i = 0; i < d_in; ++i) {
            double e = y[i] - x[i];
            out.loss.reconstruction += e * e * recon_norm;
        }
        for (std::size_t j = 0; j < d_lat; ++j) {
            double e = z[j] - q.quantized[j];
            out.loss.commitment += e * e * commit_norm;
        }

        Vec gy(d_in);
        for (std::size_t i = 0; i < d_in; ++i) gy[i] = 2.0 * (y[i] - x[i]) * recon_norm;
        Vec gzhat = matvec_transpose(codec.dec_w, gy);
        Vec gz = gzhat; // straight-through: decoder gradient lands on the encoder output
        for (std::size_t j = 0; j < d_lat; ++j)
            gz[j] += codec.commitment_beta * 2.0 * (z[j] - q.quantized[j]) * commit_norm;

        if (want_grads) {
            accumulate_outer(out.grads.dec_w, gy, q.quantized);
            add_in_place(out.grads.dec_b, gy);
            accumulate_outer(out.grads.enc_w, gz, x);
            add_in_place(out.grads.enc_b, gz);
        }

        out.reconstructions[b] = std::move(y);
        out.quantized[b] = std::move(q);
        out.latents[b] = std::move(z);
        out.grad_encoding[b] = std::move(gz);
        out.grad_quantized[b] = std::move(gzhat);
    }

    out.loss.total = out.loss.reconstruction + codec.commitment_beta * out.loss.commitment;
    if (!std::isfinite(out.loss.total))
        throw DivergenceError("forward: non-finite loss");
    return out;
}

} // namespace rvq
