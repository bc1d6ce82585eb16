#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "slotcast/nanoformer.hpp"

namespace nanoformer {
namespace detail {

// exp(x) for x <= 0 (softmax operands after max subtraction). Degree-7
// polynomial for 2^f plus an exponent bit splice; relative error ~1e-6,
// auto-vectorizes under -O3.
inline float fast_expf(float x) {
    if (x < -87.0f) return 0.0f;
    float t = x * 1.4426950408889634f;  // x / ln 2
    float fi = std::floor(t);
    float f = t - fi;
    int i = static_cast<int>(fi);
    float p = 1.0f +
              f * (0.6931471805599453f +
                   f * (0.2402265069591007f +
                        f * (0.05550410866482158f +
                             f * (0.009618129107628477f +
                                  f * (0.001333355814642844f +
                                       f * (0.0001540353039338161f + f * 1.525273380405984e-05f))))));
    std::uint32_t bits = static_cast<std::uint32_t>(i + 127) << 23;
    float s;
    std::memcpy(&s, &bits, sizeof(s));
    return p * s;
}

template <class T>
struct num;

template <>
struct num<float> {
    static float exp(float x) { return fast_expf(x); }
};

template <>
struct num<double> {
    static double exp(double x) { return std::exp(x); }
};

template <class T>
inline T gelu(T u) {
    const T c0 = T(0.7978845608028654);  // sqrt(2/pi)
    const T c1 = T(0.044715);
    T t = std::tanh(c0 * (u + c1 * u * u * u));
    return T(0.5) * u * (T(1) + t);
}

template <class T>
inline T gelu_grad(T u) {
    const T c0 = T(0.7978845608028654);
    const T c1 = T(0.044715);
    T t = std::tanh(c0 * (u + c1 * u * u * u));
    T du = c0 * (T(1) + T(3) * c1 * u * u);
    return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * du;
}

// Per-window activation storage; reused across windows by one thread.
template <class T>
struct Scratch {
    struct Layer {
        std::vector<T> x_in;    // L x E, residual stream at layer entry
        std::vector<T> xhat1;   // L x E, pre-gain LN1 output
        std::vector<T> ln1_mean, ln1_rstd;
        std::vector<T> q, k, v;  // head-major: [H][L x D]
        std::vector<T> amax, adenom;  // H x L softmax row stats
        std::vector<T> atto;    // L x E merged attention output
        std::vector<T> x_mid;   // L x E, after attention residual
        std::vector<T> xhat2;
        std::vector<T> ln2_mean, ln2_rstd;
        std::vector<T> u;     // L x F pre-activation
        std::vector<T> gact;  // L x F post-GELU
        std::vector<std::uint8_t> drop_attn, drop_mlp;  // L x E keep masks
    };

    std::vector<Layer> layers;
    std::vector<T> x;  // L x E residual stream
    std::vector<T> xhatf, fnorm;
    std::vector<T> lnf_mean, lnf_rstd;
    std::vector<T> logits;  // L x V
    std::vector<std::uint8_t> drop_emb;

    // forward temporaries
    std::vector<T> norm_tmp;  // L x E, post-gain LN output
    std::vector<T> row_tmp;   // 3E

    // backward temporaries
    std::vector<T> dx, dbranch, datto, dq, dk, dv;
    std::vector<T> du, dg;
    std::vector<T> dlogits;
    std::vector<T> probs_row;
    std::vector<T> arow_p, arow_dp;  // length L attention rows

    void resize(const ModelConfig& cfg, int L) {
        const std::size_t le = static_cast<std::size_t>(L) * cfg.embed_dim;
        const std::size_t lf = static_cast<std::size_t>(L) * cfg.ff_dim;
        const std::size_t lh = static_cast<std::size_t>(L) * cfg.n_heads;
        layers.resize(static_cast<std::size_t>(cfg.n_layers));
        for (auto& l : layers) {
            l.x_in.resize(le);
            l.xhat1.resize(le);
            l.ln1_mean.resize(static_cast<std::size_t>(L));
            l.ln1_rstd.resize(static_cast<std::size_t>(L));
            l.q.resize(le);
            l.k.resize(le);
            l.v.resize(le);
            l.amax.resize(lh);
            l.adenom.resize(lh);
            l.atto.resize(le);
            l.x_mid.resize(le);
            l.xhat2.resize(le);
            l.ln2_mean.resize(static_cast<std::size_t>(L));
            l.ln2_rstd.resize(static_cast<std::size_t>(L));
            l.u.resize(lf);
            l.gact.resize(lf);
            if (cfg.dropout > 0.0f) {
                l.drop_attn.resize(le);
                l.drop_mlp.resize(le);
            }
        }
        x.resize(le);
        xhatf.resize(le);
        fnorm.resize(le);
        lnf_mean.resize(static_cast<std::size_t>(L));
        lnf_rstd.resize(static_cast<std::size_t>(L));
        logits.resize(static_cast<std::size_t>(L) * cfg.vocab);
        if (cfg.dropout > 0.0f) drop_emb.resize(le);
        norm_tmp.resize(le);
        row_tmp.resize(static_cast<std::size_t>(3) * cfg.embed_dim);
        dx.resize(le);
        dbranch.resize(le);
        datto.resize(le);
        dq.resize(le);
        dk.resize(le);
        dv.resize(le);
        du.resize(lf);
        dg.resize(lf);
        dlogits.resize(static_cast<std::size_t>(L) * cfg.vocab);
        probs_row.resize(static_cast<std::size_t>(cfg.vocab));
        arow_p.resize(static_cast<std::size_t>(L));
        arow_dp.resize(static_cast<std::size_t>(L));
    }
};

// Runs the forward pass for one window, filling scratch. dropout_seed is used
// only when cfg.dropout > 0 and apply_dropout is set (training mode).
template <class T>
void window_forward(const Params<T>& params, const int* tokens, int L, Scratch<T>& s,
                    bool apply_dropout, std::uint64_t dropout_seed);

// Mean cross-entropy of the window given targets; adds per-position losses
// into loss_sum (64-bit) and, when grads != nullptr, accumulates parameter
// gradients scaled by inv_positions.
template <class T>
void window_loss_and_backward(const Params<T>& params, const int* tokens, const int* targets,
                              int L, Scratch<T>& s, double inv_positions, double& loss_sum,
                              std::vector<T>* grads);

// Optional forward introspection used by tests: attention probability row
// sums for every (layer, head, position).
template <class T>
std::vector<T> attention_row_sums(const Params<T>& params, std::span<const int> tokens);

void check_tokens(const ModelConfig& cfg, std::span<const int> tokens);

}  // namespace detail
}  // namespace nanoformer
