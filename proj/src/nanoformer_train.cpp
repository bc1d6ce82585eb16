#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "nanoformer_internal.hpp"
#include "slotcast/nanoformer.hpp"
#include "slotcast/rng.hpp"

namespace nanoformer {

namespace {

double lr_at_step(const TrainConfig& tc, long step) {
    const double base = tc.learning_rate;
    if (tc.warmup_steps > 0 && step <= tc.warmup_steps) {
        return base * static_cast<double>(step) / static_cast<double>(tc.warmup_steps);
    }
    const long decay_span = tc.steps - tc.warmup_steps;
    if (decay_span <= 0) return base;
    const double progress =
        static_cast<double>(step - tc.warmup_steps) / static_cast<double>(decay_span);
    const double floor = base * tc.min_lr_ratio;
    return floor + 0.5 * (base - floor) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace

TrainResult train(const Params<float>& initial, const slottok::TokenSeq& corpus,
                  const TrainConfig& tc, const TrainReporter& reporter) {
    tc.validate();
    const ModelConfig& cfg = initial.cfg;
    const int L = tc.window_len > 0 ? tc.window_len : cfg.context_len;
    if (L > cfg.context_len) throw ConfigError("window_len exceeds the model context length");
    if (L < 2) throw ConfigError("window_len must be >= 2");

    const std::size_t n = corpus.size();
    if (n <= static_cast<std::size_t>(L) + 1) {
        throw TrainError("corpus shorter than one training window plus target");
    }

    TrainResult result{initial, {}, 0, std::numeric_limits<double>::infinity(), false};
    if (tc.steps == 0) return result;

    const std::size_t train_len =
        std::max<std::size_t>(static_cast<std::size_t>(L) + 2,
                              static_cast<std::size_t>(static_cast<double>(n) *
                                                       (1.0 - tc.val_fraction)));
    if (train_len > n) throw TrainError("training split smaller than one window");

    // Fixed validation windows: non-overlapping, from the contiguous tail.
    std::vector<int> val_inputs, val_targets;
    int val_windows = 0;
    for (std::size_t start = train_len;
         start + static_cast<std::size_t>(L) + 1 <= n && val_windows < tc.val_max_windows;
         start += static_cast<std::size_t>(L)) {
        for (int j = 0; j < L; ++j) {
            val_inputs.push_back(corpus[start + static_cast<std::size_t>(j)]);
            val_targets.push_back(corpus[start + static_cast<std::size_t>(j) + 1]);
        }
        ++val_windows;
    }

    Params<float> params = initial;
    Params<float> last_good = initial;
    const std::size_t n_params = params.layout.total;
    std::vector<float> grads;
    std::vector<float> adam_m(n_params, 0.0f), adam_v(n_params, 0.0f);
    rng::Stream stream(tc.seed);

    std::vector<int> inputs(static_cast<std::size_t>(tc.batch_windows) * L);
    std::vector<int> targets(static_cast<std::size_t>(tc.batch_windows) * L);
    const std::uint64_t offset_bound = static_cast<std::uint64_t>(train_len) - L;

    bool have_best = false;
    result.history.clear();

    for (long step = 1; step <= tc.steps; ++step) {
        for (int b = 0; b < tc.batch_windows; ++b) {
            const std::size_t off = stream.next_below(offset_bound);
            for (int j = 0; j < L; ++j) {
                inputs[static_cast<std::size_t>(b) * L + j] = corpus[off + static_cast<std::size_t>(j)];
                targets[static_cast<std::size_t>(b) * L + j] =
                    corpus[off + static_cast<std::size_t>(j) + 1];
            }
        }

        const double train_loss =
            loss_and_grads(params, inputs.data(), targets.data(), tc.batch_windows, L, grads,
                           tc.threads, rng::derive_seed(tc.seed, 0x747261696eull + step));

        double sq_norm = 0.0;
        for (float gv : grads) sq_norm += static_cast<double>(gv) * gv;
        const double grad_norm = std::sqrt(sq_norm);

        if (!std::isfinite(train_loss) || !std::isfinite(grad_norm)) {
            result.aborted_non_finite = true;
            result.params = have_best ? result.params : last_good;
            return result;
        }
        last_good = params;

        float clip_scale = 1.0f;
        if (tc.clip_norm > 0.0 && grad_norm > tc.clip_norm) {
            clip_scale = static_cast<float>(tc.clip_norm / grad_norm);
        }

        const double lr = lr_at_step(tc, step);
        const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
        const float b1 = static_cast<float>(tc.beta1);
        const float b2 = static_cast<float>(tc.beta2);
        const float eps = static_cast<float>(tc.adam_eps);
        const float lr_hat = static_cast<float>(lr / bc1);
        const float vhat_scale = static_cast<float>(1.0 / bc2);
        for (std::size_t i = 0; i < n_params; ++i) {
            const float gv = grads[i] * clip_scale;
            adam_m[i] = b1 * adam_m[i] + (1.0f - b1) * gv;
            adam_v[i] = b2 * adam_v[i] + (1.0f - b2) * gv * gv;
            params.data[i] -=
                lr_hat * adam_m[i] / (std::sqrt(adam_v[i] * vhat_scale) + eps);
        }

        result.step_train_losses.push_back(train_loss);

        if (step % tc.val_interval == 0 || step == tc.steps) {
            double val_loss = std::numeric_limits<double>::quiet_NaN();
            if (val_windows > 0) {
                val_loss = batch_loss(params, val_inputs.data(), val_targets.data(), val_windows, L);
            }
            TrainLogRow row{step, train_loss, val_loss, lr};
            result.history.push_back(row);
            if (reporter) reporter(row);
            if (val_windows > 0 && std::isfinite(val_loss) && val_loss < result.best_val_loss) {
                result.best_val_loss = val_loss;
                result.best_step = step;
                result.params = params;
                have_best = true;
            }
        }
    }

    if (!have_best) {
        result.params = params;
        result.best_step = tc.steps;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace {

// Incremental single-token decoder with per-layer K/V caches. Valid while the
// absolute position stays below the model context length.
class Decoder {
  public:
    Decoder(const Params<float>& params, int capacity)
        : p_(params),
          cfg_(params.cfg),
          cap_(capacity),
          kcache_(static_cast<std::size_t>(cfg_.n_layers) * cfg_.n_heads * capacity *
                  cfg_.head_dim()),
          vcache_(kcache_.size()),
          x_(static_cast<std::size_t>(cfg_.embed_dim)),
          xhat_(x_.size()),
          anorm_(x_.size()),
          qkv_(static_cast<std::size_t>(3) * cfg_.embed_dim),
          att_(x_.size()),
          branch_(x_.size()),
          u_(static_cast<std::size_t>(cfg_.ff_dim)),
          logits_(static_cast<std::size_t>(cfg_.vocab)) {}

    int position() const { return pos_; }
    const std::vector<float>& logits() const { return logits_; }

    void feed(int token) {
        const int E = cfg_.embed_dim;
        const int H = cfg_.n_heads;
        const int D = cfg_.head_dim();
        const int F = cfg_.ff_dim;
        const int V = cfg_.vocab;
        const float scale = 1.0f / std::sqrt(static_cast<float>(D));
        const auto& lay = p_.layout;

        const float* te = p_.at(lay.wte) + static_cast<std::size_t>(token) * E;
        const float* pe = p_.at(lay.wpe) + static_cast<std::size_t>(pos_) * E;
        for (int e = 0; e < E; ++e) x_[static_cast<std::size_t>(e)] = te[e] + pe[e];

        for (int li = 0; li < cfg_.n_layers; ++li) {
            const auto& lw = lay.layers[static_cast<std::size_t>(li)];
            layer_norm_row(x_.data(), p_.at(lw.ln1_g), p_.at(lw.ln1_b));
            const float* wqkv = p_.at(lw.wqkv);
            const float* bqkv = p_.at(lw.bqkv);
            for (int c = 0; c < 3 * E; ++c) {
                float acc = bqkv[c];
                for (int e = 0; e < E; ++e) {
                    acc += anorm_[static_cast<std::size_t>(e)] *
                           wqkv[static_cast<std::size_t>(e) * 3 * E + c];
                }
                qkv_[static_cast<std::size_t>(c)] = acc;
            }
            for (int h = 0; h < H; ++h) {
                float* kdst = cache_at(kcache_, li, h, pos_);
                float* vdst = cache_at(vcache_, li, h, pos_);
                for (int d = 0; d < D; ++d) {
                    kdst[d] = qkv_[static_cast<std::size_t>(E + h * D + d)];
                    vdst[d] = qkv_[static_cast<std::size_t>(2 * E + h * D + d)];
                }
            }
            for (int h = 0; h < H; ++h) {
                const float* q = qkv_.data() + static_cast<std::size_t>(h) * D;
                float m = -std::numeric_limits<float>::infinity();
                for (int j = 0; j <= pos_; ++j) {
                    const float* kj = cache_at(kcache_, li, h, j);
                    float sdot = 0.0f;
                    for (int d = 0; d < D; ++d) sdot += q[d] * kj[d];
                    m = std::max(m, sdot * scale);
                }
                float z = 0.0f;
                float* out = att_.data() + static_cast<std::size_t>(h) * D;
                for (int d = 0; d < D; ++d) out[d] = 0.0f;
                for (int j = 0; j <= pos_; ++j) {
                    const float* kj = cache_at(kcache_, li, h, j);
                    float sdot = 0.0f;
                    for (int d = 0; d < D; ++d) sdot += q[d] * kj[d];
                    const float pw = detail::fast_expf(sdot * scale - m);
                    z += pw;
                    const float* vj = cache_at(vcache_, li, h, j);
                    for (int d = 0; d < D; ++d) out[d] += pw * vj[d];
                }
                for (int d = 0; d < D; ++d) out[d] /= z;
            }
            const float* wo = p_.at(lw.wo);
            const float* bo = p_.at(lw.bo);
            for (int eo = 0; eo < E; ++eo) {
                float acc = bo[eo];
                for (int e = 0; e < E; ++e) {
                    acc += att_[static_cast<std::size_t>(e)] * wo[static_cast<std::size_t>(e) * E + eo];
                }
                branch_[static_cast<std::size_t>(eo)] = acc;
            }
            for (int e = 0; e < E; ++e) x_[static_cast<std::size_t>(e)] += branch_[static_cast<std::size_t>(e)];

            layer_norm_row(x_.data(), p_.at(lw.ln2_g), p_.at(lw.ln2_b));
            const float* wfc = p_.at(lw.wfc);
            const float* bfc = p_.at(lw.bfc);
            for (int f = 0; f < F; ++f) {
                float acc = bfc[f];
                for (int e = 0; e < E; ++e) {
                    acc += anorm_[static_cast<std::size_t>(e)] * wfc[static_cast<std::size_t>(e) * F + f];
                }
                u_[static_cast<std::size_t>(f)] = detail::gelu(acc);
            }
            const float* wproj = p_.at(lw.wproj);
            const float* bproj = p_.at(lw.bproj);
            for (int e = 0; e < E; ++e) {
                float acc = bproj[e];
                for (int f = 0; f < F; ++f) {
                    acc += u_[static_cast<std::size_t>(f)] * wproj[static_cast<std::size_t>(f) * E + e];
                }
                x_[static_cast<std::size_t>(e)] += acc;
            }
        }

        layer_norm_row(x_.data(), p_.at(lay.lnf_g), p_.at(lay.lnf_b));
        const float* head = p_.at(lay.lm_head);
        for (int v = 0; v < V; ++v) {
            float acc = 0.0f;
            const float* hrow = head + static_cast<std::size_t>(v) * E;
            for (int e = 0; e < E; ++e) acc += anorm_[static_cast<std::size_t>(e)] * hrow[e];
            logits_[static_cast<std::size_t>(v)] = acc;
        }
        ++pos_;
    }

  private:
    float* cache_at(std::vector<float>& cache, int li, int h, int pos) {
        const int D = cfg_.head_dim();
        return cache.data() +
               ((static_cast<std::size_t>(li) * cfg_.n_heads + h) * cap_ + pos) * D;
    }

    void layer_norm_row(const float* in, const float* gain, const float* bias) {
        const int E = cfg_.embed_dim;
        float mean = 0.0f;
        for (int e = 0; e < E; ++e) mean += in[e];
        mean /= static_cast<float>(E);
        float var = 0.0f;
        for (int e = 0; e < E; ++e) {
            float d = in[e] - mean;
            var += d * d;
        }
        var /= static_cast<float>(E);
        float rstd = 1.0f / std::sqrt(var + 1e-5f);
        for (int e = 0; e < E; ++e) {
            xhat_[static_cast<std::size_t>(e)] = (in[e] - mean) * rstd;
            anorm_[static_cast<std::size_t>(e)] =
                xhat_[static_cast<std::size_t>(e)] * gain[e] + bias[e];
        }
    }

    const Params<float>& p_;
    const ModelConfig& cfg_;
    int cap_;
    int pos_ = 0;
    std::vector<float> kcache_, vcache_;
    std::vector<float> x_, xhat_, anorm_, qkv_, att_, branch_, u_, logits_;
};

}  // namespace

SampleResult sample_slot(const Params<float>& params, std::span<const int> context,
                         const SamplerConfig& sc, TokenMaskProvider* mask) {
    sc.validate();
    const ModelConfig& cfg = params.cfg;
    const int V = cfg.vocab;

    // Keep only the most recent context window.
    std::span<const int> ctx = context;
    if (ctx.size() > static_cast<std::size_t>(cfg.context_len)) {
        ctx = ctx.subspan(ctx.size() - static_cast<std::size_t>(cfg.context_len));
    }
    for (int t : ctx) {
        if (t < 0 || t >= V) throw ModelError(ModelError::Kind::BadToken, "bad context token");
    }

    const int budget = sc.max_tokens_per_slot;
    const bool cached =
        ctx.size() + static_cast<std::size_t>(budget) <= static_cast<std::size_t>(cfg.context_len);

    rng::Stream stream(sc.seed);
    SampleResult res;
    std::vector<char> allowed(static_cast<std::size_t>(V), 1);
    std::vector<double> probs(static_cast<std::size_t>(V), 0.0);
    std::vector<int> sliding(ctx.begin(), ctx.end());  // used when !cached

    Decoder decoder(params, cfg.context_len);
    std::vector<float> logits(static_cast<std::size_t>(V), 0.0f);
    bool have_logits = false;
    if (cached) {
        for (int t : ctx) decoder.feed(t);
        if (!ctx.empty()) {
            logits = decoder.logits();
            have_logits = true;
        }
    } else if (!ctx.empty()) {
        std::vector<float> all = forward(params, ctx);
        std::copy(all.end() - V, all.end(), logits.begin());
        have_logits = true;
    }

    while (true) {
        // Sampling distribution: temperature softmax over the latest logits,
        // uniform before the first input token exists.
        if (have_logits) {
            double m = -std::numeric_limits<double>::infinity();
            for (int v = 0; v < V; ++v) {
                m = std::max(m, static_cast<double>(logits[static_cast<std::size_t>(v)]) /
                                    sc.temperature);
            }
            double z = 0.0;
            for (int v = 0; v < V; ++v) {
                double e = std::exp(static_cast<double>(logits[static_cast<std::size_t>(v)]) /
                                        sc.temperature -
                                    m);
                probs[static_cast<std::size_t>(v)] = e;
                z += e;
            }
            for (double& p : probs) p /= z;
        } else {
            std::fill(probs.begin(), probs.end(), 1.0 / V);
        }

        if (mask) {
            mask->allowed_tokens(allowed);
            double z = 0.0;
            for (int v = 0; v < V; ++v) {
                if (!allowed[static_cast<std::size_t>(v)]) probs[static_cast<std::size_t>(v)] = 0.0;
                z += probs[static_cast<std::size_t>(v)];
            }
            if (!(z > 0.0)) {
                throw EmptyMask("grammar mask eliminated every token");
            }
            for (double& p : probs) p /= z;
        }

        std::array<float, 32> trace{};
        for (int v = 0; v < std::min(V, 32); ++v) {
            trace[static_cast<std::size_t>(v)] = static_cast<float>(probs[static_cast<std::size_t>(v)]);
        }
        res.prob_trace.push_back(trace);

        int picked = -1;
        if (sc.mode == SamplerConfig::Mode::Greedy) {
            double best = -1.0;
            for (int v = 0; v < V; ++v) {
                if (probs[static_cast<std::size_t>(v)] > best) {
                    best = probs[static_cast<std::size_t>(v)];
                    picked = v;
                }
            }
        } else {
            const double u = stream.next_unit();
            double cum = 0.0;
            for (int v = 0; v < V; ++v) {
                const double p = probs[static_cast<std::size_t>(v)];
                if (p <= 0.0) continue;
                cum += p;
                picked = v;
                if (u < cum) break;
            }
        }
        if (picked < 0) throw SampleError("sampling produced no token");

        res.tokens.push_back(picked);
        if (mask) mask->advance(picked);
        if (picked == slottok::TOK_SEMICOLON) return res;
        if (static_cast<int>(res.tokens.size()) >= budget) {
            std::ostringstream err;
            err << "no separator within " << budget << " tokens";
            throw SlotOverflow(res.tokens, err.str());
        }

        if (cached) {
            decoder.feed(picked);
            logits = decoder.logits();
        } else {
            sliding.push_back(picked);
            const std::size_t take =
                std::min(sliding.size(), static_cast<std::size_t>(cfg.context_len));
            std::span<const int> window(sliding.data() + (sliding.size() - take), take);
            std::vector<float> all = forward(params, window);
            std::copy(all.end() - V, all.end(), logits.begin());
        }
        have_logits = true;
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'S', 'C', 'K', 'P'};
constexpr std::uint32_t kCkptVersion = 1;

std::uint64_t fnv1a(const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <class T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
bool read_pod(std::istream& in, T& value) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return in.gcount() == static_cast<std::streamsize>(sizeof(T));
}

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
    throw CheckpointError(CheckpointError::Kind::CorruptFile,
                          "corrupt checkpoint " + path + ": " + why);
}

}  // namespace

void save_checkpoint(const Params<float>& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CheckpointError(CheckpointError::Kind::Io, "cannot open for writing: " + path);
    }
    out.write(kCkptMagic, sizeof(kCkptMagic));
    write_pod(out, kCkptVersion);
    const ModelConfig& cfg = params.cfg;
    write_pod(out, static_cast<std::uint32_t>(cfg.context_len));
    write_pod(out, static_cast<std::uint32_t>(cfg.vocab));
    write_pod(out, static_cast<std::uint32_t>(cfg.embed_dim));
    write_pod(out, static_cast<std::uint32_t>(cfg.n_layers));
    write_pod(out, static_cast<std::uint32_t>(cfg.n_heads));
    write_pod(out, static_cast<std::uint32_t>(cfg.ff_dim));
    write_pod(out, static_cast<std::uint8_t>(cfg.activation));
    write_pod(out, cfg.dropout);
    write_pod(out, static_cast<std::uint8_t>(cfg.tie_embeddings ? 1 : 0));
    write_pod(out, slottok::vocab_hash());
    write_pod(out, static_cast<std::uint64_t>(params.data.size()));
    out.write(reinterpret_cast<const char*>(params.data.data()),
              static_cast<std::streamsize>(params.data.size() * sizeof(float)));
    write_pod(out, fnv1a(params.data.data(), params.data.size() * sizeof(float)));
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "failed writing: " + path);
}

Params<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open: " + path);

    char magic[sizeof(kCkptMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
        corrupt(path, "bad magic");
    }
    std::uint32_t version = 0;
    if (!read_pod(in, version)) corrupt(path, "truncated header");
    if (version != kCkptVersion) {
        std::ostringstream err;
        err << "checkpoint " << path << " has format version " << version << ", expected "
            << kCkptVersion;
        throw CheckpointError(CheckpointError::Kind::VersionMismatch, err.str());
    }

    std::uint32_t context = 0, vocab = 0, embed = 0, layers = 0, heads = 0, ff = 0;
    std::uint8_t activation = 0, tied = 0;
    float dropout = 0.0f;
    std::uint64_t vhash = 0, count = 0;
    if (!read_pod(in, context) || !read_pod(in, vocab) || !read_pod(in, embed) ||
        !read_pod(in, layers) || !read_pod(in, heads) || !read_pod(in, ff) ||
        !read_pod(in, activation) || !read_pod(in, dropout) || !read_pod(in, tied) ||
        !read_pod(in, vhash) || !read_pod(in, count)) {
        corrupt(path, "truncated header");
    }
    if (vhash != slottok::vocab_hash()) {
        throw CheckpointError(CheckpointError::Kind::VocabMismatch,
                              "checkpoint " + path + " was built for a different vocabulary");
    }

    ModelConfig cfg;
    cfg.context_len = static_cast<int>(context);
    cfg.vocab = static_cast<int>(vocab);
    cfg.embed_dim = static_cast<int>(embed);
    cfg.n_layers = static_cast<int>(layers);
    cfg.n_heads = static_cast<int>(heads);
    cfg.ff_dim = static_cast<int>(ff);
    cfg.activation = static_cast<Activation>(activation);
    cfg.dropout = dropout;
    cfg.tie_embeddings = tied != 0;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        corrupt(path, e.what());
    }

    Params<float> params(cfg);
    if (count != params.layout.total) corrupt(path, "parameter count does not match config");
    in.read(reinterpret_cast<char*>(params.data.data()),
            static_cast<std::streamsize>(params.data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(params.data.size() * sizeof(float))) {
        corrupt(path, "truncated parameters");
    }
    std::uint64_t stored_hash = 0;
    if (!read_pod(in, stored_hash)) corrupt(path, "missing content hash");
    if (stored_hash != fnv1a(params.data.data(), params.data.size() * sizeof(float))) {
        corrupt(path, "content hash mismatch");
    }
    char extra;
    if (in.read(&extra, 1)) corrupt(path, "trailing bytes");
    return params;
}

}  // namespace nanoformer
