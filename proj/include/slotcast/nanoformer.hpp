#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotcast/tokens.hpp"

namespace nanoformer {

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class ModelError : public std::runtime_error {
  public:
    enum class Kind { BadToken, TooLong };
    ModelError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

class TrainError : public std::runtime_error {
  public:
    explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

class SampleError : public std::runtime_error {
  public:
    explicit SampleError(const std::string& what) : std::runtime_error(what) {}
};

// Separator never produced within the per-slot token budget. Carries the
// tokens sampled so far, so callers can still score the truncated slot.
class SlotOverflow : public SampleError {
  public:
    SlotOverflow(slottok::TokenSeq partial, const std::string& what)
        : SampleError(what), partial_(std::move(partial)) {}
    const slottok::TokenSeq& partial() const { return partial_; }

  private:
    slottok::TokenSeq partial_;
};

class EmptyMask : public SampleError {
  public:
    using SampleError::SampleError;
};

class CheckpointError : public std::runtime_error {
  public:
    enum class Kind { VersionMismatch, VocabMismatch, CorruptFile, Io };
    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

enum class Activation { Gelu };

struct ModelConfig {
    int context_len = 1024;
    int vocab = slottok::kVocabSize;
    int embed_dim = 8;
    int n_layers = 3;
    int n_heads = 8;
    int ff_dim = 32;  // 4 x embed
    Activation activation = Activation::Gelu;
    float dropout = 0.0f;
    bool tie_embeddings = true;

    int head_dim() const { return embed_dim / n_heads; }
    void validate() const;  // throws ConfigError

    bool operator==(const ModelConfig&) const = default;
};

// Offsets into the flat parameter buffer. Layout order (row-major, weights
// stored input-major so y = x * W):
//   wte [vocab x embed], wpe [context x embed],
//   per layer: ln1 gain/bias, Wqkv [embed x 3*embed] + bias,
//              Wo [embed x embed] + bias, ln2 gain/bias,
//              Wfc [embed x ff] + bias, Wproj [ff x embed] + bias,
//   final ln gain/bias, lm_head [vocab x embed] (absent when tied).
struct ParamLayout {
    struct Layer {
        std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, wfc, bfc, wproj, bproj;
    };

    explicit ParamLayout(const ModelConfig& cfg);

    std::size_t wte = 0, wpe = 0;
    std::vector<Layer> layers;
    std::size_t lnf_g = 0, lnf_b = 0;
    std::size_t lm_head = 0;  // == wte when tied
    std::size_t total = 0;
    std::size_t positional_count = 0;  // size of wpe

    // Parameter count reported for the model; position embeddings excluded.
    std::size_t trainable_count() const { return total - positional_count; }
};

template <class T>
struct Params {
    ModelConfig cfg;
    ParamLayout layout;
    std::vector<T> data;

    explicit Params(const ModelConfig& c) : cfg(c), layout(c), data(layout.total, T(0)) {}

    T* at(std::size_t offset) { return data.data() + offset; }
    const T* at(std::size_t offset) const { return data.data() + offset; }
};

// Deterministic initialization: normal(0, 0.02) for embeddings and weight
// matrices, zeros for biases, ones for normalization gains.
template <class T>
Params<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <class T>
Params<T> convert_params(const Params<float>& src);

// Full-sequence forward pass; returns next-token logits, len x vocab
// row-major. Causal: position i only attends to positions <= i.
template <class T>
std::vector<T> forward(const Params<T>& params, std::span<const int> tokens);

// Mean token-level cross-entropy over n_windows windows of window_len
// (targets are inputs shifted by one; both arrays are n_windows*window_len).
template <class T>
double batch_loss(const Params<T>& params, const int* inputs, const int* targets,
                  int n_windows, int window_len);

// Same, plus parameter gradients (reverse mode) accumulated into grads
// (resized/zeroed internally). Deterministic for a fixed thread count;
// windows are reduced in index order. dropout_seed feeds per-window masks
// when cfg.dropout > 0.
template <class T>
double loss_and_grads(const Params<T>& params, const int* inputs, const int* targets,
                      int n_windows, int window_len, std::vector<T>& grads, int threads = 1,
                      std::uint64_t dropout_seed = 0);

struct TrainConfig {
    long steps = 4000;          // optimizer steps of batch_windows sampled windows
    int batch_windows = 2048;   // windows per step, drawn with replacement
    int window_len = 0;         // 0 = model context length
    double learning_rate = 1e-3;
    int warmup_steps = 100;     // linear warmup, then cosine decay
    double min_lr_ratio = 0.1;  // cosine floor as a fraction of the base rate
    double beta1 = 0.9;
    double beta2 = 0.99;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;     // global L2 clip; <= 0 disables
    std::uint64_t seed = 0;
    double val_fraction = 0.2;  // contiguous tail split
    int val_interval = 50;      // steps between validation rows
    int val_max_windows = 32;
    int threads = 1;

    void validate() const;
};

struct TrainLogRow {
    long step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

using TrainReporter = std::function<void(const TrainLogRow&)>;

struct TrainResult {
    Params<float> params;  // best-validation checkpoint
    std::vector<TrainLogRow> history;
    long best_step = 0;
    double best_val_loss = 0.0;
    bool aborted_non_finite = false;
    std::vector<double> step_train_losses;  // one entry per optimizer step
};

// Next-token training on a contiguous token stream. The corpus is split
// contiguously into train/validation; each step samples batch_windows
// (input, target) windows with replacement from the train split.
TrainResult train(const Params<float>& initial, const slottok::TokenSeq& corpus,
                  const TrainConfig& tc, const TrainReporter& reporter = {});

struct SamplerConfig {
    enum class Mode { Multinomial, Greedy };

    double temperature = 1.0;
    Mode mode = Mode::Multinomial;
    std::uint64_t seed = 0;
    int max_tokens_per_slot = 256;

    void validate() const;
};

// Constrained-decoding hook: reports which tokens may come next and observes
// each emitted token. Implemented over the grammar automaton in synchk.
class TokenMaskProvider {
  public:
    virtual ~TokenMaskProvider() = default;
    virtual void allowed_tokens(std::span<char> allowed) = 0;  // size = vocab
    virtual void advance(int token) = 0;
};

struct SampleResult {
    slottok::TokenSeq tokens;                     // includes the final semicolon
    std::vector<std::array<float, 32>> prob_trace;  // sampling distribution per step
};

// Autoregressively samples one slot: appends tokens until the semicolon
// (inclusive) or throws SlotOverflow at the token budget. The context must end
// at a slot boundary (or be empty) and is truncated to the most recent
// context_len tokens. With a mask provider, disallowed tokens get probability
// zero and the rest renormalizes (EmptyMask if nothing survives).
SampleResult sample_slot(const Params<float>& params, std::span<const int> context,
                         const SamplerConfig& sc, TokenMaskProvider* mask = nullptr);

// Checkpoint file (little-endian): magic "SCKP", u32 version, config (u32
// context/vocab/embed/layers/heads/ff, u8 activation, f32 dropout, u8 tied),
// u64 vocab hash, u64 param count, f32 params, u64 FNV-1a of the param bytes.
void save_checkpoint(const Params<float>& params, const std::string& path);
Params<float> load_checkpoint(const std::string& path);

}  // namespace nanoformer
