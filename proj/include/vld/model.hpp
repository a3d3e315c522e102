#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vld/data.hpp"
#include "vld/tape.hpp"
#include "vld/tensor.hpp"

namespace vld {

enum class Pooling { CLS, SEP, AVG };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s); // throws ConfigError

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int hidden_dim = 32;
    int ffn_dim = 64;
    int vocab_size = 128;
    int feat_dim = 32;
    int max_positions = 64;
    int n_segments = 2;
    Pooling pooling = Pooling::AVG;

    void validate() const; // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

// One parameter set serves both modalities; there are no per-tower copies.
struct ModelWeights {
    ModelConfig config;
    Tensor tok_emb;     // [vocab x hidden]
    Tensor pos_emb;     // [max_positions x hidden]
    Tensor seg_emb;     // [n_segments x hidden]
    Tensor region_proj; // [feat_dim x hidden]
    Tensor emb_ln_g, emb_ln_b;
    std::vector<LayerWeights> layers;
    Tensor final_g, final_b;   // closing layer norm after the block stack
    Tensor pooler_w, pooler_b; // [hidden x hidden], [hidden]
    Tensor head_w, head_b;     // [hidden x 1], [1]: joint alignment head

    // Gaussian(0, 0.02) matrices, zero biases, unit layer-norm gains.
    static ModelWeights init(const ModelConfig& cfg, unsigned seed);

    // Visits every parameter exactly once in the fixed serialization order:
    // tok_emb, pos_emb, seg_emb, region_proj, emb_ln_g, emb_ln_b, then per
    // layer (ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1,
    // b1, w2, b2), then final_g, final_b, pooler_w, pooler_b, head_w, head_b.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

    int param_count() const;
    bool all_finite() const;
};

// FNV-1a over all parameter bytes in for_each order.
uint64_t params_checksum(const ModelWeights& w);

// Binary checkpoint: magic VLDW, u32 version, config fields, then raw
// little-endian f32 parameters in for_each order.
void save_checkpoint(const std::string& path, const ModelWeights& w);
ModelWeights load_checkpoint(const std::string& path);
// Throws ConfigError when the stored config differs from `expected`.
ModelWeights load_checkpoint(const std::string& path, const ModelConfig& expected);

// Model parameters bound onto a tape, mirroring ModelWeights field for field.
struct BoundLayer {
    Value ln1_g, ln1_b;
    Value wq, bq, wk, bk, wv, bv, wo, bo;
    Value ln2_g, ln2_b;
    Value w1, b1, w2, b2;
};

struct BoundWeights {
    ModelConfig config;
    Value tok_emb, pos_emb, seg_emb, region_proj, emb_ln_g, emb_ln_b;
    std::vector<BoundLayer> layers;
    Value final_g, final_b, pooler_w, pooler_b, head_w, head_b;

    // Same fixed order as ModelWeights::for_each.
    void for_each(const std::function<void(const std::string&, Value)>& fn) const;
};

// Creates one tape node per parameter. trainable=false binds constants; the
// first freeze_layers transformer blocks are always bound as constants.
BoundWeights bind(Tape& tape, const ModelWeights& w, bool trainable = true,
                  int freeze_layers = 0);

// Token/position/segment embedding sum (regions through the projection),
// then layer norm. Throws ConfigError on a position id >= max_positions.
Value embed_on_tape(Tape& tape, const BoundWeights& w, const EncoderInput& input);

struct EncodeResult {
    Value hidden; // [seq x hidden], after the closing layer norm
    // captured post-softmax maps, [layer][head], each [seq x seq]
    std::vector<std::vector<Tensor>> attention;
};

// Pre-norm multi-head self-attention + GELU FFN blocks. Pad keys are masked
// to -1e30 before the softmax so they receive exactly zero mass.
EncodeResult encode_on_tape(Tape& tape, const BoundWeights& w, const EncoderInput& input,
                            bool capture = false);

// CLS/SEP/AVG pooling over hidden states, then pooler affine + tanh -> [1 x hidden].
Value pool_on_tape(Tape& tape, const BoundWeights& w, Value hidden, const EncoderInput& input,
                   Pooling mode);

// encode + pool with the tower input; r_t / r_v of the decomposed dataflow.
Value individual_on_tape(Tape& tape, const BoundWeights& w, const EncoderInput& input,
                         Pooling mode);

// Joint early-interaction scorer: CLS hidden state through the linear head -> [1].
Value joint_logit_on_tape(Tape& tape, const BoundWeights& w, const EncoderInput& joint_input);

// Plain-value wrappers over the tape graph (frozen weights, pure).
struct EncoderOutput {
    Tensor hidden; // [seq x hidden]
    Tensor pooled; // [hidden]
    std::vector<std::vector<Tensor>> attention;
};

EncoderOutput encode(const ModelWeights& w, const EncoderInput& input, bool capture = false);
Tensor pool(const ModelWeights& w, const Tensor& hidden, const EncoderInput& input, Pooling mode);
Tensor individual_forward(const ModelWeights& w, const EncoderInput& input);
float joint_forward(const ModelWeights& w, const PairRecord& pair, int max_seq = 0);
EncoderOutput joint_encode(const ModelWeights& w, const PairRecord& pair, bool capture = false,
                           int max_seq = 0);

} // namespace vld
