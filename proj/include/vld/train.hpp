#pragma once

#include <string>
#include <vector>

#include "vld/data.hpp"
#include "vld/model.hpp"
#include "vld/tape.hpp"
#include "vld/tensor.hpp"

namespace vld {

enum class LossKind { InfoNCE, BCE, Triplet };

std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s); // throws ConfigError

// Whether decomposition training re-draws the pooling affine layer or keeps
// the pre-trained one.
enum class PoolerInit { Fresh, Inherit };

std::string to_string(PoolerInit p);
PoolerInit pooler_init_from_string(const std::string& s); // throws ConfigError

struct TrainConfig {
    // Reference full-scale settings use batch 1750; 64 is the desk-scale
    // default. temperature/learning_rate/weight_decay keep their reference
    // values.
    int batch_size = 64;
    float temperature = 0.005f;
    float learning_rate = 5e-5f;
    float weight_decay = 1e-4f;
    int epochs = 10;
    LossKind loss = LossKind::InfoNCE;
    float triplet_margin = 0.2f;
    unsigned seed = 0;
    int freeze_layers = 0;
    PoolerInit pooler_init = PoolerInit::Fresh;
    int max_seq = 0; // truncation cap for built inputs; 0 = uncapped

    void validate() const; // throws ConfigError
};

// ---- losses over representation batches (Rt, Rv: [N x d] rows aligned) ----

// L_c^t: anchors are texts, candidates are images (softmax over each row of
// the temperature-scaled cosine matrix).
Value infonce_text_term_on_tape(Tape& tape, Value rt, Value rv, float tau);
// L_c^v: the same expression with the roles swapped, so
// image_term(rt, rv) == text_term(rv, rt) bit for bit.
Value infonce_image_term_on_tape(Tape& tape, Value rt, Value rv, float tau);
Value infonce_on_tape(Tape& tape, Value rt, Value rv, float tau); // L_c^t + L_c^v
Value bce_on_tape(Tape& tape, Value rt, Value rv, float tau);
Value triplet_on_tape(Tape& tape, Value rt, Value rv, float margin);
Value loss_on_tape(Tape& tape, Value rt, Value rv, const TrainConfig& cfg);

// Plain-value forms of the same losses.
float infonce_loss(const Tensor& rt, const Tensor& rv, float tau);
float bce_loss(const Tensor& rt, const Tensor& rv, float tau);
float triplet_loss(const Tensor& rt, const Tensor& rv, float margin);

// Row-cosine matrix as plain values (throws ContractError on zero-norm rows).
Tensor cosine_matrix_value(const Tensor& a, const Tensor& b);

// ---- optimizer ----

struct AdamWState {
    int step = 0;
    std::vector<Tensor> m, v; // first/second moments, ModelWeights::for_each order

    static AdamWState init(const ModelWeights& w);
};

// Decoupled weight decay: p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
// grads follow ModelWeights::for_each order. Entries of `skip` that are true
// are left untouched entirely (used for frozen layers).
void adamw_step(ModelWeights& w, const std::vector<Tensor>& grads, AdamWState& state,
                float lr, float wd, float beta1 = 0.9f, float beta2 = 0.999f,
                float eps = 1e-8f, const std::vector<bool>* skip = nullptr);

// Zero gradient buffers shaped like the parameters, for_each order.
std::vector<Tensor> zero_grads(const ModelWeights& w);

// Adds the tape gradient of every bound parameter that received one.
void accumulate_grads(const Tape& tape, const BoundWeights& bw, std::vector<Tensor>& grads);

// True for parameters living in the first `freeze_layers` transformer blocks.
std::vector<bool> frozen_param_mask(const ModelWeights& w, int freeze_layers);

// ---- training loops ----

struct EpochMetrics {
    int epoch = 0;      // 1-based
    double loss = 0.0;  // mean over batches
    double r1_t2i = 0.0; // in-batch top-1 accuracy, text -> image
    double r1_i2t = 0.0; // in-batch top-1 accuracy, image -> text
};

struct TrainResult {
    std::vector<EpochMetrics> history;
};

// Decomposition stage: per batch, encode texts and images through the shared
// towers, apply the configured contrastive loss, AdamW-step. Mutates w.
// Deterministic per seed. Throws DivergenceError (with epoch/batch) on a
// non-finite loss or parameter.
TrainResult train_decompose(ModelWeights& w, const Dataset& ds, const TrainConfig& cfg);

// Joint pre-training stage: per batch of B pairs, score all BxB text-image
// combinations with the early-interaction logit and apply a symmetric
// in-batch cross-entropy over rows and columns. Mutates w.
TrainResult train_joint(ModelWeights& w, const Dataset& ds, const TrainConfig& cfg);

// CSV: header `epoch,loss,in_batch_r1_t2i,in_batch_r1_i2t`, one row per epoch.
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history);

} // namespace vld
