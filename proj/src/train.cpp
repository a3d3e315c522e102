#include "vld/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <random>

#include "vld/errors.hpp"
#include "vld/io_util.hpp"

namespace vld {

std::string to_string(LossKind k) {
    switch (k) {
    case LossKind::InfoNCE: return "INFONCE";
    case LossKind::BCE: return "BCE";
    case LossKind::Triplet: return "TRIPLET";
    }
    return "?";
}

LossKind loss_from_string(const std::string& s) {
    if (s == "INFONCE") return LossKind::InfoNCE;
    if (s == "BCE") return LossKind::BCE;
    if (s == "TRIPLET") return LossKind::Triplet;
    throw ConfigError("loss must be INFONCE, BCE or TRIPLET, got '" + s + "'");
}

std::string to_string(PoolerInit p) {
    return p == PoolerInit::Fresh ? "fresh" : "inherit";
}

PoolerInit pooler_init_from_string(const std::string& s) {
    if (s == "fresh") return PoolerInit::Fresh;
    if (s == "inherit") return PoolerInit::Inherit;
    throw ConfigError("pooler_init must be fresh or inherit, got '" + s + "'");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(temperature > 0.0f)) throw ConfigError("temperature must be > 0");
    if (!(learning_rate > 0.0f)) throw ConfigError("learning_rate must be > 0");
    if (weight_decay < 0.0f) throw ConfigError("weight_decay must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (triplet_margin < 0.0f) throw ConfigError("triplet_margin must be >= 0");
    if (freeze_layers < 0) throw ConfigError("freeze_layers must be >= 0");
    if (max_seq < 0) throw ConfigError("max_seq must be >= 0");
}

namespace {

// -(1/n) * sum_i log_softmax_rows(logits)[i][i]
Value neg_mean_diag_lsm(Tape& tape, Value logits, int n) {
    Value lsm = tape.log_softmax_rows(logits);
    Value diag = tape.hadamard(lsm, tape.constant(Tensor::identity(n)));
    return tape.scale(tape.sum_all(diag), -1.0f / static_cast<float>(n));
}

} // namespace

Value infonce_text_term_on_tape(Tape& tape, Value rt, Value rv, float tau) {
    const int n = tape.value(rt).rows();
    Value scores = tape.scale(tape.cosine_matrix(rt, rv), 1.0f / tau);
    return neg_mean_diag_lsm(tape, scores, n);
}

Value infonce_image_term_on_tape(Tape& tape, Value rt, Value rv, float tau) {
    return infonce_text_term_on_tape(tape, rv, rt, tau);
}

Value infonce_on_tape(Tape& tape, Value rt, Value rv, float tau) {
    return tape.add(infonce_text_term_on_tape(tape, rt, rv, tau),
                    infonce_image_term_on_tape(tape, rt, rv, tau));
}

Value bce_on_tape(Tape& tape, Value rt, Value rv, float tau) {
    const int n = tape.value(rt).rows();
    Value logits = tape.scale(tape.cosine_matrix(rt, rv), 1.0f / tau);
    return tape.sigmoid_bce_mean(logits, Tensor::identity(n));
}

Value triplet_on_tape(Tape& tape, Value rt, Value rv, float margin) {
    return tape.triplet_hardest_mean(tape.cosine_matrix(rt, rv), margin);
}

Value loss_on_tape(Tape& tape, Value rt, Value rv, const TrainConfig& cfg) {
    switch (cfg.loss) {
    case LossKind::InfoNCE: return infonce_on_tape(tape, rt, rv, cfg.temperature);
    case LossKind::BCE: return bce_on_tape(tape, rt, rv, cfg.temperature);
    case LossKind::Triplet: return triplet_on_tape(tape, rt, rv, cfg.triplet_margin);
    }
    throw ConfigError("unknown loss kind");
}

float infonce_loss(const Tensor& rt, const Tensor& rv, float tau) {
    Tape tape;
    return tape.value(infonce_on_tape(tape, tape.constant(rt), tape.constant(rv), tau)).at(0);
}

float bce_loss(const Tensor& rt, const Tensor& rv, float tau) {
    Tape tape;
    return tape.value(bce_on_tape(tape, tape.constant(rt), tape.constant(rv), tau)).at(0);
}

float triplet_loss(const Tensor& rt, const Tensor& rv, float margin) {
    Tape tape;
    return tape.value(triplet_on_tape(tape, tape.constant(rt), tape.constant(rv), margin)).at(0);
}

Tensor cosine_matrix_value(const Tensor& a, const Tensor& b) {
    Tape tape;
    return tape.value(tape.cosine_matrix(tape.constant(a), tape.constant(b)));
}

AdamWState AdamWState::init(const ModelWeights& w) {
    AdamWState st;
    w.for_each([&](const std::string&, const Tensor& t) {
        st.m.emplace_back(t.shape());
        st.v.emplace_back(t.shape());
    });
    return st;
}

void adamw_step(ModelWeights& w, const std::vector<Tensor>& grads, AdamWState& state,
                float lr, float wd, float beta1, float beta2, float eps,
                const std::vector<bool>* skip) {
    size_t n_params = 0;
    w.for_each([&](const std::string&, const Tensor&) { ++n_params; });
    if (grads.size() != n_params || state.m.size() != n_params || state.v.size() != n_params) {
        throw ContractError("optimizer buffers do not match the parameter list");
    }
    if (skip != nullptr && skip->size() != n_params) {
        throw ContractError("skip mask does not match the parameter list");
    }
    state.step += 1;
    const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(state.step));
    const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(state.step));
    const float decay = 1.0f - lr * wd;
    size_t idx = 0;
    w.for_each([&](const std::string& name, Tensor& p) {
        const size_t i = idx++;
        if (skip != nullptr && (*skip)[i]) return;
        const Tensor& g = grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        if (!g.same_shape(p) || !m.same_shape(p)) {
            throw ContractError("gradient shape mismatch for " + name);
        }
        for (int j = 0; j < p.size(); ++j) {
            const float gj = g.at(j);
            m.at(j) = beta1 * m.at(j) + (1.0f - beta1) * gj;
            v.at(j) = beta2 * v.at(j) + (1.0f - beta2) * gj * gj;
            const float mh = m.at(j) / bc1;
            const float vh = v.at(j) / bc2;
            p.at(j) = p.at(j) * decay - lr * (mh / (std::sqrt(vh) + eps));
        }
    });
}

std::vector<Tensor> zero_grads(const ModelWeights& w) {
    std::vector<Tensor> grads;
    w.for_each([&](const std::string&, const Tensor& t) { grads.emplace_back(t.shape()); });
    return grads;
}

void accumulate_grads(const Tape& tape, const BoundWeights& bw, std::vector<Tensor>& grads) {
    size_t idx = 0;
    bw.for_each([&](const std::string& name, Value val) {
        if (idx >= grads.size()) throw ContractError("gradient buffer too short");
        Tensor& acc = grads[idx++];
        if (!tape.has_grad(val)) return;
        const Tensor& g = tape.grad(val);
        if (!g.same_shape(acc)) throw ContractError("gradient shape mismatch for " + name);
        for (int j = 0; j < acc.size(); ++j) acc.at(j) += g.at(j);
    });
    if (idx != grads.size()) throw ContractError("gradient buffer does not match parameters");
}

std::vector<bool> frozen_param_mask(const ModelWeights& w, int freeze_layers) {
    std::vector<bool> mask;
    w.for_each([&](const std::string& name, const Tensor&) {
        bool frozen = false;
        if (name.rfind("layer", 0) == 0) {
            const size_t dot = name.find('.');
            if (dot != std::string::npos) {
                const int li = std::stoi(name.substr(5, dot - 5));
                frozen = li < freeze_layers;
            }
        }
        mask.push_back(frozen);
    });
    return mask;
}

namespace {

// Fraction of rows whose diagonal entry holds the row argmax (ties go to the
// lowest index, so a tie at the diagonal with an earlier column counts as a miss).
double top1_rows(const Tensor& scores) {
    int hits = 0;
    for (int i = 0; i < scores.rows(); ++i) {
        int arg = 0;
        for (int j = 1; j < scores.cols(); ++j) {
            if (scores.at(i, j) > scores.at(i, arg)) arg = j;
        }
        if (arg == i) ++hits;
    }
    return static_cast<double>(hits) / scores.rows();
}

double top1_cols(const Tensor& scores) {
    int hits = 0;
    for (int j = 0; j < scores.cols(); ++j) {
        int arg = 0;
        for (int i = 1; i < scores.rows(); ++i) {
            if (scores.at(i, j) > scores.at(arg, j)) arg = i;
        }
        if (arg == j) ++hits;
    }
    return static_cast<double>(hits) / scores.cols();
}

void check_model_fits_dataset(const ModelWeights& w, const Dataset& ds) {
    if (w.config.vocab_size < ds.vocab_size) {
        throw ConfigError("model vocab_size " + std::to_string(w.config.vocab_size) +
                          " smaller than dataset vocab " + std::to_string(ds.vocab_size));
    }
    if (w.config.feat_dim != ds.feat_dim) {
        throw ConfigError("model feat_dim " + std::to_string(w.config.feat_dim) +
                          " does not match dataset feat_dim " + std::to_string(ds.feat_dim));
    }
}

std::string at_epoch_batch(int epoch, int batch) {
    return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
}

} // namespace

TrainResult train_decompose(ModelWeights& w, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.pairs.empty()) throw DataError("decompose training needs a non-empty dataset");
    check_model_fits_dataset(w, ds);
    const int n = static_cast<int>(ds.pairs.size());
    if (cfg.epochs > 0 && n < 2) {
        throw DataError("contrastive decomposition needs at least 2 pairs");
    }

    std::mt19937 rng(cfg.seed);
    // epochs=0 must be a strict identity, so the fresh pooler draw is part of
    // the first real training run only
    if (cfg.epochs > 0 && cfg.pooler_init == PoolerInit::Fresh) {
        std::normal_distribution<float> gauss(0.0f, 0.02f);
        for (int j = 0; j < w.pooler_w.size(); ++j) w.pooler_w.at(j) = gauss(rng);
        w.pooler_b.fill(0.0f);
    }
    const std::vector<bool> frozen = frozen_param_mask(w, cfg.freeze_layers);
    AdamWState state = AdamWState::init(w);
    const int H = w.config.hidden_dim;

    std::vector<EncoderInput> texts, images;
    texts.reserve(static_cast<size_t>(n));
    images.reserve(static_cast<size_t>(n));
    for (const PairRecord& p : ds.pairs) {
        texts.push_back(build_text_input(p.text, cfg.max_seq));
        images.push_back(build_image_input(p.image, cfg.max_seq));
    }
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    TrainResult out;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0, t2i_sum = 0.0, i2t_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int B = std::min(cfg.batch_size, n - start);
            if (B < 2) continue; // a lone trailing item has no in-batch negatives

            std::vector<std::unique_ptr<Tape>> tapes;
            std::vector<BoundWeights> bws;
            std::vector<Value> combos; // per item, [2 x H]: r_t row then r_v row
            Tensor rt_batch({B, H}), rv_batch({B, H});
            for (int b = 0; b < B; ++b) {
                const int idx = order[static_cast<size_t>(start + b)];
                tapes.push_back(std::make_unique<Tape>());
                Tape& tape = *tapes.back();
                bws.push_back(bind(tape, w, true, cfg.freeze_layers));
                Value rt = individual_on_tape(tape, bws.back(), texts[static_cast<size_t>(idx)],
                                              w.config.pooling);
                Value rv = individual_on_tape(tape, bws.back(), images[static_cast<size_t>(idx)],
                                              w.config.pooling);
                combos.push_back(tape.concat_rows({rt, rv}));
                const Tensor& both = tape.value(combos.back());
                for (int j = 0; j < H; ++j) {
                    rt_batch.at(b, j) = both.at(0, j);
                    rv_batch.at(b, j) = both.at(1, j);
                }
            }

            Tape loss_tape;
            Value RT = loss_tape.leaf(rt_batch);
            Value RV = loss_tape.leaf(rv_batch);
            Value loss = loss_on_tape(loss_tape, RT, RV, cfg);
            const float loss_val = loss_tape.value(loss).at(0);
            if (!std::isfinite(loss_val)) {
                throw DivergenceError("non-finite loss at " + at_epoch_batch(epoch, batches));
            }
            loss_tape.backward(loss);

            std::vector<Tensor> grads = zero_grads(w);
            for (int b = 0; b < B; ++b) {
                Tensor seed({2, H});
                for (int j = 0; j < H; ++j) {
                    seed.at(0, j) = loss_tape.has_grad(RT) ? loss_tape.grad(RT).at(b, j) : 0.0f;
                    seed.at(1, j) = loss_tape.has_grad(RV) ? loss_tape.grad(RV).at(b, j) : 0.0f;
                }
                tapes[static_cast<size_t>(b)]->backward(combos[static_cast<size_t>(b)], seed);
                accumulate_grads(*tapes[static_cast<size_t>(b)], bws[static_cast<size_t>(b)],
                                 grads);
            }
            adamw_step(w, grads, state, cfg.learning_rate, cfg.weight_decay, 0.9f, 0.999f,
                       1e-8f, &frozen);
            if (!w.all_finite()) {
                throw DivergenceError("non-finite parameter after " +
                                      at_epoch_batch(epoch, batches));
            }

            const Tensor scores = cosine_matrix_value(rt_batch, rv_batch);
            loss_sum += loss_val;
            t2i_sum += top1_rows(scores);
            i2t_sum += top1_cols(scores);
            ++batches;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.loss = loss_sum / batches;
        m.r1_t2i = t2i_sum / batches;
        m.r1_i2t = i2t_sum / batches;
        out.history.push_back(m);
    }
    return out;
}

TrainResult train_joint(ModelWeights& w, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.pairs.empty()) throw DataError("joint pre-training needs a non-empty dataset");
    check_model_fits_dataset(w, ds);
    const int n = static_cast<int>(ds.pairs.size());
    if (cfg.epochs > 0 && n < 2) {
        throw DataError("in-batch pre-training needs at least 2 pairs");
    }

    std::mt19937 rng(cfg.seed);
    const std::vector<bool> frozen = frozen_param_mask(w, cfg.freeze_layers);
    AdamWState state = AdamWState::init(w);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    TrainResult out;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0, t2i_sum = 0.0, i2t_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int B = std::min(cfg.batch_size, n - start);
            if (B < 2) continue;

            // every text paired with every image: B*B early-interaction scores
            std::vector<std::unique_ptr<Tape>> tapes;
            std::vector<BoundWeights> bws;
            std::vector<Value> logits;
            Tensor S({B, B});
            for (int i = 0; i < B; ++i) {
                for (int j = 0; j < B; ++j) {
                    PairRecord cell;
                    cell.text = ds.pairs[static_cast<size_t>(order[static_cast<size_t>(start + i)])].text;
                    cell.image = ds.pairs[static_cast<size_t>(order[static_cast<size_t>(start + j)])].image;
                    cell.aligned = i == j;
                    tapes.push_back(std::make_unique<Tape>());
                    Tape& tape = *tapes.back();
                    bws.push_back(bind(tape, w, true, cfg.freeze_layers));
                    logits.push_back(
                        joint_logit_on_tape(tape, bws.back(), build_joint_input(cell, cfg.max_seq)));
                    S.at(i, j) = tape.value(logits.back()).at(0);
                }
            }

            Tensor St({B, B});
            for (int i = 0; i < B; ++i) {
                for (int j = 0; j < B; ++j) St.at(i, j) = S.at(j, i);
            }
            Tape loss_tape;
            Value S1 = loss_tape.leaf(S);
            Value S2 = loss_tape.leaf(St);
            Value loss = loss_tape.add(neg_mean_diag_lsm(loss_tape, S1, B),
                                       neg_mean_diag_lsm(loss_tape, S2, B));
            const float loss_val = loss_tape.value(loss).at(0);
            if (!std::isfinite(loss_val)) {
                throw DivergenceError("non-finite loss at " + at_epoch_batch(epoch, batches));
            }
            loss_tape.backward(loss);
            const Tensor& d1 = loss_tape.grad(S1);
            const Tensor& d2 = loss_tape.grad(S2);

            std::vector<Tensor> grads = zero_grads(w);
            for (int i = 0; i < B; ++i) {
                for (int j = 0; j < B; ++j) {
                    const size_t cell = static_cast<size_t>(i) * B + j;
                    Tensor seed({1});
                    seed.at(0) = d1.at(i, j) + d2.at(j, i);
                    tapes[cell]->backward(logits[cell], seed);
                    accumulate_grads(*tapes[cell], bws[cell], grads);
                }
            }
            adamw_step(w, grads, state, cfg.learning_rate, cfg.weight_decay, 0.9f, 0.999f,
                       1e-8f, &frozen);
            if (!w.all_finite()) {
                throw DivergenceError("non-finite parameter after " +
                                      at_epoch_batch(epoch, batches));
            }

            loss_sum += loss_val;
            t2i_sum += top1_rows(S);
            i2t_sum += top1_cols(S);
            ++batches;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.loss = loss_sum / batches;
        m.r1_t2i = t2i_sum / batches;
        m.r1_i2t = i2t_sum / batches;
        out.history.push_back(m);
    }
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
    std::string out = "epoch,loss,in_batch_r1_t2i,in_batch_r1_i2t\n";
    char line[160];
    for (const EpochMetrics& m : history) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g\n", m.epoch, m.loss, m.r1_t2i,
                      m.r1_i2t);
        out += line;
    }
    atomic_write(path, out);
}

} // namespace vld
