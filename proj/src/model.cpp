#include "vld/model.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "vld/errors.hpp"
#include "vld/io_util.hpp"

namespace vld {

std::string to_string(Pooling p) {
    switch (p) {
    case Pooling::CLS: return "CLS";
    case Pooling::SEP: return "SEP";
    case Pooling::AVG: return "AVG";
    }
    return "?";
}

Pooling pooling_from_string(const std::string& s) {
    if (s == "CLS") return Pooling::CLS;
    if (s == "SEP") return Pooling::SEP;
    if (s == "AVG") return Pooling::AVG;
    throw ConfigError("pooling must be CLS, SEP or AVG, got '" + s + "'");
}

void ModelConfig::validate() const {
    if (n_layers < 0) throw ConfigError("n_layers must be >= 0");
    if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (hidden_dim % n_heads != 0) {
        throw ConfigError("hidden_dim " + std::to_string(hidden_dim) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2 (CLS and SEP)");
    if (feat_dim < 1) throw ConfigError("feat_dim must be >= 1");
    if (max_positions < 1) throw ConfigError("max_positions must be >= 1");
    if (n_segments != 2) throw ConfigError("n_segments is fixed to 2 (T and V)");
}

namespace {

// All-zero tensors with the final shapes; init() and the checkpoint loader
// fill them in.
ModelWeights skeleton(const ModelConfig& cfg) {
    cfg.validate();
    const int H = cfg.hidden_dim;
    ModelWeights w;
    w.config = cfg;
    w.tok_emb = Tensor({cfg.vocab_size, H});
    w.pos_emb = Tensor({cfg.max_positions, H});
    w.seg_emb = Tensor({cfg.n_segments, H});
    w.region_proj = Tensor({cfg.feat_dim, H});
    w.emb_ln_g = Tensor({H});
    w.emb_ln_b = Tensor({H});
    w.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (LayerWeights& l : w.layers) {
        l.ln1_g = Tensor({H});
        l.ln1_b = Tensor({H});
        l.wq = Tensor({H, H});
        l.bq = Tensor({H});
        l.wk = Tensor({H, H});
        l.bk = Tensor({H});
        l.wv = Tensor({H, H});
        l.bv = Tensor({H});
        l.wo = Tensor({H, H});
        l.bo = Tensor({H});
        l.ln2_g = Tensor({H});
        l.ln2_b = Tensor({H});
        l.w1 = Tensor({H, cfg.ffn_dim});
        l.b1 = Tensor({cfg.ffn_dim});
        l.w2 = Tensor({cfg.ffn_dim, H});
        l.b2 = Tensor({H});
    }
    w.final_g = Tensor({H});
    w.final_b = Tensor({H});
    w.pooler_w = Tensor({H, H});
    w.pooler_b = Tensor({H});
    w.head_w = Tensor({H, 1});
    w.head_b = Tensor({1});
    return w;
}

} // namespace

ModelWeights ModelWeights::init(const ModelConfig& cfg, unsigned seed) {
    ModelWeights w = skeleton(cfg);
    std::mt19937 rng(seed);
    std::normal_distribution<float> gauss(0.0f, 0.02f);
    auto fill_gauss = [&](Tensor& t) {
        for (int i = 0; i < t.size(); ++i) t.at(i) = gauss(rng);
    };
    auto ones = [](Tensor& t) { t.fill(1.0f); };

    fill_gauss(w.tok_emb);
    fill_gauss(w.pos_emb);
    fill_gauss(w.seg_emb);
    fill_gauss(w.region_proj);
    ones(w.emb_ln_g);
    for (LayerWeights& l : w.layers) {
        ones(l.ln1_g);
        fill_gauss(l.wq);
        fill_gauss(l.wk);
        fill_gauss(l.wv);
        fill_gauss(l.wo);
        ones(l.ln2_g);
        fill_gauss(l.w1);
        fill_gauss(l.w2);
    }
    ones(w.final_g);
    fill_gauss(w.pooler_w);
    fill_gauss(w.head_w);
    return w;
}

void ModelWeights::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    fn("seg_emb", seg_emb);
    fn("region_proj", region_proj);
    fn("emb_ln_g", emb_ln_g);
    fn("emb_ln_b", emb_ln_b);
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        LayerWeights& l = layers[i];
        fn(p + "ln1_g", l.ln1_g);
        fn(p + "ln1_b", l.ln1_b);
        fn(p + "wq", l.wq);
        fn(p + "bq", l.bq);
        fn(p + "wk", l.wk);
        fn(p + "bk", l.bk);
        fn(p + "wv", l.wv);
        fn(p + "bv", l.bv);
        fn(p + "wo", l.wo);
        fn(p + "bo", l.bo);
        fn(p + "ln2_g", l.ln2_g);
        fn(p + "ln2_b", l.ln2_b);
        fn(p + "w1", l.w1);
        fn(p + "b1", l.b1);
        fn(p + "w2", l.w2);
        fn(p + "b2", l.b2);
    }
    fn("final_g", final_g);
    fn("final_b", final_b);
    fn("pooler_w", pooler_w);
    fn("pooler_b", pooler_b);
    fn("head_w", head_w);
    fn("head_b", head_b);
}

void ModelWeights::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<ModelWeights*>(this)->for_each(
        [&](const std::string& n, Tensor& t) { fn(n, t); });
}

int ModelWeights::param_count() const {
    int n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

bool ModelWeights::all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
    return ok;
}

uint64_t params_checksum(const ModelWeights& w) {
    uint64_t h = 1469598103934665603ull; // FNV-1a
    w.for_each([&](const std::string&, const Tensor& t) {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
        const size_t bytes = static_cast<size_t>(t.size()) * sizeof(float);
        for (size_t i = 0; i < bytes; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    });
    return h;
}

namespace {

constexpr char kCkptMagic[4] = {'V', 'L', 'D', 'W'};
constexpr uint32_t kCkptVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

void put_i32(std::string& out, int v) { put_u32(out, static_cast<uint32_t>(v)); }

struct Cursor {
    const std::string& buf;
    size_t off = 0;
    const std::string path;

    void need(size_t n) const {
        if (off + n > buf.size()) throw DataError(path + ": checkpoint truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        off += 4;
        return v;
    }
    int i32() { return static_cast<int>(u32()); }
    void floats(Tensor& t) {
        const size_t n = static_cast<size_t>(t.size()) * sizeof(float);
        need(n);
        std::memcpy(t.data(), buf.data() + off, n);
        off += n;
    }
};

} // namespace

void save_checkpoint(const std::string& path, const ModelWeights& w) {
    std::string out;
    out.append(kCkptMagic, 4);
    put_u32(out, kCkptVersion);
    const ModelConfig& c = w.config;
    put_i32(out, c.n_layers);
    put_i32(out, c.n_heads);
    put_i32(out, c.hidden_dim);
    put_i32(out, c.ffn_dim);
    put_i32(out, c.vocab_size);
    put_i32(out, c.feat_dim);
    put_i32(out, c.max_positions);
    put_i32(out, c.n_segments);
    put_i32(out, static_cast<int>(c.pooling));
    w.for_each([&](const std::string&, const Tensor& t) {
        out.append(reinterpret_cast<const char*>(t.data()),
                   static_cast<size_t>(t.size()) * sizeof(float));
    });
    atomic_write(path, out);
}

ModelWeights load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    Cursor cur{buf, 0, path};
    cur.need(4);
    if (std::memcmp(buf.data(), kCkptMagic, 4) != 0) {
        throw DataError(path + ": not a VLDW checkpoint");
    }
    cur.off = 4;
    const uint32_t version = cur.u32();
    if (version != kCkptVersion) {
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig c;
    c.n_layers = cur.i32();
    c.n_heads = cur.i32();
    c.hidden_dim = cur.i32();
    c.ffn_dim = cur.i32();
    c.vocab_size = cur.i32();
    c.feat_dim = cur.i32();
    c.max_positions = cur.i32();
    c.n_segments = cur.i32();
    const int pool = cur.i32();
    if (pool < 0 || pool > 2) throw DataError(path + ": bad pooling mode in checkpoint");
    c.pooling = static_cast<Pooling>(pool);
    ModelWeights w = skeleton(c);
    w.for_each([&](const std::string&, Tensor& t) { cur.floats(t); });
    if (cur.off != buf.size()) throw DataError(path + ": trailing bytes after parameters");
    return w;
}

ModelWeights load_checkpoint(const std::string& path, const ModelConfig& expected) {
    ModelWeights w = load_checkpoint(path);
    if (!(w.config == expected)) {
        throw ConfigError(path + ": checkpoint model config does not match the requested config");
    }
    return w;
}

void BoundWeights::for_each(const std::function<void(const std::string&, Value)>& fn) const {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    fn("seg_emb", seg_emb);
    fn("region_proj", region_proj);
    fn("emb_ln_g", emb_ln_g);
    fn("emb_ln_b", emb_ln_b);
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        const BoundLayer& l = layers[i];
        fn(p + "ln1_g", l.ln1_g);
        fn(p + "ln1_b", l.ln1_b);
        fn(p + "wq", l.wq);
        fn(p + "bq", l.bq);
        fn(p + "wk", l.wk);
        fn(p + "bk", l.bk);
        fn(p + "wv", l.wv);
        fn(p + "bv", l.bv);
        fn(p + "wo", l.wo);
        fn(p + "bo", l.bo);
        fn(p + "ln2_g", l.ln2_g);
        fn(p + "ln2_b", l.ln2_b);
        fn(p + "w1", l.w1);
        fn(p + "b1", l.b1);
        fn(p + "w2", l.w2);
        fn(p + "b2", l.b2);
    }
    fn("final_g", final_g);
    fn("final_b", final_b);
    fn("pooler_w", pooler_w);
    fn("pooler_b", pooler_b);
    fn("head_w", head_w);
    fn("head_b", head_b);
}

BoundWeights bind(Tape& tape, const ModelWeights& w, bool trainable, int freeze_layers) {
    if (freeze_layers < 0 || freeze_layers > w.config.n_layers) {
        throw ConfigError("freeze_layers must be in [0, n_layers]");
    }
    auto mk = [&](const Tensor& t, bool tr) { return tr ? tape.leaf(t) : tape.constant(t); };
    BoundWeights b;
    b.config = w.config;
    b.tok_emb = mk(w.tok_emb, trainable);
    b.pos_emb = mk(w.pos_emb, trainable);
    b.seg_emb = mk(w.seg_emb, trainable);
    b.region_proj = mk(w.region_proj, trainable);
    b.emb_ln_g = mk(w.emb_ln_g, trainable);
    b.emb_ln_b = mk(w.emb_ln_b, trainable);
    b.layers.resize(w.layers.size());
    for (size_t i = 0; i < w.layers.size(); ++i) {
        const bool tr = trainable && static_cast<int>(i) >= freeze_layers;
        const LayerWeights& l = w.layers[i];
        BoundLayer& o = b.layers[i];
        o.ln1_g = mk(l.ln1_g, tr);
        o.ln1_b = mk(l.ln1_b, tr);
        o.wq = mk(l.wq, tr);
        o.bq = mk(l.bq, tr);
        o.wk = mk(l.wk, tr);
        o.bk = mk(l.bk, tr);
        o.wv = mk(l.wv, tr);
        o.bv = mk(l.bv, tr);
        o.wo = mk(l.wo, tr);
        o.bo = mk(l.bo, tr);
        o.ln2_g = mk(l.ln2_g, tr);
        o.ln2_b = mk(l.ln2_b, tr);
        o.w1 = mk(l.w1, tr);
        o.b1 = mk(l.b1, tr);
        o.w2 = mk(l.w2, tr);
        o.b2 = mk(l.b2, tr);
    }
    b.final_g = mk(w.final_g, trainable);
    b.final_b = mk(w.final_b, trainable);
    b.pooler_w = mk(w.pooler_w, trainable);
    b.pooler_b = mk(w.pooler_b, trainable);
    b.head_w = mk(w.head_w, trainable);
    b.head_b = mk(w.head_b, trainable);
    return b;
}

Value embed_on_tape(Tape& tape, const BoundWeights& w, const EncoderInput& input) {
    const ModelConfig& cfg = w.config;
    const int seq = input.seq();
    if (seq < 1) throw ContractError("encoder input has no slots");
    std::vector<int> tok_ids(static_cast<size_t>(seq));
    std::vector<int> pos_ids(static_cast<size_t>(seq));
    std::vector<int> seg_ids(static_cast<size_t>(seq));
    for (int i = 0; i < seq; ++i) {
        const Slot& s = input.slots[static_cast<size_t>(i)];
        const bool pad = input.pad_mask[static_cast<size_t>(i)];
        tok_ids[static_cast<size_t>(i)] =
            (pad || s.kind == SlotKind::Region) ? -1 : s.token_id;
        if (s.position_id < 0 || s.position_id >= cfg.max_positions) {
            throw ConfigError("position id " + std::to_string(s.position_id) + " at slot " +
                              std::to_string(i) + " outside max_positions " +
                              std::to_string(cfg.max_positions));
        }
        pos_ids[static_cast<size_t>(i)] = s.position_id;
        seg_ids[static_cast<size_t>(i)] = (s.segment == Segment::T) ? 0 : 1;
    }
    Tensor regmat({seq, cfg.feat_dim});
    for (int i = 0; i < seq; ++i) {
        const Slot& s = input.slots[static_cast<size_t>(i)];
        if (s.kind != SlotKind::Region || input.pad_mask[static_cast<size_t>(i)]) continue;
        if (input.region_feats.empty() || s.region_index < 0 ||
            s.region_index >= input.region_feats.rows() ||
            input.region_feats.cols() != cfg.feat_dim) {
            throw ContractError("region slot " + std::to_string(i) +
                                " does not match the region feature matrix");
        }
        for (int j = 0; j < cfg.feat_dim; ++j) {
            regmat.at(i, j) = input.region_feats.at(s.region_index, j);
        }
    }
    Value tok = tape.embedding(w.tok_emb, tok_ids);
    Value reg = tape.matmul(tape.constant(std::move(regmat)), w.region_proj);
    Value pos = tape.embedding(w.pos_emb, pos_ids);
    Value seg = tape.embedding(w.seg_emb, seg_ids);
    Value sum = tape.add(tape.add(tok, reg), tape.add(pos, seg));
    return tape.layer_norm(sum, w.emb_ln_g, w.emb_ln_b);
}

EncodeResult encode_on_tape(Tape& tape, const BoundWeights& w, const EncoderInput& input,
                            bool capture) {
    const ModelConfig& cfg = w.config;
    const int seq = input.seq();
    EncodeResult res;
    Value x = embed_on_tape(tape, w, input);

    bool any_pad = false;
    for (size_t i = 0; i < input.pad_mask.size(); ++i) any_pad = any_pad || input.pad_mask[i];
    Value key_mask; // [seq x seq], -1e30 on pad key columns
    if (any_pad) {
        Tensor m({seq, seq});
        for (int j = 0; j < seq; ++j) {
            if (!input.pad_mask[static_cast<size_t>(j)]) continue;
            for (int i = 0; i < seq; ++i) m.at(i, j) = -1e30f;
        }
        key_mask = tape.constant(std::move(m));
    }

    const int dh = cfg.hidden_dim / cfg.n_heads;
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
    if (capture) res.attention.resize(static_cast<size_t>(cfg.n_layers));

    for (int li = 0; li < cfg.n_layers; ++li) {
        const BoundLayer& L = w.layers[static_cast<size_t>(li)];
        Value h = tape.layer_norm(x, L.ln1_g, L.ln1_b);
        Value q = tape.add_bias(tape.matmul(h, L.wq), L.bq);
        Value k = tape.add_bias(tape.matmul(h, L.wk), L.bk);
        Value v = tape.add_bias(tape.matmul(h, L.wv), L.bv);
        std::vector<Value> heads;
        heads.reserve(static_cast<size_t>(cfg.n_heads));
        for (int hi = 0; hi < cfg.n_heads; ++hi) {
            Value qi = tape.slice_cols(q, hi * dh, dh);
            Value ki = tape.slice_cols(k, hi * dh, dh);
            Value vi = tape.slice_cols(v, hi * dh, dh);
            Value logits = tape.scale(tape.matmul_nt(qi, ki), inv_sqrt_dh);
            if (any_pad) logits = tape.add(logits, key_mask);
            Value a = tape.softmax_rows(logits);
            if (capture) res.attention[static_cast<size_t>(li)].push_back(tape.value(a));
            heads.push_back(tape.matmul(a, vi));
        }
        Value merged = (cfg.n_heads == 1) ? heads[0] : tape.concat_cols(heads);
        Value attn = tape.add_bias(tape.matmul(merged, L.wo), L.bo);
        x = tape.add(x, attn);
        Value h2 = tape.layer_norm(x, L.ln2_g, L.ln2_b);
        Value f1 = tape.gelu(tape.add_bias(tape.matmul(h2, L.w1), L.b1));
        Value f2 = tape.add_bias(tape.matmul(f1, L.w2), L.b2);
        x = tape.add(x, f2);
    }
    res.hidden = tape.layer_norm(x, w.final_g, w.final_b);
    return res;
}

Value pool_on_tape(Tape& tape, const BoundWeights& w, Value hidden, const EncoderInput& input,
                   Pooling mode) {
    Value row;
    switch (mode) {
    case Pooling::CLS:
        row = tape.pick_row(hidden, 0);
        break;
    case Pooling::SEP: {
        int sep = -1;
        for (int i = 0; i < input.seq(); ++i) {
            const Slot& s = input.slots[static_cast<size_t>(i)];
            if (!input.pad_mask[static_cast<size_t>(i)] && s.kind == SlotKind::Special &&
                s.token_id == kSepId) {
                sep = i; // keep scanning: final SEP wins
            }
        }
        if (sep < 0) throw ContractError("SEP pooling requires at least one [SEP] slot");
        row = tape.pick_row(hidden, sep);
        break;
    }
    case Pooling::AVG:
        row = tape.masked_mean_rows(hidden, input.real_mask());
        break;
    }
    return tape.tanh(tape.add_bias(tape.matmul(row, w.pooler_w), w.pooler_b));
}

Value individual_on_tape(Tape& tape, const BoundWeights& w, const EncoderInput& input,
                         Pooling mode) {
    EncodeResult enc = encode_on_tape(tape, w, input, false);
    return pool_on_tape(tape, w, enc.hidden, input, mode);
}

Value joint_logit_on_tape(Tape& tape, const BoundWeights& w, const EncoderInput& joint_input) {
    EncodeResult enc = encode_on_tape(tape, w, joint_input, false);
    Value cls = tape.pick_row(enc.hidden, 0);
    return tape.add(tape.sum_all(tape.matmul(cls, w.head_w)), w.head_b);
}

namespace {

Tensor row_to_vec(const Tensor& row) {
    Tensor v({row.cols()});
    for (int j = 0; j < row.cols(); ++j) v.at(j) = row.at(0, j);
    return v;
}

} // namespace

EncoderOutput encode(const ModelWeights& w, const EncoderInput& input, bool capture) {
    Tape tape;
    const BoundWeights bw = bind(tape, w, false);
    EncodeResult r = encode_on_tape(tape, bw, input, capture);
    EncoderOutput out;
    out.hidden = tape.value(r.hidden);
    out.attention = std::move(r.attention);
    out.pooled = row_to_vec(tape.value(pool_on_tape(tape, bw, r.hidden, input, w.config.pooling)));
    return out;
}

Tensor pool(const ModelWeights& w, const Tensor& hidden, const EncoderInput& input,
            Pooling mode) {
    Tape tape;
    const BoundWeights bw = bind(tape, w, false);
    return row_to_vec(tape.value(pool_on_tape(tape, bw, tape.constant(hidden), input, mode)));
}

Tensor individual_forward(const ModelWeights& w, const EncoderInput& input) {
    Tape tape;
    const BoundWeights bw = bind(tape, w, false);
    return row_to_vec(tape.value(individual_on_tape(tape, bw, input, w.config.pooling)));
}

float joint_forward(const ModelWeights& w, const PairRecord& pair, int max_seq) {
    Tape tape;
    const BoundWeights bw = bind(tape, w, false);
    const EncoderInput in = build_joint_input(pair, max_seq);
    return tape.value(joint_logit_on_tape(tape, bw, in)).at(0);
}

EncoderOutput joint_encode(const ModelWeights& w, const PairRecord& pair, bool capture,
                           int max_seq) {
    return encode(w, build_joint_input(pair, max_seq), capture);
}

} // namespace vld
