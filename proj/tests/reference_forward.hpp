#pragma once

// Straight-line double-precision re-implementation of the encoder forward
// pass, written independently of the tape ops so the two can cross-check
// each other. Row-major [rows x cols] stored flat in std::vector<double>.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vld/data.hpp"
#include "vld/model.hpp"

namespace refmodel {

using DVec = std::vector<double>;

inline DVec to_dvec(const vld::Tensor& t) {
    DVec v(static_cast<size_t>(t.size()));
    for (int i = 0; i < t.size(); ++i) v[static_cast<size_t>(i)] = t.at(i);
    return v;
}

// C[m x n] += A[m x k] * B[k x n]
inline void ref_matmul(const DVec& a, const DVec& b, DVec& c, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p)
                s += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            c[static_cast<size_t>(i) * n + j] += s;
        }
}

inline void ref_layer_norm(DVec& x, const DVec& g, const DVec& b, int rows, int d,
                           double eps = 1e-5) {
    for (int i = 0; i < rows; ++i) {
        double* row = x.data() + static_cast<size_t>(i) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) row[j] = (row[j] - mean) * inv * g[static_cast<size_t>(j)] +
                                             b[static_cast<size_t>(j)];
    }
}

inline double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline void ref_softmax_row(double* row, int n) {
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    for (int j = 0; j < n; ++j) row[j] /= sum;
}

// Raw token/region + position + segment sums, before the embedding layer
// norm; returns [seq x hidden].
inline DVec ref_embed_sums(const vld::ModelWeights& w, const vld::EncoderInput& in) {
    const int H = w.config.hidden_dim;
    const int seq = in.seq();
    const DVec tok = to_dvec(w.tok_emb), pos = to_dvec(w.pos_emb), seg = to_dvec(w.seg_emb);
    const DVec proj = to_dvec(w.region_proj);
    DVec x(static_cast<size_t>(seq) * H, 0.0);
    for (int i = 0; i < seq; ++i) {
        const vld::Slot& s = in.slots[static_cast<size_t>(i)];
        const bool pad = in.pad_mask[static_cast<size_t>(i)];
        double* row = x.data() + static_cast<size_t>(i) * H;
        if (!pad && s.kind == vld::SlotKind::Region) {
            for (int j = 0; j < H; ++j) {
                double acc = 0.0;
                for (int f = 0; f < w.config.feat_dim; ++f)
                    acc += static_cast<double>(in.region_feats.at(s.region_index, f)) *
                           proj[static_cast<size_t>(f) * H + j];
                row[j] += acc;
            }
        } else if (!pad) {
            for (int j = 0; j < H; ++j) row[j] += tok[static_cast<size_t>(s.token_id) * H + j];
        }
        for (int j = 0; j < H; ++j) {
            row[j] += pos[static_cast<size_t>(s.position_id) * H + j];
            row[j] += seg[static_cast<size_t>(s.segment == vld::Segment::T ? 0 : 1) * H + j];
        }
    }
    return x;
}

// Embedding sum + layer norm; returns [seq x hidden].
inline DVec ref_embed(const vld::ModelWeights& w, const vld::EncoderInput& in) {
    DVec x = ref_embed_sums(w, in);
    ref_layer_norm(x, to_dvec(w.emb_ln_g), to_dvec(w.emb_ln_b), in.seq(),
                   w.config.hidden_dim);
    return x;
}

struct RefEncodeResult {
    DVec hidden;                                   // [seq x hidden]
    std::vector<std::vector<DVec>> attention;      // [layer][head] of [seq x seq]
};

inline RefEncodeResult ref_encode(const vld::ModelWeights& w, const vld::EncoderInput& in) {
    const int H = w.config.hidden_dim;
    const int nh = w.config.n_heads;
    const int dh = H / nh;
    const int seq = in.seq();
    RefEncodeResult out;
    out.attention.resize(static_cast<size_t>(w.config.n_layers));
    DVec x = ref_embed(w, in);

    for (int li = 0; li < w.config.n_layers; ++li) {
        const vld::LayerWeights& L = w.layers[static_cast<size_t>(li)];
        DVec h = x;
        ref_layer_norm(h, to_dvec(L.ln1_g), to_dvec(L.ln1_b), seq, H);
        DVec q(static_cast<size_t>(seq) * H, 0.0), k(q), v(q);
        ref_matmul(h, to_dvec(L.wq), q, seq, H, H);
        ref_matmul(h, to_dvec(L.wk), k, seq, H, H);
        ref_matmul(h, to_dvec(L.wv), v, seq, H, H);
        const DVec bq = to_dvec(L.bq), bk = to_dvec(L.bk), bv = to_dvec(L.bv);
        for (int i = 0; i < seq; ++i)
            for (int j = 0; j < H; ++j) {
                q[static_cast<size_t>(i) * H + j] += bq[static_cast<size_t>(j)];
                k[static_cast<size_t>(i) * H + j] += bk[static_cast<size_t>(j)];
                v[static_cast<size_t>(i) * H + j] += bv[static_cast<size_t>(j)];
            }
        DVec merged(static_cast<size_t>(seq) * H, 0.0);
        for (int hi = 0; hi < nh; ++hi) {
            DVec att(static_cast<size_t>(seq) * seq, 0.0);
            for (int i = 0; i < seq; ++i)
                for (int j = 0; j < seq; ++j) {
                    double s = 0.0;
                    for (int p = 0; p < dh; ++p)
                        s += q[static_cast<size_t>(i) * H + hi * dh + p] *
                             k[static_cast<size_t>(j) * H + hi * dh + p];
                    s /= std::sqrt(static_cast<double>(dh));
                    if (in.pad_mask[static_cast<size_t>(j)]) s = -1e30;
                    att[static_cast<size_t>(i) * seq + j] = s;
                }
            for (int i = 0; i < seq; ++i) ref_softmax_row(att.data() + static_cast<size_t>(i) * seq, seq);
            out.attention[static_cast<size_t>(li)].push_back(att);
            for (int i = 0; i < seq; ++i)
                for (int p = 0; p < dh; ++p) {
                    double s = 0.0;
                    for (int j = 0; j < seq; ++j)
                        s += att[static_cast<size_t>(i) * seq + j] *
                             v[static_cast<size_t>(j) * H + hi * dh + p];
                    merged[static_cast<size_t>(i) * H + hi * dh + p] = s;
                }
        }
        DVec attn_out(static_cast<size_t>(seq) * H, 0.0);
        ref_matmul(merged, to_dvec(L.wo), attn_out, seq, H, H);
        const DVec bo = to_dvec(L.bo);
        for (int i = 0; i < seq; ++i)
            for (int j = 0; j < H; ++j)
                x[static_cast<size_t>(i) * H + j] += attn_out[static_cast<size_t>(i) * H + j] +
                                                     bo[static_cast<size_t>(j)];
        DVec h2 = x;
        ref_layer_norm(h2, to_dvec(L.ln2_g), to_dvec(L.ln2_b), seq, H);
        const int F = w.config.ffn_dim;
        DVec f1(static_cast<size_t>(seq) * F, 0.0);
        ref_matmul(h2, to_dvec(L.w1), f1, seq, H, F);
        const DVec b1 = to_dvec(L.b1);
        for (int i = 0; i < seq; ++i)
            for (int j = 0; j < F; ++j)
                f1[static_cast<size_t>(i) * F + j] =
                    ref_gelu(f1[static_cast<size_t>(i) * F + j] + b1[static_cast<size_t>(j)]);
        DVec f2(static_cast<size_t>(seq) * H, 0.0);
        ref_matmul(f1, to_dvec(L.w2), f2, seq, F, H);
        const DVec b2 = to_dvec(L.b2);
        for (int i = 0; i < seq; ++i)
            for (int j = 0; j < H; ++j)
                x[static_cast<size_t>(i) * H + j] += f2[static_cast<size_t>(i) * H + j] +
                                                     b2[static_cast<size_t>(j)];
    }
    ref_layer_norm(x, to_dvec(w.final_g), to_dvec(w.final_b), seq, H);
    out.hidden = std::move(x);
    return out;
}

inline DVec ref_pool(const vld::ModelWeights& w, const DVec& hidden,
                     const vld::EncoderInput& in, vld::Pooling mode) {
    const int H = w.config.hidden_dim;
    const int seq = in.seq();
    DVec row(static_cast<size_t>(H), 0.0);
    if (mode == vld::Pooling::CLS) {
        for (int j = 0; j < H; ++j) row[static_cast<size_t>(j)] = hidden[static_cast<size_t>(j)];
    } else if (mode == vld::Pooling::SEP) {
        int sep = -1;
        for (int i = 0; i < seq; ++i)
            if (!in.pad_mask[static_cast<size_t>(i)] &&
                in.slots[static_cast<size_t>(i)].kind == vld::SlotKind::Special &&
                in.slots[static_cast<size_t>(i)].token_id == vld::kSepId)
                sep = i;
        if (sep < 0) throw std::runtime_error("reference: no SEP slot");
        for (int j = 0; j < H; ++j)
            row[static_cast<size_t>(j)] = hidden[static_cast<size_t>(sep) * H + j];
    } else {
        int n = 0;
        for (int i = 0; i < seq; ++i) {
            if (in.pad_mask[static_cast<size_t>(i)]) continue;
            ++n;
            for (int j = 0; j < H; ++j)
                row[static_cast<size_t>(j)] += hidden[static_cast<size_t>(i) * H + j];
        }
        for (int j = 0; j < H; ++j) row[static_cast<size_t>(j)] /= n;
    }
    const DVec pw = to_dvec(w.pooler_w), pb = to_dvec(w.pooler_b);
    DVec out(static_cast<size_t>(H), 0.0);
    for (int j = 0; j < H; ++j) {
        double s = pb[static_cast<size_t>(j)];
        for (int p = 0; p < H; ++p) s += row[static_cast<size_t>(p)] * pw[static_cast<size_t>(p) * H + j];
        out[static_cast<size_t>(j)] = std::tanh(s);
    }
    return out;
}

inline double ref_joint_logit(const vld::ModelWeights& w, const vld::EncoderInput& joint) {
    const RefEncodeResult enc = ref_encode(w, joint);
    const int H = w.config.hidden_dim;
    double s = w.head_b.at(0);
    for (int j = 0; j < H; ++j)
        s += enc.hidden[static_cast<size_t>(j)] * static_cast<double>(w.head_w.at(j, 0));
    return s;
}

} // namespace refmodel
