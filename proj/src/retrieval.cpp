#include "vld/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>

#include "vld/errors.hpp"
#include "vld/io_util.hpp"

namespace vld {

namespace {

constexpr char kIndexMagic[4] = {'V', 'L', 'D', 'I'};
constexpr std::uint32_t kIndexVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

// XOR of the bytes taken as little-endian u64 words, tail zero-padded.
std::uint64_t xor_checksum(const char* data, std::size_t len) {
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < len; i += 8) {
        std::uint64_t word = 0;
        for (std::size_t b = 0; b < 8 && i + b < len; ++b) {
            word |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[i + b])) << (8 * b);
        }
        sum ^= word;
    }
    return sum;
}

struct Cursor {
    const char* p;
    std::size_t left;
    const std::string& path;

    void need(std::size_t n, const char* what) {
        if (left < n) {
            throw DataError("index file " + path + " truncated reading " + what);
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        }
        p += 4;
        left -= 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        }
        p += 8;
        left -= 8;
        return v;
    }
    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

double vector_norm(const float* v, int dim) {
    double sq = 0.0;
    for (int i = 0; i < dim; ++i) sq += static_cast<double>(v[i]) * v[i];
    return std::sqrt(sq);
}

} // namespace

// ---------------------------------------------------------------------------
// EmbeddingIndex

EmbeddingIndex::EmbeddingIndex(int dim) : dim_(dim) {
    if (dim < 1) throw ContractError("index dim must be >= 1");
}

void EmbeddingIndex::add(std::uint64_t id, const std::vector<float>& vec) {
    if (dim_ < 1) throw ContractError("cannot add to a dimensionless index");
    if (static_cast<int>(vec.size()) != dim_) {
        throw ContractError("index add: vector has dim " + std::to_string(vec.size()) +
                            ", index holds " + std::to_string(dim_));
    }
    for (std::uint64_t existing : ids_) {
        if (existing == id) {
            throw DataError("duplicate id " + std::to_string(id) + " in index");
        }
    }
    const double norm = vector_norm(vec.data(), dim_);
    if (norm == 0.0) {
        throw ContractError("zero-norm vector for id " + std::to_string(id));
    }
    ids_.push_back(id);
    data_.insert(data_.end(), vec.begin(), vec.end());
    norms_.push_back(norm);
}

std::size_t EmbeddingIndex::byte_size() const {
    // header (magic + version + dim + count) + records + checksum footer
    return 4 + 4 + 4 + 8 + size() * (8 + 4 * static_cast<std::size_t>(dim_)) + 8;
}

void EmbeddingIndex::save(const std::string& path) const {
    std::string body;
    body.reserve(size() * (8 + 4 * static_cast<std::size_t>(dim_)));
    for (std::size_t i = 0; i < size(); ++i) {
        put_u64(body, ids_[i]);
        for (int d = 0; d < dim_; ++d) put_f32(body, vec_at(i)[d]);
    }

    std::string out;
    out.reserve(byte_size());
    out.append(kIndexMagic, 4);
    put_u32(out, kIndexVersion);
    put_u32(out, static_cast<std::uint32_t>(dim_));
    put_u64(out, size());
    out += body;
    put_u64(out, xor_checksum(body.data(), body.size()));
    atomic_write(path, out);
}

EmbeddingIndex EmbeddingIndex::load(const std::string& path) {
    const std::string bytes = read_file(path);
    Cursor c{bytes.data(), bytes.size(), path};

    c.need(4, "magic");
    if (std::memcmp(c.p, kIndexMagic, 4) != 0) {
        throw DataError("index file " + path + " has bad magic");
    }
    c.p += 4;
    c.left -= 4;
    const std::uint32_t version = c.u32("version");
    if (version != kIndexVersion) {
        throw DataError("index file " + path + " has unsupported version " +
                        std::to_string(version));
    }
    const std::uint32_t dim = c.u32("dim");
    if (dim < 1) throw DataError("index file " + path + " has dim 0");
    const std::uint64_t count = c.u64("count");

    const std::size_t record = 8 + 4 * static_cast<std::size_t>(dim);
    if (c.left < 8 || (c.left - 8) / record < count) {
        throw DataError("index file " + path + " truncated reading records");
    }
    if (c.left != count * record + 8) {
        throw DataError("index file " + path + " has trailing bytes");
    }
    const char* body = c.p;
    const std::uint64_t want = xor_checksum(body, count * record);

    EmbeddingIndex idx(static_cast<int>(dim));
    std::vector<float> vec(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t id = c.u64("record id");
        for (std::uint32_t d = 0; d < dim; ++d) vec[d] = c.f32("record vector");
        try {
            idx.add(id, vec);
        } catch (const ContractError& e) {
            throw DataError("index file " + path + ": " + e.what());
        }
    }
    const std::uint64_t got = c.u64("checksum");
    if (got != want) {
        throw DataError("index file " + path + " failed checksum");
    }
    return idx;
}

// ---------------------------------------------------------------------------
// cosine_topk

RetrievalResult cosine_topk(const EmbeddingIndex& index, const std::vector<float>& query,
                            int k, std::uint64_t query_id) {
    if (k < 1) throw ContractError("cosine_topk k must be >= 1");
    if (index.dim() > 0 && static_cast<int>(query.size()) != index.dim()) {
        throw ContractError("cosine_topk: query dim " + std::to_string(query.size()) +
                            " vs index dim " + std::to_string(index.dim()));
    }
    const double qnorm = vector_norm(query.data(), static_cast<int>(query.size()));
    if (qnorm == 0.0) throw ContractError("cosine_topk: zero-norm query");

    RetrievalResult res;
    res.query_id = query_id;
    res.hits.resize(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const float* v = index.vec_at(i);
        double dot = 0.0;
        for (int d = 0; d < index.dim(); ++d) dot += static_cast<double>(query[d]) * v[d];
        res.hits[i].id = index.id_at(i);
        res.hits[i].score = static_cast<float>(dot / (qnorm * index.norm_at(i)));
    }

    const auto better = [](const ScoredId& a, const ScoredId& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    };
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), res.hits.size());
    std::partial_sort(res.hits.begin(), res.hits.begin() + static_cast<std::ptrdiff_t>(keep),
                      res.hits.end(), better);
    res.hits.resize(keep);
    return res;
}

// ---------------------------------------------------------------------------
// Corpus encoding

Tower tower_from_string(const std::string& s) {
    if (s == "text") return Tower::Text;
    if (s == "image") return Tower::Image;
    throw ConfigError("unknown tower '" + s + "' (expected text|image)");
}

std::string to_string(Tower tower) {
    return tower == Tower::Text ? "text" : "image";
}

namespace {

// Shared skeleton: one forward per item, zero-norm embeddings excluded.
template <typename Record, typename BuildInput>
EmbeddingIndex encode_items(const ModelWeights& w, const std::vector<Record>& items,
                            CorpusStats* stats, BuildInput build) {
    EmbeddingIndex idx(w.config.hidden_dim);
    for (const Record& item : items) {
        const Tensor pooled = individual_forward(w, build(item));
        if (stats) ++stats->forwards;
        const double norm = vector_norm(pooled.data(), w.config.hidden_dim);
        const std::uint64_t id = static_cast<std::uint64_t>(item.id);
        if (norm == 0.0) {
            std::fprintf(stderr, "warning: zero-norm embedding for item %llu excluded\n",
                         static_cast<unsigned long long>(id));
            if (stats) stats->excluded.push_back(id);
            continue;
        }
        idx.add(id, std::vector<float>(pooled.data(), pooled.data() + w.config.hidden_dim));
    }
    return idx;
}

void check_text_fits(const ModelWeights& w, const std::vector<TextRecord>& items) {
    for (const TextRecord& t : items) {
        for (int tok : t.tokens) {
            if (tok < 0 || tok >= w.config.vocab_size) {
                throw ConfigError("text " + std::to_string(t.id) + " has token " +
                                  std::to_string(tok) + " outside vocab of " +
                                  std::to_string(w.config.vocab_size));
            }
        }
    }
}

void check_images_fit(const ModelWeights& w, const std::vector<ImageRecord>& items) {
    for (const ImageRecord& im : items) {
        if (im.regions.cols() != w.config.feat_dim) {
            throw ConfigError("image " + std::to_string(im.id) + " has feat_dim " +
                              std::to_string(im.regions.cols()) + ", model expects " +
                              std::to_string(w.config.feat_dim));
        }
        for (int tag : im.tags) {
            if (tag < 0 || tag >= w.config.vocab_size) {
                throw ConfigError("image " + std::to_string(im.id) + " has tag " +
                                  std::to_string(tag) + " outside vocab of " +
                                  std::to_string(w.config.vocab_size));
            }
        }
    }
}

} // namespace

EmbeddingIndex encode_text_corpus(const ModelWeights& w, const std::vector<TextRecord>& items,
                                  CorpusStats* stats, int max_seq) {
    check_text_fits(w, items);
    return encode_items(w, items, stats,
                        [max_seq](const TextRecord& t) { return build_text_input(t, max_seq); });
}

EmbeddingIndex encode_image_corpus(const ModelWeights& w, const std::vector<ImageRecord>& items,
                                   CorpusStats* stats, int max_seq) {
    check_images_fit(w, items);
    return encode_items(w, items, stats, [max_seq](const ImageRecord& im) {
        return build_image_input(im, max_seq);
    });
}

EmbeddingIndex encode_corpus(const ModelWeights& w, const Dataset& ds, Tower tower,
                             CorpusStats* stats, int max_seq) {
    if (tower == Tower::Text) {
        std::vector<TextRecord> items;
        items.reserve(ds.pairs.size());
        for (const PairRecord& p : ds.pairs) items.push_back(p.text);
        return encode_text_corpus(w, items, stats, max_seq);
    }
    std::vector<ImageRecord> items;
    items.reserve(ds.pairs.size());
    for (const PairRecord& p : ds.pairs) items.push_back(p.image);
    return encode_image_corpus(w, items, stats, max_seq);
}

// ---------------------------------------------------------------------------
// Evaluation

EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "decomposed") return EvalMode::Decomposed;
    if (s == "joint") return EvalMode::Joint;
    throw ConfigError("unknown eval mode '" + s + "' (expected decomposed|joint)");
}

std::string to_string(EvalMode mode) {
    return mode == EvalMode::Decomposed ? "decomposed" : "joint";
}

namespace {

bool same_text(const TextRecord& a, const TextRecord& b) {
    return a.tokens == b.tokens;
}

bool same_image(const ImageRecord& a, const ImageRecord& b) {
    if (a.tags != b.tags) return false;
    if (a.regions.rows() != b.regions.rows() || a.regions.cols() != b.regions.cols()) return false;
    return std::memcmp(a.regions.data(), b.regions.data(),
                       sizeof(float) * static_cast<std::size_t>(a.regions.rows()) *
                           static_cast<std::size_t>(a.regions.cols())) == 0;
}

// Unique corpora plus many-to-many ground truth. A repeated id must carry
// identical content (the multi-caption convention); otherwise it is a clash.
struct EvalSetup {
    std::vector<TextRecord> texts;
    std::vector<ImageRecord> images;
    std::map<int, std::set<int>> gt_t2i;
    std::map<int, std::set<int>> gt_i2t;
};

EvalSetup build_eval_setup(const Dataset& ds) {
    EvalSetup s;
    std::map<int, std::size_t> text_pos, image_pos;
    for (const PairRecord& p : ds.pairs) {
        auto t = text_pos.find(p.text.id);
        if (t == text_pos.end()) {
            text_pos[p.text.id] = s.texts.size();
            s.texts.push_back(p.text);
        } else if (!same_text(s.texts[t->second], p.text)) {
            throw DataError("duplicate text id " + std::to_string(p.text.id) +
                            " with differing content");
        }
        auto i = image_pos.find(p.image.id);
        if (i == image_pos.end()) {
            image_pos[p.image.id] = s.images.size();
            s.images.push_back(p.image);
        } else if (!same_image(s.images[i->second], p.image)) {
            throw DataError("duplicate image id " + std::to_string(p.image.id) +
                            " with differing content");
        }
        s.gt_t2i[p.text.id].insert(p.image.id);
        s.gt_i2t[p.image.id].insert(p.text.id);
    }
    return s;
}

// Fraction of queries whose top-k ranking contains any correct id. The
// ranking callback fills `ranked` with ids best-first for a query index.
template <typename RankFn>
void recalls_at(std::size_t n_queries, const RankFn& rank,
                const std::function<const std::set<int>*(std::size_t)>& truth, double* r1,
                double* r5, double* r10) {
    int h1 = 0, h5 = 0, h10 = 0;
    std::vector<std::uint64_t> ranked;
    for (std::size_t q = 0; q < n_queries; ++q) {
        ranked.clear();
        rank(q, ranked); // at most 10 ids, best first
        const std::set<int>* gt = truth(q);
        for (std::size_t r = 0; r < ranked.size() && r < 10; ++r) {
            if (gt->count(static_cast<int>(ranked[r])) == 0) continue;
            if (r < 1) ++h1;
            if (r < 5) ++h5;
            ++h10;
            break;
        }
    }
    *r1 = static_cast<double>(h1) / static_cast<double>(n_queries);
    *r5 = static_cast<double>(h5) / static_cast<double>(n_queries);
    *r10 = static_cast<double>(h10) / static_cast<double>(n_queries);
}

} // namespace

EvalReport evaluate(const ModelWeights& w, const Dataset& ds, EvalMode mode, int max_seq) {
    if (ds.pairs.empty()) throw DataError("evaluate: empty dataset");
    const EvalSetup s = build_eval_setup(ds);
    const std::size_t nt = s.texts.size();
    const std::size_t ni = s.images.size();

    EvalReport rep;
    if (mode == EvalMode::Decomposed) {
        CorpusStats tstats, istats;
        const EmbeddingIndex text_idx = encode_text_corpus(w, s.texts, &tstats, max_seq);
        const EmbeddingIndex image_idx = encode_image_corpus(w, s.images, &istats, max_seq);
        rep.inference_count = tstats.forwards + istats.forwards;

        const auto rank_against = [](const EmbeddingIndex& queries, std::uint64_t qid,
                                     const EmbeddingIndex& corpus,
                                     std::vector<std::uint64_t>& out) {
            for (std::size_t e = 0; e < queries.size(); ++e) {
                if (queries.id_at(e) != qid) continue;
                const std::vector<float> q(queries.vec_at(e), queries.vec_at(e) + queries.dim());
                const int k = static_cast<int>(std::min<std::size_t>(10, corpus.size()));
                if (k < 1) return;
                for (const ScoredId& hit : cosine_topk(corpus, q, k, qid).hits) {
                    out.push_back(hit.id);
                }
                return;
            }
            // query embedding was excluded (zero norm): counts as a miss
        };
        recalls_at(
            nt,
            [&](std::size_t q, std::vector<std::uint64_t>& out) {
                rank_against(text_idx, static_cast<std::uint64_t>(s.texts[q].id), image_idx, out);
            },
            [&](std::size_t q) { return &s.gt_t2i.at(s.texts[q].id); }, &rep.r1_t2i, &rep.r5_t2i,
            &rep.r10_t2i);
        recalls_at(
            ni,
            [&](std::size_t q, std::vector<std::uint64_t>& out) {
                rank_against(image_idx, static_cast<std::uint64_t>(s.images[q].id), text_idx, out);
            },
            [&](std::size_t q) { return &s.gt_i2t.at(s.images[q].id); }, &rep.r1_i2t, &rep.r5_i2t,
            &rep.r10_i2t);
    } else {
        // Joint: every combination through the alignment head.
        Tensor logits({static_cast<int>(nt), static_cast<int>(ni)});
        for (std::size_t i = 0; i < nt; ++i) {
            for (std::size_t j = 0; j < ni; ++j) {
                PairRecord pr;
                pr.text = s.texts[i];
                pr.image = s.images[j];
                logits.at(static_cast<int>(i), static_cast<int>(j)) = joint_forward(w, pr, max_seq);
            }
        }
        rep.inference_count = static_cast<std::uint64_t>(nt) * static_cast<std::uint64_t>(ni);

        const auto rank_row = [&](std::size_t i, std::vector<std::uint64_t>& out) {
            std::vector<std::size_t> order(ni);
            std::iota(order.begin(), order.end(), 0u);
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const float sa = logits.at(static_cast<int>(i), static_cast<int>(a));
                const float sb = logits.at(static_cast<int>(i), static_cast<int>(b));
                if (sa != sb) return sa > sb;
                return s.images[a].id < s.images[b].id;
            });
            for (std::size_t r = 0; r < order.size() && r < 10; ++r) {
                out.push_back(static_cast<std::uint64_t>(s.images[order[r]].id));
            }
        };
        const auto rank_col = [&](std::size_t j, std::vector<std::uint64_t>& out) {
            std::vector<std::size_t> order(nt);
            std::iota(order.begin(), order.end(), 0u);
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const float sa = logits.at(static_cast<int>(a), static_cast<int>(j));
                const float sb = logits.at(static_cast<int>(b), static_cast<int>(j));
                if (sa != sb) return sa > sb;
                return s.texts[a].id < s.texts[b].id;
            });
            for (std::size_t r = 0; r < order.size() && r < 10; ++r) {
                out.push_back(static_cast<std::uint64_t>(s.texts[order[r]].id));
            }
        };
        recalls_at(nt, rank_row, [&](std::size_t q) { return &s.gt_t2i.at(s.texts[q].id); },
                   &rep.r1_t2i, &rep.r5_t2i, &rep.r10_t2i);
        recalls_at(ni, rank_col, [&](std::size_t q) { return &s.gt_i2t.at(s.images[q].id); },
                   &rep.r1_i2t, &rep.r5_i2t, &rep.r10_i2t);
    }

    rep.average_recall = (rep.r1_t2i + rep.r5_t2i + rep.r10_t2i + rep.r1_i2t + rep.r5_i2t +
                          rep.r10_i2t) /
                         6.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Latency harness

double percentile_nearest_rank(std::vector<double> samples, double pct) {
    if (samples.empty()) throw ContractError("percentile of no samples");
    if (pct <= 0.0 || pct > 100.0) throw ContractError("percentile pct must be in (0, 100]");
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return samples[rank - 1];
}

LatencyReport summarize_latencies(const std::vector<double>& samples_ms) {
    if (samples_ms.empty()) throw ContractError("summarize_latencies: no samples");
    LatencyReport r;
    r.samples = samples_ms.size();
    r.min_ms = *std::min_element(samples_ms.begin(), samples_ms.end());
    r.max_ms = *std::max_element(samples_ms.begin(), samples_ms.end());
    r.avg_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) /
               static_cast<double>(samples_ms.size());
    r.p95_ms = percentile_nearest_rank(samples_ms, 95.0);
    r.p9999_ms = percentile_nearest_rank(samples_ms, 99.99);
    return r;
}

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::size_t model_bytes(const ModelWeights& w) {
    return static_cast<std::size_t>(w.param_count()) * sizeof(float);
}

Dataset bench_corpus(const ModelWeights& w, int n, unsigned seed) {
    SynthConfig sc;
    sc.n_pairs = n;
    const int max_classes = (w.config.vocab_size - 2) / 2;
    sc.n_classes = std::max(1, std::min({32, n, max_classes}));
    sc.feat_dim = w.config.feat_dim;
    sc.vocab_size = w.config.vocab_size;
    sc.noise = 0.1f;
    sc.seed = seed;
    sc.text_len = 8;
    sc.n_regions = 4;
    sc.n_tags = 1;
    return synth_dataset(sc);
}

} // namespace

std::vector<BenchRow> run_benchmark(const ModelWeights& w, const BenchOptions& opt) {
    if (opt.sizes.empty()) throw ConfigError("benchmark needs at least one corpus size");
    if (opt.queries < 1 || opt.batch < 1 || opt.repetitions < 1 || opt.warmup < 0 ||
        opt.k < 1 || opt.joint_sample_cells < 1) {
        throw ConfigError("benchmark options must be positive (warmup may be 0)");
    }

    std::vector<BenchRow> rows;
    for (int n : opt.sizes) {
        if (n < 1) throw ConfigError("benchmark corpus size must be >= 1");
        const Dataset ds = bench_corpus(w, n, opt.seed);
        const std::size_t base_mem = model_bytes(w);

        // --- single-query latency against a pre-built image index
        {
            const EmbeddingIndex index = encode_corpus(w, ds, Tower::Image);
            const int k = static_cast<int>(
                std::min<std::size_t>(static_cast<std::size_t>(opt.k), index.size()));
            std::vector<double> samples;
            samples.reserve(static_cast<std::size_t>(opt.queries));
            std::uint64_t forwards = 0;
            for (int i = 0; i < opt.warmup + opt.queries; ++i) {
                const double t0 = now_ms();
                for (int b = 0; b < opt.batch; ++b) {
                    const std::size_t pick =
                        (static_cast<std::size_t>(i) * static_cast<std::size_t>(opt.batch) + b) %
                        ds.pairs.size();
                    const Tensor q =
                        individual_forward(w, build_text_input(ds.pairs[pick].text));
                    if (k >= 1) {
                        cosine_topk(index,
                                    std::vector<float>(q.data(), q.data() + w.config.hidden_dim),
                                    k);
                    }
                }
                const double t1 = now_ms();
                if (i >= opt.warmup) {
                    samples.push_back(t1 - t0);
                    forwards += static_cast<std::uint64_t>(opt.batch);
                }
            }
            LatencyReport rep = summarize_latencies(samples);
            rep.inference_count = forwards;
            rep.memory_bytes = base_mem + index.byte_size();
            rows.push_back({n, "decomposed_query", rep});
        }

        // --- full decomposed matching job: encode both sides, rank every text
        {
            std::vector<double> samples;
            std::size_t index_bytes = 0;
            for (int rep_i = 0; rep_i < opt.repetitions; ++rep_i) {
                const double t0 = now_ms();
                const EmbeddingIndex text_idx = encode_corpus(w, ds, Tower::Text);
                const EmbeddingIndex image_idx = encode_corpus(w, ds, Tower::Image);
                const int k = static_cast<int>(
                    std::min<std::size_t>(static_cast<std::size_t>(opt.k), image_idx.size()));
                for (std::size_t e = 0; e < text_idx.size(); ++e) {
                    const std::vector<float> q(text_idx.vec_at(e),
                                               text_idx.vec_at(e) + text_idx.dim());
                    cosine_topk(image_idx, q, k);
                }
                const double t1 = now_ms();
                samples.push_back(t1 - t0);
                index_bytes = text_idx.byte_size() + image_idx.byte_size();
            }
            LatencyReport rep = summarize_latencies(samples);
            rep.inference_count = 2 * static_cast<std::uint64_t>(n);
            rep.memory_bytes = base_mem + index_bytes;
            rows.push_back({n, "decomposed_job", rep});
        }

        // --- full joint matching job: n^2 alignment scores, extrapolated from
        // a cell sample when the full grid is out of reach
        {
            const std::uint64_t cells =
                static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n);
            const std::uint64_t measured =
                std::min<std::uint64_t>(cells, static_cast<std::uint64_t>(opt.joint_sample_cells));
            std::vector<double> samples;
            for (int rep_i = 0; rep_i < opt.repetitions; ++rep_i) {
                const double t0 = now_ms();
                for (std::uint64_t c = 0; c < measured; ++c) {
                    PairRecord pr;
                    pr.text = ds.pairs[static_cast<std::size_t>(c / static_cast<std::uint64_t>(n))]
                                  .text;
                    pr.image = ds.pairs[static_cast<std::size_t>(c % static_cast<std::uint64_t>(n))]
                                   .image;
                    joint_forward(w, pr);
                }
                const double t1 = now_ms();
                const double scale = static_cast<double>(cells) / static_cast<double>(measured);
                samples.push_back((t1 - t0) * scale);
            }
            LatencyReport rep = summarize_latencies(samples);
            rep.extrapolated = measured < cells;
            rep.inference_count = cells;
            rep.memory_bytes = base_mem;
            rows.push_back({n, "joint_job", rep});
        }
    }
    return rows;
}

std::string format_benchmark(const std::vector<BenchRow>& rows) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-6s %-17s %12s %12s %12s %12s %12s %10s %12s %s\n", "size",
                  "mode", "avg_ms", "min_ms", "max_ms", "p95_ms", "p99.99_ms", "mem_mb",
                  "inferences", "extrapolated");
    out += line;
    for (const BenchRow& r : rows) {
        std::snprintf(line, sizeof(line),
                      "%-6d %-17s %12.3f %12.3f %12.3f %12.3f %12.3f %10.2f %12llu %s\n",
                      r.corpus_size, r.mode.c_str(), r.report.avg_ms, r.report.min_ms,
                      r.report.max_ms, r.report.p95_ms, r.report.p9999_ms,
                      static_cast<double>(r.report.memory_bytes) / (1024.0 * 1024.0),
                      static_cast<unsigned long long>(r.report.inference_count),
                      r.report.extrapolated ? "yes" : "no");
        out += line;
    }
    return out;
}

void write_benchmark_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::string out =
        "corpus_size,mode,avg_ms,min_ms,max_ms,p95_ms,p9999_ms,memory_bytes,inference_count,"
        "extrapolated\n";
    char line[256];
    for (const BenchRow& r : rows) {
        std::snprintf(line, sizeof(line), "%d,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%zu,%llu,%d\n",
                      r.corpus_size, r.mode.c_str(), r.report.avg_ms, r.report.min_ms,
                      r.report.max_ms, r.report.p95_ms, r.report.p9999_ms, r.report.memory_bytes,
                      static_cast<unsigned long long>(r.report.inference_count),
                      r.report.extrapolated ? 1 : 0);
        out += line;
    }
    atomic_write(path, out);
}

} // namespace vld
