#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vld/data.hpp"
#include "vld/model.hpp"
#include "vld/tensor.hpp"

namespace vld {

// ---------------------------------------------------------------------------
// Embedding index: an immutable offline store of corpus embeddings supporting
// exact cosine top-k. Ids are unique and every stored vector has a positive
// norm (norms are precomputed at insert time).

class EmbeddingIndex {
public:
    EmbeddingIndex() = default;
    explicit EmbeddingIndex(int dim);

    int dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }

    // Inserts one entry. Duplicate id -> DataError; zero-norm vector or a
    // dimension mismatch -> ContractError.
    void add(std::uint64_t id, const std::vector<float>& vec);

    std::uint64_t id_at(std::size_t i) const { return ids_[i]; }
    const float* vec_at(std::size_t i) const { return data_.data() + i * static_cast<std::size_t>(dim_); }
    double norm_at(std::size_t i) const { return norms_[i]; }

    // Serialized footprint in bytes (header + records + checksum footer);
    // doubles as the resident-memory estimate for reports.
    std::size_t byte_size() const;

    // Binary little-endian file: magic "VLDI", u32 version, u32 dim,
    // u64 count, count x (u64 id, dim x f32), u64 XOR checksum of the record
    // bytes taken as zero-padded u64 words. Written atomically.
    void save(const std::string& path) const;
    static EmbeddingIndex load(const std::string& path);

private:
    int dim_ = 0;
    std::vector<std::uint64_t> ids_;
    std::vector<float> data_;    // size x dim, row per entry
    std::vector<double> norms_;  // double so cosine arithmetic stays exact
};

// ---------------------------------------------------------------------------
// Exact cosine top-k.

struct ScoredId {
    std::uint64_t id = 0;
    float score = 0.0f;
};

struct RetrievalResult {
    std::uint64_t query_id = 0;
    std::vector<ScoredId> hits; // scores non-increasing, ties by ascending id
};

// Scores the query against every entry (no approximation) and returns the
// top min(k, size) by cosine, ties broken by ascending id. Zero-norm query,
// k < 1, or a dimension mismatch -> ContractError.
RetrievalResult cosine_topk(const EmbeddingIndex& index, const std::vector<float>& query,
                            int k, std::uint64_t query_id = 0);

// ---------------------------------------------------------------------------
// Offline corpus encoding. Exactly one individual forward per item; items
// whose pooled embedding has zero norm are warned about on stderr, recorded
// in the stats, and left out of the index.

enum class Tower { Text, Image };
Tower tower_from_string(const std::string& s);
std::string to_string(Tower tower);

struct CorpusStats {
    std::uint64_t forwards = 0;
    std::vector<std::uint64_t> excluded;
};

EmbeddingIndex encode_text_corpus(const ModelWeights& w, const std::vector<TextRecord>& items,
                                  CorpusStats* stats = nullptr, int max_seq = 0);
EmbeddingIndex encode_image_corpus(const ModelWeights& w, const std::vector<ImageRecord>& items,
                                   CorpusStats* stats = nullptr, int max_seq = 0);
// Convenience wrapper pulling one side out of a paired dataset.
EmbeddingIndex encode_corpus(const ModelWeights& w, const Dataset& ds, Tower tower,
                             CorpusStats* stats = nullptr, int max_seq = 0);

// ---------------------------------------------------------------------------
// Recall evaluation. Ground truth comes from the pair list: a text is allowed
// to appear in several pairs (and likewise an image), so a query may have
// several correct ids and counts a hit if any of them is retrieved. The same
// id carrying different content is a DataError.

enum class EvalMode { Decomposed, Joint };
EvalMode eval_mode_from_string(const std::string& s);
std::string to_string(EvalMode mode);

struct EvalReport {
    double r1_t2i = 0.0, r5_t2i = 0.0, r10_t2i = 0.0;
    double r1_i2t = 0.0, r5_i2t = 0.0, r10_i2t = 0.0;
    double average_recall = 0.0;        // mean of the six recalls
    std::uint64_t inference_count = 0;  // decomposed: n_text + n_image; joint: n_text * n_image
};

// Decomposed mode ranks by cosine between independently encoded sides; joint
// mode scores every text x image combination with the alignment head and
// ranks by logit (ties by ascending id).
EvalReport evaluate(const ModelWeights& w, const Dataset& ds, EvalMode mode, int max_seq = 0);

// ---------------------------------------------------------------------------
// Latency harness.

struct LatencyReport {
    double avg_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
    double p95_ms = 0.0;
    double p9999_ms = 0.0; // P99.99
    std::size_t samples = 0;
    bool extrapolated = false; // joint totals projected from a cell sample
    std::uint64_t inference_count = 0;
    std::size_t memory_bytes = 0; // resident estimate: index + model only
};

// Nearest-rank percentile over the samples; pct in (0, 100].
double percentile_nearest_rank(std::vector<double> samples, double pct);

// avg/min/max/P95/P99.99 summary of per-sample wall-clock times.
LatencyReport summarize_latencies(const std::vector<double>& samples_ms);

struct BenchOptions {
    std::vector<int> sizes = {1000, 5000, 10000};
    int queries = 100;             // per-query timing samples per size
    int batch = 1;                 // queries per timed sample
    int repetitions = 3;           // full-matching-job repetitions
    int warmup = 5;                // discarded leading samples
    int k = 10;
    int joint_sample_cells = 2000; // joint cells actually timed before extrapolating
    unsigned seed = 0;
};

struct BenchRow {
    int corpus_size = 0;
    std::string mode; // "decomposed_query" | "decomposed_job" | "joint_job"
    LatencyReport report;
};

// Times, per corpus size: single-query retrieval against a pre-built index,
// the full decomposed matching job (encode both sides + rank), and the full
// joint matching job (every combination through the alignment head; sizes
// beyond joint_sample_cells are extrapolated from the measured cells and
// flagged). Synthetic corpora are generated to fit the model's config.
std::vector<BenchRow> run_benchmark(const ModelWeights& w, const BenchOptions& opt);

// Fixed-width table mirroring the report layout (Avg/Min/Max/P95/P99.99/Mem).
std::string format_benchmark(const std::vector<BenchRow>& rows);
void write_benchmark_csv(const std::string& path, const std::vector<BenchRow>& rows);

} // namespace vld
