#include "vld/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "vld/errors.hpp"
#include "vld/io_util.hpp"

namespace vld {

void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw DataError("cannot rename " + tmp + " to " + path);
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int EncoderInput::n_real() const {
    int n = 0;
    for (size_t i = 0; i < slots.size(); ++i) n += pad_mask[i] ? 0 : 1;
    return n;
}

int EncoderInput::n_specials() const {
    int n = 0;
    for (const Slot& s : slots) n += (s.kind == SlotKind::Special) ? 1 : 0;
    return n;
}

std::vector<bool> EncoderInput::real_mask() const {
    std::vector<bool> m(pad_mask.size());
    for (size_t i = 0; i < pad_mask.size(); ++i) m[i] = !pad_mask[i];
    return m;
}

namespace {

Slot special_slot(int token_id, int pos) {
    Slot s;
    s.kind = SlotKind::Special;
    s.token_id = token_id;
    s.position_id = pos;
    s.segment = Segment::T;
    s.modality = Modality::Neutral;
    return s;
}

Slot token_slot(SlotKind kind, int token_id, int pos, Segment seg, Modality mod) {
    Slot s;
    s.kind = kind;
    s.token_id = token_id;
    s.position_id = pos;
    s.segment = seg;
    s.modality = mod;
    return s;
}

Slot region_slot(int region_index, int pos) {
    Slot s;
    s.kind = SlotKind::Region;
    s.region_index = region_index;
    s.position_id = pos;
    s.segment = Segment::V;
    s.modality = Modality::Image;
    return s;
}

void finish(EncoderInput& in) { in.pad_mask.assign(in.slots.size(), false); }

} // namespace

EncoderInput build_joint_input(const PairRecord& pair, int max_seq) {
    int W = static_cast<int>(pair.text.tokens.size());
    int T = static_cast<int>(pair.image.tags.size());
    const int K = pair.image.regions.empty() ? 0 : pair.image.regions.rows();
    if (max_seq > 0) {
        int over = 3 + W + T + K - max_seq;
        if (over > 0) {
            const int dw = std::min(W, over);
            W -= dw;
            over -= dw;
            const int dt = std::min(T, over);
            T -= dt;
            over -= dt;
            if (over > 0) {
                throw ContractError("joint input with " + std::to_string(K) +
                                    " regions cannot fit max_seq " + std::to_string(max_seq) +
                                    "; regions are never truncated");
            }
        }
    }
    EncoderInput in;
    int pos = 0;
    in.slots.push_back(special_slot(kClsId, pos++));
    for (int i = 0; i < W; ++i) {
        in.slots.push_back(token_slot(SlotKind::Word, pair.text.tokens[static_cast<size_t>(i)],
                                      pos++, Segment::T, Modality::Text));
    }
    in.slots.push_back(special_slot(kSepId, pos++));
    for (int i = 0; i < T; ++i) {
        in.slots.push_back(token_slot(SlotKind::Tag, pair.image.tags[static_cast<size_t>(i)],
                                      pos++, Segment::T, Modality::Image));
    }
    in.slots.push_back(special_slot(kSepId, pos++));
    for (int i = 0; i < K; ++i) in.slots.push_back(region_slot(i, pos++));
    in.region_feats = pair.image.regions;
    finish(in);
    return in;
}

EncoderInput build_text_input(const TextRecord& text, int max_seq) {
    int L = static_cast<int>(text.tokens.size());
    if (max_seq > 0 && 2 + L > max_seq) L = std::max(0, max_seq - 2);
    EncoderInput in;
    in.slots.push_back(special_slot(kClsId, 0));
    for (int i = 0; i < L; ++i) {
        in.slots.push_back(token_slot(SlotKind::Word, text.tokens[static_cast<size_t>(i)], i,
                                      Segment::T, Modality::Text));
    }
    in.slots.push_back(special_slot(kSepId, L));
    finish(in);
    return in;
}

EncoderInput build_image_input(const ImageRecord& image, int max_seq, ImagePositionMode mode) {
    int T = static_cast<int>(image.tags.size());
    const int K = image.regions.empty() ? 0 : image.regions.rows();
    if (max_seq > 0) {
        int over = 2 + T + K - max_seq;
        if (over > 0) {
            const int dt = std::min(T, over);
            T -= dt;
            over -= dt;
            if (over > 0) {
                throw ContractError("image input with " + std::to_string(K) +
                                    " regions cannot fit max_seq " + std::to_string(max_seq) +
                                    "; regions are never truncated");
            }
        }
    }
    EncoderInput in;
    in.slots.push_back(special_slot(kClsId, 0));
    for (int i = 0; i < T; ++i) {
        in.slots.push_back(token_slot(SlotKind::Tag, image.tags[static_cast<size_t>(i)], i,
                                      Segment::T, Modality::Image));
    }
    in.slots.push_back(special_slot(kSepId, T));
    for (int i = 0; i < K; ++i) {
        const int pos = (mode == ImagePositionMode::Separate) ? i : T + 1 + i;
        in.slots.push_back(region_slot(i, pos));
    }
    in.region_feats = image.regions;
    finish(in);
    return in;
}

Dataset synth_dataset(const SynthConfig& cfg) {
    if (cfg.n_pairs < 1) throw ConfigError("synth n_pairs must be >= 1");
    if (cfg.n_classes < 1 || cfg.n_classes > cfg.n_pairs) {
        throw ConfigError("synth n_classes must be in [1, n_pairs]");
    }
    if (cfg.feat_dim < 1) throw ConfigError("synth feat_dim must be >= 1");
    if (cfg.noise < 0.0f) throw ConfigError("synth noise must be >= 0");
    if (cfg.text_len < 1) throw ConfigError("synth text_len must be >= 1");
    if (cfg.n_regions < 1) throw ConfigError("synth n_regions must be >= 1");
    if (cfg.n_tags < 0) throw ConfigError("synth n_tags must be >= 0");
    // Vocabulary layout: [0]=CLS, [1]=SEP, then one tag token per class, then
    // disjoint per-class word buckets over the remainder.
    const int words_start = 2 + cfg.n_classes;
    const int bucket = (cfg.vocab_size - words_start) / cfg.n_classes;
    if (bucket < 1) {
        throw ConfigError("synth vocab_size " + std::to_string(cfg.vocab_size) +
                          " too small for " + std::to_string(cfg.n_classes) +
                          " classes; need >= " + std::to_string(words_start + cfg.n_classes));
    }

    std::mt19937 rng(cfg.seed);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    // Unit-norm class prototypes.
    std::vector<Tensor> protos;
    protos.reserve(static_cast<size_t>(cfg.n_classes));
    for (int c = 0; c < cfg.n_classes; ++c) {
        Tensor p({cfg.feat_dim});
        double norm2 = 0.0;
        for (int j = 0; j < cfg.feat_dim; ++j) {
            p.at(j) = gauss(rng);
            norm2 += static_cast<double>(p.at(j)) * p.at(j);
        }
        const float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm2, 1e-30)));
        for (int j = 0; j < cfg.feat_dim; ++j) p.at(j) *= inv;
        protos.push_back(std::move(p));
    }

    Dataset ds;
    ds.vocab_size = cfg.vocab_size;
    ds.feat_dim = cfg.feat_dim;
    ds.pairs.reserve(static_cast<size_t>(cfg.n_pairs));
    for (int i = 0; i < cfg.n_pairs; ++i) {
        const int cls = i % cfg.n_classes;
        PairRecord pr;
        pr.aligned = true;
        pr.text.id = i;
        std::uniform_int_distribution<int> word_pick(words_start + cls * bucket,
                                                     words_start + (cls + 1) * bucket - 1);
        for (int w = 0; w < cfg.text_len; ++w) pr.text.tokens.push_back(word_pick(rng));
        pr.image.id = i;
        pr.image.tags.assign(static_cast<size_t>(cfg.n_tags), 2 + cls);
        pr.image.regions = Tensor({cfg.n_regions, cfg.feat_dim});
        for (int r = 0; r < cfg.n_regions; ++r) {
            for (int j = 0; j < cfg.feat_dim; ++j) {
                pr.image.regions.at(r, j) = protos[static_cast<size_t>(cls)].at(j) +
                                            cfg.noise * gauss(rng);
            }
        }
        ds.pairs.push_back(std::move(pr));
    }
    return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ostringstream out;
    out << "VLDS 1 " << ds.vocab_size << " " << ds.feat_dim << "\n";
    char buf[40];
    for (const PairRecord& pr : ds.pairs) {
        out << pr.text.id << " |";
        for (int w : pr.text.tokens) out << " " << w;
        out << " |";
        for (int tg : pr.image.tags) out << " " << tg;
        out << " | " << pr.image.regions.rows();
        for (int i = 0; i < pr.image.regions.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(pr.image.regions.at(i)));
            out << " " << buf;
        }
        out << "\n";
    }
    atomic_write(path, out.str());
}

namespace {

std::vector<std::string> split_pipes(const std::string& line) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        const size_t bar = line.find('|', start);
        if (bar == std::string::npos) {
            parts.push_back(line.substr(start));
            return parts;
        }
        parts.push_back(line.substr(start, bar - start));
        start = bar + 1;
    }
}

std::vector<int> parse_ints(const std::string& s, int vocab, int lineno, const char* what) {
    std::istringstream is(s);
    std::vector<int> out;
    int v;
    while (is >> v) {
        if (v < 0 || v >= vocab) {
            throw DataError("line " + std::to_string(lineno) + ": " + what + " id " +
                            std::to_string(v) + " outside vocabulary of " + std::to_string(vocab));
        }
        out.push_back(v);
    }
    std::string junk;
    if (is.bad() || (is >> junk && !junk.empty())) {
        throw DataError("line " + std::to_string(lineno) + ": malformed " + what + " list");
    }
    return out;
}

} // namespace

Dataset load_dataset(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file, expected VLDS header");
    {
        std::istringstream hs(line);
        std::string magic;
        int version = 0;
        if (!(hs >> magic >> version) || magic != "VLDS") {
            throw DataError(path + ": line 1: expected 'VLDS <version>' header");
        }
        if (version != 1) {
            throw DataError(path + ": unsupported dataset version " + std::to_string(version));
        }
    }
    Dataset ds;
    {
        std::istringstream hs(line);
        std::string magic;
        int version;
        if (!(hs >> magic >> version >> ds.vocab_size >> ds.feat_dim) || ds.vocab_size < 2 ||
            ds.feat_dim < 1) {
            throw DataError(path + ": line 1: malformed header '" + line + "'");
        }
    }
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            throw DataError(path + ": line " + std::to_string(lineno) + ": empty record line");
        }
        const std::vector<std::string> parts = split_pipes(line);
        if (parts.size() != 4) {
            throw DataError(path + ": line " + std::to_string(lineno) + ": expected 4 '|' fields, got " +
                            std::to_string(parts.size()));
        }
        PairRecord pr;
        {
            std::istringstream is(parts[0]);
            if (!(is >> pr.text.id)) {
                throw DataError(path + ": line " + std::to_string(lineno) + ": bad pair id");
            }
        }
        pr.image.id = pr.text.id;
        pr.text.tokens = parse_ints(parts[1], ds.vocab_size, lineno, "word");
        if (pr.text.tokens.empty()) {
            throw DataError(path + ": line " + std::to_string(lineno) + ": record has no words");
        }
        pr.image.tags = parse_ints(parts[2], ds.vocab_size, lineno, "tag");
        {
            std::istringstream is(parts[3]);
            int K = 0;
            if (!(is >> K) || K < 1) {
                throw DataError(path + ": line " + std::to_string(lineno) + ": bad region count");
            }
            pr.image.regions = Tensor({K, ds.feat_dim});
            for (int i = 0; i < pr.image.regions.size(); ++i) {
                float f;
                if (!(is >> f)) {
                    throw DataError(path + ": line " + std::to_string(lineno) + ": expected " +
                                    std::to_string(K * ds.feat_dim) + " region floats");
                }
                pr.image.regions.at(i) = f;
            }
            float extra;
            if (is >> extra) {
                throw DataError(path + ": line " + std::to_string(lineno) +
                                ": trailing region values beyond K*feat_dim");
            }
            if (!pr.image.regions.all_finite()) {
                throw DataError(path + ": line " + std::to_string(lineno) +
                                ": non-finite region feature");
            }
        }
        ds.pairs.push_back(std::move(pr));
    }
    return ds;
}

} // namespace vld
