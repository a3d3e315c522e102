#pragma once

#include <string>
#include <vector>

#include "vld/tensor.hpp"

namespace vld {

// Special token ids, fixed across every vocabulary this toolkit builds.
constexpr int kClsId = 0;
constexpr int kSepId = 1;

struct TextRecord {
    int id = 0;
    std::vector<int> tokens; // word ids, length >= 1
};

struct ImageRecord {
    int id = 0;
    Tensor regions; // [K x feat_dim], K >= 1
    std::vector<int> tags;
};

struct PairRecord {
    TextRecord text;
    ImageRecord image;
    bool aligned = true;
};

enum class SlotKind { Special, Word, Tag, Region };
enum class Segment { T, V };
enum class Modality { Neutral, Text, Image };

// How the image-side individual input numbers positions: tags and regions
// each restarting from 0, or one shared running index across both.
enum class ImagePositionMode { Separate, Shared };

struct Slot {
    SlotKind kind = SlotKind::Special;
    int token_id = -1;     // special/word/tag slots
    int region_index = -1; // row into EncoderInput::region_feats
    int position_id = 0;
    Segment segment = Segment::T;
    Modality modality = Modality::Neutral;
};

struct EncoderInput {
    std::vector<Slot> slots;
    Tensor region_feats;            // [n_regions x feat_dim], empty when no regions
    std::vector<bool> pad_mask;     // true = padding; builders emit all-real slots

    int seq() const { return static_cast<int>(slots.size()); }
    int n_real() const;
    int n_specials() const;
    std::vector<bool> real_mask() const; // true = real slot (inverse of pad_mask)
};

// [CLS] words [SEP] tags [SEP] regions. Positions run 0..seq-1 across the
// whole sequence; words and tags carry segment T, regions segment V. When
// max_seq > 0 and the sequence would exceed it, words are dropped first, then
// tags; regions are never dropped (throws if they cannot fit alone).
EncoderInput build_joint_input(const PairRecord& pair, int max_seq = 0);

// [CLS] words [SEP] with word positions 0..L-1 and the [SEP] at L.
EncoderInput build_text_input(const TextRecord& text, int max_seq = 0);

// [CLS] tags [SEP] regions. In Separate mode tag positions run 0..T-1 and
// region positions restart at 0; in Shared mode regions continue the tag
// index sequence past the [SEP]. Over-length inputs lose tags, never regions.
EncoderInput build_image_input(const ImageRecord& image, int max_seq = 0,
                               ImagePositionMode mode = ImagePositionMode::Separate);

struct Dataset {
    int vocab_size = 0;
    int feat_dim = 0;
    std::vector<PairRecord> pairs;
};

struct SynthConfig {
    int n_pairs = 0;
    int n_classes = 0;
    int feat_dim = 32;
    int vocab_size = 0;
    float noise = 0.1f;
    unsigned seed = 0;
    int text_len = 8;
    int n_regions = 4;
    int n_tags = 1;
};

// Class-structured paired corpus: pair i belongs to class i % n_classes.
// Region vectors are the class prototype (a random unit vector) plus
// N(0, noise^2); tags are the class token; words sample from a class-private
// token bucket. Deterministic in the seed.
Dataset synth_dataset(const SynthConfig& cfg);

// Line-delimited text format; see save_dataset for the exact layout.
Dataset load_dataset(const std::string& path);

// Header "VLDS 1 <vocab_size> <feat_dim>", then one line per pair:
// "<pair_id> | <word ids> | <tag ids> | <K> <K*feat_dim floats>" with floats
// printed to 9 significant digits (lossless for f32 round trips).
void save_dataset(const std::string& path, const Dataset& ds);

} // namespace vld
