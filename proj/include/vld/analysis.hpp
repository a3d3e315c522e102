#pragma once

#include <string>
#include <vector>

#include "vld/data.hpp"
#include "vld/tensor.hpp"

namespace vld {

// Per-slot labels extracted from an encoder input, the vocabulary of the
// attention taxonomy: special ([CLS]/[SEP]) vs. text vs. image, plus padding.
struct SlotLabels {
    std::vector<Modality> modality; // per slot; Neutral only for specials
    std::vector<int> special;       // kClsId / kSepId, or -1 for non-specials
    std::vector<bool> pad;

    static SlotLabels from_input(const EncoderInput& in); // throws ContractError
    int seq() const { return static_cast<int>(modality.size()); }
};

// Attention-mass percentages for one layer (or an aggregate of layers).
// total_mass carries the raw accumulated mass so aggregation stays
// mass-weighted.
struct LayerBreakdown {
    double cls_pct = 0.0;
    double sep_pct = 0.0;
    double neutral_total_pct = 0.0; // cls + sep
    double single_pct = 0.0;
    double cross_pct = 0.0;
    double total_mass = 0.0;
};

struct AttentionBreakdown {
    std::vector<LayerBreakdown> layers;
    LayerBreakdown overall; // mass-weighted across layers
};

// Accumulates classified attention mass over samples. Every attention weight
// a(q -> k) with neither endpoint padded lands in exactly one bucket:
//   k special            -> neutral, attributed to k's token ([CLS] or [SEP])
//   else q special       -> neutral, attributed to q's token
//   else same modality   -> single-modal
//   else                 -> cross-modal
class AttentionAccumulator {
public:
    explicit AttentionAccumulator(int n_layers);

    // maps: per-layer, per-head post-softmax [seq x seq] from one sample.
    // Throws ContractError on layer-count or shape/label mismatches.
    void add_sample(const std::vector<std::vector<Tensor>>& maps, const SlotLabels& labels);

    int n_layers() const { return static_cast<int>(cls_.size()); }
    int samples() const { return samples_; }
    int max_slots() const { return static_cast<int>(received_[0].size()); }

    AttentionBreakdown breakdown() const; // throws ContractError before any sample

    // Received mass of slot `index` in `layer` summed over queries, heads and
    // samples; the routing-node statistic.
    double received_mass(int layer, int index) const;
    double layer_mass(int layer) const;
    // True when every sample that includes this slot labels it special.
    bool slot_always_special(int index) const;

    // Fraction (0..1) of all received mass landing on special slots.
    double special_received_share() const;

private:
    std::vector<double> cls_, sep_, single_, cross_; // per layer
    std::vector<std::vector<double>> received_;      // [layer][slot]
    std::vector<int> slot_seen_;                     // samples covering slot
    std::vector<int> slot_special_;                  // of those, labeled special
    int samples_ = 0;
};

// One-sample convenience wrapper over the accumulator.
AttentionBreakdown classify_attention(const std::vector<std::vector<Tensor>>& maps,
                                      const SlotLabels& labels);

struct RoutingNode {
    int slot_index = 0;
    bool is_special = false;
    double share_pct = 0.0; // of the layer's received mass
};

struct RoutingLayer {
    int layer = 0; // 0-based
    std::vector<RoutingNode> nodes; // k entries, share descending, ties by index
};

struct RoutingReport {
    int k = 0;
    std::vector<RoutingLayer> layers;
};

// Top-k received-mass slots per layer. Throws ContractError when k < 1 or
// k exceeds the number of slots seen.
RoutingReport detect_routing_nodes(const AttentionAccumulator& acc, int k);
RoutingReport detect_routing_nodes(const std::vector<std::vector<Tensor>>& maps,
                                   const SlotLabels& labels, int k);

// Inclusive 1-based layer span with a display name (e.g. "1-3").
struct LayerGroup {
    std::string name;
    int first = 1;
    int last = 1;
};

struct GroupedRow {
    std::string name;
    LayerBreakdown stats;
};

// Mass-weighted per-group aggregation. Groups must partition 1..n_layers
// exactly; anything else is a ConfigError.
std::vector<GroupedRow> layer_group_report(const AttentionBreakdown& b,
                                           const std::vector<LayerGroup>& groups);

// Parses "1-3,4-9,10-12" (or "2" for a single layer) into groups.
std::vector<LayerGroup> parse_layer_groups(const std::string& text, int n_layers);

struct CompareRow {
    std::string name; // layer label or "all"
    LayerBreakdown before;
    LayerBreakdown after;
    LayerBreakdown delta; // after - before, percentage points
};

// Side-by-side per-layer comparison. Throws ContractError when the two runs
// have different layer structure.
std::vector<CompareRow> compare_runs(const AttentionBreakdown& before,
                                     const AttentionBreakdown& after);

// CSV: layer_group,cls_pct,sep_pct,neutral_total_pct,single_pct,cross_pct
void write_breakdown_csv(const std::string& path, const std::vector<GroupedRow>& rows);
// CSV: layer,rank,slot_index,is_special,share_pct
void write_routing_csv(const std::string& path, const RoutingReport& report);

} // namespace vld
