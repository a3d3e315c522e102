#include "vld/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vld/errors.hpp"
#include "vld/io_util.hpp"

namespace vld {

SlotLabels SlotLabels::from_input(const EncoderInput& in) {
    SlotLabels out;
    const int seq = in.seq();
    if (static_cast<int>(in.pad_mask.size()) != seq) {
        throw ContractError("pad mask does not cover every slot");
    }
    out.modality.reserve(static_cast<size_t>(seq));
    out.special.reserve(static_cast<size_t>(seq));
    out.pad.reserve(static_cast<size_t>(seq));
    for (int i = 0; i < seq; ++i) {
        const Slot& s = in.slots[static_cast<size_t>(i)];
        if (s.kind == SlotKind::Special) {
            if (s.token_id != kClsId && s.token_id != kSepId) {
                throw ContractError("special slot " + std::to_string(i) +
                                    " carries neither [CLS] nor [SEP]");
            }
            out.special.push_back(s.token_id);
        } else {
            if (s.modality == Modality::Neutral) {
                throw ContractError("non-special slot " + std::to_string(i) +
                                    " has no modality label");
            }
            out.special.push_back(-1);
        }
        out.modality.push_back(s.modality);
        out.pad.push_back(in.pad_mask[static_cast<size_t>(i)]);
    }
    return out;
}

AttentionAccumulator::AttentionAccumulator(int n_layers) {
    if (n_layers < 1) throw ContractError("attention analysis needs at least one layer");
    cls_.assign(static_cast<size_t>(n_layers), 0.0);
    sep_.assign(static_cast<size_t>(n_layers), 0.0);
    single_.assign(static_cast<size_t>(n_layers), 0.0);
    cross_.assign(static_cast<size_t>(n_layers), 0.0);
    received_.assign(static_cast<size_t>(n_layers), {});
}

void AttentionAccumulator::add_sample(const std::vector<std::vector<Tensor>>& maps,
                                      const SlotLabels& labels) {
    if (static_cast<int>(maps.size()) != n_layers()) {
        throw ContractError("sample has " + std::to_string(maps.size()) +
                            " layers of maps, accumulator expects " +
                            std::to_string(n_layers()));
    }
    const int seq = labels.seq();
    if (seq < 1) throw ContractError("empty slot labels");

    for (size_t li = 0; li < maps.size(); ++li) {
        if (maps[li].empty()) throw ContractError("layer without attention heads");
        if (received_[li].size() < static_cast<size_t>(seq)) {
            received_[li].resize(static_cast<size_t>(seq), 0.0);
        }
        for (const Tensor& map : maps[li]) {
            if (map.rank() != 2 || map.rows() != seq || map.cols() != seq) {
                throw ContractError("attention map shape " + map.shape_str() +
                                    " does not match " + std::to_string(seq) + " slots");
            }
            for (int q = 0; q < seq; ++q) {
                if (labels.pad[static_cast<size_t>(q)]) continue;
                for (int k = 0; k < seq; ++k) {
                    if (labels.pad[static_cast<size_t>(k)]) continue;
                    const double a = map.at(q, k);
                    const int k_special = labels.special[static_cast<size_t>(k)];
                    const int q_special = labels.special[static_cast<size_t>(q)];
                    if (k_special == kClsId) {
                        cls_[li] += a;
                    } else if (k_special == kSepId) {
                        sep_[li] += a;
                    } else if (q_special == kClsId) {
                        cls_[li] += a;
                    } else if (q_special == kSepId) {
                        sep_[li] += a;
                    } else if (labels.modality[static_cast<size_t>(q)] ==
                               labels.modality[static_cast<size_t>(k)]) {
                        single_[li] += a;
                    } else {
                        cross_[li] += a;
                    }
                    received_[li][static_cast<size_t>(k)] += a;
                }
            }
        }
    }
    if (slot_seen_.size() < static_cast<size_t>(seq)) {
        slot_seen_.resize(static_cast<size_t>(seq), 0);
        slot_special_.resize(static_cast<size_t>(seq), 0);
    }
    for (int i = 0; i < seq; ++i) {
        if (labels.pad[static_cast<size_t>(i)]) continue;
        slot_seen_[static_cast<size_t>(i)] += 1;
        if (labels.special[static_cast<size_t>(i)] >= 0) {
            slot_special_[static_cast<size_t>(i)] += 1;
        }
    }
    samples_ += 1;
}

namespace {

LayerBreakdown make_breakdown(double cls, double sep, double single, double cross) {
    LayerBreakdown b;
    b.total_mass = cls + sep + single + cross;
    if (b.total_mass <= 0.0) throw ContractError("no attention mass accumulated");
    const double scale = 100.0 / b.total_mass;
    b.cls_pct = cls * scale;
    b.sep_pct = sep * scale;
    b.neutral_total_pct = (cls + sep) * scale;
    b.single_pct = single * scale;
    b.cross_pct = cross * scale;
    return b;
}

} // namespace

AttentionBreakdown AttentionAccumulator::breakdown() const {
    if (samples_ == 0) throw ContractError("breakdown requested before any sample");
    AttentionBreakdown out;
    double cls = 0.0, sep = 0.0, single = 0.0, cross = 0.0;
    for (int li = 0; li < n_layers(); ++li) {
        const size_t i = static_cast<size_t>(li);
        out.layers.push_back(make_breakdown(cls_[i], sep_[i], single_[i], cross_[i]));
        cls += cls_[i];
        sep += sep_[i];
        single += single_[i];
        cross += cross_[i];
    }
    out.overall = make_breakdown(cls, sep, single, cross);
    return out;
}

double AttentionAccumulator::received_mass(int layer, int index) const {
    const auto& row = received_[static_cast<size_t>(layer)];
    if (index < 0 || static_cast<size_t>(index) >= row.size()) return 0.0;
    return row[static_cast<size_t>(index)];
}

double AttentionAccumulator::layer_mass(int layer) const {
    const size_t i = static_cast<size_t>(layer);
    return cls_[i] + sep_[i] + single_[i] + cross_[i];
}

bool AttentionAccumulator::slot_always_special(int index) const {
    if (index < 0 || static_cast<size_t>(index) >= slot_seen_.size()) return false;
    const int seen = slot_seen_[static_cast<size_t>(index)];
    return seen > 0 && slot_special_[static_cast<size_t>(index)] == seen;
}

double AttentionAccumulator::special_received_share() const {
    if (samples_ == 0) throw ContractError("share requested before any sample");
    double special = 0.0, total = 0.0;
    for (int li = 0; li < n_layers(); ++li) {
        for (size_t s = 0; s < received_[static_cast<size_t>(li)].size(); ++s) {
            const double m = received_[static_cast<size_t>(li)][s];
            total += m;
            if (slot_always_special(static_cast<int>(s))) special += m;
        }
    }
    if (total <= 0.0) throw ContractError("no received mass accumulated");
    return special / total;
}

AttentionBreakdown classify_attention(const std::vector<std::vector<Tensor>>& maps,
                                      const SlotLabels& labels) {
    AttentionAccumulator acc(static_cast<int>(maps.size()));
    acc.add_sample(maps, labels);
    return acc.breakdown();
}

RoutingReport detect_routing_nodes(const AttentionAccumulator& acc, int k) {
    if (k < 1) throw ContractError("routing k must be >= 1");
    if (acc.samples() == 0) throw ContractError("routing requested before any sample");
    const int slots = acc.max_slots();
    if (k > slots) {
        throw ContractError("routing k " + std::to_string(k) + " exceeds the " +
                            std::to_string(slots) + " slots seen");
    }
    RoutingReport report;
    report.k = k;
    for (int li = 0; li < acc.n_layers(); ++li) {
        const double total = acc.layer_mass(li);
        std::vector<int> order(static_cast<size_t>(slots));
        for (int i = 0; i < slots; ++i) order[static_cast<size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            const double ma = acc.received_mass(li, a);
            const double mb = acc.received_mass(li, b);
            if (ma != mb) return ma > mb;
            return a < b;
        });
        RoutingLayer layer;
        layer.layer = li;
        for (int r = 0; r < k; ++r) {
            const int idx = order[static_cast<size_t>(r)];
            RoutingNode node;
            node.slot_index = idx;
            node.is_special = acc.slot_always_special(idx);
            node.share_pct = total > 0.0 ? acc.received_mass(li, idx) / total * 100.0 : 0.0;
            layer.nodes.push_back(node);
        }
        report.layers.push_back(std::move(layer));
    }
    return report;
}

RoutingReport detect_routing_nodes(const std::vector<std::vector<Tensor>>& maps,
                                   const SlotLabels& labels, int k) {
    AttentionAccumulator acc(static_cast<int>(maps.size()));
    acc.add_sample(maps, labels);
    return detect_routing_nodes(acc, k);
}

std::vector<GroupedRow> layer_group_report(const AttentionBreakdown& b,
                                           const std::vector<LayerGroup>& groups) {
    const int n = static_cast<int>(b.layers.size());
    std::vector<bool> covered(static_cast<size_t>(n), false);
    for (const LayerGroup& g : groups) {
        if (g.first < 1 || g.last > n || g.first > g.last) {
            throw ConfigError("layer group '" + g.name + "' is outside 1.." +
                              std::to_string(n));
        }
        for (int l = g.first; l <= g.last; ++l) {
            if (covered[static_cast<size_t>(l - 1)]) {
                throw ConfigError("layer " + std::to_string(l) + " appears in two groups");
            }
            covered[static_cast<size_t>(l - 1)] = true;
        }
    }
    for (int l = 0; l < n; ++l) {
        if (!covered[static_cast<size_t>(l)]) {
            throw ConfigError("layer " + std::to_string(l + 1) + " is not in any group");
        }
    }

    std::vector<GroupedRow> rows;
    for (const LayerGroup& g : groups) {
        double cls = 0.0, sep = 0.0, single = 0.0, cross = 0.0;
        for (int l = g.first; l <= g.last; ++l) {
            const LayerBreakdown& lb = b.layers[static_cast<size_t>(l - 1)];
            // recover raw masses so the group average stays mass-weighted
            cls += lb.cls_pct / 100.0 * lb.total_mass;
            sep += lb.sep_pct / 100.0 * lb.total_mass;
            single += lb.single_pct / 100.0 * lb.total_mass;
            cross += lb.cross_pct / 100.0 * lb.total_mass;
        }
        rows.push_back({g.name, make_breakdown(cls, sep, single, cross)});
    }
    return rows;
}

std::vector<LayerGroup> parse_layer_groups(const std::string& text, int n_layers) {
    std::vector<LayerGroup> groups;
    size_t pos = 0;
    while (pos <= text.size()) {
        const size_t comma = std::min(text.find(',', pos), text.size());
        const std::string part = text.substr(pos, comma - pos);
        if (part.empty()) throw ConfigError("empty layer group in '" + text + "'");
        LayerGroup g;
        g.name = part;
        const size_t dash = part.find('-');
        try {
            if (dash == std::string::npos) {
                g.first = g.last = std::stoi(part);
            } else {
                g.first = std::stoi(part.substr(0, dash));
                g.last = std::stoi(part.substr(dash + 1));
            }
        } catch (const std::exception&) {
            throw ConfigError("cannot parse layer group '" + part + "'");
        }
        if (g.first < 1 || g.last > n_layers || g.first > g.last) {
            throw ConfigError("layer group '" + part + "' is outside 1.." +
                              std::to_string(n_layers));
        }
        groups.push_back(std::move(g));
        if (comma == text.size()) break;
        pos = comma + 1;
    }
    if (groups.empty()) throw ConfigError("no layer groups in '" + text + "'");
    return groups;
}

std::vector<CompareRow> compare_runs(const AttentionBreakdown& before,
                                     const AttentionBreakdown& after) {
    if (before.layers.size() != after.layers.size()) {
        throw ContractError("runs have different layer counts: " +
                            std::to_string(before.layers.size()) + " vs " +
                            std::to_string(after.layers.size()));
    }
    auto diff = [](const LayerBreakdown& a, const LayerBreakdown& b) {
        LayerBreakdown d;
        d.cls_pct = b.cls_pct - a.cls_pct;
        d.sep_pct = b.sep_pct - a.sep_pct;
        d.neutral_total_pct = b.neutral_total_pct - a.neutral_total_pct;
        d.single_pct = b.single_pct - a.single_pct;
        d.cross_pct = b.cross_pct - a.cross_pct;
        d.total_mass = b.total_mass - a.total_mass;
        return d;
    };
    std::vector<CompareRow> rows;
    for (size_t i = 0; i < before.layers.size(); ++i) {
        CompareRow row;
        row.name = std::to_string(i + 1);
        row.before = before.layers[i];
        row.after = after.layers[i];
        row.delta = diff(before.layers[i], after.layers[i]);
        rows.push_back(std::move(row));
    }
    CompareRow all;
    all.name = "all";
    all.before = before.overall;
    all.after = after.overall;
    all.delta = diff(before.overall, after.overall);
    rows.push_back(std::move(all));
    return rows;
}

void write_breakdown_csv(const std::string& path, const std::vector<GroupedRow>& rows) {
    std::string out = "layer_group,cls_pct,sep_pct,neutral_total_pct,single_pct,cross_pct\n";
    char line[256];
    for (const GroupedRow& r : rows) {
        std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.name.c_str(),
                      r.stats.cls_pct, r.stats.sep_pct, r.stats.neutral_total_pct,
                      r.stats.single_pct, r.stats.cross_pct);
        out += line;
    }
    atomic_write(path, out);
}

void write_routing_csv(const std::string& path, const RoutingReport& report) {
    std::string out = "layer,rank,slot_index,is_special,share_pct\n";
    char line[128];
    for (const RoutingLayer& layer : report.layers) {
        for (size_t r = 0; r < layer.nodes.size(); ++r) {
            const RoutingNode& n = layer.nodes[r];
            std::snprintf(line, sizeof(line), "%d,%zu,%d,%d,%.6f\n", layer.layer + 1, r + 1,
                          n.slot_index, n.is_special ? 1 : 0, n.share_pct);
            out += line;
        }
    }
    atomic_write(path, out);
}

} // namespace vld
