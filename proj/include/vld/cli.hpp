#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vld/data.hpp"
#include "vld/model.hpp"
#include "vld/train.hpp"

namespace vld {

// Flat key = value run settings. One struct covers every subcommand; each
// command reads the slice it needs and echoes the whole resolved state next
// to its outputs so any artifact can be reproduced from its directory alone.
struct RunConfig {
    // model
    int n_layers = 2;
    int n_heads = 2;
    int hidden_dim = 32;
    int ffn_dim = 64;
    int vocab_size = 128;
    int feat_dim = 32;
    int max_positions = 64;
    std::string pooling = "AVG";

    // training (shared by pretrain and decompose)
    int batch_size = 64;
    float temperature = 0.005f;
    float learning_rate = 5e-5f;
    float weight_decay = 1e-4f;
    int epochs = 10;
    std::string loss = "INFONCE";
    float triplet_margin = 0.2f;
    int freeze_layers = 0;
    std::string pooler_init = "fresh";
    int max_seq = 0;

    // synthetic data
    int n_pairs = 256;
    int n_classes = 32;
    float noise = 0.1f;
    int text_len = 8;
    int n_regions = 4;
    int n_tags = 1;

    // input/output paths (outputs land in the --out directory)
    std::string dataset;
    std::string checkpoint;
    std::string init_checkpoint; // decompose warm start; empty = random init
    std::string index;

    // retrieval / evaluation
    std::string tower = "image";       // side encoded by cmd_encode
    std::string query_tower = "text";  // side a retrieve query comes from
    int k = 10;
    int query_id = 0;
    std::string eval_mode = "decomposed";

    // attention analysis
    std::string attention_input = "joint"; // joint | towers
    std::string layer_groups;              // e.g. "1-3,4-9"; empty = per layer
    int routing_k = 4;

    // benchmark
    std::string bench_sizes = "200,1000";
    int bench_queries = 50;
    int bench_batch = 1;
    int bench_repetitions = 3;
    int bench_warmup = 5;
    int bench_joint_cells = 2000;

    std::uint64_t seed = 0;

    // Typed views
    ModelConfig model() const;   // throws ConfigError on bad enum strings
    TrainConfig train() const;
    SynthConfig synth() const;

    // Canonical echo: every key in declaration order, parseable back.
    std::string serialize(const std::string& command) const;
};

// Applies one "key = value" assignment; unknown keys are rejected.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses a flat key = value file with # comments. Unknown keys, malformed
// lines, and unreadable files raise the usual error classes.
RunConfig parse_config_file(const std::string& path);

// Splits "key=value" (first '='), trims, and applies.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Full subcommand dispatcher used by the binary: parses flags
// (--config/--seed/--out/--set), runs the command, and maps errors to exit
// codes: 0 ok, 2 config/contract, 3 data/IO, 4 divergence.
int run_command(const std::vector<std::string>& args);

} // namespace vld
