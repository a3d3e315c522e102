#include "vld/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "vld/analysis.hpp"
#include "vld/errors.hpp"
#include "vld/io_util.hpp"
#include "vld/retrieval.hpp"

namespace vld {

namespace {

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        if (v < -2147483648LL || v > 2147483647LL) throw std::out_of_range("");
        return static_cast<int>(v);
    } catch (const std::logic_error&) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + value + "'");
    }
}

float parse_float(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const float v = std::stof(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        if (!value.empty() && value[0] == '-') throw std::invalid_argument("");
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("key '" + key + "' expects an unsigned integer, got '" + value + "'");
    }
}

std::string fmt_float(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

} // namespace

ModelConfig RunConfig::model() const {
    ModelConfig m;
    m.n_layers = n_layers;
    m.n_heads = n_heads;
    m.hidden_dim = hidden_dim;
    m.ffn_dim = ffn_dim;
    m.vocab_size = vocab_size;
    m.feat_dim = feat_dim;
    m.max_positions = max_positions;
    m.pooling = pooling_from_string(pooling);
    return m;
}

TrainConfig RunConfig::train() const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.temperature = temperature;
    t.learning_rate = learning_rate;
    t.weight_decay = weight_decay;
    t.epochs = epochs;
    t.loss = loss_from_string(loss);
    t.triplet_margin = triplet_margin;
    t.seed = static_cast<unsigned>(seed);
    t.freeze_layers = freeze_layers;
    t.pooler_init = pooler_init_from_string(pooler_init);
    t.max_seq = max_seq;
    return t;
}

SynthConfig RunConfig::synth() const {
    SynthConfig s;
    s.n_pairs = n_pairs;
    s.n_classes = n_classes;
    s.feat_dim = feat_dim;
    s.vocab_size = vocab_size;
    s.noise = noise;
    s.seed = static_cast<unsigned>(seed);
    s.text_len = text_len;
    s.n_regions = n_regions;
    s.n_tags = n_tags;
    return s;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "n_layers") cfg.n_layers = parse_int(key, value);
    else if (key == "n_heads") cfg.n_heads = parse_int(key, value);
    else if (key == "hidden_dim") cfg.hidden_dim = parse_int(key, value);
    else if (key == "ffn_dim") cfg.ffn_dim = parse_int(key, value);
    else if (key == "vocab_size") cfg.vocab_size = parse_int(key, value);
    else if (key == "feat_dim") cfg.feat_dim = parse_int(key, value);
    else if (key == "max_positions") cfg.max_positions = parse_int(key, value);
    else if (key == "pooling") cfg.pooling = value;
    else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
    else if (key == "temperature") cfg.temperature = parse_float(key, value);
    else if (key == "learning_rate") cfg.learning_rate = parse_float(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_float(key, value);
    else if (key == "epochs") cfg.epochs = parse_int(key, value);
    else if (key == "loss") cfg.loss = value;
    else if (key == "triplet_margin") cfg.triplet_margin = parse_float(key, value);
    else if (key == "freeze_layers") cfg.freeze_layers = parse_int(key, value);
    else if (key == "pooler_init") cfg.pooler_init = value;
    else if (key == "max_seq") cfg.max_seq = parse_int(key, value);
    else if (key == "n_pairs") cfg.n_pairs = parse_int(key, value);
    else if (key == "n_classes") cfg.n_classes = parse_int(key, value);
    else if (key == "noise") cfg.noise = parse_float(key, value);
    else if (key == "text_len") cfg.text_len = parse_int(key, value);
    else if (key == "n_regions") cfg.n_regions = parse_int(key, value);
    else if (key == "n_tags") cfg.n_tags = parse_int(key, value);
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "init_checkpoint") cfg.init_checkpoint = value;
    else if (key == "index") cfg.index = value;
    else if (key == "tower") cfg.tower = value;
    else if (key == "query_tower") cfg.query_tower = value;
    else if (key == "k") cfg.k = parse_int(key, value);
    else if (key == "query_id") cfg.query_id = parse_int(key, value);
    else if (key == "eval_mode") cfg.eval_mode = value;
    else if (key == "attention_input") cfg.attention_input = value;
    else if (key == "layer_groups") cfg.layer_groups = value;
    else if (key == "routing_k") cfg.routing_k = parse_int(key, value);
    else if (key == "bench_sizes") cfg.bench_sizes = value;
    else if (key == "bench_queries") cfg.bench_queries = parse_int(key, value);
    else if (key == "bench_batch") cfg.bench_batch = parse_int(key, value);
    else if (key == "bench_repetitions") cfg.bench_repetitions = parse_int(key, value);
    else if (key == "bench_warmup") cfg.bench_warmup = parse_int(key, value);
    else if (key == "bench_joint_cells") cfg.bench_joint_cells = parse_int(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::serialize(const std::string& command) const {
    std::string out = "# resolved configuration (" + command + ")\n";
    const auto put = [&out](const std::string& k, const std::string& v) {
        out += k + " = " + v + "\n";
    };
    const auto put_i = [&put](const std::string& k, long long v) { put(k, std::to_string(v)); };
    const auto put_f = [&put](const std::string& k, float v) { put(k, fmt_float(v)); };

    put_i("n_layers", n_layers);
    put_i("n_heads", n_heads);
    put_i("hidden_dim", hidden_dim);
    put_i("ffn_dim", ffn_dim);
    put_i("vocab_size", vocab_size);
    put_i("feat_dim", feat_dim);
    put_i("max_positions", max_positions);
    put("pooling", pooling);
    put_i("batch_size", batch_size);
    put_f("temperature", temperature);
    put_f("learning_rate", learning_rate);
    put_f("weight_decay", weight_decay);
    put_i("epochs", epochs);
    put("loss", loss);
    put_f("triplet_margin", triplet_margin);
    put_i("freeze_layers", freeze_layers);
    put("pooler_init", pooler_init);
    put_i("max_seq", max_seq);
    put_i("n_pairs", n_pairs);
    put_i("n_classes", n_classes);
    put_f("noise", noise);
    put_i("text_len", text_len);
    put_i("n_regions", n_regions);
    put_i("n_tags", n_tags);
    put("dataset", dataset);
    put("checkpoint", checkpoint);
    put("init_checkpoint", init_checkpoint);
    put("index", index);
    put("tower", tower);
    put("query_tower", query_tower);
    put_i("k", k);
    put_i("query_id", query_id);
    put("eval_mode", eval_mode);
    put("attention_input", attention_input);
    put("layer_groups", layer_groups);
    put_i("routing_k", routing_k);
    put("bench_sizes", bench_sizes);
    put_i("bench_queries", bench_queries);
    put_i("bench_batch", bench_batch);
    put_i("bench_repetitions", bench_repetitions);
    put_i("bench_warmup", bench_warmup);
    put_i("bench_joint_cells", bench_joint_cells);
    put("seed", std::to_string(seed));
    return out;
}

RunConfig parse_config_file(const std::string& path) {
    const std::string text = read_file(path);
    RunConfig cfg;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = text.find('\n', start);
        std::string line =
            end == std::string::npos ? text.substr(start) : text.substr(start, end - start);
        ++line_no;
        start = end == std::string::npos ? text.size() + 1 : end + 1;

        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + " line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path + " line " + std::to_string(line_no) + ": empty key");
        }
        apply_setting(cfg, key, value);
    }
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    }
    apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

// ---------------------------------------------------------------------------
// Commands. Each returns after writing its artifacts; the resolved config is
// echoed last so failed runs leave nothing behind.

namespace {

std::string join_path(const std::string& dir, const std::string& name) {
    if (dir.empty() || dir == ".") return name;
    if (dir.back() == '/') return dir + name;
    return dir + "/" + name;
}

void echo_resolved(const RunConfig& cfg, const std::string& out_dir, const std::string& command) {
    atomic_write(join_path(out_dir, "resolved.cfg"), cfg.serialize(command));
}

// Commands that consume a checkpoint echo its embedded architecture so the
// resolved config matches what actually ran.
void adopt_model_config(RunConfig& cfg, const ModelConfig& m) {
    cfg.n_layers = m.n_layers;
    cfg.n_heads = m.n_heads;
    cfg.hidden_dim = m.hidden_dim;
    cfg.ffn_dim = m.ffn_dim;
    cfg.vocab_size = m.vocab_size;
    cfg.feat_dim = m.feat_dim;
    cfg.max_positions = m.max_positions;
    cfg.pooling = to_string(m.pooling);
}

void require_key(const std::string& value, const std::string& key, const std::string& command) {
    if (value.empty()) {
        throw ConfigError(command + " needs " + key + "=<path>");
    }
}

void cmd_synth(RunConfig& cfg, const std::string& out_dir) {
    const Dataset ds = synth_dataset(cfg.synth());
    const std::string path = join_path(out_dir, "dataset.vlds");
    save_dataset(path, ds);
    echo_resolved(cfg, out_dir, "synth");
    std::printf("synth: wrote %zu pairs (vocab %d, feat %d) -> %s\n", ds.pairs.size(),
                ds.vocab_size, ds.feat_dim, path.c_str());
}

void report_training(const char* command, const TrainResult& res, const std::string& model_path) {
    if (res.history.empty()) {
        std::printf("%s: 0 epochs (weights unchanged) -> %s\n", command, model_path.c_str());
        return;
    }
    const EpochMetrics& last = res.history.back();
    std::printf("%s: %zu epochs, final loss %.6g, in-batch r1 t2i %.4f / i2t %.4f -> %s\n",
                command, res.history.size(), last.loss, last.r1_t2i, last.r1_i2t,
                model_path.c_str());
}

void cmd_pretrain(RunConfig& cfg, const std::string& out_dir) {
    require_key(cfg.dataset, "dataset", "pretrain");
    const Dataset ds = load_dataset(cfg.dataset);
    ModelWeights w = ModelWeights::init(cfg.model(), static_cast<unsigned>(cfg.seed));
    const TrainResult res = train_joint(w, ds, cfg.train());
    const std::string model_path = join_path(out_dir, "model.vldw");
    save_checkpoint(model_path, w);
    write_metrics_csv(join_path(out_dir, "metrics.csv"), res.history);
    echo_resolved(cfg, out_dir, "pretrain");
    report_training("pretrain", res, model_path);
}

void cmd_decompose(RunConfig& cfg, const std::string& out_dir) {
    require_key(cfg.dataset, "dataset", "decompose");
    const Dataset ds = load_dataset(cfg.dataset);
    ModelWeights w = cfg.init_checkpoint.empty()
                         ? ModelWeights::init(cfg.model(), static_cast<unsigned>(cfg.seed))
                         : load_checkpoint(cfg.init_checkpoint);
    adopt_model_config(cfg, w.config);
    const TrainResult res = train_decompose(w, ds, cfg.train());
    const std::string model_path = join_path(out_dir, "model.vldw");
    save_checkpoint(model_path, w);
    write_metrics_csv(join_path(out_dir, "metrics.csv"), res.history);
    echo_resolved(cfg, out_dir, "decompose");
    report_training("decompose", res, model_path);
}

void cmd_encode(RunConfig& cfg, const std::string& out_dir) {
    require_key(cfg.dataset, "dataset", "encode");
    require_key(cfg.checkpoint, "checkpoint", "encode");
    const ModelWeights w = load_checkpoint(cfg.checkpoint);
    adopt_model_config(cfg, w.config);
    const Dataset ds = load_dataset(cfg.dataset);
    CorpusStats stats;
    const EmbeddingIndex idx =
        encode_corpus(w, ds, tower_from_string(cfg.tower), &stats, cfg.max_seq);
    const std::string path = join_path(out_dir, "index.vldi");
    idx.save(path);
    echo_resolved(cfg, out_dir, "encode");
    std::printf("encode: %zu %s embeddings (%zu excluded, %llu forwards) -> %s\n", idx.size(),
                cfg.tower.c_str(), stats.excluded.size(),
                static_cast<unsigned long long>(stats.forwards), path.c_str());
}

void cmd_retrieve(RunConfig& cfg, const std::string& out_dir) {
    require_key(cfg.dataset, "dataset", "retrieve");
    require_key(cfg.checkpoint, "checkpoint", "retrieve");
    require_key(cfg.index, "index", "retrieve");
    const ModelWeights w = load_checkpoint(cfg.checkpoint);
    adopt_model_config(cfg, w.config);
    const Dataset ds = load_dataset(cfg.dataset);
    const EmbeddingIndex idx = EmbeddingIndex::load(cfg.index);
    const Tower qt = tower_from_string(cfg.query_tower);

    Tensor emb;
    bool found = false;
    for (const PairRecord& p : ds.pairs) {
        if (qt == Tower::Text && p.text.id == cfg.query_id) {
            emb = individual_forward(w, build_text_input(p.text, cfg.max_seq));
            found = true;
            break;
        }
        if (qt == Tower::Image && p.image.id == cfg.query_id) {
            emb = individual_forward(w, build_image_input(p.image, cfg.max_seq));
            found = true;
            break;
        }
    }
    if (!found) {
        throw DataError("query id " + std::to_string(cfg.query_id) + " not found on the " +
                        cfg.query_tower + " side of " + cfg.dataset);
    }

    const std::vector<float> q(emb.data(), emb.data() + w.config.hidden_dim);
    const RetrievalResult res =
        cosine_topk(idx, q, cfg.k, static_cast<std::uint64_t>(cfg.query_id));

    std::string csv = "rank,id,score\n";
    std::printf("retrieve: query %d (%s) against %zu entries\n", cfg.query_id,
                cfg.query_tower.c_str(), idx.size());
    char line[96];
    for (std::size_t r = 0; r < res.hits.size(); ++r) {
        std::printf("%4zu  %8llu  %.6f\n", r + 1,
                    static_cast<unsigned long long>(res.hits[r].id),
                    static_cast<double>(res.hits[r].score));
        std::snprintf(line, sizeof(line), "%zu,%llu,%.6f\n", r + 1,
                      static_cast<unsigned long long>(res.hits[r].id),
                      static_cast<double>(res.hits[r].score));
        csv += line;
    }
    atomic_write(join_path(out_dir, "retrieval.csv"), csv);
    echo_resolved(cfg, out_dir, "retrieve");
}

void cmd_eval(RunConfig& cfg, const std::string& out_dir) {
    require_key(cfg.dataset, "dataset", "eval");
    require_key(cfg.checkpoint, "checkpoint", "eval");
    const ModelWeights w = load_checkpoint(cfg.checkpoint);
    adopt_model_config(cfg, w.config);
    const Dataset ds = load_dataset(cfg.dataset);
    const EvalMode mode = eval_mode_from_string(cfg.eval_mode);
    const EvalReport rep = evaluate(w, ds, mode, cfg.max_seq);

    std::printf("eval (%s): t2i R@1 %.4f R@5 %.4f R@10 %.4f | i2t R@1 %.4f R@5 %.4f R@10 %.4f\n",
                cfg.eval_mode.c_str(), rep.r1_t2i, rep.r5_t2i, rep.r10_t2i, rep.r1_i2t,
                rep.r5_i2t, rep.r10_i2t);
    std::printf("eval (%s): average recall %.4f, inference count %llu\n", cfg.eval_mode.c_str(),
                rep.average_recall, static_cast<unsigned long long>(rep.inference_count));

    char row[256];
    std::snprintf(row, sizeof(row), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%llu\n",
                  cfg.eval_mode.c_str(), rep.r1_t2i, rep.r5_t2i, rep.r10_t2i, rep.r1_i2t,
                  rep.r5_i2t, rep.r10_i2t, rep.average_recall,
                  static_cast<unsigned long long>(rep.inference_count));
    atomic_write(join_path(out_dir, "eval.csv"),
                 std::string("mode,r1_t2i,r5_t2i,r10_t2i,r1_i2t,r5_i2t,r10_i2t,average_recall,"
                             "inference_count\n") +
                     row);
    echo_resolved(cfg, out_dir, "eval");
}

std::vector<int> parse_sizes(const std::string& csv) {
    std::vector<int> sizes;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const std::size_t comma = csv.find(',', start);
        const std::string item = trim(
            comma == std::string::npos ? csv.substr(start) : csv.substr(start, comma - start));
        if (item.empty()) throw ConfigError("bench_sizes has an empty entry in '" + csv + "'");
        sizes.push_back(parse_int("bench_sizes", item));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return sizes;
}

void cmd_bench(RunConfig& cfg, const std::string& out_dir) {
    require_key(cfg.checkpoint, "checkpoint", "bench");
    const ModelWeights w = load_checkpoint(cfg.checkpoint);
    adopt_model_config(cfg, w.config);
    BenchOptions opt;
    opt.sizes = parse_sizes(cfg.bench_sizes);
    opt.queries = cfg.bench_queries;
    opt.batch = cfg.bench_batch;
    opt.repetitions = cfg.bench_repetitions;
    opt.warmup = cfg.bench_warmup;
    opt.k = cfg.k;
    opt.joint_sample_cells = cfg.bench_joint_cells;
    opt.seed = static_cast<unsigned>(cfg.seed);
    const std::vector<BenchRow> rows = run_benchmark(w, opt);
    std::fputs(format_benchmark(rows).c_str(), stdout);
    write_benchmark_csv(join_path(out_dir, "bench.csv"), rows);
    echo_resolved(cfg, out_dir, "bench");
}

void cmd_analyze(RunConfig& cfg, const std::string& out_dir) {
    require_key(cfg.dataset, "dataset", "analyze");
    require_key(cfg.checkpoint, "checkpoint", "analyze");
    const ModelWeights w = load_checkpoint(cfg.checkpoint);
    adopt_model_config(cfg, w.config);
    const Dataset ds = load_dataset(cfg.dataset);

    AttentionAccumulator acc(w.config.n_layers);
    if (cfg.attention_input == "joint") {
        for (const PairRecord& p : ds.pairs) {
            const EncoderOutput out = joint_encode(w, p, true, cfg.max_seq);
            acc.add_sample(out.attention,
                           SlotLabels::from_input(build_joint_input(p, cfg.max_seq)));
        }
    } else if (cfg.attention_input == "towers") {
        for (const PairRecord& p : ds.pairs) {
            const EncoderInput text = build_text_input(p.text, cfg.max_seq);
            acc.add_sample(encode(w, text, true).attention, SlotLabels::from_input(text));
            const EncoderInput image = build_image_input(p.image, cfg.max_seq);
            acc.add_sample(encode(w, image, true).attention, SlotLabels::from_input(image));
        }
    } else {
        throw ConfigError("unknown attention_input '" + cfg.attention_input +
                          "' (expected joint|towers)");
    }

    const AttentionBreakdown breakdown = acc.breakdown();
    std::vector<LayerGroup> groups;
    if (cfg.layer_groups.empty()) {
        for (int l = 1; l <= w.config.n_layers; ++l) {
            groups.push_back({std::to_string(l), l, l});
        }
    } else {
        groups = parse_layer_groups(cfg.layer_groups, w.config.n_layers);
    }
    const std::vector<GroupedRow> rows = layer_group_report(breakdown, groups);
    write_breakdown_csv(join_path(out_dir, "breakdown.csv"), rows);
    const RoutingReport routing = detect_routing_nodes(acc, cfg.routing_k);
    write_routing_csv(join_path(out_dir, "routing.csv"), routing);
    echo_resolved(cfg, out_dir, "analyze");

    std::printf("analyze (%s): %d samples over %d layers\n", cfg.attention_input.c_str(),
                acc.samples(), acc.n_layers());
    std::printf("%-12s %8s %8s %8s %8s %8s\n", "layer_group", "cls", "sep", "neutral", "single",
                "cross");
    for (const GroupedRow& r : rows) {
        std::printf("%-12s %8.3f %8.3f %8.3f %8.3f %8.3f\n", r.name.c_str(), r.stats.cls_pct,
                    r.stats.sep_pct, r.stats.neutral_total_pct, r.stats.single_pct,
                    r.stats.cross_pct);
    }
    std::printf("special-token received share: %.6f\n", acc.special_received_share());
}

} // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"Joint vision-language pre-training, two-tower decomposition, attention "
                 "routing analysis, and exact cosine retrieval at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed_flag = 0;
    std::vector<std::string> overrides;

    const char* names[] = {"synth",    "pretrain", "decompose", "encode",
                           "retrieve", "eval",     "bench",     "analyze"};
    const char* descs[] = {
        "generate a synthetic paired dataset",
        "joint-dataflow contrastive pre-training",
        "contrastive decomposition into shared-weight towers",
        "encode one side of a corpus into an embedding index",
        "run one query against an embedding index",
        "recall@k evaluation (decomposed or joint mode)",
        "latency benchmark across corpus sizes",
        "attention taxonomy breakdown and routing nodes",
    };
    for (int i = 0; i < 8; ++i) {
        CLI::App* sub = app.add_subcommand(names[i], descs[i]);
        sub->add_option("--config", config_path, "key = value settings file");
        sub->add_option("--seed", seed_flag, "override the run seed");
        sub->add_option("--out", out_dir, "output directory (default .)");
        sub->add_option("--set", overrides, "override one key=value (repeatable, after file)");
    }

    try {
        std::vector<const char*> argv;
        argv.push_back("vldeform");
        for (const std::string& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());

        CLI::App* sub = app.get_subcommands().front();
        RunConfig cfg;
        if (!config_path.empty()) cfg = parse_config_file(config_path);
        for (const std::string& assignment : overrides) apply_override(cfg, assignment);
        if (sub->count("--seed") > 0) cfg.seed = seed_flag;

        const std::string name = sub->get_name();
        if (name == "synth") cmd_synth(cfg, out_dir);
        else if (name == "pretrain") cmd_pretrain(cfg, out_dir);
        else if (name == "decompose") cmd_decompose(cfg, out_dir);
        else if (name == "encode") cmd_encode(cfg, out_dir);
        else if (name == "retrieve") cmd_retrieve(cfg, out_dir);
        else if (name == "eval") cmd_eval(cfg, out_dir);
        else if (name == "bench") cmd_bench(cfg, out_dir);
        else cmd_analyze(cfg, out_dir);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "vldeform: %s\n", e.what());
        return 2;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "vldeform: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "vldeform: %s\n", e.what());
        return 3;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "vldeform: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "vldeform: %s\n", e.what());
        return 2;
    }
}

} // namespace vld
