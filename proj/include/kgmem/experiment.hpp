#pragma once
// Config-driven experiment grids: dataset preparation, run scheduling with
// per-cell seed derivation, an append-only JSON-lines ledger and resume.
//
// Grid cells may run on several worker threads; ledger lines are still
// appended in grid order, so serial and parallel executions of the same
// spec produce byte-identical ledgers (wall-time fields aside).

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kgmem/datagen.hpp"
#include "kgmem/graph.hpp"
#include "kgmem/tokenizer.hpp"
#include "kgmem/trainer.hpp"

namespace kgmem {

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open file for writing: " + path);
  os << content;
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline constexpr const char* kExperimentSchema = "kgmem-exp-v1";
inline constexpr const char* kRunSchema = "kgmem-run-v1";

struct SynthSpec {
  int64_t n_nodes = 0;
  int64_t n_properties = 0;
  double mean_out_degree = 0;
};

struct SequenceSpec {
  int min_nodes = 4;
  int max_nodes = 6;
  int64_t bfs_depth = 5;
};

struct ExperimentSpec {
  std::string schema = kExperimentSchema;
  int setup = 0;  // 1..4, informational tag mirroring the protocol setups
  std::string kind;  // "triplets" | "sequences"
  std::optional<std::string> graph_file;
  std::optional<SynthSpec> synth;
  std::optional<std::string> banned_file;
  std::vector<int64_t> sizes;
  std::vector<int> layers;
  std::vector<int64_t> base_params;  // embedding width derived as base/layers
  std::vector<int> d_models;         // or direct widths (exactly one of the two)
  std::vector<std::string> activations;
  int heads = 4;
  int batch_size = 128;
  int epochs = 500;
  int eval_every = 2;
  int repeats = 1;
  uint64_t seed = 0;
  std::string out_dir;
  SequenceSpec seq;

  void validate() const {
    if (schema != kExperimentSchema)
      throw std::runtime_error("experiment spec: unsupported schema '" + schema + "'");
    if (setup < 1 || setup > 4) throw std::runtime_error("experiment spec: setup must be 1..4");
    if (kind != "triplets" && kind != "sequences")
      throw std::runtime_error("experiment spec: kind must be 'triplets' or 'sequences'");
    if (graph_file.has_value() == synth.has_value())
      throw std::runtime_error("experiment spec: exactly one of graph.file / graph.synth required");
    if (sizes.empty()) throw std::runtime_error("experiment spec: sizes must be non-empty");
    for (int64_t s : sizes)
      if (s < 1) throw std::runtime_error("experiment spec: sizes must be positive");
    if (layers.empty()) throw std::runtime_error("experiment spec: layers must be non-empty");
    for (int l : layers)
      if (l < 1) throw std::runtime_error("experiment spec: layer counts must be >= 1");
    if (base_params.empty() == d_models.empty())
      throw std::runtime_error(
          "experiment spec: exactly one of base_params / d_models must be non-empty");
    if (activations.empty())
      throw std::runtime_error("experiment spec: activations must be non-empty");
    for (const auto& a : activations) activation_from_string(a);  // throws on unknown
    if (heads < 1 || batch_size < 1 || epochs < 1 || eval_every < 1 || repeats < 1)
      throw std::runtime_error("experiment spec: counts must be >= 1");
    if (kind == "sequences" &&
        (seq.min_nodes < 2 || seq.max_nodes < seq.min_nodes || seq.bfs_depth < 1))
      throw std::runtime_error("experiment spec: invalid sequence parameters");
  }

  static ExperimentSpec from_json(const nlohmann::json& j) {
    ExperimentSpec s;
    s.schema = j.value("schema", std::string());
    s.setup = j.value("setup", 0);
    s.kind = j.value("kind", std::string());
    if (j.contains("graph")) {
      const auto& g = j.at("graph");
      if (g.contains("file")) s.graph_file = g.at("file").get<std::string>();
      if (g.contains("synth")) {
        SynthSpec sy;
        sy.n_nodes = g.at("synth").at("n_nodes").get<int64_t>();
        sy.n_properties = g.at("synth").at("n_properties").get<int64_t>();
        sy.mean_out_degree = g.at("synth").at("mean_out_degree").get<double>();
        s.synth = sy;
      }
      if (g.contains("banned_file")) s.banned_file = g.at("banned_file").get<std::string>();
    }
    s.sizes = j.value("sizes", std::vector<int64_t>());
    s.layers = j.value("layers", std::vector<int>());
    s.base_params = j.value("base_params", std::vector<int64_t>());
    s.d_models = j.value("d_models", std::vector<int>());
    s.activations = j.value("activations", std::vector<std::string>());
    s.heads = j.value("heads", 4);
    s.batch_size = j.value("batch_size", 128);
    s.epochs = j.value("epochs", 500);
    s.eval_every = j.value("eval_every", 2);
    s.repeats = j.value("repeats", 1);
    s.seed = j.value("seed", uint64_t{0});
    s.out_dir = j.value("out_dir", std::string());
    if (j.contains("sequences")) {
      const auto& q = j.at("sequences");
      s.seq.min_nodes = q.value("min_nodes", 4);
      s.seq.max_nodes = q.value("max_nodes", 6);
      s.seq.bfs_depth = q.value("bfs_depth", int64_t{5});
    }
    s.validate();
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema"] = schema;
    j["setup"] = setup;
    j["kind"] = kind;
    if (graph_file) j["graph"]["file"] = *graph_file;
    if (synth) {
      j["graph"]["synth"]["n_nodes"] = synth->n_nodes;
      j["graph"]["synth"]["n_properties"] = synth->n_properties;
      j["graph"]["synth"]["mean_out_degree"] = synth->mean_out_degree;
    }
    if (banned_file) j["graph"]["banned_file"] = *banned_file;
    j["sizes"] = sizes;
    j["layers"] = layers;
    if (!base_params.empty()) j["base_params"] = base_params;
    if (!d_models.empty()) j["d_models"] = d_models;
    j["activations"] = activations;
    j["heads"] = heads;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["eval_every"] = eval_every;
    j["repeats"] = repeats;
    j["seed"] = seed;
    if (!out_dir.empty()) j["out_dir"] = out_dir;
    if (kind == "sequences") {
      j["sequences"]["min_nodes"] = seq.min_nodes;
      j["sequences"]["max_nodes"] = seq.max_nodes;
      j["sequences"]["bfs_depth"] = seq.bfs_depth;
    }
    return j;
  }

  static ExperimentSpec from_file(const std::string& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("experiment spec '" + path + "': " + e.what());
    }
    return from_json(j);
  }
};

struct GridCell {
  int64_t size = 0;
  int layers = 1;
  int64_t base_params = 0;  // 0 when d_model was given directly
  int d_model = 0;
  std::string activation;
};

inline std::string cell_key(const ExperimentSpec& spec, const GridCell& c) {
  std::ostringstream os;
  os << "setup=" << spec.setup << "|kind=" << spec.kind << "|size=" << c.size
     << "|layers=" << c.layers << "|bp=";
  if (c.base_params > 0)
    os << c.base_params;
  else
    os << "-";
  os << "|d=" << c.d_model << "|act=" << c.activation;
  return os.str();
}

// The cross-product grid in deterministic order; embedding widths are
// resolved here so misconfigured cells fail before anything runs.
inline std::vector<GridCell> expand_grid(const ExperimentSpec& spec) {
  std::vector<GridCell> cells;
  for (int64_t size : spec.sizes) {
    for (int layers : spec.layers) {
      std::vector<std::pair<int64_t, int>> widths;  // (base_params or 0, d_model)
      if (!spec.base_params.empty()) {
        for (int64_t bp : spec.base_params)
          widths.emplace_back(bp, derive_embedding_size(bp, layers, spec.heads));
      } else {
        for (int d : spec.d_models) widths.emplace_back(0, d);
      }
      for (auto [bp, d] : widths)
        for (const auto& act : spec.activations)
          cells.push_back(GridCell{size, layers, bp, d, act});
    }
  }
  return cells;
}

struct RunnerStats {
  int executed = 0;
  int skipped = 0;
  int failed = 0;
  std::string ledger_path;
};

namespace detail {

struct DatasetContext {
  Vocab vocab;
  EncodedBatch batch;
  int max_len = 0;
};

struct RunTask {
  size_t index = 0;
  GridCell cell;
  int repeat = 0;
  uint64_t seed = 0;
  std::string key;
  std::string curve_file;  // relative to the output dir
};

inline std::string curve_file_name(const ExperimentSpec& spec, const GridCell& c, int repeat,
                                   uint64_t seed) {
  std::ostringstream os;
  os << "curves/s" << spec.setup << "_" << spec.kind << "_n" << c.size << "_L" << c.layers << "_d"
     << c.d_model << "_" << c.activation << "_r" << repeat << "_seed" << std::hex << seed
     << ".csv";
  return os.str();
}

// Appends results strictly in task order regardless of completion order.
class LedgerWriter {
 public:
  LedgerWriter(const std::string& path, size_t n_tasks)
      : os_(path, std::ios::binary | std::ios::app), state_(n_tasks, 0), lines_(n_tasks) {
    if (!os_) throw std::runtime_error("cannot open ledger for append: " + path);
  }

  void mark_skipped(size_t index) { post(index, std::nullopt); }
  void post_line(size_t index, std::string line) { post(index, std::move(line)); }

 private:
  void post(size_t index, std::optional<std::string> line) {
    std::lock_guard<std::mutex> lock(mu_);
    state_[index] = 1;
    lines_[index] = std::move(line);
    while (next_ < state_.size() && state_[next_] == 1) {
      if (lines_[next_]) {
        os_ << *lines_[next_] << '\n';
        os_.flush();
      }
      lines_[next_].reset();
      ++next_;
    }
  }

  std::ofstream os_;
  std::mutex mu_;
  std::vector<uint8_t> state_;
  std::vector<std::optional<std::string>> lines_;
  size_t next_ = 0;
};

}  // namespace detail

// Parse completed (cell key, repeat) pairs out of an existing ledger.
inline std::set<std::pair<std::string, int>> read_completed_runs(const std::string& ledger_path) {
  std::set<std::pair<std::string, int>> done;
  std::ifstream in(ledger_path, std::ios::binary);
  if (!in) return done;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw std::runtime_error("ledger parse error at line " + std::to_string(line_no) + " of " +
                               ledger_path);
    }
    done.emplace(j.at("cell").get<std::string>(), j.at("repeat").get<int>());
  }
  return done;
}

// Execute the grid. Completed (cell, repeat) pairs found in the ledger are
// skipped; everything else runs and is appended in grid order.
inline RunnerStats run_experiment(const ExperimentSpec& spec, const std::string& out_dir,
                                  int workers = 1, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  spec.validate();
  if (workers < 1) workers = 1;
  fs::create_directories(fs::path(out_dir) / "datasets");
  fs::create_directories(fs::path(out_dir) / "curves");

  // --- graph ---
  KnowledgeGraph graph;
  if (spec.graph_file) {
    graph = load_edge_list_file(*spec.graph_file);
  } else {
    SynthGraphParams gp;
    gp.n_nodes = spec.synth->n_nodes;
    gp.n_properties = spec.synth->n_properties;
    gp.mean_out_degree = spec.synth->mean_out_degree;
    gp.seed = mix_seed(spec.seed, fnv1a64("graph"), 0, static_cast<uint64_t>(Stream::synth));
    graph = synth_kg(gp);
    const fs::path gpath = fs::path(out_dir) / "datasets" / "graph.tsv";
    if (!fs::exists(gpath)) write_text_file(gpath.string(), dump_edge_list(graph));
  }
  std::set<std::string> banned;
  if (spec.banned_file) banned = load_banned_list_file(*spec.banned_file);
  graph = filter_properties(graph, banned);

  // --- datasets (shared across cells; built once, read-only afterwards) ---
  std::map<int64_t, detail::DatasetContext> datasets;
  std::optional<ExtendedGraph> extended;
  if (spec.kind == "sequences") extended = extend_bidirectional(graph);
  for (int64_t size : spec.sizes) {
    if (datasets.count(size)) continue;
    const uint64_t ds_seed =
        mix_seed(spec.seed, fnv1a64("dataset|" + spec.kind + "|" + std::to_string(size)), 0,
                 static_cast<uint64_t>(Stream::dataset));
    detail::DatasetContext ctx;
    std::string dump, stats_json;
    std::string stem = spec.kind + "_n" + std::to_string(size);
    if (spec.kind == "triplets") {
      TripletSet ts = gen_triplets(graph, ds_seed, size);
      ctx.vocab = build_vocab(ts);
      ctx.batch = encode_triplets(ts, ctx.vocab);
      ctx.max_len = 3;
      dump = dump_triplets(ts);
      stats_json = dataset_stats(ts).to_json();
    } else {
      SequenceGenParams sp;
      sp.count = size;
      sp.min_nodes = spec.seq.min_nodes;
      sp.max_nodes = spec.seq.max_nodes;
      sp.bfs_depth = spec.seq.bfs_depth;
      sp.seed = ds_seed;
      std::vector<Sequence> ss = gen_sequences(*extended, sp);
      ctx.vocab = build_vocab(ss);
      ctx.max_len = 2 * spec.seq.max_nodes - 1;
      ctx.batch = encode_sequences(ss, ctx.vocab, ctx.max_len);
      dump = dump_sequences(ss);
      stats_json = dataset_stats(ss).to_json();
    }
    const fs::path base = fs::path(out_dir) / "datasets";
    if (!fs::exists(base / (stem + ".tsv"))) write_text_file((base / (stem + ".tsv")).string(), dump);
    if (!fs::exists(base / (stem + ".vocab.tsv")))
      write_text_file((base / (stem + ".vocab.tsv")).string(), dump_vocab(ctx.vocab));
    if (!fs::exists(base / (stem + ".stats.json")))
      write_text_file((base / (stem + ".stats.json")).string(), stats_json + "\n");
    datasets.emplace(size, std::move(ctx));
  }

  // --- task list ---
  std::vector<GridCell> cells = expand_grid(spec);
  std::vector<detail::RunTask> tasks;
  for (const auto& cell : cells) {
    const std::string key = cell_key(spec, cell);
    for (int rep = 0; rep < spec.repeats; ++rep) {
      detail::RunTask t;
      t.index = tasks.size();
      t.cell = cell;
      t.repeat = rep;
      t.key = key;
      t.seed = mix_seed(spec.seed, fnv1a64(key), static_cast<uint64_t>(rep),
                        static_cast<uint64_t>(Stream::run));
      t.curve_file = detail::curve_file_name(spec, cell, rep, t.seed);
      tasks.push_back(std::move(t));
    }
  }

  const std::string ledger_path = (fs::path(out_dir) / "ledger.jsonl").string();
  const auto completed = read_completed_runs(ledger_path);
  detail::LedgerWriter writer(ledger_path, tasks.size());

  RunnerStats stats;
  stats.ledger_path = ledger_path;
  std::mutex stats_mu;
  std::atomic<size_t> next_task{0};

  auto run_one = [&](const detail::RunTask& t) -> std::string {
    const auto& ctx = datasets.at(t.cell.size);
    nlohmann::json j;
    j["schema"] = kRunSchema;
    j["setup"] = spec.setup;
    j["kind"] = spec.kind;
    j["cell"] = t.key;
    j["size"] = t.cell.size;
    j["layers"] = t.cell.layers;
    if (t.cell.base_params > 0)
      j["base_params"] = t.cell.base_params;
    else
      j["base_params"] = nullptr;
    j["d_model"] = t.cell.d_model;
    j["activation"] = t.cell.activation;
    j["repeat"] = t.repeat;
    j["seed"] = t.seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ModelConfig mc;
      mc.vocab_size = ctx.vocab.size() + 1;
      mc.d_model = t.cell.d_model;
      mc.n_layers = t.cell.layers;
      mc.n_heads = spec.heads;
      mc.max_len = ctx.max_len;
      mc.activation = activation_from_string(t.cell.activation);
      TrainConfig tc;
      tc.batch_size = spec.batch_size;
      tc.epochs = spec.epochs;
      tc.eval_every = spec.eval_every;
      tc.seed = t.seed;
      TrainResult res = train(mc, tc, ctx.batch);
      write_curve_csv((fs::path(out_dir) / t.curve_file).string(), res.curve);
      j["param_count"] = count_parameters(mc);
      j["n_predictions"] = res.curve.n_predictions;
      j["final_accuracy"] = res.curve.accuracy.back();
      j["final_mac"] = res.curve.mac.back();
      j["curve_file"] = t.curve_file;
      j["status"] = "ok";
    } catch (const std::exception& e) {
      j["status"] = "error";
      j["reason"] = e.what();
      std::lock_guard<std::mutex> lock(stats_mu);
      ++stats.failed;
    }
    const auto t1 = std::chrono::steady_clock::now();
    j["wall_time_s"] = std::chrono::duration<double>(t1 - t0).count();
    return j.dump();
  };

  auto worker_loop = [&]() {
    for (;;) {
      const size_t i = next_task.fetch_add(1);
      if (i >= tasks.size()) break;
      const auto& t = tasks[i];
      if (completed.count({t.key, t.repeat})) {
        writer.mark_skipped(t.index);
        std::lock_guard<std::mutex> lock(stats_mu);
        ++stats.skipped;
        continue;
      }
      if (log) {
        std::lock_guard<std::mutex> lock(stats_mu);
        (*log) << "run " << (t.index + 1) << "/" << tasks.size() << " " << t.key << " repeat "
               << t.repeat << "\n";
      }
      std::string line = run_one(t);
      writer.post_line(t.index, std::move(line));
      std::lock_guard<std::mutex> lock(stats_mu);
      ++stats.executed;
    }
  };

  if (workers == 1) {
    worker_loop();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker_loop);
    for (auto& th : pool) th.join();
  }
  return stats;
}

}  // namespace kgmem
