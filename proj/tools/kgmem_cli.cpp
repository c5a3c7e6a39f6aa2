// kgmem command-line driver: dataset generation, experiment grids, reports
// and artifact inspection.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "kgmem/kgmem.hpp"

namespace fs = std::filesystem;

namespace {

std::string default_out_root() {
  const char* env = std::getenv("KGMEM_OUT");
  return env && *env ? std::string(env) : std::string("runs");
}

struct GenerateArgs {
  std::string graph_file;
  int64_t synth_nodes = 0;
  int64_t synth_props = 0;
  double synth_degree = 0;
  std::string banned_file;
  std::string kind;
  int64_t count = 0;  // 0 for triplets = all pairs
  int min_nodes = 4;
  int max_nodes = 6;
  int64_t bfs_depth = 5;
  uint64_t seed = 0;
  std::string out;
  std::string name;
};

int cmd_generate(const GenerateArgs& a) {
  kgmem::KnowledgeGraph graph;
  bool synthesized = false;
  if (!a.graph_file.empty()) {
    graph = kgmem::load_edge_list_file(a.graph_file);
  } else if (a.synth_nodes > 0) {
    kgmem::SynthGraphParams gp;
    gp.n_nodes = a.synth_nodes;
    gp.n_properties = a.synth_props > 0 ? a.synth_props : 16;
    gp.mean_out_degree = a.synth_degree > 0 ? a.synth_degree : 3.0;
    gp.seed = a.seed;
    graph = kgmem::synth_kg(gp);
    synthesized = true;
  } else {
    throw std::runtime_error("generate: pass either --graph FILE or --synth-nodes N");
  }
  std::set<std::string> banned;
  if (!a.banned_file.empty()) banned = kgmem::load_banned_list_file(a.banned_file);
  graph = kgmem::filter_properties(graph, banned);

  const std::string out_dir = a.out.empty() ? default_out_root() : a.out;
  fs::create_directories(out_dir);
  std::string stem = a.name;
  if (stem.empty())
    stem = a.kind + (a.count > 0 ? "_n" + std::to_string(a.count) : "_all");

  std::string dataset, vocab_tsv, stats_json;
  if (a.kind == "triplets") {
    std::optional<int64_t> limit;
    if (a.count > 0) limit = a.count;
    kgmem::TripletSet ts = kgmem::gen_triplets(graph, a.seed, limit);
    dataset = kgmem::dump_triplets(ts);
    vocab_tsv = kgmem::dump_vocab(kgmem::build_vocab(ts));
    stats_json = kgmem::dataset_stats(ts).to_json();
  } else if (a.kind == "sequences") {
    if (a.count < 1) throw std::runtime_error("generate: sequences need --count >= 1");
    kgmem::ExtendedGraph ext = kgmem::extend_bidirectional(graph);
    kgmem::SequenceGenParams sp;
    sp.count = a.count;
    sp.min_nodes = a.min_nodes;
    sp.max_nodes = a.max_nodes;
    sp.bfs_depth = a.bfs_depth;
    sp.seed = a.seed;
    std::vector<kgmem::Sequence> ss = kgmem::gen_sequences(ext, sp);
    dataset = kgmem::dump_sequences(ss);
    vocab_tsv = kgmem::dump_vocab(kgmem::build_vocab(ss));
    stats_json = kgmem::dataset_stats(ss).to_json();
  } else {
    throw std::runtime_error("generate: --kind must be 'triplets' or 'sequences'");
  }

  const fs::path base = fs::path(out_dir);
  kgmem::write_text_file((base / (stem + ".tsv")).string(), dataset);
  kgmem::write_text_file((base / (stem + ".vocab.tsv")).string(), vocab_tsv);
  kgmem::write_text_file((base / (stem + ".stats.json")).string(), stats_json + "\n");
  if (synthesized)
    kgmem::write_text_file((base / (stem + ".graph.tsv")).string(), kgmem::dump_edge_list(graph));
  std::cout << "wrote " << (base / (stem + ".tsv")).string() << " (+vocab, +stats"
            << (synthesized ? ", +graph" : "") << ")\n";
  return 0;
}

int cmd_run(const std::string& spec_path, std::string out, int workers, bool fresh,
            std::optional<uint64_t> seed_override) {
  kgmem::ExperimentSpec spec = kgmem::ExperimentSpec::from_file(spec_path);
  if (seed_override) spec.seed = *seed_override;
  if (out.empty()) {
    if (!spec.out_dir.empty())
      out = spec.out_dir;
    else
      out = (fs::path(default_out_root()) / fs::path(spec_path).stem()).string();
  }
  if (fresh) {
    fs::remove(fs::path(out) / "ledger.jsonl");
    fs::remove_all(fs::path(out) / "curves");
  }
  kgmem::RunnerStats stats = kgmem::run_experiment(spec, out, workers, &std::cerr);
  std::cout << "ledger: " << stats.ledger_path << "\n"
            << "executed " << stats.executed << ", skipped " << stats.skipped << ", failed "
            << stats.failed << "\n";
  return stats.failed == 0 ? 0 : 2;
}

int cmd_report(const std::string& ledger, std::string out) {
  if (out.empty()) out = (fs::path(ledger).parent_path() / "report").string();
  kgmem::ReportResult res = kgmem::write_report(ledger, out);
  std::cout << "summary: " << res.summary_csv_path << "\n";
  for (const auto& p : res.chart_paths) std::cout << "chart:   " << p << "\n";
  for (const auto& m : res.missing_curves)
    std::cerr << "missing curve file: " << m << "\n";
  return 0;
}

int cmd_inspect(const std::string& path) {
  const std::string name = fs::path(path).filename().string();
  if (name.size() > 6 && name.substr(name.size() - 6) == ".jsonl") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    int64_t total = 0, ok = 0, failed = 0;
    std::set<std::string> cells;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      ++total;
      if (j.value("status", "") == "ok")
        ++ok;
      else
        ++failed;
      cells.insert(j.value("cell", ""));
    }
    std::cout << "ledger: " << total << " runs (" << ok << " ok, " << failed << " failed) across "
              << cells.size() << " cells\n";
    return 0;
  }
  if (name.find(".stats.json") != std::string::npos || name.find(".json") != std::string::npos) {
    std::cout << kgmem::read_text_file(path);
    return 0;
  }
  if (name.find("vocab") != std::string::npos) {
    kgmem::Vocab v = kgmem::parse_vocab(kgmem::read_text_file(path));
    std::cout << "vocab: " << v.size() << " labels (+ pad id 0)\n";
    return 0;
  }
  // TSV datasets: 3 fields per line = triplets/graph, alternating = sequences
  const std::string text = kgmem::read_text_file(path);
  try {
    kgmem::TripletSet ts = kgmem::parse_triplets(text);
    std::cout << kgmem::dataset_stats(ts).to_json() << "\n";
    return 0;
  } catch (const std::exception&) {
  }
  std::vector<kgmem::Sequence> ss = kgmem::parse_sequences(text);
  std::cout << kgmem::dataset_stats(ss).to_json() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kgmem: memorization-capacity experiments for small decoder-only transformers"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Generate a dataset (and vocab + stats) from a graph");
  generate->add_option("--graph", gen.graph_file, "Graph TSV file (source<TAB>property<TAB>target)");
  generate->add_option("--synth-nodes", gen.synth_nodes, "Synthesize a graph with this many nodes");
  generate->add_option("--synth-props", gen.synth_props, "Synthetic property count (default 16)");
  generate->add_option("--synth-degree", gen.synth_degree, "Synthetic mean out-degree (default 3)");
  generate->add_option("--banned", gen.banned_file, "Banned-property list, one label per line");
  generate->add_option("--kind", gen.kind, "Dataset kind: triplets | sequences")->required();
  generate->add_option("--count", gen.count, "Sample count (triplets: optional limit)");
  generate->add_option("--min-nodes", gen.min_nodes, "Sequence min nodes (default 4)");
  generate->add_option("--max-nodes", gen.max_nodes, "Sequence max nodes (default 6)");
  generate->add_option("--bfs-depth", gen.bfs_depth, "Sequence BFS depth (default 5)");
  generate->add_option("--seed", gen.seed, "Seed");
  generate->add_option("--out", gen.out, "Output directory (default $KGMEM_OUT or ./runs)");
  generate->add_option("--name", gen.name, "Output file stem");

  std::string spec_path, run_out;
  int workers = 1;
  bool fresh = false;
  uint64_t seed_override = 0;
  bool has_seed_override = false;
  auto* run = app.add_subcommand("run", "Run an experiment grid from a spec file");
  run->add_option("spec", spec_path, "Experiment spec (JSON)")->required();
  run->add_option("--out", run_out, "Output directory (overrides spec out_dir)");
  run->add_option("--workers", workers, "Parallel grid workers (default 1)");
  run->add_flag("--fresh", fresh, "Discard any existing ledger/curves instead of resuming");
  run->add_option("--seed", seed_override, "Override the spec master seed")
      ->each([&](const std::string&) { has_seed_override = true; });

  std::string ledger_path, report_out;
  auto* report = app.add_subcommand("report", "Summarize a ledger into tables and charts");
  report->add_option("--ledger", ledger_path, "Ledger (JSON lines)")->required();
  report->add_option("--out", report_out, "Report output directory");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Describe a dataset, vocab, ledger or stats file");
  inspect->add_option("path", inspect_path, "File to inspect")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(gen);
    if (run->parsed())
      return cmd_run(spec_path, run_out, workers, fresh,
                     has_seed_override ? std::optional<uint64_t>(seed_override) : std::nullopt);
    if (report->parsed()) return cmd_report(ledger_path, report_out);
    if (inspect->parsed()) return cmd_inspect(inspect_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
