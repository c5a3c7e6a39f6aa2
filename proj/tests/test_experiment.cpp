#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "kgmem/experiment.hpp"
#include "kgmem/report.hpp"

using namespace kgmem;
namespace fs = std::filesystem;

namespace {

ExperimentSpec tiny_spec() {
  ExperimentSpec s;
  s.schema = kExperimentSchema;
  s.setup = 3;
  s.kind = "triplets";
  s.synth = SynthSpec{200, 8, 3.0};
  s.sizes = {40, 80};
  s.layers = {1};
  s.d_models = {16};
  s.activations = {"softmax"};
  s.heads = 4;
  s.batch_size = 16;
  s.epochs = 20;
  s.eval_every = 2;
  s.repeats = 1;
  s.seed = 42;
  return s;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> ledger_lines_no_walltime(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    j.erase("wall_time_s");
    out.push_back(j.dump());
  }
  return out;
}

}  // namespace

TEST_CASE("experiment spec json round-trips and validates") {
  ExperimentSpec s = tiny_spec();
  ExperimentSpec back = ExperimentSpec::from_json(s.to_json());
  CHECK(back.kind == "triplets");
  CHECK(back.sizes == s.sizes);
  CHECK(back.seed == s.seed);

  nlohmann::json bad = s.to_json();
  bad.erase("sizes");
  CHECK_THROWS(ExperimentSpec::from_json(bad));

  nlohmann::json both_widths = s.to_json();
  both_widths["base_params"] = {128};
  CHECK_THROWS(ExperimentSpec::from_json(both_widths));

  nlohmann::json no_graph = s.to_json();
  no_graph.erase("graph");
  CHECK_THROWS(ExperimentSpec::from_json(no_graph));

  nlohmann::json bad_act = s.to_json();
  bad_act["activations"] = {"tanh"};
  CHECK_THROWS(ExperimentSpec::from_json(bad_act));
}

TEST_CASE("grid expansion applies the embedding-size formula per cell") {
  ExperimentSpec s = tiny_spec();
  s.d_models = {};
  s.base_params = {16, 128};
  s.layers = {1, 2};
  std::vector<GridCell> cells = expand_grid(s);
  REQUIRE(cells.size() == 2 * 2 * 2);  // sizes x layers x base_params
  for (const auto& c : cells) {
    REQUIRE(c.base_params > 0);
    CHECK(c.d_model == static_cast<int>(c.base_params / c.layers));
  }
}

TEST_CASE("a one-cell spec with two repeats yields two ledger lines and curves") {
  ExperimentSpec s = tiny_spec();
  s.sizes = {40};
  s.repeats = 2;
  s.epochs = 6;
  fs::path dir = fresh_dir("kgmem_exp_basic");
  RunnerStats stats = run_experiment(s, dir.string());
  CHECK(stats.executed == 2);
  CHECK(stats.skipped == 0);
  CHECK(stats.failed == 0);
  auto lines = ledger_lines_no_walltime((dir / "ledger.jsonl").string());
  REQUIRE(lines.size() == 2);
  int curve_files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "curves")) {
    (void)entry;
    ++curve_files;
  }
  CHECK(curve_files == 2);
  // dataset + vocab + stats written once
  CHECK(fs::exists(dir / "datasets" / "triplets_n40.tsv"));
  CHECK(fs::exists(dir / "datasets" / "triplets_n40.vocab.tsv"));
  CHECK(fs::exists(dir / "datasets" / "triplets_n40.stats.json"));
  fs::remove_all(dir);
}

TEST_CASE("re-running a completed spec is a no-op") {
  ExperimentSpec s = tiny_spec();
  s.epochs = 6;
  fs::path dir = fresh_dir("kgmem_exp_noop");
  run_experiment(s, dir.string());
  auto before = read_text_file((dir / "ledger.jsonl").string());
  RunnerStats again = run_experiment(s, dir.string());
  CHECK(again.executed == 0);
  CHECK(again.skipped == 2);
  CHECK(read_text_file((dir / "ledger.jsonl").string()) == before);
  fs::remove_all(dir);
}

TEST_CASE("resume after an interrupted grid reproduces the uninterrupted ledger") {
  ExperimentSpec s = tiny_spec();
  s.epochs = 6;
  s.repeats = 2;  // 2 cells x 2 repeats = 4 runs
  fs::path full_dir = fresh_dir("kgmem_exp_full");
  run_experiment(s, full_dir.string());
  auto full_lines = ledger_lines_no_walltime((full_dir / "ledger.jsonl").string());
  REQUIRE(full_lines.size() == 4);

  // simulate a kill after the first two runs: keep a 2-line ledger prefix
  fs::path part_dir = fresh_dir("kgmem_exp_part");
  fs::create_directories(part_dir);
  {
    std::ifstream in(full_dir / "ledger.jsonl");
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    std::ofstream out(part_dir / "ledger.jsonl", std::ios::binary);
    out << l1 << "\n" << l2 << "\n";
  }
  RunnerStats resumed = run_experiment(s, part_dir.string());
  CHECK(resumed.skipped == 2);
  CHECK(resumed.executed == 2);
  auto resumed_lines = ledger_lines_no_walltime((part_dir / "ledger.jsonl").string());
  CHECK(resumed_lines == full_lines);
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST_CASE("serial and 2-worker executions are byte-identical modulo wall time") {
  ExperimentSpec s = tiny_spec();
  s.epochs = 8;
  s.repeats = 2;
  fs::path serial = fresh_dir("kgmem_exp_serial");
  fs::path parallel = fresh_dir("kgmem_exp_par");
  run_experiment(s, serial.string(), 1);
  run_experiment(s, parallel.string(), 2);
  CHECK(ledger_lines_no_walltime((serial / "ledger.jsonl").string()) ==
        ledger_lines_no_walltime((parallel / "ledger.jsonl").string()));
  // datasets and every curve file byte-identical
  for (const char* sub : {"datasets", "curves"}) {
    for (const auto& entry : fs::directory_iterator(serial / sub)) {
      const fs::path other = parallel / sub / entry.path().filename();
      REQUIRE(fs::exists(other));
      CHECK(read_text_file(entry.path().string()) == read_text_file(other.string()));
    }
  }
  fs::remove_all(serial);
  fs::remove_all(parallel);
}

TEST_CASE("sequences specs run end to end") {
  ExperimentSpec s = tiny_spec();
  s.kind = "sequences";
  s.setup = 4;
  s.sizes = {30};
  s.epochs = 4;
  s.batch_size = 16;
  fs::path dir = fresh_dir("kgmem_exp_seq");
  RunnerStats stats = run_experiment(s, dir.string());
  CHECK(stats.executed == 1);
  CHECK(stats.failed == 0);
  CHECK(fs::exists(dir / "datasets" / "sequences_n30.tsv"));
  auto lines = ledger_lines_no_walltime((dir / "ledger.jsonl").string());
  nlohmann::json j = nlohmann::json::parse(lines[0]);
  CHECK(j["status"] == "ok");
  CHECK(j["n_predictions"].get<int64_t>() >= 30 * 3);
  CHECK(j["n_predictions"].get<int64_t>() <= 30 * 5);
  fs::remove_all(dir);
}

TEST_CASE("report summarizes a ledger into tables and charts") {
  ExperimentSpec s = tiny_spec();
  s.epochs = 20;  // enough to memorize 40 and 80 triplets at d16
  fs::path dir = fresh_dir("kgmem_exp_report");
  run_experiment(s, dir.string());
  ReportResult rep = write_report((dir / "ledger.jsonl").string(), (dir / "report").string());
  CHECK(rep.missing_curves.empty());

  const std::string csv = read_text_file(rep.summary_csv_path);
  // header + one row per cell
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  auto lines = ledger_lines_no_walltime((dir / "ledger.jsonl").string());
  nlohmann::json first = nlohmann::json::parse(lines[0]);
  CHECK(csv.find(std::to_string(first["final_mac"].get<int64_t>())) != std::string::npos);

  // capacity strictly increases with dataset size
  std::istringstream csv_in(csv);
  std::string line;
  std::getline(csv_in, line);  // header
  std::vector<double> macs;
  while (std::getline(csv_in, line)) {
    // repeats=1 leaves the trailing 2sd columns empty
    CHECK(line.back() == ',');
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    REQUIRE(fields.size() >= 13);
    CHECK(fields[11].empty());  // accuracy_2sd
    macs.push_back(std::stod(fields[12]));
  }
  REQUIRE(macs.size() == 2);
  CHECK(macs[0] < macs[1]);

  // SVG structural oracle: one polyline per cell, x axis spans the epochs
  const std::string svg = read_text_file((dir / "report" / "capacity.svg").string());
  size_t polylines = 0, pos = 0;
  while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
    ++polylines;
    pos += 9;
  }
  CHECK(polylines == 2);
  CHECK(svg.find("class=\"xtick\">20<") != std::string::npos);

  // every plotted point stays inside the 960x540 viewBox
  pos = 0;
  while ((pos = svg.find("points=\"", pos)) != std::string::npos) {
    pos += 8;
    const size_t end = svg.find('"', pos);
    std::istringstream pts(svg.substr(pos, end - pos));
    std::string pair;
    while (pts >> pair) {
      const size_t comma = pair.find(',');
      const double x = std::stod(pair.substr(0, comma));
      const double y = std::stod(pair.substr(comma + 1));
      CHECK(x >= 0);
      CHECK(x <= 960);
      CHECK(y >= 0);
      CHECK(y <= 540);
    }
    pos = end;
  }

  const std::string early = read_text_file((dir / "report" / "capacity_first30.svg").string());
  CHECK(early.find("class=\"xtick\">30<") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("a failing cell is recorded with its reason and the grid continues") {
  ExperimentSpec s = tiny_spec();
  s.sizes = {40};
  s.epochs = 4;
  s.d_models = {18, 16};  // 18 is not divisible by 4 heads -> config error
  fs::path dir = fresh_dir("kgmem_exp_fail");
  RunnerStats stats = run_experiment(s, dir.string());
  CHECK(stats.failed == 1);
  CHECK(stats.executed == 2);
  auto lines = ledger_lines_no_walltime((dir / "ledger.jsonl").string());
  REQUIRE(lines.size() == 2);
  nlohmann::json bad = nlohmann::json::parse(lines[0]);
  CHECK(bad["status"] == "error");
  CHECK(bad["reason"].get<std::string>().find("divisible") != std::string::npos);
  nlohmann::json good = nlohmann::json::parse(lines[1]);
  CHECK(good["status"] == "ok");
  fs::remove_all(dir);
}

TEST_CASE("report lists missing curve files but still writes the summary") {
  ExperimentSpec s = tiny_spec();
  s.sizes = {40};
  s.epochs = 4;
  fs::path dir = fresh_dir("kgmem_exp_missing");
  run_experiment(s, dir.string());
  for (const auto& entry : fs::directory_iterator(dir / "curves")) fs::remove(entry.path());
  ReportResult rep = write_report((dir / "ledger.jsonl").string(), (dir / "report").string());
  CHECK(rep.missing_curves.size() == 1);
  CHECK(fs::exists(rep.summary_csv_path));
  fs::remove_all(dir);
}
