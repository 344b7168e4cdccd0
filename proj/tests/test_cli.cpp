#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "pricequant/commands.hpp"
#include "pricequant/error.hpp"
#include "pricequant/io.hpp"

using namespace pricequant;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pq_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir.parent_path());
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PRICEQUANT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t line_count(const fs::path& p) {
  const auto text = read_file(p);
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

std::vector<Json> read_jsonl(const fs::path& p) {
  std::vector<Json> out;
  std::istringstream in(read_file(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(Json::parse(line));
  }
  return out;
}

std::string boat_line(int i, double price) {
  return R"({"id":"b)" + std::to_string(i) + R"(","kind":"boat","fields":{"boat_type":"Cabin )" + std::to_string(i) +
         R"(","year_built":")" + std::to_string(1990 + i % 30) + R"("},"price":)" + std::to_string(price) + "}\n";
}

// Titles appear twice: once in train and once in test with the same price.
fs::path twin_fixture(const fs::path& dir) {
  std::vector<Record> recs;
  const char* words[] = {"brass", "cap", "oak", "shelf", "steel", "pipe", "red", "lamp", "glass", "jar"};
  for (int i = 0; i < 10; ++i) {
    for (Split s : {Split::train, Split::test}) {
      Record r;
      r.id = "r" + std::to_string(i) + (s == Split::train ? "a" : "b");
      r.fields = {{"title", std::string(words[i]) + " " + words[(i + 3) % 10] + " item" + std::to_string(i)}};
      r.price = 10.0 * (i + 1);
      r.split = s;
      recs.push_back(r);
    }
  }
  fs::create_directories(dir);
  write_records(dir / "records.jsonl", recs);
  return dir / "records.jsonl";
}

RunConfig small_train_config() {
  RunConfig cfg;
  cfg.set("features.dim", "256");
  cfg.set("model.hidden", "16");
  cfg.set("train.max_epochs", "3");
  cfg.set("train.batch_size", "32");
  cfg.set("grid.K", "20");
  return cfg;
}

MetricReport report_of(std::vector<std::pair<std::string, double>> rows, Direction last_dir = Direction::higher) {
  MetricReport r;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    MetricRow row;
    row.name = rows[i].first;
    row.interval.value = rows[i].second;
    row.direction = i + 1 == rows.size() ? last_dir : Direction::lower;
    r.rows.push_back(row);
  }
  return r;
}

}  // namespace

TEST_CASE("ingest a boats file") {
  const auto dir = scratch("ingest");
  fs::create_directories(dir);
  std::string text;
  for (int i = 0; i < 40; ++i) text += boat_line(i, 10000.0 + 500.0 * i);
  text += "not json\n";
  write_file_atomic(dir / "boats.jsonl", text);
  const auto out = dir / "run";
  REQUIRE(run_cli("--kind boat ingest --input " + (dir / "boats.jsonl").string() + " --out " + out.string()) == 0);

  const auto summary = Json::parse(read_file(out / "summary.json"));
  CHECK(summary["total"] == 40);
  CHECK(summary["rejected_count"] == 1);
  CHECK(summary["splits"]["train"]["count"] == 32);
  CHECK(summary["splits"]["val"]["count"] == 4);
  CHECK(summary["splits"]["test"]["count"] == 4);
  CHECK(line_count(out / "train.jsonl") == 32);
  CHECK(line_count(out / "rejected.jsonl") == 1);

  // Every artifact is listed with its hash.
  std::istringstream manifest(read_file(out / "manifest.txt"));
  std::string hash, bytes, name;
  std::size_t listed = 0;
  while (manifest >> hash >> bytes >> name) {
    const auto content = read_file(out / name);
    CHECK(hash == hex64(fnv1a64(content)));
    CHECK(std::stoul(bytes) == content.size());
    ++listed;
  }
  CHECK(listed >= 8);
  CHECK(fs::exists(out / "config.txt"));
  CHECK(read_file(out / "config.txt").find("kind = boat") != std::string::npos);

  // Same inputs, same bytes.
  const auto again = dir / "again";
  REQUIRE(run_cli("--kind boat ingest --input " + (dir / "boats.jsonl").string() + " --out " + again.string()) == 0);
  CHECK(read_file(out / "manifest.txt") == read_file(again / "manifest.txt"));
}

TEST_CASE("ingest edge cases") {
  const auto dir = scratch("ingest_edge");
  fs::create_directories(dir);
  write_file_atomic(dir / "empty.jsonl", "");
  REQUIRE(run_cli("ingest --input " + (dir / "empty.jsonl").string() + " --out " + (dir / "run").string()) == 0);
  const auto summary = Json::parse(read_file(dir / "run" / "summary.json"));
  CHECK(summary["total"] == 0);
  CHECK(read_file(dir / "run" / "records.jsonl").empty());

  CHECK(run_cli("ingest --input " + (dir / "missing.jsonl").string() + " --out " + (dir / "bad").string()) != 0);
  CHECK(!fs::exists(dir / "bad"));

  CHECK(run_cli("--set no.such.key=1 ingest --input " + (dir / "empty.jsonl").string() + " --out " +
                (dir / "bad2").string()) != 0);
  CHECK(!fs::exists(dir / "bad2"));
}

TEST_CASE("synth command") {
  const auto dir = scratch("synth");
  REQUIRE(run_cli("--set synth.count=200 synth --out " + (dir / "a").string()) == 0);
  REQUIRE(run_cli("--set synth.count=200 synth --out " + (dir / "b").string()) == 0);
  CHECK(line_count(dir / "a" / "records.jsonl") == 200);
  CHECK(line_count(dir / "a" / "truth.jsonl") == 200);
  CHECK(read_file(dir / "a" / "records.jsonl") == read_file(dir / "b" / "records.jsonl"));
  CHECK(read_file(dir / "a" / "manifest.txt") == read_file(dir / "b" / "manifest.txt"));

  REQUIRE(run_cli("--set synth.count=50 --set synth.bimodal=true --set synth.bimodal_weight=0.4 synth --out " +
                  (dir / "bi").string()) == 0);
  const auto truth = read_jsonl(dir / "bi" / "truth.jsonl");
  REQUIRE(truth.size() == 50);
  CHECK(truth[0]["mixture"]["weight"] == 0.4);
  CHECK(truth[0]["mixture"]["shift"] == 1.0);
}

TEST_CASE("train, eval and predict through the command layer") {
  const auto dir = scratch("train");
  RunConfig cfg = small_train_config();
  cfg.set("synth.count", "300");
  cmd_synth(cfg, dir / "synth");
  cmd_ingest(cfg, dir / "synth" / "records.jsonl", dir / "data");

  std::ostringstream log;
  cmd_train(cfg, dir / "data", dir / "q1", &log);
  cmd_train(cfg, dir / "data", dir / "q2");
  CHECK(fs::exists(dir / "q1" / "checkpoint.bin"));
  CHECK(read_file(dir / "q1" / "checkpoint.bin") == read_file(dir / "q2" / "checkpoint.bin"));
  CHECK(line_count(dir / "q1" / "history.csv") == 4);
  CHECK(log.str().find("epoch 1 ") != std::string::npos);

  const auto q = load_model(dir / "q1" / "checkpoint.bin");
  REQUIRE(q.checkpoint);
  CHECK(q.has_distribution());
  CHECK(q.grid()->size() == 20);

  auto pcfg = cfg;
  pcfg.set("model.head", "point");
  cmd_train(pcfg, dir / "data", dir / "p");
  const auto p = load_model(dir / "p" / "checkpoint.bin");
  CHECK(!p.has_distribution());
  CHECK(p.checkpoint->model.output_dim() == 1);

  cmd_eval(cfg, dir / "q1" / "checkpoint.bin", dir / "data", dir / "eval_q");
  cmd_eval(cfg, dir / "p" / "checkpoint.bin", dir / "data", dir / "eval_p");
  CHECK(fs::exists(dir / "eval_q" / "distribution_metrics.csv"));
  CHECK(!fs::exists(dir / "eval_p" / "distribution_metrics.csv"));
  const auto rq = MetricReport::from_json(Json::parse(read_file(dir / "eval_q" / "report.json")));
  CHECK(rq.find("CRPSS") != nullptr);
  CHECK(rq.find("MAPE") != nullptr);

  // Point-only and distributional reports do not share a metric set.
  const std::vector<fs::path> mixed = {dir / "eval_q" / "report.json", dir / "eval_p" / "report.json"};
  CHECK_THROWS_AS(cmd_compare(cfg, mixed, dir / "cmp"), UsageError);
  CHECK(!fs::exists(dir / "cmp"));

  auto k_other = cfg;
  k_other.set("grid.K", "50");
  CHECK_THROWS(cmd_eval(k_other, dir / "q1" / "checkpoint.bin", dir / "data", dir / "eval_bad"));
  CHECK(!fs::exists(dir / "eval_bad"));
  CHECK_THROWS(cmd_eval(cfg, dir / "nothing.bin", dir / "data", dir / "eval_none"));

  // Invalid config fails before any output.
  auto bad = cfg;
  bad.set("train.lr", "-1");
  CHECK_THROWS_AS(cmd_train(bad, dir / "data", dir / "bad"), ConfigError);
  CHECK(!fs::exists(dir / "bad"));

  // Predict keeps order and lists unparseable lines.
  std::string lines;
  for (int i = 0; i < 5; ++i) lines += R"({"id":"x)" + std::to_string(i) + R"(","fields":{"title":"lamp )" + std::to_string(i) + R"("},"price":10})" "\n";
  lines.insert(lines.find('\n') + 1, "garbage\n");
  write_file_atomic(dir / "query.jsonl", lines);
  cmd_predict(cfg, dir / "q1" / "checkpoint.bin", dir / "query.jsonl", dir / "pred");
  const auto rows = read_jsonl(dir / "pred" / "predictions.jsonl");
  REQUIRE(rows.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(rows[i]["id"] == "x" + std::to_string(i));
    const auto qs = rows[i]["quantiles"].get<std::vector<double>>();
    CHECK(qs.size() == 20);
    for (std::size_t k = 1; k < qs.size(); ++k) CHECK(qs[k] >= qs[k - 1]);
    CHECK(rows[i]["interval"][0] <= rows[i]["median"]);
    CHECK(rows[i]["median"] <= rows[i]["interval"][1]);
  }
  CHECK(line_count(dir / "pred" / "rejects.jsonl") == 1);
}

TEST_CASE("evaluating a perfect predictor") {
  const auto dir = scratch("perfect");
  const auto data = twin_fixture(dir / "data");
  RunConfig cfg;
  cfg.set("baseline.kind", "knn");
  cfg.set("baseline.ks", "1");
  cfg.set("features.dim", "256");
  cfg.set("eval.iterations", "200");
  cmd_fit_baseline(cfg, data, dir / "knn");
  cmd_eval(cfg, dir / "knn" / "baseline.bin", data, dir / "eval");
  const auto rep = MetricReport::from_json(Json::parse(read_file(dir / "eval" / "report.json")));
  CHECK(rep.n == 10);
  for (const char* m : {"MAPE", "WAPE", "MPE"}) {
    REQUIRE(rep.find(m) != nullptr);
    CHECK(std::abs(rep.find(m)->interval.value) < 1e-9);
  }
  REQUIRE(rep.find("CRPSS") != nullptr);
  CHECK(rep.find("CRPSS")->interval.value == doctest::Approx(1.0).epsilon(1e-12));

  // A degenerate distribution still gets a narrow bump at its median.
  cfg.set("predict.density", "true");
  cmd_predict(cfg, dir / "knn" / "baseline.bin", data, dir / "pred");
  const auto rows = read_jsonl(dir / "pred" / "predictions.jsonl");
  REQUIRE(rows.size() == 20);
  const double med = rows[0]["median"].get<double>();
  CHECK(med == doctest::Approx(10.0));
  std::istringstream csv(read_file(dir / "pred" / "density" / "000000-r0a.csv"));
  std::string line;
  std::getline(csv, line);
  double best_v = 0.0, best_d = -1.0, lo = 1e300, hi = -1e300;
  while (std::getline(csv, line)) {
    const double v = std::stod(line.substr(0, line.find(','))), d = std::stod(line.substr(line.find(',') + 1));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    if (d > best_d) best_d = d, best_v = v;
  }
  CHECK(std::abs(best_v - med) <= 0.01 * med);
  CHECK(hi - lo < 0.5 * med);
  CHECK(fs::exists(dir / "pred" / "density" / "000000-r0a.svg"));
}

TEST_CASE("comparison tables") {
  const std::vector<std::string> two = {"a", "b"};
  {
    const std::vector<MetricReport> reps = {report_of({{"MAPE", 10}, {"CE", 0.01}, {"CRPSS", 0.6}}),
                                            report_of({{"MAPE", 20}, {"CE", 0.05}, {"CRPSS", 0.2}})};
    const auto c = compare_reports(reps, two);
    for (const auto& row : c.best) {
      CHECK(row[0]);
      CHECK(!row[1]);
    }
    CHECK(comparison_text(c).find("10.0000 *") != std::string::npos);
    CHECK(comparison_csv(c).find("MAPE,a,10,1") != std::string::npos);
  }
  {
    const std::vector<MetricReport> reps = {report_of({{"MAPE", 10}}), report_of({{"MAPE", 10}})};
    const auto c = compare_reports(reps, two);
    CHECK(c.best[0][0]);
    CHECK(c.best[0][1]);
  }
  {
    // MPE is judged by distance from zero.
    const std::vector<std::string> three = {"a", "b", "c"};
    const std::vector<MetricReport> reps = {report_of({{"MAPE", 12}, {"MPE", -1}}, Direction::closer_to_zero),
                                            report_of({{"MAPE", 9}, {"MPE", 3}}, Direction::closer_to_zero),
                                            report_of({{"MAPE", 11}, {"MPE", 0.5}}, Direction::closer_to_zero)};
    const auto c = compare_reports(reps, three);
    CHECK(c.best[0] == std::vector<bool>{false, true, false});
    CHECK(c.best[1] == std::vector<bool>{false, false, true});
  }
  const std::vector<MetricReport> one = {report_of({{"MAPE", 1}})};
  CHECK_THROWS_AS(compare_reports(one, std::vector<std::string>{"a"}), UsageError);
  const std::vector<MetricReport> mismatch = {report_of({{"MAPE", 1}}), report_of({{"WAPE", 1}})};
  CHECK_THROWS_AS(compare_reports(mismatch, two), UsageError);
}

TEST_CASE("compare through the binary") {
  const auto dir = scratch("compare");
  for (const char* name : {"m1", "m2", "m3"}) fs::create_directories(dir / name);
  write_file_atomic(dir / "m1" / "report.json", report_of({{"MAPE", 10}, {"CRPSS", 0.4}}).to_json().dump());
  write_file_atomic(dir / "m2" / "report.json", report_of({{"MAPE", 8}, {"CRPSS", 0.3}}).to_json().dump());
  write_file_atomic(dir / "m3" / "report.json", report_of({{"WAPE", 8}}).to_json().dump());
  const auto r1 = (dir / "m1" / "report.json").string(), r2 = (dir / "m2" / "report.json").string();
  REQUIRE(run_cli("compare " + r1 + " " + r2 + " --out " + (dir / "out").string()) == 0);
  const auto csv = read_file(dir / "out" / "compare.csv");
  CHECK(csv.find("MAPE,m2,8,1") != std::string::npos);
  CHECK(csv.find("CRPSS,m1,0.40000000000000002,1") != std::string::npos);
  CHECK(run_cli("compare " + r1 + " " + (dir / "m3" / "report.json").string() + " --out " + (dir / "bad").string()) != 0);
  CHECK(!fs::exists(dir / "bad"));
}

TEST_CASE("run configuration") {
  RunConfig cfg;
  CHECK(cfg.get("seed") == "7");
  CHECK_THROWS_AS(cfg.set("no.such", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.get("no.such"), ConfigError);
  cfg.load_text("# comment\nseed = 9\nmodel.hidden = 8,4\n");
  CHECK(cfg.get_u64("seed") == 9);
  CHECK(cfg.get_sizes("model.hidden") == std::vector<std::size_t>{8, 4});
  cfg.apply_override("seed=11");
  CHECK(cfg.get_u64("seed") == 11);
  CHECK_THROWS_AS(cfg.load_text("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("seed"), ConfigError);
  CHECK(cfg.to_text().find("seed = 11\n") != std::string::npos);

  for (const auto& s : known_settings()) {
    CHECK(!s.doc.empty());
    CHECK(RunConfig().get(s.key) == s.default_value);
  }

  // File < --set on the command line.
  const auto dir = scratch("config");
  fs::create_directories(dir);
  write_file_atomic(dir / "run.cfg", "synth.count = 30\nsynth.seed = 4\n");
  REQUIRE(run_cli("--config " + (dir / "run.cfg").string() + " --set synth.count=20 synth --out " +
                  (dir / "out").string()) == 0);
  CHECK(line_count(dir / "out" / "records.jsonl") == 20);
  const auto echoed = read_file(dir / "out" / "config.txt");
  CHECK(echoed.find("synth.count = 20\n") != std::string::npos);
  CHECK(echoed.find("synth.seed = 4\n") != std::string::npos);
}
