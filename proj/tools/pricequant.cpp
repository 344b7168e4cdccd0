#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pricequant/commands.hpp"
#include "pricequant/error.hpp"
#include "pricequant/kernels.hpp"

namespace fs = std::filesystem;
using namespace pricequant;

int main(int argc, char** argv) {
  CLI::App app{"pricequant: text-to-price-distribution regression"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> overrides;
  std::string threads, seed, kind;
  app.add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override a setting (key=value), repeatable");
  app.add_option("--threads", threads, "worker threads (setting: threads)");
  app.add_option("--seed", seed, "master seed (setting: seed)");
  app.add_option("--kind", kind, "record kind (setting: kind)");
  bool list_settings = false;
  app.add_flag("--list-settings", list_settings, "print every setting with its default and exit");

  fs::path input, out, data, model, records;
  std::vector<fs::path> reports;
  std::string baseline;
  bool density = false;

  auto* ingest = app.add_subcommand("ingest", "parse, filter and split a record file");
  ingest->add_option("--input", input, "JSON-lines record file")->required();
  ingest->add_option("--out", out, "run directory")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with known distributions");
  synth->add_option("--out", out, "run directory")->required();

  auto* train = app.add_subcommand("train", "train the MLP on an ingested dataset");
  train->add_option("--data", data, "records with split tags (ingest output)")->required();
  train->add_option("--out", out, "run directory")->required();

  auto* fit = app.add_subcommand("fit-baseline", "fit ridge, kNN or radius-kNN with cross-validation");
  fit->add_option("--data", data, "records with split tags (ingest output)")->required();
  fit->add_option("--out", out, "run directory")->required();
  fit->add_option("--baseline", baseline, "ridge, knn or rknn (setting: baseline.kind)");

  auto* eval = app.add_subcommand("eval", "metrics with bootstrap intervals on the test split");
  eval->add_option("--model", model, "checkpoint.bin or baseline.bin")->required();
  eval->add_option("--data", data, "records with split tags")->required();
  eval->add_option("--out", out, "run directory")->required();

  auto* pred = app.add_subcommand("predict", "per-record quantiles and optional density plots");
  pred->add_option("--model", model, "checkpoint.bin or baseline.bin")->required();
  pred->add_option("--records", records, "JSON-lines record file")->required();
  pred->add_option("--out", out, "run directory")->required();
  pred->add_flag("--density", density, "write density CSV and SVG per record");

  auto* cmp = app.add_subcommand("compare", "side-by-side table of metric reports");
  cmp->add_option("reports", reports, "report.json files")->required()->expected(2, -1);
  cmp->add_option("--out", out, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    if (!threads.empty()) cfg.set("threads", threads);
    if (!seed.empty()) cfg.set("seed", seed);
    if (!kind.empty()) cfg.set("kind", kind);
    if (!baseline.empty()) cfg.set("baseline.kind", baseline);
    if (density) cfg.set("predict.density", "true");
    for (const auto& o : overrides) cfg.apply_override(o);
    if (list_settings) {
      for (const auto& s : known_settings()) std::cout << s.key << " = " << s.default_value << "  # " << s.doc << "\n";
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cout << app.help();
      return 2;
    }

    if (*ingest) {
      cmd_ingest(cfg, input, out);
    } else if (*synth) {
      cmd_synth(cfg, out);
    } else if (*train) {
      cmd_train(cfg, data, out, &std::cerr);
    } else if (*fit) {
      cmd_fit_baseline(cfg, data, out);
    } else if (*eval) {
      cmd_eval(cfg, model, data, out);
    } else if (*pred) {
      cmd_predict(cfg, model, records, out);
    } else if (*cmp) {
      cmd_compare(cfg, reports, out);
    }
    std::cout << "wrote " << out.string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
