#include "pricequant/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <ostream>
#include <thread>

#include "pricequant/error.hpp"
#include "pricequant/io.hpp"

namespace pricequant {

namespace fs = std::filesystem;

RunOutput::RunOutput(fs::path dir, const RunConfig& cfg) : dir_(std::move(dir)) { files_["config.txt"] = cfg.to_text(); }

void RunOutput::add(std::string name, std::string bytes) {
  if (name == "manifest.txt" || name == "config.txt") throw UsageError("reserved output name '" + name + "'");
  files_[std::move(name)] = std::move(bytes);
}

std::string manifest_text(const std::map<std::string, std::string>& files) {
  std::string out;
  char buf[64];
  for (const auto& [name, bytes] : files) {
    std::snprintf(buf, sizeof(buf), "  %zu  ", bytes.size());
    out += hex64(fnv1a64(bytes)) + buf + name + "\n";
  }
  return out;
}

void RunOutput::commit() {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
  for (const auto& [name, bytes] : files_) {
    const auto path = dir_ / name;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    write_file_atomic(path, bytes);
  }
  write_file_atomic(dir_ / "manifest.txt", manifest_text(files_));
}

FeaturizerConfig featurizer_config(const RunConfig& cfg) {
  FeaturizerConfig f;
  f.dim = cfg.get_size("features.dim");
  f.seed = cfg.get_u64("features.seed");
  f.validate();
  return f;
}

GridPtr grid_from_config(const RunConfig& cfg) {
  return make_grid(cfg.get_size("grid.K"), cfg.get_double("grid.alpha"));
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m;
  m.hidden = cfg.get_sizes("model.hidden");
  m.head = parse_head_kind(cfg.get("model.head"));
  m.activation = parse_delta_activation(cfg.get("model.activation"));
  m.monotone = cfg.get_bool("model.monotone");
  m.head_init_scale = cfg.get_double("model.head_init_scale");
  return m;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.optimizer.lr = cfg.get_double("train.lr");
  t.optimizer.weight_decay = cfg.get_double("train.weight_decay");
  t.batch_size = cfg.get_size("train.batch_size");
  t.max_epochs = cfg.get_size("train.max_epochs");
  t.patience = cfg.get_size("train.patience");
  t.seed = cfg.get_u64("seed");
  const auto& sel = cfg.get("train.select");
  if (sel != "loss" && sel != "mape") throw ConfigError("train.select must be loss or mape");
  t.select = sel == "mape" ? SelectMetric::mape : SelectMetric::loss;
  if (!(t.optimizer.lr > 0.0) || t.optimizer.weight_decay < 0.0 || t.batch_size == 0 || t.patience == 0) {
    throw ConfigError("training settings must be positive");
  }
  return t;
}

SplitFractions split_fractions(const RunConfig& cfg) {
  return {cfg.get_double("split.train"), cfg.get_double("split.val"), cfg.get_double("split.test")};
}

SynthSpec synth_spec(const RunConfig& cfg) {
  VocabOptions v;
  v.size = cfg.get_size("synth.vocab");
  v.mu_spread = cfg.get_double("synth.mu_spread");
  v.sigma_max = cfg.get_double("synth.sigma_max");
  v.seed = cfg.get_u64("synth.vocab_seed");
  SynthSpec s;
  s.vocab = make_vocab(v);
  s.mu0 = cfg.get_double("synth.mu0");
  s.sigma0 = cfg.get_double("synth.sigma0");
  s.tokens_per_record = cfg.get_size("synth.tokens_per_record");
  s.count = cfg.get_size("synth.count");
  s.seed = cfg.get_u64("synth.seed");
  s.clusters = cfg.get_size("synth.clusters");
  if (cfg.get_bool("synth.bimodal")) {
    s.bimodal = Mixture{cfg.get_double("synth.bimodal_weight"), cfg.get_double("synth.bimodal_shift")};
  }
  s.validate();
  return s;
}

bool LoadedModel::has_distribution() const {
  if (checkpoint) return checkpoint->model.config().head == HeadKind::quantile;
  return baseline->kind != BaselineKind::ridge;
}

const Featurizer& LoadedModel::featurizer() const {
  return checkpoint ? checkpoint->featurizer : baseline->featurizer;
}

GridPtr LoadedModel::grid() const {
  if (checkpoint) return checkpoint->model.grid();
  return baseline->grid;
}

LoadedModel load_model(const fs::path& path) {
  const auto c = load_container(path);
  LoadedModel m;
  if (c.kind == "checkpoint") {
    m.checkpoint = checkpoint_from_container(c);
    m.label = std::string("mlp-") + std::string(to_string(m.checkpoint->model.config().head));
  } else if (c.kind == "baseline") {
    m.baseline = baseline_from_container(c);
    m.label = std::string(to_string(m.baseline->kind));
  } else {
    throw CheckpointError(path.string() + " holds an unknown artifact '" + c.kind + "'");
  }
  return m;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers; results must be
// written by index so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// A directory stands for the records.jsonl an ingest run wrote into it.
std::vector<Record> load_records(const fs::path& input, const RunConfig& cfg) {
  const fs::path path = fs::is_directory(input) ? input / "records.jsonl" : input;
  auto parsed = parse_records_file(path, parse_kind(cfg.get("kind")));
  if (!parsed.rejects.empty()) {
    const auto& r = parsed.rejects.front();
    throw ValidationError(path.string() + ":" + std::to_string(r.line) + ": " + r.reason + " (" +
                          std::to_string(parsed.rejects.size()) + " invalid lines)");
  }
  return std::move(parsed.records);
}

std::string jsonl(const std::vector<Json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_grid(const LoadedModel& m, const RunConfig& cfg) {
  if (!m.has_distribution()) return;
  const auto want = grid_from_config(cfg);
  if (!(*m.grid() == *want)) {
    throw UsageError("quantile grid of the model (K=" + std::to_string(m.grid()->size()) +
                     ") does not match the configured grid (K=" + std::to_string(want->size()) + ")");
  }
}

}  // namespace

BatchPrediction predict_batch(const LoadedModel& model, std::span<const Record> records, std::size_t threads) {
  const std::size_t n = records.size();
  std::vector<std::optional<PredictedDistribution>> dists(n);
  BatchPrediction out;
  out.point.assign(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto x = model.featurizer()(records[i]);
    if (model.checkpoint) {
      auto p = predict(*model.checkpoint, x);
      out.point[i] = p.point;
      dists[i] = std::move(p.dist);
      return;
    }
    const auto& b = *model.baseline;
    switch (b.kind) {
      case BaselineKind::ridge:
        out.point[i] = std::exp(b.ridge.predict_log(x));
        return;
      case BaselineKind::knn:
        dists[i] = knn_quantiles(b.index, x, b.k, b.grid);
        break;
      case BaselineKind::rknn:
        dists[i] = rknn_quantiles(b.index, x, b.radius, b.min_neighbors, b.grid);
        break;
    }
    out.point[i] = median(*dists[i]);
  });
  if (model.has_distribution()) {
    out.dists.reserve(n);
    for (auto& d : dists) out.dists.push_back(std::move(*d));
  }
  return out;
}

void cmd_ingest(const RunConfig& cfg, const fs::path& input, const fs::path& out) {
  const Kind kind = parse_kind(cfg.get("kind"));
  auto rules = FilterRules::defaults();
  rules.robust_c = cfg.get_double("ingest.robust_c");
  rules.category_field = cfg.get("ingest.category_field");
  const auto fractions = split_fractions(cfg);
  split_counts(0, fractions);  // validates the fractions before any work

  auto parsed = parse_records_file(input, kind);
  auto filtered = sanity_filter(std::move(parsed.records), rules);
  split_dataset(filtered.kept, fractions, cfg.get_u64("seed"));
  const auto summary = summarize(filtered.kept, filtered.removed.size(), parsed.rejects.size());

  RunOutput run(out, cfg);
  std::string all, parts[3];
  for (const auto& r : filtered.kept) {
    const auto line = record_to_line(r) + "\n";
    all += line;
    if (r.split == Split::train) parts[0] += line;
    if (r.split == Split::val) parts[1] += line;
    if (r.split == Split::test) parts[2] += line;
  }
  run.add("records.jsonl", all);
  run.add("train.jsonl", parts[0]);
  run.add("val.jsonl", parts[1]);
  run.add("test.jsonl", parts[2]);
  std::vector<Json> rejected, removed;
  for (const auto& r : parsed.rejects) rejected.push_back(reject_to_json(r));
  for (const auto& r : filtered.removed) {
    auto j = record_to_json(r.record);
    j["reason"] = r.reason;
    removed.push_back(std::move(j));
  }
  run.add("rejected.jsonl", jsonl(rejected));
  run.add("removed.jsonl", jsonl(removed));
  run.add("summary.json", summary_to_json(summary).dump(2) + "\n");
  run.commit();
}

void cmd_synth(const RunConfig& cfg, const fs::path& out) {
  const auto spec = synth_spec(cfg);
  const auto data = generate(spec);
  RunOutput run(out, cfg);
  std::string records, truth;
  for (const auto& r : data.records) records += record_to_line(r) + "\n";
  for (const auto& g : data.truth) truth += g.to_json().dump() + "\n";
  run.add("records.jsonl", records);
  run.add("truth.jsonl", truth);
  run.add("spec.json", spec.to_json().dump(2) + "\n");
  run.commit();
}

void cmd_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, std::ostream* log) {
  const auto feat = featurizer_config(cfg);
  auto mcfg = model_config(cfg);
  const auto tcfg = train_config(cfg);
  const auto grid = grid_from_config(cfg);
  const auto records = load_records(data, cfg);
  const auto train_records = select_split(records, Split::train);
  const auto val_records = select_split(records, Split::val);
  if (train_records.empty()) throw ConfigError("no training records in " + data.string() + " (run ingest first)");
  if (val_records.empty()) throw ConfigError("no validation records in " + data.string());

  TrainResult result;
  const auto ckpt = train_from_records(train_records, val_records, feat, mcfg, tcfg, grid, &result);

  std::string history = "epoch,train_loss,val_loss,val_mape\n";
  for (const auto& e : result.history) {
    history += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.val_loss) + "," + fmt(e.val_mape) + "\n";
    if (log != nullptr) {
      *log << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_mape "
           << e.val_mape << "\n";
    }
  }
  Json summary = {{"best_epoch", result.best_epoch},
                  {"epochs_run", result.history.size()},
                  {"diverged", result.diverged},
                  {"message", result.message},
                  {"train_records", train_records.size()},
                  {"val_records", val_records.size()}};
  RunOutput run(out, cfg);
  run.add("checkpoint.bin", encode_container(checkpoint_to_container(ckpt)));
  run.add("history.csv", history);
  run.add("train.json", summary.dump(2) + "\n");
  run.commit();
  if (result.diverged) throw NumericError("training diverged (" + result.message + "); best checkpoint kept");
}

void cmd_fit_baseline(const RunConfig& cfg, const fs::path& data, const fs::path& out) {
  Baseline b;
  b.kind = parse_baseline_kind(cfg.get("baseline.kind"));
  const auto metric = parse_metric(cfg.get("baseline.metric"));
  const auto folds = cfg.get_size("baseline.folds");
  const auto seed = cfg.get_u64("seed");
  const auto records = load_records(data, cfg);
  const auto train_records = select_split(records, Split::train);
  if (train_records.empty()) throw ConfigError("no training records in " + data.string() + " (run ingest first)");

  b.featurizer = Featurizer(featurizer_config(cfg));
  b.featurizer.fit(train_records);
  const auto set = make_training_set(b.featurizer, train_records);
  CvReport cv;
  switch (b.kind) {
    case BaselineKind::ridge: {
      const auto lambdas = cfg.get_doubles("baseline.lambdas");
      cv = cv_ridge(set.x, set.y_log, lambdas, folds, seed);
      b.ridge = ridge_fit(set.x, set.y_log, cv.entries[cv.best].params.at("lambda").get<double>());
      break;
    }
    case BaselineKind::knn: {
      b.grid = grid_from_config(cfg);
      const auto ks = cfg.get_sizes("baseline.ks");
      cv = cv_knn(set.x, set.y_log, ks, *b.grid, metric, folds, seed);
      b.k = cv.entries[cv.best].params.at("k").get<std::size_t>();
      b.index = NeighborIndex(set.x, set.y_log, metric);
      break;
    }
    case BaselineKind::rknn: {
      b.grid = grid_from_config(cfg);
      const auto radii = cfg.get_doubles("baseline.radii");
      const auto mins = cfg.get_sizes("baseline.min_neighbors");
      cv = cv_rknn(set.x, set.y_log, radii, mins, *b.grid, metric, folds, seed);
      b.radius = cv.entries[cv.best].params.at("radius").get<double>();
      b.min_neighbors = std::min(cv.entries[cv.best].params.at("min_neighbors").get<std::size_t>(), set.x.size());
      b.index = NeighborIndex(set.x, set.y_log, metric);
      break;
    }
  }
  RunOutput run(out, cfg);
  run.add("baseline.bin", encode_container(baseline_to_container(b)));
  run.add("cv.json", cv.to_json().dump(2) + "\n");
  run.commit();
}

void cmd_eval(const RunConfig& cfg, const fs::path& model_path, const fs::path& data, const fs::path& out) {
  EvalOptions opts;
  opts.iterations = cfg.get_size("eval.iterations");
  opts.seed = cfg.get_u64("eval.seed");
  opts.gamma = cfg.get_double("eval.gamma");
  const auto model = load_model(model_path);
  check_grid(model, cfg);
  const auto records = load_records(data, cfg);
  const auto test = select_split(records, Split::test);
  if (test.empty()) throw ConfigError("no test records in " + data.string());
  std::vector<double> reference;
  for (const auto& r : records) {
    if (r.split == Split::train) reference.push_back(r.price);
  }
  std::vector<double> y;
  for (const auto& r : test) y.push_back(r.price);

  const auto pred = predict_batch(model, test, cfg.get_size("threads"));
  auto report = evaluate(y, pred.point, pred.dists, reference, opts);
  report.model = model.label;

  std::string point_csv = "metric,value,ci_low,ci_high\n", dist_csv = point_csv;
  for (const auto& row : report.rows) {
    const bool is_point = row.name == "MAPE" || row.name == "WAPE" || row.name == "MPE";
    (is_point ? point_csv : dist_csv) += row.name + "," + fmt(row.interval.value) + "," + fmt(row.interval.ci_low) +
                                         "," + fmt(row.interval.ci_high) + "\n";
  }
  RunOutput run(out, cfg);
  run.add("report.json", report.to_json().dump(2) + "\n");
  run.add("report.csv", report.to_csv());
  run.add("point_metrics.csv", point_csv);
  if (!pred.dists.empty()) run.add("distribution_metrics.csv", dist_csv);
  run.commit();
}

namespace {

std::string safe_name(std::string_view id) {
  std::string s;
  for (char c : id) s += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return s.substr(0, 64);
}

}  // namespace

void cmd_predict(const RunConfig& cfg, const fs::path& model_path, const fs::path& records_path, const fs::path& out) {
  const double gamma = cfg.get_double("predict.gamma");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("predict.gamma must lie in (0, 1)");
  const bool density = cfg.get_bool("predict.density");
  const auto points = cfg.get_size("predict.density_points");
  const auto model = load_model(model_path);
  auto parsed = parse_records_file(records_path, parse_kind(cfg.get("kind")));
  const auto pred = predict_batch(model, parsed.records, cfg.get_size("threads"));

  RunOutput run(out, cfg);
  std::vector<Json> rows;
  char prefix[16];
  for (std::size_t i = 0; i < parsed.records.size(); ++i) {
    const auto& r = parsed.records[i];
    Json row = {{"id", r.id}};
    if (pred.dists.empty()) {
      row["point"] = pred.point[i];
      rows.push_back(std::move(row));
      continue;
    }
    const auto& d = pred.dists[i];
    row["median"] = median(d);
    row["interval"] = {interpolate_quantile(d, gamma / 2.0), interpolate_quantile(d, 1.0 - gamma / 2.0)};
    row["coverage"] = 1.0 - gamma;
    row["quantiles"] = d.quantiles();
    rows.push_back(std::move(row));
    if (density) {
      const auto curve = density_curve(d, default_bandwidth(d), points);
      std::vector<SvgMarker> markers = {{median(d), "median", "firebrick"}};
      if (r.price > 0.0) markers.push_back({r.price, "true price", "darkgreen"});
      std::snprintf(prefix, sizeof(prefix), "%06zu-", i);
      const std::string stem = "density/" + std::string(prefix) + safe_name(r.id);
      run.add(stem + ".csv", density_csv(curve));
      run.add(stem + ".svg", density_svg(curve, markers, r.id));
    }
  }
  std::vector<Json> rejects;
  for (const auto& r : parsed.rejects) rejects.push_back(reject_to_json(r));
  run.add("predictions.jsonl", jsonl(rows));
  run.add("rejects.jsonl", jsonl(rejects));
  run.commit();
}

Comparison compare_reports(std::span<const MetricReport> reports, std::span<const std::string> labels) {
  if (reports.size() < 2) throw UsageError("compare needs at least two reports");
  if (labels.size() != reports.size()) throw ShapeError("one label per report");
  Comparison c;
  c.labels.assign(labels.begin(), labels.end());
  for (const auto& row : reports.front().rows) c.metrics.push_back(row.name);
  for (const auto& rep : reports) {
    std::vector<std::string> names;
    for (const auto& row : rep.rows) names.push_back(row.name);
    if (names != c.metrics) throw UsageError("reports have different metric sets");
  }
  for (std::size_t m = 0; m < c.metrics.size(); ++m) {
    const auto dir = reports.front().rows[m].direction;
    std::vector<double> vals;
    for (const auto& rep : reports) vals.push_back(rep.rows[m].interval.value);
    auto score = [dir](double v) {
      switch (dir) {
        case Direction::higher: return -v;
        case Direction::closer_to_zero: return std::abs(v);
        case Direction::lower: break;
      }
      return v;
    };
    double best = score(vals[0]);
    for (double v : vals) best = std::min(best, score(v));
    std::vector<bool> flags;
    for (double v : vals) flags.push_back(score(v) == best);
    c.values.push_back(std::move(vals));
    c.best.push_back(std::move(flags));
  }
  return c;
}

std::string comparison_text(const Comparison& c) {
  std::vector<std::size_t> width(c.labels.size() + 1, 6);
  for (const auto& m : c.metrics) width[0] = std::max(width[0], m.size());
  std::vector<std::vector<std::string>> cells(c.metrics.size());
  char buf[48];
  for (std::size_t m = 0; m < c.metrics.size(); ++m) {
    for (std::size_t r = 0; r < c.labels.size(); ++r) {
      std::snprintf(buf, sizeof(buf), "%.4f%s", c.values[m][r], c.best[m][r] ? " *" : "");
      cells[m].push_back(buf);
      width[r + 1] = std::max(width[r + 1], cells[m].back().size());
    }
  }
  for (std::size_t r = 0; r < c.labels.size(); ++r) width[r + 1] = std::max(width[r + 1], c.labels[r].size());
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size() + 2, ' '); };
  std::string out = pad("metric", width[0]);
  for (std::size_t r = 0; r < c.labels.size(); ++r) out += pad(c.labels[r], width[r + 1]);
  out += "\n";
  for (std::size_t m = 0; m < c.metrics.size(); ++m) {
    out += pad(c.metrics[m], width[0]);
    for (std::size_t r = 0; r < c.labels.size(); ++r) out += pad(cells[m][r], width[r + 1]);
    out += "\n";
  }
  out += "* best per metric\n";
  return out;
}

std::string comparison_csv(const Comparison& c) {
  std::string out = "metric,model,value,best\n";
  for (std::size_t m = 0; m < c.metrics.size(); ++m) {
    for (std::size_t r = 0; r < c.labels.size(); ++r) {
      out += c.metrics[m] + "," + c.labels[r] + "," + fmt(c.values[m][r]) + "," + (c.best[m][r] ? "1" : "0") + "\n";
    }
  }
  return out;
}

void cmd_compare(const RunConfig& cfg, std::span<const fs::path> report_paths, const fs::path& out) {
  std::vector<MetricReport> reports;
  std::vector<std::string> labels;
  for (const auto& p : report_paths) {
    Json j;
    try {
      j = Json::parse(read_file(p));
    } catch (const Json::exception& e) {
      throw UsageError(p.string() + ": " + e.what());
    }
    reports.push_back(MetricReport::from_json(j));
    std::string label = p.parent_path().filename().string();
    if (label.empty()) label = reports.back().model;
    if (std::find(labels.begin(), labels.end(), label) != labels.end()) label += "#" + std::to_string(labels.size() + 1);
    labels.push_back(label);
  }
  const auto c = compare_reports(reports, labels);
  RunOutput run(out, cfg);
  run.add("compare.txt", comparison_text(c));
  run.add("compare.csv", comparison_csv(c));
  run.commit();
}

}  // namespace pricequant
