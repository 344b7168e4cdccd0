#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pricequant/baselines.hpp"
#include "pricequant/dataset.hpp"
#include "pricequant/metrics.hpp"
#include "pricequant/model.hpp"
#include "pricequant/run_config.hpp"
#include "pricequant/synth.hpp"

namespace pricequant {

// Collects a command's outputs in memory and writes them together with
// config.txt and manifest.txt only once everything has been produced.
class RunOutput {
public:
  RunOutput(std::filesystem::path dir, const RunConfig& cfg);
  void add(std::string name, std::string bytes);
  void commit();

private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> files_;
};

// "<fnv1a64 hex>  <bytes>  <name>" per artifact, sorted by name.
std::string manifest_text(const std::map<std::string, std::string>& files);

FeaturizerConfig featurizer_config(const RunConfig& cfg);
GridPtr grid_from_config(const RunConfig& cfg);
ModelConfig model_config(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg);
SplitFractions split_fractions(const RunConfig& cfg);
SynthSpec synth_spec(const RunConfig& cfg);

// A checkpoint or a fitted baseline, loaded from its container file.
struct LoadedModel {
  std::string label;
  std::optional<Checkpoint> checkpoint;
  std::optional<Baseline> baseline;

  bool has_distribution() const;
  const Featurizer& featurizer() const;
  GridPtr grid() const;
};

LoadedModel load_model(const std::filesystem::path& path);

struct BatchPrediction {
  std::vector<double> point;  // price space; the median for distributional models
  std::vector<PredictedDistribution> dists;  // empty for point models
};

BatchPrediction predict_batch(const LoadedModel& model, std::span<const Record> records, std::size_t threads);

void cmd_ingest(const RunConfig& cfg, const std::filesystem::path& input, const std::filesystem::path& out);
void cmd_synth(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_train(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out,
               std::ostream* log = nullptr);
void cmd_fit_baseline(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out);
void cmd_eval(const RunConfig& cfg, const std::filesystem::path& model, const std::filesystem::path& data,
              const std::filesystem::path& out);
void cmd_predict(const RunConfig& cfg, const std::filesystem::path& model, const std::filesystem::path& records,
                 const std::filesystem::path& out);
void cmd_compare(const RunConfig& cfg, std::span<const std::filesystem::path> reports,
                 const std::filesystem::path& out);

struct Comparison {
  std::vector<std::string> labels;
  std::vector<std::string> metrics;
  std::vector<std::vector<double>> values;  // [metric][report]
  std::vector<std::vector<bool>> best;      // [metric][report]
};

// Best value per metric by its direction; exact ties are all flagged.
Comparison compare_reports(std::span<const MetricReport> reports, std::span<const std::string> labels);
std::string comparison_text(const Comparison& c);
std::string comparison_csv(const Comparison& c);

}  // namespace pricequant
