#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pricequant/features.hpp"
#include "pricequant/io.hpp"
#include "pricequant/kernels.hpp"
#include "pricequant/quantile.hpp"

namespace pricequant {

enum class HeadKind { quantile, point };
std::string_view to_string(HeadKind h);
HeadKind parse_head_kind(std::string_view s);

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {512, 256};
  HeadKind head = HeadKind::quantile;
  DeltaActivation activation = DeltaActivation::softplus;
  // Delta-encoded (monotone by construction) quantile head; when false the
  // head emits quantiles directly and predictions are sorted.
  bool monotone = true;
  double head_init_scale = 0.1;

  Json to_json() const;
  static ModelConfig from_json(const Json& j);
};

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;  // in x out block, row j = weights fed by input j
  std::size_t bias_offset = 0;
};

// Per-call scratch; reuse across samples to avoid allocation.
struct Workspace {
  std::vector<std::vector<double>> act;  // post-activation per layer (last = raw output)
  std::vector<std::vector<double>> grad;  // dL/d(pre-activation) per layer
  std::vector<double> quantiles;
  std::vector<double> dq;
};

// Fully connected network with rectified hidden layers and either a
// K-quantile head or a scalar point head. Parameters live in one flat
// buffer so the optimizer runs a single pass.
class Model {
public:
  Model() = default;
  // grid is required for the quantile head and ignored for the point head.
  Model(ModelConfig cfg, GridPtr grid);

  const ModelConfig& config() const { return cfg_; }
  const GridPtr& grid() const { return grid_; }
  std::size_t output_dim() const;
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<const LayerShape> layers() const { return layers_; }

  // Scaled uniform init: variance 2/fan_in for rectified layers,
  // head_init_scale times that for the head. Biases zero.
  void init(std::uint64_t seed);
  // Starts the head at the marginal distribution (or mean) of the targets.
  void init_head_bias(std::span<const double> log_targets);

  // Raw head output (z for the quantile head, y-hat for the point head).
  std::span<const double> forward(const FeatureVector& x, Workspace& ws) const;
  // Per-sample loss; accumulates scale * dL/dparams into grads.
  double loss_and_grad(const FeatureVector& x, double y, Workspace& ws, std::span<double> grads,
                       double scale) const;
  double loss(const FeatureVector& x, double y, Workspace& ws) const;
  // Mean loss over a batch and its gradient.
  double batch_gradient(std::span<const FeatureVector> xs, std::span<const double> ys,
                        std::vector<double>& grads) const;

  // Log-space quantiles (quantile head only).
  PredictedDistribution predict_log(const FeatureVector& x, Workspace& ws) const;
  // Log-space point estimate (point head only).
  double predict_point_log(const FeatureVector& x, Workspace& ws) const;

private:
  void head_to_quantiles(std::span<const double> z, std::span<double> q) const;

  ModelConfig cfg_;
  GridPtr grid_;
  std::vector<LayerShape> layers_;
  std::vector<double> params_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
public:
  AdamW() = default;
  AdamW(std::size_t n, AdamWConfig cfg);
  // Throws NumericError (parameters untouched) on a non-finite gradient.
  void step(std::span<double> params, std::span<const double> grads);
  std::size_t steps() const { return t_; }

private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

enum class SelectMetric { loss, mape };

struct TrainConfig {
  AdamWConfig optimizer;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 7;
  SelectMetric select = SelectMetric::loss;

  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

struct TrainingSet {
  std::vector<FeatureVector> x;
  std::vector<double> y_log;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mape = 0.0;
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 0 means the initial parameters
  bool diverged = false;
  std::string message;
};

// Mean per-sample loss (log space) over a set.
double evaluate_loss(const Model& model, const TrainingSet& data);
// MAPE of the point prediction (median for the quantile head) in price space.
double evaluate_mape(const Model& model, const TrainingSet& data);

TrainResult train(const TrainingSet& train_set, const TrainingSet& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, GridPtr grid);

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  Featurizer featurizer;
  Model model;
  TrainConfig train_config;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  ValueSpace target_space = ValueSpace::log;
};

Container checkpoint_to_container(const Checkpoint& ckpt);
Checkpoint checkpoint_from_container(const Container& c);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Fits the featurizer on the training records, featurizes both splits and
// trains on log prices.
Checkpoint train_from_records(std::span<const Record> train_records, std::span<const Record> val_records,
                              const FeaturizerConfig& feat_cfg, ModelConfig model_cfg, const TrainConfig& cfg,
                              GridPtr grid, TrainResult* result = nullptr);

TrainingSet make_training_set(const Featurizer& featurizer, std::span<const Record> records);

struct Prediction {
  std::optional<PredictedDistribution> dist;  // price space, quantile head
  double point = 0.0;                         // price space: median or exp(y-hat)
};

Prediction predict(const Checkpoint& ckpt, const Record& record);
Prediction predict(const Checkpoint& ckpt, const FeatureVector& x);

}  // namespace pricequant
