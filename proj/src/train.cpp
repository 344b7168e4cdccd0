#include <algorithm>
#include <cmath>
#include <numeric>

#include "pricequant/error.hpp"
#include "pricequant/model.hpp"
#include "pricequant/rng.hpp"

namespace pricequant {

double evaluate_loss(const Model& model, const TrainingSet& data) {
  if (data.x.empty()) return std::numeric_limits<double>::quiet_NaN();
  Workspace ws;
  double total = 0.0;
  for (std::size_t i = 0; i < data.x.size(); ++i) total += model.loss(data.x[i], data.y_log[i], ws);
  return total / static_cast<double>(data.x.size());
}

double evaluate_mape(const Model& model, const TrainingSet& data) {
  if (data.x.empty()) return std::numeric_limits<double>::quiet_NaN();
  Workspace ws;
  double total = 0.0;
  for (std::size_t i = 0; i < data.x.size(); ++i) {
    double log_hat;
    if (model.config().head == HeadKind::point) {
      log_hat = model.predict_point_log(data.x[i], ws);
    } else {
      log_hat = median(model.predict_log(data.x[i], ws));
    }
    const double y = std::exp(data.y_log[i]);
    total += std::abs((y - std::exp(log_hat)) / y);
  }
  return 100.0 * total / static_cast<double>(data.x.size());
}

TrainResult train(const TrainingSet& train_set, const TrainingSet& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, GridPtr grid) {
  if (train_set.x.empty()) throw ConfigError("training split is empty");
  if (val_set.x.empty()) throw ConfigError("validation split is empty");
  if (train_set.x.size() != train_set.y_log.size() || val_set.x.size() != val_set.y_log.size()) {
    throw ShapeError("features and targets are misaligned");
  }
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");

  TrainResult result;
  result.model = Model(model_cfg, std::move(grid));
  Model& model = result.model;
  model.init(derive_seed(cfg.seed, 0));
  model.init_head_bias(train_set.y_log);
  if (cfg.max_epochs == 0) return result;

  auto select_score = [&](const EpochStats& s) { return cfg.select == SelectMetric::mape ? s.val_mape : s.val_loss; };

  std::vector<double> best_params(model.params().begin(), model.params().end());
  EpochStats initial;
  initial.val_loss = evaluate_loss(model, val_set);
  initial.val_mape = evaluate_mape(model, val_set);
  double best = select_score(initial);

  AdamW opt(model.param_count(), cfg.optimizer);
  std::vector<double> grads(model.param_count(), 0.0);
  std::vector<std::size_t> order(train_set.x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Workspace ws;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    bool failed = false;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grads.begin(), grads.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        batch_loss += model.loss_and_grad(train_set.x[i], train_set.y_log[i], ws, grads, scale);
      }
      if (!std::isfinite(batch_loss)) {
        result.diverged = true;
        result.message = "training loss is not finite at epoch " + std::to_string(epoch);
        failed = true;
        break;
      }
      epoch_loss += batch_loss;
      try {
        opt.step(model.params(), grads);
      } catch (const NumericError& e) {
        result.diverged = true;
        result.message = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
        failed = true;
        break;
      }
    }
    if (failed) break;

    EpochStats s;
    s.epoch = epoch;
    s.train_loss = epoch_loss / static_cast<double>(order.size());
    s.val_loss = evaluate_loss(model, val_set);
    s.val_mape = evaluate_mape(model, val_set);
    if (!std::isfinite(s.val_loss)) {
      result.diverged = true;
      result.message = "validation loss is not finite at epoch " + std::to_string(epoch);
      result.history.push_back(s);
      break;
    }
    result.history.push_back(s);
    const double score = select_score(s);
    if (score < best) {
      best = score;
      result.best_epoch = epoch;
      std::copy(model.params().begin(), model.params().end(), best_params.begin());
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  std::copy(best_params.begin(), best_params.end(), model.params().begin());
  return result;
}

TrainingSet make_training_set(const Featurizer& featurizer, std::span<const Record> records) {
  TrainingSet set;
  set.x = featurizer.batch(records);
  set.y_log.reserve(records.size());
  for (const auto& r : records) set.y_log.push_back(log_price(r.price));
  return set;
}

Checkpoint train_from_records(std::span<const Record> train_records, std::span<const Record> val_records,
                              const FeaturizerConfig& feat_cfg, ModelConfig model_cfg, const TrainConfig& cfg,
                              GridPtr grid, TrainResult* result_out) {
  Featurizer featurizer(feat_cfg);
  featurizer.fit(train_records);
  const auto train_set = make_training_set(featurizer, train_records);
  const auto val_set = make_training_set(featurizer, val_records);
  model_cfg.input_dim = featurizer.output_dim();
  auto result = train(train_set, val_set, model_cfg, cfg, std::move(grid));

  Checkpoint ckpt;
  ckpt.featurizer = std::move(featurizer);
  ckpt.model = result.model;
  ckpt.train_config = cfg;
  ckpt.history = result.history;
  ckpt.best_epoch = result.best_epoch;
  if (result_out != nullptr) *result_out = std::move(result);
  return ckpt;
}

Prediction predict(const Checkpoint& ckpt, const FeatureVector& x) {
  if (x.dim() != ckpt.model.config().input_dim) {
    throw CheckpointError("feature dimension does not match the checkpoint model");
  }
  Workspace ws;
  Prediction p;
  if (ckpt.model.config().head == HeadKind::quantile) {
    auto log_dist = ckpt.model.predict_log(x, ws);
    p.point = std::exp(median(log_dist));
    p.dist = log_dist.to_linear();
  } else {
    p.point = std::exp(ckpt.model.predict_point_log(x, ws));
  }
  return p;
}

Prediction predict(const Checkpoint& ckpt, const Record& record) {
  if (ckpt.featurizer.output_dim() != ckpt.model.config().input_dim) {
    throw CheckpointError("checkpoint featurizer does not match its model");
  }
  return predict(ckpt, ckpt.featurizer(record));
}

}  // namespace pricequant
