#include "pricequant/error.hpp"
#include "pricequant/model.hpp"

namespace pricequant {

Json TrainConfig::to_json() const {
  return {{"lr", optimizer.lr},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"eps", optimizer.eps},
          {"weight_decay", optimizer.weight_decay},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seed", seed},
          {"select", select == SelectMetric::mape ? "mape" : "loss"}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  c.optimizer.lr = j.at("lr").get<double>();
  c.optimizer.beta1 = j.at("beta1").get<double>();
  c.optimizer.beta2 = j.at("beta2").get<double>();
  c.optimizer.eps = j.at("eps").get<double>();
  c.optimizer.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.select = j.at("select").get<std::string>() == "mape" ? SelectMetric::mape : SelectMetric::loss;
  return c;
}

Container checkpoint_to_container(const Checkpoint& ckpt) {
  Container c;
  c.kind = "checkpoint";
  c.version = Checkpoint::kFormatVersion;
  Json history = Json::array();
  for (const auto& e : ckpt.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_mape", e.val_mape}});
  }
  c.header = {{"featurizer", ckpt.featurizer.to_json()},
              {"model", ckpt.model.config().to_json()},
              {"train", ckpt.train_config.to_json()},
              {"history", history},
              {"best_epoch", ckpt.best_epoch},
              {"target_space", to_string(ckpt.target_space)}};
  if (ckpt.model.grid()) c.header["grid"] = ckpt.model.grid()->to_json();
  c.f64["params"].assign(ckpt.model.params().begin(), ckpt.model.params().end());
  return c;
}

Checkpoint checkpoint_from_container(const Container& c) {
  if (c.kind != "checkpoint") throw CheckpointError("container holds a '" + c.kind + "', not a checkpoint");
  if (c.version != Checkpoint::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(c.version));
  }
  try {
    Checkpoint ckpt;
    const auto& h = c.header;
    ckpt.featurizer = Featurizer::from_json(h.at("featurizer"));
    const auto mcfg = ModelConfig::from_json(h.at("model"));
    GridPtr grid;
    if (h.contains("grid")) grid = std::make_shared<const QuantileGrid>(QuantileGrid::from_json(h.at("grid")));
    ckpt.model = Model(mcfg, grid);
    const auto it = c.f64.find("params");
    if (it == c.f64.end() || it->second.size() != ckpt.model.param_count()) {
      throw CheckpointError("parameter array does not match the model shape");
    }
    std::copy(it->second.begin(), it->second.end(), ckpt.model.params().begin());
    ckpt.train_config = TrainConfig::from_json(h.at("train"));
    for (const auto& e : h.at("history")) {
      ckpt.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                              e.at("val_loss").get<double>(), e.at("val_mape").get<double>()});
    }
    ckpt.best_epoch = h.at("best_epoch").get<std::size_t>();
    ckpt.target_space = parse_value_space(h.at("target_space").get<std::string>());
    if (ckpt.featurizer.output_dim() != mcfg.input_dim) {
      throw CheckpointError("checkpoint featurizer does not match its model");
    }
    return ckpt;
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid checkpoint configuration: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  save_container(path, checkpoint_to_container(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_container(load_container(path));
}

}  // namespace pricequant
