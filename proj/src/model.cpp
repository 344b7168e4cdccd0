#include "pricequant/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pricequant/error.hpp"
#include "pricequant/rng.hpp"

namespace pricequant {

std::string_view to_string(HeadKind h) { return h == HeadKind::point ? "point" : "quantile"; }

HeadKind parse_head_kind(std::string_view s) {
  if (s == "quantile") return HeadKind::quantile;
  if (s == "point") return HeadKind::point;
  throw ConfigError("unknown head kind '" + std::string(s) + "'");
}

Json ModelConfig::to_json() const {
  return {{"input_dim", input_dim},
          {"hidden", hidden},
          {"head", to_string(head)},
          {"activation", to_string(activation)},
          {"monotone", monotone},
          {"head_init_scale", head_init_scale}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.head = parse_head_kind(j.at("head").get<std::string>());
  c.activation = parse_delta_activation(j.at("activation").get<std::string>());
  c.monotone = j.at("monotone").get<bool>();
  c.head_init_scale = j.at("head_init_scale").get<double>();
  return c;
}

Model::Model(ModelConfig cfg, GridPtr grid) : cfg_(std::move(cfg)), grid_(std::move(grid)) {
  if (cfg_.input_dim == 0) throw ConfigError("model input dimension must be positive");
  for (auto w : cfg_.hidden) {
    if (w == 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (cfg_.head == HeadKind::quantile && !grid_) throw ConfigError("quantile head needs a grid");
  if (cfg_.head == HeadKind::point) grid_.reset();
  std::size_t in = cfg_.input_dim;
  std::size_t offset = 0;
  auto add = [&](std::size_t out) {
    LayerShape l{in, out, offset, offset + in * out};
    offset += in * out + out;
    layers_.push_back(l);
    in = out;
  };
  for (auto w : cfg_.hidden) add(w);
  add(output_dim());
  params_.assign(offset, 0.0);
}

std::size_t Model::output_dim() const {
  return cfg_.head == HeadKind::point ? 1 : grid_->size();
}

void Model::init(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    double a = std::sqrt(6.0 / static_cast<double>(L.in));
    if (l + 1 == layers_.size()) a *= cfg_.head_init_scale;
    for (std::size_t i = 0; i < L.in * L.out; ++i) params_[L.weight_offset + i] = rng.uniform(-a, a);
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(L.bias_offset), L.out, 0.0);
  }
}

void Model::init_head_bias(std::span<const double> log_targets) {
  if (log_targets.empty()) return;
  const auto& L = layers_.back();
  double* bias = params_.data() + L.bias_offset;
  std::vector<double> sorted(log_targets.begin(), log_targets.end());
  std::sort(sorted.begin(), sorted.end());
  if (cfg_.head == HeadKind::point) {
    double s = 0.0;
    for (double v : sorted) s += v;
    bias[0] = s / static_cast<double>(sorted.size());
    return;
  }
  auto empirical = [&](double tau) {
    const double pos = tau * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const auto levels = grid_->levels();
  double prev = empirical(levels[0]);
  bias[0] = prev;
  for (std::size_t k = 1; k < levels.size(); ++k) {
    const double cur = empirical(levels[k]);
    if (cfg_.monotone) {
      const double gap = std::max(cur - prev, 1e-4);
      // softplus^{-1}(gap) for the delta activation; relu passes gaps through.
      bias[k] = cfg_.activation == DeltaActivation::relu ? gap : std::log(std::expm1(gap));
    } else {
      bias[k] = cur;
    }
    prev = cur;
  }
}

std::span<const double> Model::forward(const FeatureVector& x, Workspace& ws) const {
  if (x.dim() != cfg_.input_dim) {
    std::ostringstream os;
    os << "input dimension " << x.dim() << " does not match model input " << cfg_.input_dim;
    throw ShapeError(os.str());
  }
  ws.act.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    auto& out = ws.act[l];
    out.assign(params_.begin() + static_cast<std::ptrdiff_t>(L.bias_offset),
               params_.begin() + static_cast<std::ptrdiff_t>(L.bias_offset + L.out));
    const double* W = params_.data() + L.weight_offset;
    if (l == 0) {
      const auto idx = x.indices();
      const auto val = x.values();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        kernels::axpy(val[k], {W + static_cast<std::size_t>(idx[k]) * L.out, L.out}, out);
      }
    } else {
      const auto& in = ws.act[l - 1];
      for (std::size_t j = 0; j < L.in; ++j) {
        if (in[j] != 0.0) kernels::axpy(in[j], {W + j * L.out, L.out}, out);
      }
    }
    if (l + 1 < layers_.size()) {
      for (double& v : out) v = v > 0.0 ? v : 0.0;
    }
  }
  return ws.act.back();
}

void Model::head_to_quantiles(std::span<const double> z, std::span<double> q) const {
  if (cfg_.monotone) {
    delta_encode(z, cfg_.activation, q);
  } else {
    std::copy(z.begin(), z.end(), q.begin());
  }
}

double Model::loss_and_grad(const FeatureVector& x, double y, Workspace& ws, std::span<double> grads,
                            double scale) const {
  if (grads.size() != params_.size()) throw ShapeError("gradient buffer size mismatch");
  const auto z = forward(x, ws);
  ws.grad.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) ws.grad[l].resize(layers_[l].out);
  auto& gout = ws.grad.back();

  double loss = 0.0;
  if (cfg_.head == HeadKind::point) {
    const double r = z[0] - y;
    loss = r * r;
    gout[0] = 2.0 * r;
  } else {
    const std::size_t K = z.size();
    ws.quantiles.resize(K);
    ws.dq.resize(K);
    head_to_quantiles(z, ws.quantiles);
    loss = batch_quantile_loss(ws.quantiles, y, *grid_, ws.dq);
    if (cfg_.monotone) {
      delta_encode_backward(z, ws.dq, cfg_.activation, gout);
    } else {
      std::copy(ws.dq.begin(), ws.dq.end(), gout.begin());
    }
  }

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    const auto& g = ws.grad[l];
    const double* W = params_.data() + L.weight_offset;
    double* dW = grads.data() + L.weight_offset;
    kernels::axpy(scale, g, {grads.data() + L.bias_offset, L.out});
    if (l == 0) {
      const auto idx = x.indices();
      const auto val = x.values();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        kernels::axpy(scale * val[k], g, {dW + static_cast<std::size_t>(idx[k]) * L.out, L.out});
      }
    } else {
      const auto& in = ws.act[l - 1];
      auto& gprev = ws.grad[l - 1];
      for (std::size_t j = 0; j < L.in; ++j) {
        if (in[j] > 0.0) {
          kernels::axpy(scale * in[j], g, {dW + j * L.out, L.out});
          gprev[j] = kernels::dot({W + j * L.out, L.out}, g);
        } else {
          gprev[j] = 0.0;
        }
      }
    }
  }
  return loss;
}

double Model::loss(const FeatureVector& x, double y, Workspace& ws) const {
  const auto z = forward(x, ws);
  if (cfg_.head == HeadKind::point) {
    const double r = z[0] - y;
    return r * r;
  }
  ws.quantiles.resize(z.size());
  head_to_quantiles(z, ws.quantiles);
  return batch_quantile_loss(ws.quantiles, y, *grid_);
}

double Model::batch_gradient(std::span<const FeatureVector> xs, std::span<const double> ys,
                             std::vector<double>& grads) const {
  if (xs.size() != ys.size() || xs.empty()) throw ShapeError("batch inputs and targets must be non-empty and aligned");
  grads.assign(params_.size(), 0.0);
  Workspace ws;
  const double scale = 1.0 / static_cast<double>(xs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) total += loss_and_grad(xs[i], ys[i], ws, grads, scale);
  return total * scale;
}

PredictedDistribution Model::predict_log(const FeatureVector& x, Workspace& ws) const {
  if (cfg_.head != HeadKind::quantile) throw UsageError("point-head model has no quantile output");
  const auto z = forward(x, ws);
  std::vector<double> q(z.size());
  head_to_quantiles(z, q);
  if (!cfg_.monotone) std::sort(q.begin(), q.end());
  return PredictedDistribution(grid_, std::move(q), ValueSpace::log);
}

double Model::predict_point_log(const FeatureVector& x, Workspace& ws) const {
  if (cfg_.head != HeadKind::point) throw UsageError("quantile-head model has no scalar output");
  return forward(x, ws)[0];
}

AdamW::AdamW(std::size_t n, AdamWConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {
  if (!(cfg_.lr > 0.0) || cfg_.weight_decay < 0.0 || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) ||
      !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) || !(cfg_.eps > 0.0)) {
    throw ConfigError("invalid optimizer settings");
  }
}

void AdamW::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("optimizer state size mismatch");
  if (const std::size_t bad = kernels::count_nonfinite(grads); bad > 0) {
    std::size_t first = 0;
    while (std::isfinite(grads[first])) ++first;
    std::ostringstream os;
    os << "non-finite gradient at step " << t_ + 1 << ": " << bad << " entries, first at index " << first
       << " (value " << grads[first] << ")";
    throw NumericError(os.str());
  }
  ++t_;
  kernels::AdamWCoeffs c;
  c.lr = cfg_.lr;
  c.beta1 = cfg_.beta1;
  c.beta2 = cfg_.beta2;
  c.eps = cfg_.eps;
  c.weight_decay = cfg_.weight_decay;
  c.bias_correction1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  c.bias_correction2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  kernels::adamw(params, grads, m_, v_, c);
}

}  // namespace pricequant
