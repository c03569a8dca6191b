#include "ctf/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "ctf/attnmask.hpp"
#include "ctf/error.hpp"
#include "ctf/patching.hpp"
#include "ctf/rng.hpp"

namespace ctf::train {

namespace {

void check_lengths(const char* what, const Series& targets, const Series& preds) {
  if (targets.size() != preds.size() || targets.empty()) {
    throw ContractError(std::string(what) + ": " + std::to_string(preds.size()) +
                        " predicted channels for " + std::to_string(targets.size()) + " targets");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].size() != preds[i].size() || targets[i].empty()) {
      throw ContractError(std::string(what) + ": channel " + std::to_string(i) + " has " +
                          std::to_string(preds[i].size()) + " predictions for horizon " +
                          std::to_string(targets[i].size()));
    }
  }
}

}  // namespace

Tensor cmse(std::span<const Tensor> predictions, const Series& targets) {
  if (predictions.size() != targets.size() || targets.empty()) {
    throw ContractError("cmse: " + std::to_string(predictions.size()) +
                        " predicted channels for " + std::to_string(targets.size()) + " targets");
  }
  Tensor total;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& y = targets[i];
    if (predictions[i].numel() != y.size() || y.empty()) {
      throw ContractError("cmse: channel " + std::to_string(i) + " has " +
                          std::to_string(predictions[i].numel()) + " predictions for horizon " +
                          std::to_string(y.size()));
    }
    Tensor yt(predictions[i].shape(), y);
    Tensor diff = sub(predictions[i], yt);
    Tensor mse = mean(mul(diff, diff));
    total = i == 0 ? mse : add(total, mse);
  }
  return scale(total, 1.0 / static_cast<double>(targets.size()));
}

double cmse(const Series& targets, const Series& predictions) {
  check_lengths("cmse", targets, predictions);
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < targets[i].size(); ++j) {
      const double e = targets[i][j] - predictions[i][j];
      acc += e * e;
    }
    total += acc / static_cast<double>(targets[i].size());
  }
  return total / static_cast<double>(targets.size());
}

double cmae(const Series& targets, const Series& predictions) {
  check_lengths("cmae", targets, predictions);
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < targets[i].size(); ++j)
      acc += std::fabs(targets[i][j] - predictions[i][j]);
    total += acc / static_cast<double>(targets[i].size());
  }
  return total / static_cast<double>(targets.size());
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (train_stride < 1 || val_stride < 1) throw ConfigError("window strides must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
}

void adam_step(std::span<const model::NamedTensor> registry, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& t : registry) {
      state.m.emplace_back(t.value.numel(), 0.0);
      state.v.emplace_back(t.value.numel(), 0.0);
    }
  }
  if (state.m.size() != registry.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " tensors, registry has " + std::to_string(registry.size()));
  }
  for (std::size_t i = 0; i < registry.size(); ++i) {
    if (!registry[i].trainable) continue;
    const auto& impl = registry[i].value.impl();
    if (impl->grad.empty()) continue;
    for (double g : impl->grad) {
      if (!std::isfinite(g)) {
        throw NumericalError("adam_step: non-finite gradient in parameter '" +
                             registry[i].name + "'");
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < registry.size(); ++i) {
    if (!registry[i].trainable) continue;
    const auto& impl = registry[i].value.impl();
    if (impl->grad.empty()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < impl->data.size(); ++k) {
      const double g = impl->grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      impl->data[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double validation_cmse(const std::vector<data::WindowSample>& windows,
                       const model::ModelParams& params, const model::ModelConfig& config,
                       const PatchPlan& plan) {
  if (windows.empty()) throw ContractError("validation_cmse: no windows");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& w : windows) {
    auto out = model::forward(w, params, config, plan);
    Series preds, targets;
    for (std::size_t i = 0; i < w.num_channels(); ++i) {
      preds.push_back(out.predictions[i].to_vector());
      targets.push_back(w.channels[i].target);
    }
    total += cmse(targets, preds);
  }
  return total / static_cast<double>(windows.size());
}

FitResult fit(const data::AsyncDataset& ds, const model::ModelConfig& config,
              const TrainConfig& train_config, const EpochCallback& on_epoch) {
  auto plan = patching::plan_for_dataset(ds, config.input_length, config.plan_options());
  return fit_with_plan(ds, config, train_config, plan, on_epoch);
}

FitResult fit_with_plan(const data::AsyncDataset& ds, const model::ModelConfig& config,
                        const TrainConfig& train_config, const PatchPlan& plan,
                        const EpochCallback& on_epoch) {
  config.validate();
  train_config.validate();

  data::WindowOptions wo;
  wo.input_length = config.input_length;
  wo.horizon = config.horizon;
  wo.stride = train_config.train_stride;
  auto train_windows = data::make_windows(ds, data::Split::train, wo);
  wo.stride = train_config.val_stride;
  auto val_windows = data::make_windows(ds, data::Split::val, wo);
  if (train_windows.empty() || val_windows.empty()) {
    throw ConfigError("fit: train and validation splits must each hold at least one window of " +
                      std::to_string(config.input_length + config.horizon) + " steps");
  }

  FitResult result;
  result.plan = plan;
  auto params = model::init_params(config, plan, ds.factors(), train_config.seed);
  auto registry = params.registry();
  AdamState adam;

  std::vector<std::size_t> counts;
  for (const auto& c : plan.channels) counts.push_back(c.count);
  const TokenLayout layout(counts, config.channel_tokens);
  const bool dropout = config.patch_masking && config.dropout_ratio > 0.0;

  result.params = params.clone();
  result.best_val_cmse = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<std::size_t> order(train_windows.size());

  for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(train_config.seed, {0xe90c, epoch}));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    double loss_sum = 0.0;
    bool bad = false;
    for (std::size_t start = 0; start < order.size() && !bad; start += train_config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + train_config.batch_size);
      const double weight = 1.0 / static_cast<double>(stop - start);
      for (const auto& t : registry) t.value.impl()->grad.clear();
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t idx = order[b];
        const auto& w = train_windows[idx];
        std::vector<std::uint8_t> keep;
        if (dropout) {
          keep = attnmask::sample_dropout_mask(
              layout, config.dropout_ratio,
              derive_seed(train_config.seed, {0xd209, epoch, idx}));
        }
        auto out = dropout ? model::forward(w, params, config, plan,
                                            std::span<const std::uint8_t>(keep))
                           : model::forward(w, params, config, plan);
        Series targets;
        for (const auto& c : w.channels) targets.push_back(c.target);
        Tensor loss = cmse(out.predictions, targets);
        if (!std::isfinite(loss.item())) {
          bad = true;
          break;
        }
        loss_sum += loss.item();
        backward(scale(loss, weight));
      }
      if (bad) break;
      try {
        adam_step(registry, adam, train_config.learning_rate);
      } catch (const NumericalError&) {
        bad = true;
      }
    }
    if (bad) {
      result.diverged = true;
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_cmse = loss_sum / static_cast<double>(order.size());
    rec.val_cmse = validation_cmse(val_windows, params, config, plan);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!std::isfinite(rec.val_cmse)) {
      result.diverged = true;
      break;
    }
    if (rec.val_cmse < result.best_val_cmse) {
      result.best_val_cmse = rec.val_cmse;
      result.best_epoch = epoch;
      result.params = params.clone();
      stale = 0;
    } else if (++stale >= train_config.patience) {
      break;
    }
  }
  for (const auto& t : result.params.registry()) t.value.impl()->grad.clear();
  return result;
}

}  // namespace ctf::train
