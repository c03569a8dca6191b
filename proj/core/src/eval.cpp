#include "ctf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "ctf/error.hpp"

namespace ctf::eval {

Scenario Scenario::clean() { return {}; }

Scenario Scenario::with_missing(data::MissingProtocol protocol, double ratio) {
  Scenario s;
  s.kind = ScenarioKind::missing;
  s.missing.protocol = protocol;
  s.missing.ratio = ratio;
  return s;
}

std::string Scenario::label() const {
  std::string out = "clean";
  if (kind == ScenarioKind::missing) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "missing_%s_m%.3f", data::protocol_name(missing.protocol),
                  missing.ratio);
    out = buf;
  }
  if (input_length) out += "_L" + std::to_string(*input_length);
  return out;
}

namespace {

data::WindowSample prepare_window(const data::WindowSample& w, const PatchPlan& plan,
                                  const EvalOptions& options) {
  data::WindowSample out = w;
  if (options.scenario.input_length) out = data::truncate_input(out, *options.scenario.input_length);
  if (options.scenario.kind == ScenarioKind::missing)
    out = data::inject_block_missing(out, plan, options.scenario.missing, options.seed);
  return out;
}

struct Scored {
  WindowMetrics metrics;
  train::Series forecast;
  train::Series target;
};

Scored score_window(const data::AsyncDataset& ds, const data::WindowSample& w,
                    const train::Series& pred, bool normalized) {
  if (pred.size() != w.num_channels()) {
    throw ContractError("evaluate: predictor returned " + std::to_string(pred.size()) +
                        " channels for " + std::to_string(w.num_channels()));
  }
  Scored s;
  s.metrics.origin = w.origin;
  for (std::size_t i = 0; i < w.num_channels(); ++i) {
    auto y = w.channels[i].target;
    auto p = pred[i];
    if (!normalized) {
      for (auto& v : y) v = data::denormalize_value(ds.stats, i, v);
      for (auto& v : p) v = data::denormalize_value(ds.stats, i, v);
    }
    s.target.push_back(std::move(y));
    s.forecast.push_back(std::move(p));
  }
  s.metrics.cmse = train::cmse(s.target, s.forecast);
  s.metrics.cmae = train::cmae(s.target, s.forecast);
  for (std::size_t i = 0; i < w.num_channels(); ++i) {
    train::Series y{s.target[i]}, p{s.forecast[i]};
    s.metrics.mse.push_back(train::cmse(y, p));
    s.metrics.mae.push_back(train::cmae(y, p));
  }
  return s;
}

}  // namespace

Report evaluate_predictor(const data::AsyncDataset& ds, std::size_t input_length,
                          std::size_t horizon, const PatchPlan& plan, const Predictor& predictor,
                          const EvalOptions& options) {
  if (options.scenario.input_length) {
    const std::size_t lp = *options.scenario.input_length;
    const std::size_t rmax = ds.max_factor();
    if (lp == 0 || lp > input_length || lp % rmax != 0) {
      throw ConfigError("input length " + std::to_string(lp) + " must be a positive multiple of " +
                        std::to_string(rmax) + " no larger than " + std::to_string(input_length));
    }
  }
  data::WindowOptions wo;
  wo.input_length = input_length;
  wo.horizon = horizon;
  const auto windows = data::make_windows(ds, data::Split::test, wo);
  if (windows.empty()) throw ConfigError("evaluate: test split holds no complete window");

  std::vector<Scored> scored(windows.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    NoGradGuard no_grad;
    for (std::size_t k = begin; k < windows.size(); k += step) {
      const auto w = prepare_window(windows[k], plan, options);
      scored[k] = score_window(ds, windows[k], predictor(w), options.normalized);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, windows.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  Report r;
  r.scenario = options.scenario.label();
  r.normalized = options.normalized;
  r.windows = windows.size();
  const std::size_t n = ds.num_channels();
  r.channels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.channels[i].name = ds.channels[i].name;
    r.channels[i].factor = ds.channels[i].sampling_factor;
  }
  for (auto& s : scored) {
    for (std::size_t i = 0; i < n; ++i) {
      r.channels[i].mse += s.metrics.mse[i];
      r.channels[i].mae += s.metrics.mae[i];
    }
    r.per_window.push_back(std::move(s.metrics));
    if (options.keep_forecasts) {
      r.forecasts.push_back(std::move(s.forecast));
      r.targets.push_back(std::move(s.target));
    }
  }
  const double count = static_cast<double>(windows.size());
  for (auto& c : r.channels) {
    c.mse /= count;
    c.mae /= count;
    r.cmse += c.mse;
    r.cmae += c.mae;
  }
  r.cmse /= static_cast<double>(n);
  r.cmae /= static_cast<double>(n);
  return r;
}

Report evaluate(const data::AsyncDataset& ds, const model::ModelParams& params,
                const model::ModelConfig& config, const PatchPlan& plan,
                const EvalOptions& options) {
  Predictor predictor = [&](const data::WindowSample& w) {
    auto out = model::forward(w, params, config, plan);
    train::Series s;
    for (const auto& p : out.predictions) s.push_back(p.to_vector());
    return s;
  };
  return evaluate_predictor(ds, config.input_length, config.horizon, plan, predictor, options);
}

BaselineReports naive_baselines(const data::AsyncDataset& ds, std::size_t input_length,
                                std::size_t horizon, bool normalized) {
  PatchPlan unused;
  EvalOptions opts;
  opts.normalized = normalized;
  BaselineReports out;
  out.mean = evaluate_predictor(
      ds, input_length, horizon, unused,
      [&](const data::WindowSample& w) {
        train::Series s;
        for (std::size_t i = 0; i < w.num_channels(); ++i) {
          const double z = data::normalize_value(ds.stats, i, ds.stats.mean[i]);
          s.emplace_back(w.channels[i].target.size(), z);
        }
        return s;
      },
      opts);
  out.mean.scenario = "baseline_mean";
  out.persistence = evaluate_predictor(
      ds, input_length, horizon, unused,
      [](const data::WindowSample& w) {
        train::Series s;
        for (const auto& c : w.channels) {
          double last = 0.0;
          for (std::size_t k = 0; k < c.input.size(); ++k)
            if (c.observed[k]) last = c.input[k];
          s.emplace_back(c.target.size(), last);
        }
        return s;
      },
      opts);
  out.persistence.scenario = "baseline_persistence";
  return out;
}

FrequencyBias frequency_bias_report(const std::vector<train::Series>& predictions,
                                    const std::vector<train::Series>& targets,
                                    std::span<const std::size_t> factors) {
  if (predictions.size() != targets.size() || targets.empty()) {
    throw ContractError("frequency_bias_report: " + std::to_string(predictions.size()) +
                        " forecasts for " + std::to_string(targets.size()) + " targets");
  }
  FrequencyBias fb;
  fb.windows = targets.size();
  const std::size_t n = factors.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t h = targets.front().at(i).size();
    (h < kMinSpectralHorizon ? fb.skipped_channels : fb.analyzed_channels).push_back(i);
  }
  if (fb.analyzed_channels.empty()) return fb;

  for (std::size_t i : fb.analyzed_channels) {
    double diff = 0.0, low = 0.0, mid = 0.0, high = 0.0;
    for (std::size_t w = 0; w < targets.size(); ++w) {
      const auto& y = targets[w].at(i);
      const auto& p = predictions[w].at(i);
      if (y.size() != p.size()) {
        throw ContractError("frequency_bias_report: horizon mismatch in channel " +
                            std::to_string(i));
      }
      const auto sy = spectral::amplitude_spectrum(spectral::zero_centered(y));
      const auto sp = spectral::amplitude_spectrum(spectral::zero_centered(p));
      const double by = static_cast<double>(spectral::argmax_bin(sy).value_or(0));
      const double bp = static_cast<double>(spectral::argmax_bin(sp).value_or(0));
      diff += std::fabs(by - bp) / (static_cast<double>(y.size() * factors[i]));
      low += spectral::band_rmse(sp, sy, spectral::kLowBand);
      mid += spectral::band_rmse(sp, sy, spectral::kMidBand);
      high += spectral::band_rmse(sp, sy, spectral::kHighBand);
    }
    const double count = static_cast<double>(targets.size());
    fb.dominant_freq_diff += diff / count;
    fb.band_rmse_low += low / count;
    fb.band_rmse_mid += mid / count;
    fb.band_rmse_high += high / count;
  }
  const double channels = static_cast<double>(fb.analyzed_channels.size());
  fb.dominant_freq_diff /= channels;
  fb.band_rmse_low /= channels;
  fb.band_rmse_mid /= channels;
  fb.band_rmse_high /= channels;
  return fb;
}

nlohmann::json to_json(const Report& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["units"] = r.normalized ? "normalized" : "raw";
  j["windows"] = r.windows;
  j["cmse"] = r.cmse;
  j["cmae"] = r.cmae;
  j["channels"] = nlohmann::json::array();
  for (const auto& c : r.channels)
    j["channels"].push_back(
        {{"name", c.name}, {"sampling_factor", c.factor}, {"mse", c.mse}, {"mae", c.mae}});
  return j;
}

nlohmann::json to_json(const FrequencyBias& f) {
  return {{"dominant_freq_diff", f.dominant_freq_diff},
          {"dominant_freq_units", "cycles per fine step"},
          {"band_rmse", {{"low", f.band_rmse_low}, {"mid", f.band_rmse_mid}, {"high", f.band_rmse_high}}},
          {"windows", f.windows},
          {"analyzed_channels", f.analyzed_channels},
          {"skipped_channels", f.skipped_channels},
          {"aggregation", f.aggregation}};
}

std::string per_window_csv(const Report& r) {
  std::ostringstream os;
  os << "origin,cmse,cmae";
  for (const auto& c : r.channels) os << ',' << c.name << "_mse," << c.name << "_mae";
  os << '\n';
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& w : r.per_window) {
    os << w.origin << ',' << num(w.cmse) << ',' << num(w.cmae);
    for (std::size_t i = 0; i < w.mse.size(); ++i) os << ',' << num(w.mse[i]) << ',' << num(w.mae[i]);
    os << '\n';
  }
  return os.str();
}

}  // namespace ctf::eval
