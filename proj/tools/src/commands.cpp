#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>

#include "ctf/error.hpp"
#include "ctf/eval.hpp"
#include "ctf/io.hpp"
#include "ctf/model.hpp"
#include "ctf/patching.hpp"
#include "ctf/spectral.hpp"
#include "ctf/train.hpp"
#include "svg.hpp"

namespace ctf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CTF_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("CTF_SEED: not an unsigned integer: '") + s + "'");
  }
}

std::vector<std::size_t> dataset_factors(const data::AsyncDataset& ds) { return ds.factors(); }

PatchPlan preview_plan(const data::AsyncDataset& ds, const model::ModelConfig& mc) {
  data::check_window_alignment(mc.input_length, mc.horizon, ds.max_factor());
  return patching::plan_for_dataset(ds, mc.input_length, mc.plan_options());
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string manifest;
  std::string out_dir;
  std::string config;
  std::vector<std::string> dump_splits;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  const auto manifest = io::load_manifest(a.manifest);
  const auto ds = io::build_dataset(manifest);
  const fs::path dir = a.out_dir;
  io::write_prepared(dir, ds, manifest);

  io::RunConfig rc;
  if (!a.config.empty()) rc = io::load_config(a.config);
  const auto plan = preview_plan(ds, rc.model);
  json preview = io::plan_to_json(plan);
  preview["input_length"] = rc.model.input_length;
  io::write_file(dir / "patch_plan.json", preview.dump(2) + "\n");

  for (const auto& name : a.dump_splits) {
    const auto split = data::parse_split(name);
    const auto [lo, hi] = ds.split_range(split);
    data::DenseSeries dense;
    dense.steps = hi - lo;
    for (std::size_t i = 0; i < ds.num_channels(); ++i) {
      dense.names.push_back(ds.channels[i].name);
      std::vector<double> col(dense.steps, std::numeric_limits<double>::quiet_NaN());
      for (std::size_t k = 0; k < ds.values[i].size(); ++k) {
        const std::size_t t = ds.fine_time(i, k);
        if (t >= lo && t < hi && ds.observed[i][k]) col[t - lo] = ds.values[i][k];
      }
      dense.columns.push_back(std::move(col));
    }
    io::write_file(dir / "splits" / (name + ".csv"), io::dense_to_csv(dense));
  }

  out << "prepared " << ds.name << " (" << ds.num_channels() << " channels, " << ds.base_len
      << " fine steps) in " << dir.string() << "\n";
  out << "channel              r   samples   patch_len  patches\n";
  for (std::size_t i = 0; i < ds.num_channels(); ++i) {
    char line[128];
    std::snprintf(line, sizeof line, "%-18s %3zu %9zu %11zu %8zu\n", ds.channels[i].name.c_str(),
                  ds.channels[i].sampling_factor, ds.values[i].size(), plan.channels[i].length,
                  plan.channels[i].count);
    out << line;
  }
  return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string dataset;
  std::string run_dir;
  std::string config;
  std::optional<std::string> mask_strategy;
  std::optional<std::size_t> channel_tokens;
  std::optional<double> dropout_ratio;
  std::vector<std::string> ablate;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
};

io::RunConfig resolve_config(const TrainArgs& a) {
  io::RunConfig rc;
  if (!a.config.empty()) rc = io::load_config(a.config);
  if (a.mask_strategy) rc.model.mask_strategy = attnmask::parse_strategy(*a.mask_strategy);
  if (a.channel_tokens) rc.model.channel_tokens = *a.channel_tokens;
  if (a.dropout_ratio) rc.model.dropout_ratio = *a.dropout_ratio;
  if (a.max_epochs) rc.train.max_epochs = *a.max_epochs;
  if (auto s = env_seed()) rc.train.seed = *s;
  if (a.seed) rc.train.seed = *a.seed;
  for (const auto& name : a.ablate) {
    model::parse_ablation(name);
    if (std::find(rc.ablations.begin(), rc.ablations.end(), name) == rc.ablations.end())
      rc.ablations.push_back(name);
  }
  for (const auto& name : rc.ablations) rc.model = model::ablate(rc.model, model::parse_ablation(name));
  rc.model.validate();
  rc.train.validate();
  return rc;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const fs::path run = a.run_dir;
  if (fs::exists(run / "checkpoint.bin")) {
    throw ConfigError(run.string() + " already holds a checkpoint; run directories are append-only");
  }
  const auto rc = resolve_config(a);
  const auto ds = io::load_prepared(a.dataset);
  const auto plan = preview_plan(ds, rc.model);

  fs::create_directories(run);
  json cfg = io::config_to_json(rc);
  io::write_file(run / "config.json", cfg.dump(2) + "\n");
  io::write_file(run / "seed", std::to_string(rc.train.seed) + "\n");
  io::write_file(run / "patch_plan.json", io::plan_to_json(plan).dump(2) + "\n");
  json meta{{"dataset", fs::absolute(a.dataset).lexically_normal().string()},
            {"sampling_factors", dataset_factors(ds)}};
  io::write_file(run / "run.json", meta.dump(2) + "\n");

  out << "epoch  train_cmse    val_cmse\n";
  std::string history = "epoch,train_cmse,val_cmse\n";
  auto result = train::fit_with_plan(ds, rc.model, rc.train, plan, [&](const train::EpochRecord& e) {
    char line[96];
    std::snprintf(line, sizeof line, "%5zu  %10.6f  %10.6f\n", e.epoch, e.train_cmse, e.val_cmse);
    out << line << std::flush;
    history += std::to_string(e.epoch) + "," + io::format_double(e.train_cmse) + "," +
               io::format_double(e.val_cmse) + "\n";
  });
  io::write_file(run / "history.csv", history);
  model::save_checkpoint((run / "checkpoint.bin").string(), result.params);
  json summary{{"best_epoch", result.best_epoch},
               {"best_val_cmse", result.best_val_cmse},
               {"epochs_run", result.history.size()},
               {"diverged", result.diverged},
               {"parameters", model::count_params(result.params)}};
  io::write_file(run / "summary.json", summary.dump(2) + "\n");
  if (result.diverged) {
    out << "training diverged; kept the last good checkpoint (epoch " << result.best_epoch << ")\n";
    return kExitNumerical;
  }
  out << "best epoch " << result.best_epoch << ", val CMSE " << fmt(result.best_val_cmse) << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string run_dir;
  std::string dataset;
  std::vector<double> ratios;
  std::string protocol = "patch_aligned";
  std::optional<std::size_t> input_length;
  std::optional<std::uint64_t> seed;
  bool normalized = false;
  std::size_t threads = 1;
};

fs::path next_eval_dir(const fs::path& run, const std::string& label) {
  std::size_t next = 1;
  if (fs::exists(run / "eval")) {
    for (const auto& e : fs::directory_iterator(run / "eval")) {
      const auto name = e.path().filename().string();
      try {
        next = std::max<std::size_t>(next, std::stoul(name.substr(0, 4)) + 1);
      } catch (const std::exception&) {
      }
    }
  }
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%04zu_", next);
  return run / "eval" / (prefix + label);
}

void write_plots(const fs::path& dir, const data::AsyncDataset& ds, const eval::Report& r) {
  if (r.forecasts.empty()) return;
  for (std::size_t i = 0; i < ds.num_channels(); ++i) {
    const auto& y = r.targets.front()[i];
    const auto& p = r.forecasts.front()[i];
    svg::Series truth{"truth", {}, y, kPalette[0]};
    svg::Series pred{"forecast", {}, p, kPalette[1]};
    for (std::size_t k = 0; k < y.size(); ++k) {
      const double t = static_cast<double>((k + 1) * ds.channels[i].sampling_factor);
      truth.x.push_back(t);
      pred.x.push_back(t);
    }
    svg::ChartOptions o;
    o.title = ds.channels[i].name + " (r=" + std::to_string(ds.channels[i].sampling_factor) +
              "), first test window, " + r.scenario;
    o.x_label = "fine steps ahead";
    o.y_label = r.normalized ? "value (z)" : "value";
    io::write_file(dir / "plots" / (ds.channels[i].name + ".svg"), svg::line_chart({truth, pred}, o));
  }
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const fs::path run = a.run_dir;
  const auto rc = io::config_from_json(io::parse_json(io::read_file(run / "config.json"), "config"));
  const auto meta = io::parse_json(io::read_file(run / "run.json"), "run");
  const std::string dataset_dir = a.dataset.empty() ? meta.at("dataset").get<std::string>() : a.dataset;
  const auto ds = io::load_prepared(dataset_dir);
  const auto plan = io::plan_from_json(io::parse_json(io::read_file(run / "patch_plan.json"), "patch_plan"));
  const auto trained = meta.at("sampling_factors").get<std::vector<std::size_t>>();
  if (trained != ds.factors()) {
    std::string got;
    for (auto r : ds.factors()) got += (got.empty() ? "" : ",") + std::to_string(r);
    throw ConfigError("dataset sampling factors {" + got + "} do not match the trained run");
  }

  auto params = model::init_params(rc.model, plan, ds.factors(), rc.train.seed);
  model::load_checkpoint((run / "checkpoint.bin").string(), params);

  std::uint64_t seed = rc.train.seed;
  if (auto s = env_seed()) seed = *s;
  if (a.seed) seed = *a.seed;
  const auto protocol = data::parse_protocol(a.protocol);

  std::vector<eval::Scenario> scenarios;
  if (a.ratios.empty()) {
    scenarios.push_back(eval::Scenario::clean());
  } else {
    for (double m : a.ratios) {
      if (!(m >= 0.0 && m < 1.0)) throw ConfigError("--missing-ratio must lie in [0, 1)");
      scenarios.push_back(m == 0.0 ? eval::Scenario::clean() : eval::Scenario::with_missing(protocol, m));
    }
  }
  if (a.input_length) {
    const std::size_t rmax = ds.max_factor();
    if (*a.input_length == 0 || *a.input_length % rmax != 0 || *a.input_length > rc.model.input_length) {
      throw ConfigError("--input-length must be a positive multiple of " + std::to_string(rmax) +
                        " no larger than the trained input length " +
                        std::to_string(rc.model.input_length));
    }
    for (auto& s : scenarios) s.input_length = a.input_length;
  }

  const auto baselines = eval::naive_baselines(ds, rc.model.input_length, rc.model.horizon, a.normalized);
  out << "scenario                               windows        cmse        cmae\n";
  for (const auto& sc : scenarios) {
    eval::EvalOptions o;
    o.scenario = sc;
    o.seed = seed;
    o.normalized = a.normalized;
    o.threads = a.threads;
    o.keep_forecasts = true;
    const auto report = eval::evaluate(ds, params, rc.model, plan, o);
    const auto bias = eval::frequency_bias_report(report.forecasts, report.targets, ds.factors());

    const auto dir = next_eval_dir(run, sc.label());
    json j = eval::to_json(report);
    j["frequency_bias"] = eval::to_json(bias);
    j["baselines"] = {{"mean", eval::to_json(baselines.mean)},
                      {"persistence", eval::to_json(baselines.persistence)}};
    j["seed"] = seed;
    j["protocol"] = data::protocol_name(protocol);
    io::write_file(dir / "report.json", j.dump(2) + "\n");
    io::write_file(dir / "windows.csv", eval::per_window_csv(report));
    write_plots(dir, ds, report);

    char line[160];
    std::snprintf(line, sizeof line, "%-36s %8zu %11.6f %11.6f\n", report.scenario.c_str(),
                  report.windows, report.cmse, report.cmae);
    out << line;
  }
  char line[160];
  std::snprintf(line, sizeof line, "%-36s %8zu %11.6f %11.6f\n", "baseline_mean",
                baselines.mean.windows, baselines.mean.cmse, baselines.mean.cmae);
  out << line;
  std::snprintf(line, sizeof line, "%-36s %8zu %11.6f %11.6f\n", "baseline_persistence",
                baselines.persistence.windows, baselines.persistence.cmse,
                baselines.persistence.cmae);
  out << line;
  return kExitOk;
}

// --------------------------------------------------------------- spectral

struct SpectralArgs {
  std::string dataset;
  std::string channel;
  std::size_t factor = 4;
  std::size_t length = 256;
  std::string out_dir;
};

int cmd_spectral(const SpectralArgs& a, std::ostream& out) {
  const auto ds = io::load_prepared(a.dataset);
  std::size_t ch = ds.num_channels();
  for (std::size_t i = 0; i < ds.num_channels(); ++i)
    if (ds.channels[i].name == a.channel) ch = i;
  if (ch == ds.num_channels()) {
    try {
      std::size_t used = 0;
      ch = std::stoul(a.channel, &used);
      if (used != a.channel.size()) ch = ds.num_channels();
    } catch (const std::exception&) {
    }
  }
  if (ch >= ds.num_channels()) throw ConfigError("unknown channel '" + a.channel + "'");
  if (a.factor < 1) throw ConfigError("--factor must be >= 1");

  const auto& vals = ds.values[ch];
  const auto& obs = ds.observed[ch];
  std::size_t n = std::min(a.length, vals.size());
  n -= n % a.factor;
  if (n < 2 * a.factor) {
    throw ConfigError("channel '" + ds.channels[ch].name + "' holds too few samples for factor " +
                      std::to_string(a.factor));
  }
  for (std::size_t k = 0; k < n; ++k)
    if (!obs[k]) throw ConfigError("channel segment contains unobserved samples; choose a shorter --length");
  const std::vector<double> x(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(n));
  const auto rep = spectral::interp_distortion_report(x, a.factor);

  const fs::path dir = a.out_dir.empty()
                           ? fs::path(a.dataset) / "spectral" /
                                 (ds.channels[ch].name + "_r" + std::to_string(a.factor))
                           : fs::path(a.out_dir);
  std::string csv = "bin,frequency,original_amplitude,interpolated_amplitude,attenuation,phase_delay,sinc2_reference\n";
  svg::Series att{"attenuation", {}, {}, kPalette[0]};
  svg::Series ref{"sinc^2 reference", {}, {}, kPalette[2]};
  svg::Series phase{"phase delay (rad)", {}, {}, kPalette[1]};
  for (std::size_t k = 0; k < rep.attenuation.size(); ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(n);
    csv += std::to_string(k) + "," + io::format_double(f) + "," +
           io::format_double(rep.original_amplitude[k]) + "," +
           io::format_double(rep.interpolated_amplitude[k]) + "," +
           io::format_double(rep.attenuation[k]) + "," + io::format_double(rep.phase_delay[k]) +
           "," + io::format_double(rep.sinc2_reference[k]) + "\n";
    att.x.push_back(f);
    att.y.push_back(rep.attenuation[k]);
    ref.x.push_back(f);
    ref.y.push_back(rep.sinc2_reference[k]);
    phase.x.push_back(f);
    phase.y.push_back(rep.phase_delay[k]);
  }
  io::write_file(dir / "distortion.csv", csv);
  svg::ChartOptions o;
  o.title = ds.channels[ch].name + ": linear interpolation at r=" + std::to_string(a.factor);
  o.x_label = "frequency (cycles per sample)";
  o.y_label = "ratio / radians";
  io::write_file(dir / "distortion.svg", svg::line_chart({att, ref, phase}, o));
  out << "wrote " << (dir / "distortion.csv").string() << " and distortion.svg (" << rep.attenuation.size()
      << " bins)\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ChannelTokenFormer forecasting toolkit"};
  app.name("ctf");
  app.require_subcommand(1);

  PrepareArgs pa;
  auto* prep = app.add_subcommand("prepare", "Build a practical asynchronous dataset from a manifest");
  prep->add_option("manifest", pa.manifest, "Dataset manifest (JSON)")->required();
  prep->add_option("out_dir", pa.out_dir, "Output dataset directory")->required();
  prep->add_option("--config", pa.config, "Run config used for the patch plan preview");
  prep->add_option("--dump-split", pa.dump_splits, "Also write a split as fine-grid CSV")
      ->check(CLI::IsMember({"train", "val", "test"}));

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model and write a run directory");
  tr->add_option("dataset", ta.dataset, "Prepared dataset directory")->required();
  tr->add_option("run_dir", ta.run_dir, "New run directory")->required();
  tr->add_option("--config", ta.config, "Run config (JSON)");
  tr->add_option("--mask-strategy", ta.mask_strategy, "Attention mask strategy");
  tr->add_option("--channel-tokens", ta.channel_tokens, "Channel tokens per channel");
  tr->add_option("--dropout-ratio", ta.dropout_ratio, "Training patch masking ratio");
  tr->add_option("--ablate", ta.ablate, "Ablation toggle (repeatable)");
  tr->add_option("--seed", ta.seed, "Seed (overrides config and CTF_SEED)");
  tr->add_option("--max-epochs", ta.max_epochs, "Epoch limit");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a trained run on the test split");
  ev->add_option("run_dir", ea.run_dir, "Run directory")->required();
  ev->add_option("--dataset", ea.dataset, "Prepared dataset (default: the one used in training)");
  ev->add_option("--missing-ratio", ea.ratios, "Block-missing ratio m (repeatable or comma list)")
      ->delimiter(',');
  ev->add_option("--protocol", ea.protocol, "patch_aligned or short_range");
  ev->add_option("--input-length", ea.input_length, "Shorter test input length L'");
  ev->add_option("--seed", ea.seed, "Missing-block seed");
  ev->add_flag("--normalized", ea.normalized, "Report metrics in z-units");
  ev->add_option("--threads", ea.threads, "Worker threads")->check(CLI::PositiveNumber);

  SpectralArgs sa;
  auto* sp = app.add_subcommand("spectral", "Linear-interpolation distortion report for a channel");
  sp->add_option("dataset", sa.dataset, "Prepared dataset directory")->required();
  sp->add_option("--channel", sa.channel, "Channel name or index")->required();
  sp->add_option("--factor", sa.factor, "Subsampling factor r");
  sp->add_option("--length", sa.length, "Segment length in channel samples");
  sp->add_option("--out", sa.out_dir, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "ctf: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (prep->parsed()) return cmd_prepare(pa, out);
    if (tr->parsed()) return cmd_train(ta, out);
    if (ev->parsed()) return cmd_eval(ea, out);
    if (sp->parsed()) return cmd_spectral(sa, out);
  } catch (const NumericalError& e) {
    err << "ctf: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "ctf: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "ctf: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "ctf: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "ctf: malformed file: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "ctf: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ctf::cli
