#include "ctf/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ctf/attnmask.hpp"
#include "ctf/error.hpp"

namespace ctf::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
  if (!out) throw ConfigError("write failed for " + path.string());
}

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": malformed JSON");
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_cell(const std::string& cell, const std::string& where) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": not a number: '" + cell + "'");
  }
}

// Field access with a dotted path in every diagnostic.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  std::string where(const char* key) const { return path_ + "." + key; }

  const json& raw(const char* key) const {
    if (!j_.contains(key)) throw ConfigError(where(key) + ": missing required field");
    return j_.at(key);
  }

  std::string str(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    return v.get<std::string>();
  }

  double num(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    return v.get<double>();
  }

  std::size_t count(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(where(key) + ": expected a non-negative integer");
    return v.get<std::size_t>();
  }

  bool flag(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    return v.get<bool>();
  }

  void only(std::initializer_list<const char*> keys) const {
    for (const auto& [k, v] : j_.items()) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
        throw ConfigError(path_ + "." + k + ": unknown field");
    }
  }

  template <typename T, typename Get>
  void opt(const char* key, T& out, Get get) const {
    if (has(key)) out = (this->*get)(key);
  }

 private:
  const json& j_;
  std::string path_;
};

}  // namespace

std::string dense_to_csv(const data::DenseSeries& s) {
  std::string out = "step";
  for (const auto& n : s.names) out += "," + n;
  out += '\n';
  for (std::size_t t = 0; t < s.steps; ++t) {
    out += std::to_string(t);
    for (const auto& col : s.columns) {
      out += ',';
      if (!std::isnan(col[t])) out += format_double(col[t]);
    }
    out += '\n';
  }
  return out;
}

data::DenseSeries dense_from_csv(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw ConfigError(origin + ":1: empty file");
  auto header = split_csv_line(strip_cr(line));
  if (header.size() < 2) throw ConfigError(origin + ":1: need a step column and one channel");
  data::DenseSeries s;
  s.names.assign(header.begin() + 1, header.end());
  s.columns.resize(s.names.size());
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    const std::string where = origin + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) {
      throw ConfigError(where + ": expected " + std::to_string(header.size()) + " cells, found " +
                        std::to_string(cells.size()));
    }
    const double step = parse_cell(cells[0], where);
    if (step != static_cast<double>(s.steps)) {
      throw ConfigError(where + ": step " + cells[0] + " out of sequence, expected " +
                        std::to_string(s.steps));
    }
    for (std::size_t c = 1; c < cells.size(); ++c)
      s.columns[c - 1].push_back(parse_cell(cells[c], where));
    ++s.steps;
  }
  return s;
}

Manifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  const json j = parse_json(text, "manifest");
  Fields f(j, "manifest");
  f.only({"name", "base_period_seconds", "csv", "synthetic", "channels", "splits", "phase_offset"});
  Manifest m;
  m.name = f.str("name");
  if (f.has("base_period_seconds")) m.base_period_seconds = f.num("base_period_seconds");
  if (f.has("phase_offset")) m.phase_offset = f.count("phase_offset");
  if (f.has("csv") == f.has("synthetic"))
    throw ConfigError("manifest: exactly one of 'csv' or 'synthetic' must be given");
  if (f.has("csv")) m.csv = base_dir / f.str("csv");
  if (f.has("synthetic")) {
    Fields s(f.raw("synthetic"), "manifest.synthetic");
    s.only({"n_channels", "base_len", "coupling", "noise_sd", "seed", "lag"});
    SynthSpec spec;
    if (s.has("n_channels")) spec.n_channels = s.count("n_channels");
    if (s.has("base_len")) spec.base_len = s.count("base_len");
    if (s.has("coupling")) spec.coupling = s.num("coupling");
    if (s.has("noise_sd")) spec.noise_sd = s.num("noise_sd");
    if (s.has("seed")) spec.seed = s.count("seed");
    if (s.has("lag")) spec.lag = s.count("lag");
    if (spec.n_channels == 0 || spec.base_len == 0)
      throw ConfigError("manifest.synthetic: n_channels and base_len must be positive");
    if (!(spec.coupling >= 0.0 && spec.coupling <= 1.0))
      throw ConfigError("manifest.synthetic.coupling: must lie in [0, 1]");
    m.synthetic = spec;
  }
  const auto& chans = f.raw("channels");
  if (!chans.is_array() || chans.empty())
    throw ConfigError("manifest.channels: expected a non-empty array");
  for (std::size_t i = 0; i < chans.size(); ++i) {
    Fields c(chans[i], "manifest.channels[" + std::to_string(i) + "]");
    c.only({"name", "column", "sampling_factor"});
    ManifestChannel mc;
    mc.name = c.str("name");
    mc.column = c.has("column") ? c.str("column") : mc.name;
    mc.sampling_factor = c.count("sampling_factor");
    if (mc.sampling_factor < 1) throw ConfigError(c.where("sampling_factor") + ": must be >= 1");
    m.channels.push_back(mc);
  }
  if (std::none_of(m.channels.begin(), m.channels.end(),
                   [](const ManifestChannel& c) { return c.sampling_factor == 1; }))
    throw ConfigError("manifest.channels: at least one channel needs sampling_factor 1");
  if (f.has("splits")) {
    Fields s(f.raw("splits"), "manifest.splits");
    s.only({"train", "val", "test"});
    m.splits.train = s.num("train");
    m.splits.val = s.num("val");
    m.splits.test = s.num("test");
    if (m.splits.train <= 0.0 || m.splits.val < 0.0 || m.splits.test < 0.0 ||
        std::fabs(m.splits.train + m.splits.val + m.splits.test - 1.0) > 1e-9)
      throw ConfigError("manifest.splits: fractions must be non-negative, train > 0, sum to 1");
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  try {
    return parse_manifest(read_file(path), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

data::AsyncDataset build_dataset(const Manifest& m) {
  data::DenseSeries dense;
  if (m.synthetic) {
    data::SynthOptions so;
    so.lag = m.synthetic->lag;
    dense = data::synth_coupled_dense(m.synthetic->n_channels, m.synthetic->base_len,
                                      m.synthetic->coupling, m.synthetic->noise_sd,
                                      m.synthetic->seed, so);
  } else {
    dense = dense_from_csv(read_file(*m.csv), m.csv->string());
  }
  data::DenseSeries picked;
  picked.steps = dense.steps;
  std::vector<std::size_t> factors;
  for (std::size_t i = 0; i < m.channels.size(); ++i) {
    const auto& c = m.channels[i];
    auto it = std::find(dense.names.begin(), dense.names.end(), c.column);
    if (it == dense.names.end()) {
      throw ConfigError("manifest.channels[" + std::to_string(i) + "].column: no column '" +
                        c.column + "' in the source data");
    }
    picked.names.push_back(c.name);
    picked.columns.push_back(dense.columns[static_cast<std::size_t>(it - dense.names.begin())]);
    factors.push_back(c.sampling_factor);
  }
  data::ResampleOptions ro;
  ro.fractions = m.splits;
  ro.phase_offset = m.phase_offset;
  auto ds = data::resample_practical(picked, factors, ro);
  ds.name = m.name;
  return ds;
}

void write_prepared(const fs::path& dir, const data::AsyncDataset& ds, const Manifest& m) {
  json meta;
  meta["name"] = ds.name;
  meta["base_period_seconds"] = m.base_period_seconds;
  meta["base_len"] = ds.base_len;
  meta["phase_offset"] = ds.phase_offset;
  meta["splits"] = {{"train_end", ds.splits.train_end},
                    {"val_end", ds.splits.val_end},
                    {"fractions", {{"train", m.splits.train}, {"val", m.splits.val}, {"test", m.splits.test}}}};
  meta["channels"] = json::array();
  for (std::size_t i = 0; i < ds.num_channels(); ++i) {
    const auto& c = ds.channels[i];
    const std::string file = "channels/" + c.name + ".csv";
    meta["channels"].push_back({{"name", c.name},
                                {"sampling_factor", c.sampling_factor},
                                {"length", ds.values[i].size()},
                                {"file", file},
                                {"mean", ds.stats.mean[i]},
                                {"std", ds.stats.std[i]}});
    std::string csv = "index,fine_step,value\n";
    for (std::size_t k = 0; k < ds.values[i].size(); ++k) {
      csv += std::to_string(k) + "," + std::to_string(ds.fine_time(i, k)) + ",";
      if (ds.observed[i][k]) csv += format_double(ds.values[i][k]);
      csv += '\n';
    }
    write_file(dir / file, csv);
  }
  write_file(dir / "dataset.json", meta.dump(2) + "\n");
}

data::AsyncDataset load_prepared(const fs::path& dir) {
  const auto path = dir / "dataset.json";
  const json meta = parse_json(read_file(path), path.string());
  Fields f(meta, "dataset");
  data::AsyncDataset ds;
  ds.name = f.str("name");
  ds.base_len = f.count("base_len");
  ds.phase_offset = f.count("phase_offset");
  Fields sp(f.raw("splits"), "dataset.splits");
  ds.splits.train_end = sp.count("train_end");
  ds.splits.val_end = sp.count("val_end");
  const auto& chans = f.raw("channels");
  for (std::size_t i = 0; i < chans.size(); ++i) {
    Fields c(chans[i], "dataset.channels[" + std::to_string(i) + "]");
    data::ChannelSpec spec;
    spec.name = c.str("name");
    spec.sampling_factor = c.count("sampling_factor");
    spec.index = i;
    const std::size_t len = c.count("length");
    const auto file = dir / c.str("file");
    const auto text = read_file(file);
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    std::vector<double> vals;
    data::Mask obs;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      const std::string where = file.string() + ":" + std::to_string(lineno);
      if (cells.size() != 3) throw ConfigError(where + ": expected 3 cells");
      const double v = parse_cell(cells[2], where);
      obs.push_back(std::isnan(v) ? 0 : 1);
      vals.push_back(std::isnan(v) ? 0.0 : v);
    }
    if (vals.size() != len) {
      throw ConfigError(file.string() + ": holds " + std::to_string(vals.size()) +
                        " samples, dataset.json declares " + std::to_string(len));
    }
    ds.channels.push_back(spec);
    ds.values.push_back(std::move(vals));
    ds.observed.push_back(std::move(obs));
    ds.stats.mean.push_back(c.num("mean"));
    ds.stats.std.push_back(c.num("std"));
  }
  if (ds.channels.empty()) throw ConfigError(path.string() + ": no channels");
  return ds;
}

json plan_to_json(const PatchPlan& plan) {
  json j = json::array();
  for (const auto& c : plan.channels)
    j.push_back({{"patch_length", c.length}, {"patch_count", c.count}, {"dropped", c.dropped}});
  return {{"channels", j}};
}

PatchPlan plan_from_json(const json& j) {
  Fields f(j, "patch_plan");
  f.only({"channels"});
  PatchPlan plan;
  const auto& chans = f.raw("channels");
  if (!chans.is_array()) throw ConfigError("patch_plan.channels: expected an array");
  for (std::size_t i = 0; i < chans.size(); ++i) {
    Fields c(chans[i], "patch_plan.channels[" + std::to_string(i) + "]");
    c.only({"patch_length", "patch_count", "dropped"});
    ChannelPatches p;
    p.length = c.count("patch_length");
    p.count = c.count("patch_count");
    p.dropped = c.count("dropped");
    if (p.length < 1 || p.count < 1) {
      throw ConfigError(c.where("patch_length") + ": patch length and count must be >= 1");
    }
    plan.channels.push_back(p);
  }
  return plan;
}

json config_to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return {{"model",
           {{"d_model", m.d_model},
            {"n_heads", m.n_heads},
            {"n_blocks", m.n_blocks},
            {"ff_ratio", m.ff_ratio},
            {"channel_tokens", m.channel_tokens},
            {"mask_strategy", attnmask::strategy_name(m.mask_strategy)},
            {"use_channel_embedding", m.use_channel_embedding},
            {"dropout_ratio", m.dropout_ratio},
            {"patch_masking", m.patch_masking},
            {"dynamic_patching", m.dynamic_patching},
            {"kappa", m.kappa},
            {"base_patch_length", m.base_patch_length},
            {"input_length", m.input_length},
            {"horizon", m.horizon}}},
          {"train",
           {{"learning_rate", t.learning_rate},
            {"max_epochs", t.max_epochs},
            {"patience", t.patience},
            {"batch_size", t.batch_size},
            {"train_stride", t.train_stride},
            {"val_stride", t.val_stride},
            {"seed", t.seed}}},
          {"ablations", c.ablations}};
}

RunConfig config_from_json(const json& j) {
  Fields f(j, "config");
  f.only({"model", "train", "ablations"});
  RunConfig c;
  if (f.has("model")) {
    Fields m(f.raw("model"), "config.model");
    m.only({"d_model", "n_heads", "n_blocks", "ff_ratio", "channel_tokens", "mask_strategy",
            "use_channel_embedding", "dropout_ratio", "patch_masking", "dynamic_patching", "kappa",
            "base_patch_length", "input_length", "horizon"});
    auto& mc = c.model;
    m.opt("d_model", mc.d_model, &Fields::count);
    m.opt("n_heads", mc.n_heads, &Fields::count);
    m.opt("n_blocks", mc.n_blocks, &Fields::count);
    m.opt("ff_ratio", mc.ff_ratio, &Fields::count);
    m.opt("channel_tokens", mc.channel_tokens, &Fields::count);
    if (m.has("mask_strategy")) {
      try {
        mc.mask_strategy = attnmask::parse_strategy(m.str("mask_strategy"));
      } catch (const ConfigError& e) {
        throw ConfigError(m.where("mask_strategy") + ": " + e.what());
      }
    }
    m.opt("use_channel_embedding", mc.use_channel_embedding, &Fields::flag);
    m.opt("dropout_ratio", mc.dropout_ratio, &Fields::num);
    m.opt("patch_masking", mc.patch_masking, &Fields::flag);
    m.opt("dynamic_patching", mc.dynamic_patching, &Fields::flag);
    m.opt("kappa", mc.kappa, &Fields::num);
    m.opt("base_patch_length", mc.base_patch_length, &Fields::count);
    m.opt("input_length", mc.input_length, &Fields::count);
    m.opt("horizon", mc.horizon, &Fields::count);
  }
  if (f.has("train")) {
    Fields t(f.raw("train"), "config.train");
    t.only({"learning_rate", "max_epochs", "patience", "batch_size", "train_stride", "val_stride",
            "seed"});
    auto& tc = c.train;
    t.opt("learning_rate", tc.learning_rate, &Fields::num);
    t.opt("max_epochs", tc.max_epochs, &Fields::count);
    t.opt("patience", tc.patience, &Fields::count);
    t.opt("batch_size", tc.batch_size, &Fields::count);
    t.opt("train_stride", tc.train_stride, &Fields::count);
    t.opt("val_stride", tc.val_stride, &Fields::count);
    if (t.has("seed")) tc.seed = t.count("seed");
  }
  if (f.has("ablations")) {
    const auto& a = f.raw("ablations");
    if (!a.is_array()) throw ConfigError("config.ablations: expected an array of names");
    for (const auto& v : a) {
      if (!v.is_string()) throw ConfigError("config.ablations: expected an array of names");
      model::parse_ablation(v.get<std::string>());
      c.ablations.push_back(v.get<std::string>());
    }
  }
  c.model.validate();
  c.train.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  try {
    return config_from_json(parse_json(read_file(path), "config"));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace ctf::io
