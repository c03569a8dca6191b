#include "ctf/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "ctf/error.hpp"
#include "ctf/rng.hpp"

namespace ctf::model {

void ModelConfig::validate() const {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ConfigError("d_model must be a positive even number, got " + std::to_string(d_model));
  }
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (channel_tokens < 1) throw ConfigError("channel_tokens must be >= 1");
  if (ff_ratio < 1) throw ConfigError("ff_ratio must be >= 1");
  if (!(dropout_ratio >= 0.0 && dropout_ratio < 1.0)) {
    throw ConfigError("dropout_ratio must lie in [0, 1)");
  }
  if (input_length == 0 || horizon == 0) throw ConfigError("input_length and horizon must be > 0");
}

patching::PlanOptions ModelConfig::plan_options() const {
  patching::PlanOptions o;
  o.kappa = kappa;
  o.base_patch_length = base_patch_length;
  o.dynamic = dynamic_patching;
  return o;
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::no_channel_dependence: return "no_channel_dependence";
    case Ablation::no_dynamic_patching: return "no_dynamic_patching";
    case Ablation::no_patch_masking: return "no_patch_masking";
    case Ablation::no_channel_embedding: return "no_channel_embedding";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  for (auto a : {Ablation::no_channel_dependence, Ablation::no_dynamic_patching,
                 Ablation::no_patch_masking, Ablation::no_channel_embedding}) {
    if (ablation_name(a) == s) return a;
  }
  throw ConfigError("unknown ablation '" + s + "'");
}

ModelConfig ablate(ModelConfig config, Ablation toggle) {
  switch (toggle) {
    case Ablation::no_channel_dependence:
      config.mask_strategy = attnmask::channel_independent(config.mask_strategy);
      break;
    case Ablation::no_dynamic_patching:
      config.dynamic_patching = false;
      break;
    case Ablation::no_patch_masking:
      config.patch_masking = false;
      config.dropout_ratio = 0.0;
      break;
    case Ablation::no_channel_embedding:
      config.use_channel_embedding = false;
      break;
  }
  return config;
}

namespace {

Tensor uniform_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = bound * (2.0 * uniform01(rng) - 1.0);
  return Tensor::parameter({fan_in, fan_out}, std::move(v));
}

Tensor normal_param(Rng& rng, Shape shape, double sd) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sd * standard_normal(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor clone_tensor(const Tensor& t) {
  return Tensor(t.shape(), t.to_vector(), t.requires_grad());
}

}  // namespace

ModelParams init_params(const ModelConfig& config, const PatchPlan& plan,
                        std::span<const std::size_t> factors, std::uint64_t seed) {
  config.validate();
  if (factors.size() != plan.num_channels()) {
    throw ConfigError("init_params: " + std::to_string(factors.size()) + " sampling factors for " +
                      std::to_string(plan.num_channels()) + " planned channels");
  }
  Rng rng(derive_seed(seed, {0x1417}));
  const std::size_t d = config.d_model;
  const std::size_t C = config.channel_tokens;
  ModelParams p;
  p.bank.d_model = d;

  std::set<std::size_t> lengths;
  std::size_t max_patches = 1;
  for (const auto& c : plan.channels) {
    lengths.insert(c.length);
    max_patches = std::max(max_patches, c.count);
  }
  for (std::size_t len : lengths) {
    patching::PatchProjection proj;
    proj.weight = uniform_weight(rng, len, d);
    proj.bias = Tensor::zeros({d}, true);
    p.bank.projections.emplace(len, std::move(proj));
  }
  p.channel_embedding_frozen = !config.use_channel_embedding;
  for (std::size_t i = 0; i < plan.num_channels(); ++i) {
    Tensor e = normal_param(rng, {d}, 0.02);
    if (p.channel_embedding_frozen) {
      e = Tensor::zeros({d}, false);
    }
    p.bank.channel_embedding.push_back(e);
    p.bank.channel_tokens.push_back(normal_param(rng, {C, d}, 0.02));
  }
  p.bank.positional = patching::positional_table(max_patches, d);

  const std::size_t ff = config.ff_ratio * d;
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    BlockParams blk;
    blk.wq = uniform_weight(rng, d, d);
    blk.wk = uniform_weight(rng, d, d);
    blk.wv = uniform_weight(rng, d, d);
    blk.wo = uniform_weight(rng, d, d);
    blk.ln1_gain = Tensor::filled({d}, 1.0, true);
    blk.ln1_shift = Tensor::zeros({d}, true);
    blk.ln2_gain = Tensor::filled({d}, 1.0, true);
    blk.ln2_shift = Tensor::zeros({d}, true);
    blk.ff_w1 = uniform_weight(rng, d, ff);
    blk.ff_b1 = Tensor::zeros({ff}, true);
    blk.ff_w2 = uniform_weight(rng, ff, d);
    blk.ff_b2 = Tensor::zeros({d}, true);
    p.blocks.push_back(std::move(blk));
  }

  std::set<std::size_t> rates(factors.begin(), factors.end());
  for (std::size_t r : rates) {
    if (config.horizon % r != 0) {
      throw ConfigError("horizon " + std::to_string(config.horizon) +
                        " is not a multiple of sampling factor " + std::to_string(r));
    }
    DecoderParams dec;
    dec.weight = uniform_weight(rng, C * d, config.horizon / r);
    dec.bias = Tensor::zeros({config.horizon / r}, true);
    p.decoders.emplace(r, std::move(dec));
  }
  return p;
}

std::vector<NamedTensor> ModelParams::registry() const {
  std::vector<NamedTensor> out;
  for (const auto& [len, proj] : bank.projections) {
    out.push_back({"patch.l" + std::to_string(len) + ".weight", proj.weight, true});
    out.push_back({"patch.l" + std::to_string(len) + ".bias", proj.bias, true});
  }
  for (std::size_t i = 0; i < bank.channel_embedding.size(); ++i)
    out.push_back({"channel_embedding." + std::to_string(i), bank.channel_embedding[i],
                   !channel_embedding_frozen});
  for (std::size_t i = 0; i < bank.channel_tokens.size(); ++i)
    out.push_back({"channel_tokens." + std::to_string(i), bank.channel_tokens[i], true});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& k = blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    out.push_back({pre + "attn.wq", k.wq, true});
    out.push_back({pre + "attn.wk", k.wk, true});
    out.push_back({pre + "attn.wv", k.wv, true});
    out.push_back({pre + "attn.wo", k.wo, true});
    out.push_back({pre + "ln1.gain", k.ln1_gain, true});
    out.push_back({pre + "ln1.shift", k.ln1_shift, true});
    out.push_back({pre + "ln2.gain", k.ln2_gain, true});
    out.push_back({pre + "ln2.shift", k.ln2_shift, true});
    out.push_back({pre + "ffn.w1", k.ff_w1, true});
    out.push_back({pre + "ffn.b1", k.ff_b1, true});
    out.push_back({pre + "ffn.w2", k.ff_w2, true});
    out.push_back({pre + "ffn.b2", k.ff_b2, true});
  }
  for (const auto& [r, dec] : decoders) {
    out.push_back({"decoder.r" + std::to_string(r) + ".weight", dec.weight, true});
    out.push_back({"decoder.r" + std::to_string(r) + ".bias", dec.bias, true});
  }
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams c;
  c.channel_embedding_frozen = channel_embedding_frozen;
  c.bank.d_model = bank.d_model;
  for (const auto& [len, proj] : bank.projections)
    c.bank.projections.emplace(len, patching::PatchProjection{clone_tensor(proj.weight),
                                                              clone_tensor(proj.bias)});
  for (const auto& t : bank.channel_embedding) c.bank.channel_embedding.push_back(clone_tensor(t));
  for (const auto& t : bank.channel_tokens) c.bank.channel_tokens.push_back(clone_tensor(t));
  c.bank.positional = clone_tensor(bank.positional);
  for (const auto& b : blocks) {
    BlockParams n;
    n.wq = clone_tensor(b.wq);
    n.wk = clone_tensor(b.wk);
    n.wv = clone_tensor(b.wv);
    n.wo = clone_tensor(b.wo);
    n.ln1_gain = clone_tensor(b.ln1_gain);
    n.ln1_shift = clone_tensor(b.ln1_shift);
    n.ln2_gain = clone_tensor(b.ln2_gain);
    n.ln2_shift = clone_tensor(b.ln2_shift);
    n.ff_w1 = clone_tensor(b.ff_w1);
    n.ff_b1 = clone_tensor(b.ff_b1);
    n.ff_w2 = clone_tensor(b.ff_w2);
    n.ff_b2 = clone_tensor(b.ff_b2);
    c.blocks.push_back(std::move(n));
  }
  for (const auto& [r, dec] : decoders)
    c.decoders.emplace(r, DecoderParams{clone_tensor(dec.weight), clone_tensor(dec.bias)});
  return c;
}

std::size_t count_params(std::span<const NamedTensor> registry) {
  std::size_t n = 0;
  for (const auto& t : registry) n += t.value.numel();
  return n;
}

std::size_t count_params(const ModelParams& params) {
  auto reg = params.registry();
  return count_params(reg);
}

namespace {

Tensor multi_head_attention(const Tensor& x, const BlockParams& b, const AdditiveBias& bias,
                            std::size_t heads) {
  const std::size_t d = x.dim(1);
  const std::size_t dh = d / heads;
  Tensor q = matmul(x, b.wq);
  Tensor k = matmul(x, b.wk);
  Tensor v = matmul(x, b.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    outs.push_back(matmul(masked_softmax(scores, bias), vh));
  }
  Tensor joined = heads == 1 ? outs.front() : concat(outs, 1);
  return matmul(joined, b.wo);
}

Tensor block_forward(const Tensor& x, const BlockParams& b, const AdditiveBias& bias,
                     std::size_t heads) {
  Tensor h = layer_norm(x, b.ln1_gain, b.ln1_shift);
  Tensor y = add(x, multi_head_attention(h, b, bias, heads));
  Tensor h2 = layer_norm(y, b.ln2_gain, b.ln2_shift);
  Tensor ff = add_row(matmul(relu(add_row(matmul(h2, b.ff_w1), b.ff_b1)), b.ff_w2), b.ff_b2);
  return add(y, ff);
}

}  // namespace

attnmask::AttentionMask window_mask(const patching::Tokens& tokens, const ModelConfig& config,
                                    std::optional<std::span<const std::uint8_t>> keep) {
  if (!config.patch_masking) {
    std::vector<std::uint8_t> all(tokens.layout.total_local(), 1);
    return attnmask::build_mask(tokens.layout, config.mask_strategy, all, std::nullopt);
  }
  return attnmask::build_mask(tokens.layout, config.mask_strategy, tokens.patch_observed, keep);
}

ForwardOutput forward(const data::WindowSample& w, const ModelParams& params,
                      const ModelConfig& config, const PatchPlan& plan,
                      std::optional<std::span<const std::uint8_t>> keep) {
  if (params.blocks.size() != config.n_blocks) {
    throw ConfigError("forward: parameters hold " + std::to_string(params.blocks.size()) +
                      " blocks, config expects " + std::to_string(config.n_blocks));
  }
  ForwardOutput out;
  out.tokens = patching::tokenize(w, plan, params.bank, config.use_channel_embedding);
  auto mask = window_mask(out.tokens, config, keep);
  Tensor x = out.tokens.matrix;
  for (const auto& blk : params.blocks) x = block_forward(x, blk, mask.bias(), config.n_heads);
  out.final_tokens = x;

  const auto& layout = out.tokens.layout;
  const std::size_t C = layout.channel_tokens();
  const std::size_t d = params.bank.d_model;
  for (std::size_t i = 0; i < w.num_channels(); ++i) {
    auto dec = params.decoders.find(w.factors[i]);
    if (dec == params.decoders.end()) {
      throw ConfigError("forward: no decoder for sampling factor " + std::to_string(w.factors[i]));
    }
    const std::size_t begin = layout.channel_token_begin(i);
    Tensor summary = reshape(slice(x, 0, begin, begin + C), {1, C * d});
    Tensor y = add_row(matmul(summary, dec->second.weight), dec->second.bias);
    out.predictions.push_back(reshape(y, {y.numel()}));
  }
  return out;
}

Forecast predict(const data::WindowSample& w, const ModelParams& params,
                 const ModelConfig& config, const PatchPlan& plan, const data::NormStats& stats) {
  NoGradGuard no_grad;
  auto out = forward(w, params, config, plan);
  Forecast f;
  for (std::size_t i = 0; i < out.predictions.size(); ++i) {
    auto z = out.predictions[i].to_vector();
    std::vector<double> raw(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) raw[k] = data::denormalize_value(stats, i, z[k]);
    f.normalized.push_back(std::move(z));
    f.denormalized.push_back(std::move(raw));
  }
  return f;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  auto reg = params.registry();
  nlohmann::json header;
  header["format"] = "ctf-checkpoint";
  header["version"] = 1;
  header["dtype"] = "float64-le";
  auto& list = header["tensors"];
  list = nlohmann::json::array();
  for (const auto& t : reg) list.push_back({{"name", t.name}, {"shape", t.value.shape()}});
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write checkpoint " + path);
  os << header.dump() << '\n';
  for (const auto& t : reg) {
    auto data = t.value.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw ConfigError("failed writing checkpoint " + path);
}

void load_checkpoint(const std::string& path, ModelParams& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path);
  std::string line;
  std::getline(is, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path + ": bad header: " + e.what());
  }
  if (header.value("format", "") != "ctf-checkpoint") {
    throw ConfigError("checkpoint " + path + ": not a ctf checkpoint");
  }
  auto reg = params.registry();
  const auto& list = header.at("tensors");
  if (list.size() != reg.size()) {
    throw ConfigError("checkpoint " + path + ": holds " + std::to_string(list.size()) +
                      " tensors, model expects " + std::to_string(reg.size()));
  }
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const auto name = list[i].at("name").get<std::string>();
    const auto shape = list[i].at("shape").get<Shape>();
    if (name != reg[i].name || shape != reg[i].value.shape()) {
      throw ConfigError("checkpoint " + path + ": tensor " + std::to_string(i) + " is " + name +
                        shape_to_string(shape) + ", model expects " + reg[i].name +
                        shape_to_string(reg[i].value.shape()));
    }
  }
  for (auto& t : reg) {
    auto data = t.value.data();
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw ConfigError("checkpoint " + path + ": truncated payload");
  }
}

}  // namespace ctf::model
