#include "ptune/prompts.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

namespace ptune {

using json = nlohmann::json;

std::string to_string(PromptMode m) { return m == PromptMode::kShallow ? "shallow" : "deep"; }
std::string to_string(Reparam r) {
  switch (r) {
    case Reparam::kNone: return "none";
    case Reparam::kMlp: return "mlp";
    default: return "lstm";
  }
}
std::string to_string(Placement p) {
  return p == Placement::kBeforeInput ? "before_input" : "after_input";
}

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "shallow") return PromptMode::kShallow;
  if (s == "deep") return PromptMode::kDeep;
  throw ConfigError("unknown prompt mode: " + s);
}
Reparam reparam_from_string(const std::string& s) {
  if (s == "none") return Reparam::kNone;
  if (s == "mlp") return Reparam::kMlp;
  if (s == "lstm") return Reparam::kLstm;
  throw ConfigError("unknown reparam: " + s);
}
Placement placement_from_string(const std::string& s) {
  if (s == "before_input") return Placement::kBeforeInput;
  if (s == "after_input") return Placement::kAfterInput;
  throw ConfigError("unknown placement: " + s);
}

void PromptConfig::validate(const ModelConfig& model) const {
  if (prompt_length <= 0) throw ConfigError("PromptConfig: prompt_length must be positive");
  if (reparam_hidden < 0) throw ConfigError("PromptConfig: reparam_hidden must be positive");
  if (mode == PromptMode::kDeep) {
    if (layer_set.empty()) throw ConfigError("PromptConfig: deep mode requires a non-empty layer_set");
    std::set<int> uniq(layer_set.begin(), layer_set.end());
    if (uniq.size() != layer_set.size()) throw ConfigError("PromptConfig: layer_set has duplicates");
    for (int l : layer_set) {
      if (l < 0 || l >= model.num_layers)
        throw ConfigError("PromptConfig: layer " + std::to_string(l) + " outside [0, " +
                          std::to_string(model.num_layers) + ")");
    }
  }
}

int PromptConfig::effective_reparam_hidden(const ModelConfig& model) const {
  return reparam_hidden > 0 ? reparam_hidden : model.hidden_size;
}

std::string PromptConfig::to_json() const {
  json j;
  j["mode"] = to_string(mode);
  j["prompt_length"] = prompt_length;
  j["layer_set"] = layer_set;
  j["reparam"] = to_string(reparam);
  j["reparam_hidden"] = reparam_hidden;
  j["placement"] = to_string(placement);
  j["seed"] = seed;
  return j.dump();
}

PromptConfig PromptConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  PromptConfig c;
  c.mode = prompt_mode_from_string(j.at("mode").get<std::string>());
  c.prompt_length = j.at("prompt_length").get<int>();
  c.layer_set = j.at("layer_set").get<std::vector<int>>();
  c.reparam = reparam_from_string(j.at("reparam").get<std::string>());
  c.reparam_hidden = j.at("reparam_hidden").get<int>();
  c.placement = placement_from_string(j.at("placement").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

int prompt_dim(const PromptConfig& config, const ModelConfig& model) {
  if (config.mode == PromptMode::kShallow) return model.hidden_size;
  return std::min(model.hidden_size, 128);
}

namespace {

// width of the encoder output: hidden for shallow, one K and one V slice of
// hidden per selected layer for deep
std::size_t encoder_out_dim(const PromptConfig& config, const ModelConfig& model) {
  if (config.mode == PromptMode::kShallow) return static_cast<std::size_t>(model.hidden_size);
  return config.layer_set.size() * 2 * static_cast<std::size_t>(model.hidden_size);
}

void push_if(std::vector<NamedTensor>& out, const char* name, const Tensor& t) {
  if (t.defined()) out.push_back({name, t});
}

}  // namespace

std::vector<NamedTensor> PromptParams::trainable() const {
  std::vector<NamedTensor> out;
  push_if(out, "prompt.raw", raw);
  push_if(out, "prompt.proj.w", proj_w);
  push_if(out, "prompt.proj.b", proj_b);
  push_if(out, "prompt.mlp.w1", mlp_w1);
  push_if(out, "prompt.mlp.b1", mlp_b1);
  push_if(out, "prompt.mlp.w2", mlp_w2);
  push_if(out, "prompt.mlp.b2", mlp_b2);
  push_if(out, "prompt.lstm.w_ih_f", lstm_w_ih_f);
  push_if(out, "prompt.lstm.w_hh_f", lstm_w_hh_f);
  push_if(out, "prompt.lstm.b_f", lstm_b_f);
  push_if(out, "prompt.lstm.w_ih_b", lstm_w_ih_b);
  push_if(out, "prompt.lstm.w_hh_b", lstm_w_hh_b);
  push_if(out, "prompt.lstm.b_b", lstm_b_b);
  push_if(out, "prompt.lstm.proj.w", lstm_proj_w);
  push_if(out, "prompt.lstm.proj.b", lstm_proj_b);
  return out;
}

std::size_t PromptParams::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : trainable()) n += p.tensor.size();
  return n;
}

PromptParams PromptParams::clone() const {
  PromptParams c;
  c.config = config;
  auto cp = [](const Tensor& t) { return t.defined() ? t.clone(/*requires_grad=*/true) : Tensor(); };
  c.raw = cp(raw);
  c.proj_w = cp(proj_w);
  c.proj_b = cp(proj_b);
  c.mlp_w1 = cp(mlp_w1);
  c.mlp_b1 = cp(mlp_b1);
  c.mlp_w2 = cp(mlp_w2);
  c.mlp_b2 = cp(mlp_b2);
  c.lstm_w_ih_f = cp(lstm_w_ih_f);
  c.lstm_w_hh_f = cp(lstm_w_hh_f);
  c.lstm_b_f = cp(lstm_b_f);
  c.lstm_w_ih_b = cp(lstm_w_ih_b);
  c.lstm_w_hh_b = cp(lstm_w_hh_b);
  c.lstm_b_b = cp(lstm_b_b);
  c.lstm_proj_w = cp(lstm_proj_w);
  c.lstm_proj_b = cp(lstm_proj_b);
  return c;
}

std::size_t PrefixCache::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.keys.size() + e.values.size();
  return n;
}

std::map<int, PrefixLayer> PrefixCache::batched(std::size_t batch_size) const {
  std::map<int, PrefixLayer> out;
  for (const auto& e : entries) {
    PrefixLayer pl;
    pl.keys = tile0(e.keys, batch_size);
    pl.values = tile0(e.values, batch_size);
    out.emplace(e.layer, std::move(pl));
  }
  return out;
}

PromptParams init_prompts(const PromptConfig& config, const ModelConfig& model) {
  config.validate(model);
  PromptParams p;
  p.config = config;
  Rng rng(config.seed);

  const std::size_t l = static_cast<std::size_t>(config.prompt_length);
  const std::size_t d = static_cast<std::size_t>(prompt_dim(config, model));
  const std::size_t out = encoder_out_dim(config, model);
  const std::size_t r = static_cast<std::size_t>(config.effective_reparam_hidden(model));

  p.raw = Tensor::randn({l, d}, rng, 0.02, /*requires_grad=*/true);

  switch (config.reparam) {
    case Reparam::kNone:
      if (config.mode == PromptMode::kDeep) {
        p.proj_w = Tensor::randn({d, out}, rng, 0.02, true);
        p.proj_b = Tensor::zeros({out}, true);
      }
      break;
    case Reparam::kMlp:
      p.mlp_w1 = Tensor::randn({d, r}, rng, 0.02, true);
      p.mlp_b1 = Tensor::zeros({r}, true);
      p.mlp_w2 = Tensor::randn({r, out}, rng, 0.02, true);
      p.mlp_b2 = Tensor::zeros({out}, true);
      break;
    case Reparam::kLstm:
      p.lstm_w_ih_f = Tensor::randn({d, 4 * r}, rng, 0.02, true);
      p.lstm_w_hh_f = Tensor::randn({r, 4 * r}, rng, 0.02, true);
      p.lstm_b_f = Tensor::zeros({4 * r}, true);
      p.lstm_w_ih_b = Tensor::randn({d, 4 * r}, rng, 0.02, true);
      p.lstm_w_hh_b = Tensor::randn({r, 4 * r}, rng, 0.02, true);
      p.lstm_b_b = Tensor::zeros({4 * r}, true);
      p.lstm_proj_w = Tensor::randn({2 * r, out}, rng, 0.02, true);
      p.lstm_proj_b = Tensor::zeros({out}, true);
      break;
  }
  return p;
}

Tensor reparam_mlp(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                   const Tensor& b2) {
  if (x.ndim() != 2 || x.dim(1) != w1.dim(0) || w1.dim(1) != w2.dim(0))
    throw ConfigError("reparam_mlp: inconsistent shapes " + shape_str(x.shape()) + " x " +
                      shape_str(w1.shape()) + " x " + shape_str(w2.shape()));
  return add_bias(matmul(tanh_act(add_bias(matmul(x, w1), b1)), w2), b2);
}

namespace {

// one LSTM direction; x [L, D] -> hidden states [L, R]
Tensor lstm_direction(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias,
                      bool reverse) {
  const std::size_t steps = x.dim(0);
  const std::size_t r = w_hh.dim(0);
  Tensor h = Tensor::zeros({1, r});
  Tensor c = Tensor::zeros({1, r});
  std::vector<Tensor> outputs(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    Tensor xt = slice(x, 0, t, 1);  // [1, D]
    Tensor gates = add_bias(add(matmul(xt, w_ih), matmul(h, w_hh)), bias);  // [1, 4R]
    Tensor ig = sigmoid(slice(gates, 1, 0, r));
    Tensor fg = sigmoid(slice(gates, 1, r, r));
    Tensor gg = tanh_act(slice(gates, 1, 2 * r, r));
    Tensor og = sigmoid(slice(gates, 1, 3 * r, r));
    c = add(mul(fg, c), mul(ig, gg));
    h = mul(og, tanh_act(c));
    outputs[t] = h;
  }
  return stack_rows(outputs);
}

}  // namespace

Tensor reparam_lstm(const Tensor& x, const PromptParams& params) {
  if (!params.lstm_w_ih_f.defined()) throw UsageError("reparam_lstm: params carry no lstm weights");
  Tensor fwd = lstm_direction(x, params.lstm_w_ih_f, params.lstm_w_hh_f, params.lstm_b_f, false);
  Tensor bwd = lstm_direction(x, params.lstm_w_ih_b, params.lstm_w_hh_b, params.lstm_b_b, true);
  Tensor both = concat(fwd, bwd, 1);  // [L, 2R]
  return add_bias(matmul(both, params.lstm_proj_w), params.lstm_proj_b);
}

namespace {

Tensor run_encoder(const PromptParams& params, const ModelConfig& model) {
  (void)model;
  switch (params.config.reparam) {
    case Reparam::kNone:
      if (params.config.mode == PromptMode::kShallow) return params.raw;
      return add_bias(matmul(params.raw, params.proj_w), params.proj_b);
    case Reparam::kMlp:
      return reparam_mlp(params.raw, params.mlp_w1, params.mlp_b1, params.mlp_w2, params.mlp_b2);
    default:
      return reparam_lstm(params.raw, params);
  }
}

}  // namespace

Tensor encode_shallow(const PromptParams& params, const ModelConfig& model) {
  if (params.config.mode != PromptMode::kShallow)
    throw UsageError("encode_shallow called on deep-mode params");
  return run_encoder(params, model);
}

PrefixCache encode_deep(const PromptParams& params, const ModelConfig& model) {
  if (params.config.mode != PromptMode::kDeep)
    throw UsageError("encode_deep called on shallow-mode params");

  const std::size_t l = static_cast<std::size_t>(params.config.prompt_length);
  const std::size_t h = static_cast<std::size_t>(model.hidden_size);
  const std::size_t nh = static_cast<std::size_t>(model.num_heads);
  const std::size_t hd = static_cast<std::size_t>(model.head_dim());

  Tensor flat = run_encoder(params, model);  // [L, |set| * 2H]

  // Slices are assigned by each layer's rank in the sorted layer set, so
  // reordering layer_set only reorders the entries, never their contents.
  std::vector<int> sorted_layers(params.config.layer_set);
  std::sort(sorted_layers.begin(), sorted_layers.end());

  PrefixCache cache;
  for (int layer : params.config.layer_set) {
    const std::size_t rank = static_cast<std::size_t>(
        std::lower_bound(sorted_layers.begin(), sorted_layers.end(), layer) - sorted_layers.begin());
    Tensor kv = slice(flat, 1, rank * 2 * h, 2 * h);  // [L, 2H]
    PrefixEntry e;
    e.layer = layer;
    e.keys = reshape(slice(kv, 1, 0, h), {l, nh, hd});
    e.values = reshape(slice(kv, 1, h, h), {l, nh, hd});
    cache.entries.push_back(std::move(e));
  }
  return cache;
}

ForwardResult prompted_forward(const FrozenBackbone& backbone, const PromptParams& params,
                               const Batch& batch, const ForwardMode& mode) {
  const ModelConfig& mc = backbone.config();
  params.config.validate(mc);

  if (params.config.mode == PromptMode::kDeep) {
    PrefixCache cache = encode_deep(params, mc);
    return backbone.forward(batch, cache.batched(batch.batch_size), mode);
  }

  const std::size_t l = static_cast<std::size_t>(params.config.prompt_length);
  const std::size_t t = batch.seq_len;
  const std::size_t b = batch.batch_size;
  const std::size_t h = static_cast<std::size_t>(mc.hidden_size);
  if (t + l > static_cast<std::size_t>(mc.max_positions))
    throw DataError("prompted_forward: seq_len + prompt_length exceeds max_positions");

  Tensor emb = backbone.embed_raw(batch);                       // [B, T, H]
  Tensor prompts = tile0(encode_shallow(params, mc), b);        // [B, L, H]

  const bool before = params.config.placement == Placement::kBeforeInput;
  Tensor spliced = before ? concat(prompts, emb, 1) : concat(emb, prompts, 1);

  std::vector<double> mask(b * (t + l), 1.0);
  const std::size_t tok_off = before ? l : 0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < t; ++j)
      mask[i * (t + l) + tok_off + j] = batch.attention_mask[i * t + j];

  ForwardResult full = backbone.forward_embedded(spliced, mask, {}, mode);

  ForwardResult res;
  res.hidden = slice(full.hidden, 1, tok_off, t);
  res.pooled = reshape(slice(res.hidden, 1, 0, 1), {b, h});
  return res;
}

}  // namespace ptune
