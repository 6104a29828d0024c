#include "ptune/backbone.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <set>

namespace ptune {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (num_layers <= 0 || hidden_size <= 0 || num_heads <= 0 || ffn_size <= 0 || vocab_size <= 0 ||
      max_positions <= 0) {
    throw ConfigError("ModelConfig: all sizes must be positive");
  }
  if (hidden_size % num_heads != 0) {
    throw ConfigError("ModelConfig: hidden_size " + std::to_string(hidden_size) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (layer_norm_eps <= 0.0) throw ConfigError("ModelConfig: layer_norm_eps must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("ModelConfig: dropout_rate must be in [0,1)");
  const std::vector<int> specials = {mask_token_id, cls_token_id, pad_token_id, sep_token_id};
  std::set<int> uniq(specials.begin(), specials.end());
  if (uniq.size() != specials.size()) throw ConfigError("ModelConfig: special token ids must be distinct");
  for (int id : specials) {
    if (id < 0 || id >= vocab_size)
      throw ConfigError("ModelConfig: special token id " + std::to_string(id) + " outside vocabulary");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["num_layers"] = num_layers;
  j["hidden_size"] = hidden_size;
  j["num_heads"] = num_heads;
  j["ffn_size"] = ffn_size;
  j["vocab_size"] = vocab_size;
  j["max_positions"] = max_positions;
  j["layer_norm_eps"] = layer_norm_eps;
  j["dropout_rate"] = dropout_rate;
  j["mask_token_id"] = mask_token_id;
  j["cls_token_id"] = cls_token_id;
  j["pad_token_id"] = pad_token_id;
  j["sep_token_id"] = sep_token_id;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.hidden_size = j.at("hidden_size").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ffn_size = j.at("ffn_size").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.mask_token_id = j.at("mask_token_id").get<int>();
  c.cls_token_id = j.at("cls_token_id").get<int>();
  c.pad_token_id = j.at("pad_token_id").get<int>();
  c.sep_token_id = j.at("sep_token_id").get<int>();
  c.validate();
  return c;
}

std::uint64_t ModelConfig::hash() const { return fnv1a(to_json()); }

std::vector<ArraySpec> FrozenBackbone::parameter_specs(const ModelConfig& c) {
  const std::size_t h = static_cast<std::size_t>(c.hidden_size);
  const std::size_t f = static_cast<std::size_t>(c.ffn_size);
  std::vector<ArraySpec> specs;
  specs.push_back({"embeddings.token", {static_cast<std::size_t>(c.vocab_size), h}});
  specs.push_back({"embeddings.position", {static_cast<std::size_t>(c.max_positions), h}});
  specs.push_back({"embeddings.ln.gamma", {h}});
  specs.push_back({"embeddings.ln.beta", {h}});
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    specs.push_back({p + "attn.wq", {h, h}});
    specs.push_back({p + "attn.bq", {h}});
    specs.push_back({p + "attn.wk", {h, h}});
    specs.push_back({p + "attn.bk", {h}});
    specs.push_back({p + "attn.wv", {h, h}});
    specs.push_back({p + "attn.bv", {h}});
    specs.push_back({p + "attn.wo", {h, h}});
    specs.push_back({p + "attn.bo", {h}});
    specs.push_back({p + "ln1.gamma", {h}});
    specs.push_back({p + "ln1.beta", {h}});
    specs.push_back({p + "ffn.w1", {h, f}});
    specs.push_back({p + "ffn.b1", {f}});
    specs.push_back({p + "ffn.w2", {f, h}});
    specs.push_back({p + "ffn.b2", {h}});
    specs.push_back({p + "ln2.gamma", {h}});
    specs.push_back({p + "ln2.beta", {h}});
  }
  return specs;
}

namespace {

// gamma -> 1, biases and beta -> 0, everything else N(0, 0.02)
Tensor init_array(const ArraySpec& spec, Rng& rng) {
  const std::string last = spec.name.substr(spec.name.rfind('.') + 1);
  if (last == "gamma") return Tensor::full(spec.shape, 1.0);
  if (!last.empty() && last[0] == 'b') return Tensor::zeros(spec.shape);
  return Tensor::randn(spec.shape, rng, 0.02);
}

}  // namespace

FrozenBackbone FrozenBackbone::random_init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  FrozenBackbone bb;
  bb.config_ = config;
  Rng rng(seed);

  const auto specs = parameter_specs(config);
  std::size_t i = 0;
  auto next = [&]() { return init_array(specs[i++], rng); };

  bb.tok_table_ = next();
  bb.pos_table_ = next();
  bb.emb_ln_gamma_ = next();
  bb.emb_ln_beta_ = next();
  bb.layers_.resize(config.num_layers);
  for (auto& lw : bb.layers_) {
    lw.wq = next(); lw.bq = next();
    lw.wk = next(); lw.bk = next();
    lw.wv = next(); lw.bv = next();
    lw.wo = next(); lw.bo = next();
    lw.ln1_gamma = next(); lw.ln1_beta = next();
    lw.w1 = next(); lw.b1 = next();
    lw.w2 = next(); lw.b2 = next();
    lw.ln2_gamma = next(); lw.ln2_beta = next();
  }
  bb.frozen_ = true;
  return bb;
}

std::vector<NamedTensor> FrozenBackbone::parameters() const {
  const auto specs = parameter_specs(config_);
  std::vector<NamedTensor> out;
  out.reserve(specs.size());
  std::size_t i = 0;
  auto push = [&](const Tensor& t) { out.push_back({specs[i++].name, t}); };
  push(tok_table_);
  push(pos_table_);
  push(emb_ln_gamma_);
  push(emb_ln_beta_);
  for (const auto& lw : layers_) {
    push(lw.wq); push(lw.bq);
    push(lw.wk); push(lw.bk);
    push(lw.wv); push(lw.bv);
    push(lw.wo); push(lw.bo);
    push(lw.ln1_gamma); push(lw.ln1_beta);
    push(lw.w1); push(lw.b1);
    push(lw.w2); push(lw.b2);
    push(lw.ln2_gamma); push(lw.ln2_beta);
  }
  return out;
}

std::size_t FrozenBackbone::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

Tensor FrozenBackbone::embed_raw(const Batch& batch) const {
  const std::size_t h = static_cast<std::size_t>(config_.hidden_size);
  if (batch.token_ids.size() != batch.batch_size * batch.seq_len)
    throw UsageError("embed: batch dims do not match token_ids length");
  if (batch.seq_len > static_cast<std::size_t>(config_.max_positions))
    throw DataError("embed: sequence length " + std::to_string(batch.seq_len) + " exceeds max_positions " +
                    std::to_string(config_.max_positions));
  for (int id : batch.token_ids) {
    if (id < 0 || id >= config_.vocab_size)
      throw DataError("embed: token id " + std::to_string(id) + " out of vocabulary");
  }

  Tensor tok = embedding_lookup(tok_table_, batch.token_ids);  // [B*T, H]
  std::vector<int> pos_ids(batch.batch_size * batch.seq_len);
  for (std::size_t b = 0; b < batch.batch_size; ++b)
    for (std::size_t t = 0; t < batch.seq_len; ++t) pos_ids[b * batch.seq_len + t] = static_cast<int>(t);
  Tensor pos = embedding_lookup(pos_table_, pos_ids);
  return reshape(add(tok, pos), {batch.batch_size, batch.seq_len, h});
}

Tensor FrozenBackbone::embed(const Batch& batch) const {
  return layer_norm(embed_raw(batch), emb_ln_gamma_, emb_ln_beta_, config_.layer_norm_eps);
}

namespace {

// additive mask over [prefix ; sequence] key positions, fully materialized to
// the score shape [B, nh, T, P+T]
std::vector<double> build_additive_mask(const std::vector<double>& mask01, std::size_t batch,
                                        std::size_t heads, std::size_t seq, std::size_t prefix_len) {
  const std::size_t width = prefix_len + seq;
  std::vector<double> out(batch * heads * seq * width, 0.0);
  constexpr double kNegInf = -1e9;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < seq; ++j) {
      if (mask01[b * seq + j] != 0.0) continue;
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t q = 0; q < seq; ++q)
          out[((b * heads + h) * seq + q) * width + prefix_len + j] = kNegInf;
    }
  }
  return out;
}

Tensor maybe_dropout(const Tensor& x, const ForwardMode& mode) {
  if (!mode.training || mode.dropout_rate <= 0.0) return x;
  if (mode.rng == nullptr) throw UsageError("training-mode forward requires an rng");
  return dropout(x, mode.dropout_rate, *mode.rng);
}

}  // namespace

Tensor attention_with_prefix(const AttentionInputs& inputs, const LayerWeights& weights,
                             const ModelConfig& config, const ForwardMode& mode, Tensor* probs_out) {
  const Tensor& x = inputs.hidden_states;
  if (x.ndim() != 3) throw ConfigError("attention: hidden_states must be [batch, seq, hidden]");
  const std::size_t bsz = x.dim(0);
  const std::size_t seq = x.dim(1);
  const std::size_t hid = x.dim(2);
  const std::size_t nh = static_cast<std::size_t>(config.num_heads);
  const std::size_t hd = static_cast<std::size_t>(config.head_dim());
  if (hid != static_cast<std::size_t>(config.hidden_size))
    throw ConfigError("attention: hidden size mismatch");
  if (inputs.attention_mask == nullptr || inputs.attention_mask->size() != bsz * seq)
    throw ConfigError("attention: attention_mask must have batch*seq entries");

  auto heads_view = [&](const Tensor& t) {
    // [B, T, H] -> [B, nh, T, hd]
    return permute(reshape(t, {bsz, seq, nh, hd}), {0, 2, 1, 3});
  };

  Tensor q = heads_view(add_bias(matmul(x, weights.wq), weights.bq));
  Tensor k = heads_view(add_bias(matmul(x, weights.wk), weights.bk));
  Tensor v = heads_view(add_bias(matmul(x, weights.wv), weights.bv));

  std::size_t prefix_len = 0;
  if (inputs.prefix.has_value()) {
    const PrefixLayer& pl = *inputs.prefix;
    const Shape& ks = pl.keys.shape();
    if (ks.size() != 4 || ks[0] != bsz || ks[2] != nh || ks[3] != hd || pl.values.shape() != ks) {
      throw ConfigError("attention: prefix shape " + shape_str(ks) + " incompatible with config (want [" +
                        std::to_string(bsz) + ", L, " + std::to_string(nh) + ", " + std::to_string(hd) +
                        "])");
    }
    prefix_len = ks[1];
    if (prefix_len > 0) {
      Tensor pk = permute(maybe_dropout(pl.keys, mode), {0, 2, 1, 3});    // [B, nh, P, hd]
      Tensor pv = permute(maybe_dropout(pl.values, mode), {0, 2, 1, 3});
      k = concat(pk, k, 2);
      v = concat(pv, v, 2);
    }
  }

  Tensor scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(hd)));
  scores = add_const(scores, build_additive_mask(*inputs.attention_mask, bsz, nh, seq, prefix_len));
  Tensor probs = softmax_lastdim(scores);
  if (probs_out != nullptr) *probs_out = probs;
  probs = maybe_dropout(probs, mode);

  Tensor ctx = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {bsz, seq, hid});
  return add_bias(matmul(ctx, weights.wo), weights.bo);
}

ForwardResult FrozenBackbone::forward(const Batch& batch, const std::map<int, PrefixLayer>& prefixes,
                                      const ForwardMode& mode) const {
  return forward_embedded(embed_raw(batch), batch.attention_mask, prefixes, mode);
}

ForwardResult FrozenBackbone::forward_embedded(const Tensor& pre_norm_embeddings,
                                               const std::vector<double>& mask,
                                               const std::map<int, PrefixLayer>& prefixes,
                                               const ForwardMode& mode) const {
  for (const auto& [layer_idx, pl] : prefixes) {
    (void)pl;
    if (layer_idx < 0 || layer_idx >= config_.num_layers)
      throw ConfigError("forward: prefix provided for layer " + std::to_string(layer_idx) +
                        ", model has " + std::to_string(config_.num_layers) + " layers");
  }
  if (pre_norm_embeddings.ndim() != 3) throw UsageError("forward: embeddings must be [batch, seq, hidden]");
  const std::size_t bsz = pre_norm_embeddings.dim(0);
  const std::size_t seq = pre_norm_embeddings.dim(1);
  if (mask.size() != bsz * seq) throw UsageError("forward: mask size mismatch");

  Tensor x = layer_norm(pre_norm_embeddings, emb_ln_gamma_, emb_ln_beta_, config_.layer_norm_eps);
  x = maybe_dropout(x, mode);

  for (int l = 0; l < config_.num_layers; ++l) {
    const LayerWeights& lw = layers_[l];
    AttentionInputs in;
    in.hidden_states = x;
    in.attention_mask = &mask;
    auto it = prefixes.find(l);
    if (it != prefixes.end()) in.prefix = it->second;

    Tensor attn = attention_with_prefix(in, lw, config_, mode);
    Tensor h = layer_norm(add(x, maybe_dropout(attn, mode)), lw.ln1_gamma, lw.ln1_beta,
                          config_.layer_norm_eps);
    Tensor ffn = add_bias(matmul(gelu(add_bias(matmul(h, lw.w1), lw.b1)), lw.w2), lw.b2);
    x = layer_norm(add(h, maybe_dropout(ffn, mode)), lw.ln2_gamma, lw.ln2_beta, config_.layer_norm_eps);
  }

  ForwardResult res;
  res.hidden = x;
  res.pooled = reshape(slice(x, 1, 0, 1), {bsz, static_cast<std::size_t>(config_.hidden_size)});
  return res;
}

}  // namespace ptune
