#pragma once

// Bidirectional transformer encoder with post-layer-norm blocks and GELU.
// Self-attention optionally receives extra key/value rows ("prefixes") per
// layer; prefix positions are attendable by every query and receive no
// position embedding. All backbone weights are frozen after construction.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptune/tensor.hpp"

namespace ptune {

struct ModelConfig {
  int num_layers = 2;
  int hidden_size = 32;
  int num_heads = 2;
  int ffn_size = 64;
  int vocab_size = 64;
  int max_positions = 64;
  double layer_norm_eps = 1e-12;
  double dropout_rate = 0.1;
  int mask_token_id = 1;
  int cls_token_id = 2;
  int pad_token_id = 0;
  int sep_token_id = 3;

  int head_dim() const { return hidden_size / num_heads; }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  std::uint64_t hash() const;  // over the canonical JSON form

  bool operator==(const ModelConfig&) const = default;
};

// Rectangular padded batch, row-major [batch, seq].
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> token_ids;        // batch*seq
  std::vector<double> attention_mask;  // 1 real token, 0 pad

  int id_at(std::size_t b, std::size_t t) const { return token_ids[b * seq_len + t]; }
  double mask_at(std::size_t b, std::size_t t) const { return attention_mask[b * seq_len + t]; }
};

// Extra attention rows for one layer, already expanded over the batch:
// keys/values are [batch, prefix_len, num_heads, head_dim].
struct PrefixLayer {
  Tensor keys;
  Tensor values;
};

struct AttentionInputs {
  Tensor hidden_states;                // [batch, seq, hidden]
  const std::vector<double>* attention_mask = nullptr;  // batch*seq of 0/1
  std::optional<PrefixLayer> prefix;
};

struct LayerWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gamma, ln1_beta;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gamma, ln2_beta;
};

// Training-time stochastic state; default is eval (no dropout).
struct ForwardMode {
  bool training = false;
  double dropout_rate = 0.0;
  Rng* rng = nullptr;
};

struct ForwardResult {
  Tensor hidden;  // [batch, seq, hidden]
  Tensor pooled;  // [batch, hidden], first-token state
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ArraySpec {
  std::string name;
  Shape shape;
};

class FrozenBackbone {
 public:
  static FrozenBackbone random_init(const ModelConfig& config, std::uint64_t seed);

  // Full parameter inventory for a config, in allocation order. random_init
  // materializes exactly this list, which the census counts.
  static std::vector<ArraySpec> parameter_specs(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  bool frozen() const { return frozen_; }

  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

  // token + position embedding, before the embedding layer norm
  Tensor embed_raw(const Batch& batch) const;
  // embedding layer norm applied (what the encoder stack consumes)
  Tensor embed(const Batch& batch) const;

  // Encoder stack. `prefixes` maps layer index -> batched PrefixLayer; keys
  // outside [0, num_layers) are a configuration error. Output length always
  // equals input length.
  ForwardResult forward(const Batch& batch, const std::map<int, PrefixLayer>& prefixes = {},
                        const ForwardMode& mode = {}) const;

  // Run the stack on an externally built embedding sequence (the shallow
  // prompt path splices rows in before the embedding norm). `mask` is 0/1 per
  // position, length batch*seq.
  ForwardResult forward_embedded(const Tensor& pre_norm_embeddings, const std::vector<double>& mask,
                                 const std::map<int, PrefixLayer>& prefixes = {},
                                 const ForwardMode& mode = {}) const;

  const Tensor& token_table() const { return tok_table_; }
  const LayerWeights& layer(std::size_t i) const { return layers_[i]; }

 private:
  FrozenBackbone() = default;

  ModelConfig config_;
  Tensor tok_table_, pos_table_;
  Tensor emb_ln_gamma_, emb_ln_beta_;
  std::vector<LayerWeights> layers_;
  bool frozen_ = false;
};

// One attention sublayer including Q/K/V/O projections. Keys and values seen
// by the softmax are [prefix ; projected sequence]; prefix columns are never
// masked, padded sequence columns are. Optionally writes the post-softmax
// attention probabilities [batch, heads, seq, prefix+seq] to `probs_out`.
Tensor attention_with_prefix(const AttentionInputs& inputs, const LayerWeights& weights,
                             const ModelConfig& config, const ForwardMode& mode = {},
                             Tensor* probs_out = nullptr);

}  // namespace ptune
