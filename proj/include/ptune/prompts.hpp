#pragma once

// Trainable continuous prompts. Shallow mode splices virtual token embeddings
// into the input sequence; deep mode realizes per-layer prefix key/value rows
// through an encoder over a compact raw embedding block. Raw embeddings plus
// the reparameterization weights are the only trainable parameters here.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptune/backbone.hpp"
#include "ptune/tensor.hpp"

namespace ptune {

enum class PromptMode { kShallow, kDeep };
enum class Reparam { kNone, kMlp, kLstm };
enum class Placement { kBeforeInput, kAfterInput };

std::string to_string(PromptMode m);
std::string to_string(Reparam r);
std::string to_string(Placement p);
PromptMode prompt_mode_from_string(const std::string& s);
Reparam reparam_from_string(const std::string& s);
Placement placement_from_string(const std::string& s);

struct PromptConfig {
  PromptMode mode = PromptMode::kDeep;
  int prompt_length = 8;               // L
  std::vector<int> layer_set;          // deep mode only; ordered, no duplicates
  Reparam reparam = Reparam::kNone;
  int reparam_hidden = 0;              // 0 -> hidden_size
  Placement placement = Placement::kAfterInput;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& model) const;
  int effective_reparam_hidden(const ModelConfig& model) const;

  std::string to_json() const;
  static PromptConfig from_json(const std::string& text);

  bool operator==(const PromptConfig&) const = default;
};

// Width of the raw embedding rows. Shallow prompts are injected directly so
// they live in model space; deep raw rows use a narrow bottleneck that the
// projection expands, keeping the trainable count a small fraction of the
// backbone across model sizes.
int prompt_dim(const PromptConfig& config, const ModelConfig& model);

struct PromptParams {
  PromptConfig config;
  Tensor raw;  // [L, prompt_dim], trainable

  // reparam = none (deep): single projection raw -> |layer_set| * 2 * hidden
  Tensor proj_w, proj_b;
  // reparam = mlp: raw -> hidden -> tanh -> out
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  // reparam = lstm: bidirectional over L, then linear to out
  Tensor lstm_w_ih_f, lstm_w_hh_f, lstm_b_f;
  Tensor lstm_w_ih_b, lstm_w_hh_b, lstm_b_b;
  Tensor lstm_proj_w, lstm_proj_b;

  std::vector<NamedTensor> trainable() const;
  std::size_t trainable_count() const;
  PromptParams clone() const;  // detached deep copy (still trainable)
};

// Per-layer realized prefix rows, keys/values [L, num_heads, head_dim].
struct PrefixEntry {
  int layer = 0;
  Tensor keys;
  Tensor values;
};

struct PrefixCache {
  std::vector<PrefixEntry> entries;  // follows layer_set order

  std::size_t scalar_count() const;
  // Expand to per-layer batched prefixes for FrozenBackbone::forward.
  std::map<int, PrefixLayer> batched(std::size_t batch_size) const;
};

PromptParams init_prompts(const PromptConfig& config, const ModelConfig& model);

// mode == shallow: virtual token embeddings [L, hidden] to splice.
Tensor encode_shallow(const PromptParams& params, const ModelConfig& model);

// mode == deep: realize the per-layer key/value rows.
PrefixCache encode_deep(const PromptParams& params, const ModelConfig& model);

// linear -> tanh -> linear
Tensor reparam_mlp(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                   const Tensor& b2);

// bidirectional LSTM over rows of x, then a linear projection
Tensor reparam_lstm(const Tensor& x, const PromptParams& params);

// Uniform prompted forward: output hidden states cover exactly the input
// token positions in both modes, pooled is the first token's state.
ForwardResult prompted_forward(const FrozenBackbone& backbone, const PromptParams& params,
                               const Batch& batch, const ForwardMode& mode = {});

}  // namespace ptune
