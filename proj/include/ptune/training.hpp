#pragma once

// Optimization of the trainable subset (prompts + heads) over a frozen
// backbone: AdamW with linear warmup/decay, multi-dataset scheduling with
// shared prompts and per-dataset heads, parameter census, and prompt-only
// checkpoints.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptune/metrics.hpp"
#include "ptune/prompts.hpp"
#include "ptune/synth.hpp"
#include "ptune/tasks.hpp"

namespace ptune {

struct TrainConfig {
  double learning_rate = 0.05;
  int batch_size = 16;
  int epochs = 20;
  double dropout = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::string optimizer = "adamw";
  double warmup_fraction = 0.1;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

class AdamW {
 public:
  AdamW() = default;

  // Updates exactly the arrays passed in; moment slots are keyed by name and
  // carry their own step counts for bias correction.
  void step(const std::vector<NamedTensor>& params, double lr, double weight_decay);

  std::size_t slot_count() const { return slots_.size(); }
  std::vector<std::string> tracked_names() const;

 private:
  struct Slot {
    std::vector<double> m, v;
    std::int64_t t = 0;
  };
  std::unordered_map<std::string, Slot> slots_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

struct DatasetEntry {
  std::string name;
  TaskSpec spec;
  std::vector<EncodedExample> train, dev;
};

struct TrainState {
  const FrozenBackbone* backbone = nullptr;
  PromptParams prompts;
  std::vector<HeadParams> heads;        // parallel to the dataset list
  std::vector<std::string> head_scopes; // "head.<dataset>" array-name prefixes
  AdamW optimizer;
  std::int64_t step = 0;
};

TrainState init_train_state(const FrozenBackbone& backbone, const PromptConfig& prompt_config,
                            const std::vector<DatasetEntry>& datasets, std::uint64_t seed);

// prompt + head arrays with checkpoint/optimizer names for one dataset
std::vector<NamedTensor> scoped_trainables(const TrainState& state, std::size_t dataset_idx);
// every trainable array in the state (all datasets)
std::vector<NamedTensor> all_trainables(const TrainState& state);

struct Census {
  std::size_t trainable_count = 0;
  std::size_t backbone_count = 0;
  double ratio = 0.0;
};

// Direct count over the materialized trainable arrays and the backbone's
// parameter inventory.
Census trainable_census(const TrainState& state);
std::size_t backbone_count_from_specs(const ModelConfig& config);

// task loss on one minibatch (cross-entropy per head kind; QA averages the
// start and end losses)
Tensor build_loss(const FrozenBackbone& backbone, const PromptParams& prompts, const HeadParams& head,
                  const TaskSpec& spec, const MiniBatch& mb, const ForwardMode& mode = {});

// logits used for checkpoint round-trip checks: classification [B, C],
// tagging [B, T, C], span [B, T, 2]
Tensor task_logits(const FrozenBackbone& backbone, const PromptParams& prompts, const HeadParams& head,
                   const TaskSpec& spec, const MiniBatch& mb, const ForwardMode& mode = {});

// dev metric: accuracy (classification), span micro-F1 (ner/srl), mean QA F1
double evaluate(const FrozenBackbone& backbone, const PromptParams& prompts, const HeadParams& head,
                const TaskSpec& spec, const std::vector<EncodedExample>& dev, const Tokenizer* tok,
                int eval_batch_size = 32);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  std::vector<double> dev_metrics;  // per dataset
  double mean_dev = 0.0;
};

struct TrainStats {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_mean_dev = 0.0;
  double final_mean_dev = 0.0;
  PromptParams best_prompts;
  std::vector<HeadParams> best_heads;
};

// Joint loop: per-epoch batch schedule concatenates every dataset's shuffled
// batches (size-proportional by construction) and shuffles the interleaving.
// Shared prompts receive gradients from every batch; each head only from its
// own dataset's batches.
TrainStats train_loop(TrainState& state, const std::vector<DatasetEntry>& datasets,
                      const TrainConfig& cfg, const Tokenizer* tok);

// single-dataset wrapper over the same scheduler
TrainStats train(TrainState& state, const DatasetEntry& dataset, const TrainConfig& cfg,
                 const Tokenizer* tok);

// Per-task finetune phase: prompts and the chosen head are copied from the
// joint state as initialization; optimizer state starts fresh.
TrainState spawn_finetune(const TrainState& joint, std::size_t dataset_idx);

struct MultiTaskPlan {
  PromptConfig prompt_config;
  std::vector<DatasetEntry> datasets;
  bool per_task_finetune = false;
  int finetune_epochs = 0;  // 0 -> same as joint epochs
};

struct MultiTaskResult {
  TrainStats joint;
  TrainState joint_state;                 // after the joint phase
  std::vector<TrainStats> finetune;       // per dataset when enabled
  std::vector<TrainState> finetune_states;
};

MultiTaskResult train_multitask(const FrozenBackbone& backbone, const MultiTaskPlan& plan,
                                const TrainConfig& cfg, const Tokenizer* tok);

// --- checkpoint container ---

struct CheckpointBlob {
  std::uint32_t version = 0;
  std::uint64_t model_hash = 0;
  PromptConfig prompt_config;
  std::string metrics_json;
  std::vector<std::pair<std::string, Tensor>> arrays;
};

constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::string& metrics_json,
                     const std::string& path);
CheckpointBlob read_checkpoint(const std::string& path);

// Rebuilds a train state from a blob; the backbone's config hash must match.
TrainState load_checkpoint(const std::string& path, const FrozenBackbone& backbone,
                           const std::vector<DatasetEntry>& datasets);

}  // namespace ptune
