#include "ptune/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace ptune {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("TrainConfig: learning_rate must be positive");
  if (batch_size <= 0) throw ConfigError("TrainConfig: batch_size must be positive");
  if (epochs <= 0) throw ConfigError("TrainConfig: epochs must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("TrainConfig: dropout must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
    throw ConfigError("TrainConfig: warmup_fraction must be in [0,1]");
  if (optimizer != "adamw") throw ConfigError("TrainConfig: unsupported optimizer " + optimizer);
}

std::string TrainConfig::to_json() const {
  json j;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["dropout"] = dropout;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  j["optimizer"] = optimizer;
  j["warmup_fraction"] = warmup_fraction;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.dropout = j.value("dropout", c.dropout);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.validate();
  return c;
}

void AdamW::step(const std::vector<NamedTensor>& params, double lr, double weight_decay) {
  for (const auto& p : params) {
    auto node = p.tensor.node();
    if (node->grad.empty()) continue;  // never touched by backward
    Slot& slot = slots_[p.name];
    if (slot.m.empty()) {
      slot.m.assign(node->value.size(), 0.0);
      slot.v.assign(node->value.size(), 0.0);
    }
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.t));
    for (std::size_t i = 0; i < node->value.size(); ++i) {
      const double g = node->grad[i];
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      node->value[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * node->value[i]);
    }
  }
}

std::vector<std::string> AdamW::tracked_names() const {
  std::vector<std::string> out;
  out.reserve(slots_.size());
  for (const auto& [name, slot] : slots_) {
    (void)slot;
    out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

TrainState init_train_state(const FrozenBackbone& backbone, const PromptConfig& prompt_config,
                            const std::vector<DatasetEntry>& datasets, std::uint64_t seed) {
  if (datasets.empty()) throw UsageError("init_train_state: no datasets");
  TrainState st;
  st.backbone = &backbone;
  st.prompts = init_prompts(prompt_config, backbone.config());
  for (const auto& ds : datasets) {
    ds.spec.validate(backbone.config().vocab_size);
    st.heads.push_back(
        HeadParams::init(ds.spec.head, backbone.config().hidden_size, fnv1a("head." + ds.name, seed)));
    st.head_scopes.push_back("head." + ds.name);
  }
  return st;
}

std::vector<NamedTensor> scoped_trainables(const TrainState& state, std::size_t dataset_idx) {
  std::vector<NamedTensor> out = state.prompts.trainable();
  const HeadParams& h = state.heads.at(dataset_idx);
  const std::string& scope = state.head_scopes.at(dataset_idx);
  if (h.w.defined()) out.push_back({scope + ".w", h.w});
  if (h.b.defined()) out.push_back({scope + ".b", h.b});
  return out;
}

std::vector<NamedTensor> all_trainables(const TrainState& state) {
  std::vector<NamedTensor> out = state.prompts.trainable();
  for (std::size_t i = 0; i < state.heads.size(); ++i) {
    const HeadParams& h = state.heads[i];
    if (h.w.defined()) out.push_back({state.head_scopes[i] + ".w", h.w});
    if (h.b.defined()) out.push_back({state.head_scopes[i] + ".b", h.b});
  }
  return out;
}

Census trainable_census(const TrainState& state) {
  Census c;
  for (const auto& p : all_trainables(state)) c.trainable_count += p.tensor.size();
  c.backbone_count = state.backbone->parameter_count();
  c.ratio = static_cast<double>(c.trainable_count) / static_cast<double>(c.backbone_count);
  return c;
}

std::size_t backbone_count_from_specs(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& spec : FrozenBackbone::parameter_specs(config)) n += numel(spec.shape);
  return n;
}

namespace {

std::vector<std::size_t> find_mask_positions(const MiniBatch& mb, int mask_id) {
  std::vector<std::size_t> out(mb.batch.batch_size);
  for (std::size_t b = 0; b < mb.batch.batch_size; ++b) {
    bool found = false;
    for (std::size_t t = 0; t < mb.batch.seq_len; ++t) {
      if (mb.batch.token_ids[b * mb.batch.seq_len + t] == mask_id) {
        out[b] = t;
        found = true;
        break;
      }
    }
    if (!found) throw DataError("verbalizer head: example has no [MASK] token");
  }
  return out;
}

Tensor gather_positions(const Tensor& hidden, const std::vector<std::size_t>& positions) {
  const std::size_t h = hidden.dim(2);
  std::vector<Tensor> rows;
  rows.reserve(positions.size());
  for (std::size_t b = 0; b < positions.size(); ++b) {
    Tensor row = slice(slice(hidden, 0, b, 1), 1, positions[b], 1);  // [1,1,H]
    rows.push_back(reshape(row, {1, h}));
  }
  return stack_rows(rows);  // [B, H]
}

// -1e9 additive mask at padded positions for span logits [B, T]
std::vector<double> span_pad_mask(const MiniBatch& mb) {
  std::vector<double> out(mb.batch.batch_size * mb.batch.seq_len, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mb.batch.attention_mask[i] == 0.0) out[i] = -1e9;
  return out;
}

}  // namespace

Tensor build_loss(const FrozenBackbone& backbone, const PromptParams& prompts, const HeadParams& head,
                  const TaskSpec& spec, const MiniBatch& mb, const ForwardMode& mode) {
  ForwardResult res = prompted_forward(backbone, prompts, mb.batch, mode);
  switch (head.spec.kind) {
    case HeadKind::kClsLinear:
      return cross_entropy(cls_linear(head, res.pooled), mb.class_labels, kIgnoreIndex);
    case HeadKind::kVerbalizer: {
      const auto positions = find_mask_positions(mb, backbone.config().mask_token_id);
      Tensor mask_hidden = gather_positions(res.hidden, positions);
      Tensor logits = verbalizer_logits(mask_hidden, head.spec.verbalizer_ids, backbone.token_table());
      return cross_entropy(logits, mb.class_labels, kIgnoreIndex);
    }
    case HeadKind::kTokenTagging: {
      Tensor logits = token_tagging(head, res.hidden);  // [B, T, C]
      const std::size_t c = logits.dim(2);
      return cross_entropy(reshape(logits, {mb.batch.batch_size * mb.batch.seq_len, c}), mb.tag_targets,
                           kIgnoreIndex);
    }
    case HeadKind::kSpan: {
      SpanLogits sl = span_logits(head, res.hidden);
      const auto pad = span_pad_mask(mb);
      Tensor start_loss = cross_entropy(add_const(sl.start, pad), mb.start_targets, kIgnoreIndex);
      Tensor end_loss = cross_entropy(add_const(sl.end, pad), mb.end_targets, kIgnoreIndex);
      return scale(add(start_loss, end_loss), 0.5);
    }
  }
  throw UsageError("build_loss: unknown head kind");
}

Tensor task_logits(const FrozenBackbone& backbone, const PromptParams& prompts, const HeadParams& head,
                   const TaskSpec& spec, const MiniBatch& mb, const ForwardMode& mode) {
  (void)spec;
  ForwardResult res = prompted_forward(backbone, prompts, mb.batch, mode);
  switch (head.spec.kind) {
    case HeadKind::kClsLinear:
      return cls_linear(head, res.pooled);
    case HeadKind::kVerbalizer: {
      const auto positions = find_mask_positions(mb, backbone.config().mask_token_id);
      return verbalizer_logits(gather_positions(res.hidden, positions), head.spec.verbalizer_ids,
                               backbone.token_table());
    }
    case HeadKind::kTokenTagging:
      return token_tagging(head, res.hidden);
    case HeadKind::kSpan: {
      SpanLogits sl = span_logits(head, res.hidden);
      return concat(reshape(sl.start, {mb.batch.batch_size, mb.batch.seq_len, 1}),
                    reshape(sl.end, {mb.batch.batch_size, mb.batch.seq_len, 1}), 2);
    }
  }
  throw UsageError("task_logits: unknown head kind");
}

namespace {

std::vector<std::vector<std::size_t>> chunk_indices(std::size_t n, int batch_size,
                                                    std::vector<std::size_t> order) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(n, i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return out;
}

void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.uniform_int(i)]);
}

double grad_norm(const std::vector<NamedTensor>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.node()->grad) s += g * g;
  }
  return std::sqrt(s);
}

double lr_at(double base, std::int64_t step1, std::int64_t total, double warmup_fraction) {
  const auto warm = static_cast<std::int64_t>(warmup_fraction * static_cast<double>(total));
  if (warm > 0 && step1 <= warm) return base * static_cast<double>(step1) / static_cast<double>(warm);
  if (total <= warm) return base;
  return base * static_cast<double>(total - step1) / static_cast<double>(total - warm);
}

}  // namespace

double evaluate(const FrozenBackbone& backbone, const PromptParams& prompts, const HeadParams& head,
                const TaskSpec& spec, const std::vector<EncodedExample>& dev, const Tokenizer* tok,
                int eval_batch_size) {
  if (dev.empty()) throw UsageError("evaluate: empty dev set");
  const int pad = backbone.config().pad_token_id;

  std::size_t correct = 0, total = 0;
  std::vector<SpanSet> pred_spans, gold;
  double f1_sum = 0.0;

  std::vector<std::size_t> order(dev.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (const auto& chunk : chunk_indices(dev.size(), eval_batch_size, order)) {
    MiniBatch mb = make_minibatch(dev, chunk, pad);
    Tensor logits = task_logits(backbone, prompts, head, spec, mb);
    const auto& lv = logits.value();

    switch (head.spec.kind) {
      case HeadKind::kClsLinear:
      case HeadKind::kVerbalizer: {
        const std::size_t c = logits.dim(1);
        for (std::size_t b = 0; b < mb.batch.batch_size; ++b) {
          std::size_t arg = 0;
          for (std::size_t j = 1; j < c; ++j)
            if (lv[b * c + j] > lv[b * c + arg]) arg = j;
          if (static_cast<int>(arg) == mb.class_labels[b]) ++correct;
          ++total;
        }
        break;
      }
      case HeadKind::kTokenTagging: {
        const std::size_t c = logits.dim(2);
        const std::size_t t_len = mb.batch.seq_len;
        for (std::size_t b = 0; b < mb.batch.batch_size; ++b) {
          std::vector<std::string> tags;
          for (std::size_t t = 0; t < t_len; ++t) {
            if (mb.tag_targets[b * t_len + t] == kIgnoreIndex) continue;
            const double* row = lv.data() + (b * t_len + t) * c;
            std::size_t arg = 0;
            for (std::size_t j = 1; j < c; ++j)
              if (row[j] > row[arg]) arg = j;
            tags.push_back(spec.label_set[arg]);
          }
          pred_spans.push_back(iob2_to_spans(tags));
          gold.push_back(gold_spans(dev[mb.example_indices[b]], spec));
        }
        break;
      }
      case HeadKind::kSpan: {
        const std::size_t t_len = mb.batch.seq_len;
        for (std::size_t b = 0; b < mb.batch.batch_size; ++b) {
          const EncodedExample& ex = dev[mb.example_indices[b]];
          std::vector<double> s(t_len), e(t_len);
          for (std::size_t t = 0; t < t_len; ++t) {
            s[t] = lv[(b * t_len + t) * 2 + 0];
            e[t] = lv[(b * t_len + t) * 2 + 1];
          }
          SpanPrediction pred = decode_span(s, e, 0, static_cast<std::size_t>(ex.context_begin),
                                            static_cast<std::size_t>(ex.context_end),
                                            static_cast<std::size_t>(spec.qa_max_span_len),
                                            spec.qa_null_threshold);
          std::string text;
          if (!pred.is_null && tok != nullptr) {
            std::vector<int> ids(ex.token_ids.begin() + pred.start, ex.token_ids.begin() + pred.end);
            text = tok->decode(ids);
          }
          f1_sum += qa_em_f1(text, ex.gold_answers).f1;
          ++total;
        }
        break;
      }
    }
  }

  switch (head.spec.kind) {
    case HeadKind::kClsLinear:
    case HeadKind::kVerbalizer:
      return static_cast<double>(correct) / static_cast<double>(total);
    case HeadKind::kTokenTagging:
      return micro_f1(pred_spans, gold).f1;
    default:
      return f1_sum / static_cast<double>(total);
  }
}

TrainStats train_loop(TrainState& state, const std::vector<DatasetEntry>& datasets,
                      const TrainConfig& cfg, const Tokenizer* tok) {
  cfg.validate();
  if (state.heads.size() != datasets.size())
    throw UsageError("train_loop: state was initialized for a different dataset list");
  const FrozenBackbone& bb = *state.backbone;
  const int pad = bb.config().pad_token_id;

  std::int64_t steps_per_epoch = 0;
  for (const auto& ds : datasets)
    steps_per_epoch += static_cast<std::int64_t>(
        (ds.train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
        static_cast<std::size_t>(cfg.batch_size));
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  Rng dropout_rng(fnv1a("dropout", cfg.seed));
  TrainStats stats;
  std::int64_t global_step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // per-dataset shuffles keyed by dataset name, then a shuffled interleave
    std::vector<std::pair<std::size_t, std::vector<std::size_t>>> schedule;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      const auto& ds = datasets[d];
      if (ds.train.empty()) continue;
      std::vector<std::size_t> order(ds.train.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle_rng(fnv1a("shuffle." + ds.name, cfg.seed) ^ static_cast<std::uint64_t>(epoch));
      fisher_yates(order, shuffle_rng);
      for (auto& chunk : chunk_indices(ds.train.size(), cfg.batch_size, std::move(order)))
        schedule.emplace_back(d, std::move(chunk));
    }
    {
      std::vector<std::size_t> perm(schedule.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      Rng sched_rng(fnv1a("schedule", cfg.seed) ^ static_cast<std::uint64_t>(epoch));
      fisher_yates(perm, sched_rng);
      std::vector<std::pair<std::size_t, std::vector<std::size_t>>> shuffled;
      shuffled.reserve(schedule.size());
      for (std::size_t i : perm) shuffled.push_back(std::move(schedule[i]));
      schedule = std::move(shuffled);
    }

    double loss_sum = 0.0;
    for (const auto& [d, chunk] : schedule) {
      MiniBatch mb = make_minibatch(datasets[d].train, chunk, pad);
      auto params = scoped_trainables(state, d);
      for (const auto& p : params) p.tensor.node()->grad.assign(p.tensor.size(), 0.0);

      ForwardMode mode;
      mode.training = true;
      mode.dropout_rate = cfg.dropout;
      mode.rng = &dropout_rng;

      Tensor loss = build_loss(bb, state.prompts, state.heads[d], datasets[d].spec, mb, mode);
      backward(loss);

      ++global_step;
      const double lr = lr_at(cfg.learning_rate, global_step, total_steps, cfg.warmup_fraction);
      const double gn = grad_norm(params);
      if (!std::isfinite(loss.value()[0]) || !std::isfinite(gn)) {
        throw TrainDiverged("training diverged at step " + std::to_string(global_step) + " (lr " +
                            std::to_string(lr) + ", loss " + std::to_string(loss.value()[0]) +
                            ", grad norm " + std::to_string(gn) + ")");
      }
      state.optimizer.step(params, lr, cfg.weight_decay);
      state.step = global_step;
      loss_sum += loss.value()[0];
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = schedule.empty() ? 0.0 : loss_sum / static_cast<double>(schedule.size());
    double dev_sum = 0.0;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      const double m = datasets[d].dev.empty()
                           ? 0.0
                           : evaluate(bb, state.prompts, state.heads[d], datasets[d].spec,
                                      datasets[d].dev, tok);
      rec.dev_metrics.push_back(m);
      dev_sum += m;
    }
    rec.mean_dev = dev_sum / static_cast<double>(datasets.size());
    stats.history.push_back(rec);

    if (stats.best_epoch < 0 || rec.mean_dev > stats.best_mean_dev) {
      stats.best_epoch = epoch;
      stats.best_mean_dev = rec.mean_dev;
      stats.best_prompts = state.prompts.clone();
      stats.best_heads.clear();
      for (const auto& h : state.heads) stats.best_heads.push_back(h.clone());
    }
  }

  stats.final_mean_dev = stats.history.empty() ? 0.0 : stats.history.back().mean_dev;
  return stats;
}

TrainStats train(TrainState& state, const DatasetEntry& dataset, const TrainConfig& cfg,
                 const Tokenizer* tok) {
  return train_loop(state, {dataset}, cfg, tok);
}

TrainState spawn_finetune(const TrainState& joint, std::size_t dataset_idx) {
  if (dataset_idx >= joint.heads.size()) throw UsageError("spawn_finetune: dataset index out of range");
  TrainState st;
  st.backbone = joint.backbone;
  st.prompts = joint.prompts.clone();
  st.heads.push_back(joint.heads[dataset_idx].clone());
  st.head_scopes.push_back(joint.head_scopes[dataset_idx]);
  return st;
}

MultiTaskResult train_multitask(const FrozenBackbone& backbone, const MultiTaskPlan& plan,
                                const TrainConfig& cfg, const Tokenizer* tok) {
  if (plan.datasets.empty()) throw UsageError("train_multitask: no datasets");
  const TaskKind kind = plan.datasets.front().spec.kind;
  for (const auto& ds : plan.datasets) {
    if (ds.spec.kind != kind)
      throw ConfigError("train_multitask: dataset " + ds.name + " has kind " + to_string(ds.spec.kind) +
                        ", plan requires " + to_string(kind));
  }

  MultiTaskResult result;
  result.joint_state = init_train_state(backbone, plan.prompt_config, plan.datasets, cfg.seed);
  result.joint = train_loop(result.joint_state, plan.datasets, cfg, tok);

  if (plan.per_task_finetune) {
    TrainConfig ft_cfg = cfg;
    if (plan.finetune_epochs > 0) ft_cfg.epochs = plan.finetune_epochs;
    for (std::size_t d = 0; d < plan.datasets.size(); ++d) {
      TrainState st = spawn_finetune(result.joint_state, d);
      result.finetune.push_back(train(st, plan.datasets[d], ft_cfg, tok));
      result.finetune_states.push_back(std::move(st));
    }
  }
  return result;
}

}  // namespace ptune
