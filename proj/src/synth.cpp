#include "ptune/synth.hpp"

#include <algorithm>
#include <set>

namespace ptune {

namespace {

std::vector<std::string> make_pool(const char* stem, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

constexpr int kTrainCount = 200;
constexpr int kDevCount = 100;

SynthTask make_classification(int difficulty, std::uint64_t seed) {
  Rng rng(fnv1a("synth.classification", seed ^ 0x5eedull));
  const auto fillers = make_pool("fill", 16 + 8 * difficulty);
  const int len = 6 + 2 * difficulty;

  SynthTask task;
  auto sample = [&](bool positive) {
    std::vector<std::string> words;
    for (int i = 0; i < len; ++i)
      words.push_back(fillers[rng.uniform_int(fillers.size())]);
    if (positive) words[rng.uniform_int(words.size())] = SynthTask::kTrigger;
    return join(words);
  };

  for (int i = 0; i < kTrainCount; ++i) task.train_raw.emplace_back(sample(i % 2 == 1), i % 2);
  for (int i = 0; i < kDevCount; ++i) task.dev_raw.emplace_back(sample(i % 2 == 1), i % 2);

  std::vector<std::string> corpus = {SynthTask::kTrigger, "true", "false"};
  for (const auto& w : fillers) corpus.push_back(w);
  task.tokenizer = Tokenizer::build(corpus);

  task.spec.name = "synth-trigger";
  task.spec.kind = TaskKind::kClassification;
  task.spec.label_set = {"false", "true"};  // label 1 <=> trigger present
  task.spec.head.kind = HeadKind::kClsLinear;
  task.spec.head.num_labels = 2;
  task.spec.prompt_length_hint = 8;
  task.spec.validate(task.tokenizer.vocab_size());

  for (const auto& [text, label] : task.train_raw)
    task.train.push_back(encode_classification({text}, label, task.spec, task.tokenizer));
  for (const auto& [text, label] : task.dev_raw)
    task.dev.push_back(encode_classification({text}, label, task.spec, task.tokenizer));
  return task;
}

SynthTask make_ner(int difficulty, std::uint64_t seed) {
  Rng rng(fnv1a("synth.ner", seed ^ 0x5eedull));
  const auto fillers = make_pool("fill", 16 + 8 * difficulty);
  const auto entities = make_pool("ent", 8 + 4 * difficulty);
  const int base_len = 8 + 2 * difficulty;

  SynthTask task;
  std::vector<std::vector<std::string>> train_tokens;
  std::vector<SpanSet> train_spans;

  auto sample = [&](std::vector<std::string>& words, SpanSet& spans) {
    words.clear();
    spans.clear();
    for (int i = 0; i < base_len; ++i)
      words.push_back(fillers[rng.uniform_int(fillers.size())]);
    if (rng.uniform() < 0.75) {
      // marker followed by exactly two entity words
      const int pos = static_cast<int>(rng.uniform_int(words.size() - 2));
      words[pos] = SynthTask::kMarker;
      words[pos + 1] = entities[rng.uniform_int(entities.size())];
      words[pos + 2] = entities[rng.uniform_int(entities.size())];
      spans.insert({"ENT", pos + 1, pos + 3});
    }
  };

  for (int i = 0; i < kTrainCount; ++i) {
    std::vector<std::string> words;
    SpanSet spans;
    sample(words, spans);
    train_tokens.push_back(words);
    train_spans.push_back(spans);
  }
  for (int i = 0; i < kDevCount; ++i) {
    std::vector<std::string> words;
    SpanSet spans;
    sample(words, spans);
    task.dev_tokens.push_back(words);
    task.dev_spans.push_back(spans);
  }

  std::vector<std::string> corpus = {SynthTask::kMarker};
  for (const auto& w : fillers) corpus.push_back(w);
  for (const auto& w : entities) corpus.push_back(w);
  task.tokenizer = Tokenizer::build(corpus);

  task.spec.name = "synth-marker-ner";
  task.spec.kind = TaskKind::kNer;
  task.spec.label_set = {"O", "B-ENT", "I-ENT"};
  task.spec.head.kind = HeadKind::kTokenTagging;
  task.spec.head.num_labels = 3;
  task.spec.prompt_length_hint = 16;
  task.spec.validate(task.tokenizer.vocab_size());

  for (std::size_t i = 0; i < train_tokens.size(); ++i) {
    const auto tags = spans_to_iob2(train_spans[i], train_tokens[i].size());
    task.train.push_back(encode_ner(train_tokens[i], tags, task.spec, task.tokenizer));
  }
  for (std::size_t i = 0; i < task.dev_tokens.size(); ++i) {
    const auto tags = spans_to_iob2(task.dev_spans[i], task.dev_tokens[i].size());
    task.dev.push_back(encode_ner(task.dev_tokens[i], tags, task.spec, task.tokenizer));
  }
  return task;
}

SynthTask make_qa(int difficulty, std::uint64_t seed) {
  Rng rng(fnv1a("synth.qa", seed ^ 0x5eedull));
  const auto fillers = make_pool("fill", 16 + 8 * difficulty);
  const auto answers = make_pool("ans", 8 + 4 * difficulty);
  const int ctx_len = 10 + 3 * difficulty;

  SynthTask task;
  auto sample = [&]() {
    QaRecord rec;
    rec.question = SynthTask::kQaMarker;
    std::vector<std::string> words;
    for (int i = 0; i < ctx_len; ++i)
      words.push_back(fillers[rng.uniform_int(fillers.size())]);
    if (rng.uniform() < 0.8) {
      const int pos = static_cast<int>(rng.uniform_int(words.size() - 2));
      words[pos] = SynthTask::kQaMarker;
      words[pos + 1] = answers[rng.uniform_int(answers.size())];
      words[pos + 2] = answers[rng.uniform_int(answers.size())];
      rec.context = join(words);
      // char offset of the two answer words
      std::size_t off = 0;
      for (int i = 0; i < pos + 1; ++i) off += words[static_cast<std::size_t>(i)].size() + 1;
      rec.answers.push_back({words[pos + 1] + " " + words[pos + 2], static_cast<int>(off)});
    } else {
      rec.context = join(words);
      rec.is_impossible = true;
    }
    return rec;
  };

  for (int i = 0; i < kTrainCount; ++i) task.train_qa.push_back(sample());
  for (int i = 0; i < kDevCount; ++i) task.dev_qa.push_back(sample());

  std::vector<std::string> corpus = {SynthTask::kQaMarker};
  for (const auto& w : fillers) corpus.push_back(w);
  for (const auto& w : answers) corpus.push_back(w);
  task.tokenizer = Tokenizer::build(corpus);

  task.spec.name = "synth-copyspan-qa";
  task.spec.kind = TaskKind::kQa;
  task.spec.label_set = {"start", "end"};
  task.spec.head.kind = HeadKind::kSpan;
  task.spec.head.num_labels = 2;
  task.spec.prompt_length_hint = 16;
  task.spec.validate(task.tokenizer.vocab_size());

  for (const auto& rec : task.train_qa)
    task.train.push_back(
        encode_qa(rec.question, rec.context, rec.answers, rec.is_impossible, task.spec, task.tokenizer));
  for (const auto& rec : task.dev_qa)
    task.dev.push_back(
        encode_qa(rec.question, rec.context, rec.answers, rec.is_impossible, task.spec, task.tokenizer));
  return task;
}

}  // namespace

SynthTask synth_task(TaskKind kind, int difficulty, std::uint64_t seed) {
  if (difficulty < 0) throw ConfigError("synth_task: difficulty must be >= 0");
  switch (kind) {
    case TaskKind::kClassification: return make_classification(difficulty, seed);
    case TaskKind::kNer: return make_ner(difficulty, seed);
    case TaskKind::kQa: return make_qa(difficulty, seed);
    default: throw ConfigError("synth_task: unsupported kind " + to_string(kind));
  }
}

ModelConfig make_model_config(const Tokenizer& tok, int num_layers, int hidden_size, int num_heads,
                              int ffn_size, int max_positions) {
  ModelConfig mc;
  mc.num_layers = num_layers;
  mc.hidden_size = hidden_size;
  mc.num_heads = num_heads;
  mc.ffn_size = ffn_size;
  mc.vocab_size = tok.vocab_size();
  mc.max_positions = max_positions;
  mc.pad_token_id = tok.pad_id();
  mc.mask_token_id = tok.mask_id();
  mc.cls_token_id = tok.cls_id();
  mc.sep_token_id = tok.sep_id();
  mc.validate();
  return mc;
}

ReencodedClassification reencode_classification(const SynthTask& task, HeadKind head_kind) {
  if (task.spec.kind != TaskKind::kClassification)
    throw UsageError("reencode_classification: not a classification task");
  ReencodedClassification out;
  out.spec = task.spec;
  out.spec.head.kind = head_kind;
  out.spec.head.verbalizer_ids.clear();
  if (head_kind == HeadKind::kVerbalizer) {
    for (const auto& label : out.spec.label_set)
      out.spec.head.verbalizer_ids.push_back(task.tokenizer.id(label));
  }
  out.spec.validate(task.tokenizer.vocab_size());
  for (const auto& [text, label] : task.train_raw)
    out.train.push_back(encode_classification({text}, label, out.spec, task.tokenizer));
  for (const auto& [text, label] : task.dev_raw)
    out.dev.push_back(encode_classification({text}, label, out.spec, task.tokenizer));
  return out;
}

}  // namespace ptune
