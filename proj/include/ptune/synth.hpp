#pragma once

// Procedurally generated desk-scale tasks with known Bayes-optimal accuracy:
// trigger-word classification, marker-pattern NER, and copy-span QA. Fully
// reproducible from (kind, difficulty, seed).

#include <cstdint>
#include <utility>
#include <vector>

#include "ptune/tasks.hpp"

namespace ptune {

struct SynthTask {
  TaskSpec spec;
  Tokenizer tokenizer;
  std::vector<EncodedExample> train, dev;

  // raw material kept for oracle checks and per-head re-encoding
  std::vector<std::pair<std::string, int>> train_raw, dev_raw;  // classification: (text, label)
  std::vector<std::vector<std::string>> dev_tokens;             // ner: words per dev sentence
  std::vector<SpanSet> dev_spans;                               // ner: gold spans
  std::vector<QaRecord> train_qa, dev_qa;                       // qa records

  static constexpr const char* kTrigger = "zug";   // classification trigger word
  static constexpr const char* kMarker = "near";   // ner: entity follows this word
  static constexpr const char* kQaMarker = "key";  // qa: answer follows this word
};

SynthTask synth_task(TaskKind kind, int difficulty, std::uint64_t seed);

// Model config wired to a tokenizer's vocabulary and special ids.
ModelConfig make_model_config(const Tokenizer& tok, int num_layers, int hidden_size, int num_heads,
                              int ffn_size, int max_positions);

// Re-encode a synthetic classification task for a different head (the
// verbalizer arm inserts [MASK]); returns the updated spec and examples.
struct ReencodedClassification {
  TaskSpec spec;
  std::vector<EncodedExample> train, dev;
};
ReencodedClassification reencode_classification(const SynthTask& task, HeadKind head_kind);

}  // namespace ptune
