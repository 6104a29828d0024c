#pragma once

// Task formulations and data plumbing: classification, IOB2 tagging (NER),
// extractive QA with unanswerables, and SRL with the target verb appended to
// the sequence end. Includes the CoNLL column loader and the QA JSON loader.

#include <set>
#include <string>
#include <vector>

#include "ptune/heads.hpp"
#include "ptune/tokenizer.hpp"

namespace ptune {

enum class TaskKind { kClassification, kNer, kQa, kSrl };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

constexpr int kIgnoreIndex = -100;

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kClassification;
  std::vector<std::string> label_set;  // class names, or IOB2 tags for tagging tasks
  HeadSpec head;
  int prompt_length_hint = 8;
  double qa_null_threshold = 0.0;
  int qa_max_span_len = static_cast<int>(kDefaultMaxSpanLen);

  void validate(int vocab_size) const;
  int label_index(const std::string& label) const;  // DataError on unknown
};

struct EncodedExample {
  std::vector<int> token_ids;

  int class_label = -1;                  // classification
  std::vector<int> tag_ids;              // ner/srl; kIgnoreIndex at special positions
  int start_token = -1;                  // qa; end_token exclusive
  int end_token = -1;
  bool is_impossible = false;
  int verb_token_position = -1;          // srl

  // qa eval context
  int context_begin = -1;                // token window eligible as answers
  int context_end = -1;
  std::vector<std::string> gold_answers;  // empty when impossible
};

// --- IOB2 spans ---

struct LabeledSpan {
  std::string label;
  int start = 0;  // token index
  int end = 0;    // exclusive

  auto operator<=>(const LabeledSpan&) const = default;
};

using SpanSet = std::set<LabeledSpan>;

// Maximal B-X (I-X)* runs. Orphan I-X opens a new span (treated as B-X).
SpanSet iob2_to_spans(const std::vector<std::string>& tags);
std::vector<std::string> spans_to_iob2(const SpanSet& spans, std::size_t len);

// --- file loaders ---

struct ConllSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

// Blank-line separated sentences; token in column 0, tag in the last column.
// Orphan I-X tags are repaired to B-X with a warning. Ragged rows raise
// DataError with the offending line number.
std::vector<ConllSentence> load_conll_columns(const std::string& path,
                                              std::vector<std::string>* warnings = nullptr);

struct QaAnswer {
  std::string text;
  int answer_start = -1;  // character offset into the context
};

struct QaRecord {
  std::string question;
  std::string context;
  std::vector<QaAnswer> answers;
  bool is_impossible = false;
};

// One JSON document per dataset: a list of records with fields
// {question, context, answers: [{text, answer_start}], is_impossible}.
std::vector<QaRecord> load_qa_json(const std::string& path);

// --- per-task encoders ---

EncodedExample encode_ner(const std::vector<std::string>& tokens, const std::vector<std::string>& tags,
                          const TaskSpec& spec, const Tokenizer& tok);

// texts: one or two segments; [MASK] appended when the head is a verbalizer
EncodedExample encode_classification(const std::vector<std::string>& texts, int label,
                                     const TaskSpec& spec, const Tokenizer& tok);

EncodedExample encode_qa(const std::string& question, const std::string& context,
                         const std::vector<QaAnswer>& answers, bool is_impossible,
                         const TaskSpec& spec, const Tokenizer& tok);

EncodedExample encode_srl(const std::vector<std::string>& tokens, int verb_index,
                          const std::vector<std::string>& tags, const TaskSpec& spec,
                          const Tokenizer& tok);

// gold span set recovered from an encoded tagging example (ignores specials)
SpanSet gold_spans(const EncodedExample& ex, const TaskSpec& spec);

// --- batching ---

struct MiniBatch {
  Batch batch;
  std::vector<int> class_labels;             // [B]
  std::vector<int> tag_targets;              // [B*T], kIgnoreIndex padded
  std::vector<int> start_targets, end_targets;  // [B]
  std::vector<std::size_t> example_indices;  // into the source set
};

MiniBatch make_minibatch(const std::vector<EncodedExample>& set,
                         const std::vector<std::size_t>& indices, int pad_id);

}  // namespace ptune
