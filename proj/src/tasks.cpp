#include "ptune/tasks.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ptune/metrics.hpp"

namespace ptune {

using json = nlohmann::json;

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kClassification: return "classification";
    case TaskKind::kNer: return "ner";
    case TaskKind::kQa: return "qa";
    default: return "srl";
  }
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::kClassification;
  if (s == "ner") return TaskKind::kNer;
  if (s == "qa") return TaskKind::kQa;
  if (s == "srl") return TaskKind::kSrl;
  throw ConfigError("unknown task kind: " + s);
}

void TaskSpec::validate(int vocab_size) const {
  if (label_set.empty()) throw ConfigError("TaskSpec: label_set must be non-empty");
  head.validate(vocab_size);
  const bool ok = (kind == TaskKind::kClassification &&
                   (head.kind == HeadKind::kClsLinear || head.kind == HeadKind::kVerbalizer)) ||
                  ((kind == TaskKind::kNer || kind == TaskKind::kSrl) &&
                   head.kind == HeadKind::kTokenTagging) ||
                  (kind == TaskKind::kQa && head.kind == HeadKind::kSpan);
  if (!ok)
    throw ConfigError("TaskSpec: head kind " + to_string(head.kind) + " incompatible with task " +
                      to_string(kind));
  if (head.kind != HeadKind::kSpan &&
      head.num_labels != static_cast<int>(label_set.size()))
    throw ConfigError("TaskSpec: num_labels must equal label_set size");
}

int TaskSpec::label_index(const std::string& label) const {
  auto it = std::find(label_set.begin(), label_set.end(), label);
  if (it == label_set.end()) throw DataError("unknown label: " + label);
  return static_cast<int>(it - label_set.begin());
}

SpanSet iob2_to_spans(const std::vector<std::string>& tags) {
  SpanSet spans;
  std::string open_label;
  int open_start = -1;
  auto close = [&](int end) {
    if (open_start >= 0) spans.insert({open_label, open_start, end});
    open_start = -1;
    open_label.clear();
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const std::string& t = tags[i];
    if (t == "O" || t.empty()) {
      close(i);
    } else if (t.size() > 2 && (t[0] == 'B' || t[0] == 'I') && t[1] == '-') {
      const std::string label = t.substr(2);
      if (t[0] == 'B' || open_start < 0 || label != open_label) {
        close(i);  // orphan I-X starts a new span, same as B-X
        open_label = label;
        open_start = i;
      }
    } else {
      throw DataError("invalid IOB2 tag: " + t);
    }
  }
  close(static_cast<int>(tags.size()));
  return spans;
}

std::vector<std::string> spans_to_iob2(const SpanSet& spans, std::size_t len) {
  std::vector<std::string> tags(len, "O");
  for (const auto& s : spans) {
    if (s.start < 0 || s.end <= s.start || s.end > static_cast<int>(len))
      throw UsageError("spans_to_iob2: span out of range");
    tags[s.start] = "B-" + s.label;
    for (int i = s.start + 1; i < s.end; ++i) tags[i] = "I-" + s.label;
  }
  return tags;
}

std::vector<ConllSentence> load_conll_columns(const std::string& path,
                                              std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);

  std::vector<ConllSentence> out;
  ConllSentence cur;
  int cur_cols = -1;
  std::string line;
  int line_no = 0;
  auto flush = [&]() {
    if (!cur.tokens.empty()) out.push_back(std::move(cur));
    cur = {};
    cur_cols = -1;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::vector<std::string> cols;
    std::string w;
    while (ss >> w) cols.push_back(w);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols.size() < 2)
      throw DataError("line " + std::to_string(line_no) + ": expected token and tag columns");
    if (cur_cols < 0) cur_cols = static_cast<int>(cols.size());
    if (static_cast<int>(cols.size()) != cur_cols)
      throw DataError("line " + std::to_string(line_no) + ": ragged columns (" +
                      std::to_string(cols.size()) + " vs " + std::to_string(cur_cols) + ")");
    cur.tokens.push_back(cols.front());
    cur.tags.push_back(cols.back());
  }
  flush();

  // IOB2 repair: orphan I-X becomes B-X
  for (auto& sent : out) {
    std::string prev = "O";
    for (std::size_t i = 0; i < sent.tags.size(); ++i) {
      std::string& t = sent.tags[i];
      if (t.size() > 2 && t[0] == 'I' && t[1] == '-') {
        const std::string label = t.substr(2);
        const bool continues = prev.size() > 2 && prev.substr(2) == label &&
                               (prev[0] == 'B' || prev[0] == 'I');
        if (!continues) {
          if (warnings != nullptr)
            warnings->push_back("orphan " + t + " repaired to B-" + label);
          t = "B-" + label;
        }
      }
      prev = t;
    }
  }
  return out;
}

std::vector<QaRecord> load_qa_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!j.is_array()) throw DataError(path + ": expected a top-level list of records");
  std::vector<QaRecord> out;
  for (const auto& r : j) {
    QaRecord rec;
    rec.question = r.at("question").get<std::string>();
    rec.context = r.at("context").get<std::string>();
    rec.is_impossible = r.value("is_impossible", false);
    for (const auto& a : r.value("answers", json::array())) {
      rec.answers.push_back({a.at("text").get<std::string>(), a.at("answer_start").get<int>()});
    }
    out.push_back(std::move(rec));
  }
  return out;
}

namespace {

std::vector<std::string> repair_iob2(const std::vector<std::string>& tags) {
  std::vector<std::string> out = tags;
  std::string prev = "O";
  for (auto& t : out) {
    if (t.size() > 2 && t[0] == 'I' && t[1] == '-') {
      const std::string label = t.substr(2);
      const bool continues = prev.size() > 2 && prev.substr(2) == label;
      if (!continues) t = "B-" + label;
    }
    prev = t;
  }
  return out;
}

}  // namespace

EncodedExample encode_ner(const std::vector<std::string>& tokens, const std::vector<std::string>& tags,
                          const TaskSpec& spec, const Tokenizer& tok) {
  if (tokens.size() != tags.size()) throw DataError("encode_ner: token/tag length mismatch");
  EncodedExample ex;
  ex.token_ids.push_back(tok.cls_id());
  ex.tag_ids.push_back(kIgnoreIndex);
  const auto fixed = repair_iob2(tags);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    ex.token_ids.push_back(tok.id(tokens[i]));
    ex.tag_ids.push_back(spec.label_index(fixed[i]));
  }
  ex.token_ids.push_back(tok.sep_id());
  ex.tag_ids.push_back(kIgnoreIndex);
  return ex;
}

EncodedExample encode_classification(const std::vector<std::string>& texts, int label,
                                     const TaskSpec& spec, const Tokenizer& tok) {
  if (texts.empty() || texts.size() > 2) throw DataError("encode_classification: one or two segments");
  if (label < 0 || label >= static_cast<int>(spec.label_set.size()))
    throw DataError("encode_classification: label out of range");
  EncodedExample ex;
  ex.token_ids.push_back(tok.cls_id());
  for (const auto& text : texts) {
    for (int id : tok.encode(text)) ex.token_ids.push_back(id);
    ex.token_ids.push_back(tok.sep_id());
  }
  if (spec.head.kind == HeadKind::kVerbalizer) {
    ex.token_ids.push_back(tok.mask_id());
    ex.token_ids.push_back(tok.sep_id());
  }
  ex.class_label = label;
  return ex;
}

EncodedExample encode_qa(const std::string& question, const std::string& context,
                         const std::vector<QaAnswer>& answers, bool is_impossible,
                         const TaskSpec& spec, const Tokenizer& tok) {
  (void)spec;
  EncodedExample ex;
  const auto q_words = split_words(question);
  const auto c_words = split_words(context);
  if (c_words.empty()) throw DataError("encode_qa: empty context");

  ex.token_ids.push_back(tok.cls_id());
  for (const auto& w : q_words) ex.token_ids.push_back(tok.id(w.text));
  ex.token_ids.push_back(tok.sep_id());
  ex.context_begin = static_cast<int>(ex.token_ids.size());
  for (const auto& w : c_words) ex.token_ids.push_back(tok.id(w.text));
  ex.context_end = static_cast<int>(ex.token_ids.size());
  ex.token_ids.push_back(tok.sep_id());

  if (is_impossible) {
    ex.is_impossible = true;
    ex.start_token = 0;  // null convention: empty span at [CLS]
    ex.end_token = 0;
    return ex;
  }

  if (answers.empty()) throw DataError("encode_qa: answerable example without answers");
  for (const auto& a : answers) ex.gold_answers.push_back(a.text);

  const QaAnswer& a = answers.front();
  const std::size_t c0 = static_cast<std::size_t>(a.answer_start);
  const std::size_t c1 = c0 + a.text.size();
  if (a.answer_start < 0 || c1 > context.size())
    throw DataError("encode_qa: answer offsets [" + std::to_string(c0) + ", " + std::to_string(c1) +
                    ") outside context of length " + std::to_string(context.size()));

  int ts = -1, te = -1;
  for (std::size_t i = 0; i < c_words.size(); ++i) {
    if (ts < 0 && c_words[i].begin <= c0 && c0 < c_words[i].end) ts = static_cast<int>(i);
    if (c_words[i].begin < c1 && c1 <= c_words[i].end) te = static_cast<int>(i);
  }
  if (ts < 0 || te < 0 || te < ts)
    throw DataError("encode_qa: answer offsets [" + std::to_string(c0) + ", " + std::to_string(c1) +
                    ") do not align with token boundaries");

  std::string joined;
  for (int i = ts; i <= te; ++i) {
    if (i > ts) joined += ' ';
    joined += c_words[static_cast<std::size_t>(i)].text;
  }
  if (normalize_answer(joined) != normalize_answer(a.text))
    throw DataError("encode_qa: answer offsets [" + std::to_string(c0) + ", " + std::to_string(c1) +
                    ") cross token boundaries: tokens read \"" + joined + "\", answer is \"" + a.text +
                    "\"");

  ex.start_token = ex.context_begin + ts;
  ex.end_token = ex.context_begin + te + 1;
  return ex;
}

EncodedExample encode_srl(const std::vector<std::string>& tokens, int verb_index,
                          const std::vector<std::string>& tags, const TaskSpec& spec,
                          const Tokenizer& tok) {
  if (verb_index < 0 || verb_index >= static_cast<int>(tokens.size()))
    throw DataError("encode_srl: verb_index " + std::to_string(verb_index) + " out of range");
  EncodedExample ex = encode_ner(tokens, tags, spec, tok);
  // target verb appended after the trailing [SEP], position recorded
  ex.token_ids.push_back(tok.id(tokens[static_cast<std::size_t>(verb_index)]));
  ex.tag_ids.push_back(kIgnoreIndex);
  ex.verb_token_position = static_cast<int>(ex.token_ids.size()) - 1;
  return ex;
}

SpanSet gold_spans(const EncodedExample& ex, const TaskSpec& spec) {
  std::vector<std::string> tags;
  for (int t : ex.tag_ids) {
    if (t == kIgnoreIndex) continue;
    tags.push_back(spec.label_set.at(static_cast<std::size_t>(t)));
  }
  return iob2_to_spans(tags);
}

MiniBatch make_minibatch(const std::vector<EncodedExample>& set,
                         const std::vector<std::size_t>& indices, int pad_id) {
  if (indices.empty()) throw UsageError("make_minibatch: empty index list");
  MiniBatch mb;
  mb.example_indices = indices;
  std::size_t max_len = 0;
  for (std::size_t i : indices) max_len = std::max(max_len, set[i].token_ids.size());

  mb.batch.batch_size = indices.size();
  mb.batch.seq_len = max_len;
  mb.batch.token_ids.assign(indices.size() * max_len, pad_id);
  mb.batch.attention_mask.assign(indices.size() * max_len, 0.0);
  mb.tag_targets.assign(indices.size() * max_len, kIgnoreIndex);

  for (std::size_t r = 0; r < indices.size(); ++r) {
    const EncodedExample& ex = set[indices[r]];
    for (std::size_t t = 0; t < ex.token_ids.size(); ++t) {
      mb.batch.token_ids[r * max_len + t] = ex.token_ids[t];
      mb.batch.attention_mask[r * max_len + t] = 1.0;
    }
    for (std::size_t t = 0; t < ex.tag_ids.size(); ++t) mb.tag_targets[r * max_len + t] = ex.tag_ids[t];
    mb.class_labels.push_back(ex.class_label);
    if (ex.is_impossible || ex.start_token < 0) {
      mb.start_targets.push_back(0);
      mb.end_targets.push_back(0);
    } else {
      mb.start_targets.push_back(ex.start_token);
      mb.end_targets.push_back(ex.end_token - 1);
    }
  }
  return mb;
}

}  // namespace ptune
