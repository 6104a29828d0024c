#include "ptune/heads.hpp"

#include <set>

namespace ptune {

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::kClsLinear: return "cls_linear";
    case HeadKind::kVerbalizer: return "verbalizer";
    case HeadKind::kTokenTagging: return "token_tagging";
    default: return "span";
  }
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "cls_linear") return HeadKind::kClsLinear;
  if (s == "verbalizer") return HeadKind::kVerbalizer;
  if (s == "token_tagging") return HeadKind::kTokenTagging;
  if (s == "span") return HeadKind::kSpan;
  throw ConfigError("unknown head kind: " + s);
}

void HeadSpec::validate(int vocab_size) const {
  if (num_labels <= 0) throw ConfigError("HeadSpec: num_labels must be positive");
  if (kind == HeadKind::kClsLinear || kind == HeadKind::kVerbalizer) {
    if (num_labels < 2) throw ConfigError("HeadSpec: classification needs >= 2 labels");
  }
  if (kind == HeadKind::kVerbalizer) {
    if (verbalizer_ids.size() != static_cast<std::size_t>(num_labels))
      throw ConfigError("HeadSpec: need one verbalizer id per label");
    std::set<int> uniq(verbalizer_ids.begin(), verbalizer_ids.end());
    if (uniq.size() != verbalizer_ids.size()) throw ConfigError("HeadSpec: verbalizer ids must be distinct");
    for (int id : verbalizer_ids) {
      if (id < 0 || id >= vocab_size)
        throw ConfigError("HeadSpec: verbalizer id " + std::to_string(id) + " outside vocabulary");
    }
  } else if (!verbalizer_ids.empty()) {
    throw ConfigError("HeadSpec: verbalizer_ids only apply to the verbalizer kind");
  }
}

HeadParams HeadParams::init(const HeadSpec& spec, int hidden_size, std::uint64_t seed) {
  HeadParams p;
  p.spec = spec;
  if (spec.kind == HeadKind::kVerbalizer) return p;  // nothing trainable
  const std::size_t h = static_cast<std::size_t>(hidden_size);
  const std::size_t out =
      spec.kind == HeadKind::kSpan ? 2 : static_cast<std::size_t>(spec.num_labels);
  Rng rng(seed);
  p.w = Tensor::randn({h, out}, rng, 0.02, /*requires_grad=*/true);
  p.b = Tensor::zeros({out}, /*requires_grad=*/true);
  return p;
}

std::vector<NamedTensor> HeadParams::trainable() const {
  std::vector<NamedTensor> out;
  if (w.defined()) out.push_back({"head.w", w});
  if (b.defined()) out.push_back({"head.b", b});
  return out;
}

std::size_t HeadParams::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : trainable()) n += p.tensor.size();
  return n;
}

HeadParams HeadParams::clone() const {
  HeadParams c;
  c.spec = spec;
  if (w.defined()) c.w = w.clone(true);
  if (b.defined()) c.b = b.clone(true);
  return c;
}

Tensor cls_linear(const HeadParams& head, const Tensor& pooled) {
  if (head.spec.kind != HeadKind::kClsLinear) throw UsageError("cls_linear: wrong head kind");
  return add_bias(matmul(pooled, head.w), head.b);
}

Tensor verbalizer_logits(const Tensor& mask_hidden, const std::vector<int>& verbalizer_ids,
                         const Tensor& tied_embedding_table) {
  if (mask_hidden.ndim() != 2) throw UsageError("verbalizer_logits: mask_hidden must be [B, H]");
  Tensor rows = embedding_lookup(tied_embedding_table, verbalizer_ids);  // [C, H]
  return matmul(mask_hidden, permute(rows, {1, 0}));                     // [B, C]
}

Tensor token_tagging(const HeadParams& head, const Tensor& hidden) {
  if (head.spec.kind != HeadKind::kTokenTagging) throw UsageError("token_tagging: wrong head kind");
  return add_bias(matmul(hidden, head.w), head.b);
}

SpanLogits span_logits(const HeadParams& head, const Tensor& hidden) {
  if (head.spec.kind != HeadKind::kSpan) throw UsageError("span_logits: wrong head kind");
  const std::size_t b = hidden.dim(0);
  const std::size_t t = hidden.dim(1);
  Tensor both = add_bias(matmul(hidden, head.w), head.b);  // [B, T, 2]
  SpanLogits out;
  out.start = reshape(slice(both, 2, 0, 1), {b, t});
  out.end = reshape(slice(both, 2, 1, 1), {b, t});
  return out;
}

SpanPrediction decode_span(const std::vector<double>& start_logits,
                           const std::vector<double>& end_logits, std::size_t cls_index,
                           std::size_t context_begin, std::size_t context_end,
                           std::size_t max_span_len, double null_threshold) {
  const std::size_t seq = start_logits.size();
  if (end_logits.size() != seq) throw UsageError("decode_span: start/end length mismatch");
  if (context_begin >= context_end || context_end > seq)
    throw DataError("decode_span: empty context window [" + std::to_string(context_begin) + ", " +
                    std::to_string(context_end) + ")");
  if (cls_index >= seq) throw UsageError("decode_span: cls index out of range");
  if (max_span_len == 0) throw UsageError("decode_span: max_span_len must be positive");

  bool found = false;
  std::size_t best_s = 0, best_e = 0;
  double best = 0.0;
  for (std::size_t s = context_begin; s < context_end; ++s) {
    const std::size_t e_hi = std::min(context_end, s + max_span_len);
    for (std::size_t e = s + 1; e <= e_hi; ++e) {
      const double sc = start_logits[s] + end_logits[e - 1];
      if (!found || sc > best) {
        found = true;
        best = sc;
        best_s = s;
        best_e = e;
      }
      // ties keep the earlier start / shorter span by iteration order
    }
  }

  const double null_score = start_logits[cls_index] + end_logits[cls_index];
  SpanPrediction pred;
  if (!found || best - null_score < null_threshold) {
    pred.start = static_cast<int>(cls_index);
    pred.end = static_cast<int>(cls_index);
    pred.score = null_score;
    pred.is_null = true;
  } else {
    pred.start = static_cast<int>(best_s);
    pred.end = static_cast<int>(best_e);
    pred.score = best;
    pred.is_null = false;
  }
  return pred;
}

}  // namespace ptune
