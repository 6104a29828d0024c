#pragma once

// Output heads over encoder states: linear classifier on the first-token
// state, verbalizer scoring against frozen tied input embeddings, per-token
// tagging, and extractive span start/end with null-answer thresholding.

#include <cstdint>
#include <string>
#include <vector>

#include "ptune/backbone.hpp"
#include "ptune/tensor.hpp"

namespace ptune {

enum class HeadKind { kClsLinear, kVerbalizer, kTokenTagging, kSpan };

std::string to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

struct HeadSpec {
  HeadKind kind = HeadKind::kClsLinear;
  int num_labels = 2;
  std::vector<int> verbalizer_ids;  // one vocabulary id per label, verbalizer kind only

  void validate(int vocab_size) const;
};

struct HeadParams {
  HeadSpec spec;
  Tensor w;  // [hidden, out]; verbalizer head has no trainable arrays
  Tensor b;  // [out]

  static HeadParams init(const HeadSpec& spec, int hidden_size, std::uint64_t seed);
  std::vector<NamedTensor> trainable() const;
  std::size_t trainable_count() const;
  HeadParams clone() const;
};

// pooled [B, H] -> logits [B, num_labels]
Tensor cls_linear(const HeadParams& head, const Tensor& pooled);

// mask_hidden [B, H] scored against the frozen embedding rows of the
// verbalizer tokens -> logits [B, num_labels]
Tensor verbalizer_logits(const Tensor& mask_hidden, const std::vector<int>& verbalizer_ids,
                         const Tensor& tied_embedding_table);

// hidden [B, T, H] -> logits [B, T, num_labels], weights shared across positions
Tensor token_tagging(const HeadParams& head, const Tensor& hidden);

// hidden [B, T, H] -> (start_logits [B, T], end_logits [B, T])
struct SpanLogits {
  Tensor start;
  Tensor end;
};
SpanLogits span_logits(const HeadParams& head, const Tensor& hidden);

struct SpanPrediction {
  int start = 0;  // token index
  int end = 0;    // exclusive
  double score = 0.0;
  bool is_null = false;
};

// Best start/end pair within [context_begin, context_end): maximizes
// start[s] + end[e-1] with s < e and e - s <= max_span_len; ties break to the
// earlier start, then the shorter span. Null score is start[cls] + end[cls];
// the prediction is null when best - null < null_threshold.
SpanPrediction decode_span(const std::vector<double>& start_logits,
                           const std::vector<double>& end_logits, std::size_t cls_index,
                           std::size_t context_begin, std::size_t context_end,
                           std::size_t max_span_len, double null_threshold);

constexpr std::size_t kDefaultMaxSpanLen = 30;

}  // namespace ptune
