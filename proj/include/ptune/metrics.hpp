#pragma once

// Evaluation metrics: pooled exact-span micro F1 for tagging tasks and
// normalized EM/F1 for extractive QA.

#include <string>
#include <vector>

#include "ptune/tasks.hpp"

namespace ptune {

struct PrF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Exact-span matching pooled over all examples. A zero denominator yields 0
// for the affected component.
PrF1 micro_f1(const std::vector<SpanSet>& pred, const std::vector<SpanSet>& gold);

// lowercase, strip punctuation, drop articles (a/an/the), collapse whitespace
std::string normalize_answer(const std::string& s);

struct EmF1 {
  double em = 0.0;
  double f1 = 0.0;
};

// Max over gold strings. An empty gold list means unanswerable; the empty
// prediction string is the null answer and scores 1 against it.
EmF1 qa_em_f1(const std::string& pred, const std::vector<std::string>& golds);

}  // namespace ptune
