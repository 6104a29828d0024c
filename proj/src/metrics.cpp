#include "ptune/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace ptune {

PrF1 micro_f1(const std::vector<SpanSet>& pred, const std::vector<SpanSet>& gold) {
  if (pred.size() != gold.size())
    throw UsageError("micro_f1: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gold.size()) + " golds");
  std::size_t tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    n_pred += pred[i].size();
    n_gold += gold[i].size();
    for (const auto& s : pred[i]) tp += gold[i].count(s);
  }
  PrF1 out;
  out.precision = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
  out.recall = n_gold ? static_cast<double>(tp) / static_cast<double>(n_gold) : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

std::string normalize_answer(const std::string& s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (char c : s) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || std::isspace(u))
      lowered.push_back(static_cast<char>(std::tolower(u)));
    // punctuation is dropped entirely
  }
  std::istringstream ss(lowered);
  std::string w, out;
  while (ss >> w) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

namespace {

std::vector<std::string> norm_tokens(const std::string& s) {
  std::istringstream ss(normalize_answer(s));
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

double token_f1(const std::vector<std::string>& p, const std::vector<std::string>& g) {
  if (p.empty() || g.empty()) return p == g ? 1.0 : 0.0;  // null-answer convention
  std::map<std::string, int> counts;
  for (const auto& w : g) ++counts[w];
  int overlap = 0;
  for (const auto& w : p) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      ++overlap;
      --it->second;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

EmF1 qa_em_f1(const std::string& pred, const std::vector<std::string>& golds) {
  const std::string np = normalize_answer(pred);
  EmF1 out;
  if (golds.empty()) {  // unanswerable gold
    out.em = np.empty() ? 1.0 : 0.0;
    out.f1 = out.em;
    return out;
  }
  const auto pt = norm_tokens(pred);
  for (const auto& g : golds) {
    out.em = std::max(out.em, normalize_answer(g) == np ? 1.0 : 0.0);
    out.f1 = std::max(out.f1, token_f1(pt, norm_tokens(g)));
  }
  return out;
}

}  // namespace ptune
