#include "ptune/tokenizer.hpp"

#include <cctype>

namespace ptune {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0; }

std::string lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::vector<WordSpan> split_words(const std::string& text) {
  std::vector<WordSpan> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back({text.substr(i, j - i), i, j});
      i = j;
    } else {
      out.push_back({text.substr(i, 1), i, i + 1});
      ++i;
    }
  }
  return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus) {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> seen;
  for (const auto& text : corpus) {
    for (const auto& w : split_words(text)) {
      const std::string lw = lower(w.text);
      if (seen.emplace(lw, 0).second) words.push_back(lw);
    }
  }
  return from_vocab(words);
}

Tokenizer Tokenizer::from_vocab(const std::vector<std::string>& words) {
  Tokenizer t;
  t.words_ = {kPad, kUnk, kMask, kCls, kSep};
  for (std::size_t i = 0; i < t.words_.size(); ++i) t.index_[t.words_[i]] = static_cast<int>(i);
  for (const auto& w : words) {
    const std::string lw = lower(w);
    const int next_id = static_cast<int>(t.words_.size());
    if (t.index_.emplace(lw, next_id).second) t.words_.push_back(lw);
  }
  return t;
}

int Tokenizer::id(const std::string& word) const {
  auto it = index_.find(lower(word));
  return it == index_.end() ? unk_id() : it->second;
}

bool Tokenizer::contains(const std::string& word) const { return index_.count(lower(word)) > 0; }

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || id >= vocab_size()) throw UsageError("Tokenizer: id out of range");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text)) out.push_back(id(w.text));
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

}  // namespace ptune
