#pragma once

// Word-level tokenizer: whitespace split plus punctuation isolation, fixed
// vocabulary with an UNK fallback. Lookup is lowercased; offsets index the
// original text so answer spans can be aligned.

#include <string>
#include <unordered_map>
#include <vector>

#include "ptune/common.hpp"

namespace ptune {

struct WordSpan {
  std::string text;    // as written
  std::size_t begin = 0;  // byte offsets into the source string
  std::size_t end = 0;
};

// whitespace-separated words, with every non-alphanumeric byte split off as
// its own token
std::vector<WordSpan> split_words(const std::string& text);

class Tokenizer {
 public:
  static constexpr const char* kPad = "[PAD]";
  static constexpr const char* kUnk = "[UNK]";
  static constexpr const char* kMask = "[MASK]";
  static constexpr const char* kCls = "[CLS]";
  static constexpr const char* kSep = "[SEP]";

  // vocabulary = specials + unique lowercased words of the corpus in first-seen order
  static Tokenizer build(const std::vector<std::string>& corpus);
  static Tokenizer from_vocab(const std::vector<std::string>& words);  // specials prepended

  int id(const std::string& word) const;  // OOV -> unk id
  const std::string& word(int id) const;
  bool contains(const std::string& word) const;

  std::vector<int> encode(const std::string& text) const;
  std::vector<WordSpan> split(const std::string& text) const { return split_words(text); }
  std::string decode(const std::vector<int>& ids) const;  // space-joined

  int vocab_size() const { return static_cast<int>(words_.size()); }
  int pad_id() const { return 0; }
  int unk_id() const { return 1; }
  int mask_id() const { return 2; }
  int cls_id() const { return 3; }
  int sep_id() const { return 4; }

  const std::vector<std::string>& vocab() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace ptune
