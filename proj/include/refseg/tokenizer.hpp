#pragma once

// Word-level tokenizer for referring expressions. Sequences are always
// max_len long: words, then EOS, then padding; truncation keeps the EOS
// as the last real token.

#include <string>
#include <unordered_map>
#include <vector>

namespace refseg {

class Tokenizer {
 public:
  struct Encoded {
    std::vector<int> ids;        // length max_len
    std::vector<bool> pad_mask;  // true at padded positions
  };

  Tokenizer() = default;

  // Vocabulary from a training corpus: specials first, then the corpus
  // words sorted for determinism.
  static Tokenizer build(const std::vector<std::string>& corpus, int max_len);

  static Tokenizer load(const std::string& path, int max_len);
  void save(const std::string& path) const;

  static Tokenizer from_lines(const std::vector<std::string>& lines, int max_len);
  std::vector<std::string> to_lines() const;

  Encoded tokenize(const std::string& expression) const;

  // Lowercases, strips punctuation, splits on whitespace.
  static std::vector<std::string> split_words(const std::string& text);

  int pad_id() const { return pad_id_; }
  int unk_id() const { return unk_id_; }
  int eos_id() const { return eos_id_; }
  int max_len() const { return max_len_; }
  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  int lookup(const std::string& word) const;

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  int pad_id_ = 0, unk_id_ = 1, eos_id_ = 2;
  int max_len_ = 0;
};

}  // namespace refseg
