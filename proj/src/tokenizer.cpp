#include "refseg/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace refseg {

namespace {

constexpr const char* kPadToken = "<pad>";
constexpr const char* kUnkToken = "<unk>";
constexpr const char* kEosToken = "<eos>";

}  // namespace

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u))
      clean.push_back(static_cast<char>(std::tolower(u)));
    else
      clean.push_back(' ');
  }
  std::vector<std::string> words;
  std::istringstream ss(clean);
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus, int max_len) {
  if (max_len < 2) throw std::invalid_argument("tokenizer: max_len must be >= 2");
  std::set<std::string> words;
  for (const auto& text : corpus)
    for (const auto& w : split_words(text)) words.insert(w);

  Tokenizer t;
  t.max_len_ = max_len;
  t.id_to_token_ = {kPadToken, kUnkToken, kEosToken};
  for (const auto& w : words) t.id_to_token_.push_back(w);
  for (size_t i = 0; i < t.id_to_token_.size(); ++i)
    t.token_to_id_[t.id_to_token_[i]] = static_cast<int>(i);
  t.pad_id_ = 0;
  t.unk_id_ = 1;
  t.eos_id_ = 2;
  return t;
}

std::vector<std::string> Tokenizer::to_lines() const {
  std::vector<std::string> lines;
  lines.push_back("# vocab v1");
  lines.push_back(std::string("# special pad=") + kPadToken + " unk=" + kUnkToken +
                  " eos=" + kEosToken);
  for (const auto& tok : id_to_token_) lines.push_back(tok);
  return lines;
}

Tokenizer Tokenizer::from_lines(const std::vector<std::string>& lines, int max_len) {
  if (max_len < 2) throw std::invalid_argument("tokenizer: max_len must be >= 2");
  Tokenizer t;
  t.max_len_ = max_len;
  std::string pad_tok = kPadToken, unk_tok = kUnkToken, eos_tok = kEosToken;
  for (const auto& line : lines) {
    if (!line.empty() && line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string field;
      while (ss >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "pad") pad_tok = val;
        if (key == "unk") unk_tok = val;
        if (key == "eos") eos_tok = val;
      }
      continue;
    }
    t.id_to_token_.push_back(line);
  }
  if (t.id_to_token_.empty()) throw std::runtime_error("tokenizer: empty vocabulary");
  for (size_t i = 0; i < t.id_to_token_.size(); ++i)
    t.token_to_id_[t.id_to_token_[i]] = static_cast<int>(i);
  auto resolve = [&](const std::string& tok, const char* what) {
    auto it = t.token_to_id_.find(tok);
    if (it == t.token_to_id_.end())
      throw std::runtime_error(std::string("tokenizer: special token missing: ") + what);
    return it->second;
  };
  t.pad_id_ = resolve(pad_tok, "pad");
  t.unk_id_ = resolve(unk_tok, "unk");
  t.eos_id_ = resolve(eos_tok, "eos");
  return t;
}

Tokenizer Tokenizer::load(const std::string& path, int max_len) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("tokenizer: cannot open vocab file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.eof()) break;
    lines.push_back(line);
  }
  return from_lines(lines, max_len);
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("tokenizer: cannot write vocab file: " + path);
  for (const auto& line : to_lines()) out << line << "\n";
}

int Tokenizer::lookup(const std::string& word) const {
  auto it = token_to_id_.find(word);
  return it == token_to_id_.end() ? unk_id_ : it->second;
}

Tokenizer::Encoded Tokenizer::tokenize(const std::string& expression) const {
  auto words = split_words(expression);
  if (words.empty())
    throw std::invalid_argument("tokenize: expression is empty after normalization");
  if (static_cast<int>(words.size()) > max_len_ - 1) words.resize(static_cast<size_t>(max_len_ - 1));

  Encoded enc;
  enc.ids.reserve(static_cast<size_t>(max_len_));
  for (const auto& w : words) enc.ids.push_back(lookup(w));
  enc.ids.push_back(eos_id_);
  enc.pad_mask.assign(enc.ids.size(), false);
  while (static_cast<int>(enc.ids.size()) < max_len_) {
    enc.ids.push_back(pad_id_);
    enc.pad_mask.push_back(true);
  }
  return enc;
}

}  // namespace refseg
