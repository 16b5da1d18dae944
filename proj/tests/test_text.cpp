#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "refseg/text_encoder.hpp"
#include "refseg/tokenizer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace refseg;

namespace {

Tokenizer toy_tokenizer(int max_len = 8) {
  return Tokenizer::build({"the red circle", "the small blue square on the left",
                           "the large green triangle at the top"},
                          max_len);
}

}  // namespace

TEST_CASE("tokenize: words + eos + padding, pad mask flags pads") {
  auto tok = toy_tokenizer(8);
  auto enc = tok.tokenize("the red circle");
  REQUIRE(enc.ids.size() == 8);
  REQUIRE(enc.pad_mask.size() == 8);
  CHECK(enc.ids[3] == tok.eos_id());
  for (int i = 0; i < 3; ++i) {
    CHECK(enc.ids[static_cast<size_t>(i)] != tok.pad_id());
    CHECK_FALSE(enc.pad_mask[static_cast<size_t>(i)]);
  }
  CHECK_FALSE(enc.pad_mask[3]);
  int pads = 0;
  for (int i = 4; i < 8; ++i) {
    CHECK(enc.ids[static_cast<size_t>(i)] == tok.pad_id());
    pads += enc.pad_mask[static_cast<size_t>(i)] ? 1 : 0;
  }
  CHECK(pads == 4);
}

TEST_CASE("tokenize: boundary fill and truncation keep eos last") {
  auto tok = toy_tokenizer(4);
  auto full = tok.tokenize("the red circle");  // exactly max_len-1 words
  CHECK(full.ids.size() == 4);
  CHECK(full.ids[3] == tok.eos_id());
  for (bool p : full.pad_mask) CHECK_FALSE(p);

  auto truncated = tok.tokenize("the small blue square on the left");
  CHECK(truncated.ids.size() == 4);
  CHECK(truncated.ids[3] == tok.eos_id());
  for (bool p : truncated.pad_mask) CHECK_FALSE(p);
}

TEST_CASE("tokenize: empty and unknown handling") {
  auto tok = toy_tokenizer();
  CHECK_THROWS_AS(tok.tokenize(""), std::invalid_argument);
  CHECK_THROWS_AS(tok.tokenize("  ,.  "), std::invalid_argument);
  auto enc = tok.tokenize("the purple hexagon");
  CHECK(enc.ids[1] == tok.unk_id());
  CHECK(enc.ids[2] == tok.unk_id());
}

TEST_CASE("tokenize: lowercasing and punctuation stripping") {
  auto tok = toy_tokenizer();
  auto a = tok.tokenize("The RED circle");
  auto b = tok.tokenize("the red, circle.");
  CHECK(a.ids == b.ids);
}

TEST_CASE("vocab file round trip") {
  auto tok = toy_tokenizer();
  const auto path = std::filesystem::temp_directory_path() / "refseg_vocab_test.txt";
  tok.save(path.string());
  auto loaded = Tokenizer::load(path.string(), tok.max_len());
  CHECK(loaded.vocab_size() == tok.vocab_size());
  CHECK(loaded.pad_id() == tok.pad_id());
  CHECK(loaded.eos_id() == tok.eos_id());
  CHECK(loaded.tokenize("the red circle").ids == tok.tokenize("the red circle").ids);
  std::filesystem::remove(path);
}

TEST_CASE("encode_text: shape contract and eos extraction") {
  auto tok = toy_tokenizer(8);
  std::mt19937 rng(5);
  TextEncoder enc({tok.vocab_size(), 32, 2, 4, 8}, rng);

  auto e = tok.tokenize("the red circle");
  auto feats = enc.encode(e.ids, e.pad_mask);
  CHECK(feats.t_local.shape() == Shape{7, 32});
  CHECK(feats.t_global.shape() == Shape{1, 32});
  CHECK(feats.pad_mask.size() == 7);

  // t_global is literally the hidden state at the EOS index
  auto hidden = enc.encode_hidden(e.ids, e.pad_mask);
  for (int j = 0; j < 32; ++j) CHECK(feats.t_global.at(j) == hidden.at(3 * 32 + j));
  // and t_local rows are the non-EOS hidden rows in order
  for (int j = 0; j < 32; ++j) {
    CHECK(feats.t_local.at(0 * 32 + j) == hidden.at(0 * 32 + j));
    CHECK(feats.t_local.at(3 * 32 + j) == hidden.at(4 * 32 + j));
  }
}

TEST_CASE("encode_text: output is invariant to trailing padding amount") {
  auto tok = toy_tokenizer(12);
  std::mt19937 rng(6);
  TextEncoder enc({tok.vocab_size(), 32, 2, 4, 12}, rng);

  auto base = tok.tokenize("the red circle");  // 3 words + eos + 8 pads
  std::vector<int> short_ids(base.ids.begin(), base.ids.begin() + 6);
  std::vector<bool> short_mask(base.pad_mask.begin(), base.pad_mask.begin() + 6);

  auto full = enc.encode(base.ids, base.pad_mask);
  auto brief = enc.encode(short_ids, short_mask);
  for (int j = 0; j < 32; ++j)
    CHECK(std::abs(full.t_global.at(j) - brief.t_global.at(j)) < 1e-5f);
}

TEST_CASE("encode_text: deterministic and validating") {
  auto tok = toy_tokenizer(8);
  std::mt19937 rng(7);
  TextEncoder enc({tok.vocab_size(), 16, 2, 2, 8}, rng);
  auto e = tok.tokenize("the red circle");

  auto a = enc.encode(e.ids, e.pad_mask);
  auto b = enc.encode(e.ids, e.pad_mask);
  for (int64_t i = 0; i < a.t_local.numel(); ++i) CHECK(a.t_local.at(i) == b.t_local.at(i));
  for (int64_t i = 0; i < a.t_global.numel(); ++i) CHECK(a.t_global.at(i) == b.t_global.at(i));

  std::vector<int> bad_ids(e.ids.begin(), e.ids.end() - 1);
  CHECK_THROWS_AS(enc.encode(bad_ids, e.pad_mask), std::invalid_argument);
  std::vector<int> long_ids(12, 3);
  std::vector<bool> long_mask(12, false);
  CHECK_THROWS_AS(enc.encode(long_ids, long_mask), std::invalid_argument);
  std::vector<bool> all_pad(e.ids.size(), true);
  CHECK_THROWS_AS(enc.encode(e.ids, all_pad), std::invalid_argument);
}
