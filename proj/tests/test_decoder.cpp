#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "refseg/mask_decoder.hpp"
#include "refseg/pipeline.hpp"
#include "support/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace refseg;

TEST_CASE("high-res encoder grids: published 1024/16 -> 64x64, toy 64/8 -> 8x8") {
  std::mt19937 rng(1);
  // channel width kept tiny; the grid arithmetic is what matters
  VisionEncoder enc({1024, 16, 8, 1, 1}, rng);
  auto img = testutil::random_image(1024, 1024, rng);
  CHECK(enc.encode(img).shape() == Shape{64, 64, 8});

  VisionEncoder toy({64, 8, 8, 1, 1}, rng);
  CHECK(toy.encode(testutil::random_image(64, 64, rng)).shape() == Shape{8, 8, 8});

  CHECK_THROWS_AS(VisionEncoder({1000, 16, 8, 1, 1}, rng), std::invalid_argument);
}

TEST_CASE("dense injection: zero prompt with zero-initialized stem leaves e unchanged") {
  std::mt19937 rng(2);
  DensePromptStem stem(16, rng);
  auto e = Tensor::randn({8, 8, 16}, rng, 1.0f);
  auto zero_prompt = Tensor::zeros({8, 8, 1});
  auto injected = stem.inject(e, zero_prompt);
  for (int64_t i = 0; i < e.numel(); ++i) CHECK(injected.at(i) == e.at(i));
}

TEST_CASE("dense injection: additivity, output minus e equals the stem embedding") {
  std::mt19937 rng(3);
  DensePromptStem stem(16, rng);
  auto e = Tensor::randn({8, 8, 16}, rng, 1.0f);
  auto prompt = Tensor::randn({8, 8, 1}, rng, 1.0f);
  auto injected = stem.inject(e, prompt);
  auto embedded = stem.embed(prompt);
  for (int64_t i = 0; i < e.numel(); ++i)
    CHECK(std::abs((injected.at(i) - e.at(i)) - embedded.at(i)) < 1e-6f);

  auto wrong = Tensor::randn({4, 4, 1}, rng, 1.0f);
  CHECK_THROWS_AS(stem.inject(e, wrong), std::invalid_argument);
}

TEST_CASE("disabled dense path passes the embedding through unchanged") {
  auto tok = testutil::toy_vocab();
  auto cfg = testutil::toy_model_config(tok.vocab_size());
  cfg.dense_prompt = false;
  ReferringSegModel model(cfg, 5);
  std::mt19937 rng(4);
  auto sample = testutil::toy_sample(cfg, tok, rng, "the red circle");
  NoGradGuard ng;
  auto fwd = model.forward(sample, false);
  CHECK_FALSE(fwd.p_dense.defined());
  CHECK(fwd.logits.shape() == Shape{24, 24, 1});
}

TEST_CASE("decode: K candidates, first one selected, output at ground-truth size") {
  std::mt19937 rng(5);
  MaskDecoder dec({16, 3, 2, 2}, rng);
  auto e = Tensor::randn({8, 8, 16}, rng, 1.0f);
  auto sparse = Tensor::randn({4, 16}, rng, 1.0f);

  auto res = dec.decode(e, sparse, 50, 70);
  CHECK(res.num_candidates == 3);
  REQUIRE(res.candidates.size() == 3);
  for (const auto& c : res.candidates) CHECK(c.shape() == Shape{32, 32, 1});
  CHECK(res.selected.shape() == Shape{50, 70, 1});

  // selected output is the first candidate resized
  auto resized = bilinear_resize(res.candidates[0], 50, 70);
  for (int64_t i = 0; i < resized.numel(); ++i) CHECK(res.selected.at(i) == resized.at(i));
}

TEST_CASE("decode: sparse prompt tokens are an unordered set") {
  std::mt19937 rng(6);
  MaskDecoder dec({16, 3, 2, 2}, rng);
  auto e = Tensor::randn({6, 6, 16}, rng, 1.0f);
  auto sparse = Tensor::randn({5, 16}, rng, 1.0f);

  std::vector<int> perm = {3, 0, 4, 1, 2};
  auto permuted = gather_rows(sparse, perm);

  auto a = dec.decode(e, sparse, 24, 24);
  auto b = dec.decode(e, permuted, 24, 24);
  for (int64_t i = 0; i < a.selected.numel(); ++i)
    CHECK(std::abs(a.selected.at(i) - b.selected.at(i)) < 1e-5f);
}

TEST_CASE("decode validates prompt and embedding dims") {
  std::mt19937 rng(7);
  MaskDecoder dec({16, 3, 1, 2}, rng);
  auto e = Tensor::randn({4, 4, 16}, rng, 1.0f);
  auto bad_sparse = Tensor::randn({4, 8}, rng, 1.0f);
  CHECK_THROWS_AS(dec.decode(e, bad_sparse, 16, 16), std::invalid_argument);
  auto bad_e = Tensor::randn({4, 4, 8}, rng, 1.0f);
  CHECK_THROWS_AS(dec.decode(bad_e, Tensor::randn({4, 16}, rng, 1.0f), 16, 16),
                  std::invalid_argument);
  CHECK_THROWS_AS(MaskDecoder({18, 3, 1, 2}, rng), std::invalid_argument);  // dim % 4
}

TEST_CASE("pipeline end-to-end: shapes, dual-resolution contract, determinism") {
  auto tok = testutil::toy_vocab();
  auto cfg = testutil::toy_model_config(tok.vocab_size());
  ReferringSegModel model(cfg, 9);
  std::mt19937 rng(8);
  auto sample = testutil::toy_sample(cfg, tok, rng, "the small blue square on the left", 30);

  REQUIRE(sample.image_lowres.h < sample.image_highres.h);
  REQUIRE(sample.image_lowres.w < sample.image_highres.w);

  auto pred = model.predict(sample);
  CHECK(pred.h == 30);
  CHECK(pred.w == 30);
  CHECK(pred.logits.size() == 900);
  CHECK(pred.num_candidates == 3);
  for (size_t i = 0; i < pred.logits.size(); ++i) {
    CHECK(std::isfinite(pred.logits[i]));
    CHECK(pred.mask.data[i] == (pred.logits[i] > 0.0f ? 1 : 0));
  }

  auto again = model.predict(sample);
  CHECK(again.logits == pred.logits);
  CHECK(again.mask.data == pred.mask.data);
}

TEST_CASE("pipeline: different expressions produce different prompts") {
  auto tok = testutil::toy_vocab();
  auto cfg = testutil::toy_model_config(tok.vocab_size());
  ReferringSegModel model(cfg, 10);
  std::mt19937 rng(9);
  auto sample_a = testutil::toy_sample(cfg, tok, rng, "the red circle");
  auto sample_b = sample_a;
  auto enc = tok.tokenize("the blue circle on the right");
  sample_b.token_ids = enc.ids;
  sample_b.pad_mask = enc.pad_mask;

  NoGradGuard ng;
  auto fa = model.forward(sample_a, false);
  auto fb = model.forward(sample_b, false);
  double diff = 0;
  for (int64_t i = 0; i < fa.p_sparse.numel(); ++i)
    diff = std::max(diff, static_cast<double>(std::abs(fa.p_sparse.at(i) - fb.p_sparse.at(i))));
  CHECK(diff > 1e-6);
}

TEST_CASE("pipeline: constant text conditioning ignores the expression") {
  auto tok = testutil::toy_vocab();
  auto cfg = testutil::toy_model_config(tok.vocab_size());
  cfg.text_conditioning_constant = true;
  ReferringSegModel model(cfg, 10);
  std::mt19937 rng(10);
  auto sample_a = testutil::toy_sample(cfg, tok, rng, "the red circle");
  auto sample_b = sample_a;
  auto enc = tok.tokenize("the blue circle on the right");
  sample_b.token_ids = enc.ids;
  sample_b.pad_mask = enc.pad_mask;

  auto pa = model.predict(sample_a);
  auto pb = model.predict(sample_b);
  CHECK(pa.logits == pb.logits);
}

TEST_CASE("pipeline: channel width mismatch is rejected at construction") {
  auto tok = testutil::toy_vocab();
  auto cfg = testutil::toy_model_config(tok.vocab_size());
  cfg.d2 = 18;  // not divisible by 4
  CHECK_THROWS_AS(ReferringSegModel(cfg, 0), std::invalid_argument);
  cfg = testutil::toy_model_config(tok.vocab_size());
  cfg.d1 = 15;  // not divisible by heads
  CHECK_THROWS_AS(ReferringSegModel(cfg, 0), std::invalid_argument);
}
