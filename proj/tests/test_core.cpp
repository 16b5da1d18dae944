#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "refseg/nn.hpp"
#include "refseg/tensor.hpp"
#include "support/gradcheck.hpp"

#include <cmath>
#include <random>

using namespace refseg;
using Td = TensorT<double>;

namespace {

Td randn_d(Shape s, std::mt19937& rng, bool rg = true) {
  return Td::randn(std::move(s), rng, 0.7, rg);
}

}  // namespace

TEST_CASE("matmul matches a hand loop") {
  std::mt19937 rng(1);
  auto a = randn_d({3, 4}, rng);
  auto b = randn_d({4, 2}, rng);
  auto c = matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a.at(i * 4 + k) * b.at(k * 2 + j);
      CHECK(c.at(i * 2 + j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("matmul_nt equals matmul with explicit transpose") {
  std::mt19937 rng(2);
  auto a = randn_d({5, 3}, rng);
  auto b = randn_d({4, 3}, rng);
  auto c1 = matmul_nt(a, b);
  auto c2 = matmul(a, transpose(b));
  for (int64_t i = 0; i < c1.numel(); ++i) CHECK(c1.at(i) == doctest::Approx(c2.at(i)));
}

TEST_CASE("softmax rows sum to one and are positive") {
  std::mt19937 rng(3);
  auto a = randn_d({6, 9}, rng);
  auto p = softmax_rows(a);
  for (int i = 0; i < 6; ++i) {
    double acc = 0;
    for (int j = 0; j < 9; ++j) {
      CHECK(p.at(i * 9 + j) > 0.0);
      acc += p.at(i * 9 + j);
    }
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gradients: elementwise and broadcast ops") {
  std::mt19937 rng(4);
  auto a = randn_d({3, 5}, rng);
  auto b = randn_d({3, 5}, rng);
  auto bias = randn_d({5}, rng);
  auto s = randn_d({3}, rng);
  auto res = testutil::grad_check({a, b, bias, s}, [&] {
    auto x = mul(add(a, b), sigmoid(sub(a, b)));
    x = add_row_broadcast(x, bias);
    x = scale_rows(x, s);
    return mean_all(gelu(x));
  });
  CHECK_MESSAGE(res.ok(1e-6), res.where);
}

TEST_CASE("gradients: matmul family, slicing, concat") {
  std::mt19937 rng(5);
  auto a = randn_d({4, 6}, rng);
  auto b = randn_d({6, 3}, rng);
  auto c = randn_d({5, 6}, rng);
  auto res = testutil::grad_check({a, b, c}, [&] {
    auto x = matmul(a, b);                    // [4,3]
    auto y = matmul_nt(a, c);                 // [4,5]
    auto z = concat_cols<double>({x, slice_cols(y, 1, 4)});  // [4,6]
    auto w = concat_rows<double>({z, slice_rows(z, 0, 2)});  // [6,6]
    return mean_all(mul(w, w));
  });
  CHECK_MESSAGE(res.ok(1e-6), res.where);
}

TEST_CASE("gradients: softmax, layernorm, gather, masked mean") {
  std::mt19937 rng(6);
  auto a = randn_d({4, 7}, rng);
  auto g = randn_d({7}, rng);
  auto b = randn_d({7}, rng);
  std::vector<bool> keep = {true, false, true, true, false, true, false};
  auto res = testutil::grad_check({a, g, b}, [&] {
    auto x = layer_norm(a, g, b);
    auto p = softmax_rows(x);
    auto picked = gather_rows(p, {2, 0, 3, 1, 2});
    auto m = mean_cols_masked(picked, keep);
    return sum_all(mul(m, m));
  });
  CHECK_MESSAGE(res.ok(1e-6), res.where);
}

TEST_CASE("gradients: conv stack with batch norm and upsampling") {
  std::mt19937 rng(7);
  auto img = randn_d({6, 6, 3}, rng);
  Conv2dT<double> conv(3, 4, 3, 2, 1, rng);
  BatchNorm2dT<double> bn(4);
  ConvTranspose2x2T<double> up(4, 2, rng);
  NamedTensors<double> nt;
  conv.collect("conv", nt);
  bn.collect("bn", nt);
  up.collect("up", nt);
  std::vector<Td> inputs = {img};
  for (auto& [name, t] : nt.params) inputs.push_back(t);
  auto res = testutil::grad_check(inputs, [&] {
    auto y = gelu(bn.forward(conv.forward(img), true));
    auto z = up.forward(y);
    auto r = bilinear_resize(z, 9, 5);
    return mean_all(mul(r, r));
  });
  CHECK_MESSAGE(res.ok(1e-5), res.where);
}

TEST_CASE("gradients: bce with logits") {
  std::mt19937 rng(8);
  auto logits = randn_d({4, 4}, rng);
  std::vector<double> targets(16);
  std::bernoulli_distribution coin(0.4);
  for (auto& t : targets) t = coin(rng) ? 1.0 : 0.0;
  auto res = testutil::grad_check({logits}, [&] { return bce_with_logits_mean(logits, targets); });
  CHECK_MESSAGE(res.ok(1e-6), res.where);
}

TEST_CASE("gradients: transformer block with key padding") {
  std::mt19937 rng(9);
  TransformerBlockT<double> blk(8, 2, rng);
  auto x = randn_d({5, 8}, rng);
  std::vector<bool> pad = {false, false, false, true, true};
  NamedTensors<double> nt;
  blk.collect("blk", nt);
  std::vector<Td> inputs = {x};
  for (auto& [name, t] : nt.params) inputs.push_back(t);
  auto res = testutil::grad_check(inputs, [&] { return mean_all(mul(blk.forward(x, &pad), blk.forward(x, &pad))); });
  CHECK_MESSAGE(res.ok(1e-5), res.where);
}

TEST_CASE("no-grad mode records no graph") {
  std::mt19937 rng(10);
  auto a = Tensor::randn({3, 3}, rng, 1.0f, true);
  NoGradGuard ng;
  auto b = matmul(a, a);
  CHECK_FALSE(b.requires_grad());
}

TEST_CASE("frozen leaves receive no gradient") {
  std::mt19937 rng(11);
  auto frozen = Tensor::randn({3, 3}, rng, 1.0f, false);
  auto trainable = Tensor::randn({3, 3}, rng, 1.0f, true);
  auto loss = mean_all(matmul(frozen, trainable));
  backward(loss);
  CHECK_FALSE(frozen.has_grad());
  CHECK(trainable.has_grad());
}

TEST_CASE("fixed seed reproduces identical tensors") {
  std::mt19937 rng1(42), rng2(42);
  auto a = Tensor::randn({16}, rng1, 1.0f);
  auto b = Tensor::randn({16}, rng2, 1.0f);
  for (int64_t i = 0; i < 16; ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("adapted linear at init equals the plain linear") {
  std::mt19937 rng(12);
  LinearT<float> lin(8, 8, rng);
  auto x = Tensor::randn({4, 8}, rng, 1.0f);
  auto y0 = lin.forward(x);
  auto adapted = wrap_linear(std::move(lin), 2, rng);
  auto y1 = adapted.forward(x);
  for (int64_t i = 0; i < y0.numel(); ++i) CHECK(y0.at(i) == y1.at(i));
}
