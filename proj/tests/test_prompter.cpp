#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "refseg/prompter.hpp"
#include "support/gradcheck.hpp"

#include <cmath>
#include <random>

using namespace refseg;
using Td = TensorT<double>;

namespace {

// Per-position scalar oracles written directly from the filtering
// equations; deliberately loop-based and independent of the tensor ops.
template <class S>
std::vector<S> oracle_filter_global(const std::vector<S>& v, int n, int d,
                                    const std::vector<S>& t) {
  std::vector<S> out(v.size());
  for (int p = 0; p < n; ++p) {
    S dot = 0;
    for (int c = 0; c < d; ++c) dot += v[static_cast<size_t>(p) * d + c] * t[static_cast<size_t>(c)];
    const S m = S(1) / (S(1) + std::exp(-dot));
    for (int c = 0; c < d; ++c) {
      const size_t k = static_cast<size_t>(p) * d + c;
      out[k] = v[k] * m + v[k];
    }
  }
  return out;
}

template <class S>
std::vector<S> oracle_filter_local(const std::vector<S>& v, int n, int d,
                                   const std::vector<S>& t_local, int tokens,
                                   const std::vector<bool>& pad) {
  std::vector<S> acc(v.size(), S(0));
  int kept = 0;
  for (int l = 0; l < tokens; ++l) {
    if (pad[static_cast<size_t>(l)]) continue;
    ++kept;
    for (int p = 0; p < n; ++p) {
      S dot = 0;
      for (int c = 0; c < d; ++c)
        dot += v[static_cast<size_t>(p) * d + c] * t_local[static_cast<size_t>(l) * d + c];
      const S m = S(1) / (S(1) + std::exp(-dot));
      for (int c = 0; c < d; ++c) acc[static_cast<size_t>(p) * d + c] += v[static_cast<size_t>(p) * d + c] * m;
    }
  }
  std::vector<S> out(v.size());
  for (size_t k = 0; k < v.size(); ++k) out[k] = acc[k] / static_cast<S>(kept) + v[k];
  return out;
}

}  // namespace

TEST_CASE("global map: orthogonal text gives 0.5 everywhere, range stays (0,1)") {
  std::mt19937 rng(1);
  auto v = Tensor::randn({3, 3, 6}, rng, 1.0f);
  auto zero_t = Tensor::zeros({1, 6});
  auto map = AttnPrompter::global_attention_map(v, zero_t);
  CHECK(map.shape() == Shape{3, 3, 1});
  for (int64_t i = 0; i < map.numel(); ++i) CHECK(map.at(i) == 0.5f);

  // strict (0,1) range; logits kept below the float32 rounding point of
  // the sigmoid so the bound is observable
  auto t = Tensor::randn({1, 6}, rng, 1.0f);
  auto map2 = AttnPrompter::global_attention_map(v, t);
  for (int64_t i = 0; i < map2.numel(); ++i) {
    CHECK(map2.at(i) > 0.0f);
    CHECK(map2.at(i) < 1.0f);
  }
}

TEST_CASE("global map: frozen scalar sigmoid values on a 2x2 single-channel grid") {
  auto v = Tensor::from_vec({2, 2, 1}, {1.0f, -1.0f, 2.0f, 0.0f});
  auto t = Tensor::from_vec({1, 1}, {1.0f});
  auto map = AttnPrompter::global_attention_map(v, t);
  // sigma(1), sigma(-1), sigma(2), sigma(0) computed from 1/(1+e^-x)
  CHECK(map.at(0) == doctest::Approx(0.7310585786300049).epsilon(1e-6));
  CHECK(map.at(1) == doctest::Approx(0.2689414213699951).epsilon(1e-6));
  CHECK(map.at(2) == doctest::Approx(0.8807970779778823).epsilon(1e-6));
  CHECK(map.at(3) == 0.5f);
}

TEST_CASE("filter_global: zero logits give exactly 1.5*v, saturation gives 2*v") {
  std::mt19937 rng(2);
  auto v = Tensor::randn({4, 4, 8}, rng, 1.0f);
  auto out = AttnPrompter::filter_global(v, Tensor::zeros({1, 8}));
  for (int64_t i = 0; i < v.numel(); ++i) CHECK(out.at(i) == 1.5f * v.at(i));

  auto ones = Tensor::filled({2, 2, 8}, 1.0f);
  auto big_t = Tensor::filled({1, 8}, 100.0f);
  auto sat = AttnPrompter::filter_global(ones, big_t);
  for (int64_t i = 0; i < sat.numel(); ++i) CHECK(sat.at(i) == 2.0f);
}

TEST_CASE("filter_local: zero logits give exactly 1.5*v through the mean") {
  std::mt19937 rng(3);
  auto v = Tensor::randn({4, 4, 8}, rng, 1.0f);
  auto t_local = Tensor::zeros({3, 8});
  auto out = AttnPrompter::filter_local(v, t_local, {false, false, false});
  for (int64_t i = 0; i < v.numel(); ++i) CHECK(out.at(i) == 1.5f * v.at(i));
}

TEST_CASE("filter_global matches the per-position loop oracle") {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = Tensor::randn({4, 4, 8}, rng, 1.0f);
    auto t = Tensor::randn({1, 8}, rng, 1.0f);
    auto out = AttnPrompter::filter_global(v, t);
    auto oracle = oracle_filter_global(v.value(), 16, 8, t.value());
    for (size_t i = 0; i < oracle.size(); ++i) CHECK(std::abs(out.at(static_cast<int64_t>(i)) - oracle[i]) < 1e-6f);
  }
}

TEST_CASE("filter_local matches the explicit per-token average") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = Tensor::randn({4, 4, 8}, rng, 1.0f);
    auto t_local = Tensor::randn({5, 8}, rng, 1.0f);
    std::vector<bool> pad = {false, false, true, false, true};  // L' = 3
    auto out = AttnPrompter::filter_local(v, t_local, pad);
    auto oracle = oracle_filter_local(v.value(), 16, 8, t_local.value(), 5, pad);
    for (size_t i = 0; i < oracle.size(); ++i) CHECK(std::abs(out.at(static_cast<int64_t>(i)) - oracle[i]) < 1e-6f);
  }
}

TEST_CASE("filter_local: single token equals filter_global, duplicates are idempotent") {
  std::mt19937 rng(6);
  auto v = Tensor::randn({4, 4, 8}, rng, 1.0f);
  auto t = Tensor::randn({1, 8}, rng, 1.0f);

  auto single = AttnPrompter::filter_local(v, t, {false});
  auto global = AttnPrompter::filter_global(v, t);
  for (int64_t i = 0; i < v.numel(); ++i) CHECK(single.at(i) == doctest::Approx(global.at(i)).epsilon(1e-6));

  auto doubled = concat_rows<float>({t, t});
  auto dup = AttnPrompter::filter_local(v, doubled, {false, false});
  for (int64_t i = 0; i < v.numel(); ++i) CHECK(dup.at(i) == doctest::Approx(single.at(i)).epsilon(1e-6));

  CHECK_THROWS_AS(AttnPrompter::filter_local(v, t, {true}), std::invalid_argument);
}

TEST_CASE("fuse: concatenation order and channel math") {
  std::mt19937 rng(7);
  auto v = Tensor::randn({4, 4, 8}, rng, 1.0f);
  auto vg = Tensor::randn({4, 4, 8}, rng, 1.0f);
  auto vl = Tensor::randn({4, 4, 8}, rng, 1.0f);
  auto fused = AttnPrompter::fuse(vg, vl, v);
  CHECK(fused.shape() == Shape{4, 4, 24});
  // channels [2d:3d] recover v exactly
  for (int p = 0; p < 16; ++p)
    for (int c = 0; c < 8; ++c) CHECK(fused.at(p * 24 + 16 + c) == v.at(p * 8 + c));
  // and the leading blocks are the filtered maps
  for (int p = 0; p < 16; ++p)
    for (int c = 0; c < 8; ++c) {
      CHECK(fused.at(p * 24 + c) == vg.at(p * 8 + c));
      CHECK(fused.at(p * 24 + 8 + c) == vl.at(p * 8 + c));
    }
}

TEST_CASE("fuse at the published grid: 24x24 inputs give 24x24x3d") {
  std::mt19937 rng(8);
  auto v = Tensor::randn({24, 24, 4}, rng, 1.0f);
  auto fused = AttnPrompter::fuse(v, v, v);
  CHECK(fused.shape() == Shape{24, 24, 12});
}

TEST_CASE("make_sparse: prompt counts for every legal downsample") {
  std::mt19937 rng(9);
  // h1 = w1 = 24: s=4 -> 36 prompts, s=2 -> 144, s=8 -> 9
  for (const auto& [s, m] : std::vector<std::pair<int, int>>{{4, 36}, {2, 144}, {8, 9}}) {
    AttnPrompter prompter({4, 8, s}, rng);
    auto v_attn = Tensor::randn({24, 24, 12}, rng, 1.0f);
    auto sparse = prompter.make_sparse(v_attn, false);
    CHECK(sparse.shape() == Shape{m, 8});
    CHECK(m * s * s == 24 * 24);
  }
}

TEST_CASE("make_sparse: invalid downsample and indivisible grids are rejected") {
  std::mt19937 rng(10);
  CHECK_THROWS_AS(AttnPrompter({4, 8, 5}, rng), std::invalid_argument);
  CHECK_THROWS_AS(AttnPrompter({4, 8, 3}, rng), std::invalid_argument);

  AttnPrompter prompter({4, 8, 4}, rng);
  auto bad = Tensor::randn({6, 6, 12}, rng, 1.0f);
  CHECK_THROWS_AS(prompter.make_sparse(bad, false), std::invalid_argument);
  auto wrong_ch = Tensor::randn({8, 8, 8}, rng, 1.0f);
  CHECK_THROWS_AS(prompter.make_sparse(wrong_ch, false), std::invalid_argument);
}

TEST_CASE("make_dense: resize to the prompt grid, constants and zeros preserved") {
  std::mt19937 rng(11);
  auto v = Tensor::randn({24, 24, 4}, rng, 1.0f);
  auto t = Tensor::randn({1, 4}, rng, 1.0f);
  auto dense = AttnPrompter::make_dense(v, t, 64, 64);
  CHECK(dense.shape() == Shape{64, 64, 1});

  // constant similarity stays constant under bilinear resize
  std::vector<float> row = {0.3f, -0.7f, 1.1f, 0.4f};
  std::vector<float> rep;
  for (int i = 0; i < 16; ++i) rep.insert(rep.end(), row.begin(), row.end());
  auto v_const = Tensor::from_vec({4, 4, 4}, rep);
  auto dense_const = AttnPrompter::make_dense(v_const, t, 9, 9);
  const float c0 = dense_const.at(0);
  for (int64_t i = 0; i < dense_const.numel(); ++i)
    CHECK(dense_const.at(i) == doctest::Approx(c0).epsilon(1e-6));

  // zero text vector gives an all-zero prompt
  auto dense_zero = AttnPrompter::make_dense(v, Tensor::zeros({1, 4}), 16, 16);
  for (int64_t i = 0; i < dense_zero.numel(); ++i) CHECK(dense_zero.at(i) == 0.0f);

  // the dense prompt is raw similarity, not sigmoid-squashed: values
  // outside (0,1) must survive
  bool outside = false;
  for (int64_t i = 0; i < dense.numel(); ++i)
    outside = outside || dense.at(i) < 0.0f || dense.at(i) > 1.0f;
  CHECK(outside);
}

TEST_CASE("analytic gradients through the prompt path match finite differences") {
  std::mt19937 rng(12);
  AttnPrompterT<double>::Config cfg{8, 8, 2};
  AttnPrompterT<double> prompter(cfg, rng);

  auto v = Td::randn({4, 4, 8}, rng, 0.8, true);
  auto t_global = Td::randn({1, 8}, rng, 0.8, true);
  auto t_local = Td::randn({3, 8}, rng, 0.8, true);
  std::vector<bool> pad = {false, false, true};

  auto make_loss = [&] {
    auto vg = AttnPrompterT<double>::filter_global(v, t_global);
    auto vl = AttnPrompterT<double>::filter_local(v, t_local, pad);
    auto fused = AttnPrompterT<double>::fuse(vg, vl, v);
    auto sparse = prompter.make_sparse(fused, true);
    auto dense = AttnPrompterT<double>::make_dense(v, t_global, 8, 8);
    return add(sum_all(sparse), sum_all(dense));
  };
  auto res = testutil::grad_check({v, t_global, t_local}, make_loss);
  CHECK_MESSAGE(res.max_rel_err < 1e-3, res.where);
  CHECK_MESSAGE(res.max_rel_err < 1e-6, res.where);  // double precision should be far tighter
}

TEST_CASE("property: M * s^2 equals the grid area for every legal config") {
  std::mt19937 rng(13);
  for (int grid : {8, 16, 24}) {
    for (int s : {2, 4, 8}) {
      if (grid % s != 0) continue;
      AttnPrompter prompter({4, 8, s}, rng);
      CHECK(prompter.sparse_count(grid, grid) * s * s == grid * grid);
    }
  }
}
