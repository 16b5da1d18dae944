#pragma once

// Prompt generation from text-filtered visual features. Global and local
// text embeddings gate the visual map through a sigmoid similarity with a
// residual; the fused map is reduced to M sparse prompt tokens by a 1x1
// channel projection followed by strided Conv-BN-GELU blocks, and the raw
// global similarity map is resized into a dense coarse-mask prompt.

#include "refseg/nn.hpp"
#include "refseg/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace refseg {

template <class S>
class AttnPrompterT {
 public:
  struct Config {
    int d1 = 64;         // visual/text channel width
    int d2 = 64;         // prompt embedding width
    int downsample = 4;  // spatial reduction of the sparse path; 2, 4 or 8
  };

  AttnPrompterT() = default;
  AttnPrompterT(const Config& cfg, std::mt19937& rng) : cfg_(cfg) {
    if (cfg.downsample != 2 && cfg.downsample != 4 && cfg.downsample != 8)
      throw std::invalid_argument("prompter: downsample must be 2, 4 or 8, got " +
                                  std::to_string(cfg.downsample));
    channel_reduce_ = Conv2dT<S>(3 * cfg.d1, cfg.d2, 1, 1, 0, rng);
    int s = cfg.downsample;
    while (s > 1) {
      down_convs_.emplace_back(cfg.d2, cfg.d2, 3, 2, 1, rng);
      down_norms_.emplace_back(cfg.d2);
      s /= 2;
    }
  }

  // sigma(v . t_global^T): per-position activation in (0,1). v is
  // {h,w,d1}, t_global is [1,d1]; result {h,w,1}.
  static TensorT<S> global_attention_map(const TensorT<S>& v, const TensorT<S>& t_global) {
    check_grid(v, "global_attention_map");
    if (v.dim(2) != t_global.cols())
      throw std::invalid_argument("global_attention_map: channel dims " +
                                  std::to_string(v.dim(2)) + " vs " +
                                  std::to_string(t_global.cols()));
    auto sim = matmul_nt(reshape(v, {v.dim(0) * v.dim(1), v.dim(2)}), t_global);
    return reshape(sigmoid(sim), {v.dim(0), v.dim(1), 1});
  }

  // v * sigma(v t_global^T) + v
  static TensorT<S> filter_global(const TensorT<S>& v, const TensorT<S>& t_global) {
    auto map = global_attention_map(v, t_global);
    return add(scale_rows(v, reshape(map, {map.dim(0) * map.dim(1), 1})), v);
  }

  // mean over non-pad tokens of (v * sigma(v t_l^T)), plus residual v.
  // The mean commutes onto the maps because the gating is linear in the map.
  static TensorT<S> filter_local(const TensorT<S>& v, const TensorT<S>& t_local,
                                 const std::vector<bool>& pad_mask) {
    check_grid(v, "filter_local");
    if (v.dim(2) != t_local.cols())
      throw std::invalid_argument("filter_local: channel dims " + std::to_string(v.dim(2)) +
                                  " vs " + std::to_string(t_local.cols()));
    if (static_cast<int>(pad_mask.size()) != t_local.rows())
      throw std::invalid_argument("filter_local: pad mask length " +
                                  std::to_string(pad_mask.size()) + " vs tokens " +
                                  std::to_string(t_local.rows()));
    std::vector<bool> keep(pad_mask.size());
    bool any = false;
    for (size_t i = 0; i < pad_mask.size(); ++i) {
      keep[i] = !pad_mask[i];
      any = any || keep[i];
    }
    if (!any) throw std::invalid_argument("filter_local: every token is padding");
    auto sims = sigmoid(matmul_nt(reshape(v, {v.dim(0) * v.dim(1), v.dim(2)}), t_local));
    auto mean_map = mean_cols_masked(sims, keep);  // [h*w, 1]
    return add(scale_rows(v, mean_map), v);
  }

  // Channel concatenation in the fixed order (global, local, raw).
  static TensorT<S> fuse(const TensorT<S>& v_global_attn, const TensorT<S>& v_local_attn,
                         const TensorT<S>& v) {
    check_grid(v, "fuse");
    if (v_global_attn.shape() != v.shape() || v_local_attn.shape() != v.shape())
      throw std::invalid_argument("fuse: component shapes differ");
    const int n = v.dim(0) * v.dim(1), d = v.dim(2);
    auto cat = concat_cols<S>({reshape(v_global_attn, {n, d}), reshape(v_local_attn, {n, d}),
                               reshape(v, {n, d})});
    return reshape(cat, {v.dim(0), v.dim(1), 3 * d});
  }

  // v_attn {h,w,3*d1} -> [M, d2] with M = (h/s)*(w/s).
  TensorT<S> make_sparse(const TensorT<S>& v_attn, bool training) const {
    check_grid(v_attn, "make_sparse");
    if (v_attn.dim(2) != 3 * cfg_.d1)
      throw std::invalid_argument("make_sparse: expected " + std::to_string(3 * cfg_.d1) +
                                  " channels, got " + std::to_string(v_attn.dim(2)));
    const int s = cfg_.downsample;
    if (v_attn.dim(0) % s != 0 || v_attn.dim(1) % s != 0)
      throw std::invalid_argument("make_sparse: grid " + std::to_string(v_attn.dim(0)) + "x" +
                                  std::to_string(v_attn.dim(1)) + " not divisible by downsample " +
                                  std::to_string(s));
    auto x = channel_reduce_.forward(v_attn);
    for (size_t i = 0; i < down_convs_.size(); ++i)
      x = gelu(down_norms_[i].forward(down_convs_[i].forward(x), training));
    const int m = x.dim(0) * x.dim(1);
    return reshape(x, {m, cfg_.d2});
  }

  // Raw (pre-sigmoid) global similarity map resized to the prompt grid.
  static TensorT<S> make_dense(const TensorT<S>& v, const TensorT<S>& t_global, int h2, int w2) {
    check_grid(v, "make_dense");
    if (v.dim(2) != t_global.cols())
      throw std::invalid_argument("make_dense: channel dims " + std::to_string(v.dim(2)) +
                                  " vs " + std::to_string(t_global.cols()));
    auto sim = matmul_nt(reshape(v, {v.dim(0) * v.dim(1), v.dim(2)}), t_global);
    return bilinear_resize(reshape(sim, {v.dim(0), v.dim(1), 1}), h2, w2);
  }

  int sparse_count(int h1, int w1) const {
    return (h1 / cfg_.downsample) * (w1 / cfg_.downsample);
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    channel_reduce_.collect(prefix + ".channel_reduce", out);
    for (size_t i = 0; i < down_convs_.size(); ++i) {
      down_convs_[i].collect(prefix + ".down" + std::to_string(i) + ".conv", out);
      down_norms_[i].collect(prefix + ".down" + std::to_string(i) + ".bn", out);
    }
  }

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  Conv2dT<S> channel_reduce_;              // 1x1, 3*d1 -> d2
  std::vector<Conv2dT<S>> down_convs_;     // 3x3 stride 2 pad 1
  std::vector<BatchNorm2dT<S>> down_norms_;
};

using AttnPrompter = AttnPrompterT<float>;

}  // namespace refseg
