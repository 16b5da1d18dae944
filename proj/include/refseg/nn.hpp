#pragma once

// Neural net building blocks on top of the autodiff core: linear layers
// with optional low-rank adapters, layer/batch norm, attention, small
// convolutions. Modules register their parameters into a NamedTensors
// list; the trainer, checkpointer and trainability policy all work off
// that flat registry.

#include "refseg/log.hpp"
#include "refseg/tensor.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace refseg {

template <class S>
struct NamedTensors {
  std::vector<std::pair<std::string, TensorT<S>>> params;
  std::vector<std::pair<std::string, TensorT<S>>> buffers;

  void param(const std::string& name, const TensorT<S>& t) { params.emplace_back(name, t); }
  void buffer(const std::string& name, const TensorT<S>& t) { buffers.emplace_back(name, t); }

  const TensorT<S>* find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return &t;
    for (const auto& [n, t] : buffers)
      if (n == name) return &t;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Linear, with optional low-rank adapter (W stays frozen, W* = W + A B^T)
// ---------------------------------------------------------------------------

template <class S>
class LinearT {
 public:
  LinearT() = default;
  LinearT(int in, int out, std::mt19937& rng, bool with_bias = true)
      : in_(in), out_(out) {
    const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(in)));
    weight_ = TensorT<S>::rand_uniform({out, in}, rng, -bound, bound, true);
    if (with_bias) bias_ = TensorT<S>::zeros({out}, true);
  }

  TensorT<S> forward(const TensorT<S>& x) const {
    if (x.cols() != in_)
      throw std::invalid_argument("Linear: input cols " + std::to_string(x.cols()) + " vs " +
                                  std::to_string(in_));
    auto y = matmul_nt(x, weight_);
    if (bias_.defined()) y = add_row_broadcast(y, bias_);
    return y;
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    out.param(prefix + ".weight", weight_);
    if (bias_.defined()) out.param(prefix + ".bias", bias_);
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  TensorT<S>& weight() { return weight_; }
  const TensorT<S>& weight() const { return weight_; }
  TensorT<S>& bias() { return bias_; }

 private:
  int in_ = 0, out_ = 0;
  TensorT<S> weight_;  // [out, in]
  TensorT<S> bias_;    // [out], optional
};

template <class S>
struct LowRankAdapterT {
  TensorT<S> A;  // [out, r]
  TensorT<S> B;  // [in, r]
  int rank = 0;
};

template <class S>
class AdaptedLinearT {
 public:
  AdaptedLinearT() = default;
  explicit AdaptedLinearT(LinearT<S> base) : base_(std::move(base)) {}

  TensorT<S> forward(const TensorT<S>& x) const {
    auto y = base_.forward(x);
    if (adapter_.rank > 0) {
      // x [N,in] * B [in,r] -> [N,r], then * A^T -> [N,out]
      y = add(y, matmul_nt(matmul(x, adapter_.B), adapter_.A));
    }
    return y;
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    base_.collect(prefix, out);
    if (adapter_.rank > 0) {
      out.param(prefix + ".lora_a", adapter_.A);
      out.param(prefix + ".lora_b", adapter_.B);
    }
  }

  bool has_adapter() const { return adapter_.rank > 0; }
  const LowRankAdapterT<S>& adapter() const { return adapter_; }
  LowRankAdapterT<S>& adapter() { return adapter_; }
  LinearT<S>& base() { return base_; }
  const LinearT<S>& base() const { return base_; }

  void attach_adapter(LowRankAdapterT<S> a) { adapter_ = std::move(a); }

 private:
  LinearT<S> base_;
  LowRankAdapterT<S> adapter_;
};

// Attaches a rank-r adapter to a linear map. A is Gaussian, B is zero, so
// the wrapped layer equals the original at initialization.
template <class S>
AdaptedLinearT<S> wrap_linear(LinearT<S> layer, int r, std::mt19937& rng) {
  const int din = layer.in_features(), dout = layer.out_features();
  if (r < 1) throw std::invalid_argument("wrap_linear: rank must be >= 1");
  const int dmin = std::min(din, dout);
  if (r >= dmin)
    throw std::invalid_argument("wrap_linear: rank " + std::to_string(r) +
                                " >= min(d_in,d_out) = " + std::to_string(dmin));
  if (r > dmin / 4)
    log::warn("wrap_linear: rank " + std::to_string(r) + " exceeds d/4 = " +
              std::to_string(dmin / 4) + "; adapter is no longer low-rank in spirit");
  AdaptedLinearT<S> adapted(std::move(layer));
  LowRankAdapterT<S> a;
  a.rank = r;
  a.A = TensorT<S>::randn({dout, r}, rng, static_cast<S>(0.02), true);
  a.B = TensorT<S>::zeros({din, r}, true);
  adapted.attach_adapter(std::move(a));
  return adapted;
}

// Dense W + A B^T; plain data, not part of any graph.
template <class S>
std::vector<S> merged_weight(const AdaptedLinearT<S>& layer) {
  const auto& w = layer.base().weight();
  std::vector<S> merged = w.value();
  if (layer.has_adapter()) {
    const int out = w.dim(0), in = w.dim(1), r = layer.adapter().rank;
    detail::as_mat(merged, out, in).noalias() +=
        detail::as_mat(layer.adapter().A.value(), out, r) *
        detail::as_mat(layer.adapter().B.value(), in, r).transpose();
  }
  return merged;
}

// ---------------------------------------------------------------------------
// Norm layers and embeddings
// ---------------------------------------------------------------------------

template <class S>
class LayerNormT {
 public:
  LayerNormT() = default;
  explicit LayerNormT(int dim)
      : gain_(TensorT<S>::filled({dim}, S(1), true)), bias_(TensorT<S>::zeros({dim}, true)) {}

  TensorT<S> forward(const TensorT<S>& x) const { return layer_norm(x, gain_, bias_); }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    out.param(prefix + ".gain", gain_);
    out.param(prefix + ".bias", bias_);
  }

 private:
  TensorT<S> gain_, bias_;
};

template <class S>
class EmbeddingT {
 public:
  EmbeddingT() = default;
  EmbeddingT(int count, int dim, std::mt19937& rng)
      : table_(TensorT<S>::randn({count, dim}, rng, static_cast<S>(0.02), true)) {}

  TensorT<S> forward(const std::vector<int>& ids) const { return gather_rows(table_, ids); }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    out.param(prefix + ".table", table_);
  }

  TensorT<S>& table() { return table_; }
  const TensorT<S>& table() const { return table_; }

 private:
  TensorT<S> table_;
};

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

template <class S>
class MultiheadAttentionT {
 public:
  MultiheadAttentionT() = default;
  MultiheadAttentionT(int dim, int heads, std::mt19937& rng) : dim_(dim), heads_(heads) {
    if (dim % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    q_ = AdaptedLinearT<S>(LinearT<S>(dim, dim, rng));
    k_ = AdaptedLinearT<S>(LinearT<S>(dim, dim, rng));
    v_ = AdaptedLinearT<S>(LinearT<S>(dim, dim, rng));
    o_ = AdaptedLinearT<S>(LinearT<S>(dim, dim, rng));
  }

  // Self attention when xkv == xq. key_pad flags keys to exclude.
  TensorT<S> forward(const TensorT<S>& xq, const TensorT<S>& xkv,
                     const std::vector<bool>* key_pad = nullptr) const {
    const int nk = xkv.rows();
    auto q = q_.forward(xq);
    auto k = k_.forward(xkv);
    auto v = v_.forward(xkv);
    TensorT<S> mask_bias;
    if (key_pad) {
      if (static_cast<int>(key_pad->size()) != nk)
        throw std::invalid_argument("attention: key mask length vs keys");
      std::vector<S> bias(static_cast<size_t>(nk), S(0));
      for (int j = 0; j < nk; ++j)
        if ((*key_pad)[j]) bias[static_cast<size_t>(j)] = S(-1e30);
      mask_bias = TensorT<S>::from_vec({nk}, std::move(bias));
    }
    const int dh = dim_ / heads_;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<TensorT<S>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
      auto qh = slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = slice_cols(v, h * dh, (h + 1) * dh);
      auto scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
      if (mask_bias.defined()) scores = add_row_broadcast(scores, mask_bias);
      head_outs.push_back(matmul(softmax_rows(scores), vh));
    }
    return o_.forward(concat_cols(head_outs));
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    q_.collect(prefix + ".q", out);
    k_.collect(prefix + ".k", out);
    v_.collect(prefix + ".v", out);
    o_.collect(prefix + ".o", out);
  }

  // Adapter injection on the standard q/k/v/o projection set.
  void add_adapters(int rank, std::mt19937& rng) {
    q_ = wrap_linear(std::move(q_.base()), rank, rng);
    k_ = wrap_linear(std::move(k_.base()), rank, rng);
    v_ = wrap_linear(std::move(v_.base()), rank, rng);
    o_ = wrap_linear(std::move(o_.base()), rank, rng);
  }
  bool has_adapters() const { return q_.has_adapter(); }

 private:
  int dim_ = 0, heads_ = 1;
  AdaptedLinearT<S> q_, k_, v_, o_;
};

// Pre-norm transformer block: x += attn(LN(x)); x += mlp(LN(x)).
template <class S>
class TransformerBlockT {
 public:
  TransformerBlockT() = default;
  TransformerBlockT(int dim, int heads, std::mt19937& rng, int mlp_factor = 4)
      : ln1_(dim), ln2_(dim), attn_(dim, heads, rng),
        fc1_(dim, dim * mlp_factor, rng), fc2_(dim * mlp_factor, dim, rng) {}

  TensorT<S> forward(const TensorT<S>& x, const std::vector<bool>* key_pad = nullptr) const {
    auto normed = ln1_.forward(x);
    auto h = add(x, attn_.forward(normed, normed, key_pad));
    return add(h, fc2_.forward(gelu(fc1_.forward(ln2_.forward(h)))));
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    ln1_.collect(prefix + ".ln1", out);
    ln2_.collect(prefix + ".ln2", out);
    attn_.collect(prefix + ".attn", out);
    fc1_.collect(prefix + ".mlp.fc1", out);
    fc2_.collect(prefix + ".mlp.fc2", out);
  }

  void add_adapters(int rank, std::mt19937& rng) { attn_.add_adapters(rank, rng); }
  bool has_adapters() const { return attn_.has_adapters(); }

 private:
  LayerNormT<S> ln1_, ln2_;
  MultiheadAttentionT<S> attn_;
  LinearT<S> fc1_, fc2_;
};

// ---------------------------------------------------------------------------
// Convolutions over {H,W,C} grids
// ---------------------------------------------------------------------------

inline int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <class S>
class Conv2dT {
 public:
  Conv2dT() = default;
  Conv2dT(int in_ch, int out_ch, int k, int stride, int pad, std::mt19937& rng)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad) {
    const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(k * k * in_ch)));
    weight_ = TensorT<S>::rand_uniform({out_ch, k * k * in_ch}, rng, -bound, bound, true);
    bias_ = TensorT<S>::zeros({out_ch}, true);
  }

  TensorT<S> forward(const TensorT<S>& x) const {
    check_grid(x, "Conv2d");
    if (x.dim(2) != in_ch_)
      throw std::invalid_argument("Conv2d: channels " + std::to_string(x.dim(2)) + " vs " +
                                  std::to_string(in_ch_));
    const int oh = conv_out_size(x.dim(0), k_, stride_, pad_);
    const int ow = conv_out_size(x.dim(1), k_, stride_, pad_);
    auto cols = im2col(x, k_, k_, stride_, pad_);
    auto y = add_row_broadcast(matmul_nt(cols, weight_), bias_);
    return reshape(y, {oh, ow, out_ch_});
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    out.param(prefix + ".weight", weight_);
    out.param(prefix + ".bias", bias_);
  }

  int out_channels() const { return out_ch_; }

 private:
  int in_ch_ = 0, out_ch_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  TensorT<S> weight_;  // [out_ch, k*k*in_ch]
  TensorT<S> bias_;
};

// Interleaves four [H*W, C] grids into {2H, 2W, C}; the scatter step of a
// kernel-2 stride-2 transposed convolution.
template <class S>
TensorT<S> interleave_2x2(const TensorT<S>& y00, const TensorT<S>& y01, const TensorT<S>& y10,
                          const TensorT<S>& y11, int h, int w) {
  const int c = y00.cols();
  const std::vector<TensorT<S>> parts = {y00, y01, y10, y11};
  for (const auto& p : parts)
    if (p.rows() != h * w || p.cols() != c)
      throw std::invalid_argument("interleave_2x2: part shape mismatch");
  std::vector<S> out(static_cast<size_t>(4) * h * w * c);
  const int ow = 2 * w;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const auto& src = parts[static_cast<size_t>(dy) * 2 + dx].value();
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          std::copy(src.begin() + (static_cast<size_t>(i) * w + j) * c,
                    src.begin() + (static_cast<size_t>(i) * w + j + 1) * c,
                    out.begin() + (static_cast<size_t>(2 * i + dy) * ow + 2 * j + dx) * c);
    }
  }
  std::vector<NodePtr<S>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op<S>({2 * h, 2 * w, c}, std::move(out), parts, [nodes, h, w, c](auto& n) {
    const int ow = 2 * w;
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        auto& parent = nodes[static_cast<size_t>(dy) * 2 + dx];
        if (!parent->requires_grad) continue;
        parent->ensure_grad();
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            const S* g = n.grad.data() + (static_cast<size_t>(2 * i + dy) * ow + 2 * j + dx) * c;
            S* dst = parent->grad.data() + (static_cast<size_t>(i) * w + j) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += g[ch];
          }
      }
    }
  });
}

// Kernel-2 stride-2 transposed convolution: {H,W,C} -> {2H,2W,outC}.
template <class S>
class ConvTranspose2x2T {
 public:
  ConvTranspose2x2T() = default;
  ConvTranspose2x2T(int in_ch, int out_ch, std::mt19937& rng) : in_ch_(in_ch), out_ch_(out_ch) {
    const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(in_ch)));
    for (int i = 0; i < 4; ++i)
      taps_[i] = TensorT<S>::rand_uniform({in_ch, out_ch}, rng, -bound, bound, true);
    bias_ = TensorT<S>::zeros({out_ch}, true);
  }

  TensorT<S> forward(const TensorT<S>& x) const {
    check_grid(x, "ConvTranspose2x2");
    if (x.dim(2) != in_ch_) throw std::invalid_argument("ConvTranspose2x2: channel mismatch");
    const int h = x.dim(0), w = x.dim(1);
    auto flat = reshape(x, {h * w, in_ch_});
    auto y = interleave_2x2(matmul(flat, taps_[0]), matmul(flat, taps_[1]),
                            matmul(flat, taps_[2]), matmul(flat, taps_[3]), h, w);
    return reshape(add_row_broadcast(y, bias_), {2 * h, 2 * w, out_ch_});
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    for (int i = 0; i < 4; ++i)
      out.param(prefix + ".tap" + std::to_string(i), taps_[i]);
    out.param(prefix + ".bias", bias_);
  }

 private:
  int in_ch_ = 0, out_ch_ = 0;
  TensorT<S> taps_[4];  // per (dy,dx) offset, each [in_ch, out_ch]
  TensorT<S> bias_;
};

// ---------------------------------------------------------------------------
// Batch norm over grid channels
// ---------------------------------------------------------------------------

template <class S>
class BatchNorm2dT {
 public:
  BatchNorm2dT() = default;
  explicit BatchNorm2dT(int ch, S momentum = static_cast<S>(0.1), S eps = static_cast<S>(1e-5))
      : ch_(ch), momentum_(momentum), eps_(eps),
        gain_(TensorT<S>::filled({ch}, S(1), true)),
        beta_(TensorT<S>::zeros({ch}, true)),
        running_mean_(TensorT<S>::zeros({ch})),
        running_var_(TensorT<S>::filled({ch}, S(1))) {}

  TensorT<S> forward(const TensorT<S>& x, bool training) const {
    check_grid(x, "BatchNorm2d");
    if (x.dim(2) != ch_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
    const int h = x.dim(0), w = x.dim(1), c = ch_;
    const int n = h * w;
    std::vector<S> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
    if (training) {
      for (int ch = 0; ch < c; ++ch) { mean[ch] = S(0); var[ch] = S(0); }
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) mean[ch] += x.value()[static_cast<size_t>(i) * c + ch];
      for (int ch = 0; ch < c; ++ch) mean[ch] /= static_cast<S>(n);
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const S d = x.value()[static_cast<size_t>(i) * c + ch] - mean[ch];
          var[ch] += d * d;
        }
      for (int ch = 0; ch < c; ++ch) var[ch] /= static_cast<S>(n);
      auto& rm = running_mean_.value();
      auto& rv = running_var_.value();
      const S unbias = n > 1 ? static_cast<S>(n) / static_cast<S>(n - 1) : S(1);
      for (int ch = 0; ch < c; ++ch) {
        rm[ch] = (S(1) - momentum_) * rm[ch] + momentum_ * mean[ch];
        rv[ch] = (S(1) - momentum_) * rv[ch] + momentum_ * var[ch] * unbias;
      }
    } else {
      mean = running_mean_.value();
      var = running_var_.value();
    }
    std::vector<S> invstd(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) invstd[ch] = S(1) / std::sqrt(var[ch] + eps_);
    std::vector<S> out(x.value().size());
    std::vector<S> xhat(x.value().size());
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const size_t k = static_cast<size_t>(i) * c + ch;
        xhat[k] = (x.value()[k] - mean[ch]) * invstd[ch];
        out[k] = xhat[k] * gain_.value()[ch] + beta_.value()[ch];
      }
    auto xn = x.node(); auto gn = gain_.node(); auto bn = beta_.node();
    return make_op<S>(x.shape(), std::move(out), {x, gain_, beta_},
                      [xn, gn, bn, xhat = std::move(xhat), invstd = std::move(invstd), n, c,
                       training](auto& node) {
      if (xn->requires_grad) {
        xn->ensure_grad();
        if (training) {
          for (int ch = 0; ch < c; ++ch) {
            S mean_dy = S(0), mean_dyxh = S(0);
            for (int i = 0; i < n; ++i) {
              const size_t k = static_cast<size_t>(i) * c + ch;
              const S dy = node.grad[k] * gn->value[ch];
              mean_dy += dy;
              mean_dyxh += dy * xhat[k];
            }
            mean_dy /= static_cast<S>(n);
            mean_dyxh /= static_cast<S>(n);
            for (int i = 0; i < n; ++i) {
              const size_t k = static_cast<size_t>(i) * c + ch;
              const S dy = node.grad[k] * gn->value[ch];
              xn->grad[k] += invstd[ch] * (dy - mean_dy - xhat[k] * mean_dyxh);
            }
          }
        } else {
          for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
              const size_t k = static_cast<size_t>(i) * c + ch;
              xn->grad[k] += node.grad[k] * gn->value[ch] * invstd[ch];
            }
        }
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch) {
            const size_t k = static_cast<size_t>(i) * c + ch;
            gn->grad[ch] += node.grad[k] * xhat[k];
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch)
            bn->grad[ch] += node.grad[static_cast<size_t>(i) * c + ch];
      }
    });
  }

  void collect(const std::string& prefix, NamedTensors<S>& out) const {
    out.param(prefix + ".gain", gain_);
    out.param(prefix + ".beta", beta_);
    out.buffer(prefix + ".running_mean", running_mean_);
    out.buffer(prefix + ".running_var", running_var_);
  }

 private:
  int ch_ = 0;
  S momentum_ = static_cast<S>(0.1), eps_ = static_cast<S>(1e-5);
  TensorT<S> gain_, beta_;
  mutable TensorT<S> running_mean_, running_var_;  // buffers, updated in training forwards
};

}  // namespace refseg
