#pragma once

// Reverse-mode autodiff over dense row-major arrays.
//
// Ops build the graph eagerly and record a backprop closure per node; a
// node only keeps its parents alive while gradients are enabled, so
// inference-mode forwards free intermediates as soon as the handles die.
// The scalar type is a template parameter: the pipeline runs in float,
// finite-difference test oracles instantiate double.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace refseg {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// RAII switch for inference-mode forwards.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <class S>
class TensorT {
 public:
  struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;
    bool requires_grad = false;
    bool leaf = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
  };

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static TensorT filled(Shape shape, S v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad && grad_mode();
    n->leaf = true;
    return TensorT(std::move(n));
  }

  static TensorT from_vec(Shape shape, std::vector<S> v, bool requires_grad = false) {
    if (static_cast<int64_t>(v.size()) != shape_numel(shape))
      throw std::invalid_argument("from_vec: data size does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(v);
    n->requires_grad = requires_grad && grad_mode();
    n->leaf = true;
    return TensorT(std::move(n));
  }

  static TensorT scalar(S v) { return filled({1}, v); }

  static TensorT randn(Shape shape, std::mt19937& rng, S stddev, bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<S> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<S>(dist(rng)) * stddev;
    return from_vec(std::move(shape), std::move(v), requires_grad);
  }

  static TensorT rand_uniform(Shape shape, std::mt19937& rng, S lo, S hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    std::vector<S> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<S>(dist(rng));
    return from_vec(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return n_->numel(); }

  // Matrix view: all leading dims collapse into rows, last dim is cols.
  int rows() const { return static_cast<int>(numel() / cols()); }
  int cols() const { return n_->shape.empty() ? 1 : n_->shape.back(); }

  std::vector<S>& value() { return n_->value; }
  const std::vector<S>& value() const { return n_->value; }
  std::vector<S>& grad() { n_->ensure_grad(); return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  void clear_grad() { n_->grad.clear(); }
  S item() const {
    if (numel() != 1) throw std::logic_error("item: tensor is not scalar");
    return n_->value[0];
  }
  S at(int64_t i) const { return n_->value.at(static_cast<size_t>(i)); }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) {
    if (!n_->leaf) throw std::logic_error("set_requires_grad: only leaf tensors");
    n_->requires_grad = rg;
  }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

template <class S>
using NodePtr = std::shared_ptr<typename TensorT<S>::Node>;

namespace detail {

template <class S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class S>
ConstMatMap<S> as_mat(const std::vector<S>& v, int r, int c) {
  return ConstMatMap<S>(v.data(), r, c);
}
template <class S>
MatMap<S> as_mat(std::vector<S>& v, int r, int c) {
  return MatMap<S>(v.data(), r, c);
}

}  // namespace detail

// Builds an op node. The backprop closure must read node.grad and
// accumulate into each parent's grad (after ensure_grad on the parent).
template <class S>
TensorT<S> make_op(Shape shape, std::vector<S> value, std::vector<TensorT<S>> parents,
                   std::function<void(typename TensorT<S>::Node&)> backprop) {
  if (static_cast<int64_t>(value.size()) != shape_numel(shape))
    throw std::logic_error("make_op: value size mismatch for " + shape_str(shape));
  auto n = std::make_shared<typename TensorT<S>::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  if (grad_mode()) {
    for (const auto& p : parents) rg = rg || p.requires_grad();
  }
  if (rg) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return TensorT<S>(std::move(n));
}

template <class S>
void backward(const TensorT<S>& root) {
  using Node = typename TensorT<S>::Node;
  if (!root.requires_grad())
    throw std::logic_error("backward: root does not require grad");
  if (root.numel() != 1)
    throw std::logic_error("backward: root must be scalar");

  // Post-order DFS, iterative to be safe on deep graphs.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.node().get(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "add");
  std::vector<S> out(a.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  auto an = a.node(); auto bn = b.node();
  return make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "sub");
  std::vector<S> out(a.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto an = a.node(); auto bn = b.node();
  return make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "mul");
  std::vector<S> out(a.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto an = a.node(); auto bn = b.node();
  return make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  std::vector<S> out(a.value());
  for (auto& x : out) x *= c;
  auto an = a.node();
  return make_op<S>(a.shape(), std::move(out), {a}, [an, c](auto& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * c;
  });
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
  std::vector<S> out(a.value());
  for (auto& x : out) x += c;
  auto an = a.node();
  return make_op<S>(a.shape(), std::move(out), {a}, [an](auto& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

// Adds a length-C vector to every row of an [R, C] matrix view (bias add).
template <class S>
TensorT<S> add_row_broadcast(const TensorT<S>& a, const TensorT<S>& bias) {
  const int r = a.rows(), c = a.cols();
  if (bias.numel() != c)
    throw std::invalid_argument("add_row_broadcast: bias length " + std::to_string(bias.numel()) +
                                " vs cols " + std::to_string(c));
  std::vector<S> out(a.value());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += bias.value()[j];
  auto an = a.node(); auto bn = bias.node();
  return make_op<S>(a.shape(), std::move(out), {a, bias}, [an, bn, r, c](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) bn->grad[j] += n.grad[static_cast<size_t>(i) * c + j];
    }
  });
}

// Multiplies row i of the [R, C] matrix view by s[i]; s has R elements.
template <class S>
TensorT<S> scale_rows(const TensorT<S>& a, const TensorT<S>& s) {
  const int r = a.rows(), c = a.cols();
  if (s.numel() != r)
    throw std::invalid_argument("scale_rows: scale length " + std::to_string(s.numel()) +
                                " vs rows " + std::to_string(r));
  std::vector<S> out(a.value());
  for (int i = 0; i < r; ++i) {
    const S f = s.value()[i];
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] *= f;
  }
  auto an = a.node(); auto sn = s.node();
  return make_op<S>(a.shape(), std::move(out), {a, s}, [an, sn, r, c](auto& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (int i = 0; i < r; ++i) {
        const S f = sn->value[i];
        for (int j = 0; j < c; ++j) {
          const size_t k = static_cast<size_t>(i) * c + j;
          an->grad[k] += n.grad[k] * f;
        }
      }
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      for (int i = 0; i < r; ++i) {
        S acc = S(0);
        for (int j = 0; j < c; ++j) {
          const size_t k = static_cast<size_t>(i) * c + j;
          acc += n.grad[k] * an->value[k];
        }
        sn->grad[i] += acc;
      }
    }
  });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  std::vector<S> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const S x = a.value()[i];
    out[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                       : std::exp(x) / (S(1) + std::exp(x));
  }
  auto an = a.node();
  std::vector<S> saved = out;
  return make_op<S>(a.shape(), std::move(out), {a}, [an, saved = std::move(saved)](auto& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const S s = saved[i];
      an->grad[i] += n.grad[i] * s * (S(1) - s);
    }
  });
}

template <class S>
TensorT<S> gelu(const TensorT<S>& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  std::vector<S> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = static_cast<double>(a.value()[i]);
    out[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
  }
  auto an = a.node();
  return make_op<S>(a.shape(), std::move(out), {a}, [an](auto& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const double x = static_cast<double>(an->value[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      an->grad[i] += n.grad[i] * static_cast<S>(cdf + x * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix ops (matrix view: leading dims x last dim)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw std::invalid_argument("matmul: inner dims " + std::to_string(k) + " vs " + std::to_string(k2));
  std::vector<S> out(static_cast<size_t>(m) * n);
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a.value(), m, k) * detail::as_mat(b.value(), k, n);
  auto an = a.node(); auto bn = b.node();
  return make_op<S>({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](auto& node) {
    auto g = detail::as_mat(static_cast<const std::vector<S>&>(node.grad), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      detail::as_mat(an->grad, m, k).noalias() += g * detail::as_mat(bn->value, k, n).transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      detail::as_mat(bn->grad, k, n).noalias() += detail::as_mat(an->value, m, k).transpose() * g;
    }
  });
}

// a [m,k] times b^T where b is [n,k]; the common attention/similarity form.
template <class S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw std::invalid_argument("matmul_nt: inner dims " + std::to_string(k) + " vs " +
                                std::to_string(b.cols()));
  std::vector<S> out(static_cast<size_t>(m) * n);
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a.value(), m, k) * detail::as_mat(b.value(), n, k).transpose();
  auto an = a.node(); auto bn = b.node();
  return make_op<S>({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](auto& node) {
    auto g = detail::as_mat(static_cast<const std::vector<S>&>(node.grad), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      detail::as_mat(an->grad, m, k).noalias() += g * detail::as_mat(bn->value, n, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      detail::as_mat(bn->grad, n, k).noalias() += g.transpose() * detail::as_mat(an->value, m, k);
    }
  });
}

template <class S>
TensorT<S> transpose(const TensorT<S>& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<S> out(a.value().size());
  detail::as_mat(out, c, r) = detail::as_mat(a.value(), r, c).transpose();
  auto an = a.node();
  return make_op<S>({c, r}, std::move(out), {a}, [an, r, c](auto& n) {
    an->ensure_grad();
    detail::as_mat(an->grad, r, c) +=
        detail::as_mat(static_cast<const std::vector<S>&>(n.grad), c, r).transpose();
  });
}

template <class S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                                shape_str(shape));
  std::vector<S> out(a.value());
  auto an = a.node();
  return make_op<S>(std::move(shape), std::move(out), {a}, [an](auto& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

template <class S>
TensorT<S> slice_rows(const TensorT<S>& a, int r0, int r1) {
  const int r = a.rows(), c = a.cols();
  if (r0 < 0 || r1 > r || r0 > r1) throw std::invalid_argument("slice_rows: bad range");
  std::vector<S> out(static_cast<size_t>(r1 - r0) * c);
  std::copy(a.value().begin() + static_cast<size_t>(r0) * c,
            a.value().begin() + static_cast<size_t>(r1) * c, out.begin());
  auto an = a.node();
  return make_op<S>({r1 - r0, c}, std::move(out), {a}, [an, r0, c](auto& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      an->grad[static_cast<size_t>(r0) * c + i] += n.grad[i];
  });
}

template <class S>
TensorT<S> slice_cols(const TensorT<S>& a, int c0, int c1) {
  const int r = a.rows(), c = a.cols();
  if (c0 < 0 || c1 > c || c0 > c1) throw std::invalid_argument("slice_cols: bad range");
  const int w = c1 - c0;
  std::vector<S> out(static_cast<size_t>(r) * w);
  for (int i = 0; i < r; ++i)
    std::copy(a.value().begin() + static_cast<size_t>(i) * c + c0,
              a.value().begin() + static_cast<size_t>(i) * c + c1,
              out.begin() + static_cast<size_t>(i) * w);
  auto an = a.node();
  return make_op<S>({r, w}, std::move(out), {a}, [an, r, c, c0, w](auto& n) {
    an->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        an->grad[static_cast<size_t>(i) * c + c0 + j] += n.grad[static_cast<size_t>(i) * w + j];
  });
}

template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const int r = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.cols();
  }
  std::vector<S> out(static_cast<size_t>(r) * total);
  int off = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int c = p.cols();
    for (int i = 0; i < r; ++i)
      std::copy(p.value().begin() + static_cast<size_t>(i) * c,
                p.value().begin() + static_cast<size_t>(i + 1) * c,
                out.begin() + static_cast<size_t>(i) * total + off);
    off += c;
  }
  std::vector<NodePtr<S>> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) { nodes.push_back(p.node()); widths.push_back(p.cols()); }
  return make_op<S>({r, total}, std::move(out), parts,
                    [nodes, offsets, widths, r, total](auto& n) {
    for (size_t pi = 0; pi < nodes.size(); ++pi) {
      if (!nodes[pi]->requires_grad) continue;
      nodes[pi]->ensure_grad();
      const int c = widths[pi], o = offsets[pi];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          nodes[pi]->grad[static_cast<size_t>(i) * c + j] +=
              n.grad[static_cast<size_t>(i) * total + o + j];
    }
  });
}

template <class S>
TensorT<S> concat_rows(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const int c = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("concat_rows: col mismatch");
    total += p.rows();
  }
  std::vector<S> out;
  out.reserve(static_cast<size_t>(total) * c);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  std::vector<NodePtr<S>> nodes;
  std::vector<int64_t> sizes;
  for (const auto& p : parts) { nodes.push_back(p.node()); sizes.push_back(p.numel()); }
  return make_op<S>({total, c}, std::move(out), parts, [nodes, sizes](auto& n) {
    size_t off = 0;
    for (size_t pi = 0; pi < nodes.size(); ++pi) {
      if (nodes[pi]->requires_grad) {
        nodes[pi]->ensure_grad();
        for (int64_t i = 0; i < sizes[pi]; ++i) nodes[pi]->grad[i] += n.grad[off + i];
      }
      off += static_cast<size_t>(sizes[pi]);
    }
  });
}

// Gathers rows by index from the [R, C] matrix view (embedding lookup and
// row selection share this path).
template <class S>
TensorT<S> gather_rows(const TensorT<S>& a, const std::vector<int>& idx) {
  const int r = a.rows(), c = a.cols();
  std::vector<S> out(idx.size() * static_cast<size_t>(c));
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= r)
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) + " of " + std::to_string(r));
    std::copy(a.value().begin() + static_cast<size_t>(idx[i]) * c,
              a.value().begin() + static_cast<size_t>(idx[i] + 1) * c,
              out.begin() + i * static_cast<size_t>(c));
  }
  auto an = a.node();
  return make_op<S>({static_cast<int>(idx.size()), c}, std::move(out), {a}, [an, idx, c](auto& n) {
    an->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < c; ++j)
        an->grad[static_cast<size_t>(idx[i]) * c + j] += n.grad[i * static_cast<size_t>(c) + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalization
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> sum_all(const TensorT<S>& a) {
  S acc = S(0);
  for (S x : a.value()) acc += x;
  auto an = a.node();
  return make_op<S>({1}, {acc}, {a}, [an](auto& n) {
    an->ensure_grad();
    for (auto& g : an->grad) g += n.grad[0];
  });
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

// Mean over the kept columns of an [R, L] matrix; keep must flag >= 1 column.
template <class S>
TensorT<S> mean_cols_masked(const TensorT<S>& a, const std::vector<bool>& keep) {
  const int r = a.rows(), c = a.cols();
  if (static_cast<int>(keep.size()) != c)
    throw std::invalid_argument("mean_cols_masked: mask length vs cols");
  int count = 0;
  for (bool k : keep) count += k ? 1 : 0;
  if (count == 0) throw std::invalid_argument("mean_cols_masked: no columns kept");
  std::vector<S> out(static_cast<size_t>(r), S(0));
  for (int i = 0; i < r; ++i) {
    S acc = S(0);
    for (int j = 0; j < c; ++j)
      if (keep[j]) acc += a.value()[static_cast<size_t>(i) * c + j];
    out[i] = acc / static_cast<S>(count);
  }
  auto an = a.node();
  return make_op<S>({r, 1}, std::move(out), {a}, [an, keep, r, c, count](auto& n) {
    an->ensure_grad();
    const S inv = S(1) / static_cast<S>(count);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        if (keep[j]) an->grad[static_cast<size_t>(i) * c + j] += n.grad[i] * inv;
  });
}

// Row-wise softmax over the [R, C] matrix view.
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<S> out(a.value().size());
  for (int i = 0; i < r; ++i) {
    const S* x = a.value().data() + static_cast<size_t>(i) * c;
    S* y = out.data() + static_cast<size_t>(i) * c;
    S mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    S acc = S(0);
    for (int j = 0; j < c; ++j) { y[j] = std::exp(x[j] - mx); acc += y[j]; }
    const S inv = S(1) / acc;
    for (int j = 0; j < c; ++j) y[j] *= inv;
  }
  auto an = a.node();
  std::vector<S> saved = out;
  return make_op<S>(a.shape(), std::move(out), {a}, [an, saved = std::move(saved), r, c](auto& n) {
    an->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const S* p = saved.data() + static_cast<size_t>(i) * c;
      const S* g = n.grad.data() + static_cast<size_t>(i) * c;
      S dot = S(0);
      for (int j = 0; j < c; ++j) dot += g[j] * p[j];
      for (int j = 0; j < c; ++j)
        an->grad[static_cast<size_t>(i) * c + j] += p[j] * (g[j] - dot);
    }
  });
}

// Per-row layer normalization with learnable gain/bias of length C.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                      S eps = S(1e-5)) {
  const int r = x.rows(), c = x.cols();
  if (gain.numel() != c || bias.numel() != c)
    throw std::invalid_argument("layer_norm: gain/bias length vs cols");
  std::vector<S> out(x.value().size());
  std::vector<S> xhat(x.value().size());
  std::vector<S> invstd(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const S* px = x.value().data() + static_cast<size_t>(i) * c;
    S mean = S(0);
    for (int j = 0; j < c; ++j) mean += px[j];
    mean /= static_cast<S>(c);
    S var = S(0);
    for (int j = 0; j < c; ++j) { const S d = px[j] - mean; var += d * d; }
    var /= static_cast<S>(c);
    const S is = S(1) / std::sqrt(var + eps);
    invstd[i] = is;
    for (int j = 0; j < c; ++j) {
      const size_t k = static_cast<size_t>(i) * c + j;
      xhat[k] = (px[j] - mean) * is;
      out[k] = xhat[k] * gain.value()[j] + bias.value()[j];
    }
  }
  auto xn = x.node(); auto gn = gain.node(); auto bn = bias.node();
  return make_op<S>(x.shape(), std::move(out), {x, gain, bias},
                    [xn, gn, bn, xhat = std::move(xhat), invstd = std::move(invstd), r, c](auto& n) {
    for (int i = 0; i < r; ++i) {
      const S* g = n.grad.data() + static_cast<size_t>(i) * c;
      const S* xh = xhat.data() + static_cast<size_t>(i) * c;
      if (xn->requires_grad) {
        xn->ensure_grad();
        S mean_dy = S(0), mean_dyxh = S(0);
        for (int j = 0; j < c; ++j) {
          const S dy = g[j] * gn->value[j];
          mean_dy += dy;
          mean_dyxh += dy * xh[j];
        }
        mean_dy /= static_cast<S>(c);
        mean_dyxh /= static_cast<S>(c);
        for (int j = 0; j < c; ++j) {
          const S dy = g[j] * gn->value[j];
          xn->grad[static_cast<size_t>(i) * c + j] +=
              invstd[i] * (dy - mean_dy - xh[j] * mean_dyxh);
        }
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < c; ++j) gn->grad[j] += g[j] * xh[j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < c; ++j) bn->grad[j] += g[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Grid ops; grid tensors are shaped {H, W, C} row-major
// ---------------------------------------------------------------------------

template <class S>
void check_grid(const TensorT<S>& x, const char* what) {
  if (x.ndim() != 3)
    throw std::invalid_argument(std::string(what) + ": expected {H,W,C} tensor, got " +
                                shape_str(x.shape()));
}

// Unfolds {H,W,C} into [OH*OW, kh*kw*C] patch rows with zero padding.
template <class S>
TensorT<S> im2col(const TensorT<S>& x, int kh, int kw, int stride, int pad) {
  check_grid(x, "im2col");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("im2col: empty output");
  const int row_len = kh * kw * c;
  std::vector<S> out(static_cast<size_t>(oh) * ow * row_len, S(0));
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      S* dst = out.data() + (static_cast<size_t>(oy) * ow + ox) * row_len;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          const S* src = x.value().data() + (static_cast<size_t>(iy) * w + ix) * c;
          std::copy(src, src + c, dst + (static_cast<size_t>(ky) * kw + kx) * c);
        }
      }
    }
  }
  auto xn = x.node();
  return make_op<S>({oh * ow, row_len}, std::move(out), {x},
                    [xn, h, w, c, kh, kw, stride, pad, oh, ow, row_len](auto& n) {
    xn->ensure_grad();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const S* g = n.grad.data() + (static_cast<size_t>(oy) * ow + ox) * row_len;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            S* dst = xn->grad.data() + (static_cast<size_t>(iy) * w + ix) * c;
            const S* src = g + (static_cast<size_t>(ky) * kw + kx) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  });
}

// Bilinear resize of {H,W,C} to {OH,OW,C}; half-pixel centers, edge clamp.
template <class S>
TensorT<S> bilinear_resize(const TensorT<S>& x, int oh, int ow) {
  check_grid(x, "bilinear_resize");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("bilinear_resize: bad target size");
  struct Tap { int lo, hi; S frac; };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<size_t>(out));
    const double s = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double pos = (o + 0.5) * s - 0.5;
      pos = std::min(std::max(pos, 0.0), static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(pos));
      t[o] = {lo, std::min(lo + 1, in - 1), static_cast<S>(pos - lo)};
    }
    return t;
  };
  const auto ty = taps(h, oh), tx = taps(w, ow);
  std::vector<S> out(static_cast<size_t>(oh) * ow * c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const auto& a = ty[oy];
      const auto& b = tx[ox];
      const S w00 = (S(1) - a.frac) * (S(1) - b.frac), w01 = (S(1) - a.frac) * b.frac;
      const S w10 = a.frac * (S(1) - b.frac), w11 = a.frac * b.frac;
      const S* p00 = x.value().data() + (static_cast<size_t>(a.lo) * w + b.lo) * c;
      const S* p01 = x.value().data() + (static_cast<size_t>(a.lo) * w + b.hi) * c;
      const S* p10 = x.value().data() + (static_cast<size_t>(a.hi) * w + b.lo) * c;
      const S* p11 = x.value().data() + (static_cast<size_t>(a.hi) * w + b.hi) * c;
      S* dst = out.data() + (static_cast<size_t>(oy) * ow + ox) * c;
      for (int ch = 0; ch < c; ++ch)
        dst[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
    }
  }
  auto xn = x.node();
  return make_op<S>({oh, ow, c}, std::move(out), {x}, [xn, ty, tx, h, w, c, oh, ow](auto& n) {
    xn->ensure_grad();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const auto& a = ty[oy];
        const auto& b = tx[ox];
        const S w00 = (S(1) - a.frac) * (S(1) - b.frac), w01 = (S(1) - a.frac) * b.frac;
        const S w10 = a.frac * (S(1) - b.frac), w11 = a.frac * b.frac;
        const S* g = n.grad.data() + (static_cast<size_t>(oy) * ow + ox) * c;
        S* g00 = xn->grad.data() + (static_cast<size_t>(a.lo) * w + b.lo) * c;
        S* g01 = xn->grad.data() + (static_cast<size_t>(a.lo) * w + b.hi) * c;
        S* g10 = xn->grad.data() + (static_cast<size_t>(a.hi) * w + b.lo) * c;
        S* g11 = xn->grad.data() + (static_cast<size_t>(a.hi) * w + b.hi) * c;
        for (int ch = 0; ch < c; ++ch) {
          g00[ch] += w00 * g[ch];
          g01[ch] += w01 * g[ch];
          g10[ch] += w10 * g[ch];
          g11[ch] += w11 * g[ch];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean binary cross-entropy in the numerically stable logit form; targets
// are plain data, not differentiated through.
template <class S>
TensorT<S> bce_with_logits_mean(const TensorT<S>& logits, const std::vector<S>& targets) {
  if (static_cast<int64_t>(targets.size()) != logits.numel())
    throw std::invalid_argument("bce_with_logits_mean: size mismatch");
  const int64_t n = logits.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(logits.value()[i]);
    const double y = static_cast<double>(targets[i]);
    acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  auto ln = logits.node();
  const S inv_n = S(1) / static_cast<S>(n);
  return make_op<S>({1}, {static_cast<S>(acc / static_cast<double>(n))}, {logits},
                    [ln, targets, inv_n](auto& node) {
    ln->ensure_grad();
    const S g = node.grad[0] * inv_n;
    for (size_t i = 0; i < targets.size(); ++i) {
      const S x = ln->value[i];
      const S sig = x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
      ln->grad[i] += g * (sig - targets[i]);
    }
  });
}

using Tensor = TensorT<float>;

}  // namespace refseg
