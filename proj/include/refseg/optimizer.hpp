#pragma once

// AdamW over a named parameter list. Weight decay is decoupled from the
// adaptive update. Parameters without a gradient are skipped.

#include "refseg/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace refseg {

class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(std::vector<std::pair<std::string, Tensor>> params, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.01)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps),
        weight_decay_(weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params_[i].second.numel()), 0.0f);
      v_[i].assign(static_cast<size_t>(params_[i].second.numel()), 0.0f);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (!p.has_grad()) continue;
      auto& value = p.value();
      const auto& grad = p.grad();
      for (size_t k = 0; k < value.size(); ++k) {
        const double g = grad[k];
        m_[i][k] = static_cast<float>(beta1_ * m_[i][k] + (1.0 - beta1_) * g);
        v_[i][k] = static_cast<float>(beta2_ * v_[i][k] + (1.0 - beta2_) * g * g);
        const double mhat = m_[i][k] / bc1;
        const double vhat = v_[i][k] / bc2;
        value[k] -= static_cast<float>(lr * (mhat / (std::sqrt(vhat) + eps_) +
                                             weight_decay_ * value[k]));
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.clear_grad();
  }

  int64_t step_count() const { return t_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

  // Moment access for checkpoint round-trips.
  struct State {
    int64_t t = 0;
    std::vector<std::pair<std::string, std::vector<float>>> m, v;
  };
  State state() const {
    State s;
    s.t = t_;
    for (size_t i = 0; i < params_.size(); ++i) {
      s.m.emplace_back(params_[i].first, m_[i]);
      s.v.emplace_back(params_[i].first, v_[i]);
    }
    return s;
  }
  void restore(const State& s) {
    t_ = s.t;
    for (size_t i = 0; i < params_.size(); ++i) {
      for (const auto& [name, data] : s.m)
        if (name == params_[i].first && data.size() == m_[i].size()) m_[i] = data;
      for (const auto& [name, data] : s.v)
        if (name == params_[i].first && data.size() == v_[i].size()) v_[i] = data;
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<float>> m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 0.01;
  int64_t t_ = 0;
};

}  // namespace refseg
