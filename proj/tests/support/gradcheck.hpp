#pragma once

// Finite-difference gradient checking against the autodiff backward pass.
// Runs in double so central differences stay well above roundoff.

#include "refseg/tensor.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace testutil {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string where;
  bool ok(double tol) const { return max_rel_err <= tol; }
};

// make_loss must rebuild the graph from the current values of `inputs`
// and return a scalar. Every input must have requires_grad set.
inline GradCheckResult grad_check(std::vector<refseg::TensorT<double>> inputs,
                                  const std::function<refseg::TensorT<double>()>& make_loss,
                                  double eps = 1e-5) {
  using refseg::TensorT;
  auto loss = make_loss();
  refseg::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) analytic.push_back(in.grad());

  GradCheckResult res;
  for (size_t t = 0; t < inputs.size(); ++t) {
    auto& in = inputs[t];
    for (int64_t i = 0; i < in.numel(); ++i) {
      const double orig = in.value()[static_cast<size_t>(i)];
      double fp, fm;
      {
        refseg::NoGradGuard ng;
        in.value()[static_cast<size_t>(i)] = orig + eps;
        fp = make_loss().item();
        in.value()[static_cast<size_t>(i)] = orig - eps;
        fm = make_loss().item();
        in.value()[static_cast<size_t>(i)] = orig;
      }
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = analytic[t][static_cast<size_t>(i)];
      const double denom = std::max(std::abs(fd), std::abs(an));
      if (denom < 1e-6) continue;  // structurally zero gradient vs FD roundoff
      const double rel = std::abs(fd - an) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.where = "input " + std::to_string(t) + " elem " + std::to_string(i) +
                    " fd=" + std::to_string(fd) + " an=" + std::to_string(an);
      }
    }
  }
  return res;
}

}  // namespace testutil
