#pragma once

#include <cmath>
#include <stdexcept>

namespace refseg {

// Linear warmup from 0 to base_lr over warmup_steps, then cosine decay to
// 0 at total_steps. Continuous at the warmup boundary.
inline double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
  if (total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw std::invalid_argument("lr_at: warmup_steps must be in [0, total_steps)");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("lr_at: step outside [0, total_steps]");
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace refseg
