#pragma once

#include <cstddef>
#include <vector>

#include "craftlora/tensorcore.hpp"

namespace craftlora {

/// Linear warm-up from `start` to `peak` over `warmup` steps, then cosine decay
/// to `floor` at `total` steps.
struct WarmupCosine {
  double start = 1e-6;
  double peak = 1e-5;
  double floor = 1e-7;
  std::size_t warmup = 500;
  std::size_t total = 5000;

  double at(std::size_t step) const noexcept;
};

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update of `params` in place. The first call fixes the parameter shapes.
  void step(std::vector<Matrix*> params, const std::vector<Matrix>& grads);

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace craftlora
