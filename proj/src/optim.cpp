#include "craftlora/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "craftlora/error.hpp"

namespace craftlora {

double WarmupCosine::at(std::size_t step) const noexcept {
  if (warmup > 0 && step < warmup) {
    return start + (peak - start) * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total <= warmup) return peak;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

void Adam::step(std::vector<Matrix*> params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "adam: param/grad count");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->values();
    auto g = grads[k].values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

}  // namespace craftlora
