#include "fsban/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fsban {

void AdamState::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("AdamState::step: parameter/gradient count mismatch");
  }
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor* p : params) {
      m_.push_back(Tensor::zeros(p->shape()));
      v_.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("AdamState::step: parameter count changed");
  }

  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (p.shape() != g.shape() || p.shape() != m_[i].shape()) {
      throw std::invalid_argument("AdamState::step: shape mismatch");
    }
    double* pd = p.data().data();
    const double* gd = g.data().data();
    double* md = m_[i].data().data();
    double* vd = v_[i].data().data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      md[j] = b1 * md[j] + (1.0 - b1) * gd[j];
      vd[j] = b2 * vd[j] + (1.0 - b2) * gd[j] * gd[j];
      const double mhat = md[j] / corr1;
      const double vhat = vd[j] / corr2;
      pd[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace fsban
