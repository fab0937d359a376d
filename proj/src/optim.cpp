#include "paratool/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace paratool {

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* p : params_) {
    m_.push_back(Tensor::zeros(p->shape()));
    v_.push_back(Tensor::zeros(p->shape()));
  }
  t_.assign(params_.size(), 0);
}

void AdamW::step_param(size_t index, const Tensor& grad) {
  Tensor& p = *params_[index];
  if (!grad.same_shape(p)) throw std::invalid_argument("adamw: gradient shape mismatch");
  Tensor& m = m_[index];
  Tensor& v = v_[index];
  const long t = ++t_[index];
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t));
  for (size_t i = 0; i < p.size(); ++i) {
    const double g = grad[i];
    m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
    v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * p[i]);
  }
}

void AdamW::step_all(const std::vector<const Tensor*>& grads) {
  if (grads.size() != params_.size()) throw std::invalid_argument("adamw: gradient list mismatch");
  for (size_t i = 0; i < grads.size(); ++i) step_param(i, *grads[i]);
}

}  // namespace paratool
