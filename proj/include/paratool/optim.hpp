#pragma once

#include <vector>

#include "paratool/tensor.hpp"

namespace paratool {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with decoupled weight decay. Each parameter keeps its own step count,
// so parameters touched only on some steps stay correctly bias-corrected.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamWConfig config);

  void step_param(size_t index, const Tensor& grad);
  void step_all(const std::vector<const Tensor*>& grads);
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }

  size_t param_count() const { return params_.size(); }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  std::vector<long> t_;
  AdamWConfig config_;
};

}  // namespace paratool
