#pragma once

#include <span>
#include <vector>

#include "divgce/tensor.hpp"

namespace divgce {

struct SgdConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  void validate() const;
};

/// In-place momentum SGD update:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// `velocity` must be shaped like `params` (zero-filled on the first step).
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads,
              std::span<Tensor> velocity, const SgdConfig& cfg);

/// Holds the velocity buffers between steps.
class MomentumSgd {
 public:
  explicit MomentumSgd(SgdConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  void step(std::span<Tensor> params, std::span<const Tensor> grads);
  void set_lr(double lr);
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::vector<Tensor> velocity_;
};

}  // namespace divgce
