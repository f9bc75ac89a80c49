#include "divgce/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace divgce {

void SgdConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("sgd: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw std::invalid_argument("sgd: weight_decay must be >= 0");
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads,
              std::span<Tensor> velocity, const SgdConfig& cfg) {
  cfg.validate();
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(velocity.size()) +
                     " velocity buffers");
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    const Tensor& g = grads[t];
    Tensor& v = velocity[t];
    if (p.shape() != g.shape() || p.shape() != v.shape())
      throw ShapeError("sgd_step: tensor " + std::to_string(t) + " param " + shape_str(p.shape()) +
                       " grad " + shape_str(g.shape()) + " velocity " + shape_str(v.shape()));
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * p[i];
      p[i] -= cfg.lr * v[i];
    }
    require_finite(p, "sgd_step");
  }
}

void MomentumSgd::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  if (velocity_.empty())
    for (const auto& p : params) velocity_.emplace_back(p.shape(), 0.0);
  sgd_step(params, grads, velocity_, cfg_);
}

void MomentumSgd::set_lr(double lr) {
  cfg_.lr = lr;
  cfg_.validate();
}

}  // namespace divgce
