#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divgce/autodiff.hpp"
#include "divgce/checkpoint.hpp"
#include "divgce/rng.hpp"

namespace divgce::model {

/// Plain CNN: per block conv3x3(pad 1) -> bias -> ReLU -> maxpool 2x2, then a
/// bias-free 1x1 convolution emitting one activation map per class.
struct ModelConfig {
  std::size_t input_size = 32;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t num_classes = 20;
  std::uint64_t seed = 0;

  /// Spatial side of the class maps.
  std::size_t map_size() const;
  void validate() const;

  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

/// Parameters in forward order: conv<i>.weight, conv<i>.bias, ..., head.weight.
struct ModelParams {
  std::vector<NamedTensor> tensors;

  const Tensor& get(const std::string& name) const;
  std::size_t parameter_count() const;
};

/// Fan-in scaled normal weights (std sqrt(2 / fan_in)), zero biases.
ModelParams init_model(const ModelConfig& cfg, const RngStream& rng);

/// Checks names and shapes against cfg.
void check_params(const ModelConfig& cfg, const ModelParams& params);

/// Leaves for a forward pass, in the order of params.tensors.
std::vector<ad::Var> as_vars(const ModelParams& params, bool tracked);

/// images: N x 1 x S x S -> class maps N x C x H x W with H = W = S / 2^depth.
ad::Var forward_maps(const ModelConfig& cfg, const std::vector<ad::Var>& params,
                     const ad::Var& images);
Tensor forward_maps(const ModelConfig& cfg, const ModelParams& params, const Tensor& images);

struct Prediction {
  std::vector<std::size_t> labels;
  Tensor scores;  // N x C, eval-mode pooled maps
};

/// Eval-mode argmax of pooled maps; ties go to the lowest class index.
Prediction predict(const ModelConfig& cfg, const ModelParams& params, const Tensor& images);

/// Index of the largest entry, first one on ties.
std::size_t argmax(std::span<const double> row);

}  // namespace divgce::model
