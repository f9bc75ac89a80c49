#pragma once

#include <filesystem>

#include "divgce/autodiff.hpp"
#include "divgce/rng.hpp"
#include "divgce/tensor.hpp"

namespace divgce::db {

enum class Mode { train, eval };

struct DiversificationConfig {
  double p_peak = 0.5;
  double p_patch = 0.5;
  std::size_t patch_size = 2;
  double alpha = 0.1;
  Mode mode = Mode::train;

  void validate() const;
};

// Maps are C x H x W or N x C x H x W; every H x W slice is one class map and
// is addressed by its flat slice index (n * C + c for batched input). Random
// draws for slice i come from `rng.item(2 * i)` (peak) and
// `rng.item(2 * i + 1)` (patches), so each slice's mask is independent of
// every other slice and of iteration order.

/// 1 where the grid attains its maximum (all ties), 0 elsewhere. Rank 2.
Tensor peak_map(const Tensor& grid);
/// peak_map applied to every H x W slice.
Tensor peak_maps(const Tensor& maps);

/// Each slice is kept (r = 1) with probability p_peak, else zeroed.
Tensor peak_suppression_mask(const Tensor& peaks, double p_peak, const RngStream& rng);

/// G x G tiling (ragged last row/column) with each tile hidden with
/// probability p_patch; afterwards every peak position is cleared.
Tensor patch_suppression_mask(const Tensor& maps, std::size_t patch_size, double p_patch,
                              const RngStream& rng);

/// Elementwise sum of disjoint masks. Throws std::logic_error if any element
/// is not 0 or 1.
Tensor combine_masks(const Tensor& peak_mask, const Tensor& patch_mask);

/// maps where mask == 0, alpha * maps where mask == 1.
Tensor apply_suppression(const Tensor& maps, const Tensor& mask, double alpha);
/// Tracked variant; the mask and alpha are constants of the pass, so the
/// upstream gradient is scaled by alpha exactly at suppressed positions.
ad::Var apply_suppression(const ad::Var& maps, const Tensor& mask, double alpha);

/// Spatial mean per slice: C x H x W -> C, N x C x H x W -> N x C.
Tensor global_avg_pool(const Tensor& maps);
ad::Var global_avg_pool(const ad::Var& maps);

/// Full suppression mask for maps under cfg (ignores cfg.mode).
Tensor suppression_mask(const Tensor& maps, const DiversificationConfig& cfg, const RngStream& rng);

struct MaskTrace {
  Tensor peak;
  Tensor patch;
  Tensor combined;
};

/// Train mode: peak -> peak mask -> patch mask -> combine -> suppress -> pool.
/// Eval mode: pool only, no draws. `trace` (optional) receives the masks used.
ad::Var db_forward(const ad::Var& maps, const DiversificationConfig& cfg, const RngStream& rng,
                   MaskTrace* trace = nullptr);
Tensor db_forward(const Tensor& maps, const DiversificationConfig& cfg, const RngStream& rng,
                  MaskTrace* trace = nullptr);

/// ASCII P2 image of a binary H x W mask, 0 -> 0 and 1 -> 255.
void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask_grid);
/// One P2 file per slice of a rank-3 mask: <stem>_c<index>.pgm.
void write_mask_trace(const std::filesystem::path& dir, const std::string& stem, const Tensor& mask);

}  // namespace divgce::db
