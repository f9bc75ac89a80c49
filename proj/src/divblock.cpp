#include "divgce/divblock.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace divgce::db {

namespace {

struct Slices {
  std::size_t count, h, w;
  std::size_t hw() const { return h * w; }
};

Slices slices_of(const Shape& s, const char* op) {
  if (s.size() != 3 && s.size() != 4)
    throw ShapeError(std::string(op) + ": expected C x H x W or N x C x H x W maps, got " +
                     shape_str(s));
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  return {shape_numel(s) / (h * w), h, w};
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

double slice_max(const double* p, std::size_t n) { return *std::max_element(p, p + n); }

Shape pooled_shape(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

}  // namespace

void DiversificationConfig::validate() const {
  if (!(p_peak >= 0.0 && p_peak <= 1.0)) throw std::invalid_argument("p_peak must lie in [0, 1]");
  if (!(p_patch >= 0.0 && p_patch <= 1.0)) throw std::invalid_argument("p_patch must lie in [0, 1]");
  if (patch_size < 1) throw std::invalid_argument("patch_size must be >= 1");
  if (!std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite");
}

Tensor peak_map(const Tensor& grid) {
  if (grid.rank() != 2) throw ShapeError("peak_map: expected H x W grid, got " + shape_str(grid.shape()));
  require_finite(grid, "peak_map");
  Tensor out(grid.shape(), 0.0);
  const double m = slice_max(grid.data().data(), grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid[i] == m) out[i] = 1.0;
  return out;
}

Tensor peak_maps(const Tensor& maps) {
  const Slices sl = slices_of(maps.shape(), "peak_maps");
  Tensor out(maps.shape(), 0.0);
  for (std::size_t s = 0; s < sl.count; ++s) {
    const double* p = maps.data().data() + s * sl.hw();
    const double m = slice_max(p, sl.hw());
    for (std::size_t i = 0; i < sl.hw(); ++i)
      if (p[i] == m) out[s * sl.hw() + i] = 1.0;
  }
  return out;
}

Tensor peak_suppression_mask(const Tensor& peaks, double p_peak, const RngStream& rng) {
  const Slices sl = slices_of(peaks.shape(), "peak_suppression_mask");
  Tensor out(peaks.shape(), 0.0);
  for (std::size_t s = 0; s < sl.count; ++s) {
    RngStream r = rng.item(static_cast<std::uint32_t>(2 * s));
    if (!r.bernoulli(p_peak)) continue;
    std::copy_n(peaks.data().data() + s * sl.hw(), sl.hw(), out.data().data() + s * sl.hw());
  }
  return out;
}

Tensor patch_suppression_mask(const Tensor& maps, std::size_t patch_size, double p_patch,
                              const RngStream& rng) {
  const Slices sl = slices_of(maps.shape(), "patch_suppression_mask");
  if (patch_size < 1 || patch_size > std::min(sl.h, sl.w))
    throw std::invalid_argument("patch_suppression_mask: patch size " + std::to_string(patch_size) +
                                " exceeds map size " + std::to_string(sl.h) + "x" +
                                std::to_string(sl.w));
  const std::size_t g = patch_size;
  Tensor out(maps.shape(), 0.0);
  for (std::size_t s = 0; s < sl.count; ++s) {
    RngStream r = rng.item(static_cast<std::uint32_t>(2 * s + 1));
    double* dst = out.data().data() + s * sl.hw();
    for (std::size_t pi = 0; pi < sl.h; pi += g)
      for (std::size_t pj = 0; pj < sl.w; pj += g) {
        if (!r.bernoulli(p_patch)) continue;
        for (std::size_t i = pi; i < std::min(pi + g, sl.h); ++i)
          for (std::size_t j = pj; j < std::min(pj + g, sl.w); ++j) dst[i * sl.w + j] = 1.0;
      }
    const double* src = maps.data().data() + s * sl.hw();
    const double m = slice_max(src, sl.hw());
    for (std::size_t i = 0; i < sl.hw(); ++i)
      if (src[i] == m) dst[i] = 0.0;
  }
  return out;
}

Tensor combine_masks(const Tensor& peak_mask, const Tensor& patch_mask) {
  require_same(peak_mask, patch_mask, "combine_masks");
  Tensor out(peak_mask.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = peak_mask[i] + patch_mask[i];
    if (out[i] != 0.0 && out[i] != 1.0)
      throw std::logic_error("combine_masks: non-binary mask value " + std::to_string(out[i]) +
                             " at flat index " + std::to_string(i));
  }
  return out;
}

Tensor apply_suppression(const Tensor& maps, const Tensor& mask, double alpha) {
  require_same(maps, mask, "apply_suppression");
  Tensor out = maps;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] == 1.0) out[i] = alpha * maps[i];
  return out;
}

ad::Var apply_suppression(const ad::Var& maps, const Tensor& mask, double alpha) {
  Tensor out = apply_suppression(maps.value(), mask, alpha);
  return ad::make_result(
      std::move(out), {maps},
      [mask, alpha](ad::Node& self) {
        Tensor& g = ad::grad_of(*self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += mask[i] == 1.0 ? alpha * self.grad[i] : self.grad[i];
      },
      "apply_suppression");
}

Tensor global_avg_pool(const Tensor& maps) {
  const Slices sl = slices_of(maps.shape(), "global_avg_pool");
  Tensor out(pooled_shape(maps.shape()));
  const double inv = 1.0 / static_cast<double>(sl.hw());
  for (std::size_t s = 0; s < sl.count; ++s) {
    const double* p = maps.data().data() + s * sl.hw();
    double acc = 0.0;
    for (std::size_t i = 0; i < sl.hw(); ++i) acc += p[i];
    out[s] = acc * inv;
  }
  return out;
}

ad::Var global_avg_pool(const ad::Var& maps) {
  const Slices sl = slices_of(maps.shape(), "global_avg_pool");
  return ad::make_result(
      global_avg_pool(maps.value()), {maps},
      [sl](ad::Node& self) {
        Tensor& g = ad::grad_of(*self.parents[0]);
        const double inv = 1.0 / static_cast<double>(sl.hw());
        for (std::size_t s = 0; s < sl.count; ++s) {
          const double d = self.grad[s] * inv;
          double* dst = g.data().data() + s * sl.hw();
          for (std::size_t i = 0; i < sl.hw(); ++i) dst[i] += d;
        }
      },
      "global_avg_pool");
}

Tensor suppression_mask(const Tensor& maps, const DiversificationConfig& cfg, const RngStream& rng) {
  cfg.validate();
  return combine_masks(peak_suppression_mask(peak_maps(maps), cfg.p_peak, rng),
                       patch_suppression_mask(maps, cfg.patch_size, cfg.p_patch, rng));
}

ad::Var db_forward(const ad::Var& maps, const DiversificationConfig& cfg, const RngStream& rng,
                   MaskTrace* trace) {
  cfg.validate();
  slices_of(maps.shape(), "db_forward");
  if (cfg.mode == Mode::eval) return global_avg_pool(maps);
  Tensor peak = peak_suppression_mask(peak_maps(maps.value()), cfg.p_peak, rng);
  Tensor patch = patch_suppression_mask(maps.value(), cfg.patch_size, cfg.p_patch, rng);
  Tensor mask = combine_masks(peak, patch);
  ad::Var out = global_avg_pool(apply_suppression(maps, mask, cfg.alpha));
  if (trace) *trace = {std::move(peak), std::move(patch), std::move(mask)};
  return out;
}

Tensor db_forward(const Tensor& maps, const DiversificationConfig& cfg, const RngStream& rng,
                  MaskTrace* trace) {
  return db_forward(ad::constant(maps), cfg, rng, trace).value();
}

void write_mask_pgm(const std::filesystem::path& path, const Tensor& grid) {
  if (grid.rank() != 2) throw ShapeError("write_mask_pgm: expected H x W mask, got " + shape_str(grid.shape()));
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "P2\n" << grid.dim(1) << ' ' << grid.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < grid.dim(0); ++i) {
    for (std::size_t j = 0; j < grid.dim(1); ++j)
      os << (j ? " " : "") << (grid[i * grid.dim(1) + j] == 1.0 ? 255 : 0);
    os << '\n';
  }
}

void write_mask_trace(const std::filesystem::path& dir, const std::string& stem, const Tensor& mask) {
  const Slices sl = slices_of(mask.shape(), "write_mask_trace");
  std::filesystem::create_directories(dir);
  for (std::size_t s = 0; s < sl.count; ++s) {
    std::vector<double> v(mask.data().begin() + s * sl.hw(), mask.data().begin() + (s + 1) * sl.hw());
    write_mask_pgm(dir / (stem + "_c" + std::to_string(s) + ".pgm"), Tensor({sl.h, sl.w}, std::move(v)));
  }
}

}  // namespace divgce::db
