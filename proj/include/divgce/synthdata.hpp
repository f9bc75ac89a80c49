#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "divgce/model.hpp"
#include "divgce/tensor.hpp"

namespace divgce::synth {

/// Families of look-alike classes. Every class in a family shares the family
/// background (a low-frequency grating plus a large blob); classes differ only
/// by a small binary glyph stamped at a class-specific spot.
struct SynthConfig {
  std::size_t num_families = 4;
  std::size_t classes_per_family = 5;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t image_size = 32;
  double family_scale = 48.0;   // grating period in pixels
  std::size_t cue_size = 4;
  double cue_contrast = 0.5;    // blend weight of the glyph over the background
  double noise_std = 0.1;
  std::size_t jitter = 2;       // max translation per axis, pixels
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return num_families * classes_per_family; }
  /// Throws GeometryError when a cue cannot stay inside the image.
  void validate() const;
};

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LabeledDataset {
  Tensor images;                     // N x 1 x S x S, values in [0, 1], float-representable
  std::vector<std::size_t> labels;
  std::vector<std::size_t> family;   // family of each class
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return images.dim(2); }
  /// Rows [begin, begin + count) as a new N x 1 x S x S tensor.
  Tensor batch(std::span<const std::size_t> rows) const;
};

struct SplitDatasets {
  LabeledDataset train;
  LabeledDataset test;
};

/// Top-left corner of the class glyph before jitter.
std::pair<std::size_t, std::size_t> cue_origin(const SynthConfig& cfg, std::size_t cls);
/// Binary glyph (cue_size x cue_size) of a class. Distinct within a family.
Tensor cue_glyph(const SynthConfig& cfg, std::size_t cls);
/// Noise-free, unshifted image of a class (1 x 1 x S x S).
Tensor class_prototype(const SynthConfig& cfg, std::size_t cls);
/// One image with an explicit shift and noise toggle (1 x 1 x S x S).
Tensor render(const SynthConfig& cfg, std::size_t cls, int dx, int dy, RngStream* noise);

SplitDatasets generate(const SynthConfig& cfg);

/// Binary layout (little-endian): "DBDS" | version u32 | N u32 | C u32 |
/// S u32 | labels u32[N] | images f32[N*S*S].
inline constexpr std::uint32_t kDatasetVersion = 1;
void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);
/// "class family" per line.
void save_family_index(const std::filesystem::path& path, const std::vector<std::size_t>& family);
std::vector<std::size_t> load_family_index(const std::filesystem::path& path);

/// Raw counts, rows are true classes.
std::vector<std::vector<std::size_t>> confusion_counts(std::span<const std::size_t> truth,
                                                       std::span<const std::size_t> predicted,
                                                       std::size_t num_classes);
/// Row-normalised confusion matrix (rows without samples stay zero).
std::vector<std::vector<double>> normalize_rows(const std::vector<std::vector<std::size_t>>& counts);
/// Row-normalised confusion of an eval-mode model on the dataset.
std::vector<std::vector<double>> confusability_report(const LabeledDataset& ds,
                                                      const model::ModelConfig& cfg,
                                                      const model::ModelParams& params);
/// Share of off-diagonal mass whose true and predicted class share a family.
/// Returns 0 when there are no errors.
double intra_family_error_share(const std::vector<std::vector<std::size_t>>& counts,
                                const std::vector<std::size_t>& family);

}  // namespace divgce::synth
