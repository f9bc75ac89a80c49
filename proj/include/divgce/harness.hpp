#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "divgce/config.hpp"
#include "divgce/model.hpp"
#include "divgce/synthdata.hpp"

namespace divgce::harness {

/// Keeps large training buffers on the heap instead of fresh mmaps per step.
void tune_allocator();

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,loss,accuracy,seconds";
std::string format_row(const MetricsRow& row);

struct DatasetBundle {
  synth::LabeledDataset train;
  synth::LabeledDataset test;
  std::vector<std::size_t> family;
};

/// Reads train.dbds, test.dbds and families.txt from a directory.
DatasetBundle load_dataset_dir(const std::filesystem::path& dir);
/// Writes the files read by load_dataset_dir plus the generator config.
void save_dataset_dir(const std::filesystem::path& dir, const synth::SplitDatasets& data,
                      const synth::SynthConfig& cfg);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> predicted;
  std::vector<std::vector<std::size_t>> confusion;
};

/// Eval-mode pass (no suppression, no random draws).
EvalResult evaluate(const model::ModelConfig& cfg, const model::ModelParams& params,
                    const synth::LabeledDataset& ds, loss::LossKind kind, std::size_t k);

struct TrainResult {
  std::vector<MetricsRow> rows;
  model::ModelConfig model;
  model::ModelParams final_params;
  Tensor first_batch_maps;  // class maps of the very first training batch
  std::optional<std::size_t> matched_epoch;

  double final_test_accuracy() const;
  /// First epoch whose test accuracy reaches `target`.
  std::optional<std::size_t> epochs_to(double target) const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains and writes into cfg.out: run.cfg, model.cfg, metrics.csv,
/// timing.csv, final.dbkt, best.dbkt and (once reached) matched.dbkt.
TrainResult train(const RunConfig& cfg, const DatasetBundle& data);
TrainResult train(const RunConfig& cfg);

struct LoadedModel {
  model::ModelConfig config;
  model::ModelParams params;
  std::optional<RunConfig> run;  // run.cfg next to the checkpoint, when present
};

/// Checkpoint plus the model.cfg (required) and run.cfg (optional) beside it.
LoadedModel load_model(const std::filesystem::path& checkpoint);

/// Accuracy and confusion of a checkpoint on a dataset file (or the test split
/// of a dataset directory). Writes the confusion counts as CSV.
EvalResult eval_checkpoint(const std::filesystem::path& checkpoint,
                           const std::filesystem::path& dataset,
                           const std::filesystem::path& confusion_csv);

// ---------------------------------------------------------------------------
// class activation maps

/// Min-max scaled to integers in [0, 255]; a constant map becomes all zeros.
Tensor normalize_heatmap(const Tensor& map);
/// Entropy (nats) of the map's min-shifted values read as a distribution over
/// cells; a constant map counts as uniform.
double spatial_entropy(const Tensor& map);
void write_heatmap_pgm(const std::filesystem::path& path, const Tensor& map);

struct CamRecord {
  std::size_t index = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  double score = 0.0;
  Tensor map;  // H x W map of the ground-truth class
};

std::vector<CamRecord> class_activation_maps(const model::ModelConfig& cfg,
                                             const model::ModelParams& params,
                                             const synth::LabeledDataset& ds,
                                             std::span<const std::size_t> indices);
/// Mean ground-truth CAM entropy over the whole dataset.
double mean_cam_entropy(const model::ModelConfig& cfg, const model::ModelParams& params,
                        const synth::LabeledDataset& ds);

/// PGM + metadata for each requested image. Returns the records written.
std::vector<CamRecord> export_cams(const std::filesystem::path& checkpoint,
                                   const std::filesystem::path& dataset,
                                   std::span<const std::size_t> indices,
                                   const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------

struct SweepRow {
  std::string value;
  double final_accuracy = 0.0;
  std::optional<std::size_t> epochs_to_90;
  std::string status = "ok";
};

/// One run per value of `axis` (alpha, k, p_peak or p_patch) under
/// <base.out>/<axis>_<value>; failures are recorded and the sweep goes on.
/// Writes <base.out>/sweep_<axis>.csv.
std::vector<SweepRow> sweep(const std::string& axis, const std::vector<std::string>& values,
                            const RunConfig& base);

}  // namespace divgce::harness
