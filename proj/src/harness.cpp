#include "divgce/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#if __has_include(<malloc.h>)
#include <malloc.h>
#endif

#include "divgce/divblock.hpp"
#include "divgce/optim.hpp"

namespace divgce::harness {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kEvalChunk = 50;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::size_t> shuffled(std::size_t n, RngStream rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(static_cast<std::uint32_t>(i))]);
  return idx;
}

std::size_t count_correct(const Tensor& scores, std::span<const std::size_t> labels) {
  const std::size_t c = scores.dim(1);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    ok += model::argmax(std::span<const double>(scores.data().data() + i * c, c)) == labels[i];
  return ok;
}

}  // namespace

std::string format_row(const MetricsRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.10f,%.6f,%.3f", r.epoch, r.split.c_str(), r.loss, r.accuracy,
                r.seconds);
  return buf;
}

DatasetBundle load_dataset_dir(const fs::path& dir) {
  DatasetBundle b;
  b.train = synth::load_dataset(dir / "train.dbds");
  b.test = synth::load_dataset(dir / "test.dbds");
  b.family = synth::load_family_index(dir / "families.txt");
  b.train.family = b.test.family = b.family;
  if (b.train.num_classes != b.test.num_classes || b.family.size() != b.train.num_classes)
    throw ConfigError("dataset " + dir.string() + ": inconsistent class counts");
  return b;
}

void save_dataset_dir(const fs::path& dir, const synth::SplitDatasets& data, const synth::SynthConfig& cfg) {
  fs::create_directories(dir);
  synth::save_dataset(dir / "train.dbds", data.train);
  synth::save_dataset(dir / "test.dbds", data.test);
  synth::save_family_index(dir / "families.txt", data.train.family);
  write_text(dir / "synth.cfg", synth_to_text(cfg));
}

EvalResult evaluate(const model::ModelConfig& cfg, const model::ModelParams& params,
                    const synth::LabeledDataset& ds, loss::LossKind kind, std::size_t k) {
  EvalResult r;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < ds.size(); b += kEvalChunk) {
    std::vector<std::size_t> rows(std::min(kEvalChunk, ds.size() - b));
    std::iota(rows.begin(), rows.end(), b);
    const Tensor scores = db::global_avg_pool(model::forward_maps(cfg, params, ds.batch(rows)));
    const std::span<const std::size_t> labels(ds.labels.data() + b, rows.size());
    const auto bl = loss::batched_loss(scores, labels, k, kind);
    for (double v : bl.per_sample) loss_sum += v;
    const std::size_t c = scores.dim(1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto p = model::argmax(std::span<const double>(scores.data().data() + i * c, c));
      r.predicted.push_back(p);
      correct += p == labels[i];
    }
  }
  r.loss = loss_sum / static_cast<double>(ds.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  r.confusion = synth::confusion_counts(ds.labels, r.predicted, ds.num_classes);
  return r;
}

double TrainResult::final_test_accuracy() const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it)
    if (it->split == "test") return it->accuracy;
  return 0.0;
}

std::optional<std::size_t> TrainResult::epochs_to(double target) const {
  for (const auto& r : rows)
    if (r.split == "test" && r.accuracy >= target) return r.epoch;
  return std::nullopt;
}

TrainResult train(const RunConfig& cfg, const DatasetBundle& data) {
  cfg.validate();
  const std::size_t classes = data.train.num_classes;
  TrainResult result;
  result.model = {data.train.image_size(), cfg.channels, classes, cfg.seed};
  try {
    result.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (result.model.map_size() < cfg.patch_size && cfg.use_db)
    throw ConfigError("config: class maps are " + std::to_string(result.model.map_size()) +
                      " wide, smaller than patch_size " + std::to_string(cfg.patch_size));
  const std::size_t k = loss::effective_k(cfg.k, classes);

  fs::create_directories(cfg.out);
  write_text(cfg.out / "run.cfg", cfg.to_text());
  write_text(cfg.out / "model.cfg", result.model.to_text());

  model::ModelParams params = model::init_model(result.model, RngStream(cfg.seed, RngDomain::init));
  MomentumSgd opt(cfg.sgd_config());
  const RngStream shuffle_rng(cfg.seed, RngDomain::shuffle);
  const RngStream mask_rng(cfg.seed, RngDomain::mask);
  const db::DiversificationConfig dbc = cfg.db_config();

  std::ofstream metrics(cfg.out / "metrics.csv", std::ios::binary);
  std::ofstream timing(cfg.out / "timing.csv", std::ios::binary);
  metrics << kMetricsHeader << '\n';
  timing << "epoch,seconds\n";
  const auto start = std::chrono::steady_clock::now();
  double best_acc = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.set_lr(cfg.lr_at(epoch));
    const loss::LossKind kind = cfg.loss_at(epoch);
    const auto order = shuffled(data.train.size(), shuffle_rng.substream(static_cast<std::uint32_t>(epoch)));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++batch_index) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(cfg.batch_size, order.size() - b));
      std::vector<std::size_t> labels;
      for (auto r : rows) labels.push_back(data.train.labels[r]);
      try {
        const auto vars = model::as_vars(params, true);
        const ad::Var maps = model::forward_maps(result.model, vars, ad::constant(data.train.batch(rows)));
        if (epoch == 1 && batch_index == 0) result.first_batch_maps = maps.value();
        const ad::Var scores =
            cfg.use_db ? db::db_forward(maps, dbc,
                                        mask_rng.substream(static_cast<std::uint32_t>(epoch),
                                                           static_cast<std::uint32_t>(batch_index)))
                       : db::global_avg_pool(maps);
        const ad::Var loss = loss::loss_node(scores, labels, k, kind);
        ad::backward(loss);
        std::vector<Tensor> grads;
        for (const auto& v : vars) grads.push_back(v.grad());
        std::vector<Tensor> values;
        for (auto& t : params.tensors) values.push_back(std::move(t.tensor));
        opt.step(values, grads);
        for (std::size_t i = 0; i < values.size(); ++i) params.tensors[i].tensor = std::move(values[i]);
        loss_sum += loss.value().item() * static_cast<double>(rows.size());
        correct += count_correct(scores.value(), labels);
      } catch (const NumericError& e) {
        throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + ": " + e.what());
      }
    }
    EvalResult test;
    try {
      test = evaluate(result.model, params, data.test, kind, k);
    } catch (const NumericError& e) {
      throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch_index) + " (test pass): " + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double shown = cfg.record_wallclock ? secs : 0.0;
    const double n = static_cast<double>(data.train.size());
    result.rows.push_back({epoch, "train", loss_sum / n, static_cast<double>(correct) / n, shown});
    result.rows.push_back({epoch, "test", test.loss, test.accuracy, shown});
    metrics << format_row(result.rows[result.rows.size() - 2]) << '\n'
            << format_row(result.rows.back()) << '\n';
    metrics.flush();
    timing << epoch << ',' << secs << '\n';
    if (test.accuracy > best_acc) {
      best_acc = test.accuracy;
      save_checkpoint(cfg.out / "best.dbkt", params.tensors);
    }
    if (!result.matched_epoch && test.accuracy >= cfg.match_accuracy) {
      result.matched_epoch = epoch;
      save_checkpoint(cfg.out / "matched.dbkt", params.tensors);
    }
  }
  save_checkpoint(cfg.out / "final.dbkt", params.tensors);
  result.final_params = std::move(params);
  return result;
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  if (!fs::is_directory(cfg.dataset)) throw ConfigError("dataset directory does not exist: " + cfg.dataset.string());
  return train(cfg, load_dataset_dir(cfg.dataset));
}

LoadedModel load_model(const fs::path& checkpoint) {
  LoadedModel m;
  const fs::path dir = checkpoint.parent_path();
  m.config = model::ModelConfig::from_text(read_text(dir / "model.cfg"));
  m.params.tensors = load_checkpoint(checkpoint);
  model::check_params(m.config, m.params);
  if (fs::exists(dir / "run.cfg")) m.run = RunConfig::from_file(dir / "run.cfg");
  return m;
}

namespace {

synth::LabeledDataset dataset_arg(const fs::path& p) {
  return fs::is_directory(p) ? synth::load_dataset(p / "test.dbds") : synth::load_dataset(p);
}

}  // namespace

EvalResult eval_checkpoint(const fs::path& checkpoint, const fs::path& dataset, const fs::path& confusion_csv) {
  const LoadedModel m = load_model(checkpoint);
  const auto ds = dataset_arg(dataset);
  if (ds.num_classes != m.config.num_classes)
    throw ConfigError("eval: checkpoint has " + std::to_string(m.config.num_classes) + " classes, dataset " +
                      std::to_string(ds.num_classes));
  if (ds.image_size() != m.config.input_size)
    throw ConfigError("eval: checkpoint expects " + std::to_string(m.config.input_size) + "px images, dataset has " +
                      std::to_string(ds.image_size()));
  const auto kind = m.run ? m.run->loss : loss::LossKind::ce;
  const auto k = loss::effective_k(m.run ? m.run->k : ds.num_classes - 1, ds.num_classes);
  EvalResult r = evaluate(m.config, m.params, ds, kind, k);
  if (!confusion_csv.empty()) {
    if (confusion_csv.has_parent_path()) fs::create_directories(confusion_csv.parent_path());
    std::ofstream os(confusion_csv, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + confusion_csv.string());
    os << "true\\pred";
    for (std::size_t c = 0; c < ds.num_classes; ++c) os << ',' << c;
    os << '\n';
    for (std::size_t t = 0; t < ds.num_classes; ++t) {
      os << t;
      for (auto v : r.confusion[t]) os << ',' << v;
      os << '\n';
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

Tensor normalize_heatmap(const Tensor& map) {
  Tensor out(map.shape(), 0.0);
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  if (*hi == *lo) return out;
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = std::round(255.0 * (map[i] - *lo) / span);
  return out;
}

double spatial_entropy(const Tensor& map) {
  const double lo = *std::min_element(map.data().begin(), map.data().end());
  double total = 0.0;
  for (double v : map.data()) total += v - lo;
  if (total <= 0.0) return std::log(static_cast<double>(map.size()));
  double h = 0.0;
  for (double v : map.data()) {
    const double p = (v - lo) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

void write_heatmap_pgm(const fs::path& path, const Tensor& map) {
  const Tensor img = normalize_heatmap(map);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::size_t h = map.dim(0), w = map.dim(1);
  os << "P2\n" << w << ' ' << h << "\n255\n";
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) os << (j ? " " : "") << static_cast<int>(img[i * w + j]);
    os << '\n';
  }
}

std::vector<CamRecord> class_activation_maps(const model::ModelConfig& cfg, const model::ModelParams& params,
                                             const synth::LabeledDataset& ds,
                                             std::span<const std::size_t> indices) {
  std::vector<CamRecord> out;
  for (std::size_t b = 0; b < indices.size(); b += kEvalChunk) {
    const std::span<const std::size_t> rows = indices.subspan(b, std::min(kEvalChunk, indices.size() - b));
    for (auto r : rows)
      if (r >= ds.size()) throw std::out_of_range("cam: image index " + std::to_string(r) + " out of range");
    const Tensor maps = model::forward_maps(cfg, params, ds.batch(rows));
    const Tensor scores = db::global_avg_pool(maps);
    const std::size_t c = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CamRecord rec;
      rec.index = rows[i];
      rec.label = ds.labels[rows[i]];
      rec.predicted = model::argmax(std::span<const double>(scores.data().data() + i * c, c));
      rec.score = scores[i * c + rec.label];
      const double* src = maps.data().data() + (i * c + rec.label) * h * w;
      rec.map = Tensor({h, w}, std::vector<double>(src, src + h * w));
      out.push_back(std::move(rec));
    }
  }
  return out;
}

double mean_cam_entropy(const model::ModelConfig& cfg, const model::ModelParams& params,
                        const synth::LabeledDataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  double acc = 0.0;
  for (const auto& rec : class_activation_maps(cfg, params, ds, all)) acc += spatial_entropy(rec.map);
  return acc / static_cast<double>(ds.size());
}

std::vector<CamRecord> export_cams(const fs::path& checkpoint, const fs::path& dataset,
                                   std::span<const std::size_t> indices, const fs::path& out_dir) {
  const LoadedModel m = load_model(checkpoint);
  const auto ds = dataset_arg(dataset);
  if (ds.num_classes != m.config.num_classes) throw ConfigError("cam: class-count mismatch");
  fs::create_directories(out_dir);
  auto records = class_activation_maps(m.config, m.params, ds, indices);
  for (const auto& rec : records) {
    const std::string stem = "img" + std::to_string(rec.index) + "_class" + std::to_string(rec.label);
    write_heatmap_pgm(out_dir / (stem + ".pgm"), rec.map);
    std::ostringstream meta;
    meta << "image = " << rec.index << "\nclass = " << rec.label << "\npredicted = " << rec.predicted
         << "\nscore = " << rec.score << "\nentropy = " << spatial_entropy(rec.map) << "\n";
    write_text(out_dir / (stem + ".txt"), meta.str());
  }
  return records;
}

// ---------------------------------------------------------------------------

std::vector<SweepRow> sweep(const std::string& axis, const std::vector<std::string>& values,
                            const RunConfig& base) {
  static const std::vector<std::string> axes{"alpha", "k", "p_peak", "p_patch"};
  if (std::find(axes.begin(), axes.end(), axis) == axes.end())
    throw ConfigError("sweep: unknown axis '" + axis + "' (expected alpha, k, p_peak or p_patch)");
  if (values.empty()) throw ConfigError("sweep: no values given");
  base.validate();
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    SweepRow row;
    row.value = v;
    try {
      RunConfig cfg = base;
      cfg.set(axis, v);
      cfg.out = base.out / (axis + "_" + v);
      const TrainResult r = train(cfg);
      row.final_accuracy = r.final_test_accuracy();
      row.epochs_to_90 = r.epochs_to(0.9);
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
      std::replace(row.status.begin(), row.status.end(), ',', ';');
      std::replace(row.status.begin(), row.status.end(), '\n', ' ');
    }
    rows.push_back(std::move(row));
  }
  fs::create_directories(base.out);
  std::ofstream os(base.out / ("sweep_" + axis + ".csv"), std::ios::binary);
  os << "value,final_test_accuracy,epochs_to_90,status\n";
  for (const auto& r : rows) {
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.6f", r.final_accuracy);
    os << r.value << ',' << acc << ',' << (r.epochs_to_90 ? std::to_string(*r.epochs_to_90) : "") << ','
       << r.status << '\n';
  }
  return rows;
}

}  // namespace divgce::harness
