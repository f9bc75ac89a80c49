#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "divgce/divblock.hpp"
#include "divgce/gce.hpp"
#include "divgce/optim.hpp"
#include "divgce/synthdata.hpp"

namespace divgce {

/// Invalid configuration; the CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ordered `key = value` pairs. `#` starts a comment; blank lines are skipped.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues parse_key_values(const std::string& text, const std::string& origin = "config");
KeyValues read_key_values(const std::filesystem::path& path);

struct RunConfig {
  std::filesystem::path dataset;  // directory with train.dbds, test.dbds, families.txt
  std::vector<std::size_t> channels{16, 32, 64};
  loss::LossKind loss = loss::LossKind::gce;
  std::size_t k = 15;
  bool use_db = true;
  double p_peak = 0.5;
  double p_patch = 0.5;
  std::size_t patch_size = 2;
  double alpha = 0.1;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_decay = 0.1;
  std::size_t lr_decay_every = 20;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";
  std::size_t gce_warmup_epochs = 0;  // plain CE for the first N epochs when loss = gce
  double match_accuracy = 0.9;        // test accuracy that triggers matched.dbkt
  bool record_wallclock = false;      // seconds column of metrics.csv

  /// Applies one key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& kv);
  void validate() const;
  std::string to_text() const;

  static const std::vector<std::string>& keys();
  static RunConfig from_file(const std::filesystem::path& path);

  db::DiversificationConfig db_config() const;
  SgdConfig sgd_config() const;
  /// Learning rate in effect during a 1-based epoch.
  double lr_at(std::size_t epoch) const;
  loss::LossKind loss_at(std::size_t epoch) const;
};

void apply_synth(synth::SynthConfig& cfg, const KeyValues& kv);
std::string synth_to_text(const synth::SynthConfig& cfg);
const std::vector<std::string>& synth_keys();

}  // namespace divgce
