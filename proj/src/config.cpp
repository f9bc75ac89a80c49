#include "divgce/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace divgce {

namespace {

std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  return s;
}

ConfigError bad(const std::string& key, const std::string& value, const std::string& why) {
  return ConfigError("config: " + key + " = '" + value + "': " + why);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw bad(key, v, "expected a non-negative integer");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw bad(key, v, "expected a finite number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw bad(key, v, "expected true or false");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(to_size(key, trim(tok)));
  if (out.empty()) throw bad(key, v, "expected a comma-separated list");
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double d) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, p);
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{
      "dataset", "channels", "loss", "k", "use_db", "p_peak", "p_patch", "patch_size", "alpha",
      "lr", "momentum", "weight_decay", "lr_decay", "lr_decay_every", "epochs", "batch_size",
      "seed", "out", "gce_warmup_epochs", "match_accuracy", "record_wallclock"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& v) {
  if (key == "dataset") dataset = v;
  else if (key == "channels") channels = to_list(key, v);
  else if (key == "loss") {
    try {
      loss = loss::parse_loss_kind(v);
    } catch (const std::invalid_argument& e) {
      throw bad(key, v, e.what());
    }
  }
  else if (key == "k") k = to_size(key, v);
  else if (key == "use_db") use_db = to_bool(key, v);
  else if (key == "p_peak") p_peak = to_double(key, v);
  else if (key == "p_patch") p_patch = to_double(key, v);
  else if (key == "patch_size") patch_size = to_size(key, v);
  else if (key == "alpha") alpha = to_double(key, v);
  else if (key == "lr") lr = to_double(key, v);
  else if (key == "momentum") momentum = to_double(key, v);
  else if (key == "weight_decay") weight_decay = to_double(key, v);
  else if (key == "lr_decay") lr_decay = to_double(key, v);
  else if (key == "lr_decay_every") lr_decay_every = to_size(key, v);
  else if (key == "epochs") epochs = to_size(key, v);
  else if (key == "batch_size") batch_size = to_size(key, v);
  else if (key == "seed") seed = to_u64(key, v);
  else if (key == "out") out = v;
  else if (key == "gce_warmup_epochs") gce_warmup_epochs = to_size(key, v);
  else if (key == "match_accuracy") match_accuracy = to_double(key, v);
  else if (key == "record_wallclock") record_wallclock = to_bool(key, v);
  else throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::apply(const KeyValues& kv) {
  for (const auto& [key, v] : kv) set(key, v);
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  check(!channels.empty(), "channels must be non-empty");
  for (auto c : channels) check(c > 0, "channel widths must be positive");
  check(k >= 1, "k must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(lr_decay_every >= 1, "lr_decay_every must be >= 1");
  check(lr_decay > 0.0, "lr_decay must be > 0");
  check(match_accuracy >= 0.0 && match_accuracy <= 1.0, "match_accuracy must lie in [0, 1]");
  try {
    db_config().validate();
    sgd_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "dataset = " << dataset.string() << "\nchannels = ";
  for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
  os << "\nloss = " << loss::to_string(loss) << "\nk = " << k << "\nuse_db = " << (use_db ? "true" : "false")
     << "\np_peak = " << fmt(p_peak) << "\np_patch = " << fmt(p_patch) << "\npatch_size = " << patch_size
     << "\nalpha = " << fmt(alpha) << "\nlr = " << fmt(lr) << "\nmomentum = " << fmt(momentum)
     << "\nweight_decay = " << fmt(weight_decay) << "\nlr_decay = " << fmt(lr_decay)
     << "\nlr_decay_every = " << lr_decay_every << "\nepochs = " << epochs << "\nbatch_size = " << batch_size
     << "\nseed = " << seed << "\nout = " << out.string() << "\ngce_warmup_epochs = " << gce_warmup_epochs
     << "\nmatch_accuracy = " << fmt(match_accuracy)
     << "\nrecord_wallclock = " << (record_wallclock ? "true" : "false") << "\n";
  return os.str();
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig cfg;
  cfg.apply(read_key_values(path));
  return cfg;
}

db::DiversificationConfig RunConfig::db_config() const {
  return {p_peak, p_patch, patch_size, alpha, db::Mode::train};
}

SgdConfig RunConfig::sgd_config() const { return {lr, momentum, weight_decay}; }

double RunConfig::lr_at(std::size_t epoch) const {
  const auto decays = (epoch - 1) / lr_decay_every;
  return lr * std::pow(lr_decay, static_cast<double>(decays));
}

loss::LossKind RunConfig::loss_at(std::size_t epoch) const {
  if (loss == loss::LossKind::gce && epoch <= gce_warmup_epochs) return loss::LossKind::ce;
  return loss;
}

const std::vector<std::string>& synth_keys() {
  static const std::vector<std::string> k{"num_families", "classes_per_family", "train_per_class",
                                          "test_per_class", "image_size", "family_scale", "cue_size",
                                          "cue_contrast", "noise_std", "jitter", "seed"};
  return k;
}

void apply_synth(synth::SynthConfig& cfg, const KeyValues& kv) {
  for (const auto& [key, v] : kv) {
    if (key == "num_families") cfg.num_families = to_size(key, v);
    else if (key == "classes_per_family") cfg.classes_per_family = to_size(key, v);
    else if (key == "train_per_class") cfg.train_per_class = to_size(key, v);
    else if (key == "test_per_class") cfg.test_per_class = to_size(key, v);
    else if (key == "image_size") cfg.image_size = to_size(key, v);
    else if (key == "family_scale") cfg.family_scale = to_double(key, v);
    else if (key == "cue_size") cfg.cue_size = to_size(key, v);
    else if (key == "cue_contrast") cfg.cue_contrast = to_double(key, v);
    else if (key == "noise_std") cfg.noise_std = to_double(key, v);
    else if (key == "jitter") cfg.jitter = to_size(key, v);
    else if (key == "seed") cfg.seed = to_u64(key, v);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
}

std::string synth_to_text(const synth::SynthConfig& c) {
  std::ostringstream os;
  os << "num_families = " << c.num_families << "\nclasses_per_family = " << c.classes_per_family
     << "\ntrain_per_class = " << c.train_per_class << "\ntest_per_class = " << c.test_per_class
     << "\nimage_size = " << c.image_size << "\nfamily_scale = " << fmt(c.family_scale)
     << "\ncue_size = " << c.cue_size << "\ncue_contrast = " << fmt(c.cue_contrast)
     << "\nnoise_std = " << fmt(c.noise_std) << "\njitter = " << c.jitter << "\nseed = " << c.seed << "\n";
  return os.str();
}

}  // namespace divgce
