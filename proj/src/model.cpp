#include "divgce/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "divgce/divblock.hpp"

namespace divgce::model {

std::size_t ModelConfig::map_size() const { return input_size >> channels.size(); }

void ModelConfig::validate() const {
  if (channels.empty()) throw std::invalid_argument("model: channel plan is empty");
  for (auto c : channels)
    if (c == 0) throw std::invalid_argument("model: zero-width conv block");
  if (num_classes < 2) throw std::invalid_argument("model: need at least 2 classes");
  if (input_size == 0 || input_size % (std::size_t{1} << channels.size()) != 0)
    throw std::invalid_argument("model: input size " + std::to_string(input_size) +
                                " not divisible by 2^" + std::to_string(channels.size()));
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "input_size = " << input_size << "\nchannels = ";
  for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
  os << "\nnum_classes = " << num_classes << "\nseed = " << seed << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key == "input_size") cfg.input_size = std::stoul(val);
    else if (key == "num_classes") cfg.num_classes = std::stoul(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "channels") {
      cfg.channels.clear();
      std::istringstream cs(val);
      std::string tok;
      while (std::getline(cs, tok, ',')) cfg.channels.push_back(std::stoul(trim(tok)));
    } else {
      throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

const Tensor& ModelParams::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw std::out_of_range("model: no parameter named " + name);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.tensor.size();
  return n;
}

namespace {

std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const auto c = cfg.channels[i];
    out.push_back({"conv" + std::to_string(i) + ".weight", {c, cin, 3, 3}});
    out.push_back({"conv" + std::to_string(i) + ".bias", {c}});
    cin = c;
  }
  out.push_back({"head.weight", {cfg.num_classes, cin, 1, 1}});
  return out;
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, const RngStream& rng) {
  cfg.validate();
  ModelParams params;
  std::uint32_t index = 0;
  for (auto& [name, shape] : layout(cfg)) {
    Tensor t(shape, 0.0);
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double std = std::sqrt(2.0 / fan_in);
      RngStream r = rng.substream(index);
      for (auto& v : t.data()) v = std * r.normal();
    }
    params.tensors.push_back({name, std::move(t)});
    ++index;
  }
  return params;
}

void check_params(const ModelConfig& cfg, const ModelParams& params) {
  const auto expect = layout(cfg);
  if (expect.size() != params.tensors.size())
    throw std::invalid_argument("model: expected " + std::to_string(expect.size()) +
                                " parameter tensors, got " + std::to_string(params.tensors.size()));
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& got = params.tensors[i];
    if (got.name != expect[i].first || got.tensor.shape() != expect[i].second)
      throw std::invalid_argument("model: parameter " + std::to_string(i) + " is " + got.name + " " +
                                  shape_str(got.tensor.shape()) + ", expected " + expect[i].first +
                                  " " + shape_str(expect[i].second));
  }
}

std::vector<ad::Var> as_vars(const ModelParams& params, bool tracked) {
  std::vector<ad::Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors)
    vars.push_back(tracked ? ad::parameter(t.tensor) : ad::constant(t.tensor));
  return vars;
}

ad::Var forward_maps(const ModelConfig& cfg, const std::vector<ad::Var>& params,
                     const ad::Var& images) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != cfg.input_size || s[3] != cfg.input_size)
    throw ShapeError("forward_maps: expected N x 1 x " + std::to_string(cfg.input_size) + " x " +
                     std::to_string(cfg.input_size) + " images, got " + shape_str(s));
  if (params.size() != 2 * cfg.channels.size() + 1)
    throw std::invalid_argument("forward_maps: wrong parameter count");
  ad::Var x = images;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    x = ad::conv2d(x, params[2 * i], 1, 1);
    x = ad::add_channel_bias(x, params[2 * i + 1]);
    x = ad::max_pool2d(ad::relu(x), 2);
  }
  return ad::conv2d(x, params.back(), 1, 0);
}

Tensor forward_maps(const ModelConfig& cfg, const ModelParams& params, const Tensor& images) {
  return forward_maps(cfg, as_vars(params, false), ad::constant(images)).value();
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

Prediction predict(const ModelConfig& cfg, const ModelParams& params, const Tensor& images) {
  Prediction p;
  p.scores = db::global_avg_pool(forward_maps(cfg, params, images));
  const std::size_t n = p.scores.dim(0), c = p.scores.dim(1);
  p.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    p.labels[i] = argmax(std::span<const double>(p.scores.data().data() + i * c, c));
  return p;
}

}  // namespace divgce::model
