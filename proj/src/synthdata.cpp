#include "divgce/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "divgce/checkpoint.hpp"
#include "divgce/rng.hpp"

namespace divgce::synth {

namespace {

constexpr std::uint32_t kGlyphStream = 0x474c5950;  // substream tag for glyph bits

double ring_radius(const SynthConfig& cfg) { return std::round(0.3 * static_cast<double>(cfg.image_size)); }

// Signed glyph origin; may be out of range for infeasible configs.
std::pair<long, long> raw_origin(const SynthConfig& cfg, std::size_t cls) {
  const std::size_t f = cls / cfg.classes_per_family, p = cls % cfg.classes_per_family;
  const double angle = 2.0 * std::numbers::pi *
                       (static_cast<double>(p) + 0.5 * static_cast<double>(f % 2)) /
                       static_cast<double>(cfg.classes_per_family);
  const double centre = 0.5 * static_cast<double>(cfg.image_size);
  const double r = ring_radius(cfg), half = 0.5 * static_cast<double>(cfg.cue_size);
  return {std::lround(centre + r * std::sin(angle) - half), std::lround(centre + r * std::cos(angle) - half)};
}

double family_background(const SynthConfig& cfg, std::size_t f, double y, double x) {
  const double theta = std::numbers::pi * static_cast<double>(f) / static_cast<double>(cfg.num_families);
  const double phase = 2.0 * std::numbers::pi * (x * std::cos(theta) + y * std::sin(theta)) / cfg.family_scale;
  const double centre = 0.5 * static_cast<double>(cfg.image_size);
  const double a = 2.0 * std::numbers::pi * static_cast<double>(f) / static_cast<double>(cfg.num_families);
  const double by = centre + 0.22 * cfg.image_size * std::sin(a);
  const double bx = centre + 0.22 * cfg.image_size * std::cos(a);
  const double sigma = 0.2 * cfg.image_size;
  const double blob = std::exp(-((y - by) * (y - by) + (x - bx) * (x - bx)) / (2.0 * sigma * sigma));
  return 0.3 + 0.15 * std::cos(phase) + 0.35 * blob;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_families < 1 || classes_per_family < 1 || num_classes() < 2)
    throw std::invalid_argument("synth: need at least 2 classes");
  if (train_per_class < 1 || test_per_class < 1)
    throw std::invalid_argument("synth: per-class sample counts must be positive");
  if (image_size < 4) throw std::invalid_argument("synth: image_size must be >= 4");
  if (cue_size < 1) throw std::invalid_argument("synth: cue_size must be >= 1");
  if (!(family_scale > 0.0)) throw std::invalid_argument("synth: family_scale must be > 0");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("synth: noise_std must be >= 0");
  if (!(cue_contrast >= 0.0 && cue_contrast <= 1.0))
    throw std::invalid_argument("synth: cue_contrast must lie in [0, 1]");
  const long s = static_cast<long>(image_size), j = static_cast<long>(jitter), g = static_cast<long>(cue_size);
  for (std::size_t c = 0; c < num_classes(); ++c) {
    const auto [y, x] = raw_origin(*this, c);
    if (y - j < 0 || x - j < 0 || y + g + j > s || x + g + j > s) {
      std::ostringstream os;
      os << "synth: cue of class " << c << " does not fit: origin (" << y << ", " << x << "), cue "
         << g << "x" << g << ", jitter +-" << j << ", image " << s << "x" << s
         << " (needs origin - jitter >= 0 and origin + cue + jitter <= image)";
      throw GeometryError(os.str());
    }
  }
}

std::pair<std::size_t, std::size_t> cue_origin(const SynthConfig& cfg, std::size_t cls) {
  const auto [y, x] = raw_origin(cfg, cls);
  return {static_cast<std::size_t>(y), static_cast<std::size_t>(x)};
}

Tensor cue_glyph(const SynthConfig& cfg, std::size_t cls) {
  const std::size_t g = cfg.cue_size, n = g * g;
  const std::size_t f = cls / cfg.classes_per_family;
  // Glyphs of one family are drawn in order and rejected on collision, so
  // every class in the family gets a distinct, non-constant pattern.
  RngStream rng = RngStream(cfg.seed, RngDomain::data).substream(kGlyphStream, static_cast<std::uint32_t>(f));
  std::vector<std::vector<double>> made;
  for (std::size_t p = 0; p <= cls % cfg.classes_per_family; ++p) {
    for (;;) {
      std::vector<double> bits(n);
      std::size_t ones = 0;
      for (auto& b : bits) ones += (b = rng.bernoulli(0.5) ? 1.0 : 0.0) == 1.0;
      if (n > 1 && (ones == 0 || ones == n)) continue;
      bool dup = false;
      for (const auto& m : made) dup = dup || m == bits;
      if (dup && made.size() < (std::size_t{1} << std::min<std::size_t>(n, 30)) - 2) continue;
      made.push_back(std::move(bits));
      break;
    }
  }
  return Tensor({g, g}, made.back());
}

Tensor render(const SynthConfig& cfg, std::size_t cls, int dx, int dy, RngStream* noise) {
  const std::size_t s = cfg.image_size, f = cls / cfg.classes_per_family;
  const Tensor glyph = cue_glyph(cfg, cls);
  const auto [oy, ox] = cue_origin(cfg, cls);
  Tensor img({1, 1, s, s});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      // Content is translated by (dx, dy): sample the unshifted scene at (i - dy, j - dx).
      const long y = static_cast<long>(i) - dy, x = static_cast<long>(j) - dx;
      double v = family_background(cfg, f, static_cast<double>(y), static_cast<double>(x));
      const long gy = y - static_cast<long>(oy), gx = x - static_cast<long>(ox);
      if (gy >= 0 && gx >= 0 && gy < static_cast<long>(cfg.cue_size) && gx < static_cast<long>(cfg.cue_size))
        v = (1.0 - cfg.cue_contrast) * v + cfg.cue_contrast * glyph[gy * cfg.cue_size + gx];
      if (noise) v += cfg.noise_std * noise->normal();
      v = std::clamp(v, 0.0, 1.0);
      img[i * s + j] = static_cast<double>(static_cast<float>(v));
    }
  return img;
}

Tensor class_prototype(const SynthConfig& cfg, std::size_t cls) { return render(cfg, cls, 0, 0, nullptr); }

namespace {

LabeledDataset make_split(const SynthConfig& cfg, std::uint32_t split, std::size_t per_class) {
  const std::size_t c = cfg.num_classes(), s = cfg.image_size, n = c * per_class;
  LabeledDataset ds;
  ds.num_classes = c;
  ds.images = Tensor({n, 1, s, s});
  ds.labels.resize(n);
  for (std::size_t k = 0; k < c; ++k) ds.family.push_back(k / cfg.classes_per_family);
  const RngStream base(cfg.seed, RngDomain::data);
  const auto span = static_cast<std::uint32_t>(2 * cfg.jitter + 1);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      RngStream r = base.substream(split, static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(i));
      const int dx = static_cast<int>(r.below(span)) - static_cast<int>(cfg.jitter);
      const int dy = static_cast<int>(r.below(span)) - static_cast<int>(cfg.jitter);
      const Tensor img = render(cfg, k, dx, dy, cfg.noise_std > 0.0 ? &r : nullptr);
      const std::size_t row = k * per_class + i;
      std::copy(img.data().begin(), img.data().end(), ds.images.data().begin() + row * s * s);
      ds.labels[row] = k;
    }
  return ds;
}

}  // namespace

SplitDatasets generate(const SynthConfig& cfg) {
  cfg.validate();
  return {make_split(cfg, 0, cfg.train_per_class), make_split(cfg, 1, cfg.test_per_class)};
}

Tensor LabeledDataset::batch(std::span<const std::size_t> rows) const {
  const std::size_t s = image_size(), px = s * s;
  Tensor out({rows.size(), 1, s, s});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(images.data().begin() + rows[i] * px, px, out.data().begin() + i * px);
  return out;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("DBDS", 4);
  le::put_u32(os, kDatasetVersion);
  le::put_u32(os, static_cast<std::uint32_t>(ds.size()));
  le::put_u32(os, static_cast<std::uint32_t>(ds.num_classes));
  le::put_u32(os, static_cast<std::uint32_t>(ds.image_size()));
  for (auto l : ds.labels) le::put_u32(os, static_cast<std::uint32_t>(l));
  for (double v : ds.images.data()) le::put_f32(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "DBDS", 4) != 0)
    throw std::runtime_error(path.string() + ": not a DBDS dataset");
  if (const auto v = le::get_u32(is); v != kDatasetVersion)
    throw std::runtime_error(path.string() + ": unsupported dataset version " + std::to_string(v));
  const std::size_t n = le::get_u32(is), c = le::get_u32(is), s = le::get_u32(is);
  LabeledDataset ds;
  ds.num_classes = c;
  ds.labels.resize(n);
  for (auto& l : ds.labels) {
    l = le::get_u32(is);
    if (l >= c) throw std::runtime_error(path.string() + ": label out of range");
  }
  std::vector<double> px(n * s * s);
  for (auto& v : px) v = le::get_f32(is);
  ds.images = Tensor({n, 1, s, s}, std::move(px));
  return ds;
}

void save_family_index(const std::filesystem::path& path, const std::vector<std::size_t>& family) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "# class family\n";
  for (std::size_t c = 0; c < family.size(); ++c) os << c << ' ' << family[c] << '\n';
}

std::vector<std::size_t> load_family_index(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open family index " + path.string());
  std::vector<std::size_t> family;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t c, f;
    if (!(ls >> c >> f) || c != family.size()) throw std::runtime_error("malformed family index " + path.string());
    family.push_back(f);
  }
  return family;
}

std::vector<std::vector<std::size_t>> confusion_counts(std::span<const std::size_t> truth,
                                                       std::span<const std::size_t> predicted,
                                                       std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("confusion: length mismatch");
  std::vector<std::vector<std::size_t>> m(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes)
      throw std::invalid_argument("confusion: class index out of range at row " + std::to_string(i));
    ++m[truth[i]][predicted[i]];
  }
  return m;
}

std::vector<std::vector<double>> normalize_rows(const std::vector<std::vector<std::size_t>>& counts) {
  std::vector<std::vector<double>> out;
  for (const auto& row : counts) {
    std::size_t total = 0;
    for (auto v : row) total += v;
    std::vector<double> r(row.size(), 0.0);
    if (total)
      for (std::size_t j = 0; j < row.size(); ++j) r[j] = static_cast<double>(row[j]) / static_cast<double>(total);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::vector<double>> confusability_report(const LabeledDataset& ds,
                                                      const model::ModelConfig& cfg,
                                                      const model::ModelParams& params) {
  if (cfg.num_classes != ds.num_classes)
    throw std::invalid_argument("confusability_report: model has " + std::to_string(cfg.num_classes) +
                                " classes, dataset " + std::to_string(ds.num_classes));
  std::vector<std::size_t> predicted;
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < ds.size(); b += kChunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = b; i < std::min(ds.size(), b + kChunk); ++i) rows.push_back(i);
    const auto p = model::predict(cfg, params, ds.batch(rows));
    predicted.insert(predicted.end(), p.labels.begin(), p.labels.end());
  }
  return normalize_rows(confusion_counts(ds.labels, predicted, ds.num_classes));
}

double intra_family_error_share(const std::vector<std::vector<std::size_t>>& counts,
                                const std::vector<std::size_t>& family) {
  std::size_t errors = 0, intra = 0;
  for (std::size_t t = 0; t < counts.size(); ++t)
    for (std::size_t p = 0; p < counts[t].size(); ++p) {
      if (t == p) continue;
      errors += counts[t][p];
      if (family.at(t) == family.at(p)) intra += counts[t][p];
    }
  return errors ? static_cast<double>(intra) / static_cast<double>(errors) : 0.0;
}

}  // namespace divgce::synth
