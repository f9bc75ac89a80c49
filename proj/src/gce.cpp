#include "divgce/gce.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace divgce::loss {

LossKind parse_loss_kind(const std::string& s) {
  if (s == "ce") return LossKind::ce;
  if (s == "gce") return LossKind::gce;
  throw std::invalid_argument("unknown loss kind '" + s + "' (expected ce or gce)");
}

std::string to_string(LossKind kind) { return kind == LossKind::ce ? "ce" : "gce"; }

namespace {

void check_label(std::size_t label, std::size_t classes) {
  if (label >= classes)
    throw std::invalid_argument("label " + std::to_string(label) + " out of range for " +
                                std::to_string(classes) + " classes");
}

std::vector<std::size_t> participants_of(const NegativeSplit& split) {
  std::vector<std::size_t> p = split.hard;
  p.insert(std::upper_bound(p.begin(), p.end(), split.label), split.label);
  return p;
}

}  // namespace

NegativeSplit top_k_negatives(std::span<const double> scores, std::size_t label, std::size_t k) {
  const std::size_t c = scores.size();
  check_label(label, c);
  if (c < 2 || k < 1 || k > c - 1)
    throw std::invalid_argument("top_k_negatives: k = " + std::to_string(k) + " outside [1, " +
                                std::to_string(c == 0 ? 0 : c - 1) + "]");
  // Min-heap holding the k largest negative scores seen so far; its top is t_k.
  std::priority_queue<double, std::vector<double>, std::greater<>> heap;
  for (std::size_t i = 0; i < c; ++i) {
    if (i == label) continue;
    if (heap.size() < k) {
      heap.push(scores[i]);
    } else if (scores[i] > heap.top()) {
      heap.pop();
      heap.push(scores[i]);
    }
  }
  NegativeSplit split;
  split.label = label;
  split.threshold = heap.top();
  for (std::size_t i = 0; i < c; ++i) {
    if (i == label) continue;
    (scores[i] >= split.threshold ? split.hard : split.easy).push_back(i);
  }
  return split;
}

double restricted_ce(std::span<const double> scores, std::size_t label,
                     std::span<const std::size_t> participants, std::span<double> grad_out) {
  double m = -std::numeric_limits<double>::infinity();
  for (auto i : participants) m = std::max(m, scores[i]);
  double z = 0.0;
  for (auto i : participants) z += std::exp(scores[i] - m);
  const double loss = std::log(z) + m - scores[label];
  if (!grad_out.empty()) {
    std::fill(grad_out.begin(), grad_out.end(), 0.0);
    for (auto i : participants) grad_out[i] = std::exp(scores[i] - m) / z;
    grad_out[label] -= 1.0;
  }
  return loss;
}

double ce_loss(std::span<const double> scores, std::size_t label) {
  check_label(label, scores.size());
  std::vector<std::size_t> all(scores.size());
  std::iota(all.begin(), all.end(), 0);
  return restricted_ce(scores, label, all);
}

std::vector<double> ce_gradient(std::span<const double> scores, std::size_t label) {
  check_label(label, scores.size());
  std::vector<std::size_t> all(scores.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> g(scores.size());
  restricted_ce(scores, label, all, g);
  return g;
}

double gce_loss(std::span<const double> scores, std::size_t label, std::size_t k) {
  const auto p = participants_of(top_k_negatives(scores, label, k));
  return restricted_ce(scores, label, p);
}

std::vector<double> gce_gradient(std::span<const double> scores, std::size_t label, std::size_t k) {
  const auto p = participants_of(top_k_negatives(scores, label, k));
  std::vector<double> g(scores.size());
  restricted_ce(scores, label, p, g);
  return g;
}

std::string BoostReport::describe() const {
  std::ostringstream os;
  os << "label " << split.label << ", |hard| " << split.hard.size() << ", |easy| "
     << split.easy.size() << (degenerate ? " (degenerate)" : "") << ": ";
  for (std::size_t i = 0; i < classes.size(); ++i)
    os << (i ? ", " : "") << classes[i] << ":" << margins[i];
  if (!violations.empty()) {
    os << "; violations at";
    for (auto v : violations) os << ' ' << v;
  }
  return os.str();
}

BoostReport verify_boost(std::span<const double> scores, std::size_t label, std::size_t k) {
  BoostReport r;
  r.split = top_k_negatives(scores, label, k);
  r.degenerate = r.split.easy.empty();
  r.classes.push_back(label);
  r.classes.insert(r.classes.end(), r.split.hard.begin(), r.split.hard.end());
  if (r.degenerate) {
    // Same participants, so the two gradients must agree bit for bit.
    const auto ce = ce_gradient(scores, label);
    const auto gce = gce_gradient(scores, label, k);
    for (auto c : r.classes) {
      r.margins.push_back(gce[c] - ce[c]);
      if (r.margins.back() != 0.0) r.violations.push_back(c);
    }
    return r;
  }
  // dGCE/ds_c - dCE/ds_c = exp(s_c) (1/Z' - 1/Z) = p'_c * E / Z, with E the
  // easy-set mass. Subtracting the two gradients directly cancels to 0 once
  // p_l rounds to 1, so the margin is evaluated in this product form.
  double m = -std::numeric_limits<double>::infinity();
  for (double v : scores) m = std::max(m, v);
  double z_hard = 0.0, z_easy = 0.0;
  for (auto c : r.classes) z_hard += std::exp(scores[c] - m);
  for (auto c : r.split.easy) z_easy += std::exp(scores[c] - m);
  const double easy_share = z_easy / (z_hard + z_easy);
  for (auto c : r.classes) {
    r.margins.push_back(std::exp(scores[c] - m) / z_hard * easy_share);
    if (!(r.margins.back() > 0.0)) r.violations.push_back(c);
  }
  return r;
}

std::size_t effective_k(std::size_t k, std::size_t num_classes) {
  if (num_classes < 2) throw std::invalid_argument("loss needs at least 2 classes");
  return std::clamp<std::size_t>(k, 1, num_classes - 1);
}

BatchLoss batched_loss(const Tensor& scores, std::span<const std::size_t> labels, std::size_t k,
                       LossKind kind) {
  if (scores.rank() != 2) throw ShapeError("batched_loss: expected N x C scores, got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  if (labels.size() != n)
    throw ShapeError("batched_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] >= c)
      throw std::invalid_argument("batched_loss: row " + std::to_string(i) + " has label " +
                                  std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
  const std::size_t kk = effective_k(k, c);

  BatchLoss out;
  out.grad = Tensor({n, c}, 0.0);
  out.per_sample.resize(n);
  std::vector<std::size_t> all(c);
  std::iota(all.begin(), all.end(), 0);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> row(scores.data().data() + i * c, c);
    std::span<double> grow(out.grad.data().data() + i * c, c);
    if (kind == LossKind::ce) {
      out.per_sample[i] = restricted_ce(row, labels[i], all, grow);
    } else {
      const auto p = participants_of(top_k_negatives(row, labels[i], kk));
      out.per_sample[i] = restricted_ce(row, labels[i], p, grow);
    }
    for (auto& g : grow) g *= inv_n;
    total += out.per_sample[i];
  }
  out.mean = total * inv_n;
  return out;
}

ad::Var loss_node(const ad::Var& scores, std::span<const std::size_t> labels, std::size_t k,
                  LossKind kind) {
  BatchLoss bl = batched_loss(scores.value(), labels, k, kind);
  auto grad = std::make_shared<Tensor>(std::move(bl.grad));
  return ad::make_result(
      Tensor::scalar(bl.mean), {scores},
      [grad](ad::Node& self) {
        Tensor& g = ad::grad_of(*self.parents[0]);
        const double up = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * (*grad)[i];
      },
      "loss");
}

}  // namespace divgce::loss
