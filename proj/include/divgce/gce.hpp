#pragma once

#include <span>
#include <string>
#include <vector>

#include "divgce/autodiff.hpp"
#include "divgce/tensor.hpp"

namespace divgce::loss {

/// Split of the negative classes at the k-th largest negative score.
struct NegativeSplit {
  std::size_t label = 0;
  std::vector<std::size_t> hard;  // negatives with score >= threshold, ascending index
  std::vector<std::size_t> easy;  // remaining negatives, ascending index
  double threshold = 0.0;

  friend bool operator==(const NegativeSplit&, const NegativeSplit&) = default;
};

enum class LossKind { ce, gce };

LossKind parse_loss_kind(const std::string& s);
std::string to_string(LossKind kind);

/// t_k is the k-th largest negative score (bounded min-heap selection).
/// Every negative tied with t_k joins the hard set, so |hard| >= k.
/// Throws std::invalid_argument unless 1 <= k <= C - 1 and label < C.
NegativeSplit top_k_negatives(std::span<const double> scores, std::size_t label, std::size_t k);

double ce_loss(std::span<const double> scores, std::size_t label);
std::vector<double> ce_gradient(std::span<const double> scores, std::size_t label);

double gce_loss(std::span<const double> scores, std::size_t label, std::size_t k);
std::vector<double> gce_gradient(std::span<const double> scores, std::size_t label, std::size_t k);

/// Loss and gradient of -log softmax restricted to `participants` (which must
/// contain the label). Both losses are this function over different index
/// sets: all classes for CE, {label} + hard for GCE.
double restricted_ce(std::span<const double> scores, std::size_t label,
                     std::span<const std::size_t> participants, std::span<double> grad_out = {});

struct BoostReport {
  NegativeSplit split;
  std::vector<std::size_t> classes;   // label followed by hard negatives
  std::vector<double> margins;        // dGCE/ds_c - dCE/ds_c for each entry of `classes`
  std::vector<std::size_t> violations;
  bool degenerate = false;            // easy set empty: margins expected to be exactly 0

  bool ok() const { return violations.empty(); }
  std::string describe() const;
};

/// Checks that GCE gradients strictly exceed CE gradients on the label and the
/// hard negatives whenever the easy set is non-empty, and that they coincide
/// exactly when it is empty.
BoostReport verify_boost(std::span<const double> scores, std::size_t label, std::size_t k);

/// k clamped into [1, C - 1].
std::size_t effective_k(std::size_t k, std::size_t num_classes);

struct BatchLoss {
  double mean = 0.0;
  std::vector<double> per_sample;
  Tensor grad;  // N x C, rows already divided by N
};

/// Mean loss over rows of an N x C score matrix. For gce, k is clamped to
/// C - 1. Throws std::invalid_argument naming the first row with a bad label.
BatchLoss batched_loss(const Tensor& scores, std::span<const std::size_t> labels, std::size_t k,
                       LossKind kind);

/// Tape node for batched_loss: single-value output, backward uses the
/// analytic per-row gradient.
ad::Var loss_node(const ad::Var& scores, std::span<const std::size_t> labels, std::size_t k,
                  LossKind kind);

}  // namespace divgce::loss
