#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divgce/gce.hpp"
#include "divgce/tensor.hpp"

// Definitional reference implementations. Nothing here calls into the
// modules it checks; only the plain Tensor container and the NegativeSplit
// record are shared.
namespace divgce::oracle {

struct OracleReport {
  std::string operation;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::string worst_input;  // digest that regenerates the worst case, e.g. "seed=7/trial=12"
  double tolerance = 0.0;
  bool relative = false;    // tolerance applies to max_rel_err instead of max_abs_err
  bool pass = true;
};

/// Accumulates errors of one operation and produces its report.
class ErrorTracker {
 public:
  ErrorTracker(std::string operation, double tolerance, bool relative = false);

  void add(double got, double want, const std::string& digest);
  /// Counts a discrete mismatch (error 1) or match (error 0).
  void add_exact(bool equal, const std::string& digest);
  OracleReport report() const;

 private:
  OracleReport r_;
  double worst_ = -1.0;
};

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
/// Throws NumericError naming the coordinate if f is non-finite there.
Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

/// Top-k split by sorting every negative in descending order and applying
/// the ">= t_k" rule literally.
loss::NegativeSplit naive_select(std::span<const double> scores, std::size_t label, std::size_t k);

class OverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unstabilised -log(exp(s_l) / sum exp(s_i)) over all classes (no k) or over
/// the label plus the naive top-k negatives. Throws OverflowError if any
/// |s_i| > 50 or the sum is not finite.
double direct_loss(std::span<const double> scores, std::size_t label, std::optional<std::size_t> k);

/// Six nested loops over (n, co, oi, oj, ci, ki, kj) with explicit padding checks.
Tensor naive_conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
/// Mean of each trailing H x W slice, summed in flat order.
Tensor naive_avg_pool(const Tensor& maps);
/// out = mask ? alpha * maps : maps, written independently of the library.
Tensor replay_suppression(const Tensor& maps, const Tensor& mask, double alpha);
/// Scans every cell against the slice maximum.
Tensor naive_peak_map(const Tensor& grid);

void write_reports_csv(std::ostream& os, const std::vector<OracleReport>& reports);
void write_reports_text(std::ostream& os, const std::vector<OracleReport>& reports);

}  // namespace divgce::oracle
