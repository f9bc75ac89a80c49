#include "divgce/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace divgce::oracle {

ErrorTracker::ErrorTracker(std::string operation, double tolerance, bool relative) {
  r_.operation = std::move(operation);
  r_.tolerance = tolerance;
  r_.relative = relative;
}

void ErrorTracker::add(double got, double want, const std::string& digest) {
  double abs = std::abs(got - want);
  const double scale = std::max({std::abs(got), std::abs(want), 1e-7});
  double rel = abs / scale;
  if (!std::isfinite(got) || !std::isfinite(want)) abs = rel = INFINITY;
  r_.max_abs_err = std::max(r_.max_abs_err, abs);
  r_.max_rel_err = std::max(r_.max_rel_err, rel);
  const double key = r_.relative ? rel : abs;
  if (key > worst_) {
    worst_ = key;
    r_.worst_input = digest;
  }
}

void ErrorTracker::add_exact(bool equal, const std::string& digest) { add(equal ? 0.0 : 1.0, 0.0, digest); }

OracleReport ErrorTracker::report() const {
  OracleReport out = r_;
  out.pass = (out.relative ? out.max_rel_err : out.max_abs_err) <= out.tolerance;
  return out;
}

Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor grad(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("fd_gradient: non-finite evaluation at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

loss::NegativeSplit naive_select(std::span<const double> scores, std::size_t label, std::size_t k) {
  const std::size_t c = scores.size();
  if (label >= c || k < 1 || k + 1 > c) throw std::invalid_argument("naive_select: bad label or k");
  std::vector<double> neg;
  for (std::size_t i = 0; i < c; ++i)
    if (i != label) neg.push_back(scores[i]);
  std::sort(neg.begin(), neg.end(), std::greater<>());
  loss::NegativeSplit s;
  s.label = label;
  s.threshold = neg[k - 1];
  for (std::size_t i = 0; i < c; ++i) {
    if (i == label) continue;
    if (scores[i] >= s.threshold) s.hard.push_back(i);
    else s.easy.push_back(i);
  }
  return s;
}

double direct_loss(std::span<const double> scores, std::size_t label, std::optional<std::size_t> k) {
  for (double v : scores)
    if (std::abs(v) > 50.0) throw OverflowError("direct_loss: |score| > 50 would overflow the naive form");
  double denom = std::exp(scores[label]);
  if (k) {
    for (auto i : naive_select(scores, label, *k).hard) denom += std::exp(scores[i]);
  } else {
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (i != label) denom += std::exp(scores[i]);
  }
  const double out = -std::log(std::exp(scores[label]) / denom);
  if (!std::isfinite(out)) throw OverflowError("direct_loss: non-finite result");
  return out;
}

Tensor naive_conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1, wo = (w + 2 * padding - kw) / stride + 1;
  Tensor out({n, cout, ho, wo}, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oi = 0; oi < ho; ++oi)
        for (std::size_t oj = 0; oj < wo; ++oj) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ki = 0; ki < kh; ++ki)
              for (std::size_t kj = 0; kj < kw; ++kj) {
                const long ii = static_cast<long>(oi * stride + ki) - static_cast<long>(padding);
                const long jj = static_cast<long>(oj * stride + kj) - static_cast<long>(padding);
                if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w)) continue;
                acc += input.at(b, ci, ii, jj) * kernel.at(co, ci, ki, kj);
              }
          out.at(b, co, oi, oj) = acc;
        }
  return out;
}

Tensor naive_avg_pool(const Tensor& maps) {
  const Shape& s = maps.shape();
  const std::size_t hw = s[s.size() - 1] * s[s.size() - 2];
  Shape os(s.begin(), s.end() - 2);
  Tensor out(os, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < hw; ++j) total += maps[i * hw + j];
    out[i] = total / static_cast<double>(hw);
  }
  return out;
}

Tensor replay_suppression(const Tensor& maps, const Tensor& mask, double alpha) {
  std::vector<double> v(maps.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] != 0.0 ? alpha * maps[i] : maps[i];
  return Tensor(maps.shape(), std::move(v));
}

Tensor naive_peak_map(const Tensor& grid) {
  double best = grid[0];
  for (std::size_t i = 1; i < grid.size(); ++i) best = grid[i] > best ? grid[i] : best;
  Tensor out(grid.shape(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = grid[i] == best ? 1.0 : 0.0;
  return out;
}

void write_reports_csv(std::ostream& os, const std::vector<OracleReport>& reports) {
  os << "operation,max_abs_err,max_rel_err,pass\n";
  char buf[64];
  for (const auto& r : reports) {
    os << r.operation << ',';
    std::snprintf(buf, sizeof buf, "%.3e,%.3e", r.max_abs_err, r.max_rel_err);
    os << buf << ',' << (r.pass ? "true" : "false") << '\n';
  }
}

void write_reports_text(std::ostream& os, const std::vector<OracleReport>& reports) {
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-4s %-34s abs %.3e  rel %.3e  tol %.0e (%s)  worst %s\n",
                  r.pass ? "PASS" : "FAIL", r.operation.c_str(), r.max_abs_err, r.max_rel_err, r.tolerance,
                  r.relative ? "rel" : "abs", r.worst_input.c_str());
    os << buf;
  }
}

}  // namespace divgce::oracle
