#include "divgce/check.hpp"

#include <cmath>
#include <string>

#include "divgce/autodiff.hpp"
#include "divgce/divblock.hpp"
#include "divgce/gce.hpp"
#include "divgce/model.hpp"
#include "divgce/rng.hpp"

namespace divgce::harness {

namespace {

using oracle::ErrorTracker;

std::string digest(std::uint64_t seed, std::size_t trial) {
  return "seed=" + std::to_string(seed) + "/trial=" + std::to_string(trial);
}

Tensor random_tensor(Shape shape, RngStream& r, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * (2.0 * r.uniform() - 1.0);
  return t;
}

std::vector<double> random_scores(RngStream& r, std::size_t c, double scale) {
  std::vector<double> s(c);
  for (auto& v : s) v = scale * (2.0 * r.uniform() - 1.0);
  return s;
}

void compare(ErrorTracker& t, const Tensor& got, const Tensor& want, const std::string& d) {
  if (got.shape() != want.shape()) {
    t.add(INFINITY, 0.0, d + "/shape");
    return;
  }
  for (std::size_t i = 0; i < got.size(); ++i) t.add(got[i], want[i], d);
}

}  // namespace

std::vector<oracle::OracleReport> run_oracle_suite(std::uint64_t seed) {
  std::vector<oracle::OracleReport> out;
  const RngStream base(seed, RngDomain::misc);

  {  // conv2d vs six-loop convolution
    ErrorTracker t("conv2d", 1e-10);
    for (std::size_t trial = 0; trial < 20; ++trial) {
      RngStream r = base.substream(1, static_cast<std::uint32_t>(trial));
      const std::size_t stride = 1 + trial % 2, pad = trial % 3;
      const Tensor x = random_tensor({2, 2, 5 + trial % 3, 5}, r), k = random_tensor({3, 2, 3, 3}, r);
      compare(t, ad::conv2d(ad::constant(x), ad::constant(k), stride, pad).value(),
              oracle::naive_conv2d(x, k, stride, pad), digest(seed, trial));
    }
    out.push_back(t.report());
  }
  {  // elementwise ops: gradient of sum(op(a, b)) vs finite differences
    ErrorTracker t("tensor_binary.grad", 1e-8);
    for (std::size_t trial = 0; trial < 30; ++trial) {
      RngStream r = base.substream(2, static_cast<std::uint32_t>(trial));
      const Shape shape = trial % 3 == 0 ? Shape{3, 4} : trial % 3 == 1 ? Shape{2, 3, 2} : Shape{7};
      const Tensor a = random_tensor(shape, r), b = random_tensor(shape, r);
      const auto op = static_cast<ad::BinaryOp>(trial % 3);
      ad::Var va = ad::parameter(a);
      ad::backward(ad::sum(ad::binary(va, ad::parameter(b), op)));
      const Tensor fd = oracle::fd_gradient(
          [&](const Tensor& p) { return ad::sum(ad::binary(ad::constant(p), ad::constant(b), op)).value().item(); },
          a, 1e-6);
      compare(t, va.grad(), fd, digest(seed, trial));
    }
    out.push_back(t.report());
  }
  {  // peak map vs exhaustive scan
    ErrorTracker t("peak_map", 0.0);
    for (std::size_t trial = 0; trial < 200; ++trial) {
      RngStream r = base.substream(3, static_cast<std::uint32_t>(trial));
      Tensor g({4, 4});
      for (auto& v : g.data()) v = static_cast<double>(r.below(trial % 2 ? 3 : 1000));  // tie-heavy half
      compare(t, db::peak_map(g), oracle::naive_peak_map(g), digest(seed, trial));
    }
    out.push_back(t.report());
  }
  {  // suppression + pooling replay on recorded masks
    ErrorTracker sup("apply_suppression", 1e-12), pool("global_avg_pool", 1e-12), fwd("db_forward.replay", 1e-12);
    for (std::size_t trial = 0; trial < 100; ++trial) {
      RngStream r = base.substream(4, static_cast<std::uint32_t>(trial));
      const Tensor maps = random_tensor({2, 3, 4, 4}, r, 5.0);
      db::DiversificationConfig cfg{0.5, 0.5, 2, 0.1, db::Mode::train};
      db::MaskTrace trace;
      const Tensor scores = db::db_forward(maps, cfg, base.substream(40, static_cast<std::uint32_t>(trial)), &trace);
      const Tensor replay = oracle::replay_suppression(maps, trace.combined, cfg.alpha);
      compare(sup, db::apply_suppression(maps, trace.combined, cfg.alpha), replay, digest(seed, trial));
      compare(pool, db::global_avg_pool(maps), oracle::naive_avg_pool(maps), digest(seed, trial));
      compare(fwd, scores, oracle::naive_avg_pool(replay), digest(seed, trial));
    }
    out.push_back(sup.report());
    out.push_back(pool.report());
    out.push_back(fwd.report());
  }
  {  // heap selection vs full sort
    ErrorTracker t("top_k_negatives", 0.0);
    for (std::size_t trial = 0; trial < 10000; ++trial) {
      RngStream r = base.substream(5, static_cast<std::uint32_t>(trial));
      const std::size_t c = 2 + r.below(30);
      std::vector<double> s(c);
      const int mode = static_cast<int>(trial % 4);
      for (auto& v : s) {
        if (mode == 0) v = 2.0 * r.uniform() - 1.0;
        else if (mode == 1) v = static_cast<double>(r.below(3));           // heavy ties
        else if (mode == 2) v = 1.0;                                       // all tied
        else v = 1.0 + static_cast<double>(r.below(3)) * 1e-15;            // near ties
      }
      const std::size_t label = r.below(static_cast<std::uint32_t>(c));
      const std::size_t k = 1 + r.below(static_cast<std::uint32_t>(c - 1));
      t.add_exact(loss::top_k_negatives(s, label, k) == oracle::naive_select(s, label, k), digest(seed, trial));
    }
    out.push_back(t.report());
  }
  {  // stabilised losses vs literal sums
    ErrorTracker ce("ce_loss", 1e-12), gce("gce_loss", 1e-12);
    for (std::size_t trial = 0; trial < 1000; ++trial) {
      RngStream r = base.substream(6, static_cast<std::uint32_t>(trial));
      const std::size_t c = 2 + r.below(49);
      const auto s = random_scores(r, c, 10.0);
      const std::size_t label = r.below(static_cast<std::uint32_t>(c));
      const std::size_t k = 1 + r.below(static_cast<std::uint32_t>(c - 1));
      ce.add(loss::ce_loss(s, label), oracle::direct_loss(s, label, std::nullopt), digest(seed, trial));
      gce.add(loss::gce_loss(s, label, k), oracle::direct_loss(s, label, k), digest(seed, trial));
    }
    out.push_back(ce.report());
    out.push_back(gce.report());
  }
  {  // analytic loss gradients vs finite differences with the split held fixed
    ErrorTracker ce("ce_gradient", 1e-8), gce("gce_gradient", 1e-8);
    for (std::size_t trial = 0; trial < 1000; ++trial) {
      RngStream r = base.substream(7, static_cast<std::uint32_t>(trial));
      const std::size_t c = 2 + r.below(19);
      const auto s = random_scores(r, c, 10.0);
      const std::size_t label = r.below(static_cast<std::uint32_t>(c));
      const std::size_t k = 1 + r.below(static_cast<std::uint32_t>(c - 1));
      const Tensor x({c}, s);
      const auto hard = oracle::naive_select(s, label, k).hard;
      const Tensor fd_gce = oracle::fd_gradient(
          [&](const Tensor& p) {
            double denom = std::exp(p[label]);
            for (auto i : hard) denom += std::exp(p[i]);
            return std::log(denom) - p[label];
          },
          x, 1e-6);
      const Tensor fd_ce = oracle::fd_gradient(
          [&](const Tensor& p) {
            double denom = 0.0;
            for (double v : p.data()) denom += std::exp(v);
            return std::log(denom) - p[label];
          },
          x, 1e-6);
      compare(gce, Tensor({c}, loss::gce_gradient(s, label, k)), fd_gce, digest(seed, trial));
      compare(ce, Tensor({c}, loss::ce_gradient(s, label)), fd_ce, digest(seed, trial));
    }
    out.push_back(ce.report());
    out.push_back(gce.report());
  }
  {  // full micro-model backward vs finite differences
    ErrorTracker t("backward.micro_model", 1e-4, true);
    const model::ModelConfig mc{8, {2, 3}, 3, seed};
    const model::ModelParams params = model::init_model(mc, RngStream(seed, RngDomain::init));
    RngStream r = base.substream(8);
    Tensor images({2, 1, 8, 8});
    for (auto& v : images.data()) v = r.uniform();
    const std::vector<std::size_t> labels{0, 2};
    const db::DiversificationConfig dbc{0.5, 0.5, 2, 0.1, db::Mode::train};
    const RngStream mask = base.substream(80);
    auto loss_of = [&](const std::vector<ad::Var>& vars) {
      const ad::Var maps = model::forward_maps(mc, vars, ad::constant(images));
      return loss::loss_node(db::db_forward(maps, dbc, mask), labels, 1, loss::LossKind::gce);
    };
    const auto vars = model::as_vars(params, true);
    ad::backward(loss_of(vars));
    for (std::size_t p = 0; p < params.tensors.size(); ++p) {
      const Tensor fd = oracle::fd_gradient(
          [&](const Tensor& probe) {
            model::ModelParams q = params;
            q.tensors[p].tensor = probe;
            return loss_of(model::as_vars(q, false)).value().item();
          },
          params.tensors[p].tensor, 1e-5);
      compare(t, vars[p].grad(), fd, "seed=" + std::to_string(seed) + "/param=" + params.tensors[p].name);
    }
    out.push_back(t.report());
  }
  return out;
}

}  // namespace divgce::harness
