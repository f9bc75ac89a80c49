#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "divgce/divblock.hpp"
#include "divgce/harness.hpp"
#include "divgce/model.hpp"
#include "divgce/oracle.hpp"

using namespace divgce;
using namespace divgce::model;

namespace {

Tensor random_images(std::size_t n, std::size_t s, RngStream& rng) {
  Tensor t(Shape{n, 1, s, s});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("init is deterministic per seed") {
  ModelConfig cfg;
  auto a = init_model(cfg, RngStream(3, RngDomain::init));
  auto b = init_model(cfg, RngStream(3, RngDomain::init));
  auto c = init_model(cfg, RngStream(4, RngDomain::init));
  REQUIRE(a.tensors.size() == 7);
  for (std::size_t i = 0; i < a.tensors.size(); ++i) CHECK(bit_identical(a.tensors[i].tensor, b.tensors[i].tensor));
  CHECK_FALSE(bit_identical(a.get("conv2.weight"), c.get("conv2.weight")));
  CHECK(a.get("head.weight").shape() == Shape{20, 64, 1, 1});
}

TEST_CASE("kernel std matches sqrt(2/fan_in) and biases are zero") {
  ModelConfig cfg;
  auto p = init_model(cfg, RngStream(0, RngDomain::init));
  const Tensor& w = p.get("conv2.weight");  // 64 x 32 x 3 x 3: 18k samples
  double ss = 0;
  for (double v : w.data()) ss += v * v;
  double sd = std::sqrt(ss / w.size()), want = std::sqrt(2.0 / (32 * 9));
  CHECK(std::abs(sd / want - 1) < 0.1);
  for (double v : p.get("conv0.bias").data()) CHECK(v == 0.0);
}

TEST_CASE("config validation") {
  ModelConfig cfg;
  cfg.channels = {16, 0, 64};
  CHECK_THROWS(cfg.validate());
  cfg.channels = {};
  CHECK_THROWS(cfg.validate());
  cfg = ModelConfig{};
  cfg.input_size = 30;  // not divisible by 2^3
  CHECK_THROWS(cfg.validate());
  cfg = ModelConfig{};
  cfg.num_classes = 1;
  CHECK_THROWS(cfg.validate());
  cfg = ModelConfig{};
  CHECK(ModelConfig::from_text(cfg.to_text()).to_text() == cfg.to_text());
}

TEST_CASE("forward shapes and zero input") {
  ModelConfig cfg;
  auto p = init_model(cfg, RngStream(1, RngDomain::init));
  Tensor zeros(Shape{2, 1, 32, 32});
  Tensor maps = forward_maps(cfg, p, zeros);
  CHECK(maps.shape() == Shape{2, 20, 4, 4});
  for (double v : maps.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(forward_maps(cfg, p, Tensor(Shape{2, 1, 16, 16})), ShapeError);
}

TEST_CASE("eval scores are the mean of head maps") {
  ModelConfig cfg;
  auto p = init_model(cfg, RngStream(2, RngDomain::init));
  RngStream rng(2);
  Tensor img = random_images(3, 32, rng);
  auto pr = predict(cfg, p, img);
  Tensor pooled = oracle::naive_avg_pool(forward_maps(cfg, p, img));
  for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(std::abs(pr.scores[i] - pooled[i]) < 1e-12);
  for (std::size_t n = 0; n < 3; ++n)
    CHECK(pr.labels[n] == argmax(std::span<const double>(pr.scores.values().data() + 20 * n, 20)));
}

TEST_CASE("duplicated class heads tie to the lowest index") {
  ModelConfig cfg;
  cfg.num_classes = 4;
  auto p = init_model(cfg, RngStream(5, RngDomain::init));
  for (auto& nt : p.tensors)
    if (nt.name == "head.weight")
      for (std::size_t c = 1; c < 4; ++c)
        for (std::size_t j = 0; j < 64; ++j) nt.tensor[c * 64 + j] = nt.tensor[j];
  RngStream rng(5);
  auto pr = predict(cfg, p, random_images(6, 32, rng));
  for (auto l : pr.labels) CHECK(l == 0);
  std::vector<double> row{1, 3, 3, 2};
  CHECK(argmax(row) == 1);
}

TEST_CASE("1x1 head never mixes spatial locations") {
  ModelConfig cfg;
  cfg.channels = {4, 6};
  cfg.input_size = 16;
  cfg.num_classes = 3;
  auto p = init_model(cfg, RngStream(6, RngDomain::init));
  const Tensor& head = p.get("head.weight");
  RngStream rng(6);
  Tensor feat(Shape{1, 6, 4, 4});
  for (double& v : feat.data()) v = rng.normal();
  auto apply = [&](const Tensor& f) { return ad::conv2d(ad::constant(f), ad::constant(head)).value(); };
  Tensor base = apply(feat);
  Tensor bumped = feat;
  bumped[1 * 16 + 2 * 4 + 1] += 1.0;  // channel 1, cell (2, 1)
  Tensor out = apply(bumped);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 4; ++w) {
        bool same = base.at(0, c, h, w) == out.at(0, c, h, w);
        CHECK(same == !(h == 2 && w == 1));
      }
}

TEST_CASE("micro model gradient matches finite differences") {
  ModelConfig cfg;
  cfg.input_size = 8;
  cfg.channels = {2, 3};
  cfg.num_classes = 3;
  auto p = init_model(cfg, RngStream(7, RngDomain::init));
  CHECK(p.parameter_count() <= 1000);
  RngStream rng(7);
  Tensor img = random_images(2, 8, rng);
  std::vector<std::size_t> labels{1, 2};
  db::DiversificationConfig dcfg;
  RngStream mask(7, RngDomain::mask);
  // Masks depend on the peaks, so they are fixed from the unperturbed pass.
  db::MaskTrace trace;
  (void)db::db_forward(forward_maps(cfg, p, img), dcfg, mask, &trace);

  auto loss_at = [&](const ModelParams& q) {
    Tensor maps = forward_maps(cfg, q, img);
    Tensor s = db::global_avg_pool(db::apply_suppression(maps, trace.combined, dcfg.alpha));
    return loss::batched_loss(s, labels, 1, loss::LossKind::gce).mean;
  };
  auto vars = as_vars(p, true);
  auto maps = forward_maps(cfg, vars, ad::constant(img));
  auto scores = db::global_avg_pool(db::apply_suppression(maps, trace.combined, dcfg.alpha));
  ad::backward(loss::loss_node(scores, labels, 1, loss::LossKind::gce));

  double worst = 0;
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    Tensor fd = oracle::fd_gradient(
        [&](const Tensor& x) {
          ModelParams q = p;
          q.tensors[t].tensor = x;
          return loss_at(q);
        },
        p.tensors[t].tensor, 1e-5);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      double g = vars[t].grad()[i];
      worst = std::max(worst, std::abs(g - fd[i]) / std::max(1e-6, std::abs(fd[i])));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("a model trained on a 4-class toy set predicts its training labels") {
  synth::SynthConfig sc;
  sc.num_families = 2;
  sc.classes_per_family = 2;
  sc.train_per_class = 40;
  sc.test_per_class = 10;
  sc.image_size = 16;
  sc.family_scale = 12;
  sc.cue_size = 3;
  sc.cue_contrast = 0.9;
  sc.noise_std = 0.02;
  sc.jitter = 1;
  auto dir = std::filesystem::temp_directory_path() / "divgce_test_model_toy";
  std::filesystem::remove_all(dir);
  harness::save_dataset_dir(dir / "data", synth::generate(sc), sc);

  RunConfig rc;
  rc.dataset = dir / "data";
  rc.out = dir / "run";
  rc.channels = {8, 16};
  rc.loss = loss::LossKind::ce;
  rc.use_db = false;
  rc.lr = 0.05;
  rc.epochs = 40;
  rc.batch_size = 16;
  auto res = harness::train(rc);
  auto loaded = harness::load_model(rc.out / "final.dbkt");
  auto data = harness::load_dataset_dir(rc.dataset);
  auto pr = predict(loaded.config, loaded.params, data.train.images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pr.labels.size(); ++i) hits += pr.labels[i] == data.train.labels[i];
  double acc = hits / double(pr.labels.size());
  INFO("train accuracy " << acc);
  CHECK(acc >= 0.99);
}
