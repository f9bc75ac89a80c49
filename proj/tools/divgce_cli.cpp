// divgce: dataset generation, training, evaluation, CAM export, sweeps and
// the oracle self-check.
//
// Exit codes: 0 success, 1 runtime failure, 2 config validation failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "divgce/check.hpp"
#include "divgce/config.hpp"
#include "divgce/harness.hpp"
#include "divgce/synthdata.hpp"

namespace fs = std::filesystem;
using namespace divgce;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> overrides;
};

// --<key> for every key of `keys`, collected as raw strings.
void add_overrides(CLI::App* app, Common& c, const std::vector<std::string>& keys, const std::string& skip = "") {
  for (const auto& key : keys) {
    if (key == "seed" || key == "out" || key == skip) continue;
    app->add_option_function<std::string>(
        "--" + key, [&c, key](const std::string& v) { c.overrides[key] = v; }, "override '" + key + "'");
  }
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value config file");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "random seed");
}

KeyValues collect(const Common& c) {
  KeyValues kv;
  if (!c.config.empty()) kv = read_key_values(c.config);
  for (const auto& [k, v] : c.overrides) kv.emplace_back(k, v);
  if (c.seed) kv.emplace_back("seed", std::to_string(*c.seed));
  return kv;
}

RunConfig run_config(const Common& c) {
  RunConfig cfg;
  cfg.apply(collect(c));
  if (!c.out.empty()) cfg.out = c.out;
  cfg.validate();
  return cfg;
}

std::vector<std::size_t> parse_indices(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (auto dash = tok.find('-'); dash != std::string::npos) {
      const auto a = std::stoul(tok.substr(0, dash)), b = std::stoul(tok.substr(dash + 1));
      for (auto i = a; i <= b; ++i) out.push_back(i);
    } else {
      out.push_back(std::stoul(tok));
    }
  }
  return out;
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  divgce::harness::tune_allocator();
  CLI::App app{"Diversification block + gradient-boosting cross entropy toy pipeline"};
  app.require_subcommand(1);

  Common gen_c, train_c, sweep_c;
  std::string eval_ckpt, eval_data, eval_out;
  std::string cam_ckpt, cam_data, cam_indices = "0", cam_out = "cams";
  std::string sweep_axis, sweep_values;
  std::string check_out = "check";
  std::uint64_t check_seed = 0;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic fine-grained dataset");
  add_common(gen, gen_c);
  add_overrides(gen, gen_c, synth_keys());

  auto* tr = app.add_subcommand("train", "train one configuration");
  add_common(tr, train_c);
  add_overrides(tr, train_c, RunConfig::keys());

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint in inference mode");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint (.dbkt) with model.cfg beside it")->required();
  ev->add_option("--dataset", eval_data, "dataset file or directory (uses test.dbds)")->required();
  ev->add_option("--out", eval_out, "confusion matrix CSV path");

  auto* cam = app.add_subcommand("cam", "export class activation maps as PGM");
  cam->add_option("--checkpoint", cam_ckpt, "checkpoint (.dbkt)")->required();
  cam->add_option("--dataset", cam_data, "dataset file or directory (uses test.dbds)")->required();
  cam->add_option("--indices", cam_indices, "image indices, e.g. 0,5,10-12");
  cam->add_option("--out", cam_out, "output directory");

  auto* sw = app.add_subcommand("sweep", "one training run per value of an axis");
  add_common(sw, sweep_c);
  sw->add_option("--axis", sweep_axis, "alpha, k, p_peak or p_patch")->required();
  sw->add_option("--values", sweep_values, "comma-separated values")->required();
  add_overrides(sw, sweep_c, RunConfig::keys());

  auto* chk = app.add_subcommand("check", "run the oracle suite");
  chk->add_option("--out", check_out, "report directory");
  chk->add_option("--seed", check_seed, "input seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      synth::SynthConfig cfg;
      apply_synth(cfg, collect(gen_c));
      const fs::path out = gen_c.out.empty() ? fs::path("data") : fs::path(gen_c.out);
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const auto data = synth::generate(cfg);
      harness::save_dataset_dir(out, data, cfg);
      std::cout << "wrote " << out.string() << ": " << cfg.num_classes() << " classes in " << cfg.num_families
                << " families, " << data.train.size() << " train / " << data.test.size() << " test, "
                << cfg.image_size << "x" << cfg.image_size << "\n";
    } else if (tr->parsed()) {
      const RunConfig cfg = run_config(train_c);
      const auto r = harness::train(cfg);
      std::cout << "trained " << cfg.epochs << " epochs -> " << cfg.out.string()
                << "; final test accuracy " << r.final_test_accuracy() << "\n";
    } else if (ev->parsed()) {
      const fs::path out = eval_out.empty() ? fs::path(eval_ckpt).parent_path() / "confusion.csv" : fs::path(eval_out);
      const auto r = harness::eval_checkpoint(eval_ckpt, eval_data, out);
      std::cout << "accuracy " << r.accuracy << "\nloss " << r.loss << "\nconfusion " << out.string() << "\n";
    } else if (cam->parsed()) {
      const auto idx = parse_indices(cam_indices);
      const auto recs = harness::export_cams(cam_ckpt, cam_data, idx, cam_out);
      std::cout << "wrote " << recs.size() << " heatmaps to " << cam_out << "\n";
    } else if (sw->parsed()) {
      const RunConfig base = run_config(sweep_c);
      const auto rows = harness::sweep(sweep_axis, split_values(sweep_values), base);
      for (const auto& r : rows)
        std::cout << sweep_axis << "=" << r.value << "  acc " << r.final_accuracy << "  epochs_to_90 "
                  << (r.epochs_to_90 ? std::to_string(*r.epochs_to_90) : "-") << "  " << r.status << "\n";
    } else if (chk->parsed()) {
      const auto reports = harness::run_oracle_suite(check_seed);
      fs::create_directories(check_out);
      std::ofstream csv(fs::path(check_out) / "oracle.csv");
      std::ofstream txt(fs::path(check_out) / "oracle.txt");
      oracle::write_reports_csv(csv, reports);
      oracle::write_reports_text(txt, reports);
      oracle::write_reports_text(std::cout, reports);
      for (const auto& r : reports)
        if (!r.pass) return 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const synth::GeometryError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
