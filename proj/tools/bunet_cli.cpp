// bunet — command-line front end: dataset synthesis, training, evaluation,
// prediction, gradient checking and complexity reporting. One JSON config
// drives every subcommand; flags override config keys. Exit codes: 0 success,
// 1 runtime failure, 2 usage error. Diagnostics go to stderr; machine-readable
// output (eval JSON, gradcheck table, flops report) goes to stdout.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bunet/checkpoint.hpp"
#include "bunet/dataset.hpp"
#include "bunet/gradcheck.hpp"
#include "bunet/metrics.hpp"
#include "bunet/pgm.hpp"
#include "bunet/runconfig.hpp"
#include "bunet/trainer.hpp"

namespace {

using bunet::RunConfig;

struct Overrides {
  bool has_seed = false;
  std::uint64_t seed = 0;
  bool has_count = false;
  int count = 0;
  bool has_size = false;
  int size = 0;
};

int run_synth(const std::string& config_path, const std::string& out_dir, const Overrides& ov) {
  RunConfig cfg = bunet::load_run_config(config_path);
  if (ov.has_seed) cfg.synth.seed = ov.seed;
  if (ov.has_count) cfg.synth.count = ov.count;
  if (ov.has_size) cfg.synth.size = ov.size;
  cfg.validate();

  std::vector<bunet::Sample> samples = bunet::synth_generate(cfg.synth);
  bunet::save_dataset(out_dir, samples);
  auto [train, val] = bunet::split_dataset(samples, cfg.split_ratio, cfg.synth.seed);
  bunet::write_manifests(out_dir, train, val);
  std::cerr << "synth: wrote " << samples.size() << " samples (" << train.size() << " train / "
            << val.size() << " val) to " << out_dir << "\n";
  return 0;
}

// Loads a dataset and recovers its train/val split: recorded manifests win,
// otherwise a fresh seeded split.
void load_split(const RunConfig& cfg, const std::string& data_dir,
                std::vector<bunet::Sample>& train, std::vector<bunet::Sample>& val) {
  std::vector<bunet::Sample> all = bunet::load_dataset(data_dir, cfg.synth.size);
  if (bunet::apply_manifests(data_dir, all, train, val)) return;
  std::tie(train, val) = bunet::split_dataset(std::move(all), cfg.split_ratio, cfg.synth.seed);
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const Overrides& ov) {
  RunConfig cfg = bunet::load_run_config(config_path);
  if (ov.has_seed) cfg.train.seed = ov.seed;
  cfg.validate();

  std::vector<bunet::Sample> train, val;
  load_split(cfg, data_dir, train, val);
  std::cerr << "train: " << train.size() << " train / " << val.size() << " val samples at "
            << cfg.synth.size << "x" << cfg.synth.size << "\n";

  bunet::Network<float> net(cfg.model, cfg.train.seed);
  std::cerr << "train: " << net.params().learnable_count() << " learnable parameters\n";
  bunet::TrainResult res = bunet::train_model(net, cfg.train, train, val, cfg.loss, out_dir,
                                              bunet::canonical_config_json(cfg));
  std::cerr << "train: " << res.iterations << " iterations, final loss "
            << (res.history.empty() ? 0.0 : res.history.back().loss);
  if (res.best_val_dice >= 0) std::cerr << ", best val dice " << res.best_val_dice;
  std::cerr << "\n";
  return 0;
}

nlohmann::json report_json(const bunet::MetricReport& r) {
  nlohmann::json j{{"dice", r.dice},
                   {"iou", r.iou},
                   {"recall", r.recall},
                   {"accuracy", r.accuracy}};
  if (r.hd95_defined)
    j["hd95"] = r.hd95;
  else
    j["hd95"] = nullptr;
  return j;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split) {
  bunet::CheckpointData ckpt = bunet::load_checkpoint(ckpt_path);
  RunConfig cfg = bunet::parse_run_config(ckpt.config_json);
  bunet::Network<float> net(cfg.model, /*seed=*/0);
  bunet::apply_checkpoint(ckpt, net.params());

  std::vector<bunet::Sample> train, val, samples;
  if (split == "all") {
    samples = bunet::load_dataset(data_dir, cfg.synth.size);
  } else {
    std::vector<bunet::Sample> all = bunet::load_dataset(data_dir, cfg.synth.size);
    if (!bunet::apply_manifests(data_dir, all, train, val))
      bunet::fail("eval: --split " + split + " requires train.txt/val.txt manifests in '" +
                  data_dir + "'");
    samples = split == "train" ? std::move(train) : std::move(val);
  }
  if (samples.empty()) bunet::fail("eval: no samples selected");

  bunet::NoGradGuard ng;
  nlohmann::json out;
  out["samples"] = nlohmann::json::array();
  std::vector<bunet::MetricReport> reports;
  for (const bunet::Sample& s : samples) {
    bunet::NetOutput<float> y = net.forward(s.image, /*training=*/false);
    bunet::MetricReport r =
        bunet::compute_report(bunet::threshold_map(y.mask_prob), bunet::tensor_to_map(s.mask));
    reports.push_back(r);
    nlohmann::json j = report_json(r);
    j["id"] = s.id;
    out["samples"].push_back(std::move(j));
  }
  out["aggregate"] = report_json(bunet::aggregate_reports(reports));
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& out_path, const std::string& boundary_prefix) {
  bunet::CheckpointData ckpt = bunet::load_checkpoint(ckpt_path);
  RunConfig cfg = bunet::parse_run_config(ckpt.config_json);
  bunet::Network<float> net(cfg.model, /*seed=*/0);
  bunet::apply_checkpoint(ckpt, net.params());

  bunet::Tensor<float> image = bunet::read_pgm(image_path);
  const int H = image.shape().h(), W = image.shape().w();
  const int rh = std::max(16, (H + 15) / 16 * 16);
  const int rw = std::max(16, (W + 15) / 16 * 16);
  bunet::Tensor<float> input =
      (rh == H && rw == W) ? image : bunet::resize_bilinear(image, rh, rw);

  bunet::NoGradGuard ng;
  bunet::NetOutput<float> y = net.forward(input, /*training=*/false);
  bunet::Tensor<float> prob = y.mask_prob;
  if (rh != H || rw != W) prob = bunet::resize_bilinear(prob, H, W);
  bunet::write_pgm(out_path, bunet::map_to_tensor(bunet::threshold_map(prob)));
  std::cerr << "predict: wrote mask to " << out_path << "\n";

  if (!boundary_prefix.empty()) {
    if (y.boundary_probs.empty())
      bunet::fail("predict: --boundary-out given but the checkpointed model has no boundary "
                  "heads (enable_bd=false)");
    for (std::size_t k = 0; k < y.boundary_probs.size(); ++k) {
      const std::string p = boundary_prefix + "_s" + std::to_string(k + 1) + ".pgm";
      bunet::write_pgm(p, y.boundary_probs[k]);
      std::cerr << "predict: wrote stage-" << (k + 1) << " boundary map to " << p << "\n";
    }
  }
  return 0;
}

int run_gradcheck() {
  std::vector<bunet::GradCheckResult> results = bunet::gradcheck_suite();
  bool all_pass = true;
  for (const bunet::GradCheckResult& r : results) {
    std::printf("%-28s max_rel_err %.3e  %s", r.name.c_str(), r.max_rel_err,
                r.pass ? "ok" : "FAIL");
    if (r.coords_skipped > 0)
      std::printf("  (%lld of %lld coords on a kink, skipped)",
                  static_cast<long long>(r.coords_skipped),
                  static_cast<long long>(r.coords_checked + r.coords_skipped));
    std::printf("\n");
    all_pass = all_pass && r.pass;
  }
  std::printf("gradcheck: %zu cases, %s\n", results.size(), all_pass ? "all ok" : "FAILURES");
  return all_pass ? 0 : 1;
}

int run_flops(const std::string& config_path, const Overrides& ov) {
  RunConfig cfg = bunet::load_run_config(config_path);
  if (ov.has_size) cfg.synth.size = ov.size;
  cfg.validate();
  bunet::ModelCost cost = bunet::count_params_flops(cfg.model, cfg.synth.size, cfg.synth.size);
  std::cout << "params " << cost.params << "\n"
            << "flops " << cost.forward_flops << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"boundary-enhanced U-Net segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, ckpt_path, image_path, boundary_prefix;
  std::string split = "all";
  Overrides ov;
  std::uint64_t seed_flag = 0;
  int count_flag = 0, size_flag = 0;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", config_path, "JSON run config");
  synth->add_option("--out", out_dir, "output dataset directory")->required();
  synth->add_option("--seed", seed_flag, "override synth.seed");
  synth->add_option("--count", count_flag, "override synth.count");
  synth->add_option("--size", size_flag, "override synth.size");

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "JSON run config");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory (checkpoints, history.csv)")->required();
  train->add_option("--seed", seed_flag, "override train.seed");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "subset: all|train|val")
      ->check(CLI::IsMember({"all", "train", "val"}));

  CLI::App* predict = app.add_subcommand("predict", "segment one image");
  predict->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  predict->add_option("--image", image_path, "input PGM image")->required();
  predict->add_option("--out", out_dir, "output mask PGM")->required();
  predict->add_option("--boundary-out", boundary_prefix,
                      "prefix for the 4 stage boundary maps (<prefix>_s1..4.pgm)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");

  CLI::App* flops = app.add_subcommand("flops", "report parameter count and forward FLOPs");
  flops->add_option("--config", config_path, "JSON run config");
  flops->add_option("--size", size_flag, "probe input size (default: synth.size)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // 0 covers --help; everything else is a usage error
  }

  ov.has_seed = synth->count("--seed") > 0 || train->count("--seed") > 0;
  ov.seed = seed_flag;
  ov.has_count = synth->count("--count") > 0;
  ov.count = count_flag;
  ov.has_size = synth->count("--size") > 0 || flops->count("--size") > 0;
  ov.size = size_flag;

  try {
    if (synth->parsed()) return run_synth(config_path, out_dir, ov);
    if (train->parsed()) return run_train(config_path, data_dir, out_dir, ov);
    if (eval->parsed()) return run_eval(ckpt_path, data_dir, split);
    if (predict->parsed()) return run_predict(ckpt_path, image_path, out_dir, boundary_prefix);
    if (gradcheck->parsed()) return run_gradcheck();
    if (flops->parsed()) return run_flops(config_path, ov);
  } catch (const bunet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
