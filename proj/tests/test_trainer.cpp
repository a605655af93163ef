#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "bunet/checkpoint.hpp"
#include "bunet/trainer.hpp"

using namespace bunet;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

void fresh_tape() {
  Tape<double>::active().reset();
  Tape<float>::active().reset();
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "bunet_trainer_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<Sample> tiny_dataset(int count, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.count = count;
  cfg.size = 32;
  cfg.seed = seed;
  return synth_generate(cfg);
}

NetConfig tiny_net_config() {
  NetConfig cfg;
  cfg.base_channels = 8;
  return cfg;
}

// Short, deterministic training budget: 2 epochs x ceil(6/4) batches.
TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.lr0 = 0.05;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.eval_every = 2;
  cfg.seed = 5;
  return cfg;
}

bool entries_identical(ModuleParams<float>& a, ModuleParams<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& ea = a.entries()[i];
    const auto& eb = b.entries()[i];
    if (ea.name != eb.name || ea.tensor.numel() != eb.tensor.numel()) return false;
    if (std::memcmp(ea.tensor.data(), eb.tensor.data(), sizeof(float) * ea.tensor.numel()) != 0)
      return false;
  }
  return true;
}

void flip_byte(const fs::path& p, std::streamoff offset) {
  std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
  f.seekg(offset);
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5A);
  f.seekp(offset);
  f.write(&c, 1);
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("polynomial schedule fixture") {
  TrainConfig cfg;
  cfg.lr0 = 0.001;
  cfg.power = 0.9;
  CHECK(poly_lr(0, 100, cfg) == Approx(0.001).epsilon(1e-15));
  CHECK(poly_lr(100, 100, cfg) == 0.0);
  CHECK(poly_lr(50, 100, cfg) == Approx(0.001 * std::pow(0.5, 0.9)).epsilon(1e-15));
  CHECK(poly_lr(25, 100, cfg) == Approx(0.001 * std::pow(0.75, 0.9)).epsilon(1e-15));

  CHECK_THROWS_AS(poly_lr(-1, 100, cfg), Error);
  CHECK_THROWS_AS(poly_lr(101, 100, cfg), Error);
  CHECK_THROWS_AS(poly_lr(0, 0, cfg), Error);
}

TEST_CASE("sgd step fixture with momentum and selective decay") {
  ModuleParams<float> reg;
  // Copies share storage with the registered entries, and stay valid when the
  // registry grows (references into it would not).
  Tensor<float> w = reg.add("w", Tensor<float>::ones(Shape{1}), true, true);
  Tensor<float> b = reg.add("b", Tensor<float>::ones(Shape{1}), true, false);
  w.state().grad = std::make_shared<std::vector<float>>(1, 1.0f);
  b.state().grad = std::make_shared<std::vector<float>>(1, 1.0f);

  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.1;

  Velocities vel;
  sgd_step(reg, vel, 0.1, cfg);
  // w: g' = 1 + 0.1*1 = 1.1, v = 1.1, w = 1 - 0.11. b skips decay: b = 0.9.
  CHECK(w.data()[0] == Approx(0.89).epsilon(1e-6));
  CHECK(b.data()[0] == Approx(0.9).epsilon(1e-6));
  CHECK(vel.at("w")[0] == Approx(1.1).epsilon(1e-6));

  // Second step with the same raw gradient: the velocity compounds.
  sgd_step(reg, vel, 0.1, cfg);
  // g' = 1 + 0.1*0.89 = 1.089, v = 0.9*1.1 + 1.089 = 2.079, w = 0.89 - 0.2079.
  CHECK(w.data()[0] == Approx(0.6821).epsilon(1e-5));
  CHECK(vel.at("w")[0] == Approx(2.079).epsilon(1e-5));

  // A learnable parameter without a gradient buffer is an error by name.
  reg.add("naked", Tensor<float>::ones(Shape{2}), true, true);
  CHECK_THROWS_WITH_AS(sgd_step(reg, vel, 0.1, cfg), doctest::Contains("naked"), Error);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.validate();
  TrainConfig bad = cfg;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.lr0 = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("training run: schedule, history, validation and artifacts") {
  fresh_tape();
  const fs::path dir = scratch("run");
  std::vector<Sample> data = tiny_dataset(8, 1);
  std::vector<Sample> train(data.begin(), data.begin() + 6);
  std::vector<Sample> val(data.begin() + 6, data.end());

  Network<float> net(tiny_net_config(), 5);
  TrainConfig cfg = tiny_train_config();
  TrainResult res = train_model(net, cfg, train, val, LossWeights{}, dir.string(), "{}");

  // 2 epochs x 2 batches.
  REQUIRE(res.iterations == 4);
  REQUIRE(res.history.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(res.history[i].iter == i);
    CHECK(std::isfinite(res.history[i].loss));
    CHECK(res.history[i].lr == Approx(poly_lr(i, 4, cfg)).epsilon(1e-15));
  }

  // eval_every=2 fires mid-run at iter 2; the final validation always runs.
  REQUIRE(res.val_history.size() == 2);
  CHECK(res.val_history[0].iter == 2);
  CHECK(res.val_history[1].iter == 4);
  CHECK(res.final_val_dice == res.val_history.back().dice);
  CHECK(res.best_val_dice ==
        std::max(res.val_history[0].dice, res.val_history[1].dice));

  REQUIRE(fs::exists(dir / "history.csv"));
  REQUIRE(fs::exists(res.best_checkpoint));
  REQUIRE(fs::exists(res.last_checkpoint));

  // history.csv holds a header plus one row per iteration, matching in-memory
  // history exactly (losses are printed with full precision).
  std::ifstream csv(dir / "history.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "iter,loss,lr");
  int rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    long long it = 0;
    double loss = 0, lr = 0;
    REQUIRE(std::sscanf(line.c_str(), "%lld,%lg,%lg", &it, &loss, &lr) == 3);
    CHECK(it == res.history[rows].iter);
    CHECK(loss == res.history[rows].loss);  // round-trip exact via %.17g
    CHECK(lr == res.history[rows].lr);
    ++rows;
  }
  CHECK(rows == 4);

  const CheckpointData last = load_checkpoint(res.last_checkpoint);
  CHECK(last.iteration == 4);
  CHECK(last.config_json == "{}");
}

TEST_CASE("training is bit-deterministic per seed") {
  fresh_tape();
  std::vector<Sample> data = tiny_dataset(8, 1);
  std::vector<Sample> train(data.begin(), data.begin() + 6);
  std::vector<Sample> val(data.begin() + 6, data.end());
  TrainConfig cfg = tiny_train_config();

  Network<float> n1(tiny_net_config(), 5), n2(tiny_net_config(), 5);
  TrainResult r1 = train_model(n1, cfg, train, val, LossWeights{}, "", "");
  TrainResult r2 = train_model(n2, cfg, train, val, LossWeights{}, "", "");

  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i)
    CHECK(r1.history[i].loss == r2.history[i].loss);  // bitwise, not approx
  CHECK(r1.final_val_dice == r2.final_val_dice);
  CHECK(entries_identical(n1.params(), n2.params()));

  // No out_dir: no files are promised.
  CHECK(r1.best_checkpoint.empty());
  CHECK(r1.last_checkpoint.empty());
}

TEST_CASE("empty validation set skips validation") {
  fresh_tape();
  std::vector<Sample> train = tiny_dataset(4, 2);
  Network<float> net(tiny_net_config(), 6);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  TrainResult res = train_model(net, cfg, train, {}, LossWeights{}, "", "");
  CHECK(res.val_history.empty());
  CHECK(res.best_val_dice == -1.0);
  CHECK(res.best_checkpoint.empty());
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  fresh_tape();
  std::vector<Sample> train = tiny_dataset(4, 3);
  Network<float> net(tiny_net_config(), 7);
  net.params().at("enc1.cbr1.conv.weight").data()[0] =
      std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg = tiny_train_config();
  CHECK_THROWS_WITH_AS(train_model(net, cfg, train, {}, LossWeights{}, "", ""),
                       doctest::Contains("non-finite"), Error);
}

TEST_CASE("evaluate_mean_dice guards and determinism") {
  fresh_tape();
  std::vector<Sample> data = tiny_dataset(4, 4);
  Network<float> net(tiny_net_config(), 8);
  CHECK_THROWS_AS(evaluate_mean_dice(net, {}, 4), Error);

  // Eval mode needs trained batch-norm statistics.
  CHECK_THROWS_WITH_AS(evaluate_mean_dice(net, data, 4),
                       doctest::Contains("running statistics"), Error);

  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  train_model(net, cfg, data, {}, LossWeights{}, "", "");
  const double d1 = evaluate_mean_dice(net, data, 4);
  const double d2 = evaluate_mean_dice(net, data, 2);  // batching must not matter
  CHECK(d1 >= 0.0);
  CHECK(d1 <= 1.0);
  CHECK(d1 == d2);
}

TEST_CASE("checkpoint round trip restores the model bit-exactly") {
  fresh_tape();
  const fs::path dir = scratch("ckpt");
  std::vector<Sample> data = tiny_dataset(6, 5);

  Network<float> src(tiny_net_config(), 9);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  train_model(src, cfg, data, {}, LossWeights{}, "", "");  // move stats + weights

  Velocities vel;
  vel["w"] = {1.5f, -2.0f};
  const std::string json = "{\"base_channels\":8}";
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(path, src.params(), vel, 7, json);

  CheckpointData ckpt = load_checkpoint(path);
  CHECK(ckpt.iteration == 7);
  CHECK(ckpt.config_json == json);
  CHECK(ckpt.config_digest == fnv1a64(json));
  CHECK(ckpt.arrays.size() == src.params().size());  // every entry, stats included

  // Restore into a differently initialized network of the same architecture.
  Network<float> dst(tiny_net_config(), 1234);
  CHECK_FALSE(entries_identical(src.params(), dst.params()));
  Velocities vel2;
  apply_checkpoint(ckpt, dst.params(), &vel2);
  CHECK(entries_identical(src.params(), dst.params()));
  REQUIRE(vel2.count("w") == 1);
  CHECK(vel2.at("w") == vel.at("w"));

  // Restored models produce bit-identical eval forwards.
  Tensor<float> probe = data[0].image;
  NoGradGuard ng;
  Tensor<float> a = src.forward(probe, false).mask_logits;
  Tensor<float> b = dst.forward(probe, false).mask_logits;
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.numel()) == 0);
}

TEST_CASE("checkpoint loader rejects damaged files") {
  fresh_tape();
  const fs::path dir = scratch("ckpt_bad");
  ModuleParams<float> reg;
  reg.add("w", Tensor<float>::ones(Shape{2, 2}), true, true);
  const std::string good = (dir / "good.ckpt").string();
  save_checkpoint(good, reg, {}, 1, "{\"a\":1}");
  (void)load_checkpoint(good);  // sanity: the pristine file loads

  fs::copy_file(good, dir / "magic.ckpt");
  flip_byte(dir / "magic.ckpt", 0);
  CHECK_THROWS_WITH_AS(load_checkpoint((dir / "magic.ckpt").string()),
                       doctest::Contains("magic"), Error);

  // Corrupting the embedded config breaks the digest.
  fs::copy_file(good, dir / "digest.ckpt");
  flip_byte(dir / "digest.ckpt", 20);  // first config byte
  CHECK_THROWS_WITH_AS(load_checkpoint((dir / "digest.ckpt").string()),
                       doctest::Contains("digest"), Error);

  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream out(dir / "short.ckpt", std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  out.close();
  CHECK_THROWS_AS(load_checkpoint((dir / "short.ckpt").string()), Error);

  CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), Error);

  // Applying to a mismatched architecture is an error.
  CheckpointData ckpt = load_checkpoint(good);
  ModuleParams<float> other;
  other.add("w", Tensor<float>::ones(Shape{2, 3}), true, true);
  CHECK_THROWS_WITH_AS(apply_checkpoint(ckpt, other), doctest::Contains("shape mismatch"),
                       Error);
  ModuleParams<float> extra;
  extra.add("w", Tensor<float>::ones(Shape{2, 2}), true, true);
  extra.add("v", Tensor<float>::ones(Shape{1}), true, true);
  CHECK_THROWS_WITH_AS(apply_checkpoint(ckpt, extra),
                       doctest::Contains("missing from the checkpoint"), Error);
}

TEST_CASE("orphaned boundary heads still receive optimizer updates") {
  fresh_tape();
  std::vector<Sample> data = tiny_dataset(4, 6);

  // Boundary supervision off and fusion off: the boundary heads contribute to
  // no loss term, so their gradients are exactly zero and one step moves them
  // by weight decay alone.
  NetConfig nc = tiny_net_config();
  nc.enable_bd = true;
  nc.enable_bgfe = false;
  nc.enable_saam = false;
  LossWeights lw;
  lw.lambda_boundary = 0.0;

  TrainConfig cfg;
  cfg.lr0 = 0.1;
  cfg.weight_decay = 0.1;
  cfg.momentum = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 4;  // all samples in one batch -> max_iter 1, lr = lr0
  cfg.seed = 5;

  Network<float> net(nc, 11);
  const std::vector<float> w0 = net.params().at("dec2.bd.proj.weight").vec();
  const std::vector<float> b0 = net.params().at("dec2.bd.proj.bias").vec();
  train_model(net, cfg, data, {}, lw, "", "");

  const std::vector<float>& w1 = net.params().at("dec2.bd.proj.weight").vec();
  const std::vector<float>& b1 = net.params().at("dec2.bd.proj.bias").vec();
  const float factor = 1.0f - 0.1f * 0.1f;  // 1 - lr * wd
  for (std::size_t i = 0; i < w0.size(); ++i)
    CHECK(w1[i] == Approx(factor * w0[i]).epsilon(1e-6));
  // Biases skip decay, so a zero gradient leaves them untouched.
  for (std::size_t i = 0; i < b0.size(); ++i) CHECK(b1[i] == b0[i]);

  // With fusion enabled the same heads sit on the mask path and move beyond
  // the decay factor.
  fresh_tape();
  NetConfig fused = nc;
  fused.enable_bgfe = true;
  Network<float> net2(fused, 11);
  const std::vector<float> v0 = net2.params().at("dec2.bd.proj.weight").vec();
  train_model(net2, cfg, data, {}, lw, "", "");
  const std::vector<float>& v1 = net2.params().at("dec2.bd.proj.weight").vec();
  float max_dev = 0.0f;
  for (std::size_t i = 0; i < v0.size(); ++i)
    max_dev = std::max(max_dev, std::abs(v1[i] - factor * v0[i]));
  CHECK(max_dev > 1e-6f);
}

TEST_SUITE_END();
