#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "bunet/network.hpp"
#include "bunet/pgm.hpp"
#include "bunet/runconfig.hpp"

using namespace bunet;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "bunet_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Runs the built binary with the given arguments, capturing both streams.
CliResult cli(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "bunet_cli_tests";
  fs::create_directories(dir);
  const fs::path out = dir / ("stdout_" + std::to_string(counter) + ".txt");
  const fs::path err = dir / ("stderr_" + std::to_string(counter) + ".txt");
  ++counter;

  const std::string cmd = std::string(BUNET_CLI_PATH) + " " + args + " > " + out.string() +
                          " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

const char* kConfig = R"({
  "model": {"base_channels": 8},
  "synth": {"count": 6, "size": 32, "seed": 21},
  "train": {"epochs": 2, "batch_size": 4, "eval_every": 50, "seed": 2},
  "split_ratio": 0.667
})";

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("usage errors exit 2, help exits 0") {
  CHECK(cli("--help").code == 0);
  CHECK(cli("synth --help").code == 0);
  CHECK(cli("").code == 2);                      // a subcommand is required
  CHECK(cli("frobnicate").code == 2);            // unknown subcommand
  CHECK(cli("synth").code == 2);                 // missing required --out
  CHECK(cli("predict --checkpoint x").code == 2);  // missing --image/--out
  CHECK(cli("eval --checkpoint x --data y --split bogus").code == 2);
}

TEST_CASE("synth writes a deterministic dataset with manifests") {
  const fs::path dir = scratch("synth");
  write_text(dir / "cfg.json", kConfig);
  const std::string cfg = " --config " + (dir / "cfg.json").string();

  CliResult r1 = cli("synth" + cfg + " --out " + (dir / "a").string());
  CHECK(r1.code == 0);
  CHECK(contains(r1.err, "6 samples"));
  for (const char* f : {"images/s00000.pgm", "images/s00005.pgm", "masks/s00000.pgm",
                        "train.txt", "val.txt"})
    CHECK(fs::exists(dir / "a" / f));

  // Second run: byte-identical artifacts.
  CHECK(cli("synth" + cfg + " --out " + (dir / "b").string()).code == 0);
  for (const char* f : {"images/s00003.pgm", "masks/s00003.pgm", "train.txt", "val.txt"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

  // A --seed override changes the pixels.
  CHECK(cli("synth" + cfg + " --seed 22 --out " + (dir / "c").string()).code == 0);
  CHECK(slurp(dir / "a" / "images/s00000.pgm") != slurp(dir / "c" / "images/s00000.pgm"));

  // --count override.
  CHECK(cli("synth" + cfg + " --count 2 --out " + (dir / "d").string()).code == 0);
  CHECK(fs::exists(dir / "d" / "images/s00001.pgm"));
  CHECK_FALSE(fs::exists(dir / "d" / "images/s00002.pgm"));
}

TEST_CASE("flops report matches the in-process counter") {
  const fs::path dir = scratch("flops");
  write_text(dir / "cfg.json", kConfig);

  CliResult r = cli("flops --config " + (dir / "cfg.json").string() + " --size 32");
  REQUIRE(r.code == 0);
  long long params = -1;
  unsigned long long flops = 0;
  REQUIRE(std::sscanf(r.out.c_str(), "params %lld flops %llu", &params, &flops) == 2);

  RunConfig cfg = parse_run_config(kConfig);
  ModelCost want = count_params_flops(cfg.model, 32, 32);
  CHECK(params == want.params);
  CHECK(flops == want.forward_flops);

  // Probing below the depth the encoder can support is a clean runtime error:
  // the bottleneck would see a single element per channel in training mode.
  CHECK(cli("flops --config " + (dir / "cfg.json").string() + " --size 16").code == 1);
}

TEST_CASE("train, eval and predict round trip") {
  const fs::path dir = scratch("roundtrip");
  write_text(dir / "cfg.json", kConfig);
  const std::string cfg = " --config " + (dir / "cfg.json").string();
  const fs::path data = dir / "data";
  const fs::path run = dir / "run";

  REQUIRE(cli("synth" + cfg + " --out " + data.string()).code == 0);

  CliResult tr = cli("train" + cfg + " --data " + data.string() + " --out " + run.string());
  REQUIRE(tr.code == 0);
  CHECK(contains(tr.err, "2 iterations"));  // 1 epoch, 4 train samples, batch 4... plus remainder
  REQUIRE(fs::exists(run / "last.ckpt"));
  REQUIRE(fs::exists(run / "best.ckpt"));
  REQUIRE(fs::exists(run / "history.csv"));

  // eval: machine-readable JSON on stdout, per-sample plus aggregate.
  CliResult ev = cli("eval --checkpoint " + (run / "last.ckpt").string() + " --data " +
                     data.string() + " --split val");
  REQUIRE(ev.code == 0);
  nlohmann::json j = nlohmann::json::parse(ev.out);
  REQUIRE(j.contains("aggregate"));
  REQUIRE(j.contains("samples"));
  CHECK(j["samples"].size() == 2);  // split_ratio 0.667 of 6
  const double dice = j["aggregate"]["dice"].get<double>();
  CHECK(dice >= 0.0);
  CHECK(dice <= 1.0);
  for (const auto& s : j["samples"]) {
    CHECK(s.contains("id"));
    CHECK(s.contains("hd95"));  // number or null, but always present
  }

  // eval over everything does not need manifests.
  CliResult ev_all = cli("eval --checkpoint " + (run / "last.ckpt").string() + " --data " +
                         data.string());
  REQUIRE(ev_all.code == 0);
  CHECK(nlohmann::json::parse(ev_all.out)["samples"].size() == 6);

  // predict: thresholded mask plus the four stage boundary maps.
  const fs::path mask = dir / "pred.pgm";
  const std::string bprefix = (dir / "bd").string();
  CliResult pr = cli("predict --checkpoint " + (run / "last.ckpt").string() + " --image " +
                     (data / "images" / "s00000.pgm").string() + " --out " + mask.string() +
                     " --boundary-out " + bprefix);
  REQUIRE(pr.code == 0);
  Tensor<float> m = read_pgm(mask.string());
  REQUIRE(m.shape() == Shape{1, 1, 32, 32});
  for (std::int64_t i = 0; i < m.numel(); ++i)
    CHECK((m.data()[i] == 0.0f || m.data()[i] == 1.0f));

  const int stage_sizes[4] = {4, 8, 16, 32};  // deepest stage first
  for (int k = 0; k < 4; ++k) {
    Tensor<float> b = read_pgm(bprefix + "_s" + std::to_string(k + 1) + ".pgm");
    CHECK(b.shape() == Shape{1, 1, stage_sizes[k], stage_sizes[k]});
  }
}

TEST_CASE("runtime failures exit 1 with an error line on stderr") {
  const fs::path dir = scratch("runtime_errors");
  write_text(dir / "cfg.json", kConfig);

  CliResult r = cli("eval --checkpoint " + (dir / "nope.ckpt").string() + " --data " +
                    dir.string());
  CHECK(r.code == 1);
  CHECK(contains(r.err, "error:"));

  // Unknown config keys are runtime errors, not usage errors.
  write_text(dir / "bad.json", R"({"model": {"bass_channels": 8}})");
  CliResult r2 = cli("synth --config " + (dir / "bad.json").string() + " --out " +
                     (dir / "out").string());
  CHECK(r2.code == 1);
  CHECK(contains(r2.err, "bass_channels"));

  // Split eval without manifests.
  const fs::path data = dir / "data";
  REQUIRE(cli("synth --config " + (dir / "cfg.json").string() + " --out " + data.string())
              .code == 0);
  fs::remove(data / "train.txt");
  fs::remove(data / "val.txt");
  // Train first so we have a checkpoint, then ask for a split that needs the
  // manifests we just deleted.
  REQUIRE(cli("train --config " + (dir / "cfg.json").string() + " --data " + data.string() +
              " --out " + (dir / "run").string())
              .code == 0);
  CliResult r3 = cli("eval --checkpoint " + (dir / "run" / "last.ckpt").string() + " --data " +
                     data.string() + " --split val");
  CHECK(r3.code == 1);
  CHECK(contains(r3.err, "manifests"));
}

TEST_CASE("gradient check subcommand passes") {
  CliResult r = cli("gradcheck");
  CHECK(r.code == 0);
  CHECK(contains(r.out, "all ok"));
  CHECK_FALSE(contains(r.out, "FAIL"));
}

TEST_SUITE_END();
