#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "selfonn/checkpoint.hpp"
#include "selfonn/data.hpp"
#include "selfonn/metrics.hpp"

using namespace selfonn;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "selfonn_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args) {
  const fs::path err = workdir() / "stderr.txt";
  const std::string cmd = std::string(SELFONN_CLI) + " " + args + " 2>" + err.string();
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream e(err);
  r.err.assign(std::istreambuf_iterator<char>(e), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path& synth_dir() {
  static const fs::path dir = [] {
    const fs::path d = workdir() / "synth";
    const Run r = run("--seed 3 synth --out " + d.string() + " --count 6 --size 32x32 --sigma 0.1 --alpha 0.02");
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("params and flops reproduce the published tables") {
  Run r = run("params --preset dncnn");
  CHECK(r.code == 0);
  CHECK(r.out.find("558,336") != std::string::npos);
  r = run("params --preset selfonn17");
  CHECK(r.out.find("1671k") != std::string::npos);
  r = run("--json flops --preset dncnn --res 256x256");
  REQUIRE(r.code == 0);
  CHECK(std::abs(nlohmann::json::parse(r.out)["gflops"].get<double>() - 68.88) / 68.88 <= 0.01);
  r = run("--json flops --preset selfonn4_3 --res 256x256");
  CHECK(std::abs(nlohmann::json::parse(r.out)["gflops"].get<double>() - 28.74) / 28.74 <= 0.01);
  r = run("--json flops --all-presets");
  const auto rows = nlohmann::json::parse(r.out);
  REQUIRE(rows.size() == 5);
  for (const auto& row : rows) {
    CHECK(std::abs(row["gflops_deviation_pct"].get<double>()) <= 1.0);
    CHECK(std::abs(row["params_deviation_pct"].get<double>()) <= 0.1);
  }
  CHECK(run("flops --all-presets").out.find("selfonn4_5") != std::string::npos);
}

TEST_CASE("flags are validated and the configuration echoed") {
  Run r = run("params --preset dncnn --bogus 3");
  CHECK(r.code != 0);
  r = run("flops --res 12by12");
  CHECK(r.code != 0);
  r = run("params --preset dncnn");
  CHECK(r.err.find("resolved configuration") != std::string::npos);
  CHECK(r.err.find("seed") != std::string::npos);

  const fs::path cfg = workdir() / "run.ini";
  std::ofstream(cfg) << "seed=9\n[params]\npreset=\"selfonn8\"\n";
  r = run("--config " + cfg.string() + " params");
  CHECK(r.code == 0);
  CHECK(r.out.find("675k") != std::string::npos);
  std::ofstream(cfg) << "nonsense=1\n";
  CHECK(run("--config " + cfg.string() + " params").code != 0);
}

TEST_CASE("missing manifest exits 2") {
  const fs::path empty = workdir() / "empty";
  fs::create_directories(empty);
  const Run r = run("train --data " + empty.string() + " --epochs 1");
  CHECK(r.code == 2);
  CHECK(r.err.find("manifest not found") != std::string::npos);
}

TEST_CASE("synth writes a manifest dataset") {
  const auto pairs = load_pairs(synth_dir());
  REQUIRE(pairs.size() == 6);
  CHECK(pairs[0].clean.dims() == Dims4{1, 1, 32, 32});
  CHECK_FALSE(pairs[0].clean == pairs[0].noisy);
}

TEST_CASE("training is deterministic and denoising improves PSNR") {
  const std::string common = "--seed 7 train --preset selfonn4_3 --width 8 --data " + synth_dir().string() +
                             " --epochs 5 --patch 16 --patches-per-image 24 --batch 8 --quiet";
  const fs::path a = workdir() / "a", b = workdir() / "b";
  fs::create_directories(a);
  fs::create_directories(b);
  Run r = run(common + " --out " + (a / "m.ckpt").string() + " --log " + (a / "log.csv").string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("best epoch") != std::string::npos);
  r = run(common + " --out " + (b / "m.ckpt").string() + " --log " + (b / "log.csv").string());
  REQUIRE(r.code == 0);
  CHECK(slurp(a / "log.csv") == slurp(b / "log.csv"));
  CHECK(slurp(a / "m.ckpt") == slurp(b / "m.ckpt"));

  const auto entries = read_manifest(synth_dir());
  std::string inputs, refs;
  for (const auto& e : entries) {
    inputs += " " + e.noisy.string();
    refs += " " + e.clean.string();
  }
  r = run("--json denoise --checkpoint " + (a / "m.ckpt").string() + " --out-dir " + (a / "out").string() + inputs +
          " --reference" + refs);
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["mean_psnr"].get<double>() > j["mean_noisy_psnr"].get<double>());

  r = run("--json denoise --checkpoint " + (a / "m.ckpt").string() + " --peak 255 --out-dir " +
          (a / "out255").string() + inputs + " --reference" + refs);
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["mean_psnr"].get<double>() == doctest::Approx(j["mean_psnr"].get<double>()));

  // Tiling changes nothing visible after 8-bit quantization.
  run("denoise --checkpoint " + (a / "m.ckpt").string() + " --tile 8 --out-dir " + (a / "tiled").string() + inputs);
  for (const auto& e : entries) {
    const Tensor4 whole = load_image(a / "out" / e.noisy.filename());
    const Tensor4 tiled = load_image(a / "tiled" / e.noisy.filename());
    CHECK(whole == tiled);
  }

  r = run("denoise --preset dncnn --checkpoint " + (a / "m.ckpt").string() + inputs);
  CHECK(r.code == 3);
  r = run("--json analyze --checkpoint " + (a / "m.ckpt").string());
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["entries"].size() == 4 * 3);
}

TEST_CASE("zero-weight residual checkpoint returns its input") {
  NetworkSpec spec = preset("dncnn");
  spec.depth = 3;
  spec.hidden_ch = 4;
  spec.in_ch = spec.out_ch = 1;
  const fs::path ckpt = workdir() / "zero.ckpt";
  save_checkpoint(snapshot(Network(spec), {}), ckpt);
  const auto entries = read_manifest(synth_dir());
  const fs::path out = workdir() / "zero_out";
  const Run r = run("denoise --checkpoint " + ckpt.string() + " --out-dir " + out.string() + " " +
                    entries[0].noisy.string());
  REQUIRE(r.code == 0);
  CHECK(slurp(out / entries[0].noisy.filename()) == slurp(entries[0].noisy));

  const fs::path csv = workdir() / "zero.csv";
  const Run a = run("analyze --checkpoint " + ckpt.string() + " --out " + csv.string());
  CHECK(a.code == 0);
  CHECK(a.err.find("q=1") != std::string::npos);
  const std::string text = slurp(csv);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3);
  CHECK(text.find(",1,0,") != std::string::npos);
}

TEST_CASE("corrupt checkpoints exit 3") {
  const fs::path bad = workdir() / "bad.ckpt";
  std::ofstream(bad) << "garbage";
  const auto entries = read_manifest(synth_dir());
  CHECK(run("denoise --checkpoint " + bad.string() + " " + entries[0].noisy.string()).code == 3);
  CHECK(run("analyze --checkpoint " + bad.string()).code == 3);
}

TEST_CASE("selftest verdicts") {
  Run r = run("selftest --quick");
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("PASS forward-equivalence") != std::string::npos);
  r = run("selftest --quick --inject-fault weight-shape");
  CHECK(r.code == 1);
  CHECK(r.err.find("forward-equivalence") != std::string::npos);
}
