// selfonn: train, run and inspect operational denoising networks.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "selfonn/checkpoint.hpp"
#include "selfonn/complexity.hpp"
#include "selfonn/data.hpp"
#include "selfonn/metrics.hpp"
#include "selfonn/netarch.hpp"
#include "selfonn/parallel.hpp"
#include "selfonn/selftest.hpp"
#include "selfonn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace selfonn;

namespace {

enum Exit : int {
  kOk = 0,
  kFailed = 1,
  kDataError = 2,
  kCheckpointError = 3,
  kDiverged = 4,
};

struct Resolution {
  int h = 256;
  int w = 256;
};

Resolution parse_resolution(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw CLI::ValidationError("--res", "expected HxW, got '" + text + "'");
  try {
    std::size_t used_h = 0, used_w = 0;
    Resolution r{std::stoi(text.substr(0, x), &used_h), std::stoi(text.substr(x + 1), &used_w)};
    if (used_h != x || used_w != text.size() - x - 1 || r.h < 1 || r.w < 1) throw std::invalid_argument(text);
    return r;
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("--res", "expected HxW with positive integers, got '" + text + "'");
  }
}

// Architecture flags shared by train, flops and params. Explicit flags override the preset.
struct SpecFlags {
  std::string preset;
  int depth = 0;
  int width = 0;
  int q = 0;
  int kernel = 0;
  int channels = 0;
  std::string activation;
  bool no_bn = false;
  bool no_residual = false;
  CLI::Option* preset_opt = nullptr;
  std::vector<CLI::Option*> explicit_opts;

  void attach(CLI::App* sub, const std::string& default_preset) {
    preset = default_preset;
    preset_opt = sub->add_option("--preset", preset, "Architecture preset")
        ->check(CLI::IsMember(preset_names()))
        ->capture_default_str();
    explicit_opts = {
        sub->add_option("--depth", depth, "Number of operational layers")->check(CLI::PositiveNumber),
        sub->add_option("--width", width, "Hidden channels")->check(CLI::PositiveNumber),
        sub->add_option("--q", q, "Maclaurin order Q")->check(CLI::PositiveNumber),
        sub->add_option("--kernel", kernel, "Kernel size (odd)")->check(CLI::PositiveNumber),
        sub->add_option("--channels", channels, "Image channels")->check(CLI::PositiveNumber),
        sub->add_option("--activation", activation, "none, relu or tanh")
            ->check(CLI::IsMember({"none", "relu", "tanh"})),
        sub->add_flag("--no-bn", no_bn, "Disable batch normalization"),
        sub->add_flag("--no-residual", no_residual, "Predict the clean image directly"),
    };
  }

  bool customized() const {
    if (preset_opt->count() > 0) return true;
    return std::any_of(explicit_opts.begin(), explicit_opts.end(), [](CLI::Option* o) { return o->count() > 0; });
  }

  NetworkSpec resolve() const {
    NetworkSpec s = selfonn::preset(preset);
    if (depth) s.depth = depth;
    if (width) s.hidden_ch = width;
    if (kernel) s.k = kernel;
    if (q) {
      s.q = q;
      if (activation.empty()) s.activation = q == 1 ? Activation::relu : Activation::tanh;
    }
    if (channels) s.in_ch = s.out_ch = channels;
    if (!activation.empty()) s.activation = parse_activation(activation);
    if (no_bn) s.use_bn = false;
    if (no_residual) s.residual = false;
    s.validate();
    return s;
  }
};

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

std::string grouped(std::uint64_t v) {
  std::string digits = std::to_string(v);
  for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) digits.insert(static_cast<std::size_t>(i), ",");
  return digits;
}

json spec_json(const NetworkSpec& s) {
  return {{"depth", s.depth},     {"hidden_ch", s.hidden_ch}, {"k", s.k},
          {"q", s.q},             {"use_bn", s.use_bn},       {"activation", to_string(s.activation)},
          {"residual", s.residual}, {"in_ch", s.in_ch},       {"out_ch", s.out_ch}};
}

// ---- params / flops --------------------------------------------------------

int cmd_params(const SpecFlags& flags, bool all, bool as_json) {
  if (all) {
    json rows = json::array();
    if (!as_json) std::cout << std::left << std::setw(12) << "preset" << std::right << std::setw(12) << "params"
                            << std::setw(10) << "k" << std::setw(12) << "reference" << std::setw(10) << "dev %" << '\n';
    for (const auto& ref : reference_figures()) {
      const std::size_t n = param_count(preset(ref.preset));
      const double k = static_cast<double>(n) / 1000.0;
      const double dev = 100.0 * (k - ref.params_k) / ref.params_k;
      rows.push_back({{"preset", ref.preset}, {"params", n}, {"params_k", std::lround(k)},
                      {"reference_k", ref.params_k}, {"deviation_pct", dev}});
      if (!as_json) {
        std::cout << std::left << std::setw(12) << ref.preset << std::right << std::setw(12) << n << std::setw(10)
                  << std::lround(k) << std::setw(12) << ref.params_k << std::setw(10) << std::fixed
                  << std::setprecision(2) << dev << '\n';
      }
    }
    if (as_json) print_json(rows);
    return kOk;
  }
  const NetworkSpec spec = flags.resolve();
  const std::size_t n = param_count(spec);
  if (as_json) {
    print_json({{"spec", spec_json(spec)}, {"params", n}, {"params_k", std::lround(n / 1000.0)}});
  } else {
    std::cout << describe(spec) << '\n'
              << "parameters: " << grouped(n) << " (" << std::lround(n / 1000.0) << "k)\n";
  }
  return kOk;
}

double bench_forward(const NetworkSpec& spec, Resolution res, int reps, std::uint64_t seed) {
  Network net(spec);
  net.initialize(seed);
  const Tensor4 x = generate_clean_image(res.h, res.w, spec.in_ch, seed);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) (void)net.forward(x);
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

int cmd_flops(const SpecFlags& flags, const std::string& res_text, bool all, bool as_json,
              const std::string& csv, int bench, std::uint64_t seed) {
  const Resolution res = parse_resolution(res_text);
  if (all) {
    json rows = json::array();
    if (!as_json) {
      std::cout << "resolution " << res.h << 'x' << res.w << "x3\n"
                << std::left << std::setw(12) << "preset" << std::right << std::setw(10) << "params k"
                << std::setw(10) << "ref k" << std::setw(9) << "dev %" << std::setw(12) << "GFLOPs"
                << std::setw(10) << "ref G" << std::setw(9) << "dev %" << '\n';
    }
    for (const auto& ref : reference_figures()) {
      const NetworkSpec spec = preset(ref.preset);
      const double k = param_count(spec) / 1000.0;
      const double g = static_cast<double>(flops_network(spec, res.h, res.w).total().total()) / 1e9;
      const double pdev = 100.0 * (k - ref.params_k) / ref.params_k;
      const double gdev = 100.0 * (g - ref.gflops_256) / ref.gflops_256;
      rows.push_back({{"preset", ref.preset}, {"params_k", k}, {"reference_params_k", ref.params_k},
                      {"params_deviation_pct", pdev}, {"gflops", g}, {"reference_gflops", ref.gflops_256},
                      {"gflops_deviation_pct", gdev}});
      if (!as_json) {
        std::cout << std::left << std::setw(12) << ref.preset << std::right << std::fixed << std::setprecision(1)
                  << std::setw(10) << k << std::setw(10) << ref.params_k << std::setprecision(2) << std::setw(9)
                  << pdev << std::setw(12) << g << std::setw(10) << ref.gflops_256 << std::setw(9) << gdev
                  << '\n';
      }
    }
    if (res.h != 256 || res.w != 256) {
      std::cerr << "note: reference FLOPs are for 256x256 inputs\n";
    }
    if (as_json) print_json(rows);
    return kOk;
  }

  const NetworkSpec spec = flags.resolve();
  const FlopsReport rep = flops_network(spec, res.h, res.w);
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw std::runtime_error("cannot write " + csv);
    write_flops_csv(out, rep);
  }
  const LayerFlops t = rep.total();
  std::optional<double> seconds;
  if (bench > 0) seconds = bench_forward(spec, res, bench, seed);
  if (as_json) {
    json layers = json::array();
    for (std::size_t i = 0; i < rep.layers.size(); ++i) {
      const auto& l = rep.layers[i];
      layers.push_back({{"layer", i + 1}, {"mults", l.mults}, {"adds", l.adds}, {"exp", l.exp_flops},
                        {"total", l.total()}});
    }
    json j = {{"spec", spec_json(spec)}, {"h", res.h}, {"w", res.w}, {"layers", layers},
              {"residual_adds", rep.residual_adds}, {"total", t.total()}, {"gflops", t.total() / 1e9}};
    if (seconds) j["forward_seconds"] = *seconds;
    print_json(j);
    return kOk;
  }
  std::cout << describe(spec) << " at " << res.h << 'x' << res.w << '\n'
            << "multiplications: " << grouped(t.mults) << '\n'
            << "additions:       " << grouped(t.adds) << '\n'
            << "exponentiation:  " << grouped(t.exp_flops) << '\n'
            << "total:           " << grouped(t.total()) << " (" << std::fixed << std::setprecision(2)
            << t.total() / 1e9 << " G)\n";
  if (seconds) std::cout << "forward: " << std::setprecision(4) << *seconds << " s/image (this machine)\n";
  return kOk;
}

// ---- synth -----------------------------------------------------------------

struct SynthFlags {
  std::string out = "synth";
  std::string from;
  int count = 20;
  std::string size = "128x128";
  int channels = 1;
  std::string noise = "poisson_gaussian";
  double sigma = 0.05;
  double alpha = 0.05;
};

int cmd_synth(const SynthFlags& f, std::uint64_t seed, bool as_json) {
  NoiseModel model;
  model.kind = f.noise == "gaussian" ? NoiseModel::Kind::gaussian : NoiseModel::Kind::poisson_gaussian;
  model.sigma = f.sigma;
  model.alpha = f.alpha;
  fs::create_directories(f.out);

  std::vector<std::pair<std::string, Tensor4>> sources;
  if (!f.from.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(f.from)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ImageError(ImageError::Kind::io, "no PGM/PPM images in " + f.from);
    for (const auto& p : files) sources.emplace_back(p.stem().string(), load_image(p));
  } else {
    const Resolution r = parse_resolution(f.size);
    for (int i = 0; i < f.count; ++i) {
      std::ostringstream id;
      id << "img" << std::setw(4) << std::setfill('0') << i;
      sources.emplace_back(id.str(), generate_clean_image(r.h, r.w, f.channels, derive_seed(seed, 2 * i)));
    }
  }

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& [id, clean] = sources[i];
    model.seed = derive_seed(seed, 2 * i + 1);
    const ImagePair pair = synthesize_pair(clean, model, id);
    const std::string ext = clean.c() == 1 ? ".pgm" : ".ppm";
    const fs::path cp = fs::path(f.out) / (id + "_clean" + ext);
    const fs::path np = fs::path(f.out) / (id + "_noisy" + ext);
    save_image(pair.clean, cp);
    save_image(pair.noisy, np);
    entries.push_back({id, cp, np});
  }
  write_manifest(f.out, entries);
  if (as_json) {
    print_json({{"out", f.out}, {"images", entries.size()}, {"noise", f.noise}, {"sigma", f.sigma}, {"alpha", f.alpha}});
  } else {
    std::cout << "wrote " << entries.size() << " pairs and " << kManifestName << " to " << f.out << '\n';
  }
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  std::string data;
  std::string out = "model.ckpt";
  std::string log = "train_log.csv";
  TrainConfig cfg;
  std::string optimizer = "adam";
  bool f32 = false;
  bool no_decay = false;
  bool quiet = false;
};

int cmd_train(const SpecFlags& flags, TrainFlags t, std::uint64_t seed, bool as_json) {
  std::vector<ImagePair> pairs;
  try {
    pairs = load_pairs(t.data);
    if (pairs.empty()) throw std::runtime_error("manifest in " + t.data + " lists no images");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }

  NetworkSpec spec = flags.resolve();
  const std::size_t preset_params = param_count(spec);
  const int data_ch = pairs.front().clean.c();
  if (spec.in_ch != data_ch) {
    std::cerr << "note: using " << data_ch << " image channels from the data (spec had " << spec.in_ch << ")\n";
    spec.in_ch = spec.out_ch = data_ch;
  }

  t.cfg.seed = seed;
  t.cfg.optimizer = parse_optimizer(t.optimizer);
  t.cfg.checkpoint_type = t.f32 ? PayloadType::f32 : PayloadType::f64;
  t.cfg.lr_decay = !t.no_decay;
  t.cfg.validate();

  PatchDataset data;
  try {
    data = extract_patches(pairs, t.cfg.patch_size, t.cfg.patches_per_image, derive_seed(seed, 7));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }

  Network net(spec);
  net.initialize(seed);
  if (!as_json) {
    std::cout << describe(spec) << '\n';
    if (param_count(spec) != preset_params) {
      std::cout << "parameters: " << grouped(net.parameter_count()) << " (" << grouped(preset_params)
                << " at the preset's channel count)\n";
    } else {
      std::cout << "parameters: " << grouped(net.parameter_count()) << '\n';
    }
    std::cout << "patches: " << data.size() << " (" << pairs.size() << " images x " << t.cfg.patches_per_image
              << ")\n";
  }

  TrainResult result;
  try {
    result = train(net, data, t.cfg, [&](const EpochLog& e) {
      if (!t.quiet && !as_json) {
        std::cout << "epoch " << e.epoch << "  loss " << std::scientific << std::setprecision(4) << e.train_loss
                  << "  val " << std::fixed << std::setprecision(3) << e.val_psnr << " dB / " << std::setprecision(4)
                  << e.val_ssim << std::endl;
      }
    });
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  }

  save_checkpoint(result.best, t.out);
  {
    std::ofstream log(t.log);
    if (!log) throw std::runtime_error("cannot write " + t.log);
    write_log_csv(log, result.log);
  }
  const EpochLog& best = result.log.at(result.best.meta.epoch - 1);
  if (as_json) {
    print_json({{"spec", spec_json(spec)}, {"params", net.parameter_count()}, {"patches", data.size()},
                {"best_epoch", best.epoch}, {"best_val_psnr", best.val_psnr}, {"best_val_ssim", best.val_ssim},
                {"checkpoint", t.out}, {"log", t.log}});
  } else {
    std::cout << "best epoch " << best.epoch << ": val PSNR " << std::fixed << std::setprecision(3) << best.val_psnr
              << " dB, SSIM " << std::setprecision(4) << best.val_ssim << '\n'
              << "checkpoint: " << t.out << "\nlog: " << t.log << '\n';
  }
  return kOk;
}

// ---- denoise ---------------------------------------------------------------

struct DenoiseFlags {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::vector<std::string> references;
  std::string out_dir = "denoised";
  int tile = 0;
  int blend = 4;
  double peak = 1.0;
};

int cmd_denoise(const SpecFlags& flags, const DenoiseFlags& f, bool as_json) {
  Network net(NetworkSpec{});
  try {
    const Checkpoint c = load_checkpoint(f.checkpoint);
    // Explicit architecture flags must agree with the checkpoint.
    net = Network(flags.customized() ? flags.resolve() : c.spec);
    load_weights(net, c);
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckpointError;
  }
  if (!f.references.empty() && f.references.size() != f.inputs.size()) {
    throw CLI::ValidationError("--reference", "needs one reference image per input");
  }
  fs::create_directories(f.out_dir);

  json rows = json::array();
  MetricReport noisy_report, out_report;
  noisy_report.peak = out_report.peak = f.peak;
  for (std::size_t i = 0; i < f.inputs.size(); ++i) {
    Tensor4 x;
    try {
      x = load_image(f.inputs[i]);
    } catch (const ImageError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kDataError;
    }
    if (x.c() != net.spec().in_ch) {
      std::cerr << "error: " << f.inputs[i] << " has " << x.c() << " channels, checkpoint expects "
                << net.spec().in_ch << '\n';
      return kCheckpointError;
    }
    Tensor4 y = f.tile > 0 ? forward_tiled(net, x, f.tile, f.blend) : net.forward(x);
    for (double& v : y.data()) v = std::clamp(v, 0.0, 1.0);
    const fs::path dst = fs::path(f.out_dir) / fs::path(f.inputs[i]).filename();
    save_image(y, dst);
    json row = {{"input", f.inputs[i]}, {"output", dst.string()}};
    if (!f.references.empty()) {
      Tensor4 ref = load_image(f.references[i]);
      if (ref.dims() != x.dims()) throw std::invalid_argument("reference " + f.references[i] + " differs in size");
      // 8-bit reports score on the 0..255 scale.
      auto scaled = [&](Tensor4 t) {
        if (f.peak != 1.0) for (double& v : t.data()) v *= f.peak;
        return t;
      };
      const double pn = psnr(scaled(x), scaled(ref), f.peak), po = psnr(scaled(y), scaled(ref), f.peak);
      const bool big = x.h() >= kSsimWindow && x.w() >= kSsimWindow;
      const double sn = big ? ssim(scaled(x), scaled(ref), f.peak) : std::nan("");
      const double so = big ? ssim(scaled(y), scaled(ref), f.peak) : std::nan("");
      noisy_report.add(pn, sn);
      out_report.add(po, so);
      row["noisy_psnr"] = pn;
      row["psnr"] = po;
      row["noisy_ssim"] = sn;
      row["ssim"] = so;
      if (!as_json) {
        std::cout << f.inputs[i] << ": PSNR " << std::fixed << std::setprecision(3) << pn << " -> " << po
                  << " dB, SSIM " << std::setprecision(4) << sn << " -> " << so << '\n';
      }
    } else if (!as_json) {
      std::cout << f.inputs[i] << " -> " << dst.string() << '\n';
    }
    rows.push_back(row);
  }
  if (as_json) {
    json j = {{"images", rows}, {"peak", f.peak}};
    if (!f.references.empty()) {
      j["mean_noisy_psnr"] = noisy_report.mean_psnr();
      j["mean_psnr"] = out_report.mean_psnr();
      j["mean_noisy_ssim"] = noisy_report.mean_ssim();
      j["mean_ssim"] = out_report.mean_ssim();
    }
    print_json(j);
  } else if (!f.references.empty()) {
    std::cout << "mean: PSNR " << std::fixed << std::setprecision(3) << noisy_report.mean_psnr() << " -> "
              << out_report.mean_psnr() << " dB, SSIM " << std::setprecision(4) << noisy_report.mean_ssim()
              << " -> " << out_report.mean_ssim() << " (peak " << f.peak << ")\n";
  }
  return kOk;
}

// ---- analyze ---------------------------------------------------------------

int cmd_analyze(const std::string& ckpt, const std::string& out, bool as_json) {
  Network net(NetworkSpec{});
  try {
    net = restore(load_checkpoint(ckpt));
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckpointError;
  }
  const StrengthReport rep = synaptic_strength(net);
  if (rep.max_q == 1) std::cerr << "notice: q=1 network, the report has a single power column\n";
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    write_strength_csv(f, rep);
  }
  if (as_json) {
    json entries = json::array();
    for (const auto& e : rep.entries) {
      entries.push_back({{"layer", e.layer}, {"q", e.q}, {"variance", e.variance}, {"count", e.count}});
    }
    print_json({{"layers", rep.layers}, {"max_q", rep.max_q}, {"entries", entries}, {"pooled", rep.pooled}});
  } else if (out.empty()) {
    write_strength_csv(std::cout, rep);
  } else {
    std::cout << "wrote " << rep.entries.size() << " rows to " << out << "\npooled variance by q:";
    for (double v : rep.pooled) std::cout << ' ' << v;
    std::cout << '\n';
  }
  return kOk;
}

// ---- selftest --------------------------------------------------------------

int cmd_selftest(bool quick, const std::string& fault, std::uint64_t seed, bool as_json) {
  const auto results = run_selftest({quick, seed, fault});
  bool all = true;
  json rows = json::array();
  for (const auto& r : results) {
    all = all && r.passed;
    rows.push_back({{"suite", r.name}, {"passed", r.passed}, {"max_deviation", r.max_deviation}, {"detail", r.detail}});
    if (!as_json) {
      std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << r.name << std::right
                << " max deviation " << std::scientific << std::setprecision(3) << r.max_deviation << "  "
                << r.detail << '\n';
    }
  }
  if (as_json) print_json({{"passed", all}, {"suites", rows}});
  if (!all) {
    for (const auto& r : results) {
      if (!r.passed) std::cerr << "selftest failed: " << r.name << " (max deviation " << r.max_deviation << ")\n";
    }
  }
  return all ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-organized operational network denoiser"};
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);

  std::uint64_t seed = 1;
  std::size_t threads = 0;
  bool as_json = false;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", threads, "Worker cap (0 = all cores)")->capture_default_str();
  app.add_flag("--json", as_json, "Machine-readable output");
  app.set_config("--config", "", "key=value file; command-line flags take precedence");

  SpecFlags train_spec, flops_spec, params_spec, denoise_spec;

  auto* train_cmd = app.add_subcommand("train", "Train on a manifest dataset");
  TrainFlags tf;
  train_spec.attach(train_cmd, "selfonn4_3");
  train_cmd->add_option("--data", tf.data, "Dataset directory with manifest.csv")->required();
  train_cmd->add_option("--out", tf.out, "Checkpoint path")->capture_default_str();
  train_cmd->add_option("--log", tf.log, "CSV log path")->capture_default_str();
  train_cmd->add_option("--epochs", tf.cfg.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tf.cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tf.cfg.lr)->capture_default_str();
  train_cmd->add_option("--optimizer", tf.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  train_cmd->add_option("--patch", tf.cfg.patch_size)->capture_default_str();
  train_cmd->add_option("--patches-per-image", tf.cfg.patches_per_image)->capture_default_str();
  train_cmd->add_option("--val-fraction", tf.cfg.val_fraction)->capture_default_str();
  train_cmd->add_option("--clip", tf.cfg.clip_norm, "Gradient norm cap (<= 0 disables)")->capture_default_str();
  train_cmd->add_flag("--no-decay", tf.no_decay, "Keep the learning rate constant");
  train_cmd->add_flag("--f32", tf.f32, "Store the checkpoint payload as 32-bit floats");
  train_cmd->add_flag("--quiet", tf.quiet, "No per-epoch lines");

  auto* denoise_cmd = app.add_subcommand("denoise", "Denoise images with a checkpoint");
  DenoiseFlags df;
  denoise_spec.attach(denoise_cmd, "selfonn4_3");
  denoise_cmd->add_option("--checkpoint", df.checkpoint)->required()->check(CLI::ExistingFile);
  denoise_cmd->add_option("inputs", df.inputs, "PGM/PPM images")->required()->check(CLI::ExistingFile);
  denoise_cmd->add_option("--reference", df.references, "Clean images, one per input")->check(CLI::ExistingFile);
  denoise_cmd->add_option("--out-dir", df.out_dir)->capture_default_str();
  denoise_cmd->add_option("--tile", df.tile, "Tile size for tiled inference (0 = whole image)")
      ->check(CLI::NonNegativeNumber);
  denoise_cmd->add_option("--blend", df.blend, "Overlap band blended between tiles")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  denoise_cmd->add_option("--peak", df.peak, "Metric peak: 1 or 255")->check(CLI::IsMember({1.0, 255.0}))
      ->capture_default_str();

  auto* flops_cmd = app.add_subcommand("flops", "Count FLOPs");
  flops_spec.attach(flops_cmd, "dncnn");
  std::string res = "256x256", flops_csv;
  bool flops_all = false;
  int bench = 0;
  flops_cmd->add_option("--res", res, "Input resolution HxW")->capture_default_str();
  flops_cmd->add_flag("--all-presets", flops_all, "Side-by-side table with the published figures");
  flops_cmd->add_option("--csv", flops_csv, "Write the per-layer breakdown");
  flops_cmd->add_option("--bench", bench, "Time this many forward passes")->check(CLI::NonNegativeNumber);

  auto* params_cmd = app.add_subcommand("params", "Count parameters");
  params_spec.attach(params_cmd, "dncnn");
  bool params_all = false;
  params_cmd->add_flag("--all-presets", params_all, "Table of all presets with the published figures");

  auto* analyze_cmd = app.add_subcommand("analyze", "Per-layer, per-power weight variances");
  std::string analyze_ckpt, analyze_out;
  analyze_cmd->add_option("--checkpoint", analyze_ckpt)->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--out", analyze_out, "CSV path (default stdout)");

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the built-in verification suites");
  bool quick = false;
  std::string fault;
  selftest_cmd->add_flag("--quick", quick, "Smaller instance counts");
  selftest_cmd->add_option("--inject-fault", fault, "Deliberately break a component")
      ->check(CLI::IsMember({"weight-shape"}));

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic clean/noisy dataset");
  SynthFlags sf;
  synth_cmd->add_option("--out", sf.out)->capture_default_str();
  synth_cmd->add_option("--from", sf.from, "Add noise to these clean images instead")->check(CLI::ExistingDirectory);
  synth_cmd->add_option("--count", sf.count)->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--size", sf.size, "HxW")->capture_default_str();
  synth_cmd->add_option("--channels", sf.channels)->check(CLI::IsMember({1, 3}))->capture_default_str();
  synth_cmd->add_option("--noise", sf.noise)->check(CLI::IsMember({"gaussian", "poisson_gaussian"}))
      ->capture_default_str();
  synth_cmd->add_option("--sigma", sf.sigma)->check(CLI::NonNegativeNumber)->capture_default_str();
  synth_cmd->add_option("--alpha", sf.alpha)->check(CLI::NonNegativeNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::cerr << "# resolved configuration\n" << app.config_to_str(true, false);
  set_max_threads(threads);

  try {
    if (*train_cmd) return cmd_train(train_spec, tf, seed, as_json);
    if (*denoise_cmd) return cmd_denoise(denoise_spec, df, as_json);
    if (*flops_cmd) return cmd_flops(flops_spec, res, flops_all, as_json, flops_csv, bench, seed);
    if (*params_cmd) return cmd_params(params_spec, params_all, as_json);
    if (*analyze_cmd) return cmd_analyze(analyze_ckpt, analyze_out, as_json);
    if (*selftest_cmd) return cmd_selftest(quick, fault, seed, as_json);
    if (*synth_cmd) return cmd_synth(sf, seed, as_json);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckpointError;
  } catch (const ImageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kFailed;
}
