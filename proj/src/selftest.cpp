#include "selfonn/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "selfonn/checkpoint.hpp"
#include "selfonn/complexity.hpp"
#include "selfonn/data.hpp"
#include "selfonn/metrics.hpp"
#include "selfonn/netarch.hpp"
#include "selfonn/oplayer.hpp"
#include "selfonn/rng.hpp"
#include "selfonn/trainer.hpp"

namespace selfonn {

namespace {

Tensor4 random_tensor(Dims4 d, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4 t(d);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// |analytic - numeric| relative to max(1e-7, 1e-5 * scale); <= 1 passes.
double fd_violation(double analytic, double numeric) {
  const double tol = std::max(1e-7, 1e-5 * std::max(std::abs(analytic), std::abs(numeric)));
  return std::abs(analytic - numeric) / tol;
}

SuiteResult run_guarded(const std::string& name, const std::function<SuiteResult()>& body) {
  try {
    SuiteResult r = body();
    r.name = name;
    return r;
  } catch (const std::exception& e) {
    return {name, false, std::numeric_limits<double>::infinity(), std::string("error: ") + e.what()};
  }
}

SuiteResult adjoint_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 11));
  const int cases = opts.quick ? 10 : 50;
  double worst = 0.0;
  for (int c = 0; c < cases; ++c) {
    const int h = 1 + static_cast<int>(rng.below(8));
    const int w = 1 + static_cast<int>(rng.below(8));
    const int k = 1 + 2 * static_cast<int>(rng.below(2));
    const int pad = (k - 1) / 2;
    const Tensor4 x = random_tensor({1, 1, h, w}, rng);
    const ColMatrix cols = im2col(x, k, pad);
    ColMatrix g(cols.rows(), cols.cols(), k);
    for (double& v : g.data()) v = rng.uniform(-1.0, 1.0);
    const double lhs = dot(cols.data(), g.data());
    const double rhs = dot(x.data(), col2im_accumulate(g, h, w, k, pad).data());
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return {"", worst <= 1e-10, worst, std::to_string(cases) + " instances"};
}

SuiteResult equivalence_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 12));
  const int cases = opts.quick ? 40 : 200;
  const int orders[] = {1, 2, 3, 5};
  double worst = 0.0;
  for (int c = 0; c < cases; ++c) {
    const int in = 1 + static_cast<int>(rng.below(4));
    const int out = 1 + static_cast<int>(rng.below(4));
    const int k = rng.below(2) == 0 ? 1 : 3;
    const int q = orders[rng.below(4)];
    OpLayer layer(in, out, k, q, rng.below(2) == 0);
    for (double& v : layer.weights()) v = rng.uniform(-1.0, 1.0);
    if (layer.has_bias()) {
      for (double& v : layer.bias()) v = rng.uniform(-1.0, 1.0);
    }
    if (opts.inject_fault == "weight-shape") layer.weights().push_back(0.0);
    const int h = 1 + static_cast<int>(rng.below(8));
    const int w = 1 + static_cast<int>(rng.below(8));
    const Tensor4 x = random_tensor({1 + static_cast<int>(rng.below(2)), in, h, w}, rng);
    const Tensor4 a = forward_naive(layer, x);
    const Tensor4 b = forward_qconv(layer, x);
    const Tensor4 g = forward_gemm(layer, x);
    worst = std::max({worst, max_abs_diff(a, b), max_abs_diff(a, g), max_abs_diff(b, g)});
  }
  return {"", worst <= 1e-10, worst, std::to_string(cases) + " random layers"};
}

SuiteResult q1_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 13));
  double cross = 0.0;
  bool bit_identical = true;
  for (int c = 0; c < (opts.quick ? 10 : 40); ++c) {
    const int in = 1 + static_cast<int>(rng.below(4));
    const int out = 1 + static_cast<int>(rng.below(4));
    const int k = rng.below(2) == 0 ? 1 : 3;
    OpLayer layer(in, out, k, 1);
    for (double& v : layer.weights()) v = rng.uniform(-1.0, 1.0);
    const Tensor4 x = random_tensor({1, in, 2 + static_cast<int>(rng.below(7)), 2 + static_cast<int>(rng.below(7))}, rng);
    const Tensor4 direct = conv2d_direct(x, layer.weights(), out, k, layer.pad());
    const Tensor4 im2col_conv = conv2d_im2col(x, layer.weights(), out, k, layer.pad());
    bit_identical = bit_identical && forward_naive(layer, x) == direct &&
                    forward_gemm(layer, x) == im2col_conv;
    cross = std::max(cross, max_abs_diff(direct, forward_gemm(layer, x)));
  }
  return {"", bit_identical && cross <= 1e-12, cross,
          bit_identical ? "shared paths bit-identical" : "shared paths differ"};
}

// Largest finite-difference violation for a layer (weights, bias, input).
double layer_gradient_violation(Rng& rng, int q) {
  OpLayer layer(2, 2, 3, q, true);
  for (double& v : layer.weights()) v = rng.uniform(-0.5, 0.5);
  for (double& v : layer.bias()) v = rng.uniform(-0.5, 0.5);
  Tensor4 x = random_tensor({2, 2, 4, 5}, rng);
  const Tensor4 proj = random_tensor({2, 2, 4, 5}, rng);
  const LayerGrads g = backward(layer, x, proj);
  auto loss = [&](const OpLayer& l, const Tensor4& in) { return dot(forward_naive(l, in).data(), proj.data()); };
  constexpr double h = 1e-5;
  double worst = 0.0;
  auto probe = [&](double& slot, double analytic) {
    const double saved = slot;
    slot = saved + h;
    const double up = loss(layer, x);
    slot = saved - h;
    const double down = loss(layer, x);
    slot = saved;
    worst = std::max(worst, fd_violation(analytic, (up - down) / (2 * h)));
  };
  for (std::size_t i = 0; i < layer.weights().size(); ++i) probe(layer.weights()[i], g.d_weights[i]);
  for (std::size_t i = 0; i < layer.bias().size(); ++i) probe(layer.bias()[i], (*g.d_bias)[i]);
  for (std::size_t i = 0; i < x.size(); ++i) probe(x.data()[i], g.d_input.data()[i]);
  return worst;
}

double network_gradient_violation(Rng& rng, bool quick) {
  NetworkSpec spec;
  spec.depth = 4;
  spec.hidden_ch = quick ? 4 : 8;
  spec.q = 3;
  spec.activation = Activation::tanh;
  spec.in_ch = spec.out_ch = 1;
  Network net(spec);
  net.initialize(rng.next_u64());
  for (auto& s : net.stages()) {
    if (s.bn) {
      for (double& v : s.bn->gamma) v = rng.uniform(0.5, 1.5);
      for (double& v : s.bn->beta) v = rng.uniform(-0.2, 0.2);
    }
  }
  Tensor4 x = random_tensor({2, 1, 6, 6}, rng, 0.0, 1.0);
  const Tensor4 proj = random_tensor(x.dims(), rng);
  Network::Trace trace;
  Network work = net;
  work.forward_train(x, trace);
  const NetworkGrads g = work.backward(trace, proj);
  auto loss = [&](const Tensor4& in) {
    Network copy = net;
    return dot(copy.forward(in, Mode::train).data(), proj.data());
  };
  constexpr double h = 1e-5;
  double worst = 0.0;
  std::size_t flat = 0;
  const auto params = net.parameters();
  for (const auto& p : params) {
    for (double& slot : p) {
      const double saved = slot;
      slot = saved + h;
      const double up = loss(x);
      slot = saved - h;
      const double down = loss(x);
      slot = saved;
      worst = std::max(worst, fd_violation(g.params[flat++], (up - down) / (2 * h)));
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = loss(x);
    x.data()[i] = saved - h;
    const double down = loss(x);
    x.data()[i] = saved;
    worst = std::max(worst, fd_violation(g.d_input.data()[i], (up - down) / (2 * h)));
  }
  return worst;
}

SuiteResult gradient_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 14));
  double worst = 0.0;
  for (int q : {1, 2, 3, 5}) worst = std::max(worst, layer_gradient_violation(rng, q));
  worst = std::max(worst, network_gradient_violation(rng, opts.quick));
  return {"", worst <= 1.0, worst, "max |analytic - numeric| / max(1e-7, 1e-5 |g|)"};
}

SuiteResult param_suite(const SelftestOptions&) {
  double worst = 0.0;
  bool ok = true;
  std::ostringstream detail;
  for (const auto& ref : reference_figures()) {
    const NetworkSpec spec = preset(ref.preset);
    const std::size_t count = param_count(spec);
    // Closed form: first and last layers, hidden layers, BN affine pairs.
    const std::size_t kk = 9, c = 64, img = 3;
    const std::size_t closed = spec.q * (2 * img * c * kk + (spec.depth - 2) * c * c * kk) +
                               (spec.depth - 2) * 2 * c;
    const long rounded = std::lround(static_cast<double>(count) / 1000.0);
    ok = ok && count == closed && rounded == ref.params_k && Network(spec).parameter_count() == count;
    worst = std::max(worst, std::abs(static_cast<double>(rounded - ref.params_k)));
    detail << ref.preset << '=' << count << ' ';
  }
  return {"", ok, worst, detail.str()};
}

SuiteResult flops_suite(const SelftestOptions&) {
  double worst = 0.0;
  std::ostringstream detail;
  for (const auto& ref : reference_figures()) {
    const double g = static_cast<double>(flops_network(preset(ref.preset), 256, 256).total().total()) / 1e9;
    worst = std::max(worst, std::abs(g - ref.gflops_256) / ref.gflops_256);
    detail << ref.preset << '=' << g << "G ";
  }
  return {"", worst <= 0.01, worst, detail.str()};
}

SuiteResult triangular_suite(const SelftestOptions&) {
  bool ok = true;
  for (std::uint64_t q = 1; q <= 32; ++q) {
    std::uint64_t loop = 0;
    for (std::uint64_t k = 1; k <= q - 1; ++k) loop += k;
    ok = ok && triangular(q - 1) == loop;
    ok = ok && flops_selfonn_layer(7, 5, 3, 4, 2, q).exp_flops == 7 * 5 * 4 * loop;
  }
  const LayerFlops conv = flops_conv_layer(9, 11, 3, 5, 6);
  const LayerFlops one = flops_selfonn_layer(9, 11, 3, 5, 6, 1);
  ok = ok && one == conv && one.exp_flops == 0;
  return {"", ok, ok ? 0.0 : 1.0, "T(q-1) closed form vs loop, q <= 32"};
}

SuiteResult strength_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 15));
  std::vector<OpLayer> flat;
  flat.emplace_back(3, 4, 3, 3);
  for (double& v : flat[0].weights()) v = 0.25;
  const StrengthReport zero = synaptic_strength(flat);
  double worst = 0.0;
  for (const auto& e : zero.entries) worst = std::max(worst, e.variance);

  OpLayer scaled(8, 8, 3, 2);
  for (int o = 0; o < 8; ++o)
    for (int i = 0; i < 8; ++i)
      for (int r = 0; r < 3; ++r)
        for (int t = 0; t < 3; ++t) {
          const double z = rng.uniform(-1.0, 1.0);
          scaled.weight(o, i, 1, r, t) = z;
          scaled.weight(o, i, 2, r, t) = 2.0 * z;
        }
  const StrengthReport ratio = synaptic_strength(std::vector<OpLayer>{scaled});
  worst = std::max(worst, std::abs(ratio.entries[1].variance / ratio.entries[0].variance - 4.0));
  const bool shape_ok = zero.entries.size() == 3 && ratio.entries.size() == 2;
  return {"", shape_ok && worst <= 1e-12, worst, "zero-variance and 2x-scaled populations"};
}

SuiteResult checkpoint_suite(const SelftestOptions& opts) {
  NetworkSpec spec;
  spec.depth = 3;
  spec.hidden_ch = 4;
  spec.q = 2;
  spec.in_ch = spec.out_ch = 1;
  Network net(spec);
  net.initialize(opts.seed);
  Rng rng(derive_seed(opts.seed, 16));
  const Tensor4 x = random_tensor({2, 1, 7, 7}, rng, 0.0, 1.0);
  net.forward(x, Mode::train);
  const Checkpoint c = snapshot(net, {3, 31.5, opts.seed, 64});
  std::stringstream buf;
  write_checkpoint(buf, c);
  const Checkpoint back = read_checkpoint(buf);
  const bool same_forward = restore(back).forward(x) == net.forward(x);
  return {"", bitwise_equal(c, back) && same_forward, 0.0, "save -> load bitwise"};
}

SuiteResult bn_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 17));
  BatchNorm bn(3);
  for (double& v : bn.gamma) v = rng.uniform(0.5, 1.5);
  for (double& v : bn.beta) v = rng.uniform(-0.5, 0.5);
  const Tensor4 x = random_tensor({4, 3, 5, 5}, rng);
  const Tensor4 train = bn.forward_train(x);
  const double count = 4.0 * 25.0;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (int n = 0; n < 4; ++n)
      for (double v : x.plane(n, c)) mean += v;
    mean /= count;
    for (int n = 0; n < 4; ++n)
      for (double v : x.plane(n, c)) sq += (v - mean) * (v - mean);
    bn.running_mean[c] = mean;
    bn.running_var[c] = sq / count;
  }
  const double dev = max_abs_diff(train, bn.forward_eval(x));
  return {"", dev <= 1e-10, dev, "eval with frozen batch stats vs train"};
}


SuiteResult tensor_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 18));
  bool exact = true;
  // Every window copy against index arithmetic, all shapes up to 6x6.
  for (int h = 1; h <= 6; ++h)
    for (int w = 1; w <= 6; ++w)
      for (int k : {1, 3}) {
        const int pad = (k - 1) / 2;
        const Tensor4 x = random_tensor({1, 1, h, w}, rng);
        const ColMatrix cols = im2col(x, k, pad);
        exact = exact && cols.rows() == static_cast<std::size_t>(h * w);
        for (int m = 0; m < h; ++m)
          for (int n = 0; n < w; ++n)
            for (int r = 0; r < k; ++r)
              for (int t = 0; t < k; ++t) {
                const int y = m + r - pad, xx = n + t - pad;
                const double want = (y < 0 || y >= h || xx < 0 || xx >= w) ? 0.0 : x.at(0, 0, y, xx);
                exact = exact && cols(static_cast<std::size_t>(m * w + n), static_cast<std::size_t>(r * k + t)) == want;
              }
        const ColMatrix power = build_power_cols(x, k, pad, 3);
        for (int q = 1; q <= 3; ++q) {
          const ColMatrix single = im2col(hadamard_pow(x, q), k, pad);
          for (std::size_t row = 0; row < single.rows(); ++row)
            for (std::size_t c = 0; c < single.cols(); ++c)
              exact = exact && power(row, (q - 1) * single.cols() + c) == single(row, c);
        }
      }
  double worst = 0.0;
  const Tensor4 x = random_tensor({2, 2, 5, 5}, rng);
  for (int a = 1; a <= 4; ++a)
    for (int b = 1; b <= 4; ++b) {
      const Tensor4 whole = hadamard_pow(x, a + b);
      const Tensor4 pa = hadamard_pow(x, a), pb = hadamard_pow(x, b);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double prod = pa.data()[i] * pb.data()[i];
        worst = std::max(worst, std::abs(whole.data()[i] - prod) /
                                    std::max(std::abs(prod), std::numeric_limits<double>::min()));
      }
    }
  for (int c = 0; c < 10; ++c) {
    const std::size_t m = 1 + rng.below(12), kk = 1 + rng.below(12), n = 1 + rng.below(12);
    Matrix a(m, kk), b(kk, n);
    for (double& v : a.data()) v = rng.uniform(-1.0, 1.0);
    for (double& v : b.data()) v = rng.uniform(-1.0, 1.0);
    const Matrix fast = gemm(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0, mag = 0.0;
        for (std::size_t p = 0; p < kk; ++p) {
          s += a(i, p) * b(p, j);
          mag += std::abs(a(i, p) * b(p, j));
        }
        worst = std::max(worst, std::abs(fast(i, j) - s) / std::max(mag, 1e-300));
      }
  }
  return {"", exact && worst <= 1e-12, worst, exact ? "window, power-block and gemm oracles" : "window copy mismatch"};
}

SuiteResult linearity_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 19));
  double worst = 0.0;
  bool dims_ok = true;
  for (int c = 0; c < (opts.quick ? 10 : 40); ++c) {
    const int q = 1 + static_cast<int>(rng.below(4));
    const int k = 1 + 2 * static_cast<int>(rng.below(3));
    OpLayer layer(1 + static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(3)), k, q);
    for (double& v : layer.weights()) v = rng.uniform(-1.0, 1.0);
    const Tensor4 x = random_tensor({1, layer.in_ch(), 1 + static_cast<int>(rng.below(8)), 1 + static_cast<int>(rng.below(8))}, rng);
    const Tensor4 base = forward_naive(layer, x);
    dims_ok = dims_ok && base.h() == x.h() && base.w() == x.w() && base.c() == layer.out_ch();
    const double alpha = rng.uniform(-2.0, 2.0);
    OpLayer scaled = layer;
    for (double& v : scaled.weights()) v *= alpha;
    const Tensor4 joint = forward_naive(scaled, x);
    for (std::size_t i = 0; i < base.size(); ++i) {
      worst = std::max(worst, std::abs(joint.data()[i] - alpha * base.data()[i]));
    }
    // Per slice: scaling slice s by alpha changes the output by (alpha - 1) * slice_s(x).
    const int s = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(q)));
    OpLayer only = layer, slice_scaled = layer;
    for (int o = 0; o < layer.out_ch(); ++o)
      for (int i = 0; i < layer.in_ch(); ++i)
        for (int qq = 1; qq <= q; ++qq)
          for (int r = 0; r < k; ++r)
            for (int t = 0; t < k; ++t) {
              if (qq != s) only.weight(o, i, qq, r, t) = 0.0;
              else slice_scaled.weight(o, i, qq, r, t) *= alpha;
            }
    const Tensor4 part = forward_naive(only, x);
    const Tensor4 moved = forward_naive(slice_scaled, x);
    for (std::size_t i = 0; i < base.size(); ++i) {
      worst = std::max(worst, std::abs(moved.data()[i] - (base.data()[i] + (alpha - 1.0) * part.data()[i])));
    }
  }
  return {"", dims_ok && worst <= 1e-10, worst, dims_ok ? "joint and per-slice scaling" : "output dims differ"};
}

// Rebuilds the network forward pass from reference convolutions.
Tensor4 reference_conv_forward(const Network& net, const Tensor4& x) {
  Tensor4 h = x;
  for (double& v : h.data()) v -= 0.5;
  for (const auto& s : net.stages()) {
    h = conv2d_im2col(h, s.op.weights(), s.op.out_ch(), s.op.kernel(), s.op.pad());
    if (s.bn) h = s.bn->forward_eval(h);
    h = apply_activation(s.act, h);
  }
  Tensor4 out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = net.spec().residual ? out.data()[i] - h.data()[i] : h.data()[i] + 0.5;
  }
  return out;
}

SuiteResult network_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 20));
  NetworkSpec spec = preset("dncnn");
  spec.depth = 5;
  spec.hidden_ch = 6;
  Network net(spec);
  net.initialize(opts.seed);
  for (auto& s : net.stages()) {
    if (!s.bn) continue;
    for (int c = 0; c < s.bn->channels(); ++c) {
      s.bn->running_mean[c] = rng.uniform(-0.1, 0.1);
      s.bn->running_var[c] = rng.uniform(0.5, 2.0);
    }
  }
  const Tensor4 x = random_tensor({2, 3, 9, 7}, rng, 0.0, 1.0);
  const bool same_as_conv = net.forward(x) == reference_conv_forward(net, x);

  NetworkSpec res = spec;
  res.use_bn = false;
  const bool identity = Network(res).forward(x) == x;
  return {"", same_as_conv && identity, 0.0,
          std::string(same_as_conv ? "" : "q=1 network differs from convolution stack; ") +
              (identity ? "zero-weight residual is identity" : "zero-weight residual is not identity")};
}

TrainResult tiny_run(const std::vector<ImagePair>& pairs, std::uint64_t seed) {
  NetworkSpec spec;
  spec.depth = 3;
  spec.hidden_ch = 4;
  spec.q = 2;
  spec.activation = Activation::tanh;
  spec.in_ch = spec.out_ch = 1;
  Network net(spec);
  net.initialize(seed);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = seed;
  cfg.patch_size = 8;
  cfg.patches_per_image = 6;
  return train(net, extract_patches(pairs, cfg.patch_size, cfg.patches_per_image, seed), cfg);
}

// Steps Adam on one patch and returns the final training loss.
double overfit_loss(const NetworkSpec& spec, std::uint64_t seed, int steps) {
  Network net(spec);
  net.initialize(seed);
  const Tensor4 clean = generate_clean_image(8, 8, spec.in_ch, seed);
  const Tensor4 noisy = synthesize_pair(clean, {NoiseModel::Kind::gaussian, 0.1, 0.0, seed}).noisy;
  AdamState state;
  double loss = std::numeric_limits<double>::infinity();
  for (int step = 0; step < steps && loss >= 1e-5; ++step) {
    Network::Trace trace;
    const LossResult l = mse_loss(net.forward_train(noisy, trace), clean);
    loss = l.loss;
    if (loss < 1e-5) break;
    const NetworkGrads g = net.backward(trace, l.d_pred);
    std::vector<double> flat;
    const auto params = net.parameters();
    for (const auto& p : params) flat.insert(flat.end(), p.begin(), p.end());
    adam_step(flat, g.params, state, 1e-3);
    std::size_t pos = 0;
    for (const auto& p : params) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), p.size(), p.begin());
      pos += p.size();
    }
  }
  return loss;
}

SuiteResult training_suite(const SelftestOptions& opts) {
  std::vector<ImagePair> pairs;
  for (int i = 0; i < 4; ++i) {
    pairs.push_back(synthesize_pair(generate_clean_image(16, 16, 1, opts.seed + i),
                                    {NoiseModel::Kind::gaussian, 0.1, 0.0, opts.seed + 100 + i},
                                    "img" + std::to_string(i)));
  }
  const TrainResult a = tiny_run(pairs, opts.seed);
  const TrainResult b = tiny_run(pairs, opts.seed);
  bool deterministic = bitwise_equal(a.best, b.best) && a.log.size() == b.log.size();
  for (std::size_t i = 0; deterministic && i < a.log.size(); ++i) {
    deterministic = a.log[i].train_loss == b.log[i].train_loss && a.log[i].val_psnr == b.log[i].val_psnr;
  }
  bool best_ok = true;
  for (const auto& e : a.log) best_ok = best_ok && a.best.meta.best_val_psnr >= e.val_psnr;

  std::vector<std::string> presets = {"selfonn4_3"};
  if (!opts.quick) presets = preset_names();
  double worst = 0.0;
  for (const auto& name : presets) {
    NetworkSpec spec = preset(name);
    spec.in_ch = spec.out_ch = 1;
    worst = std::max(worst, overfit_loss(spec, opts.seed, 2000));
  }
  std::string detail = deterministic ? "repeatable" : "runs differ";
  detail += best_ok ? ", best checkpoint dominates log" : ", best checkpoint below a logged epoch";
  detail += ", single-patch loss " + std::to_string(worst);
  return {"", deterministic && best_ok && worst < 1e-5, worst, detail};
}

SuiteResult metrics_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 21));
  bool ok = true;
  double worst = 0.0;
  const Tensor4 a = random_tensor({3, 1, 24, 24}, rng, 0.0, 1.0);
  Tensor4 b = a;
  for (double& v : b.data()) v = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
  ok = ok && std::isinf(psnr(a, a)) && psnr(a, b) == psnr(b, a);
  worst = std::max(worst, std::abs(ssim(a, a) - 1.0));
  ok = ok && ssim(a, b) == ssim(b, a) && std::abs(ssim(a, b)) <= 1.0;

  for (double v : {1e-2, 1e-3}) {
    Tensor4 base({1, 1, 256, 256}, 0.5);
    Tensor4 noisy = base;
    for (double& x : noisy.data()) x += std::sqrt(v) * rng.normal();
    ok = ok && std::abs(psnr(base, noisy) - 10.0 * std::log10(1.0 / v)) <= 0.5;
  }
  const MetricReport r = evaluate(b, a);
  double ps = 0.0, ss = 0.0;
  for (int n = 0; n < 3; ++n) {
    ps += psnr(b.image(n), a.image(n));
    ss += ssim(b.image(n), a.image(n));
  }
  ok = ok && r.mean_psnr() == std::accumulate(r.psnr.begin(), r.psnr.end(), 0.0) / 3.0;
  worst = std::max({worst, std::abs(r.mean_psnr() - ps / 3.0), std::abs(r.mean_ssim() - ss / 3.0)});
  return {"", ok && worst <= 1e-9, worst, "identity, symmetry, bounds, noise law, means"};
}

SuiteResult variance_suite(const SelftestOptions& opts) {
  Rng rng(derive_seed(opts.seed, 22));
  OpLayer layer(5, 4, 3, 3);
  for (double& v : layer.weights()) v = 3.0 + rng.uniform(-1.0, 1.0) / (1.0 + rng.below(5));
  const StrengthReport rep = synaptic_strength(std::vector<OpLayer>{layer});
  double worst = 0.0;
  for (int q = 1; q <= 3; ++q) {
    std::vector<double> pop;
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i < 5; ++i)
        for (int r = 0; r < 3; ++r)
          for (int t = 0; t < 3; ++t) pop.push_back(layer.weight(o, i, q, r, t));
    const double mean = std::accumulate(pop.begin(), pop.end(), 0.0) / static_cast<double>(pop.size());
    double sq = 0.0;
    for (double v : pop) sq += (v - mean) * (v - mean);
    const double two_pass = sq / static_cast<double>(pop.size());
    worst = std::max(worst, std::abs(rep.entries[q - 1].variance - two_pass) / two_pass);
  }
  return {"", worst <= 1e-12, worst, "Welford vs two-pass"};
}

SuiteResult data_suite(const SelftestOptions& opts) {
  bool ok = true;
  std::vector<ImagePair> pairs;
  for (int i = 0; i < 3; ++i) {
    pairs.push_back(synthesize_pair(generate_clean_image(20, 24, 1, opts.seed + i),
                                    {NoiseModel::Kind::poisson_gaussian, 0.05, 0.05, opts.seed + 50 + i},
                                    "p" + std::to_string(i)));
  }
  const PatchDataset d = extract_patches(pairs, 8, 5, opts.seed);
  ok = ok && d.size() == 15;
  for (std::size_t p = 0; p < d.size(); ++p) {
    const auto& o = d.origin[p];
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        ok = ok && d.clean[p].at(0, 0, y, x) == pairs[o.image].clean.at(0, 0, o.y + y, o.x + x);
        ok = ok && d.noisy[p].at(0, 0, y, x) == pairs[o.image].noisy.at(0, 0, o.y + y, o.x + x);
      }
  }
  for (const auto& p : pairs)
    for (const Tensor4* t : {&p.clean, &p.noisy})
      for (double v : t->data()) ok = ok && v >= 0.0 && v <= 1.0;

  const Tensor4 flat({1, 1, 256, 256}, 0.5);
  const NoiseModel m1{NoiseModel::Kind::gaussian, 0.1, 0.0, opts.seed};
  NoiseModel m2 = m1;
  m2.seed = opts.seed + 1;
  ok = ok && sample_noise(flat, m1) == sample_noise(flat, m1);
  const Tensor4 n1 = sample_noise(flat, m1), n2 = sample_noise(flat, m2);
  double s12 = 0, s11 = 0, s22 = 0;
  for (std::size_t i = 0; i < n1.size(); ++i) {
    const double u = n1.data()[i], v = n2.data()[i];
    s12 += u * v;
    s11 += u * u;
    s22 += v * v;
  }
  const double corr = std::abs(s12) / std::sqrt(s11 * s22);
  return {"", ok && corr < 0.02, corr, ok ? "range, alignment, counts, seed independence" : "data invariant broken"};
}

}  // namespace

std::vector<SuiteResult> run_selftest(const SelftestOptions& opts) {
  std::vector<SuiteResult> results;
  results.push_back(run_guarded("tensor-core", [&] { return tensor_suite(opts); }));
  results.push_back(run_guarded("adjoint", [&] { return adjoint_suite(opts); }));
  results.push_back(run_guarded("forward-equivalence", [&] { return equivalence_suite(opts); }));
  results.push_back(run_guarded("q1-reduction", [&] { return q1_suite(opts); }));
  results.push_back(run_guarded("linearity", [&] { return linearity_suite(opts); }));
  results.push_back(run_guarded("gradient-check", [&] { return gradient_suite(opts); }));
  results.push_back(run_guarded("network", [&] { return network_suite(opts); }));
  results.push_back(run_guarded("param-table", [&] { return param_suite(opts); }));
  results.push_back(run_guarded("flops-table", [&] { return flops_suite(opts); }));
  results.push_back(run_guarded("triangular", [&] { return triangular_suite(opts); }));
  results.push_back(run_guarded("synaptic-strength", [&] { return strength_suite(opts); }));
  results.push_back(run_guarded("checkpoint", [&] { return checkpoint_suite(opts); }));
  results.push_back(run_guarded("batchnorm", [&] { return bn_suite(opts); }));
  results.push_back(run_guarded("variance", [&] { return variance_suite(opts); }));
  results.push_back(run_guarded("metrics", [&] { return metrics_suite(opts); }));
  results.push_back(run_guarded("data", [&] { return data_suite(opts); }));
  results.push_back(run_guarded("training", [&] { return training_suite(opts); }));
  return results;
}

}  // namespace selfonn
