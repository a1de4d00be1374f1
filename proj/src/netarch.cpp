#include "selfonn/netarch.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace selfonn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "unknown";
}

Activation parse_activation(const std::string& name) {
  if (name == "none") return Activation::none;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

void NetworkSpec::validate() const {
  if (depth < 2) throw std::invalid_argument("network depth must be >= 2");
  if (q < 1) throw std::invalid_argument("Taylor order q must be >= 1");
  if (hidden_ch < 1 || in_ch < 1 || out_ch < 1) {
    throw std::invalid_argument("channel counts must be >= 1");
  }
  if (in_ch != out_ch) throw std::invalid_argument("image-to-image network needs in_ch == out_ch");
  same_padding(k);
}

namespace {

constexpr double kOutputInitGain = 0.1;

NetworkSpec make_preset(int depth, int q) {
  NetworkSpec s;
  s.depth = depth;
  s.hidden_ch = 64;
  s.q = q;
  s.activation = q == 1 ? Activation::relu : Activation::tanh;
  return s;
}

const std::map<std::string, NetworkSpec>& presets() {
  static const std::map<std::string, NetworkSpec> table = {
      {"dncnn", make_preset(17, 1)},      {"selfonn17", make_preset(17, 3)},
      {"selfonn8", make_preset(8, 3)},    {"selfonn4_3", make_preset(4, 3)},
      {"selfonn4_5", make_preset(4, 5)},
  };
  return table;
}

}  // namespace

NetworkSpec preset(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) throw std::invalid_argument("unknown preset '" + name + "'");
  return it->second;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"dncnn", "selfonn17", "selfonn8", "selfonn4_3",
                                                 "selfonn4_5"};
  return names;
}

std::string describe(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "depth=" << spec.depth << " hidden=" << spec.hidden_ch << " k=" << spec.k
     << " q=" << spec.q << " bn=" << (spec.use_bn ? "on" : "off")
     << " act=" << to_string(spec.activation) << " residual=" << (spec.residual ? "on" : "off")
     << " in=" << spec.in_ch << " out=" << spec.out_ch;
  return os.str();
}

BatchNorm::BatchNorm(int channels)
    : gamma(channels, 1.0), beta(channels, 0.0), running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

Tensor4 BatchNorm::forward_eval(const Tensor4& x) const {
  if (x.c() != channels()) throw std::invalid_argument("batch norm channel mismatch");
  Tensor4 out(x.dims());
  for (int c = 0; c < x.c(); ++c) {
    const double inv = 1.0 / std::sqrt(running_var[c] + eps);
    for (int n = 0; n < x.n(); ++n) {
      const auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t p = 0; p < src.size(); ++p) {
        dst[p] = gamma[c] * ((src[p] - running_mean[c]) * inv) + beta[c];
      }
    }
  }
  return out;
}

Tensor4 BatchNorm::forward_train(const Tensor4& x, Cache* cache) {
  if (x.c() != channels()) throw std::invalid_argument("batch norm channel mismatch");
  Tensor4 out(x.dims());
  Tensor4 normalized(x.dims());
  std::vector<double> inv_std(channels());
  const double count = static_cast<double>(x.n()) * x.h() * x.w();
  for (int c = 0; c < x.c(); ++c) {
    double sum = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      for (double v : x.plane(n, c)) sum += v;
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      for (double v : x.plane(n, c)) sq += (v - mean) * (v - mean);
    }
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[c] = inv;
    for (int n = 0; n < x.n(); ++n) {
      const auto src = x.plane(n, c);
      auto xn = normalized.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t p = 0; p < src.size(); ++p) {
        xn[p] = (src[p] - mean) * inv;
        dst[p] = gamma[c] * xn[p] + beta[c];
      }
    }
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var;
  }
  if (cache) *cache = Cache{std::move(normalized), std::move(inv_std)};
  return out;
}

BatchNorm::Grads BatchNorm::backward(const Cache& cache, const Tensor4& d_out) const {
  const Tensor4& xn = cache.normalized;
  if (d_out.dims() != xn.dims()) throw std::invalid_argument("batch norm gradient shape mismatch");
  Grads g{Tensor4(xn.dims()), std::vector<double>(channels(), 0.0),
          std::vector<double>(channels(), 0.0)};
  const double count = static_cast<double>(xn.n()) * xn.h() * xn.w();
  for (int c = 0; c < xn.c(); ++c) {
    double sum_dy = 0.0;
    double sum_dy_xn = 0.0;
    for (int n = 0; n < xn.n(); ++n) {
      const auto dy = d_out.plane(n, c);
      const auto xh = xn.plane(n, c);
      for (std::size_t p = 0; p < dy.size(); ++p) {
        sum_dy += dy[p];
        sum_dy_xn += dy[p] * xh[p];
      }
    }
    g.d_beta[c] = sum_dy;
    g.d_gamma[c] = sum_dy_xn;
    const double scale = gamma[c] * cache.inv_std[c] / count;
    for (int n = 0; n < xn.n(); ++n) {
      const auto dy = d_out.plane(n, c);
      const auto xh = xn.plane(n, c);
      auto dx = g.d_input.plane(n, c);
      for (std::size_t p = 0; p < dy.size(); ++p) {
        dx[p] = scale * (count * dy[p] - sum_dy - xh[p] * sum_dy_xn);
      }
    }
  }
  return g;
}

Tensor4 apply_activation(Activation a, const Tensor4& x) {
  if (a == Activation::none) return x;
  Tensor4 out = x;
  for (double& v : out.data()) v = a == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
  return out;
}

Network::Network(NetworkSpec spec) : spec_(spec) {
  spec_.validate();
  stages_.reserve(spec_.depth);
  for (int l = 0; l < spec_.depth; ++l) {
    const bool first = l == 0;
    const bool last = l == spec_.depth - 1;
    const int in = first ? spec_.in_ch : spec_.hidden_ch;
    const int out = last ? spec_.out_ch : spec_.hidden_ch;
    Stage stage{OpLayer(in, out, spec_.k, spec_.q), std::nullopt,
                last ? Activation::none : spec_.activation};
    if (spec_.use_bn && !first && !last) stage.bn.emplace(out);
    stages_.push_back(std::move(stage));
  }
}

Network build(const NetworkSpec& spec) { return Network(spec); }

void Network::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& s : stages_) {
    s.op.init_uniform(rng);
    if (s.bn) *s.bn = BatchNorm(s.bn->channels());
  }
  // A small output layer starts the network close to its skip path.
  for (double& w : stages_.back().op.weights()) w *= kOutputInitGain;
}

Tensor4 Network::forward(const Tensor4& x) const {
  if (x.c() != spec_.in_ch) {
    throw std::invalid_argument("network expects " + std::to_string(spec_.in_ch) +
                                " input channels, got " + std::to_string(x.c()));
  }
  Tensor4 h = x;
  for (double& v : h.data()) v -= 0.5;
  for (const auto& s : stages_) {
    h = s.op.forward(h);
    if (s.bn) h = s.bn->forward_eval(h);
    h = apply_activation(s.act, h);
  }
  Tensor4 out = x;
  auto o = out.data();
  const auto b = h.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = spec_.residual ? o[i] - b[i] : b[i] + 0.5;
  return out;
}

Tensor4 Network::forward(const Tensor4& x, Mode mode) {
  if (mode == Mode::eval) return std::as_const(*this).forward(x);
  return run(x, mode, nullptr);
}

Tensor4 Network::forward_train(const Tensor4& x, Trace& trace) {
  return run(x, Mode::train, &trace);
}

Tensor4 Network::run(const Tensor4& x, Mode mode, Trace* trace) {
  if (x.c() != spec_.in_ch) {
    throw std::invalid_argument("network expects " + std::to_string(spec_.in_ch) +
                                " input channels, got " + std::to_string(x.c()));
  }
  if (trace) {
    *trace = Trace{};
    trace->input = x;
  }
  Tensor4 h = x;
  for (double& v : h.data()) v -= 0.5;
  for (auto& s : stages_) {
    if (trace) trace->stage_inputs.push_back(h);
    h = s.op.forward(h);
    std::optional<BatchNorm::Cache> cache;
    if (s.bn) {
      if (mode == Mode::train) {
        cache.emplace();
        h = s.bn->forward_train(h, &*cache);
      } else {
        h = s.bn->forward_eval(h);
      }
    }
    h = apply_activation(s.act, h);
    if (trace) {
      trace->stage_outputs.push_back(h);
      trace->bn_caches.push_back(std::move(cache));
    }
  }
  Tensor4 out = x;
  auto o = out.data();
  const auto b = h.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = spec_.residual ? o[i] - b[i] : b[i] + 0.5;
  return out;
}

NetworkGrads Network::backward(const Trace& trace, const Tensor4& d_out) const {
  if (trace.stage_inputs.size() != stages_.size()) {
    throw std::logic_error("backward needs a trace from forward_train");
  }
  if (d_out.dims() != trace.input.dims()) throw std::invalid_argument("d_out shape mismatch");

  Tensor4 d = d_out;
  if (spec_.residual) {
    for (double& v : d.data()) v = -v;
  }
  struct StageGrads {
    std::vector<double> d_weights;
    std::optional<std::vector<double>> d_bias;
    std::vector<double> d_gamma;
    std::vector<double> d_beta;
  };
  std::vector<StageGrads> per_stage(stages_.size());
  for (std::size_t s = stages_.size(); s-- > 0;) {
    const Stage& stage = stages_[s];
    const auto out = trace.stage_outputs[s].data();
    auto dv = d.data();
    if (stage.act == Activation::relu) {
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = out[i] > 0.0 ? dv[i] : 0.0;
    } else if (stage.act == Activation::tanh) {
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= 1.0 - out[i] * out[i];
    }
    if (stage.bn) {
      if (!trace.bn_caches[s]) throw std::logic_error("missing batch norm cache");
      auto g = stage.bn->backward(*trace.bn_caches[s], d);
      d = std::move(g.d_input);
      per_stage[s].d_gamma = std::move(g.d_gamma);
      per_stage[s].d_beta = std::move(g.d_beta);
    }
    LayerGrads lg = selfonn::backward(stage.op, trace.stage_inputs[s], d);
    per_stage[s].d_weights = std::move(lg.d_weights);
    per_stage[s].d_bias = std::move(lg.d_bias);
    d = std::move(lg.d_input);
  }

  NetworkGrads grads;
  grads.params.reserve(parameter_count());
  for (auto& g : per_stage) {
    grads.params.insert(grads.params.end(), g.d_weights.begin(), g.d_weights.end());
    if (g.d_bias) grads.params.insert(grads.params.end(), g.d_bias->begin(), g.d_bias->end());
    grads.params.insert(grads.params.end(), g.d_gamma.begin(), g.d_gamma.end());
    grads.params.insert(grads.params.end(), g.d_beta.begin(), g.d_beta.end());
  }
  if (spec_.residual) {
    auto dv = d.data();
    const auto dy = d_out.data();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += dy[i];
  }
  grads.d_input = std::move(d);
  return grads;
}

std::vector<std::span<double>> Network::parameters() {
  std::vector<std::span<double>> out;
  for (auto& s : stages_) {
    out.emplace_back(s.op.weights());
    if (s.op.has_bias()) out.emplace_back(s.op.bias());
    if (s.bn) {
      out.emplace_back(s.bn->gamma);
      out.emplace_back(s.bn->beta);
    }
  }
  return out;
}

std::vector<std::span<const double>> Network::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& s : stages_) {
    out.emplace_back(s.op.weights());
    if (s.op.has_bias()) out.emplace_back(s.op.bias());
    if (s.bn) {
      out.emplace_back(s.bn->gamma);
      out.emplace_back(s.bn->beta);
    }
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.size();
  return total;
}

std::size_t param_count(const NetworkSpec& spec) {
  spec.validate();
  std::size_t total = 0;
  const std::size_t kk = static_cast<std::size_t>(spec.k) * spec.k;
  for (int l = 0; l < spec.depth; ++l) {
    const bool first = l == 0;
    const bool last = l == spec.depth - 1;
    const std::size_t in = first ? spec.in_ch : spec.hidden_ch;
    const std::size_t out = last ? spec.out_ch : spec.hidden_ch;
    total += out * in * spec.q * kk;
    if (spec.use_bn && !first && !last) total += 2 * out;
  }
  return total;
}

Tensor4 forward_tiled(const Network& net, const Tensor4& x, int tile, int blend) {
  if (tile < 1 || blend < 0) throw std::invalid_argument("tile must be >= 1 and blend >= 0");
  if (x.n() != 1) throw std::invalid_argument("tiled inference takes one image at a time");
  const NetworkSpec& s = net.spec();
  const int reach = s.depth * (s.k - 1) / 2;
  const int h = x.h(), w = x.w(), c = x.c();
  Tensor4 acc(x.dims()), weight({1, 1, h, w});
  auto ramp = [blend](int d) { return d == 0 ? 1.0 : 1.0 - static_cast<double>(d) / (blend + 1); };
  for (int y0 = 0; y0 < h; y0 += tile) {
    for (int x0 = 0; x0 < w; x0 += tile) {
      const int y1 = std::min(h, y0 + tile), x1 = std::min(w, x0 + tile);
      const int ay0 = std::max(0, y0 - blend), ay1 = std::min(h, y1 + blend);
      const int ax0 = std::max(0, x0 - blend), ax1 = std::min(w, x1 + blend);
      const int iy0 = std::max(0, ay0 - reach), iy1 = std::min(h, ay1 + reach);
      const int ix0 = std::max(0, ax0 - reach), ix1 = std::min(w, ax1 + reach);
      Tensor4 crop({1, c, iy1 - iy0, ix1 - ix0});
      for (int ch = 0; ch < c; ++ch)
        for (int y = iy0; y < iy1; ++y)
          for (int xx = ix0; xx < ix1; ++xx) crop.at(0, ch, y - iy0, xx - ix0) = x.at(0, ch, y, xx);
      const Tensor4 out = net.forward(crop);
      for (int y = ay0; y < ay1; ++y) {
        const double wy = ramp(std::max({0, y0 - y, y - (y1 - 1)}));
        for (int xx = ax0; xx < ax1; ++xx) {
          const double wgt = wy * ramp(std::max({0, x0 - xx, xx - (x1 - 1)}));
          weight.at(0, 0, y, xx) += wgt;
          for (int ch = 0; ch < c; ++ch) acc.at(0, ch, y, xx) += wgt * out.at(0, ch, y - iy0, xx - ix0);
        }
      }
    }
  }
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) acc.at(0, ch, y, xx) /= weight.at(0, 0, y, xx);
  return acc;
}

}  // namespace selfonn
