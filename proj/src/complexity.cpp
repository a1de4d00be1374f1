#include "selfonn/complexity.hpp"

#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace selfonn {

std::uint64_t triangular(std::uint64_t n) { return n * (n + 1) / 2; }

LayerFlops flops_conv_layer(std::uint64_t h, std::uint64_t w, std::uint64_t k,
                            std::uint64_t n_in, std::uint64_t n_out) {
  const std::uint64_t pixels = h * w;
  return {pixels * k * k * n_in * n_out, pixels * (k * k - 1) * n_in * n_out, 0};
}

LayerFlops flops_selfonn_layer(std::uint64_t h, std::uint64_t w, std::uint64_t k,
                               std::uint64_t n_in, std::uint64_t n_out, std::uint64_t q) {
  if (q < 1) throw std::invalid_argument("Taylor order q must be >= 1");
  const LayerFlops conv = flops_conv_layer(h, w, k, n_in, n_out);
  return {conv.mults * q, conv.adds * q, h * w * n_in * triangular(q - 1)};
}

LayerFlops FlopsReport::total() const {
  LayerFlops t;
  for (const auto& l : layers) {
    t.mults += l.mults;
    t.adds += l.adds;
    t.exp_flops += l.exp_flops;
  }
  return t;
}

FlopsReport flops_network(const NetworkSpec& spec, int h, int w) {
  spec.validate();
  if (h < 1 || w < 1) throw std::invalid_argument("resolution must be positive");
  FlopsReport report;
  report.h = h;
  report.w = w;
  report.channels = spec.in_ch;
  for (int l = 0; l < spec.depth; ++l) {
    const int in = l == 0 ? spec.in_ch : spec.hidden_ch;
    const int out = l == spec.depth - 1 ? spec.out_ch : spec.hidden_ch;
    report.layers.push_back(flops_selfonn_layer(h, w, spec.k, in, out, spec.q));
  }
  if (spec.residual) report.residual_adds = static_cast<std::uint64_t>(h) * w * spec.out_ch;
  return report;
}

void write_flops_csv(std::ostream& os, const FlopsReport& report) {
  os << "layer,mults,adds,exp_flops,total\n";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& f = report.layers[l];
    os << l + 1 << ',' << f.mults << ',' << f.adds << ',' << f.exp_flops << ',' << f.total()
       << '\n';
  }
}

namespace {

// Welford accumulator.
struct RunningVariance {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double v) {
    ++n;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }
  double population() const { return n == 0 ? 0.0 : m2 / static_cast<double>(n); }
};

}  // namespace

StrengthReport synaptic_strength(const std::vector<OpLayer>& layers) {
  StrengthReport report;
  report.layers = static_cast<int>(layers.size());
  for (const auto& layer : layers) report.max_q = std::max(report.max_q, layer.order());
  std::vector<RunningVariance> pooled(static_cast<std::size_t>(report.max_q));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const OpLayer& layer = layers[l];
    layer.validate();
    for (int q = 1; q <= layer.order(); ++q) {
      RunningVariance acc;
      for (int o = 0; o < layer.out_ch(); ++o) {
        for (int i = 0; i < layer.in_ch(); ++i) {
          for (int r = 0; r < layer.kernel(); ++r) {
            for (int t = 0; t < layer.kernel(); ++t) {
              const double v = layer.weight(o, i, q, r, t);
              acc.push(v);
              pooled[q - 1].push(v);
            }
          }
        }
      }
      report.entries.push_back({static_cast<int>(l) + 1, q, acc.population(), acc.n});
    }
  }
  for (const auto& p : pooled) {
    report.pooled.push_back(p.population());
    report.pooled_count.push_back(p.n);
  }
  return report;
}

StrengthReport synaptic_strength(const Network& net) {
  std::vector<OpLayer> layers;
  for (const auto& s : net.stages()) layers.push_back(s.op);
  return synaptic_strength(layers);
}

void write_strength_csv(std::ostream& os, const StrengthReport& report) {
  os << "layer,q,variance,count\n";
  os << std::setprecision(17);
  for (const auto& e : report.entries) {
    os << e.layer << ',' << e.q << ',' << e.variance << ',' << e.count << '\n';
  }
}

}  // namespace selfonn

namespace selfonn {

const std::vector<ReferenceFigures>& reference_figures() {
  static const std::vector<ReferenceFigures> figures = {
      {"dncnn", 558, 68.88},      {"selfonn17", 1671, 207.04}, {"selfonn8", 675, 83.60},
      {"selfonn4_3", 232, 28.74}, {"selfonn4_5", 386, 47.96},
  };
  return figures;
}

}  // namespace selfonn
