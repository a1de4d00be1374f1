#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "selfonn/netarch.hpp"

namespace selfonn {

struct LayerFlops {
  std::uint64_t mults = 0;
  std::uint64_t adds = 0;
  std::uint64_t exp_flops = 0;

  std::uint64_t total() const { return mults + adds + exp_flops; }
  friend bool operator==(const LayerFlops&, const LayerFlops&) = default;
};

/// T(n) = n (n + 1) / 2.
std::uint64_t triangular(std::uint64_t n);

/// Convolution layer cost: H W K^2 N_in N_out multiplications and
/// H W (K^2 - 1) N_in N_out additions (that addition convention is kept as is).
LayerFlops flops_conv_layer(std::uint64_t h, std::uint64_t w, std::uint64_t k,
                            std::uint64_t n_in, std::uint64_t n_out);

/// Operational layer cost: the convolution counts scaled by q, plus
/// H W N_in T(q - 1) multiplications to form every power independently.
LayerFlops flops_selfonn_layer(std::uint64_t h, std::uint64_t w, std::uint64_t k,
                               std::uint64_t n_in, std::uint64_t n_out, std::uint64_t q);

struct FlopsReport {
  int h = 0;
  int w = 0;
  int channels = 0;
  std::vector<LayerFlops> layers;
  /// h * w * channels additions of the residual head; not part of total().
  std::uint64_t residual_adds = 0;

  LayerFlops total() const;
};

/// Layer costs of the network body; BN and activations are not counted.
FlopsReport flops_network(const NetworkSpec& spec, int h, int w);

void write_flops_csv(std::ostream& os, const FlopsReport& report);

/// Per-(layer, q) population variance of the weight slice w(:, :, q, :, :).
struct StrengthReport {
  struct Entry {
    int layer = 0;
    int q = 0;
    double variance = 0.0;
    std::size_t count = 0;
  };
  std::vector<Entry> entries;      // layer-major, q ascending
  std::vector<double> pooled;      // pooled over all layers, index q-1
  std::vector<std::size_t> pooled_count;
  int layers = 0;
  int max_q = 0;
};

StrengthReport synaptic_strength(const std::vector<OpLayer>& layers);
StrengthReport synaptic_strength(const Network& net);

/// One row per (layer, q): layer,q,variance,count.
void write_strength_csv(std::ostream& os, const StrengthReport& report);

}  // namespace selfonn

namespace selfonn {

/// Published parameter counts (thousands) and 256x256x3 FLOPs (G) for each preset.
struct ReferenceFigures {
  const char* preset;
  int params_k;
  double gflops_256;
};

const std::vector<ReferenceFigures>& reference_figures();

}  // namespace selfonn
