#pragma once

#include <optional>
#include <span>
#include <vector>

#include "selfonn/rng.hpp"
#include "selfonn/tensor.hpp"

namespace selfonn {

/// A layer of generative neurons.
///
/// Output channel o sees
///
///   y_o(m, n) = b_o + sum_i sum_q sum_{r,t} w(o, i, q, r, t) * x_i(m + r - pad, n + t - pad)^q
///
/// for q = 1..Q, which is a learnable order-Q polynomial nodal operator pooled
/// by summation. With Q = 1 the layer is an ordinary convolution layer.
///
/// Weights are stored as (out_ch, in_ch, Q, K, K), row-major. Within each
/// (o, i) block the Q slices are ascending and each slice is the K x K kernel in
/// row-major order, which is also the flattening the GEMM path multiplies by.
class OpLayer {
 public:
  /// Zero-initialised layer with "same" padding.
  OpLayer(int in_ch, int out_ch, int k, int q, bool with_bias = false);

  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }
  int kernel() const { return k_; }
  int order() const { return q_; }
  int pad() const { return pad_; }
  bool has_bias() const { return bias_.has_value(); }

  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  /// Only valid when has_bias().
  std::vector<double>& bias() { return *bias_; }
  const std::vector<double>& bias() const { return *bias_; }

  /// Weight for polynomial order `q` (1-based).
  double& weight(int o, int i, int q, int r, int t) { return weights_[index(o, i, q, r, t)]; }
  double weight(int o, int i, int q, int r, int t) const { return weights_[index(o, i, q, r, t)]; }

  std::size_t weight_count() const;

  /// Fan-in-scaled uniform init: U(-s, s) with s = sqrt(6 / (in_ch * K * K)) for
  /// the q = 1 slice and s / q^2 for every higher slice. Bias is zeroed.
  void init_uniform(Rng& rng);

  /// Throws std::logic_error if the weight block disagrees with the shape.
  void validate() const;

  /// Default evaluation path (GEMM).
  Tensor4 forward(const Tensor4& x) const;

 private:
  std::size_t index(int o, int i, int q, int r, int t) const {
    return ((((static_cast<std::size_t>(o) * in_ch_ + i) * q_ + (q - 1)) * k_ + r) * k_) + t;
  }

  int in_ch_;
  int out_ch_;
  int k_;
  int q_;
  int pad_;
  std::vector<double> weights_;
  std::optional<std::vector<double>> bias_;
};

struct LayerGrads {
  std::vector<double> d_weights;
  std::optional<std::vector<double>> d_bias;
  Tensor4 d_input;
};

/// Direct loop evaluation of the layer formula. Reference path.
Tensor4 forward_naive(const OpLayer& layer, const Tensor4& x);

/// Sum over q of 2D correlations of w^(q) with x^q, then summed over input
/// channels, plus bias.
Tensor4 forward_qconv(const OpLayer& layer, const Tensor4& x);

/// One GEMM per image: power-augmented columns of all input channels times the
/// (in_ch * Q * K * K) x out_ch weight matrix.
Tensor4 forward_gemm(const OpLayer& layer, const Tensor4& x);

/// Gradients of sum(d_out * forward(x)) with respect to weights, bias and x.
LayerGrads backward(const OpLayer& layer, const Tensor4& x, const Tensor4& d_out);

/// Single-channel "valid-or-padded" 2D correlation with zero padding.
std::vector<double> correlate2d(PlaneView x, std::span<const double> kernel, int k, int pad);

/// Plain convolution layer evaluated with per-channel im2col and a matrix product.
/// kernel is (out_ch, in_ch, k, k); bias may be empty.
Tensor4 conv2d_im2col(const Tensor4& x, std::span<const double> kernel, int out_ch, int k, int pad,
                      std::span<const double> bias = {});

/// Plain convolution layer as explicit loops.
Tensor4 conv2d_direct(const Tensor4& x, std::span<const double> kernel, int out_ch, int k, int pad,
                      std::span<const double> bias = {});

}  // namespace selfonn
