#include "selfonn/oplayer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "selfonn/parallel.hpp"

namespace selfonn {

namespace {

// Upper bound on doubles held by one power-column band.
constexpr std::size_t kBandBudget = std::size_t{1} << 21;

void check_input(const OpLayer& layer, const Tensor4& x) {
  layer.validate();
  if (x.c() != layer.in_ch()) {
    throw std::invalid_argument("layer expects " + std::to_string(layer.in_ch()) +
                                " input channels, got " + std::to_string(x.c()));
  }
}

int band_rows(int out_h, int out_w, std::size_t cols) {
  const std::size_t per_row = static_cast<std::size_t>(out_w) * cols;
  return static_cast<int>(std::clamp<std::size_t>(kBandBudget / std::max<std::size_t>(per_row, 1),
                                                  1, static_cast<std::size_t>(out_h)));
}

double int_pow(double v, int q) {
  double p = v;
  for (int j = 1; j < q; ++j) p *= v;
  return p;
}

}  // namespace

OpLayer::OpLayer(int in_ch, int out_ch, int k, int q, bool with_bias)
    : in_ch_(in_ch), out_ch_(out_ch), k_(k), q_(q), pad_(same_padding(k)) {
  if (in_ch < 1 || out_ch < 1) throw std::invalid_argument("channel counts must be >= 1");
  if (q < 1) throw std::invalid_argument("Taylor order q must be >= 1");
  weights_.assign(weight_count(), 0.0);
  if (with_bias) bias_.emplace(out_ch, 0.0);
}

std::size_t OpLayer::weight_count() const {
  return static_cast<std::size_t>(out_ch_) * in_ch_ * q_ * k_ * k_;
}

void OpLayer::init_uniform(Rng& rng) {
  const double scale = std::sqrt(6.0 / (static_cast<double>(in_ch_) * k_ * k_));
  for (int o = 0; o < out_ch_; ++o) {
    for (int i = 0; i < in_ch_; ++i) {
      for (int q = 1; q <= q_; ++q) {
        const double s = scale / (static_cast<double>(q) * q);
        for (int r = 0; r < k_; ++r) {
          for (int t = 0; t < k_; ++t) weight(o, i, q, r, t) = rng.uniform(-s, s);
        }
      }
    }
  }
  if (bias_) std::fill(bias_->begin(), bias_->end(), 0.0);
}

void OpLayer::validate() const {
  if (weights_.size() != weight_count()) {
    throw std::logic_error("weight block holds " + std::to_string(weights_.size()) +
                           " values, shape needs " + std::to_string(weight_count()));
  }
  if (bias_ && bias_->size() != static_cast<std::size_t>(out_ch_)) {
    throw std::logic_error("bias length does not match out_ch");
  }
}

Tensor4 OpLayer::forward(const Tensor4& x) const { return forward_gemm(*this, x); }

Tensor4 forward_naive(const OpLayer& layer, const Tensor4& x) {
  check_input(layer, x);
  const int k = layer.kernel();
  const int pad = layer.pad();
  const int out_h = output_extent(x.h(), k, pad);
  const int out_w = output_extent(x.w(), k, pad);
  Tensor4 out({x.n(), layer.out_ch(), out_h, out_w});
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < layer.out_ch(); ++o) {
      for (int m = 0; m < out_h; ++m) {
        for (int c = 0; c < out_w; ++c) {
          double acc = layer.has_bias() ? layer.bias()[o] : 0.0;
          for (int i = 0; i < layer.in_ch(); ++i) {
            for (int q = 1; q <= layer.order(); ++q) {
              for (int r = 0; r < k; ++r) {
                const int y = m + r - pad;
                if (y < 0 || y >= x.h()) continue;
                for (int t = 0; t < k; ++t) {
                  const int xx = c + t - pad;
                  if (xx < 0 || xx >= x.w()) continue;
                  acc += layer.weight(o, i, q, r, t) * int_pow(x.at(n, i, y, xx), q);
                }
              }
            }
          }
          out.at(n, o, m, c) = acc;
        }
      }
    }
  }
  return out;
}

std::vector<double> correlate2d(PlaneView x, std::span<const double> kernel, int k, int pad) {
  if (kernel.size() != static_cast<std::size_t>(k) * k) {
    throw std::invalid_argument("kernel length must be k*k");
  }
  const int out_h = output_extent(x.h, k, pad);
  const int out_w = output_extent(x.w, k, pad);
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w, 0.0);
  for (int m = 0; m < out_h; ++m) {
    for (int c = 0; c < out_w; ++c) {
      double acc = 0.0;
      for (int r = 0; r < k; ++r) {
        const int y = m + r - pad;
        if (y < 0 || y >= x.h) continue;
        for (int t = 0; t < k; ++t) {
          const int xx = c + t - pad;
          if (xx < 0 || xx >= x.w) continue;
          acc += kernel[static_cast<std::size_t>(r) * k + t] * x.at(y, xx);
        }
      }
      out[static_cast<std::size_t>(m) * out_w + c] = acc;
    }
  }
  return out;
}

Tensor4 forward_qconv(const OpLayer& layer, const Tensor4& x) {
  check_input(layer, x);
  const int k = layer.kernel();
  const int q_max = layer.order();
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  const int out_h = output_extent(x.h(), k, layer.pad());
  const int out_w = output_extent(x.w(), k, layer.pad());
  Tensor4 out({x.n(), layer.out_ch(), out_h, out_w});
  for (int n = 0; n < x.n(); ++n) {
    // powers[i][q-1] = x_i^q as a single-channel tensor
    std::vector<std::vector<Tensor4>> powers(layer.in_ch());
    for (int i = 0; i < layer.in_ch(); ++i) {
      const auto p = x.plane(n, i);
      const Tensor4 xi({1, 1, x.h(), x.w()}, std::vector<double>(p.begin(), p.end()));
      for (int q = 1; q <= q_max; ++q) powers[i].push_back(hadamard_pow(xi, q));
    }
    for (int o = 0; o < layer.out_ch(); ++o) {
      auto dst = out.plane(n, o);
      std::vector<double> sum(dst.size(), 0.0);
      for (int i = 0; i < layer.in_ch(); ++i) {
        for (int q = 1; q <= q_max; ++q) {
          const std::span<const double> kernel(&layer.weights()[((static_cast<std::size_t>(o) *
                                                                       layer.in_ch() + i) * q_max +
                                                                      (q - 1)) * kk],
                                               kk);
          const auto conv = correlate2d(single_plane(powers[i][q - 1]), kernel, k, layer.pad());
          for (std::size_t p = 0; p < sum.size(); ++p) sum[p] += conv[p];
        }
      }
      const double b = layer.has_bias() ? layer.bias()[o] : 0.0;
      for (std::size_t p = 0; p < sum.size(); ++p) dst[p] = b + sum[p];
    }
  }
  return out;
}

namespace {

// Weight block viewed as a (in_ch * Q * K * K) x out_ch matrix.
Matrix weight_columns(std::span<const double> weights, std::size_t out_ch) {
  const std::size_t depth = weights.size() / out_ch;
  Matrix wt(depth, out_ch);
  for (std::size_t o = 0; o < out_ch; ++o) {
    for (std::size_t d = 0; d < depth; ++d) wt(d, o) = weights[o * depth + d];
  }
  return wt;
}

// Shared by forward_gemm and conv2d_im2col: out(n, o) = bias + cols(n) * wt.
Tensor4 gemm_forward(const Tensor4& x, const Matrix& wt, int k, int pad, int q_max,
                     std::span<const double> bias) {
  const int out_ch = static_cast<int>(wt.cols());
  const int out_h = output_extent(x.h(), k, pad);
  const int out_w = output_extent(x.w(), k, pad);
  Tensor4 out({x.n(), out_ch, out_h, out_w});
  const int rows_per_band = band_rows(out_h, out_w, wt.rows());
  parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t img) {
    const int n = static_cast<int>(img);
    const auto powers = detail::channel_powers(x, n, q_max);
    for (int y0 = 0; y0 < out_h; y0 += rows_per_band) {
      const int y1 = std::min(out_h, y0 + rows_per_band);
      ColMatrix cols(static_cast<std::size_t>(y1 - y0) * out_w, wt.rows(), k);
      detail::fill_power_cols(powers, x.h(), x.w(), pad, y0, y1, cols);
      const Matrix y = gemm(cols, wt);
      const std::size_t base = static_cast<std::size_t>(y0) * out_w;
      for (int o = 0; o < out_ch; ++o) {
        auto dst = out.plane(n, o);
        const double b = bias.empty() ? 0.0 : bias[o];
        for (std::size_t p = 0; p < y.rows(); ++p) dst[base + p] = y(p, o) + b;
      }
    }
  });
  return out;
}

}  // namespace

Tensor4 forward_gemm(const OpLayer& layer, const Tensor4& x) {
  check_input(layer, x);
  const Matrix wt = weight_columns(layer.weights(), layer.out_ch());
  std::span<const double> bias;
  if (layer.has_bias()) bias = layer.bias();
  return gemm_forward(x, wt, layer.kernel(), layer.pad(), layer.order(), bias);
}

LayerGrads backward(const OpLayer& layer, const Tensor4& x, const Tensor4& d_out) {
  check_input(layer, x);
  const int k = layer.kernel();
  const int pad = layer.pad();
  const int q_max = layer.order();
  const int out_ch = layer.out_ch();
  const int out_h = output_extent(x.h(), k, pad);
  const int out_w = output_extent(x.w(), k, pad);
  if (d_out.dims() != Dims4{x.n(), out_ch, out_h, out_w}) {
    throw std::invalid_argument("d_out shape " + to_string(d_out.dims()) +
                                " does not match layer output shape");
  }
  const std::size_t depth = static_cast<std::size_t>(layer.in_ch()) * q_max * k * k;
  const Matrix w(static_cast<std::size_t>(out_ch), depth, layer.weights());
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  const int rows_per_band = band_rows(out_h, out_w, depth);

  LayerGrads grads;
  grads.d_input = Tensor4(x.dims());
  std::vector<Matrix> per_image(static_cast<std::size_t>(x.n()));

  parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t img) {
    const int n = static_cast<int>(img);
    const auto powers = detail::channel_powers(x, n, q_max);
    Matrix dw(static_cast<std::size_t>(out_ch), depth);
    // Gradient with respect to each x_i^q plane, accumulated over bands.
    std::vector<std::vector<double>> d_pow(powers.size(), std::vector<double>(plane, 0.0));
    for (int y0 = 0; y0 < out_h; y0 += rows_per_band) {
      const int y1 = std::min(out_h, y0 + rows_per_band);
      const std::size_t band_px = static_cast<std::size_t>(y1 - y0) * out_w;
      ColMatrix cols(band_px, depth, k);
      detail::fill_power_cols(powers, x.h(), x.w(), pad, y0, y1, cols);

      Matrix dy(static_cast<std::size_t>(out_ch), band_px);
      for (int o = 0; o < out_ch; ++o) {
        const auto src = d_out.plane(n, o).subspan(static_cast<std::size_t>(y0) * out_w, band_px);
        std::copy(src.begin(), src.end(), dy.row(o).begin());
      }
      const Matrix band_dw = gemm(dy, cols);
      for (std::size_t j = 0; j < band_dw.data().size(); ++j) dw.data()[j] += band_dw.data()[j];

      const ColMatrix d_cols(gemm(dy.transposed(), w), k);
      for (std::size_t b = 0; b < powers.size(); ++b) {
        detail::scatter_power_block(d_cols, b, x.h(), x.w(), pad, y0, y1, d_pow[b]);
      }
    }
    // Chain rule through x^q: d/dx x^q = q * x^(q-1).
    for (int i = 0; i < layer.in_ch(); ++i) {
      const auto xi = x.plane(n, i);
      auto dst = grads.d_input.plane(n, i);
      for (int q = 1; q <= q_max; ++q) {
        const auto& g = d_pow[static_cast<std::size_t>(i) * q_max + (q - 1)];
        for (std::size_t p = 0; p < plane; ++p) {
          const double deriv = q == 1 ? 1.0 : q * int_pow(xi[p], q - 1);
          dst[p] += deriv * g[p];
        }
      }
    }
    per_image[img] = std::move(dw);
  });

  grads.d_weights.assign(depth * out_ch, 0.0);
  for (const auto& dw : per_image) {
    for (std::size_t j = 0; j < grads.d_weights.size(); ++j) grads.d_weights[j] += dw.data()[j];
  }
  if (layer.has_bias()) {
    std::vector<double> db(static_cast<std::size_t>(out_ch), 0.0);
    for (int n = 0; n < d_out.n(); ++n) {
      for (int o = 0; o < out_ch; ++o) {
        for (double v : d_out.plane(n, o)) db[o] += v;
      }
    }
    grads.d_bias = std::move(db);
  }
  return grads;
}

Tensor4 conv2d_im2col(const Tensor4& x, std::span<const double> kernel, int out_ch, int k, int pad,
                      std::span<const double> bias) {
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  const std::size_t depth = static_cast<std::size_t>(x.c()) * kk;
  if (kernel.size() != depth * out_ch) {
    throw std::invalid_argument("convolution kernel size does not match (out, in, k, k)");
  }
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_ch)) {
    throw std::invalid_argument("bias length does not match out_ch");
  }
  const Matrix wt = weight_columns(kernel, out_ch);
  const int out_h = output_extent(x.h(), k, pad);
  const int out_w = output_extent(x.w(), k, pad);
  Tensor4 out({x.n(), out_ch, out_h, out_w});
  for (int n = 0; n < x.n(); ++n) {
    Matrix cols(static_cast<std::size_t>(out_h) * out_w, depth);
    for (int i = 0; i < x.c(); ++i) {
      const ColMatrix ci = im2col(PlaneView{x.plane(n, i), x.h(), x.w()}, k, pad);
      for (std::size_t p = 0; p < ci.rows(); ++p) {
        std::copy(ci.row(p).begin(), ci.row(p).end(), cols.row(p).begin() + i * kk);
      }
    }
    const Matrix y = gemm(cols, wt);
    for (int o = 0; o < out_ch; ++o) {
      auto dst = out.plane(n, o);
      const double b = bias.empty() ? 0.0 : bias[o];
      for (std::size_t p = 0; p < y.rows(); ++p) dst[p] = y(p, o) + b;
    }
  }
  return out;
}

Tensor4 conv2d_direct(const Tensor4& x, std::span<const double> kernel, int out_ch, int k, int pad,
                      std::span<const double> bias) {
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  if (kernel.size() != kk * x.c() * out_ch) {
    throw std::invalid_argument("convolution kernel size does not match (out, in, k, k)");
  }
  const int out_h = output_extent(x.h(), k, pad);
  const int out_w = output_extent(x.w(), k, pad);
  Tensor4 out({x.n(), out_ch, out_h, out_w});
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < out_ch; ++o) {
      for (int m = 0; m < out_h; ++m) {
        for (int c = 0; c < out_w; ++c) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int i = 0; i < x.c(); ++i) {
            const double* wk = &kernel[(static_cast<std::size_t>(o) * x.c() + i) * kk];
            for (int r = 0; r < k; ++r) {
              const int y = m + r - pad;
              if (y < 0 || y >= x.h()) continue;
              for (int t = 0; t < k; ++t) {
                const int xx = c + t - pad;
                if (xx < 0 || xx >= x.w()) continue;
                acc += wk[r * k + t] * x.at(n, i, y, xx);
              }
            }
          }
          out.at(n, o, m, c) = acc;
        }
      }
    }
  }
  return out;
}

}  // namespace selfonn
