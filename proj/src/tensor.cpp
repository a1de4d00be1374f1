#include "selfonn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "selfonn/parallel.hpp"

namespace selfonn {

std::string to_string(const Dims4& d) {
  return "(" + std::to_string(d.n) + ", " + std::to_string(d.c) + ", " + std::to_string(d.h) +
         ", " + std::to_string(d.w) + ")";
}

namespace {

void check_dims(const Dims4& d) {
  if (d.n < 1 || d.c < 1 || d.h < 1 || d.w < 1) {
    throw std::invalid_argument("tensor dims must all be >= 1, got " + to_string(d));
  }
}

}  // namespace

Tensor4::Tensor4(Dims4 dims, double fill) : dims_(dims) {
  check_dims(dims_);
  data_.assign(dims_.count(), fill);
}

Tensor4::Tensor4(Dims4 dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
  check_dims(dims_);
  if (data_.size() != dims_.count()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match dims " + to_string(dims_));
  }
}

std::span<double> Tensor4::plane(int n, int c) {
  return {data_.data() + offset(n, c, 0, 0), dims_.plane()};
}

std::span<const double> Tensor4::plane(int n, int c) const {
  return {data_.data() + offset(n, c, 0, 0), dims_.plane()};
}

Tensor4 Tensor4::image(int n) const {
  const std::size_t len = static_cast<std::size_t>(dims_.c) * dims_.plane();
  const auto first = data_.begin() + static_cast<std::ptrdiff_t>(n * len);
  return Tensor4({1, dims_.c, dims_.h, dims_.w}, std::vector<double>(first, first + len));
}

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

PlaneView single_plane(const Tensor4& x) {
  if (x.n() != 1 || x.c() != 1) {
    throw std::invalid_argument("expected a single-image single-channel tensor, got " +
                                to_string(x.dims()));
  }
  return {x.data(), x.h(), x.w()};
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("matrix data length does not match " + std::to_string(rows_) +
                                "x" + std::to_string(cols_));
  }
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

ColMatrix::ColMatrix(std::size_t rows, std::size_t cols, int kernel)
    : Matrix(rows, cols), kernel_(kernel) {
  if (kernel < 1) throw std::invalid_argument("kernel size must be >= 1");
  if (cols % (static_cast<std::size_t>(kernel) * kernel) != 0) {
    throw std::invalid_argument("column count must be a multiple of k*k");
  }
}

ColMatrix::ColMatrix(Matrix m, int kernel) : Matrix(std::move(m)), kernel_(kernel) {
  if (kernel < 1) throw std::invalid_argument("kernel size must be >= 1");
  if (cols() % (static_cast<std::size_t>(kernel) * kernel) != 0) {
    throw std::invalid_argument("column count must be a multiple of k*k");
  }
}

int same_padding(int k) {
  if (k < 1) throw std::invalid_argument("kernel size must be >= 1");
  if (k % 2 == 0) {
    throw std::invalid_argument("'same' padding needs an odd kernel, got k=" + std::to_string(k));
  }
  return (k - 1) / 2;
}

int output_extent(int in, int k, int pad) {
  if (k < 1) throw std::invalid_argument("kernel size must be >= 1");
  if (pad < 0) throw std::invalid_argument("padding must be >= 0");
  const int out = in + 2 * pad - k + 1;
  if (out < 1) {
    throw std::invalid_argument("kernel " + std::to_string(k) + " larger than padded input " +
                                std::to_string(in + 2 * pad));
  }
  return out;
}

namespace {

// Writes the k x k windows of output rows [y0, y1) into cols starting at column col0.
void fill_windows(PlaneView plane, int k, int pad, int y0, int y1, int out_w, ColMatrix& cols,
                  std::size_t col0) {
  for (int oy = y0; oy < y1; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      auto row = cols.row(static_cast<std::size_t>(oy - y0) * out_w + ox);
      std::size_t c = col0;
      for (int r = 0; r < k; ++r) {
        const int y = oy + r - pad;
        for (int t = 0; t < k; ++t, ++c) {
          const int x = ox + t - pad;
          row[c] = (y >= 0 && y < plane.h && x >= 0 && x < plane.w) ? plane.at(y, x) : 0.0;
        }
      }
    }
  }
}

std::vector<double> power_plane(std::span<const double> x, int q) {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x[i];
    for (int j = 1; j < q; ++j) v *= x[i];
    out[i] = v;
  }
  return out;
}

}  // namespace

ColMatrix im2col(PlaneView x, int k, int pad) {
  const int out_h = output_extent(x.h, k, pad);
  const int out_w = output_extent(x.w, k, pad);
  ColMatrix cols(static_cast<std::size_t>(out_h) * out_w, static_cast<std::size_t>(k) * k, k);
  fill_windows(x, k, pad, 0, out_h, out_w, cols, 0);
  return cols;
}

ColMatrix im2col(const Tensor4& x, int k, int pad) { return im2col(single_plane(x), k, pad); }

Tensor4 hadamard_pow(const Tensor4& x, int q) {
  if (q < 1) throw std::invalid_argument("power must be >= 1, got " + std::to_string(q));
  Tensor4 out(x.dims(), power_plane(x.data(), q));
  if (!out.all_finite()) throw std::domain_error("hadamard_pow overflowed to a non-finite value");
  return out;
}

ColMatrix build_power_cols(PlaneView x, int k, int pad, int q_max) {
  if (q_max < 1) throw std::invalid_argument("q_max must be >= 1");
  const int out_h = output_extent(x.h, k, pad);
  const int out_w = output_extent(x.w, k, pad);
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  ColMatrix cols(static_cast<std::size_t>(out_h) * out_w, kk * q_max, k);
  for (int q = 1; q <= q_max; ++q) {
    const auto powered = power_plane(x.data, q);
    fill_windows({powered, x.h, x.w}, k, pad, 0, out_h, out_w, cols, kk * (q - 1));
  }
  return cols;
}

ColMatrix build_power_cols(const Tensor4& x, int k, int pad, int q_max) {
  return build_power_cols(single_plane(x), k, pad, q_max);
}

ColMatrix build_power_cols_channels(const Tensor4& x, int n, int k, int pad, int q_max) {
  if (q_max < 1) throw std::invalid_argument("q_max must be >= 1");
  const int out_h = output_extent(x.h(), k, pad);
  const int out_w = output_extent(x.w(), k, pad);
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  ColMatrix cols(static_cast<std::size_t>(out_h) * out_w, kk * q_max * x.c(), k);
  detail::fill_power_cols(detail::channel_powers(x, n, q_max), x.h(), x.w(), pad, 0, out_h, cols);
  return cols;
}

Matrix gemm(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("gemm inner dimension mismatch: " + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()));
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  // i-k-j order: every c(i, j) sees its products added in ascending k.
  auto rows_block = [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* crow = c.row(i).data();
      const double* arow = a.row(i).data();
      for (std::size_t k = 0; k < inner; ++k) {
        const double av = arow[k];
        const double* brow = b.row(k).data();
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  };
  const std::size_t work = a.rows() * inner * n;
  const std::size_t threads = std::min(max_threads(), a.rows());
  if (threads <= 1 || work < (1u << 20)) {
    rows_block(0, a.rows());
  } else {
    const std::size_t chunk = (a.rows() + threads - 1) / threads;
    parallel_for(threads, [&](std::size_t t) {
      rows_block(std::min(a.rows(), t * chunk), std::min(a.rows(), (t + 1) * chunk));
    });
  }
  return c;
}

void col2im_accumulate_block(const ColMatrix& cols, std::size_t block, int h, int w, int pad,
                             std::span<double> out) {
  const int out_h = output_extent(h, cols.kernel(), pad);
  detail::scatter_power_block(cols, block, h, w, pad, 0, out_h, out);
}

namespace detail {

std::vector<std::vector<double>> channel_powers(const Tensor4& x, int n, int q_max) {
  std::vector<std::vector<double>> powers;
  powers.reserve(static_cast<std::size_t>(x.c()) * q_max);
  for (int i = 0; i < x.c(); ++i) {
    for (int q = 1; q <= q_max; ++q) powers.push_back(power_plane(x.plane(n, i), q));
  }
  return powers;
}

void fill_power_cols(const std::vector<std::vector<double>>& powers, int h, int w, int pad,
                     int y0, int y1, ColMatrix& cols) {
  const int k = cols.kernel();
  const int out_w = output_extent(w, k, pad);
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  if (cols.blocks() != powers.size() ||
      cols.rows() != static_cast<std::size_t>(y1 - y0) * out_w) {
    throw std::invalid_argument("power column buffer has the wrong shape");
  }
  for (std::size_t b = 0; b < powers.size(); ++b) {
    fill_windows({powers[b], h, w}, k, pad, y0, y1, out_w, cols, b * kk);
  }
}

void scatter_power_block(const ColMatrix& cols, std::size_t block, int h, int w, int pad, int y0,
                         int y1, std::span<double> out) {
  const int k = cols.kernel();
  const int out_w = output_extent(w, k, pad);
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  if (cols.rows() != static_cast<std::size_t>(y1 - y0) * out_w || block >= cols.blocks()) {
    throw std::invalid_argument("column matrix shape does not match the target plane");
  }
  if (out.size() != static_cast<std::size_t>(h) * w) {
    throw std::invalid_argument("col2im target plane has the wrong size");
  }
  const std::size_t col0 = block * kk;
  for (int oy = y0; oy < y1; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const auto row = cols.row(static_cast<std::size_t>(oy - y0) * out_w + ox);
      std::size_t c = col0;
      for (int r = 0; r < k; ++r) {
        const int y = oy + r - pad;
        for (int t = 0; t < k; ++t, ++c) {
          const int x = ox + t - pad;
          if (y >= 0 && y < h && x >= 0 && x < w) out[static_cast<std::size_t>(y) * w + x] += row[c];
        }
      }
    }
  }
}

}  // namespace detail

Tensor4 col2im_accumulate(const ColMatrix& cols, int h, int w, int k, int pad) {
  if (cols.kernel() != k || cols.blocks() != 1) {
    throw std::invalid_argument("col2im expects a single k*k column block");
  }
  Tensor4 out({1, 1, h, w});
  col2im_accumulate_block(cols, 0, h, w, pad, out.data());
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace selfonn
