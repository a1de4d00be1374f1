#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfonn {

/// Shape of a rank-4 activation: batch, channel, height, width.
struct Dims4 {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Dims4&, const Dims4&) = default;
};

std::string to_string(const Dims4& d);

/// Dense row-major (n, c, h, w) array of doubles, width fastest.
class Tensor4 {
 public:
  Tensor4() : Tensor4(Dims4{}) {}
  explicit Tensor4(Dims4 dims, double fill = 0.0);
  Tensor4(Dims4 dims, std::vector<double> data);

  const Dims4& dims() const { return dims_; }
  int n() const { return dims_.n; }
  int c() const { return dims_.c; }
  int h() const { return dims_.h; }
  int w() const { return dims_.w; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  /// Contiguous h*w slice of one image channel.
  std::span<double> plane(int n, int c);
  std::span<const double> plane(int n, int c) const;

  /// Copy of image n as a (1, c, h, w) tensor.
  Tensor4 image(int n) const;

  bool all_finite() const;

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * dims_.c + c) * dims_.h + y) * dims_.w + x;
  }

  Dims4 dims_;
  std::vector<double> data_;
};

/// Read-only view of one h x w channel.
struct PlaneView {
  std::span<const double> data;
  int h = 0;
  int w = 0;

  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }
};

/// View of channel 0 of image 0; x must be a single-image single-channel tensor.
PlaneView single_plane(const Tensor4& x);

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// im2col output: one row per output position, K*K columns per (channel, power) block.
class ColMatrix : public Matrix {
 public:
  ColMatrix(std::size_t rows, std::size_t cols, int kernel);
  ColMatrix(Matrix m, int kernel);

  int kernel() const { return kernel_; }
  std::size_t blocks() const { return cols() / (static_cast<std::size_t>(kernel_) * kernel_); }

 private:
  int kernel_;
};

/// Padding that keeps the spatial size for an odd kernel. Even kernels are rejected.
int same_padding(int k);

/// Spatial extent after a stride-1 correlation.
int output_extent(int in, int k, int pad);

/// Each row holds the k x k window (row-major) for one output position;
/// positions outside the image read as zero.
ColMatrix im2col(PlaneView x, int k, int pad);
ColMatrix im2col(const Tensor4& x, int k, int pad);

/// Elementwise x^q, each power formed by its own chain of q-1 products.
Tensor4 hadamard_pow(const Tensor4& x, int q);

/// [im2col(x) | im2col(x^2) | ... | im2col(x^q_max)] for one channel.
ColMatrix build_power_cols(PlaneView x, int k, int pad, int q_max);
ColMatrix build_power_cols(const Tensor4& x, int k, int pad, int q_max);

/// Power-augmented columns of every channel of image n, channel blocks in
/// ascending order, each holding its q blocks in ascending order.
ColMatrix build_power_cols_channels(const Tensor4& x, int n, int k, int pad, int q_max);

/// C = A * B. Each entry is accumulated over the inner index in ascending
/// order, so results are reproducible for a given build.
Matrix gemm(const Matrix& a, const Matrix& b);

/// Adjoint of im2col: scatter-adds each window back onto an h x w plane.
Tensor4 col2im_accumulate(const ColMatrix& cols, int h, int w, int k, int pad);

/// Scatter-adds column block `block` (K*K columns starting at block*K*K) of
/// cols into out, an h x w plane.
void col2im_accumulate_block(const ColMatrix& cols, std::size_t block, int h, int w, int pad,
                             std::span<double> out);

double dot(std::span<const double> a, std::span<const double> b);

namespace detail {

/// Hadamard powers of every channel of image n: entry i*q_max + (q-1) is x_i^q.
std::vector<std::vector<double>> channel_powers(const Tensor4& x, int n, int q_max);

/// Fills cols with the power-augmented windows of output rows [y0, y1).
void fill_power_cols(const std::vector<std::vector<double>>& powers, int h, int w, int pad,
                     int y0, int y1, ColMatrix& cols);

/// Adjoint of fill_power_cols for one column block, scattered onto an h x w plane.
void scatter_power_block(const ColMatrix& cols, std::size_t block, int h, int w, int pad, int y0,
                         int y1, std::span<double> out);

}  // namespace detail

}  // namespace selfonn
