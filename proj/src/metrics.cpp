#include "selfonn/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace selfonn {

namespace {

void require_same_shape(const Tensor4& a, const Tensor4& b) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument("metric inputs differ in shape: " + to_string(a.dims()) + " vs " +
                                to_string(b.dims()));
  }
}

std::array<double, kSsimWindow> gaussian_window() {
  constexpr double sigma = 1.5;
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable Gaussian filter, valid positions only.
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w) {
  static const auto g = gaussian_window();
  const int out_h = h - kSsimWindow + 1;
  const int out_w = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * out_w);
  for (int y = 0; y < h; ++y) {
    for (int c = 0; c < out_w; ++c) {
      double s = 0.0;
      for (int t = 0; t < kSsimWindow; ++t) s += g[t] * x[static_cast<std::size_t>(y) * w + c + t];
      rows[static_cast<std::size_t>(y) * out_w + c] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int c = 0; c < out_w; ++c) {
      double s = 0.0;
      for (int r = 0; r < kSsimWindow; ++r) s += g[r] * rows[static_cast<std::size_t>(y + r) * out_w + c];
      out[static_cast<std::size_t>(y) * out_w + c] = s;
    }
  }
  return out;
}

double ssim_plane(std::span<const double> a, std::span<const double> b, int h, int w, double peak) {
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const std::size_t n = a.size();
  std::vector<double> va(a.begin(), a.end()), vb(b.begin(), b.end());
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(va, h, w);
  const auto mu_b = filter_valid(vb, h, w);
  const auto e_aa = filter_valid(aa, h, w);
  const auto e_bb = filter_valid(bb, h, w);
  const auto e_ab = filter_valid(ab, h, w);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double var_a = e_aa[i] - ma * ma;
    const double var_b = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace

double psnr(const Tensor4& a, const Tensor4& b, double peak) {
  require_same_shape(a, b);
  if (!(peak > 0.0)) throw std::invalid_argument("psnr peak must be positive");
  double sq = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) sq += (da[i] - db[i]) * (da[i] - db[i]);
  if (sq == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sq / static_cast<double>(da.size());
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor4& a, const Tensor4& b, double peak) {
  require_same_shape(a, b);
  if (!(peak > 0.0)) throw std::invalid_argument("ssim peak must be positive");
  if (a.h() < kSsimWindow || a.w() < kSsimWindow) {
    throw std::invalid_argument("ssim needs images of at least " + std::to_string(kSsimWindow) +
                                "x" + std::to_string(kSsimWindow));
  }
  double sum = 0.0;
  for (int n = 0; n < a.n(); ++n) {
    for (int c = 0; c < a.c(); ++c) sum += ssim_plane(a.plane(n, c), b.plane(n, c), a.h(), a.w(), peak);
  }
  return sum / (static_cast<double>(a.n()) * a.c());
}

void MetricReport::add(double psnr_db, double ssim_value) {
  psnr.push_back(psnr_db);
  ssim.push_back(ssim_value);
}

double MetricReport::mean_psnr() const {
  double sum = 0.0;
  std::size_t count = 0;
  for (double v : psnr) {
    if (std::isfinite(v)) {
      sum += v;
      ++count;
    }
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(count);
}

double MetricReport::mean_ssim() const {
  if (ssim.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (double v : ssim) sum += v;
  return sum / static_cast<double>(ssim.size());
}

std::size_t MetricReport::infinite_psnr_count() const {
  std::size_t count = 0;
  for (double v : psnr) count += std::isinf(v) ? 1 : 0;
  return count;
}

MetricReport evaluate(const Tensor4& images, const Tensor4& reference, double peak) {
  require_same_shape(images, reference);
  MetricReport report;
  report.peak = peak;
  const bool with_ssim = images.h() >= kSsimWindow && images.w() >= kSsimWindow;
  for (int n = 0; n < images.n(); ++n) {
    const Tensor4 a = images.image(n);
    const Tensor4 b = reference.image(n);
    report.add(psnr(a, b, peak),
               with_ssim ? ssim(a, b, peak) : std::numeric_limits<double>::quiet_NaN());
  }
  return report;
}

}  // namespace selfonn
