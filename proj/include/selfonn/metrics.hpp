#pragma once

#include <vector>

#include "selfonn/tensor.hpp"

namespace selfonn {

/// 10 log10(peak^2 / mse). Identical images give +infinity.
double psnr(const Tensor4& a, const Tensor4& b, double peak = 1.0);

/// Mean local SSIM over every image and channel, using an 11x11 Gaussian
/// window (sigma 1.5) at valid positions, C1 = (0.01 peak)^2, C2 = (0.03 peak)^2.
double ssim(const Tensor4& a, const Tensor4& b, double peak = 1.0);

constexpr int kSsimWindow = 11;

struct MetricReport {
  std::vector<double> psnr;
  std::vector<double> ssim;
  double peak = 1.0;

  void add(double psnr_db, double ssim_value);
  /// Mean over finite PSNR entries; infinite (identical-image) entries are skipped.
  /// NaN if no finite entry exists.
  double mean_psnr() const;
  double mean_ssim() const;
  std::size_t infinite_psnr_count() const;
};

/// Per-image metrics of a batch against a reference batch.
MetricReport evaluate(const Tensor4& images, const Tensor4& reference, double peak = 1.0);

}  // namespace selfonn
