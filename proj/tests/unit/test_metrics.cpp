#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "selfonn/metrics.hpp"

using namespace selfonn;

TEST_CASE("psnr against the formula") {
  std::mt19937_64 gen(31);
  const Tensor4 a = oracle::random_tensor({2, 3, 16, 16}, gen, 0, 1);
  const Tensor4 b = oracle::random_tensor({2, 3, 16, 16}, gen, 0, 1);
  CHECK(psnr(a, b) == doctest::Approx(oracle::psnr(a, b)).epsilon(1e-12));
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);
  // Known case: every pixel off by 0.1 gives 20 dB.
  Tensor4 c = a;
  for (double& v : c.data()) v += 0.1;
  CHECK(psnr(a, c) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(psnr(a, c, 255.0) == doctest::Approx(20.0 + 20.0 * std::log10(255.0)).epsilon(1e-9));
  CHECK_THROWS_AS(psnr(a, Tensor4({1, 1, 2, 2})), std::invalid_argument);
}

TEST_CASE("psnr follows the noise variance") {
  std::mt19937_64 gen(32);
  std::normal_distribution<double> z(0, 1);
  for (double v : {1e-2, 1e-3}) {
    Tensor4 clean({1, 1, 256, 256}, 0.5), noisy = clean;
    for (double& x : noisy.data()) x += std::sqrt(v) * z(gen);
    CHECK(std::abs(psnr(clean, noisy) - 10.0 * std::log10(1.0 / v)) <= 0.5);
  }
}

TEST_CASE("ssim against a direct 2-D window") {
  std::mt19937_64 gen(33);
  Tensor4 a = oracle::random_tensor({1, 2, 20, 17}, gen, 0, 1);
  Tensor4 b = a;
  std::normal_distribution<double> z(0, 0.1);
  for (double& v : b.data()) v += z(gen);
  double want = 0;
  for (int c = 0; c < 2; ++c) {
    const std::vector<double> pa(a.plane(0, c).begin(), a.plane(0, c).end());
    const std::vector<double> pb(b.plane(0, c).begin(), b.plane(0, c).end());
    want += oracle::ssim_plane(pa, pb, 20, 17, 1.0) / 2;
  }
  CHECK(ssim(a, b) == doctest::Approx(want).epsilon(1e-10));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-15));
  CHECK(std::abs(ssim(a, a) - 1.0) <= 1e-9);
  CHECK(std::abs(ssim(a, b)) <= 1.0);
  Tensor4 inv = a;
  for (double& v : inv.data()) v = 1.0 - v;
  CHECK(std::abs(ssim(a, inv)) <= 1.0);
  CHECK(ssim(a, inv) < 0.0);
  CHECK_THROWS_AS(ssim(Tensor4({1, 1, 10, 30}), Tensor4({1, 1, 10, 30})), std::invalid_argument);
}

TEST_CASE("report means equal the mean of per-image values") {
  std::mt19937_64 gen(34);
  const Tensor4 ref = oracle::random_tensor({4, 1, 12, 12}, gen, 0, 1);
  Tensor4 img = ref;
  std::normal_distribution<double> z(0, 0.05);
  for (int n = 1; n < 4; ++n)
    for (double& v : img.plane(n, 0)) v += z(gen);
  const MetricReport r = evaluate(img, ref);
  REQUIRE(r.psnr.size() == 4);
  CHECK(std::isinf(r.psnr[0]));
  CHECK(r.infinite_psnr_count() == 1);
  double ps = 0, ss = 0;
  for (int n = 0; n < 4; ++n) {
    if (n > 0) ps += psnr(img.image(n), ref.image(n));
    ss += ssim(img.image(n), ref.image(n));
    CHECK(r.ssim[n] == ssim(img.image(n), ref.image(n)));
  }
  CHECK(r.mean_psnr() == doctest::Approx(ps / 3).epsilon(1e-14));
  CHECK(r.mean_ssim() == doctest::Approx(ss / 4).epsilon(1e-14));
  MetricReport empty;
  CHECK(std::isnan(empty.mean_psnr()));
}
