#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "selfonn/parallel.hpp"
#include "selfonn/rng.hpp"
#include "selfonn/tensor.hpp"

using namespace selfonn;

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor4(Dims4{0, 1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor4(Dims4{1, 1, 2, 2}, std::vector<double>(3)), std::invalid_argument);
  Tensor4 t({2, 3, 4, 5});
  t.at(1, 2, 3, 4) = 7.0;
  CHECK(t.data().back() == 7.0);
  CHECK(t.image(1).at(0, 2, 3, 4) == 7.0);
  CHECK(t.all_finite());
  t.at(0, 0, 0, 0) = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("padding and extents") {
  CHECK(same_padding(1) == 0);
  CHECK(same_padding(3) == 1);
  CHECK(same_padding(5) == 2);
  CHECK_THROWS_AS(same_padding(2), std::invalid_argument);
  CHECK(output_extent(8, 3, 1) == 8);
  CHECK(output_extent(8, 3, 0) == 6);
  CHECK_THROWS_AS(output_extent(2, 5, 0), std::invalid_argument);
}

TEST_CASE("im2col rows are exact window copies") {
  std::mt19937_64 gen(3);
  for (int h = 1; h <= 6; ++h)
    for (int w = 1; w <= 6; ++w)
      for (int k : {1, 3})
        for (int pad : {0, (k - 1) / 2}) {
          if (h + 2 * pad < k || w + 2 * pad < k) continue;
          const Tensor4 x = oracle::random_tensor({1, 1, h, w}, gen);
          const ColMatrix cols = im2col(x, k, pad);
          const int oh = h + 2 * pad - k + 1, ow = w + 2 * pad - k + 1;
          REQUIRE(cols.rows() == static_cast<std::size_t>(oh * ow));
          REQUIRE(cols.cols() == static_cast<std::size_t>(k * k));
          for (int m = 0; m < oh; ++m)
            for (int n = 0; n < ow; ++n)
              for (int r = 0; r < k; ++r)
                for (int t = 0; t < k; ++t) {
                  const int y = m + r - pad, xx = n + t - pad;
                  const double want = (y < 0 || y >= h || xx < 0 || xx >= w) ? 0.0 : x.at(0, 0, y, xx);
                  CHECK(cols(m * ow + n, r * k + t) == want);
                }
        }
}

TEST_CASE("hadamard powers compose") {
  std::mt19937_64 gen(4);
  const Tensor4 x = oracle::random_tensor({2, 3, 4, 4}, gen);
  for (int a = 1; a <= 5; ++a)
    for (int b = 1; b <= 5; ++b) {
      const Tensor4 whole = hadamard_pow(x, a + b);
      const Tensor4 pa = hadamard_pow(x, a), pb = hadamard_pow(x, b);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double prod = pa.data()[i] * pb.data()[i];
        CHECK(std::abs(whole.data()[i] - prod) <= 1e-12 * std::abs(prod) + 1e-300);
      }
    }
  CHECK(hadamard_pow(x, 1) == x);
  CHECK_THROWS_AS(hadamard_pow(x, 0), std::invalid_argument);
  Tensor4 big({1, 1, 1, 1}, 1e200);
  CHECK_THROWS_AS(hadamard_pow(big, 2), std::domain_error);
}

TEST_CASE("power columns stack im2col of each power") {
  std::mt19937_64 gen(5);
  const Tensor4 x = oracle::random_tensor({1, 1, 5, 6}, gen);
  const ColMatrix p = build_power_cols(x, 3, 1, 4);
  REQUIRE(p.blocks() == 4);
  for (int q = 1; q <= 4; ++q) {
    const ColMatrix one = im2col(hadamard_pow(x, q), 3, 1);
    for (std::size_t r = 0; r < one.rows(); ++r)
      for (std::size_t c = 0; c < one.cols(); ++c) CHECK(p(r, (q - 1) * 9 + c) == one(r, c));
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  std::mt19937_64 gen(6);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = dim(gen), w = dim(gen), k = trial % 2 ? 3 : 1, pad = (k - 1) / 2;
    const Tensor4 x = oracle::random_tensor({1, 1, h, w}, gen);
    const ColMatrix cols = im2col(x, k, pad);
    ColMatrix g(cols.rows(), cols.cols(), k);
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : g.data()) v = u(gen);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < cols.data().size(); ++i) lhs += cols.data()[i] * g.data()[i];
    const Tensor4 back = col2im_accumulate(g, h, w, k, pad);
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data()[i] * back.data()[i];
    CHECK(std::abs(lhs - rhs) <= 1e-10);
  }
}

TEST_CASE("gemm against a triple loop") {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> dim(1, 40);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = dim(gen), kk = dim(gen), n = dim(gen);
    Matrix a(m, kk), b(kk, n);
    for (double& v : a.data()) v = u(gen);
    for (double& v : b.data()) v = u(gen);
    const Matrix c = gemm(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        long double s = 0, mag = 0;
        for (std::size_t p = 0; p < kk; ++p) {
          s += static_cast<long double>(a(i, p)) * b(p, j);
          mag += std::abs(static_cast<long double>(a(i, p)) * b(p, j));
        }
        CHECK(std::abs(c(i, j) - static_cast<double>(s)) <= 1e-12 * static_cast<double>(mag) + 1e-300);
      }
  }
  CHECK_THROWS_AS(gemm(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("gemm large enough to split across threads is thread-count invariant") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(-1, 1);
  Matrix a(300, 200), b(200, 90);
  for (double& v : a.data()) v = u(gen);
  for (double& v : b.data()) v = u(gen);
  set_max_threads(1);
  const Matrix one = gemm(a, b);
  set_max_threads(4);
  const Matrix four = gemm(a, b);
  set_max_threads(0);
  CHECK(one == four);
}

TEST_CASE("rng is reproducible and roughly normal") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(1);
  double s = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    sq += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("parallel_for visits each index once and propagates exceptions") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 3) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}
