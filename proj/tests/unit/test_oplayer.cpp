#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "selfonn/oplayer.hpp"
#include "selfonn/rng.hpp"

using namespace selfonn;

namespace {

OpLayer random_layer(std::mt19937_64& gen, int in, int out, int k, int q, bool bias) {
  OpLayer layer(in, out, k, q, bias);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& v : layer.weights()) v = u(gen);
  if (bias) for (double& v : layer.bias()) v = u(gen);
  return layer;
}

}  // namespace

TEST_CASE("weight layout is (out, in, q, r, t)") {
  OpLayer layer(2, 3, 3, 2);
  CHECK(layer.weight_count() == 3 * 2 * 2 * 9);
  layer.weight(2, 1, 2, 1, 0) = 5.0;
  CHECK(layer.weights()[(((2 * 2 + 1) * 2 + 1) * 3 + 1) * 3 + 0] == 5.0);
  CHECK_THROWS_AS(OpLayer(1, 1, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(OpLayer(1, 1, 3, 0), std::invalid_argument);
}

TEST_CASE("all three forward paths match the definition") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> ch(1, 4), sp(1, 8);
  const int orders[] = {1, 2, 3, 5};
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = trial % 2 ? 3 : 1, q = orders[trial % 4];
    const OpLayer layer = random_layer(gen, ch(gen), ch(gen), k, q, trial % 3 == 0);
    const Tensor4 x = oracle::random_tensor({1 + trial % 2, layer.in_ch(), sp(gen), sp(gen)}, gen);
    const Tensor4 want = oracle::operational_layer(x, layer.weights(),
                                                   layer.has_bias() ? layer.bias() : std::vector<double>{},
                                                   layer.out_ch(), k, q);
    const Tensor4 a = forward_naive(layer, x), b = forward_qconv(layer, x), c = forward_gemm(layer, x);
    worst = std::max({worst, oracle::max_abs_diff(a, want), oracle::max_abs_diff(b, want),
                      oracle::max_abs_diff(c, want), oracle::max_abs_diff(a, b), oracle::max_abs_diff(a, c)});
    CHECK(layer.forward(x) == c);
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("same padding keeps spatial size") {
  std::mt19937_64 gen(12);
  for (int k : {1, 3, 5}) {
    const OpLayer layer = random_layer(gen, 2, 3, k, 2, false);
    const Tensor4 y = forward_gemm(layer, oracle::random_tensor({2, 2, 7, 4}, gen));
    CHECK(y.dims() == Dims4{2, 3, 7, 4});
  }
}

TEST_CASE("q=1 layer is a convolution") {
  std::mt19937_64 gen(13);
  for (int trial = 0; trial < 30; ++trial) {
    const int k = trial % 2 ? 3 : 1;
    const OpLayer layer = random_layer(gen, 1 + trial % 3, 1 + trial % 4, k, 1, false);
    const Tensor4 x = oracle::random_tensor({1, layer.in_ch(), 6, 5}, gen);
    const Tensor4 direct = conv2d_direct(x, layer.weights(), layer.out_ch(), k, layer.pad());
    const Tensor4 lowered = conv2d_im2col(x, layer.weights(), layer.out_ch(), k, layer.pad());
    CHECK(forward_naive(layer, x) == direct);
    CHECK(forward_gemm(layer, x) == lowered);
    CHECK(oracle::max_abs_diff(direct, lowered) <= 1e-12);
  }
}

TEST_CASE("correlate2d is a plain single-channel correlation") {
  const Tensor4 x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const std::vector<double> kernel = {0, 0, 0, 0, 0, 1, 0, 0, 0};  // picks the right neighbour
  const auto y = correlate2d(single_plane(x), kernel, 3, 1);
  CHECK(y == std::vector<double>{2, 3, 0, 5, 6, 0, 8, 9, 0});
}

TEST_CASE("forward is linear in the weights") {
  std::mt19937_64 gen(14);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const int q = 1 + trial % 4;
    const OpLayer layer = random_layer(gen, 2, 3, 3, q, false);
    const Tensor4 x = oracle::random_tensor({1, 2, 5, 5}, gen);
    const double alpha = u(gen);
    OpLayer scaled = layer;
    for (double& v : scaled.weights()) v *= alpha;
    const Tensor4 base = forward_gemm(layer, x), joint = forward_gemm(scaled, x);
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(joint.data()[i] == doctest::Approx(alpha * base.data()[i]).epsilon(1e-12).scale(1));
    // Splitting the weights into their q slices and summing the slice outputs recovers the full output.
    Tensor4 sum(base.dims());
    for (int s = 1; s <= q; ++s) {
      OpLayer only = layer;
      for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 2; ++i)
          for (int p = 1; p <= q; ++p)
            for (int r = 0; r < 3; ++r)
              for (int t = 0; t < 3; ++t)
                if (p != s) only.weight(o, i, p, r, t) = 0.0;
      const Tensor4 part = forward_gemm(only, x);
      for (std::size_t i = 0; i < sum.size(); ++i) sum.data()[i] += part.data()[i];
    }
    CHECK(oracle::max_abs_diff(sum, base) <= 1e-12);
  }
}

TEST_CASE("layer gradients match central differences") {
  std::mt19937_64 gen(15);
  for (int q : {1, 2, 3, 5}) {
    CAPTURE(q);
    OpLayer layer = random_layer(gen, 2, 3, 3, q, true);
    for (double& v : layer.weights()) v *= 0.5;
    Tensor4 x = oracle::random_tensor({2, 2, 4, 5}, gen);
    const Tensor4 proj = oracle::random_tensor({2, 3, 4, 5}, gen);
    const LayerGrads g = backward(layer, x, proj);
    auto loss = [&] {
      const Tensor4 y = oracle::operational_layer(x, layer.weights(), layer.bias(), 3, 3, q);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * proj.data()[i];
      return s;
    };
    for (std::size_t i = 0; i < layer.weights().size(); ++i)
      CHECK(oracle::grad_close(g.d_weights[i], oracle::central_difference(layer.weights()[i], loss)));
    REQUIRE(g.d_bias.has_value());
    for (std::size_t i = 0; i < layer.bias().size(); ++i)
      CHECK(oracle::grad_close((*g.d_bias)[i], oracle::central_difference(layer.bias()[i], loss)));
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(oracle::grad_close(g.d_input.data()[i], oracle::central_difference(x.data()[i], loss)));
  }
}

TEST_CASE("validate catches corrupted weight storage") {
  OpLayer layer(2, 2, 3, 2);
  layer.weights().pop_back();
  CHECK_THROWS_AS(layer.validate(), std::logic_error);
  CHECK_THROWS(forward_gemm(layer, Tensor4({1, 2, 3, 3})));
}

TEST_CASE("input channel mismatch is rejected") {
  OpLayer layer(2, 2, 3, 2);
  CHECK_THROWS_AS(forward_gemm(layer, Tensor4({1, 3, 3, 3})), std::invalid_argument);
  CHECK_THROWS_AS(forward_naive(layer, Tensor4({1, 3, 3, 3})), std::invalid_argument);
}

TEST_CASE("init bound shrinks with the power") {
  OpLayer layer(8, 8, 3, 3);
  Rng rng(1);
  layer.init_uniform(rng);
  const double bound = std::sqrt(6.0 / (8 * 9));
  for (int o = 0; o < 8; ++o)
    for (int i = 0; i < 8; ++i)
      for (int q = 1; q <= 3; ++q)
        for (int r = 0; r < 3; ++r)
          for (int t = 0; t < 3; ++t) CHECK(std::abs(layer.weight(o, i, q, r, t)) <= bound / (q * q));
}
