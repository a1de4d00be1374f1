#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "selfonn/complexity.hpp"
#include "selfonn/netarch.hpp"
#include "selfonn/rng.hpp"

using namespace selfonn;

TEST_CASE("layer counts against the oracle") {
  for (std::uint64_t q = 1; q <= 32; ++q) {
    const auto want = oracle::layer_flops(13, 7, 3, 5, 4, q);
    const LayerFlops got = flops_selfonn_layer(13, 7, 3, 5, 4, q);
    CHECK(got.mults == want.mults);
    CHECK(got.adds == want.adds);
    CHECK(got.exp_flops == want.exps);
    std::uint64_t loop = 0;
    for (std::uint64_t k = 1; k < q; ++k) loop += k;
    CHECK(triangular(q - 1) == loop);
  }
  CHECK(flops_selfonn_layer(9, 9, 3, 4, 4, 1) == flops_conv_layer(9, 9, 3, 4, 4));
  CHECK(flops_selfonn_layer(9, 9, 3, 4, 4, 1).exp_flops == 0);
  CHECK_THROWS_AS(flops_selfonn_layer(9, 9, 3, 4, 4, 0), std::invalid_argument);
}

TEST_CASE("network totals at 256x256 against published figures") {
  struct Row {
    const char* name;
    int depth, q;
    double published_g;
  };
  const Row rows[] = {{"dncnn", 17, 1, 68.88}, {"selfonn17", 17, 3, 207.04}, {"selfonn8", 8, 3, 83.60},
                      {"selfonn4_3", 4, 3, 28.74}, {"selfonn4_5", 4, 5, 47.96}};
  for (const auto& r : rows) {
    CAPTURE(r.name);
    const std::uint64_t total = flops_network(preset(r.name), 256, 256).total().total();
    CHECK(total == oracle::network_flops(r.depth, 64, 3, r.q, 3, 256, 256));
    CHECK(std::abs(total / 1e9 - r.published_g) / r.published_g <= 0.01);
  }
  CHECK(flops_network(preset("dncnn"), 256, 256).total().total() == 68878860288ULL);
}

TEST_CASE("flops csv has one row per layer") {
  std::ostringstream os;
  write_flops_csv(os, flops_network(preset("selfonn8"), 32, 32));
  const std::string s = os.str();
  CHECK(std::count(s.begin(), s.end(), '\n') == 9);
  CHECK(s.rfind("layer,mults,adds,exp_flops,total\n", 0) == 0);
}

TEST_CASE("strength of a zero population is zero") {
  std::vector<OpLayer> layers{OpLayer(3, 3, 3, 4), OpLayer(3, 2, 3, 4)};
  const StrengthReport r = synaptic_strength(layers);
  CHECK(r.entries.size() == 8);
  CHECK(r.layers == 2);
  CHECK(r.max_q == 4);
  for (const auto& e : r.entries) CHECK(e.variance == 0.0);
  std::ostringstream os;
  write_strength_csv(os, r);
  const std::string s = os.str();
  CHECK(std::count(s.begin(), s.end(), '\n') == 9);
}

TEST_CASE("strength matches a two-pass variance") {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> u(-1, 1);
  OpLayer a(4, 5, 3, 3), b(5, 2, 3, 3);
  for (double& v : a.weights()) v = 10.0 + u(gen);
  for (double& v : b.weights()) v = u(gen) * 1e-3;
  const StrengthReport r = synaptic_strength(std::vector<OpLayer>{a, b});
  for (const auto& e : r.entries) {
    const OpLayer& l = e.layer == 1 ? a : b;
    std::vector<double> pop;
    for (int o = 0; o < l.out_ch(); ++o)
      for (int i = 0; i < l.in_ch(); ++i)
        for (int x = 0; x < 9; ++x) pop.push_back(l.weight(o, i, e.q, x / 3, x % 3));
    CHECK(e.count == pop.size());
    CHECK(std::abs(e.variance - oracle::two_pass_variance(pop)) <= 1e-12 * oracle::two_pass_variance(pop));
  }
}

TEST_CASE("known ratio between power slices") {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> u(-1, 1);
  OpLayer l(6, 6, 3, 3);
  for (int o = 0; o < 6; ++o)
    for (int i = 0; i < 6; ++i)
      for (int r = 0; r < 3; ++r)
        for (int t = 0; t < 3; ++t) {
          const double z = u(gen);
          l.weight(o, i, 1, r, t) = z;
          l.weight(o, i, 2, r, t) = 0.5 * z;
          l.weight(o, i, 3, r, t) = 3.0 * z;
        }
  const StrengthReport r = synaptic_strength(std::vector<OpLayer>{l});
  CHECK(std::abs(r.entries[1].variance / r.entries[0].variance - 0.25) <= 1e-12);
  CHECK(std::abs(r.entries[2].variance / r.entries[0].variance - 9.0) <= 1e-12);
}

TEST_CASE("fresh selfonn17 variances shrink with q") {
  Network net(preset("selfonn17"));
  net.initialize(7);
  const StrengthReport r = synaptic_strength(net);
  REQUIRE(r.entries.size() == 17 * 3);
  for (int l = 0; l < 17; ++l) {
    CHECK(r.entries[l * 3].variance > r.entries[l * 3 + 1].variance);
    CHECK(r.entries[l * 3 + 1].variance > r.entries[l * 3 + 2].variance);
  }
}
