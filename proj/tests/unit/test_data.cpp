#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "selfonn/data.hpp"

using namespace selfonn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("selfonn_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("1x1 white PGM") {
  std::istringstream in(std::string("P5\n1 1\n255\n\xff", 12));
  const Tensor4 t = read_pnm(in);
  CHECK(t.dims() == Dims4{1, 1, 1, 1});
  CHECK(t.at(0, 0, 0, 0) == 1.0);
}

TEST_CASE("header comments and PPM channel order") {
  std::istringstream in(std::string("P6 # colour\n2 1 # size\n255\n\x00\x33\xff\x80\x00\x10", 36));
  const Tensor4 t = read_pnm(in);
  REQUIRE(t.dims() == Dims4{1, 3, 1, 2});
  CHECK(t.at(0, 1, 0, 0) == 0x33 / 255.0);
  CHECK(t.at(0, 2, 0, 0) == 1.0);
  CHECK(t.at(0, 0, 0, 1) == 0x80 / 255.0);
}

TEST_CASE("image errors are distinct") {
  auto kind_of = [](const std::string& bytes) {
    std::istringstream in(bytes);
    try {
      read_pnm(in);
    } catch (const ImageError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  CHECK(kind_of("P3\n1 1\n255\n0 0 0") == static_cast<int>(ImageError::Kind::unsupported_format));
  CHECK(kind_of("\x89PNG....") == static_cast<int>(ImageError::Kind::unsupported_format));
  CHECK(kind_of("P5\n4 4\n255\nab") == static_cast<int>(ImageError::Kind::corrupt_header));
  CHECK(kind_of("P5\n4") == static_cast<int>(ImageError::Kind::corrupt_header));
  CHECK(kind_of("P5\n4 4\n65535\n") == static_cast<int>(ImageError::Kind::unsupported_format));
  CHECK(kind_of("P5\n99999 4\n255\n") == static_cast<int>(ImageError::Kind::dimension_overflow));
  CHECK_THROWS_AS(load_image("/nonexistent/x.pgm"), ImageError);
}

TEST_CASE("save(load(p)) is byte-identical") {
  const fs::path dir = scratch("roundtrip");
  std::mt19937_64 gen(51);
  std::uniform_int_distribution<int> byte(0, 255);
  for (const char* magic : {"P5", "P6"}) {
    const int c = std::string(magic) == "P5" ? 1 : 3;
    std::string bytes = std::string(magic) + "\n7 5\n255\n";
    for (int i = 0; i < 7 * 5 * c; ++i) bytes.push_back(static_cast<char>(byte(gen)));
    const fs::path p = dir / (std::string("img") + magic);
    std::ofstream(p, std::ios::binary) << bytes;
    const fs::path q = dir / (std::string("copy") + magic);
    save_image(load_image(p), q);
    CHECK(slurp(q) == bytes);
  }
}

TEST_CASE("noise statistics") {
  const Tensor4 clean({1, 1, 256, 256}, 0.5);
  NoiseModel m{NoiseModel::Kind::gaussian, 0.1, 0.0, 9};
  const Tensor4 n = sample_noise(clean, m);
  double s = 0, sq = 0;
  for (double v : n.data()) {
    s += v;
    sq += v * v;
  }
  const double mean = s / n.size();
  CHECK(std::abs(std::sqrt(sq / n.size() - mean * mean) - 0.1) <= 0.003);

  m.sigma = 0.0;
  CHECK(synthesize_pair(clean, m).noisy == clean);
  m.kind = NoiseModel::Kind::poisson_gaussian;
  CHECK(synthesize_pair(clean, m).noisy == clean);

  // Half black, half white: the bright half is noisier.
  Tensor4 halves({1, 1, 128, 128});
  for (int y = 0; y < 128; ++y)
    for (int x = 64; x < 128; ++x) halves.at(0, 0, y, x) = 1.0;
  const Tensor4 field = sample_noise(halves, {NoiseModel::Kind::poisson_gaussian, 0.02, 0.05, 3});
  std::vector<double> dark, bright;
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) (x < 64 ? dark : bright).push_back(field.at(0, 0, y, x));
  CHECK(oracle::two_pass_variance(bright) > oracle::two_pass_variance(dark));
  CHECK(oracle::two_pass_variance(bright) == doctest::Approx(0.05 + 0.0004).epsilon(0.05));
}

TEST_CASE("noise is seeded and independent across seeds") {
  const Tensor4 clean = generate_clean_image(256, 256, 1, 2);
  const NoiseModel a{NoiseModel::Kind::poisson_gaussian, 0.05, 0.05, 1};
  NoiseModel b = a;
  b.seed = 2;
  CHECK(sample_noise(clean, a) == sample_noise(clean, a));
  const Tensor4 na = sample_noise(clean, a), nb = sample_noise(clean, b);
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < na.size(); ++i) {
    ab += na.data()[i] * nb.data()[i];
    aa += na.data()[i] * na.data()[i];
    bb += nb.data()[i] * nb.data()[i];
  }
  CHECK(std::abs(ab) / std::sqrt(aa * bb) < 0.02);
  const ImagePair p = synthesize_pair(clean, a);
  for (double v : p.noisy.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("generated images are in range and seeded") {
  const Tensor4 a = generate_clean_image(40, 30, 3, 5);
  CHECK(a.dims() == Dims4{1, 3, 40, 30});
  CHECK(a == generate_clean_image(40, 30, 3, 5));
  CHECK_FALSE(a == generate_clean_image(40, 30, 3, 6));
  for (double v : a.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("patches are aligned sub-windows") {
  std::vector<ImagePair> pairs;
  for (int i = 0; i < 3; ++i)
    pairs.push_back(synthesize_pair(generate_clean_image(20 + i, 18, 3, i), {NoiseModel::Kind::gaussian, 0.1, 0, 10u + i},
                                    "im" + std::to_string(i)));
  const PatchDataset d = extract_patches(pairs, 6, 7, 1);
  REQUIRE(d.size() == 21);
  for (std::size_t p = 0; p < d.size(); ++p) {
    const auto& o = d.origin[p];
    CHECK(o.image == p / 7);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
          CHECK(d.clean[p].at(0, c, y, x) == pairs[o.image].clean.at(0, c, o.y + y, o.x + x));
          CHECK(d.noisy[p].at(0, c, y, x) == pairs[o.image].noisy.at(0, c, o.y + y, o.x + x));
        }
  }
  const PatchDataset again = extract_patches(pairs, 6, 7, 1);
  CHECK(again.clean == d.clean);

  const PatchDataset full = extract_patches({pairs[0]}, 18, 3, 1);  // too tall by 2 rows only
  CHECK(full.size() == 3);
  std::vector<ImagePair> square = {synthesize_pair(generate_clean_image(8, 8, 1, 1), {}, "sq")};
  const PatchDataset whole = extract_patches(square, 8, 4, 2);
  for (const auto& p : whole.clean) CHECK(p == square[0].clean);

  try {
    extract_patches(pairs, 19, 1, 1);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("im") != std::string::npos);
  }
}

TEST_CASE("patch count at the published protocol size") {
  std::vector<ImagePair> pairs(320, synthesize_pair(Tensor4({1, 1, 4, 4}, 0.5), {}, "x"));
  CHECK(extract_patches(pairs, 2, 512, 1).size() == 163840);
}

TEST_CASE("manifest round trip and discovery") {
  const fs::path dir = scratch("manifest");
  CHECK_THROWS_WITH(read_manifest(dir), doctest::Contains("manifest not found"));
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 3; ++i) {
    const ImagePair p = synthesize_pair(generate_clean_image(12, 12, 1, i), {NoiseModel::Kind::gaussian, 0.1, 0, 4});
    const std::string id = "s" + std::to_string(i);
    save_image(p.clean, dir / (id + "_clean.pgm"));
    save_image(p.noisy, dir / (id + "_noisy.pgm"));
    entries.push_back({id, dir / (id + "_clean.pgm"), dir / (id + "_noisy.pgm")});
  }
  const auto scanned = scan_pairs(dir);
  REQUIRE(scanned.size() == 3);
  CHECK(scanned[1].id == "s1");
  write_manifest(dir, entries);
  const auto back = read_manifest(dir);
  REQUIRE(back.size() == 3);
  CHECK(fs::equivalent(back[2].noisy, entries[2].noisy));
  const auto pairs = load_pairs(dir);
  CHECK(pairs.size() == 3);
  CHECK(pairs[0].id == "s0");
  std::ofstream(dir / kManifestName) << "name,a,b\n";
  CHECK_THROWS(read_manifest(dir));
}
