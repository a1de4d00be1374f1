#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfonn/tensor.hpp"

namespace selfonn {

class ImageError : public std::runtime_error {
 public:
  enum class Kind { unsupported_format, corrupt_header, dimension_overflow, io };

  ImageError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Largest accepted width or height.
constexpr int kMaxImageExtent = 1 << 15;

/// Binary 8-bit PGM (P5, 1 channel) or PPM (P6, 3 channels), scaled to [0, 1].
Tensor4 read_pnm(std::istream& in);
Tensor4 load_image(const std::filesystem::path& path);

/// Writes "P5\n<w> <h>\n255\n" or the P6 equivalent followed by the samples,
/// each round(255 v) after clamping v to [0, 1].
void write_pnm(std::ostream& out, const Tensor4& image);
void save_image(const Tensor4& image, const std::filesystem::path& path);

struct ImagePair {
  Tensor4 clean;
  Tensor4 noisy;
  std::string id;
};

struct NoiseModel {
  enum class Kind { gaussian, poisson_gaussian };
  Kind kind = Kind::gaussian;
  double sigma = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
};

/// Pre-clip noise field: sigma * N(0,1) for gaussian, sqrt(alpha * clean + sigma^2) * N(0,1)
/// for poisson_gaussian. Variates are drawn in row-major order from Rng(seed).
Tensor4 sample_noise(const Tensor4& clean, const NoiseModel& model);

/// noisy = clip(clean + sample_noise(clean, model), 0, 1).
ImagePair synthesize_pair(const Tensor4& clean, const NoiseModel& model, std::string id = {});

/// Deterministic procedural test image in [0, 1]: a smooth gradient with
/// overlapping flat rectangles and discs plus a mild sinusoidal texture.
Tensor4 generate_clean_image(int h, int w, int channels, std::uint64_t seed);

struct PatchDataset {
  int patch_size = 0;
  std::vector<Tensor4> clean;
  std::vector<Tensor4> noisy;
  /// Source image index and top-left corner of each patch.
  struct Origin {
    std::size_t image = 0;
    int y = 0;
    int x = 0;
  };
  std::vector<Origin> origin;

  std::size_t size() const { return clean.size(); }
};

/// per_image aligned clean/noisy crops per pair with uniformly random corners.
/// Image j uses Rng(derive_seed(seed, j)).
PatchDataset extract_patches(const std::vector<ImagePair>& pairs, int patch_size, int per_image,
                             std::uint64_t seed);

/// Manifest CSV: header "id,clean,noisy", paths relative to the manifest's directory.
struct ManifestEntry {
  std::string id;
  std::filesystem::path clean;
  std::filesystem::path noisy;
};

inline const char* kManifestName = "manifest.csv";

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries);

/// Pairs files named <id>_clean.<ext> / <id>_noisy.<ext>, sorted by id.
std::vector<ManifestEntry> scan_pairs(const std::filesystem::path& dir);

std::vector<ImagePair> load_pairs(const std::filesystem::path& dir);

}  // namespace selfonn
