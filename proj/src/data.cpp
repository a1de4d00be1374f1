#include "selfonn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "selfonn/rng.hpp"

namespace selfonn {

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw ImageError(ImageError::Kind::corrupt_header, "truncated image header");
  return tok;
}

long header_number(std::istream& in, const char* what) {
  const std::string tok = header_token(in);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); })) {
    throw ImageError(ImageError::Kind::corrupt_header, std::string("bad ") + what + " in header");
  }
  if (tok.size() > 9) {
    throw ImageError(ImageError::Kind::dimension_overflow, std::string(what) + " too large");
  }
  return std::stol(tok);
}

}  // namespace

Tensor4 read_pnm(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2) throw ImageError(ImageError::Kind::corrupt_header, "truncated image header");
  int channels;
  if (magic[0] == 'P' && magic[1] == '5') {
    channels = 1;
  } else if (magic[0] == 'P' && magic[1] == '6') {
    channels = 3;
  } else {
    throw ImageError(ImageError::Kind::unsupported_format,
                     "unsupported image format (expected binary PGM/PPM)");
  }
  const long w = header_number(in, "width");
  const long h = header_number(in, "height");
  const long maxval = header_number(in, "maxval");
  if (w < 1 || h < 1) throw ImageError(ImageError::Kind::corrupt_header, "zero image dimension");
  if (w > kMaxImageExtent || h > kMaxImageExtent) {
    throw ImageError(ImageError::Kind::dimension_overflow,
                     "image dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                         " exceed the supported maximum");
  }
  if (maxval < 1 || maxval > 255) {
    throw ImageError(ImageError::Kind::unsupported_format, "only 8-bit images are supported");
  }
  const std::size_t count = static_cast<std::size_t>(w) * h * channels;
  std::vector<unsigned char> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw ImageError(ImageError::Kind::corrupt_header, "truncated image data");
  }
  Tensor4 t({1, channels, static_cast<int>(h), static_cast<int>(w)});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        const auto v = raw[(static_cast<std::size_t>(y) * w + x) * channels + c];
        t.at(0, c, y, x) = std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval));
      }
    }
  }
  return t;
}

Tensor4 load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError(ImageError::Kind::io, "cannot open image " + path.string());
  try {
    return read_pnm(in);
  } catch (const ImageError& e) {
    throw ImageError(e.kind(), path.string() + ": " + e.what());
  }
}

void write_pnm(std::ostream& out, const Tensor4& image) {
  if (image.n() != 1 || (image.c() != 1 && image.c() != 3)) {
    throw ImageError(ImageError::Kind::unsupported_format,
                     "can only write single 1- or 3-channel images, got " + to_string(image.dims()));
  }
  out << (image.c() == 1 ? "P5" : "P6") << '\n' << image.w() << ' ' << image.h() << "\n255\n";
  std::vector<unsigned char> raw(image.size());
  std::size_t k = 0;
  for (int y = 0; y < image.h(); ++y) {
    for (int x = 0; x < image.w(); ++x) {
      for (int c = 0; c < image.c(); ++c) {
        const double v = std::clamp(image.at(0, c, y, x), 0.0, 1.0);
        raw[k++] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void save_image(const Tensor4& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError(ImageError::Kind::io, "cannot write image " + path.string());
  write_pnm(out, image);
  if (!out) throw ImageError(ImageError::Kind::io, "write failed for " + path.string());
}

Tensor4 sample_noise(const Tensor4& clean, const NoiseModel& model) {
  if (model.sigma < 0.0 || model.alpha < 0.0) {
    throw std::invalid_argument("noise sigma and alpha must be non-negative");
  }
  Rng rng(model.seed);
  Tensor4 noise(clean.dims());
  const auto src = clean.data();
  auto dst = noise.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double z = rng.normal();
    double stdev = model.sigma;
    if (model.kind == NoiseModel::Kind::poisson_gaussian) {
      stdev = std::sqrt(model.alpha * std::max(src[i], 0.0) + model.sigma * model.sigma);
    }
    dst[i] = stdev * z;
  }
  return noise;
}

ImagePair synthesize_pair(const Tensor4& clean, const NoiseModel& model, std::string id) {
  ImagePair pair{clean, sample_noise(clean, model), std::move(id)};
  auto noisy = pair.noisy.data();
  const auto src = clean.data();
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = std::clamp(src[i] + noisy[i], 0.0, 1.0);
  return pair;
}

Tensor4 generate_clean_image(int h, int w, int channels, std::uint64_t seed) {
  Rng rng(seed);
  Tensor4 img({1, channels, h, w});
  std::vector<double> base(channels), gx(channels), gy(channels);
  for (int c = 0; c < channels; ++c) {
    base[c] = rng.uniform(0.2, 0.8);
    gx[c] = rng.uniform(-0.3, 0.3);
    gy[c] = rng.uniform(-0.3, 0.3);
  }
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        img.at(0, c, y, x) = base[c] + gx[c] * (x / double(w) - 0.5) + gy[c] * (y / double(h) - 0.5);
      }
    }
  }
  const int shapes = 6 + static_cast<int>(rng.below(6));
  for (int s = 0; s < shapes; ++s) {
    const bool disc = rng.uniform() < 0.5;
    const double cy = rng.uniform(0.0, h);
    const double cx = rng.uniform(0.0, w);
    const double ry = rng.uniform(0.05, 0.3) * h;
    const double rx = rng.uniform(0.05, 0.3) * w;
    std::vector<double> value(channels);
    for (double& v : value) v = rng.uniform(0.05, 0.95);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = (y - cy) / ry;
        const double dx = (x - cx) / rx;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        for (int c = 0; c < channels; ++c) img.at(0, c, y, x) = value[c];
      }
    }
  }
  const double freq = rng.uniform(0.05, 0.2);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double& v = img.at(0, c, y, x);
        v = std::clamp(v + 0.04 * std::sin(freq * (x + 0.7 * y) + phase), 0.0, 1.0);
      }
    }
  }
  return img;
}

PatchDataset extract_patches(const std::vector<ImagePair>& pairs, int patch_size, int per_image,
                             std::uint64_t seed) {
  if (patch_size < 1 || per_image < 1) {
    throw std::invalid_argument("patch size and patches per image must be >= 1");
  }
  PatchDataset ds;
  ds.patch_size = patch_size;
  const std::size_t total = pairs.size() * static_cast<std::size_t>(per_image);
  ds.clean.reserve(total);
  ds.noisy.reserve(total);
  ds.origin.reserve(total);
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const ImagePair& pair = pairs[j];
    if (pair.clean.dims() != pair.noisy.dims()) {
      throw std::invalid_argument("image '" + pair.id + "' has mismatched clean/noisy shapes");
    }
    const int h = pair.clean.h();
    const int w = pair.clean.w();
    if (h < patch_size || w < patch_size) {
      throw std::invalid_argument("image '" + pair.id + "' (" + std::to_string(h) + "x" +
                                  std::to_string(w) + ") is smaller than the patch size " +
                                  std::to_string(patch_size));
    }
    Rng rng(derive_seed(seed, j));
    const int c = pair.clean.c();
    for (int p = 0; p < per_image; ++p) {
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - patch_size + 1)));
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - patch_size + 1)));
      Tensor4 cp({1, c, patch_size, patch_size});
      Tensor4 np({1, c, patch_size, patch_size});
      for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < patch_size; ++y) {
          for (int x = 0; x < patch_size; ++x) {
            cp.at(0, ch, y, x) = pair.clean.at(0, ch, y0 + y, x0 + x);
            np.at(0, ch, y, x) = pair.noisy.at(0, ch, y0 + y, x0 + x);
          }
        }
      }
      ds.clean.push_back(std::move(cp));
      ds.noisy.push_back(std::move(np));
      ds.origin.push_back({j, y0, x0});
    }
  }
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  return fields;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest not found: " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"id", "clean", "noisy"}) {
    throw std::runtime_error("manifest " + path.string() + " must start with 'id,clean,noisy'");
  }
  std::vector<ManifestEntry> entries;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + " needs 3 fields");
    }
    entries.push_back({f[0], dir / f[1], dir / f[2]});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(dir / kManifestName);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << "id,clean,noisy\n";
  for (const auto& e : entries) {
    out << e.id << ',' << e.clean.lexically_relative(dir).generic_string() << ','
        << e.noisy.lexically_relative(dir).generic_string() << '\n';
  }
}

std::vector<ManifestEntry> scan_pairs(const std::filesystem::path& dir) {
  std::map<std::string, ManifestEntry> found;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    if (!f.is_regular_file()) continue;
    const std::string stem = f.path().stem().string();
    for (const char* role : {"_clean", "_noisy"}) {
      const std::string suffix = role;
      if (stem.size() > suffix.size() && stem.ends_with(suffix)) {
        const std::string id = stem.substr(0, stem.size() - suffix.size());
        auto& e = found[id];
        e.id = id;
        (suffix == "_clean" ? e.clean : e.noisy) = f.path();
      }
    }
  }
  std::vector<ManifestEntry> entries;
  for (auto& [id, e] : found) {
    if (!e.clean.empty() && !e.noisy.empty()) entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ImagePair> load_pairs(const std::filesystem::path& dir) {
  std::vector<ImagePair> pairs;
  for (const auto& e : read_manifest(dir)) {
    ImagePair p{load_image(e.clean), load_image(e.noisy), e.id};
    if (p.clean.dims() != p.noisy.dims()) {
      throw std::runtime_error("pair '" + e.id + "' has mismatched clean/noisy sizes");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace selfonn
