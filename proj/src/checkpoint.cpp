#include "selfonn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace selfonn {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'O', 'N', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw CheckpointError(CheckpointError::Code::format,
                          std::string("checkpoint format error: truncated header (") + what + ")");
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

NetworkSpec read_spec(std::istream& in) {
  NetworkSpec spec;
  spec.depth = static_cast<int>(get_le<std::uint32_t>(in, "depth"));
  spec.hidden_ch = static_cast<int>(get_le<std::uint32_t>(in, "hidden_ch"));
  spec.k = static_cast<int>(get_le<std::uint32_t>(in, "k"));
  spec.q = static_cast<int>(get_le<std::uint32_t>(in, "q"));
  spec.in_ch = static_cast<int>(get_le<std::uint32_t>(in, "in_ch"));
  spec.out_ch = static_cast<int>(get_le<std::uint32_t>(in, "out_ch"));
  spec.use_bn = get_le<std::uint8_t>(in, "use_bn") != 0;
  const auto act = get_le<std::uint8_t>(in, "activation");
  if (act > static_cast<std::uint8_t>(Activation::tanh)) {
    throw CheckpointError(CheckpointError::Code::format, "checkpoint format error: bad activation");
  }
  spec.activation = static_cast<Activation>(act);
  spec.residual = get_le<std::uint8_t>(in, "residual") != 0;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Code::format,
                          std::string("checkpoint format error: invalid spec: ") + e.what());
  }
  return spec;
}

}  // namespace

std::size_t payload_length(const NetworkSpec& spec) {
  std::size_t total = 0;
  const std::size_t kk = static_cast<std::size_t>(spec.k) * spec.k;
  for (int l = 0; l < spec.depth; ++l) {
    const bool first = l == 0;
    const bool last = l == spec.depth - 1;
    const std::size_t in = first ? spec.in_ch : spec.hidden_ch;
    const std::size_t out = last ? spec.out_ch : spec.hidden_ch;
    total += out * in * spec.q * kk;
    if (spec.use_bn && !first && !last) total += 4 * out;
  }
  return total;
}

Checkpoint snapshot(const Network& net, const CheckpointMeta& meta, PayloadType type) {
  Checkpoint c{net.spec(), meta, type, {}};
  c.payload.reserve(payload_length(net.spec()));
  auto append = [&](const std::vector<double>& v) {
    for (double x : v) {
      c.payload.push_back(type == PayloadType::f32 ? static_cast<double>(static_cast<float>(x)) : x);
    }
  };
  for (const auto& s : net.stages()) {
    if (s.op.has_bias()) throw std::logic_error("checkpoints do not carry layer biases");
    append(s.op.weights());
    if (s.bn) {
      append(s.bn->gamma);
      append(s.bn->beta);
      append(s.bn->running_mean);
      append(s.bn->running_var);
    }
  }
  return c;
}

void load_weights(Network& net, const Checkpoint& c) {
  if (!(net.spec() == c.spec)) {
    throw CheckpointError(CheckpointError::Code::spec_mismatch,
                          "checkpoint spec (" + describe(c.spec) + ") does not match network (" +
                              describe(net.spec()) + ")");
  }
  if (c.payload.size() != payload_length(c.spec)) {
    throw CheckpointError(CheckpointError::Code::payload_length,
                          "checkpoint payload length does not match its spec");
  }
  std::size_t pos = 0;
  auto take = [&](std::vector<double>& v) {
    std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(pos), v.size(), v.begin());
    pos += v.size();
  };
  for (auto& s : net.stages()) {
    take(s.op.weights());
    if (s.bn) {
      take(s.bn->gamma);
      take(s.bn->beta);
      take(s.bn->running_mean);
      take(s.bn->running_var);
    }
  }
}

Network restore(const Checkpoint& c) {
  Network net(c.spec);
  load_weights(net, c);
  return net;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  const NetworkSpec& s = c.spec;
  for (int v : {s.depth, s.hidden_ch, s.k, s.q, s.in_ch, s.out_ch}) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  put_le<std::uint8_t>(out, s.use_bn ? 1 : 0);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(s.activation));
  put_le<std::uint8_t>(out, s.residual ? 1 : 0);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(c.payload_type));
  put_le<std::uint8_t>(out, c.meta.compute_bits);
  put_le<std::uint32_t>(out, c.meta.epoch);
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(c.meta.best_val_psnr));
  put_le<std::uint64_t>(out, c.meta.seed);
  put_le<std::uint64_t>(out, c.payload.size());
  for (double v : c.payload) {
    if (c.payload_type == PayloadType::f32) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kMagic) {
    throw CheckpointError(CheckpointError::Code::format, "checkpoint format error: bad magic");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Code::version,
                          "checkpoint version " + std::to_string(version) + " not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.spec = read_spec(in);
  const auto width = get_le<std::uint8_t>(in, "payload type");
  if (width != 4 && width != 8) {
    throw CheckpointError(CheckpointError::Code::format, "checkpoint format error: bad payload type");
  }
  c.payload_type = static_cast<PayloadType>(width);
  c.meta.compute_bits = get_le<std::uint8_t>(in, "compute bits");
  c.meta.epoch = get_le<std::uint32_t>(in, "epoch");
  c.meta.best_val_psnr = std::bit_cast<double>(get_le<std::uint64_t>(in, "best psnr"));
  c.meta.seed = get_le<std::uint64_t>(in, "seed");
  const auto count = get_le<std::uint64_t>(in, "payload count");
  const std::size_t expected = payload_length(c.spec);
  if (count != expected) {
    throw CheckpointError(CheckpointError::Code::payload_length,
                          "checkpoint payload length " + std::to_string(count) +
                              " does not match the header's architecture (" +
                              std::to_string(expected) + ")");
  }
  std::vector<char> raw(count * width);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw CheckpointError(CheckpointError::Code::payload_length,
                          "checkpoint payload length error: file truncated");
  }
  c.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto* b = reinterpret_cast<const unsigned char*>(raw.data() + i * width);
    std::uint64_t bits = 0;
    for (std::size_t j = 0; j < width; ++j) bits |= static_cast<std::uint64_t>(b[j]) << (8 * j);
    c.payload[i] = width == 4 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)))
                              : std::bit_cast<double>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError(CheckpointError::Code::payload_length,
                          "checkpoint payload length error: trailing bytes after payload");
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Code::io, "cannot write " + path.string());
  write_checkpoint(out, c);
  if (!out) throw CheckpointError(CheckpointError::Code::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Code::io, "cannot open " + path.string());
  return read_checkpoint(in);
}

bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.spec == b.spec) || a.payload_type != b.payload_type ||
      a.meta.epoch != b.meta.epoch || a.meta.seed != b.meta.seed ||
      a.meta.compute_bits != b.meta.compute_bits ||
      std::bit_cast<std::uint64_t>(a.meta.best_val_psnr) !=
          std::bit_cast<std::uint64_t>(b.meta.best_val_psnr) ||
      a.payload.size() != b.payload.size()) {
    return false;
  }
  return std::memcmp(a.payload.data(), b.payload.data(), a.payload.size() * sizeof(double)) == 0;
}

}  // namespace selfonn
