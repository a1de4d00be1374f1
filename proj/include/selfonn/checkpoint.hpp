#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "selfonn/netarch.hpp"

namespace selfonn {

/// Binary checkpoint, all fields little-endian:
///
///   "SONNCKPT"                          8 bytes
///   version                             u32 (currently 1)
///   depth hidden_ch k q in_ch out_ch    6 x u32
///   use_bn activation residual          3 x u8
///   payload element width               u8 (4 = f32, 8 = f64)
///   compute precision bits              u8
///   epoch                               u32
///   best validation PSNR                f64
///   seed                                u64
///   payload element count               u64
///   payload                             count x element
///
/// Payload order: for each layer, kernel weights in (out, in, q, r, t) order,
/// then BN gamma, beta, running mean, running variance when the layer has BN.
struct CheckpointMeta {
  std::uint32_t epoch = 0;
  double best_val_psnr = 0.0;
  std::uint64_t seed = 0;
  std::uint8_t compute_bits = 64;
};

enum class PayloadType : std::uint8_t { f32 = 4, f64 = 8 };

struct Checkpoint {
  NetworkSpec spec;
  CheckpointMeta meta;
  PayloadType payload_type = PayloadType::f64;
  std::vector<double> payload;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Code { io = 1, format = 2, version = 3, payload_length = 4, spec_mismatch = 5 };

  CheckpointError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

/// Number of payload values a network of this spec carries.
std::size_t payload_length(const NetworkSpec& spec);

/// Captures weights and BN state. f32 payloads are rounded to float.
Checkpoint snapshot(const Network& net, const CheckpointMeta& meta,
                    PayloadType type = PayloadType::f64);

/// Rebuilds the network a checkpoint describes.
Network restore(const Checkpoint& c);

/// Loads payload values into an existing network; the spec must match.
void load_weights(Network& net, const Checkpoint& c);

void write_checkpoint(std::ostream& out, const Checkpoint& c);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Field-by-field comparison with doubles compared by bit pattern.
bool bitwise_equal(const Checkpoint& a, const Checkpoint& b);

}  // namespace selfonn
