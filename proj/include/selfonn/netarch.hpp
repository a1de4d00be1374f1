#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfonn/oplayer.hpp"
#include "selfonn/tensor.hpp"

namespace selfonn {

enum class Activation : std::uint8_t { none = 0, relu = 1, tanh = 2 };
enum class Mode { train, eval };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Declarative DnCNN-style architecture.
struct NetworkSpec {
  int depth = 17;
  int hidden_ch = 64;
  int k = 3;
  int q = 1;
  bool use_bn = true;
  Activation activation = Activation::relu;
  bool residual = true;
  int in_ch = 3;
  int out_ch = 3;

  /// Throws std::invalid_argument when the spec cannot be built.
  void validate() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Named architectures: dncnn, selfonn17, selfonn8, selfonn4_3, selfonn4_5.
NetworkSpec preset(const std::string& name);
const std::vector<std::string>& preset_names();

std::string describe(const NetworkSpec& spec);

/// Per-channel batch normalisation with affine parameters.
struct BatchNorm {
  explicit BatchNorm(int channels);

  int channels() const { return static_cast<int>(gamma.size()); }

  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  struct Cache {
    Tensor4 normalized;
    std::vector<double> inv_std;
  };

  /// Normalises with running statistics only.
  Tensor4 forward_eval(const Tensor4& x) const;
  /// Normalises with the batch's own (biased) statistics and folds them into
  /// the running estimates.
  Tensor4 forward_train(const Tensor4& x, Cache* cache = nullptr);

  struct Grads {
    Tensor4 d_input;
    std::vector<double> d_gamma;
    std::vector<double> d_beta;
  };
  Grads backward(const Cache& cache, const Tensor4& d_out) const;
};

/// One operational layer plus its optional BN and activation.
struct Stage {
  OpLayer op;
  std::optional<BatchNorm> bn;
  Activation act = Activation::none;
};

struct NetworkGrads {
  /// Same ordering as Network::parameters().
  std::vector<double> params;
  Tensor4 d_input;
};

/// Instantiated layer stack.
///
/// Inputs are images in [0, 1]; the body sees them shifted to [-0.5, 0.5].
/// With residual learning the body predicts the noise and the output is
/// x - body(x - 0.5); otherwise the output is body(x - 0.5) + 0.5.
class Network {
 public:
  /// Zero-weight network with unit BN scale.
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Stage>& stages() { return stages_; }
  const std::vector<Stage>& stages() const { return stages_; }

  /// Fan-in uniform init of every operational layer (see OpLayer::init_uniform).
  void initialize(std::uint64_t seed);

  Tensor4 forward(const Tensor4& x, Mode mode);
  /// Eval-mode forward; pure.
  Tensor4 forward(const Tensor4& x) const;

  /// Intermediate values kept by a train-mode forward for backpropagation.
  struct Trace {
    Tensor4 input;
    std::vector<Tensor4> stage_inputs;
    std::vector<Tensor4> stage_outputs;
    std::vector<std::optional<BatchNorm::Cache>> bn_caches;
  };
  Tensor4 forward_train(const Tensor4& x, Trace& trace);
  NetworkGrads backward(const Trace& trace, const Tensor4& d_out) const;

  /// Trainable parameters: per stage, kernel weights, bias (if any), BN gamma, BN beta.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
  std::size_t parameter_count() const;

 private:
  Tensor4 run(const Tensor4& x, Mode mode, Trace* trace);

  NetworkSpec spec_;
  std::vector<Stage> stages_;
};

/// Builds a zero-weight network; throws if the spec is invalid.
Network build(const NetworkSpec& spec);

/// Exact trainable-parameter total: kernel weights plus 2 per BN channel.
std::size_t param_count(const NetworkSpec& spec);

Tensor4 apply_activation(Activation a, const Tensor4& x);

/// Eval-mode forward over tiles of `tile` x `tile` core pixels, each read with
/// enough context that pixels within `blend` of the core match untiled
/// inference. Overlapping bands are averaged with linear ramp weights. Input is
/// a single image.
Tensor4 forward_tiled(const Network& net, const Tensor4& x, int tile, int blend = 4);

}  // namespace selfonn
