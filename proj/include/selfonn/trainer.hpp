#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfonn/checkpoint.hpp"
#include "selfonn/data.hpp"
#include "selfonn/netarch.hpp"

namespace selfonn {

enum class Optimizer { adam, sgd };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

struct TrainConfig {
  int epochs = 500;
  int batch_size = 16;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  std::uint64_t seed = 0;
  int patch_size = 80;
  int patches_per_image = 512;
  double val_fraction = 0.1;
  /// Global L2 gradient-norm cap; <= 0 disables clipping.
  double clip_norm = 1.0;
  /// Halve the learning rate at 50% and again at 75% of the epochs.
  bool lr_decay = true;
  double sgd_momentum = 0.9;
  PayloadType checkpoint_type = PayloadType::f64;

  void validate() const;
};

/// Learning rate in effect during epoch `epoch` (0-based).
double scheduled_lr(const TrainConfig& cfg, int epoch);

struct LossResult {
  double loss = 0.0;
  Tensor4 d_pred;
};

/// Mean squared error and its gradient 2 (pred - target) / count.
LossResult mse_loss(const Tensor4& pred, const Tensor4& target);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded shuffle of [0, n) with round(val_fraction * n) validation indices.
Split split(std::size_t n, double val_fraction, std::uint64_t seed);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Bias-corrected Adam update in place. Rejects non-finite gradients.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr);

/// Momentum SGD: v = mu v + g; p -= lr v.
void sgd_step(std::span<double> params, std::span<const double> grads, std::vector<double>& velocity,
              double lr, double momentum);

/// Scales grads so their L2 norm is at most max_norm; returns the norm before scaling.
double clip_global_norm(std::span<double> grads, double max_norm);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minibatch training with per-epoch validation. The returned checkpoint is
/// the epoch with the highest validation PSNR. net is left at the final epoch.
TrainResult train(Network& net, const PatchDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Mean validation metrics of the network (eval mode, outputs clamped to [0, 1]).
struct Validation {
  double psnr = 0.0;
  double ssim = 0.0;
};
Validation validate(const Network& net, const PatchDataset& data,
                    std::span<const std::size_t> indices, int batch_size);

/// Stacks the selected patches into one (n, c, p, p) tensor.
Tensor4 stack(const std::vector<Tensor4>& patches, std::span<const std::size_t> indices);

/// epoch,train_loss,val_psnr,val_ssim
void write_log_csv(std::ostream& os, const std::vector<EpochLog>& log);

}  // namespace selfonn
