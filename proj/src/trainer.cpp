#include "selfonn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "selfonn/metrics.hpp"
#include "selfonn/rng.hpp"

namespace selfonn {

std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd") return Optimizer::sgd;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be >= 0");
  if (patch_size < 1 || patches_per_image < 1) {
    throw std::invalid_argument("patch size and patches per image must be >= 1");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must lie in (0, 1)");
  }
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
  if (!cfg.lr_decay) return cfg.lr;
  double lr = cfg.lr;
  if (2 * epoch >= cfg.epochs) lr *= 0.5;
  if (4 * epoch >= 3 * cfg.epochs) lr *= 0.5;
  return lr;
}

LossResult mse_loss(const Tensor4& pred, const Tensor4& target) {
  if (pred.dims() != target.dims()) {
    throw std::invalid_argument("loss shapes differ: " + to_string(pred.dims()) + " vs " +
                                to_string(target.dims()));
  }
  LossResult r{0.0, Tensor4(pred.dims())};
  const auto p = pred.data();
  const auto t = target.data();
  auto d = r.d_pred.data();
  const double count = static_cast<double>(p.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = p[i] - t[i];
    sq += diff * diff;
    d[i] = 2.0 * diff / count;
  }
  r.loss = sq / count;
  return r;
}

Split split(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("split needs at least 2 items");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must lie in (0, 1)");
  }
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) {
    throw std::invalid_argument("split of " + std::to_string(n) + " items at fraction " +
                                std::to_string(val_fraction) + " leaves an empty partition");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  Split s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: gradient length mismatch");
  for (double g : grads) {
    if (!std::isfinite(g)) throw std::invalid_argument("adam: non-finite gradient");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam: state length mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * grads[i];
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
  }
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::vector<double>& velocity,
              double lr, double momentum) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd: gradient length mismatch");
  if (velocity.empty()) velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!std::isfinite(grads[i])) throw std::invalid_argument("sgd: non-finite gradient");
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

double clip_global_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

Tensor4 stack(const std::vector<Tensor4>& patches, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("cannot stack an empty selection");
  const Dims4 d = patches[indices[0]].dims();
  Tensor4 out({static_cast<int>(indices.size()), d.c, d.h, d.w});
  const std::size_t len = static_cast<std::size_t>(d.c) * d.plane();
  auto dst = out.data();
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Tensor4& p = patches[indices[j]];
    if (p.dims() != d) throw std::invalid_argument("patches differ in shape");
    std::copy(p.data().begin(), p.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(j * len));
  }
  return out;
}

Validation validate(const Network& net, const PatchDataset& data,
                    std::span<const std::size_t> indices, int batch_size) {
  MetricReport report;
  for (std::size_t b = 0; b < indices.size(); b += static_cast<std::size_t>(batch_size)) {
    const auto sel = indices.subspan(b, std::min<std::size_t>(batch_size, indices.size() - b));
    Tensor4 out = net.forward(stack(data.noisy, sel));
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    const MetricReport part = evaluate(out, stack(data.clean, sel));
    for (std::size_t i = 0; i < part.psnr.size(); ++i) report.add(part.psnr[i], part.ssim[i]);
  }
  return {report.mean_psnr(), report.mean_ssim()};
}

namespace {

std::vector<double> flatten(const std::vector<std::span<double>>& params) {
  std::vector<double> flat;
  for (const auto& p : params) flat.insert(flat.end(), p.begin(), p.end());
  return flat;
}

void scatter(const std::vector<double>& flat, const std::vector<std::span<double>>& params) {
  std::size_t pos = 0;
  for (const auto& p : params) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), p.size(), p.begin());
    pos += p.size();
  }
}

}  // namespace

TrainResult train(Network& net, const PatchDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("training dataset is empty");
  const Split parts = split(data.size(), cfg.val_fraction, cfg.seed);
  Rng shuffle_rng(derive_seed(cfg.seed, 1));

  AdamState adam;
  std::vector<double> velocity;
  TrainResult result;
  double best_psnr = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  std::vector<std::size_t> order = parts.train;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    }
    double loss_sum = 0.0;
    std::size_t seen = 0;
    int batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::span<const std::size_t> sel(order.data() + b,
                                             std::min<std::size_t>(cfg.batch_size, order.size() - b));
      const Tensor4 noisy = stack(data.noisy, sel);
      const Tensor4 clean = stack(data.clean, sel);
      Network::Trace trace;
      const Tensor4 out = net.forward_train(noisy, trace);
      const LossResult loss = mse_loss(out, clean);
      if (!std::isfinite(loss.loss)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch + 1) + ", batch " +
                              std::to_string(batch_index + 1));
      }
      NetworkGrads grads = net.backward(trace, loss.d_pred);
      if (!std::all_of(grads.params.begin(), grads.params.end(),
                       [](double g) { return std::isfinite(g); })) {
        throw DivergenceError("training diverged: non-finite gradient at epoch " +
                              std::to_string(epoch + 1) + ", batch " +
                              std::to_string(batch_index + 1));
      }
      clip_global_norm(grads.params, cfg.clip_norm);
      const auto params = net.parameters();
      std::vector<double> flat = flatten(params);
      if (cfg.optimizer == Optimizer::adam) {
        adam_step(flat, grads.params, adam, lr);
      } else {
        sgd_step(flat, grads.params, velocity, lr, cfg.sgd_momentum);
      }
      scatter(flat, params);
      loss_sum += loss.loss * static_cast<double>(sel.size());
      seen += sel.size();
    }

    const Validation val = validate(net, data, parts.val, cfg.batch_size);
    const EpochLog entry{epoch + 1, loss_sum / static_cast<double>(seen), val.psnr, val.ssim};
    result.log.push_back(entry);
    if (val.psnr > best_psnr || (!have_best && epoch == cfg.epochs - 1)) {
      best_psnr = val.psnr;
      have_best = true;
      result.best = snapshot(net, {static_cast<std::uint32_t>(epoch + 1), val.psnr, cfg.seed, 64},
                             cfg.checkpoint_type);
    }
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

void write_log_csv(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,train_loss,val_psnr,val_ssim\n";
  os << std::setprecision(10);
  for (const auto& e : log) {
    os << e.epoch << ',' << e.train_loss << ',' << e.val_psnr << ',' << e.val_ssim << '\n';
  }
}

}  // namespace selfonn
