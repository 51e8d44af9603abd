#pragma once

// Softmax cross-entropy, SGD with momentum, stratified 70/15/15 splitting and
// the mini-batch training loop with validation-patience early stopping.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spectral_mind/eegio.hpp"
#include "spectral_mind/error.hpp"
#include "spectral_mind/nn/network.hpp"
#include "spectral_mind/random.hpp"

namespace smind {

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t val_frequency_iters = 8;
  std::size_t val_patience = 20;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0)) throw ConfigError("train.learning_rate", "must be > 0");
  if (!(c.momentum >= 0 && c.momentum < 1)) throw ConfigError("train.momentum", "must be in [0, 1)");
  if (c.batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (c.max_epochs < 1) throw ConfigError("train.max_epochs", "must be >= 1");
  if (c.val_frequency_iters < 1) throw ConfigError("train.val_frequency_iters", "must be >= 1");
  if (c.val_patience < 1) throw ConfigError("train.val_patience", "must be >= 1");
}

// ---------------------------------------------------------------------------
// Loss

template <class T>
struct LossResult {
  double loss = 0.0;
  nn::Tensor<T> grad;  // d(loss)/d(logits), i.e. (p - onehot(y)) / N
};

// Mean negative log-likelihood of [N x K] probabilities, probabilities floored at 1e-12.
template <class T>
LossResult<T> cross_entropy(const nn::Tensor<T>& probs, std::span<const int> labels) {
  if (probs.rank() != 2) throw DataError("cross_entropy: expected [N x K] probabilities");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  if (labels.size() != n) throw DataError("cross_entropy: label count != batch size");
  LossResult<T> r{0.0, nn::Tensor<T>(probs.shape)};
  if (n == 0) return r;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || std::size_t(y) >= k)
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0, " + std::to_string(k) + ")");
    sum -= std::log(std::max(double(probs[i * k + y]), 1e-12));
    for (std::size_t j = 0; j < k; ++j)
      r.grad[i * k + j] = static_cast<T>((double(probs[i * k + j]) - (int(j) == y ? 1.0 : 0.0)) / double(n));
  }
  r.loss = sum / double(n);
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

// v <- momentum * v + grad; param <- param - lr * v.
template <class T>
void sgdm_step(std::span<T> params, std::span<const T> grads, std::span<T> velocities, double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocities.size())
    throw DataError("sgdm_step: parameter, gradient and velocity sizes differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocities[i] = static_cast<T>(momentum * double(velocities[i]) + double(grads[i]));
    params[i] = static_cast<T>(double(params[i]) - lr * double(velocities[i]));
  }
}

template <class T>
class Sgdm {
 public:
  Sgdm(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(nn::Network<T>& net) {
    auto ps = net.params();
    if (velocity_.empty())
      for (auto* p : ps) velocity_.emplace_back(p->value.size(), T(0));
    if (velocity_.size() != ps.size()) throw DataError("sgdm: parameter list changed between steps");
    for (std::size_t i = 0; i < ps.size(); ++i)
      sgdm_step<T>(ps[i]->value.span(), std::as_const(ps[i]->grad).span(), velocity_[i], lr_, momentum_);
  }

 private:
  double lr_, momentum_;
  std::vector<std::vector<T>> velocity_;
};

// ---------------------------------------------------------------------------
// Splits

struct SplitSet {
  std::vector<std::size_t> train, val, test;
  bool operator==(const SplitSet&) const = default;
};

struct SplitRatios {
  double train = 0.70, val = 0.15, test = 0.15;
};

// Largest-remainder apportionment of n items over the three ratios.
inline std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> q{double(n) * r.train, double(n) * r.val, double(n) * r.test};
  std::array<std::size_t, 3> c{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    c[i] = static_cast<std::size_t>(std::floor(q[i] + 1e-9));
    used += c[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return (q[a] - double(c[a])) > (q[b] - double(c[b])) + 1e-12; });
  for (int k = 0; used < n; k = (k + 1) % 3, ++used) ++c[order[k]];
  return c;
}

// Stratified by (subject_id, label): each stratum is shuffled with its own seeded
// stream and cut at the ratios with largest-remainder rounding.
inline SplitSet split_dataset(std::span<const SampleMeta> meta, std::uint64_t seed, const SplitRatios& ratios = {}) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9)
    throw DataError("split_dataset: ratios must be non-negative and sum to 1");
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < meta.size(); ++i) strata[{meta[i].subject_id, class_index(meta[i].label)}].push_back(i);

  SplitSet out;
  for (auto& [key, idx] : strata) {
    const std::string name = key.first + "/" + to_string(label_from_class(key.second));
    if (idx.size() < 3)
      throw DataError("split_dataset: stratum " + name + " has " + std::to_string(idx.size()) +
                      " samples, need at least 3");
    Rng rng(derive_seed(seed, "split:" + name));
    rng.shuffle(idx);
    const auto c = apportion(idx.size(), ratios);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + c[0]);
    out.val.insert(out.val.end(), idx.begin() + c[0], idx.begin() + c[0] + c[1]);
    out.test.insert(out.test.end(), idx.begin() + c[0] + c[1], idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline SplitSet split_dataset(const SpectrogramSet& ds, std::uint64_t seed, const SplitRatios& ratios = {}) {
  return split_dataset(std::span<const SampleMeta>(ds.meta), seed, ratios);
}

// ---------------------------------------------------------------------------
// History

enum class StopReason { patience_exhausted, max_epochs };

inline const char* to_string(StopReason r) {
  return r == StopReason::patience_exhausted ? "patience_exhausted" : "max_epochs";
}

struct ValidationRecord {
  std::size_t iteration = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainHistory {
  std::vector<double> train_loss;  // index i holds iteration i + 1
  std::vector<ValidationRecord> validations;
  StopReason stop_reason = StopReason::max_epochs;
  std::size_t best_iteration = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_run = 0;

  std::size_t iterations() const { return train_loss.size(); }
};

// Columns: iteration,train_loss,val_loss,val_acc (validation columns empty between checks).
inline void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "iteration,train_loss,val_loss,val_acc\n";
  std::size_t v = 0;
  char buf[128];
  for (std::size_t i = 0; i < h.train_loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g", i + 1, h.train_loss[i]);
    os << buf;
    if (v < h.validations.size() && h.validations[v].iteration == i + 1) {
      std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", h.validations[v].loss, h.validations[v].accuracy);
      ++v;
    } else {
      std::snprintf(buf, sizeof buf, ",,\n");
    }
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Loop

// Drives the iteration/validation/early-stopping schedule.
//   step(batch)        trains on positions into the training list, returns the batch loss
//   validate()         returns {val_loss, val_accuracy}
//   on_best()          called whenever the validation loss improves (strictly)
template <class Step, class Validate, class OnBest>
TrainHistory run_training_loop(const TrainConfig& cfg, std::size_t n_train, Step&& step, Validate&& validate_fn,
                               OnBest&& on_best) {
  validate(cfg);
  if (n_train == 0) throw DataError("train: empty training split");
  TrainHistory h;
  Rng shuffler(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(n_train);
  std::size_t since_best = 0;
  std::size_t iteration = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    if (cfg.shuffle) shuffler.shuffle(order);
    h.epochs_run = epoch + 1;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t end = std::min(n_train, start + cfg.batch_size);
      ++iteration;
      h.train_loss.push_back(step(std::span<const std::size_t>(order.data() + start, end - start)));
      if (iteration % cfg.val_frequency_iters != 0) continue;

      const auto [vl, va] = validate_fn();
      h.validations.push_back({iteration, vl, va});
      if (vl < h.best_val_loss) {
        h.best_val_loss = vl;
        h.best_iteration = iteration;
        since_best = 0;
        on_best();
      } else if (++since_best >= cfg.val_patience) {
        h.stop_reason = StopReason::patience_exhausted;
        return h;
      }
    }
  }
  h.stop_reason = StopReason::max_epochs;
  if (h.validations.empty()) h.best_iteration = iteration;
  return h;
}

// Batch tensor [B x input_shape...] from dataset images.
template <class T>
nn::Tensor<T> make_batch(const SpectrogramSet& ds, std::span<const std::size_t> indices, const nn::Shape& input_shape) {
  if (nn::shape_size(input_shape) != ds.image_size())
    throw DataError("train: network input " + nn::shape_str(input_shape) + " does not match " +
                    std::to_string(ds.height) + "x" + std::to_string(ds.width) + " images");
  nn::Shape shape{indices.size()};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  nn::Tensor<T> x(shape);
  const std::size_t sz = ds.image_size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto img = ds.image(indices[b]);
    std::copy(img.begin(), img.end(), x.ptr() + b * sz);
  }
  return x;
}

// Checks that the network's per-sample input is [1 x H x W] (CNN) or [H x W] (LSTM).
template <class T>
void check_input_compatible(const nn::Network<T>& net, const SpectrogramSet& ds) {
  const auto& s = net.input_shape();
  const bool cnn = s == nn::Shape{1, ds.height, ds.width};
  const bool seq = s == nn::Shape{ds.height, ds.width};
  if (!cnn && !seq)
    throw DataError("train: network input " + nn::shape_str(s) + " does not match " + std::to_string(ds.height) +
                    "x" + std::to_string(ds.width) + " images");
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
};

// Infer-mode pass over `indices`; restores the network's previous mode.
template <class T>
EvalResult evaluate_network(nn::Network<T>& net, const SpectrogramSet& ds, std::span<const std::size_t> indices,
                            std::size_t batch_size = 64) {
  const nn::Mode prev = net.mode();
  net.set_mode(nn::Mode::infer);
  EvalResult r;
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const auto probs = net.forward(make_batch<T>(ds, chunk, net.input_shape()));
    const std::size_t k = probs.dim(1);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const T* row = probs.ptr() + b * k;
      const int pred = int(std::max_element(row, row + k) - row);
      const int truth = class_index(ds.meta[chunk[b]].label);
      loss_sum -= std::log(std::max(double(row[truth]), 1e-12));
      correct += pred == truth;
      r.predictions.push_back(pred);
    }
  }
  net.set_mode(prev);
  if (!indices.empty()) {
    r.loss = loss_sum / double(indices.size());
    r.accuracy = double(correct) / double(indices.size());
  }
  return r;
}

// Trains in place and leaves the network holding the parameters of the best
// validation check, in infer mode.
template <class T>
TrainHistory train_model(nn::Network<T>& net, const SpectrogramSet& ds, const SplitSet& split,
                         const TrainConfig& cfg) {
  validate(cfg);
  if (split.train.empty()) throw DataError("train: empty training split");
  if (split.val.empty()) throw DataError("train: empty validation split");
  check_input_compatible(net, ds);

  net.seed_dropout(derive_seed(cfg.seed, "dropout"));
  Sgdm<T> opt(cfg.learning_rate, cfg.momentum);
  std::vector<nn::Tensor<T>> best;
  std::vector<int> labels;
  std::vector<std::size_t> batch_idx;

  const auto step = [&](std::span<const std::size_t> positions) {
    batch_idx.clear();
    labels.clear();
    for (std::size_t p : positions) {
      batch_idx.push_back(split.train[p]);
      labels.push_back(class_index(ds.meta[split.train[p]].label));
    }
    net.set_mode(nn::Mode::train);
    const auto probs = net.forward(make_batch<T>(ds, batch_idx, net.input_shape()));
    const auto ce = cross_entropy<T>(probs, labels);
    net.backward_from_logits(ce.grad);
    opt.step(net);
    return ce.loss;
  };
  const auto val = [&]() {
    const auto r = evaluate_network(net, ds, split.val, cfg.batch_size);
    return std::pair<double, double>{r.loss, r.accuracy};
  };
  const auto on_best = [&]() { best = net.snapshot(); };

  TrainHistory h = run_training_loop(cfg, split.train.size(), step, val, on_best);
  if (!best.empty()) net.restore(best);
  net.set_mode(nn::Mode::infer);
  return h;
}

}  // namespace smind
