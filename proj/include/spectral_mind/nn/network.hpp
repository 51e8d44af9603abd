#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spectral_mind/nn/layers.hpp"
#include "spectral_mind/random.hpp"

namespace smind::nn {

template <class T>
class Network {
 public:
  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network& o) : mode_(o.mode_), arch_(o.arch_), input_shape_(o.input_shape_) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& o) {
    if (this != &o) *this = Network(o);
    return *this;
  }

  template <class L>
  L& add(std::unique_ptr<L> layer) {
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  // Builder description ({"model": "cnn" | "lstm", ...}) and per-sample input shape.
  const json& architecture() const { return arch_; }
  void set_architecture(json a) { arch_ = std::move(a); }
  const Shape& input_shape() const { return input_shape_; }
  void set_input_shape(Shape s) { input_shape_ = std::move(s); }

  Tensor<T> forward(const Tensor<T>& batch) {
    Tensor<T> x = batch;
    for (auto& l : layers_) x = l->forward(x, mode_);
    forwarded_ = true;
    return x;
  }

  // grad is d(loss)/d(output of the last layer).
  Tensor<T> backward(const Tensor<T>& grad, bool accumulate = false) { return backward_range(grad, layers_.size(), accumulate); }

  // grad is d(loss)/d(logits): a trailing Softmax layer is skipped (fused softmax + cross-entropy).
  Tensor<T> backward_from_logits(const Tensor<T>& grad, bool accumulate = false) {
    std::size_t end = layers_.size();
    if (end && layers_.back()->kind() == LayerKind::Softmax) --end;
    return backward_range(grad, end, accumulate);
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  // Trained parameters only; BatchNorm running statistics are not counted.
  std::size_t count_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
      for (const auto* p : std::as_const(*l).params()) n += p->value.size();
    return n;
  }

  Shape output_shape(Shape batch_shape) const {
    for (const auto& l : layers_) batch_shape = l->output_shape(batch_shape);
    return batch_shape;
  }

  void seed_dropout(std::uint64_t seed) {
    std::uint64_t i = 0;
    for (auto& l : layers_)
      if (auto* d = dynamic_cast<Dropout<T>*>(l.get())) d->seed(derive_seed(seed, "dropout", i++));
  }

  // Parameter values plus persistent state, in layer order.
  std::vector<Tensor<T>> snapshot() {
    std::vector<Tensor<T>> out;
    for (auto& l : layers_) {
      for (auto* p : l->params()) out.push_back(p->value);
      for (auto& [name, t] : l->state()) out.push_back(*t);
    }
    return out;
  }

  void restore(const std::vector<Tensor<T>>& snap) {
    std::size_t i = 0;
    for (auto& l : layers_) {
      for (auto* p : l->params()) p->value = snap.at(i++);
      for (auto& [name, t] : l->state()) *t = snap.at(i++);
    }
  }

 private:
  Tensor<T> backward_range(const Tensor<T>& grad, std::size_t end, bool accumulate) {
    if (!forwarded_) throw UsageError("network: backward called without a forward cache");
    Tensor<T> g = grad;
    for (std::size_t i = end; i-- > 0;) g = layers_[i]->backward(g, accumulate);
    return g;
  }

  std::vector<std::unique_ptr<Layer<T>>> layers_;
  Mode mode_ = Mode::train;
  json arch_ = json::object();
  Shape input_shape_;
  bool forwarded_ = false;
};

// Conv(1->10) BN ReLU MaxPool Conv(10->10) BN ReLU Flatten Dense Softmax.
// Per-sample input shape [1 x H x W].
template <class T = float>
Network<T> build_shallow_cnn(std::size_t input_h, std::size_t input_w, std::size_t n_classes, std::uint64_t seed = 0) {
  if (input_h < 2 || input_w < 2 || input_h % 2 || input_w % 2)
    throw DataError("build_shallow_cnn: input dimensions must be even, got " + std::to_string(input_h) + "x" +
                    std::to_string(input_w));
  if (n_classes < 1) throw DataError("build_shallow_cnn: n_classes must be >= 1");
  constexpr std::size_t filters = 10;
  Network<T> net;
  Rng rng(derive_seed(seed, "init"));
  net.add(std::make_unique<Conv2D<T>>(1, filters)).init_he_uniform(rng);
  net.add(std::make_unique<BatchNorm2D<T>>(filters));
  net.add(std::make_unique<ReLU<T>>());
  net.add(std::make_unique<MaxPool2D<T>>());
  net.add(std::make_unique<Conv2D<T>>(filters, filters)).init_he_uniform(rng);
  net.add(std::make_unique<BatchNorm2D<T>>(filters));
  net.add(std::make_unique<ReLU<T>>());
  net.add(std::make_unique<Flatten<T>>());
  net.add(std::make_unique<Dense<T>>(filters * (input_h / 2) * (input_w / 2), n_classes)).init_he_uniform(rng);
  net.add(std::make_unique<Softmax<T>>());
  net.set_architecture({{"model", "cnn"}, {"input_h", input_h}, {"input_w", input_w}, {"n_classes", n_classes}});
  net.set_input_shape({1, input_h, input_w});
  return net;
}

// LSTM(D->256, sequence) Dropout(0.5) LSTM(256->128, last step) Dropout(0.5) Dense Softmax.
// Per-sample input shape [T x D].
template <class T = float>
Network<T> build_lstm_classifier(std::size_t steps, std::size_t input_dim, std::size_t n_classes,
                                 std::uint64_t seed = 0) {
  if (steps < 1 || input_dim < 1) throw DataError("build_lstm_classifier: T and D must be >= 1");
  if (n_classes < 1) throw DataError("build_lstm_classifier: n_classes must be >= 1");
  Network<T> net;
  Rng rng(derive_seed(seed, "init"));
  net.add(std::make_unique<LSTM<T>>(input_dim, 256, true)).init_glorot(rng);
  net.add(std::make_unique<Dropout<T>>(0.5));
  net.add(std::make_unique<LSTM<T>>(256, 128, false)).init_glorot(rng);
  net.add(std::make_unique<Dropout<T>>(0.5));
  net.add(std::make_unique<Dense<T>>(128, n_classes)).init_he_uniform(rng);
  net.add(std::make_unique<Softmax<T>>());
  net.seed_dropout(derive_seed(seed, "dropout"));
  net.set_architecture({{"model", "lstm"}, {"steps", steps}, {"input_dim", input_dim}, {"n_classes", n_classes}});
  net.set_input_shape({steps, input_dim});
  return net;
}

}  // namespace smind::nn
