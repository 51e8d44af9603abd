#pragma once

// Layer set of the shallow CNN and the LSTM classifier. Every layer caches what
// its backward pass needs during forward; backward() without a preceding
// forward() is an error. Gradients overwrite unless `accumulate` is set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectral_mind/error.hpp"
#include "spectral_mind/nn/tensor.hpp"
#include "spectral_mind/random.hpp"

namespace smind::nn {

using json = nlohmann::json;

enum class Mode { train, infer };

enum class LayerKind { Conv2D, BatchNorm2D, ReLU, MaxPool2D, Flatten, Dense, Softmax, Dropout, LSTM };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::BatchNorm2D: return "BatchNorm2D";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool2D: return "MaxPool2D";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Dense: return "Dense";
    case LayerKind::Softmax: return "Softmax";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::LSTM: return "LSTM";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::Conv2D, LayerKind::BatchNorm2D, LayerKind::ReLU, LayerKind::MaxPool2D, LayerKind::Flatten,
                 LayerKind::Dense, LayerKind::Softmax, LayerKind::Dropout, LayerKind::LSTM})
    if (s == to_string(k)) return k;
  throw DataError("unknown layer kind '" + s + "'");
}

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param(std::string n, Shape s) : name(std::move(n)), value(s), grad(s) {}
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out, bool accumulate = false) = 0;
  // Output shape for a batched input shape.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  // Non-trained persistent tensors (BatchNorm running statistics).
  virtual std::vector<std::pair<std::string, Tensor<T>*>> state() { return {}; }
  virtual json hyper() const { return json::object(); }

  std::vector<const Param<T>*> params() const {
    auto ps = const_cast<Layer*>(this)->params();
    return {ps.begin(), ps.end()};
  }

 protected:
  void require_cache(bool ok) const {
    if (!ok) throw UsageError(std::string(to_string(kind())) + ": backward called without a forward cache");
  }
  static void zero_grads(std::vector<Param<T>*> ps, bool accumulate) {
    if (!accumulate)
      for (auto* p : ps) p->grad.fill(T(0));
  }
};

namespace detail {

template <class T>
void uniform_fill(Tensor<T>& t, double limit, Rng& rng) {
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// ---------------------------------------------------------------------------

// 3x3 kernel, stride 1, zero padding 1: output spatial size equals input.
template <class T>
class Conv2D final : public Layer<T> {
 public:
  Conv2D(std::size_t in_channels, std::size_t filters)
      : in_c_(in_channels), out_c_(filters), w_("weight", {filters, in_channels, 3, 3}), b_("bias", {filters}) {}

  LayerKind kind() const override { return LayerKind::Conv2D; }
  json hyper() const override { return {{"in_channels", in_c_}, {"filters", out_c_}}; }
  std::vector<Param<T>*> params() override { return {&w_, &b_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2D>(*this); }

  void init_he_uniform(Rng& rng) {
    detail::uniform_fill(w_.value, std::sqrt(6.0 / double(in_c_ * 9)), rng);
    b_.value.fill(T(0));
  }
  Param<T>& weight() { return w_; }
  Param<T>& bias() { return b_; }

  Shape output_shape(const Shape& in) const override {
    check(in);
    return {in[0], out_c_, in[2], in[3]};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    check(x.shape);
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), plane = h * w;
    Tensor<T> y({n, out_c_, h, w});
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t f = 0; f < out_c_; ++f) {
        T* out = y.ptr() + (s * out_c_ + f) * plane;
        std::fill(out, out + plane, b_.value[f]);
        for (std::size_t c = 0; c < in_c_; ++c) {
          const T* in = x.ptr() + (s * in_c_ + c) * plane;
          const T* k = w_.value.ptr() + (f * in_c_ + c) * 9;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              shifted_axpy(k[ky * 3 + kx], in, out, h, w, ky - 1, kx - 1);
        }
      }
    }
    x_ = x;
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool accumulate = false) override {
    this->require_cache(cached_);
    this->zero_grads(params(), accumulate);
    const std::size_t n = x_.dim(0), h = x_.dim(2), w = x_.dim(3), plane = h * w;
    Tensor<T> dx(x_.shape);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t f = 0; f < out_c_; ++f) {
        const T* go = g.ptr() + (s * out_c_ + f) * plane;
        double bsum = 0;
        for (std::size_t i = 0; i < plane; ++i) bsum += go[i];
        b_.grad[f] += static_cast<T>(bsum);
        for (std::size_t c = 0; c < in_c_; ++c) {
          const T* in = x_.ptr() + (s * in_c_ + c) * plane;
          T* din = dx.ptr() + (s * in_c_ + c) * plane;
          const T* k = w_.value.ptr() + (f * in_c_ + c) * 9;
          T* dk = w_.grad.ptr() + (f * in_c_ + c) * 9;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              dk[ky * 3 + kx] += shifted_dot(go, in, h, w, ky - 1, kx - 1);
              shifted_axpy_transpose(k[ky * 3 + kx], go, din, h, w, ky - 1, kx - 1);
            }
        }
      }
    }
    return dx;
  }

 private:
  void check(const Shape& in) const {
    if (in.size() != 4 || in[1] != in_c_)
      throw DataError("Conv2D: input " + shape_str(in) + " does not match " + std::to_string(in_c_) +
                      " kernel channels");
  }

  // out[y][x] += a * in[y+dy][x+dx] over the valid region.
  static void shifted_axpy(T a, const T* in, T* out, std::size_t h, std::size_t w, int dy, int dx) {
    if (a == T(0)) return;
    const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
    const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
    for (std::size_t y = y0; y < y1; ++y) {
      const T* src = in + (y + dy) * w + dx;
      T* dst = out + y * w;
      for (std::size_t x = x0; x < x1; ++x) dst[x] += a * src[x];
    }
  }

  // din[y+dy][x+dx] += a * g[y][x] over the valid region.
  static void shifted_axpy_transpose(T a, const T* g, T* din, std::size_t h, std::size_t w, int dy, int dx) {
    const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
    const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
    for (std::size_t y = y0; y < y1; ++y) {
      const T* src = g + y * w;
      T* dst = din + (y + dy) * w + dx;
      for (std::size_t x = x0; x < x1; ++x) dst[x] += a * src[x];
    }
  }

  static T shifted_dot(const T* g, const T* in, std::size_t h, std::size_t w, int dy, int dx) {
    const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
    const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
    T acc = 0;
    for (std::size_t y = y0; y < y1; ++y) {
      const T* a = g + y * w;
      const T* b = in + (y + dy) * w + dx;
      T row = 0;
      for (std::size_t x = x0; x < x1; ++x) row += a[x] * b[x];
      acc += row;
    }
    return acc;
  }

  std::size_t in_c_, out_c_;
  Param<T> w_, b_;
  Tensor<T> x_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------

// Per-channel normalization over (N, H, W). Running statistics start from the
// first training batch and then follow running = m * running + (1 - m) * batch.
template <class T>
class BatchNorm2D final : public Layer<T> {
 public:
  explicit BatchNorm2D(std::size_t channels, double eps = 1e-5, double momentum = 0.9)
      : c_(channels),
        eps_(eps),
        momentum_(momentum),
        gamma_("gamma", {channels}),
        beta_("beta", {channels}),
        running_mean_({channels}),
        running_var_({channels}),
        has_stats_({1}) {
    gamma_.value.fill(T(1));
  }

  LayerKind kind() const override { return LayerKind::BatchNorm2D; }
  json hyper() const override { return {{"channels", c_}, {"eps", eps_}, {"momentum", momentum_}}; }
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor<T>*>> state() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}, {"has_stats", &has_stats_}};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2D>(*this); }

  Param<T>& gamma() { return gamma_; }
  Param<T>& beta() { return beta_; }
  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }
  bool has_running_stats() const { return has_stats_[0] != T(0); }

  Shape output_shape(const Shape& in) const override {
    check(in);
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    check(x.shape);
    const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3), m = n * plane;
    Tensor<T> y(x.shape);
    xhat_ = Tensor<T>(x.shape);
    inv_std_.assign(c_, 0.0);
    train_cache_ = mode == Mode::train;

    if (mode == Mode::train) {
      if (m < 2) throw DataError("BatchNorm2D: training needs at least 2 values per channel");
      const bool first = !has_running_stats();
      for (std::size_t c = 0; c < c_; ++c) {
        double sum = 0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = x.ptr() + (s * c_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        }
        const double mean = sum / double(m);
        double sq = 0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = x.ptr() + (s * c_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) sq += (double(p[i]) - mean) * (double(p[i]) - mean);
        }
        const double var = sq / double(m);
        inv_std_[c] = 1.0 / std::sqrt(var + eps_);
        normalize_channel(x, y, c, mean, inv_std_[c]);
        if (first) {
          running_mean_[c] = static_cast<T>(mean);
          running_var_[c] = static_cast<T>(var);
        } else {
          running_mean_[c] = static_cast<T>(momentum_ * double(running_mean_[c]) + (1 - momentum_) * mean);
          running_var_[c] = static_cast<T>(momentum_ * double(running_var_[c]) + (1 - momentum_) * var);
        }
      }
      has_stats_[0] = T(1);
    } else {
      if (!has_running_stats()) throw DataError("BatchNorm2D: inference before any running statistics exist");
      for (std::size_t c = 0; c < c_; ++c) {
        inv_std_[c] = 1.0 / std::sqrt(double(running_var_[c]) + eps_);
        normalize_channel(x, y, c, double(running_mean_[c]), inv_std_[c]);
      }
    }
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool accumulate = false) override {
    this->require_cache(cached_);
    this->zero_grads(params(), accumulate);
    const std::size_t n = xhat_.dim(0), plane = xhat_.dim(2) * xhat_.dim(3);
    const double m = double(n * plane);
    Tensor<T> dx(xhat_.shape);
    for (std::size_t c = 0; c < c_; ++c) {
      double sg = 0, sgx = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t off = (s * c_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sg += g[off + i];
          sgx += double(g[off + i]) * double(xhat_[off + i]);
        }
      }
      beta_.grad[c] += static_cast<T>(sg);
      gamma_.grad[c] += static_cast<T>(sgx);
      const double k = double(gamma_.value[c]) * inv_std_[c];
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t off = (s * c_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (train_cache_)
            dx[off + i] = static_cast<T>(k / m * (m * double(g[off + i]) - sg - double(xhat_[off + i]) * sgx));
          else
            dx[off + i] = static_cast<T>(k * double(g[off + i]));
        }
      }
    }
    return dx;
  }

 private:
  void check(const Shape& in) const {
    if (in.size() != 4 || in[1] != c_)
      throw DataError("BatchNorm2D: input " + shape_str(in) + " does not have " + std::to_string(c_) + " channels");
  }

  void normalize_channel(const Tensor<T>& x, Tensor<T>& y, std::size_t c, double mean, double inv_std) {
    const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
    const double gm = gamma_.value[c], bt = beta_.value[c];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (double(x[off + i]) - mean) * inv_std;
        xhat_[off + i] = static_cast<T>(xh);
        y[off + i] = static_cast<T>(gm * xh + bt);
      }
    }
  }

  std::size_t c_;
  double eps_, momentum_;
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_, has_stats_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  bool train_cache_ = false;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------

template <class T>
class ReLU final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::ReLU; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    x_ = x;
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool = false) override {
    this->require_cache(cached_);
    Tensor<T> dx(x_.shape);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = x_[i] > T(0) ? g[i] : T(0);
    return dx;
  }

 private:
  Tensor<T> x_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------

// 2x2 window, stride 2. Backward routes each gradient to its window's argmax.
template <class T>
class MaxPool2D final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::MaxPool2D; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2D>(*this); }

  Shape output_shape(const Shape& in) const override {
    check(in);
    return {in[0], in[1], in[2] / 2, in[3] / 2};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> y(output_shape(x.shape));
    in_shape_ = x.shape;
    argmax_.assign(y.size(), 0);
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    for (std::size_t p = 0; p < planes; ++p) {
      const T* in = x.ptr() + p * h * w;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          std::size_t best = (2 * i) * w + 2 * j;
          for (std::size_t idx : {best + 1, best + w, best + w + 1})
            if (in[idx] > in[best]) best = idx;
          const std::size_t o = p * oh * ow + i * ow + j;
          y[o] = in[best];
          argmax_[o] = p * h * w + best;
        }
    }
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool = false) override {
    this->require_cache(cached_);
    Tensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += g[o];
    return dx;
  }

 private:
  static void check(const Shape& in) {
    if (in.size() != 4) throw DataError("MaxPool2D: expected a rank-4 input, got " + shape_str(in));
    if (in[2] % 2 || in[3] % 2) throw DataError("MaxPool2D: odd spatial dimensions " + shape_str(in));
  }

  Shape in_shape_;
  std::vector<std::size_t> argmax_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------

template <class T>
class Flatten final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::Flatten; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }

  Shape output_shape(const Shape& in) const override {
    if (in.empty()) throw DataError("Flatten: scalar input");
    return {in[0], shape_size(in) / std::max<std::size_t>(in[0], 1)};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape;
    cached_ = true;
    return x.reshaped(output_shape(x.shape));
  }

  Tensor<T> backward(const Tensor<T>& g, bool = false) override {
    this->require_cache(cached_);
    return g.reshaped(in_shape_);
  }

 private:
  Shape in_shape_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------

template <class T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in, std::size_t out) : in_(in), out_(out), w_("weight", {out, in}), b_("bias", {out}) {}

  LayerKind kind() const override { return LayerKind::Dense; }
  json hyper() const override { return {{"in", in_}, {"out", out_}}; }
  std::vector<Param<T>*> params() override { return {&w_, &b_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

  void init_he_uniform(Rng& rng) {
    detail::uniform_fill(w_.value, std::sqrt(6.0 / double(in_)), rng);
    b_.value.fill(T(0));
  }
  Param<T>& weight() { return w_; }
  Param<T>& bias() { return b_; }

  Shape output_shape(const Shape& in) const override {
    check(in);
    return {in[0], out_};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    check(x.shape);
    const std::size_t n = x.dim(0);
    Tensor<T> y({n, out_});
    for (std::size_t s = 0; s < n; ++s) {
      const T* xi = x.ptr() + s * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T* wr = w_.value.ptr() + o * in_;
        double acc = b_.value[o];
        for (std::size_t i = 0; i < in_; ++i) acc += double(wr[i]) * double(xi[i]);
        y[s * out_ + o] = static_cast<T>(acc);
      }
    }
    x_ = x;
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool accumulate = false) override {
    this->require_cache(cached_);
    this->zero_grads(params(), accumulate);
    const std::size_t n = x_.dim(0);
    Tensor<T> dx(x_.shape);
    for (std::size_t s = 0; s < n; ++s) {
      const T* xi = x_.ptr() + s * in_;
      T* dxi = dx.ptr() + s * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T go = g[s * out_ + o];
        if (go == T(0)) continue;
        b_.grad[o] += go;
        T* dw = w_.grad.ptr() + o * in_;
        const T* wr = w_.value.ptr() + o * in_;
        for (std::size_t i = 0; i < in_; ++i) {
          dw[i] += go * xi[i];
          dxi[i] += go * wr[i];
        }
      }
    }
    return dx;
  }

 private:
  void check(const Shape& in) const {
    if (in.size() != 2 || in[1] != in_)
      throw DataError("Dense: input " + shape_str(in) + " does not match " + std::to_string(in_) + " inputs");
  }

  std::size_t in_, out_;
  Param<T> w_, b_;
  Tensor<T> x_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------

// Row-wise softmax over the last axis of an [N x K] input.
template <class T>
class Softmax final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::Softmax; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Softmax>(*this); }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 2) throw DataError("Softmax: expected [N x K], got " + shape_str(in));
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    output_shape(x.shape);
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor<T> p(x.shape);
    for (std::size_t s = 0; s < n; ++s) {
      const T* in = x.ptr() + s * k;
      const double mx = *std::max_element(in, in + k);
      double z = 0;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(double(in[j]) - mx);
      for (std::size_t j = 0; j < k; ++j) p[s * k + j] = static_cast<T>(std::exp(double(in[j]) - mx) / z);
    }
    p_ = p;
    cached_ = true;
    return p;
  }

  // Full Jacobian-vector product: dx = p * (g - sum(g * p)).
  Tensor<T> backward(const Tensor<T>& g, bool = false) override {
    this->require_cache(cached_);
    const std::size_t n = p_.dim(0), k = p_.dim(1);
    Tensor<T> dx(p_.shape);
    for (std::size_t s = 0; s < n; ++s) {
      double dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += double(g[s * k + j]) * double(p_[s * k + j]);
      for (std::size_t j = 0; j < k; ++j)
        dx[s * k + j] = static_cast<T>(double(p_[s * k + j]) * (double(g[s * k + j]) - dot));
    }
    return dx;
  }

 private:
  Tensor<T> p_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------

// Inverted dropout: kept units are divided by (1 - rate) in train mode; identity
// in infer mode. With reuse_mask set, train-mode forward reapplies the previous mask.
template <class T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double rate, std::uint64_t seed = 0) : rate_(rate), rng_(seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw DataError("Dropout: rate must be in [0, 1)");
  }

  LayerKind kind() const override { return LayerKind::Dropout; }
  json hyper() const override { return {{"rate", rate_}}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }
  Shape output_shape(const Shape& in) const override { return in; }

  double rate() const { return rate_; }
  void seed(std::uint64_t s) { rng_ = Rng(s); }
  void reuse_mask(bool on) { reuse_ = on; }
  const std::vector<T>& mask() const { return mask_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    train_cache_ = mode == Mode::train && rate_ > 0.0;
    cached_ = true;
    if (!train_cache_) return x;
    if (!reuse_ || mask_.size() != x.size()) {
      mask_.resize(x.size());
      const T keep = static_cast<T>(1.0 / (1.0 - rate_));
      for (auto& m : mask_) m = rng_.uniform() < rate_ ? T(0) : keep;
    }
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask_[i];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool = false) override {
    this->require_cache(cached_);
    if (!train_cache_) return g;
    Tensor<T> dx(g.shape);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * mask_[i];
    return dx;
  }

 private:
  double rate_;
  Rng rng_;
  bool reuse_ = false;
  std::vector<T> mask_;
  bool train_cache_ = false;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------

// Single LSTM layer over [N x T x D] with zero initial state. Gate order in the
// stacked parameters is (input, forget, cell, output). Backward is full BPTT.
template <class T>
class LSTM final : public Layer<T> {
 public:
  LSTM(std::size_t input_dim, std::size_t hidden, bool return_sequences)
      : d_(input_dim),
        h_(hidden),
        seq_(return_sequences),
        wx_("input_weight", {4 * hidden, input_dim}),
        wh_("recurrent_weight", {4 * hidden, hidden}),
        b_("bias", {4 * hidden}) {}

  LayerKind kind() const override { return LayerKind::LSTM; }
  json hyper() const override { return {{"input_dim", d_}, {"hidden", h_}, {"return_sequences", seq_}}; }
  std::vector<Param<T>*> params() override { return {&wx_, &wh_, &b_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<LSTM>(*this); }

  Param<T>& input_weight() { return wx_; }
  Param<T>& recurrent_weight() { return wh_; }
  Param<T>& bias() { return b_; }

  // Glorot-uniform weights, zero bias except forget gate = 1.
  void init_glorot(Rng& rng) {
    detail::uniform_fill(wx_.value, std::sqrt(6.0 / double(d_ + 4 * h_)), rng);
    detail::uniform_fill(wh_.value, std::sqrt(6.0 / double(h_ + 4 * h_)), rng);
    b_.value.fill(T(0));
    for (std::size_t j = h_; j < 2 * h_; ++j) b_.value[j] = T(1);
  }

  Shape output_shape(const Shape& in) const override {
    check(in);
    return seq_ ? Shape{in[0], in[1], h_} : Shape{in[0], h_};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    check(x.shape);
    const std::size_t n = x.dim(0), steps = x.dim(1), g4 = 4 * h_;
    x_ = x;
    gates_.assign(n * steps * g4, 0.0);
    cell_.assign(n * steps * h_, 0.0);
    hid_.assign(n * steps * h_, 0.0);
    Tensor<T> y(output_shape(x.shape));
    std::vector<double> z(g4);

    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t < steps; ++t) {
        const T* xt = x.ptr() + (s * steps + t) * d_;
        const double* hp = t ? &hid_[(s * steps + t - 1) * h_] : nullptr;
        const double* cp = t ? &cell_[(s * steps + t - 1) * h_] : nullptr;
        for (std::size_t r = 0; r < g4; ++r) {
          double acc = b_.value[r];
          const T* wr = wx_.value.ptr() + r * d_;
          for (std::size_t i = 0; i < d_; ++i) acc += double(wr[i]) * double(xt[i]);
          if (hp) {
            const T* ur = wh_.value.ptr() + r * h_;
            for (std::size_t i = 0; i < h_; ++i) acc += double(ur[i]) * hp[i];
          }
          z[r] = acc;
        }
        double* gt = &gates_[(s * steps + t) * g4];
        double* ct = &cell_[(s * steps + t) * h_];
        double* ht = &hid_[(s * steps + t) * h_];
        for (std::size_t j = 0; j < h_; ++j) {
          const double ig = detail::sigmoid(z[j]);
          const double fg = detail::sigmoid(z[h_ + j]);
          const double cg = std::tanh(z[2 * h_ + j]);
          const double og = detail::sigmoid(z[3 * h_ + j]);
          gt[j] = ig;
          gt[h_ + j] = fg;
          gt[2 * h_ + j] = cg;
          gt[3 * h_ + j] = og;
          ct[j] = fg * (cp ? cp[j] : 0.0) + ig * cg;
          ht[j] = og * std::tanh(ct[j]);
        }
        if (seq_)
          for (std::size_t j = 0; j < h_; ++j) y[(s * steps + t) * h_ + j] = static_cast<T>(ht[j]);
      }
      if (!seq_)
        for (std::size_t j = 0; j < h_; ++j) y[s * h_ + j] = static_cast<T>(hid_[(s * steps + steps - 1) * h_ + j]);
    }
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool accumulate = false) override {
    this->require_cache(cached_);
    this->zero_grads(params(), accumulate);
    const std::size_t n = x_.dim(0), steps = x_.dim(1), g4 = 4 * h_;
    Tensor<T> dx(x_.shape);
    std::vector<double> dh(h_), dc(h_), dz(g4), dh_prev(h_);

    for (std::size_t s = 0; s < n; ++s) {
      std::fill(dh.begin(), dh.end(), 0.0);
      std::fill(dc.begin(), dc.end(), 0.0);
      for (std::size_t tt = steps; tt-- > 0;) {
        if (seq_) {
          for (std::size_t j = 0; j < h_; ++j) dh[j] += g[(s * steps + tt) * h_ + j];
        } else if (tt + 1 == steps) {
          for (std::size_t j = 0; j < h_; ++j) dh[j] += g[s * h_ + j];
        }
        const double* gt = &gates_[(s * steps + tt) * g4];
        const double* ct = &cell_[(s * steps + tt) * h_];
        const double* cp = tt ? &cell_[(s * steps + tt - 1) * h_] : nullptr;
        const double* hp = tt ? &hid_[(s * steps + tt - 1) * h_] : nullptr;
        for (std::size_t j = 0; j < h_; ++j) {
          const double ig = gt[j], fg = gt[h_ + j], cg = gt[2 * h_ + j], og = gt[3 * h_ + j];
          const double tc = std::tanh(ct[j]);
          const double dct = dc[j] + dh[j] * og * (1.0 - tc * tc);
          dz[j] = dct * cg * ig * (1.0 - ig);
          dz[h_ + j] = dct * (cp ? cp[j] : 0.0) * fg * (1.0 - fg);
          dz[2 * h_ + j] = dct * ig * (1.0 - cg * cg);
          dz[3 * h_ + j] = dh[j] * tc * og * (1.0 - og);
          dc[j] = dct * fg;
        }
        const T* xt = x_.ptr() + (s * steps + tt) * d_;
        T* dxt = dx.ptr() + (s * steps + tt) * d_;
        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        for (std::size_t r = 0; r < g4; ++r) {
          const double d = dz[r];
          if (d == 0.0) continue;
          b_.grad[r] += static_cast<T>(d);
          T* dwr = wx_.grad.ptr() + r * d_;
          const T* wr = wx_.value.ptr() + r * d_;
          for (std::size_t i = 0; i < d_; ++i) {
            dwr[i] += static_cast<T>(d * double(xt[i]));
            dxt[i] += static_cast<T>(d * double(wr[i]));
          }
          if (hp) {
            T* dur = wh_.grad.ptr() + r * h_;
            const T* ur = wh_.value.ptr() + r * h_;
            for (std::size_t i = 0; i < h_; ++i) {
              dur[i] += static_cast<T>(d * hp[i]);
              dh_prev[i] += d * double(ur[i]);
            }
          }
        }
        dh.swap(dh_prev);
      }
    }
    return dx;
  }

 private:
  void check(const Shape& in) const {
    if (in.size() != 3 || in[2] != d_)
      throw DataError("LSTM: input " + shape_str(in) + " does not match input_dim " + std::to_string(d_));
    if (in[1] == 0) throw DataError("LSTM: sequence length T == 0");
  }

  std::size_t d_, h_;
  bool seq_;
  Param<T> wx_, wh_, b_;
  Tensor<T> x_;
  std::vector<double> gates_, cell_, hid_;
  bool cached_ = false;
};

}  // namespace smind::nn
