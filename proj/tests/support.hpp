#pragma once

// Shared helpers for the unit and acceptance suites.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "spectral_mind.hpp"

namespace smind::testkit {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("smind_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks (double precision)

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;  // "input[i]" or "<param>[i]"
  std::size_t checked = 0;
};

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Scalar probe loss L = sum(r * f(x)) for a fixed random r. `f` must be a pure
// function of the input and the parameters it exposes (dropout with a frozen mask,
// BatchNorm with batch statistics).
inline GradCheck check_gradients(nn::Layer<double>& layer, const nn::Tensor<double>& x, nn::Mode mode,
                                 Rng& rng, double eps = 1e-4) {
  auto y = layer.forward(x, mode);
  nn::Tensor<double> r(y.shape);
  for (auto& v : r.data) v = rng.uniform(-1.0, 1.0);
  const auto dx = layer.backward(r);
  std::vector<nn::Tensor<double>> dparams;
  for (auto* p : layer.params()) dparams.push_back(p->grad);

  const auto loss = [&](const nn::Tensor<double>& in) {
    const auto out = layer.forward(in, mode);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += r[i] * out[i];
    return s;
  };

  GradCheck res;
  const auto note = [&](double a, double n, const std::string& where) {
    const double e = rel_error(a, n);
    ++res.checked;
    if (e > res.max_rel) {
      res.max_rel = e;
      res.worst = where;
    }
  };

  nn::Tensor<double> xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + eps;
    const double lp = loss(xp);
    xp[i] = orig - eps;
    const double lm = loss(xp);
    xp[i] = orig;
    note(dx[i], (lp - lm) / (2 * eps), "input[" + std::to_string(i) + "]");
  }
  auto ps = layer.params();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& v = ps[k]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double lp = loss(x);
      v[i] = orig - eps;
      const double lm = loss(x);
      v[i] = orig;
      note(dparams[k][i], (lp - lm) / (2 * eps), ps[k]->name + "[" + std::to_string(i) + "]");
    }
  }
  return res;
}

inline nn::Tensor<double> random_tensor(const nn::Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor<double> t(s);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Values kept at least `gap` away from zero (ReLU kink).
inline nn::Tensor<double> away_from_zero(nn::Tensor<double> t, double gap = 0.02) {
  for (auto& v : t.data)
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  return t;
}

// Distinct values spaced by 0.01 in random order (unambiguous max-pool argmax).
inline nn::Tensor<double> distinct_tensor(const nn::Shape& s, Rng& rng) {
  nn::Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * double(i) - 0.005 * double(t.size());
  std::vector<double> v = t.data;
  rng.shuffle(v);
  t.data = v;
  return t;
}

// Softmax followed by cross-entropy, checked against finite differences of the
// composite loss with respect to the logits.
inline GradCheck check_softmax_ce(std::size_t n, std::size_t k, Rng& rng, double eps = 1e-4) {
  nn::Softmax<double> sm;
  auto z = random_tensor({n, k}, rng, -2.0, 2.0);
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng.below(k));
  const auto ce = cross_entropy<double>(sm.forward(z, nn::Mode::train), labels);
  GradCheck res;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z;
    zp[i] += eps;
    const double lp = cross_entropy<double>(sm.forward(zp, nn::Mode::train), labels).loss;
    zp[i] = z[i] - eps;
    const double lm = cross_entropy<double>(sm.forward(zp, nn::Mode::train), labels).loss;
    const double e = rel_error(ce.grad[i], (lp - lm) / (2 * eps));
    ++res.checked;
    if (e > res.max_rel) {
      res.max_rel = e;
      res.worst = "logit[" + std::to_string(i) + "]";
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Synthetic metadata

// n_subjects x {MA, BL} strata, `per_stratum` samples each, subjects S01...
inline std::vector<SampleMeta> stratified_meta(std::size_t n_subjects, std::size_t per_stratum,
                                               std::size_t n_channels = 1) {
  std::vector<SampleMeta> meta;
  for (std::size_t s = 0; s < n_subjects; ++s)
    for (std::size_t i = 0; i < 2 * per_stratum; ++i)
      meta.push_back({synth_subject_id(s), synth_channel_name(i % n_channels), i / n_channels,
                      i % 2 ? Label::BL : Label::MA});
  return meta;
}

}  // namespace smind::testkit
