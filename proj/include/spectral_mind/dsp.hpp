#pragma once

// Preprocessing: Butterworth design (bilinear transform with prewarping),
// zero-phase cascade filtering, decimation, epoching and baseline removal.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "spectral_mind/eegio.hpp"
#include "spectral_mind/error.hpp"

namespace smind {

// Transposed direct form II second-order section, a0 == 1.
// First-order sections are stored with b2 == a2 == 0.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  std::complex<double> response(std::complex<double> z) const {
    const auto zi = 1.0 / z;
    return (b0 + zi * (b1 + zi * b2)) / (1.0 + zi * (a1 + zi * a2));
  }
  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

enum class FilterType { bandpass, lowpass };

struct FilterDesignMeta {
  FilterType type = FilterType::bandpass;
  int order = 0;
  double low_hz = 0, high_hz = 0, fs_hz = 0;
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  FilterDesignMeta design;

  std::complex<double> response(double f_hz) const {
    const std::complex<double> z = std::polar(1.0, 2.0 * std::numbers::pi * f_hz / design.fs_hz);
    std::complex<double> h = 1.0;
    for (const auto& s : sections) h *= s.response(z);
    return h;
  }
  double magnitude(double f_hz) const { return std::abs(response(f_hz)); }

  std::vector<std::complex<double>> poles() const {
    std::vector<std::complex<double>> out;
    for (const auto& s : sections) {
      if (s.a2 == 0.0) {
        out.emplace_back(-s.a1, 0.0);
      } else {
        const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2));
        out.push_back((-s.a1 + disc) / 2.0);
        out.push_back((-s.a1 - disc) / 2.0);
      }
    }
    return out;
  }

  bool is_stable() const {
    for (const auto& p : poles())
      if (!(std::abs(p) < 1.0)) return false;
    return true;
  }

  // Edge padding used by filter_zero_phase: 3 x (number of coefficients of the
  // equivalent single transfer-function polynomial).
  std::size_t pad_length() const { return 3 * (2 * sections.size() + 1); }
};

namespace detail {

inline std::complex<double> bilinear(std::complex<double> s, double fs) {
  return (2.0 * fs + s) / (2.0 * fs - s);
}

inline double prewarp(double f_hz, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * f_hz / fs); }

// Left-half-plane poles of the normalized analog Butterworth prototype.
inline std::vector<std::complex<double>> butterworth_prototype(int order) {
  std::vector<std::complex<double>> p;
  for (int k = 0; k < order; ++k)
    p.push_back(std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order)));
  return p;
}

struct PolePair {
  std::complex<double> first;
  std::complex<double> second;
  bool single = false;
};

// Groups digital poles into conjugate pairs and pairs of real poles.
inline std::vector<PolePair> pair_poles(const std::vector<std::complex<double>>& poles) {
  std::vector<std::complex<double>> upper;
  std::vector<double> real;
  for (const auto& p : poles) {
    if (std::abs(p.imag()) <= 1e-10 * std::max(1.0, std::abs(p)))
      real.push_back(p.real());
    else if (p.imag() > 0)
      upper.push_back(p);
  }
  std::vector<PolePair> out;
  for (const auto& p : upper) out.push_back({p, std::conj(p), false});
  std::sort(real.begin(), real.end());
  for (std::size_t i = 0; i + 1 < real.size(); i += 2) out.push_back({real[i], real[i + 1], false});
  if (real.size() % 2) out.push_back({real.back(), 0.0, true});
  std::sort(out.begin(), out.end(), [](const PolePair& a, const PolePair& b) {
    return std::abs(a.first) < std::abs(b.first);
  });
  return out;
}

inline Biquad section_from_poles(const PolePair& pp, double b0, double b1, double b2) {
  Biquad s;
  s.b0 = b0;
  s.b1 = b1;
  s.b2 = b2;
  if (pp.single) {
    s.a1 = -pp.first.real();
    s.a2 = 0.0;
  } else {
    s.a1 = -(pp.first + pp.second).real();
    s.a2 = (pp.first * pp.second).real();
  }
  return s;
}

}  // namespace detail

// Digital band-pass from an analog Butterworth prototype of the given order
// (2*order poles), both edges prewarped so that |H| = 1/sqrt(2) at low_hz and high_hz.
inline BiquadCascade design_butterworth_bandpass(int order, double low_hz, double high_hz, double fs_hz) {
  if (order < 1) throw UsageError("butterworth: order must be >= 1");
  if (!(fs_hz > 0)) throw UsageError("butterworth: fs must be positive");
  if (!(low_hz > 0 && low_hz < high_hz && high_hz < fs_hz / 2))
    throw UsageError("butterworth: need 0 < low_hz < high_hz < fs/2");

  const double wl = detail::prewarp(low_hz, fs_hz);
  const double wh = detail::prewarp(high_hz, fs_hz);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  std::vector<std::complex<double>> zpoles;
  for (const auto& p : detail::butterworth_prototype(order)) {
    const std::complex<double> pb = p * bw;
    const std::complex<double> disc = std::sqrt(pb * pb - 4.0 * w0sq);
    zpoles.push_back(detail::bilinear((pb + disc) / 2.0, fs_hz));
    zpoles.push_back(detail::bilinear((pb - disc) / 2.0, fs_hz));
  }

  BiquadCascade c;
  c.design = {FilterType::bandpass, order, low_hz, high_hz, fs_hz};
  // Each section carries one zero at z = 1 (DC) and one at z = -1 (Nyquist).
  for (const auto& pp : detail::pair_poles(zpoles)) c.sections.push_back(detail::section_from_poles(pp, 1.0, 0.0, -1.0));

  // Unit gain at the digital image of the analog center frequency.
  const double f0 = fs_hz / std::numbers::pi * std::atan(std::sqrt(w0sq) / (2.0 * fs_hz));
  const double g = std::pow(1.0 / c.magnitude(f0), 1.0 / double(c.sections.size()));
  for (auto& s : c.sections) {
    s.b0 *= g;
    s.b2 *= g;
  }
  return c;
}

inline BiquadCascade design_butterworth_lowpass(int order, double cutoff_hz, double fs_hz) {
  if (order < 1) throw UsageError("butterworth: order must be >= 1");
  if (!(fs_hz > 0 && cutoff_hz > 0 && cutoff_hz < fs_hz / 2))
    throw UsageError("butterworth: need 0 < cutoff_hz < fs/2");
  const double wc = detail::prewarp(cutoff_hz, fs_hz);
  std::vector<std::complex<double>> zpoles;
  for (const auto& p : detail::butterworth_prototype(order)) zpoles.push_back(detail::bilinear(p * wc, fs_hz));

  BiquadCascade c;
  c.design = {FilterType::lowpass, order, 0.0, cutoff_hz, fs_hz};
  for (const auto& pp : detail::pair_poles(zpoles)) {
    Biquad s = pp.single ? detail::section_from_poles(pp, 1.0, 1.0, 0.0)
                         : detail::section_from_poles(pp, 1.0, 2.0, 1.0);
    const double g = 1.0 / s.dc_gain();
    s.b0 *= g;
    s.b1 *= g;
    s.b2 *= g;
    c.sections.push_back(s);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Filtering

namespace detail {

// Runs the cascade in place. State starts at the steady state of a constant
// input equal to `level`, so a constant signal passes without a start-up transient.
inline void run_cascade(const BiquadCascade& c, std::vector<double>& x, double level) {
  double u = level;
  for (const auto& s : c.sections) {
    const double g = s.dc_gain();
    double z1 = (g - s.b0) * u;
    double z2 = (s.b2 - s.a2 * g) * u;
    for (double& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
    u *= g;
  }
}

}  // namespace detail

// Forward-backward filtering with odd reflection padding of pad_length()
// samples on each side. Effective magnitude response is |H|^2, phase is zero.
inline std::vector<double> filter_zero_phase(std::span<const double> x, const BiquadCascade& c) {
  const std::size_t n = x.size();
  const std::size_t pad = c.pad_length();
  if (n <= pad)
    throw DataError("filter_zero_phase: signal too short for edge padding (" + std::to_string(n) +
                    " samples, need more than " + std::to_string(pad) + ")");

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  detail::run_cascade(c, ext, ext.front());
  std::reverse(ext.begin(), ext.end());
  detail::run_cascade(c, ext, ext.front());
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

// Integer downsampling ratio fs_in / fs_out, or DataError.
inline std::size_t decimation_ratio(double fs_in, double fs_out) {
  if (!(fs_in > 0 && fs_out > 0)) throw DataError("decimate: sample rates must be positive");
  const double r = fs_in / fs_out;
  const double rr = std::round(r);
  if (rr < 1 || std::abs(r - rr) > 1e-9 * r)
    throw DataError("decimate: fs_in / fs_out = " + std::to_string(r) + " is not an integer ratio");
  return static_cast<std::size_t>(rr);
}

// Anti-alias low-pass used ahead of decimation.
inline BiquadCascade design_antialias(double fs_in, double fs_out, int order = 8, double cutoff_ratio = 0.35) {
  return design_butterworth_lowpass(order, cutoff_ratio * fs_out, fs_in);
}

inline std::vector<double> decimate(std::span<const double> x, double fs_in, double fs_out,
                                    const BiquadCascade& antialias) {
  const std::size_t r = decimation_ratio(fs_in, fs_out);
  if (r == 1) return {x.begin(), x.end()};
  const auto y = filter_zero_phase(x, antialias);
  std::vector<double> out(x.size() / r);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y[i * r];
  return out;
}

// ---------------------------------------------------------------------------
// Epochs

inline EpochSet segment_epochs(const Recording& rec, double t_start_s = -2.0, double t_end_s = 10.0) {
  if (!(t_end_s > t_start_s)) throw UsageError("segment_epochs: t_end must exceed t_start");
  const double fs = rec.sample_rate_hz;
  EpochSet e;
  e.sample_rate_hz = fs;
  e.t_start_s = t_start_s;
  e.t_end_s = t_end_s;
  e.n_times = static_cast<std::size_t>(std::llround((t_end_s - t_start_s) * fs));
  e.subject_id = rec.subject_id;
  e.channel_names = rec.channel_names;
  e.n_epochs = rec.markers.size();
  e.data.resize(e.n_epochs * rec.n_channels() * e.n_times);

  for (std::size_t m = 0; m < rec.markers.size(); ++m) {
    const auto& mk = rec.markers[m];
    const long long start = std::llround((mk.onset_s + t_start_s) * fs);
    if (start < 0 || std::size_t(start) + e.n_times > rec.n_samples)
      throw DataError("segment_epochs: marker " + std::to_string(m) + " (onset " + std::to_string(mk.onset_s) +
                      " s): window [" + std::to_string(mk.onset_s + t_start_s) + ", " +
                      std::to_string(mk.onset_s + t_end_s) + "] s exceeds recording bounds [0, " +
                      std::to_string(rec.duration_s()) + "] s");
    e.labels.push_back(mk.label);
    for (std::size_t c = 0; c < rec.n_channels(); ++c) {
      const auto src = rec.channel(c).subspan(static_cast<std::size_t>(start), e.n_times);
      std::copy(src.begin(), src.end(), e.trace(m, c).begin());
    }
  }
  return e;
}

// Subtracts, per epoch and channel, the mean over samples with time in [b_start, b_end].
inline EpochSet remove_baseline_mean(EpochSet e, double b_start_s = -1.0, double b_end_s = 0.0) {
  const double tol = 0.5 / e.sample_rate_hz;
  if (!(b_start_s < b_end_s) || b_start_s < e.t_start_s - tol || b_end_s > e.t_end_s + tol)
    throw DataError("remove_baseline_mean: baseline window [" + std::to_string(b_start_s) + ", " +
                    std::to_string(b_end_s) + "] s lies outside the epoch window");
  if (e.n_times == 0) return e;
  const auto i0 = static_cast<std::size_t>(std::max(0LL, std::llround((b_start_s - e.t_start_s) * e.sample_rate_hz)));
  const auto i1 = std::min<std::size_t>(
      e.n_times - 1, static_cast<std::size_t>(std::llround((b_end_s - e.t_start_s) * e.sample_rate_hz)));
  for (std::size_t k = 0; k < e.n_epochs; ++k) {
    for (std::size_t c = 0; c < e.n_channels(); ++c) {
      auto tr = e.trace(k, c);
      double sum = 0.0;
      for (std::size_t i = i0; i <= i1; ++i) sum += tr[i];
      const double mean = sum / double(i1 - i0 + 1);
      for (float& v : tr) v = static_cast<float>(double(v) - mean);
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Full chain

enum class ChainOrder { decimate_then_filter, filter_then_decimate };

struct PreprocessConfig {
  double target_fs_hz = 200.0;
  int bandpass_order = 3;
  double low_hz = 0.5;
  double high_hz = 50.0;
  double epoch_start_s = -2.0;
  double epoch_end_s = 10.0;
  double baseline_start_s = -1.0;
  double baseline_end_s = 0.0;
  ChainOrder chain = ChainOrder::decimate_then_filter;
  int antialias_order = 8;
  double antialias_cutoff_ratio = 0.35;
};

inline void validate(const PreprocessConfig& c) {
  if (!(c.target_fs_hz > 0)) throw ConfigError("dsp.target_fs_hz", "must be positive");
  if (c.bandpass_order < 1 || c.bandpass_order > 10) throw ConfigError("dsp.bandpass_order", "must be in [1, 10]");
  if (!(c.low_hz > 0 && c.low_hz < c.high_hz && c.high_hz < c.target_fs_hz / 2))
    throw ConfigError("dsp.high_hz", "need 0 < low_hz < high_hz < target_fs_hz/2");
  if (!(c.epoch_start_s < c.epoch_end_s)) throw ConfigError("dsp.epoch_end_s", "must exceed epoch_start_s");
  if (!(c.baseline_start_s < c.baseline_end_s)) throw ConfigError("dsp.baseline_end_s", "must exceed baseline_start_s");
  if (c.baseline_start_s < c.epoch_start_s || c.baseline_end_s > c.epoch_end_s)
    throw ConfigError("dsp.baseline_start_s", "baseline window must lie inside the epoch window");
  if (c.antialias_order < 1 || c.antialias_order > 16) throw ConfigError("dsp.antialias_order", "must be in [1, 16]");
  if (!(c.antialias_cutoff_ratio > 0 && c.antialias_cutoff_ratio < 0.5))
    throw ConfigError("dsp.antialias_cutoff_ratio", "must be in (0, 0.5)");
}

// Returns the recording resampled to target_fs_hz and band-passed, in the configured order.
inline Recording filter_recording(const Recording& rec, const PreprocessConfig& cfg) {
  validate(rec);
  const std::size_t ratio = decimation_ratio(rec.sample_rate_hz, cfg.target_fs_hz);
  const BiquadCascade bp_native = ratio > 1 && cfg.chain == ChainOrder::filter_then_decimate
                                      ? design_butterworth_bandpass(cfg.bandpass_order, cfg.low_hz, cfg.high_hz, rec.sample_rate_hz)
                                      : BiquadCascade{};
  const BiquadCascade bp_target =
      design_butterworth_bandpass(cfg.bandpass_order, cfg.low_hz, cfg.high_hz, cfg.target_fs_hz);
  const BiquadCascade aa = ratio > 1 ? design_antialias(rec.sample_rate_hz, cfg.target_fs_hz, cfg.antialias_order,
                                                        cfg.antialias_cutoff_ratio)
                                     : BiquadCascade{};

  Recording out;
  out.sample_rate_hz = cfg.target_fs_hz;
  out.channel_names = rec.channel_names;
  out.markers = rec.markers;
  out.subject_id = rec.subject_id;
  out.n_samples = rec.n_samples / ratio;
  out.data.resize(out.n_channels() * out.n_samples);

  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    const auto src = rec.channel(c);
    std::vector<double> x(src.begin(), src.end());
    if (ratio == 1) {
      x = filter_zero_phase(x, bp_target);
    } else if (cfg.chain == ChainOrder::decimate_then_filter) {
      x = filter_zero_phase(decimate(x, rec.sample_rate_hz, cfg.target_fs_hz, aa), bp_target);
    } else {
      x = decimate(filter_zero_phase(x, bp_native), rec.sample_rate_hz, cfg.target_fs_hz, aa);
    }
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < out.n_samples; ++i) dst[i] = static_cast<float>(x[i]);
  }
  return out;
}

inline EpochSet preprocess(const Recording& rec, const PreprocessConfig& cfg = {}) {
  const Recording filtered = filter_recording(rec, cfg);
  return remove_baseline_mean(segment_epochs(filtered, cfg.epoch_start_s, cfg.epoch_end_s), cfg.baseline_start_s,
                              cfg.baseline_end_s);
}

}  // namespace smind
