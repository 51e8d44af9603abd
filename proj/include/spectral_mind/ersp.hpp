#pragma once

// Event-related spectral power images: Hann-windowed STFT power expressed in
// dB relative to the mean pre-onset power of each frequency row, resampled
// onto a fixed grid.

#include <algorithm>
#include <cmath>
#include <complex>
#include <exception>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <fftw3.h>

#include "spectral_mind/eegio.hpp"
#include "spectral_mind/error.hpp"

namespace smind {

struct ErspConfig {
  double window_len_s = 1.0;
  std::size_t fft_len = 512;
  std::size_t hop_samples = 0;  // 0: derive from the grid width (see resolve_hop)
  double freq_low_hz = 0.5;
  double freq_high_hz = 50.0;
  double baseline_start_s = -1.0;
  double baseline_end_s = 0.0;
  std::size_t grid_h = 224;
  std::size_t grid_w = 224;
  bool zscore = true;
  double zscore_std_floor = 1e-6;
};

inline std::size_t window_samples(const ErspConfig& cfg, double fs) {
  return static_cast<std::size_t>(std::llround(cfg.window_len_s * fs));
}

inline void validate(const ErspConfig& cfg, double fs) {
  if (!(cfg.window_len_s > 0)) throw ConfigError("ersp.window_len_s", "must be positive");
  if (window_samples(cfg, fs) < 2) throw ConfigError("ersp.window_len_s", "window shorter than 2 samples");
  if (window_samples(cfg, fs) > cfg.fft_len)
    throw ConfigError("ersp.fft_len", "window_len_s * fs exceeds fft_len");
  if (!(cfg.freq_low_hz >= 0 && cfg.freq_low_hz < cfg.freq_high_hz && cfg.freq_high_hz <= fs / 2))
    throw ConfigError("ersp.freq_high_hz", "need freq_low_hz < freq_high_hz <= fs/2");
  if (!(cfg.baseline_start_s < cfg.baseline_end_s))
    throw ConfigError("ersp.baseline_end_s", "baseline window is empty");
  if (cfg.grid_h < 2 || cfg.grid_w < 2) throw ConfigError("ersp.grid_h", "grid must be at least 2x2");
  if (!(cfg.zscore_std_floor > 0)) throw ConfigError("ersp.zscore_std_floor", "must be positive");
}

// Largest hop that still yields at least grid_w frames, never below 1.
inline std::size_t resolve_hop(const ErspConfig& cfg, std::size_t n, std::size_t win) {
  if (cfg.hop_samples > 0) return cfg.hop_samples;
  if (n <= win || cfg.grid_w < 2) return 1;
  return std::max<std::size_t>(1, (n - win) / (cfg.grid_w - 1));
}

// One-sided complex STFT, values row-major [n_freqs x n_frames].
struct Stft {
  std::size_t n_freqs = 0;
  std::size_t n_frames = 0;
  std::vector<std::complex<double>> values;
  std::vector<double> freq_axis_hz;
  std::vector<double> time_axis_s;  // frame centers, t0 + (start + win/2) / fs

  std::complex<double> at(std::size_t f, std::size_t t) const { return values[f * n_frames + t]; }
};

struct Spectrogram {
  std::size_t n_freqs = 0;
  std::size_t n_frames = 0;
  std::vector<double> values;  // [n_freqs x n_frames], dB
  std::vector<double> freq_axis_hz;
  std::vector<double> time_axis_s;

  double at(std::size_t f, std::size_t t) const { return values[f * n_frames + t]; }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Owns an r2c plan together with its aligned buffers.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  std::complex<double> output(std::size_t k) const { return {out_[k][0], out_[k][1]}; }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// Periodic Hann window.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

}  // namespace detail

// t0_s is the time of the first sample (epoch start relative to task onset).
inline Stft stft(std::span<const double> x, double fs, const ErspConfig& cfg, double t0_s = 0.0) {
  const std::size_t win = window_samples(cfg, fs);
  if (win > cfg.fft_len) throw ConfigError("ersp.fft_len", "window_len_s * fs exceeds fft_len");
  if (x.size() < win)
    throw DataError("stft: signal of " + std::to_string(x.size()) + " samples is shorter than one window (" +
                    std::to_string(win) + ")");
  const std::size_t hop = resolve_hop(cfg, x.size(), win);

  Stft s;
  s.n_freqs = cfg.fft_len / 2 + 1;
  s.n_frames = 1 + (x.size() - win) / hop;
  s.values.resize(s.n_freqs * s.n_frames);
  for (std::size_t k = 0; k < s.n_freqs; ++k) s.freq_axis_hz.push_back(double(k) * fs / double(cfg.fft_len));
  for (std::size_t t = 0; t < s.n_frames; ++t)
    s.time_axis_s.push_back(t0_s + (double(t * hop) + double(win) / 2.0) / fs);

  const auto w = detail::hann(win);
  detail::RealFft fft(cfg.fft_len);
  double* in = fft.input();
  for (std::size_t t = 0; t < s.n_frames; ++t) {
    std::fill(in, in + cfg.fft_len, 0.0);
    for (std::size_t i = 0; i < win; ++i) in[i] = w[i] * x[t * hop + i];
    fft.execute();
    for (std::size_t k = 0; k < s.n_freqs; ++k) s.values[k * s.n_frames + t] = fft.output(k);
  }
  return s;
}

// ERSP(f,t) = 10 log10((P + eps) / (Pbase(f) + eps)), P = |STFT|^2, rows limited to
// [freq_low_hz, freq_high_hz]. Pbase(f) averages the frames whose center lies in the
// baseline window and whose support ends by baseline_end_s. eps = 1e-12 * max(P).
inline Spectrogram ersp_image(std::span<const double> x, double fs, const ErspConfig& cfg, double t0_s = 0.0) {
  const Stft s = stft(x, fs, cfg, t0_s);
  const double half_win = double(window_samples(cfg, fs)) / (2.0 * fs);
  const double tol = 1e-9;

  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k < s.n_freqs; ++k)
    if (s.freq_axis_hz[k] >= cfg.freq_low_hz - tol && s.freq_axis_hz[k] <= cfg.freq_high_hz + tol) rows.push_back(k);
  if (rows.empty()) throw DataError("ersp_image: no frequency bins inside the configured band");

  std::vector<std::size_t> base;
  for (std::size_t t = 0; t < s.n_frames; ++t) {
    const double c = s.time_axis_s[t];
    if (c >= cfg.baseline_start_s - tol && c <= cfg.baseline_end_s + tol && c + half_win <= cfg.baseline_end_s + tol)
      base.push_back(t);
  }
  if (base.empty()) throw DataError("ersp_image: no STFT frame centers fall inside the baseline window");

  Spectrogram out;
  out.n_freqs = rows.size();
  out.n_frames = s.n_frames;
  out.time_axis_s = s.time_axis_s;
  out.values.resize(out.n_freqs * out.n_frames);

  double pmax = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.freq_axis_hz.push_back(s.freq_axis_hz[rows[r]]);
    for (std::size_t t = 0; t < s.n_frames; ++t) {
      const double p = std::norm(s.at(rows[r], t));
      out.values[r * out.n_frames + t] = p;
      pmax = std::max(pmax, p);
    }
  }
  const double eps = pmax > 0.0 ? 1e-12 * pmax : 1.0;

  for (std::size_t r = 0; r < out.n_freqs; ++r) {
    double* row = out.values.data() + r * out.n_frames;
    double pb = 0.0;
    for (std::size_t t : base) pb += row[t];
    pb /= double(base.size());
    for (std::size_t t = 0; t < out.n_frames; ++t) row[t] = 10.0 * std::log10((row[t] + eps) / (pb + eps));
  }
  return out;
}

// Bilinear resampling onto a uniform H x W grid spanning the spectrogram's axes.
inline std::vector<double> resample_grid(const Spectrogram& spec, std::size_t h, std::size_t w) {
  if (spec.n_freqs < 2 || spec.n_frames < 2)
    throw DataError("resample_grid: degenerate axis (" + std::to_string(spec.n_freqs) + " x " +
                    std::to_string(spec.n_frames) + ")");
  if (h < 2 || w < 2) throw UsageError("resample_grid: target grid must be at least 2x2");

  struct Tap {
    std::size_t i;
    double frac;
  };
  const auto taps = [](const std::vector<double>& axis, std::size_t n) {
    std::vector<Tap> out(n);
    const double lo = axis.front(), hi = axis.back();
    for (std::size_t j = 0; j < n; ++j) {
      const double x = j + 1 == n ? hi : lo + (hi - lo) * double(j) / double(n - 1);
      auto it = std::upper_bound(axis.begin(), axis.end(), x);
      std::size_t i = it == axis.begin() ? 0 : std::size_t(it - axis.begin()) - 1;
      i = std::min(i, axis.size() - 2);
      const double f = std::clamp((x - axis[i]) / (axis[i + 1] - axis[i]), 0.0, 1.0);
      out[j] = {i, f};
    }
    return out;
  };
  const auto rt = taps(spec.freq_axis_hz, h);
  const auto ct = taps(spec.time_axis_s, w);

  std::vector<double> out(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const double* a = spec.values.data() + rt[r].i * spec.n_frames;
    const double* b = a + spec.n_frames;
    const double fr = rt[r].frac;
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = ct[c].i;
      const double fc = ct[c].frac;
      const double top = fc == 0.0 ? a[i] : a[i] + fc * (a[i + 1] - a[i]);
      const double bot = fc == 0.0 ? b[i] : b[i] + fc * (b[i + 1] - b[i]);
      out[r * w + c] = fr == 0.0 ? top : top + fr * (bot - top);
    }
  }
  return out;
}

inline void zscore_inplace(std::span<double> v, double std_floor) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::max(std::sqrt(var / double(v.size())), std_floor);
  for (double& x : v) x = (x - mean) / sd;
}

// Axis ranges the dataset grid spans for epochs of n_times samples.
inline std::pair<std::pair<double, double>, std::pair<double, double>> ersp_axis_ranges(std::size_t n_times, double fs,
                                                                                         const ErspConfig& cfg,
                                                                                         double t0_s) {
  const std::size_t win = window_samples(cfg, fs);
  if (n_times < win) throw DataError("ersp: epoch shorter than one STFT window");
  const std::size_t hop = resolve_hop(cfg, n_times, win);
  const std::size_t frames = 1 + (n_times - win) / hop;
  const double df = fs / double(cfg.fft_len);
  const double tol = 1e-9;
  double flo = -1, fhi = -1;
  for (std::size_t k = 0; k <= cfg.fft_len / 2; ++k) {
    const double f = double(k) * df;
    if (f >= cfg.freq_low_hz - tol && f <= cfg.freq_high_hz + tol) {
      if (flo < 0) flo = f;
      fhi = f;
    }
  }
  const double t_first = t0_s + double(win) / 2.0 / fs;
  const double t_last = t0_s + (double((frames - 1) * hop) + double(win) / 2.0) / fs;
  return {{flo, fhi}, {t_first, t_last}};
}

// One sample per (epoch, channel), epoch-major: sample index = epoch * n_channels + channel.
inline SpectrogramSet build_dataset(const EpochSet& epochs, const ErspConfig& cfg, unsigned jobs = 1) {
  validate(epochs);
  validate(cfg, epochs.sample_rate_hz);
  const double fs = epochs.sample_rate_hz;
  const std::size_t nc = epochs.n_channels();
  const std::size_t n = epochs.n_epochs * nc;

  SpectrogramSet out;
  out.height = cfg.grid_h;
  out.width = cfg.grid_w;
  const auto ranges = ersp_axis_ranges(epochs.n_times, fs, cfg, epochs.t_start_s);
  out.freq_range_hz = ranges.first;
  out.time_range_s = ranges.second;
  out.images.resize(n * out.image_size());
  out.meta.resize(n);
  for (std::size_t e = 0; e < epochs.n_epochs; ++e)
    for (std::size_t c = 0; c < nc; ++c)
      out.meta[e * nc + c] = {epochs.subject_id, epochs.channel_names[c], e, epochs.labels[e]};

  const auto work = [&](std::size_t first, std::size_t stride) {
    std::vector<double> x(epochs.n_times);
    for (std::size_t i = first; i < n; i += stride) {
      const auto tr = epochs.trace(i / nc, i % nc);
      std::copy(tr.begin(), tr.end(), x.begin());
      auto img = resample_grid(ersp_image(x, fs, cfg, epochs.t_start_s), cfg.grid_h, cfg.grid_w);
      if (cfg.zscore) zscore_inplace(img, cfg.zscore_std_floor);
      std::transform(img.begin(), img.end(), out.image(i).begin(), [](double v) { return static_cast<float>(v); });
    }
  };

  jobs = std::max(1u, jobs);
  if (jobs == 1 || n < 2) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (unsigned j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        try {
          work(j, jobs);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  validate(out);
  return out;
}

}  // namespace smind
