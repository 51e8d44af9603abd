#pragma once

// Synthetic EEG with a known class-separating spectral signature.
//
// Every channel carries band-limited Gaussian noise plus a continuous sinusoid
// at the centre of the signature band. During the 10 s task window of an MA
// trial the sinusoid's amplitude is multiplied by signature_gain; BL trials
// leave it unchanged, so gain 1 makes the classes indistinguishable.
//
// Session timing: 15 s rest, then per trial 2 s instruction, 10 s task and a
// 15-17 s rest, then 15 s rest. Marker onsets sit at task start.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "spectral_mind/dsp.hpp"
#include "spectral_mind/eegio.hpp"
#include "spectral_mind/error.hpp"
#include "spectral_mind/random.hpp"

namespace smind {

struct SynthConfig {
  std::size_t n_subjects = 2;
  std::size_t n_channels = 4;
  std::size_t n_trials_per_class = 20;
  double fs_hz = 200.0;
  double noise_std = 10.0;  // µV
  double signature_low_hz = 8.0;
  double signature_high_hz = 12.0;
  double signature_gain = 3.0;
  double signature_amplitude_uv = 20.0;
  std::uint64_t seed = 0;
};

inline constexpr double kSynthPreRest = 15.0;
inline constexpr double kSynthInstruction = 2.0;
inline constexpr double kSynthTask = 10.0;
inline constexpr double kSynthRestMin = 15.0;
inline constexpr double kSynthRestMax = 17.0;
inline constexpr double kSynthPostRest = 15.0;

inline void validate(const SynthConfig& c) {
  if (c.n_subjects < 1) throw ConfigError("synth.n_subjects", "must be >= 1");
  if (c.n_channels < 1) throw ConfigError("synth.n_channels", "must be >= 1");
  if (c.n_trials_per_class < 1) throw ConfigError("synth.n_trials_per_class", "must be >= 1");
  if (!(c.fs_hz > 2.0)) throw ConfigError("synth.fs_hz", "must be > 2 Hz");
  if (!(c.noise_std >= 0)) throw ConfigError("synth.noise_std", "must be >= 0");
  if (!(c.signature_low_hz > 0 && c.signature_low_hz < c.signature_high_hz && c.signature_high_hz < c.fs_hz / 2))
    throw ConfigError("synth.signature_band_hz", "must satisfy 0 < low < high < fs/2");
  if (!(c.signature_gain >= 1)) throw ConfigError("synth.signature_gain", "must be >= 1");
  if (!(c.signature_amplitude_uv >= 0)) throw ConfigError("synth.signature_amplitude_uv", "must be >= 0");
}

// Channel names in the order of the 22-channel montage; extra channels are "ChN".
inline std::string synth_channel_name(std::size_t c) {
  static const char* names[] = {"F7",   "AFF5h", "F3",  "AFp1", "AFp2", "AFF6h", "F4", "F8",
                                "AFF1h", "AFF2h", "Cz",  "Pz",   "T7",   "C3",    "P7", "P3",
                                "POO1", "POO2",  "P4",  "P8",   "C4",   "T8"};
  if (c < std::size(names)) return names[c];
  return "Ch" + std::to_string(c + 1);
}

inline std::string synth_subject_id(std::size_t s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02zu", s + 1);
  return buf;
}

// White Gaussian noise, zero-phase band-limited to 0.5-50 Hz (capped below
// Nyquist) and rescaled to the requested standard deviation.
inline std::vector<double> band_limited_noise(std::size_t n, double fs, double std_uv, Rng& rng) {
  std::vector<double> w(n);
  for (double& v : w) v = rng.normal();
  const double hi = std::min(50.0, 0.45 * fs);
  const auto bp = design_butterworth_bandpass(3, 0.5, hi, fs);
  auto x = filter_zero_phase(w, bp);
  double mean = 0, ss = 0;
  for (double v : x) mean += v;
  mean /= double(n);
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / double(n));
  const double k = sd > 0 ? std_uv / sd : 0.0;
  for (double& v : x) v = (v - mean) * k;
  return x;
}

inline Recording generate_subject(const SynthConfig& cfg, std::size_t subject) {
  validate(cfg);
  const double fs = cfg.fs_hz;
  Rng rng(derive_seed(cfg.seed, "synth:subject", subject));

  std::vector<Label> labels;
  for (std::size_t i = 0; i < cfg.n_trials_per_class; ++i) {
    labels.push_back(Label::MA);
    labels.push_back(Label::BL);
  }
  rng.shuffle(labels);

  Recording rec;
  rec.sample_rate_hz = fs;
  rec.subject_id = synth_subject_id(subject);
  double t = kSynthPreRest;
  for (Label l : labels) {
    t += kSynthInstruction;
    rec.markers.push_back({t, l});
    t += kSynthTask + rng.uniform(kSynthRestMin, kSynthRestMax);
  }
  t += kSynthPostRest;
  rec.n_samples = static_cast<std::size_t>(std::ceil(t * fs));

  // amplitude envelope shared by all channels
  std::vector<double> env(rec.n_samples, 1.0);
  for (const auto& m : rec.markers) {
    if (m.label != Label::MA) continue;
    const auto a = static_cast<std::size_t>(std::llround(m.onset_s * fs));
    const auto b = std::min(rec.n_samples, static_cast<std::size_t>(std::llround((m.onset_s + kSynthTask) * fs)));
    for (std::size_t i = a; i < b; ++i) env[i] = cfg.signature_gain;
  }

  const double f0 = 0.5 * (cfg.signature_low_hz + cfg.signature_high_hz);
  const double w0 = 2.0 * std::numbers::pi * f0 / fs;
  rec.data.resize(cfg.n_channels * rec.n_samples);
  for (std::size_t c = 0; c < cfg.n_channels; ++c) {
    rec.channel_names.push_back(synth_channel_name(c));
    Rng ch_rng(derive_seed(cfg.seed, "synth:noise:" + rec.subject_id, c));
    const double phase = ch_rng.uniform(0.0, 2.0 * std::numbers::pi);
    const auto noise = band_limited_noise(rec.n_samples, fs, cfg.noise_std, ch_rng);
    auto out = rec.channel(c);
    for (std::size_t i = 0; i < rec.n_samples; ++i)
      out[i] = static_cast<float>(noise[i] + cfg.signature_amplitude_uv * env[i] * std::sin(w0 * double(i) + phase));
  }
  validate(rec);
  return rec;
}

// One recording per subject; identical output for any job count.
inline std::vector<Recording> generate(const SynthConfig& cfg, unsigned jobs = 1) {
  validate(cfg);
  std::vector<Recording> out(cfg.n_subjects);
  std::vector<std::exception_ptr> errors(cfg.n_subjects);
  const auto run = [&](std::size_t s) {
    try {
      out[s] = generate_subject(cfg, s);
    } catch (...) {
      errors[s] = std::current_exception();
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cfg.n_subjects)));
  if (jobs == 1) {
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) run(s);
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        for (std::size_t s = j; s < cfg.n_subjects; s += jobs) run(s);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Band-power threshold oracle

// Mean image value over rows inside [band_low, band_high] and columns at or after t = 0.
inline double band_power_feature(const SpectrogramSet& ds, std::size_t i, double band_low, double band_high) {
  const auto img = ds.image(i);
  const auto [f0, f1] = ds.freq_range_hz;
  const auto [t0, t1] = ds.time_range_s;
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < ds.height; ++r) {
    const double f = f0 + (f1 - f0) * double(r) / double(ds.height - 1);
    if (f < band_low || f > band_high) continue;
    for (std::size_t c = 0; c < ds.width; ++c) {
      const double t = t0 + (t1 - t0) * double(c) / double(ds.width - 1);
      if (t < 0.0) continue;
      sum += img[r * ds.width + c];
      ++n;
    }
  }
  if (n == 0) throw DataError("band_power_feature: band/time window selects no pixels");
  return sum / double(n);
}

struct ThresholdOracle {
  double threshold = 0.0;
  double fit_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Fits "feature > threshold => MA" on even sample indices, scores odd ones.
inline ThresholdOracle band_power_threshold_oracle(const SpectrogramSet& ds, double band_low, double band_high) {
  if (ds.size() < 2) throw DataError("threshold oracle: need at least 2 samples");
  std::vector<std::pair<double, Label>> fit, test;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (i % 2 ? test : fit).push_back({band_power_feature(ds, i, band_low, band_high), ds.meta[i].label});
  std::sort(fit.begin(), fit.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  const auto score = [](const std::vector<std::pair<double, Label>>& v, double th) {
    std::size_t ok = 0;
    for (const auto& [x, l] : v) ok += (x > th) == (l == Label::MA);
    return double(ok) / double(v.size());
  };
  ThresholdOracle best{fit.front().first - 1.0, 0.0, 0.0};
  best.fit_accuracy = score(fit, best.threshold);
  for (std::size_t k = 0; k < fit.size(); ++k) {
    const double th = k + 1 < fit.size() ? 0.5 * (fit[k].first + fit[k + 1].first) : fit[k].first + 1.0;
    const double a = score(fit, th);
    if (a > best.fit_accuracy) best = {th, a, 0.0};
  }
  best.test_accuracy = score(test, best.threshold);
  return best;
}

}  // namespace smind
