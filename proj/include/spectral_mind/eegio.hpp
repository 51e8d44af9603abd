#pragma once

// Recording / EpochSet / SpectrogramSet containers and their file formats
// (.eegr, .eegp, .eegs), plus the CSV import route.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spectral_mind/container.hpp"
#include "spectral_mind/error.hpp"

namespace smind {

// Class index used by the classifiers: BL = 0, MA = 1. MA is the positive class.
enum class Label : std::uint8_t { BL = 0, MA = 1 };

inline const char* to_string(Label l) { return l == Label::MA ? "MA" : "BL"; }

inline Label parse_label(const std::string& s) {
  if (s == "MA") return Label::MA;
  if (s == "BL") return Label::BL;
  throw DataError("unknown label '" + s + "'");
}

inline int class_index(Label l) { return static_cast<int>(l); }
inline Label label_from_class(int k) { return k == 1 ? Label::MA : Label::BL; }

struct Marker {
  double onset_s = 0.0;
  Label label = Label::BL;
  bool operator==(const Marker&) const = default;
};

struct Recording {
  double sample_rate_hz = 0.0;
  std::vector<std::string> channel_names;
  std::size_t n_samples = 0;
  std::vector<float> data;  // [n_channels x n_samples], row-major
  std::vector<Marker> markers;
  std::string subject_id;

  std::size_t n_channels() const { return channel_names.size(); }
  double duration_s() const { return double(n_samples) / sample_rate_hz; }

  std::span<const float> channel(std::size_t c) const {
    return {data.data() + c * n_samples, n_samples};
  }
  std::span<float> channel(std::size_t c) { return {data.data() + c * n_samples, n_samples}; }

  bool operator==(const Recording&) const = default;
};

struct EpochSet {
  double sample_rate_hz = 0.0;
  double t_start_s = 0.0;
  double t_end_s = 0.0;
  std::size_t n_epochs = 0;
  std::size_t n_times = 0;
  std::vector<float> data;  // [n_epochs x n_channels x n_times]
  std::vector<Label> labels;
  std::string subject_id;
  std::vector<std::string> channel_names;

  std::size_t n_channels() const { return channel_names.size(); }

  std::span<const float> trace(std::size_t epoch, std::size_t ch) const {
    return {data.data() + (epoch * n_channels() + ch) * n_times, n_times};
  }
  std::span<float> trace(std::size_t epoch, std::size_t ch) {
    return {data.data() + (epoch * n_channels() + ch) * n_times, n_times};
  }
  double time_of(std::size_t k) const { return t_start_s + double(k) / sample_rate_hz; }

  bool operator==(const EpochSet&) const = default;
};

struct SampleMeta {
  std::string subject_id;
  std::string channel_name;
  std::size_t epoch_index = 0;
  Label label = Label::BL;
  bool operator==(const SampleMeta&) const = default;
};

struct SpectrogramSet {
  std::size_t height = 0;  // frequency rows, lowest frequency first
  std::size_t width = 0;   // time columns
  std::vector<float> images;  // [n_samples x height x width]
  std::vector<SampleMeta> meta;
  std::pair<double, double> freq_range_hz{0.0, 0.0};
  std::pair<double, double> time_range_s{0.0, 0.0};

  std::size_t size() const { return meta.size(); }
  std::size_t image_size() const { return height * width; }
  std::span<const float> image(std::size_t i) const {
    return {images.data() + i * image_size(), image_size()};
  }
  std::span<float> image(std::size_t i) { return {images.data() + i * image_size(), image_size()}; }

  bool operator==(const SpectrogramSet&) const = default;
};

// ---------------------------------------------------------------------------
// Validation

inline void validate(const Recording& r) {
  if (!(r.sample_rate_hz > 0.0)) throw DataError("recording: sample_rate_hz must be positive");
  std::set<std::string> seen;
  for (const auto& n : r.channel_names)
    if (!seen.insert(n).second) throw DataError("recording: duplicate channel name '" + n + "'");
  if (r.data.size() != r.n_channels() * r.n_samples)
    throw DataError("recording: channel count mismatch: data holds " +
                    std::to_string(r.data.size()) + " values for " +
                    std::to_string(r.n_channels()) + " channels x " +
                    std::to_string(r.n_samples) + " samples");
  const double dur = r.duration_s();
  for (std::size_t i = 0; i < r.markers.size(); ++i) {
    const double t = r.markers[i].onset_s;
    if (!(t >= 0.0 && t <= dur))
      throw DataError("recording: marker " + std::to_string(i) + " out of range (onset_s = " +
                      std::to_string(t) + ")");
  }
}

inline void validate(const EpochSet& e) {
  if (!(e.sample_rate_hz > 0.0)) throw DataError("epochs: sample_rate_hz must be positive");
  const auto expected = static_cast<std::size_t>(std::llround((e.t_end_s - e.t_start_s) * e.sample_rate_hz));
  if (e.n_times != expected)
    throw DataError("epochs: n_times " + std::to_string(e.n_times) + " != round((t_end - t_start) * fs) = " +
                    std::to_string(expected));
  if (e.labels.size() != e.n_epochs) throw DataError("epochs: labels length != n_epochs");
  if (e.data.size() != e.n_epochs * e.n_channels() * e.n_times)
    throw DataError("epochs: data size does not match n_epochs x n_channels x n_times");
}

inline void validate(const SpectrogramSet& s) {
  if (s.height < 2 || s.width < 2) throw DataError("spectrograms: grid must be at least 2x2");
  if (s.images.size() != s.size() * s.image_size())
    throw DataError("spectrograms: image payload does not match meta length x H x W");
  for (std::size_t i = 0; i < s.images.size(); ++i)
    if (!std::isfinite(s.images[i]))
      throw DataError("spectrograms: non-finite value in sample " + std::to_string(i / s.image_size()));
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_recording(const Recording& r, const std::string& path) {
  validate(r);
  json h;
  h["schema_version"] = kSchemaVersion;
  h["kind"] = "recording";
  h["sample_rate_hz"] = r.sample_rate_hz;
  h["channel_names"] = r.channel_names;
  h["n_samples"] = r.n_samples;
  h["subject_id"] = r.subject_id;
  json ms = json::array();
  for (const auto& m : r.markers) ms.push_back({{"onset_s", m.onset_s}, {"label", to_string(m.label)}});
  h["markers"] = ms;
  write_container(path, magic::recording, h, r.data);
}

inline Recording load_recording(const std::string& path) {
  Container c = read_container(path, magic::recording);
  const json& h = c.header;
  Recording r;
  r.sample_rate_hz = header_field<double>(h, "sample_rate_hz", path);
  r.channel_names = header_field<std::vector<std::string>>(h, "channel_names", path);
  r.n_samples = header_field<std::size_t>(h, "n_samples", path);
  r.subject_id = header_field<std::string>(h, "subject_id", path);
  const json ms = header_field<json>(h, "markers", path);
  for (const auto& m : ms) {
    Marker mk;
    try {
      mk.onset_s = m.at("onset_s").get<double>();
      mk.label = parse_label(m.at("label").get<std::string>());
    } catch (const json::exception&) {
      throw DataError(path + ": offset 12: header field 'markers' has a malformed entry");
    }
    r.markers.push_back(mk);
  }
  r.data = std::move(c.payload);
  try {
    validate(r);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  return r;
}

inline void save_epochs(const EpochSet& e, const std::string& path) {
  validate(e);
  json h;
  h["schema_version"] = kSchemaVersion;
  h["kind"] = "epochs";
  h["sample_rate_hz"] = e.sample_rate_hz;
  h["t_start_s"] = e.t_start_s;
  h["t_end_s"] = e.t_end_s;
  h["n_epochs"] = e.n_epochs;
  h["n_times"] = e.n_times;
  h["subject_id"] = e.subject_id;
  h["channel_names"] = e.channel_names;
  json labels = json::array();
  for (Label l : e.labels) labels.push_back(to_string(l));
  h["labels"] = labels;
  write_container(path, magic::epochs, h, e.data);
}

inline EpochSet load_epochs(const std::string& path) {
  Container c = read_container(path, magic::epochs);
  const json& h = c.header;
  EpochSet e;
  e.sample_rate_hz = header_field<double>(h, "sample_rate_hz", path);
  e.t_start_s = header_field<double>(h, "t_start_s", path);
  e.t_end_s = header_field<double>(h, "t_end_s", path);
  e.n_epochs = header_field<std::size_t>(h, "n_epochs", path);
  e.n_times = header_field<std::size_t>(h, "n_times", path);
  e.subject_id = header_field<std::string>(h, "subject_id", path);
  e.channel_names = header_field<std::vector<std::string>>(h, "channel_names", path);
  for (const auto& s : header_field<std::vector<std::string>>(h, "labels", path)) e.labels.push_back(parse_label(s));
  e.data = std::move(c.payload);
  try {
    validate(e);
  } catch (const DataError& err) {
    throw DataError(path + ": " + err.what());
  }
  return e;
}

inline void save_spectrograms(const SpectrogramSet& s, const std::string& path) {
  validate(s);
  json h;
  h["schema_version"] = kSchemaVersion;
  h["kind"] = "spectrograms";
  h["n_samples"] = s.size();
  h["height"] = s.height;
  h["width"] = s.width;
  h["freq_range_hz"] = {s.freq_range_hz.first, s.freq_range_hz.second};
  h["time_range_s"] = {s.time_range_s.first, s.time_range_s.second};
  json subj = json::array(), chan = json::array(), ep = json::array(), lab = json::array();
  for (const auto& m : s.meta) {
    subj.push_back(m.subject_id);
    chan.push_back(m.channel_name);
    ep.push_back(m.epoch_index);
    lab.push_back(to_string(m.label));
  }
  h["meta"] = {{"subject_id", subj}, {"channel_name", chan}, {"epoch_index", ep}, {"label", lab}};
  write_container(path, magic::spectrograms, h, s.images);
}

inline SpectrogramSet load_spectrograms(const std::string& path) {
  Container c = read_container(path, magic::spectrograms);
  const json& h = c.header;
  SpectrogramSet s;
  const auto n = header_field<std::size_t>(h, "n_samples", path);
  s.height = header_field<std::size_t>(h, "height", path);
  s.width = header_field<std::size_t>(h, "width", path);
  const auto fr = header_field<std::vector<double>>(h, "freq_range_hz", path);
  const auto tr = header_field<std::vector<double>>(h, "time_range_s", path);
  if (fr.size() != 2 || tr.size() != 2) throw DataError(path + ": offset 12: header ranges must have 2 entries");
  s.freq_range_hz = {fr[0], fr[1]};
  s.time_range_s = {tr[0], tr[1]};
  const json meta = header_field<json>(h, "meta", path);
  std::vector<std::string> subj, chan, lab;
  std::vector<std::size_t> ep;
  try {
    subj = meta.at("subject_id").get<std::vector<std::string>>();
    chan = meta.at("channel_name").get<std::vector<std::string>>();
    ep = meta.at("epoch_index").get<std::vector<std::size_t>>();
    lab = meta.at("label").get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw DataError(path + ": offset 12: header field 'meta' malformed");
  }
  if (subj.size() != n || chan.size() != n || ep.size() != n || lab.size() != n)
    throw DataError(path + ": offset 12: header field 'meta' length != n_samples");
  s.meta.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.meta[i] = {subj[i], chan[i], ep[i], parse_label(lab[i])};
  s.images = std::move(c.payload);
  try {
    validate(s);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  return s;
}

// Appends b to a. Grids and axis ranges must agree.
inline void append(SpectrogramSet& a, const SpectrogramSet& b) {
  if (a.size() == 0 && a.height == 0) {
    a = b;
    return;
  }
  if (a.height != b.height || a.width != b.width)
    throw DataError("spectrograms: cannot concatenate sets with different grids");
  if (a.freq_range_hz != b.freq_range_hz || a.time_range_s != b.time_range_s)
    throw DataError("spectrograms: cannot concatenate sets with different axis ranges");
  a.images.insert(a.images.end(), b.images.begin(), b.images.end());
  a.meta.insert(a.meta.end(), b.meta.begin(), b.meta.end());
}

// ---------------------------------------------------------------------------
// CSV import

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  std::istringstream is(s);
  is.imbue(std::locale::classic());
  is >> v;
  return !is.fail() && is.eof();
}

}  // namespace detail

// Channels CSV: header row of channel names, one sample per row.
// Markers CSV: rows of "onset_s,label" (an optional "onset_s,label" header row).
inline Recording import_csv(const std::string& path, double sample_rate_hz, const std::string& marker_path,
                            const std::string& subject_id = "") {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  Recording r;
  r.sample_rate_hz = sample_rate_hz;
  r.subject_id = subject_id;

  std::string line;
  if (!std::getline(is, line)) throw DataError(path + ": missing header row");
  r.channel_names = detail::split_csv_line(line);
  const std::size_t nc = r.channel_names.size();

  std::vector<std::vector<float>> cols(nc);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != nc)
      throw DataError(path + ": line " + std::to_string(lineno) + ": ragged row (" +
                      std::to_string(fields.size()) + " fields, expected " + std::to_string(nc) + ")");
    for (std::size_t c = 0; c < nc; ++c) {
      double v;
      if (!detail::parse_double(fields[c], v))
        throw DataError(path + ": line " + std::to_string(lineno) + ": column '" + r.channel_names[c] +
                        "': not a number");
      cols[c].push_back(static_cast<float>(v));
    }
  }
  r.n_samples = nc ? cols[0].size() : 0;
  r.data.reserve(nc * r.n_samples);
  for (const auto& c : cols) r.data.insert(r.data.end(), c.begin(), c.end());

  std::ifstream ms(marker_path);
  if (!ms) throw DataError("cannot open '" + marker_path + "'");
  lineno = 0;
  while (std::getline(ms, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (lineno == 1 && !f.empty() && f[0] == "onset_s") continue;
    if (f.size() != 2)
      throw DataError(marker_path + ": line " + std::to_string(lineno) + ": expected 'onset_s,label'");
    double onset;
    if (!detail::parse_double(f[0], onset))
      throw DataError(marker_path + ": line " + std::to_string(lineno) + ": onset_s is not a number");
    try {
      r.markers.push_back({onset, parse_label(f[1])});
    } catch (const DataError& e) {
      throw DataError(marker_path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate(r);
  return r;
}

}  // namespace smind
