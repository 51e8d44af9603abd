#pragma once

// Pipeline configuration: defaults, TOML/JSON loading, dotted-key overrides and
// validation against each module's invariants.
//
// The TOML reader covers the subset configuration files need: [tables] and
// [dotted.tables], bare/quoted/dotted keys, basic and literal strings,
// integers, floats, booleans and (possibly multi-line) arrays of those.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spectral_mind/container.hpp"
#include "spectral_mind/dsp.hpp"
#include "spectral_mind/ersp.hpp"
#include "spectral_mind/error.hpp"
#include "spectral_mind/synth.hpp"
#include "spectral_mind/train.hpp"

namespace smind {

// ---------------------------------------------------------------------------
// TOML subset -> JSON

namespace toml_detail {

struct Cursor {
  const std::string& s;
  std::size_t i = 0;
  std::string where;  // "file:line"

  bool done() const { return i >= s.size(); }
  char peek() const { return done() ? '\0' : s[i]; }
  void skip_ws() {
    while (!done() && (s[i] == ' ' || s[i] == '\t')) ++i;
  }
  // Whitespace, newlines and comments (inside arrays).
  void skip_all() {
    for (;;) {
      while (!done() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
      if (peek() != '#') return;
      while (!done() && s[i] != '\n') ++i;
    }
  }
  [[noreturn]] void fail(const std::string& what) const { throw DataError(where + ": " + what); }
};

inline std::string parse_basic_string(Cursor& c) {
  ++c.i;  // opening quote
  std::string out;
  while (!c.done() && c.peek() != '"') {
    char ch = c.s[c.i++];
    if (ch == '\n') c.fail("unterminated string");
    if (ch != '\\') {
      out += ch;
      continue;
    }
    if (c.done()) c.fail("unterminated escape");
    switch (c.s[c.i++]) {
      case '"': out += '"'; break;
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case 'r': out += '\r'; break;
      default: c.fail("unsupported escape sequence");
    }
  }
  if (c.done()) c.fail("unterminated string");
  ++c.i;
  return out;
}

inline std::string parse_literal_string(Cursor& c) {
  ++c.i;
  const std::size_t end = c.s.find('\'', c.i);
  if (end == std::string::npos || c.s.find('\n', c.i) < end) c.fail("unterminated string");
  std::string out = c.s.substr(c.i, end - c.i);
  c.i = end + 1;
  return out;
}

inline json parse_scalar_token(Cursor& c) {
  const std::size_t start = c.i;
  while (!c.done() && c.peek() != ',' && c.peek() != ']' && c.peek() != '#' && c.peek() != '\n' &&
         c.peek() != ' ' && c.peek() != '\t' && c.peek() != '\r')
    ++c.i;
  std::string tok = c.s.substr(start, c.i - start);
  if (tok.empty()) c.fail("missing value");
  if (tok == "true") return true;
  if (tok == "false") return false;
  if (tok == "inf" || tok == "+inf" || tok == "-inf" || tok == "nan" || tok == "+nan" || tok == "-nan")
    c.fail("non-finite numbers are not accepted: '" + tok + "'");
  std::string num;
  for (std::size_t k = 0; k < tok.size(); ++k) {
    if (tok[k] == '_') {
      if (k == 0 || k + 1 == tok.size() || !std::isdigit(static_cast<unsigned char>(tok[k - 1])) ||
          !std::isdigit(static_cast<unsigned char>(tok[k + 1])))
        c.fail("malformed number '" + tok + "'");
      continue;
    }
    num += tok[k];
  }
  const bool is_float = num.find_first_of(".eE") != std::string::npos;
  char* end = nullptr;
  if (is_float) {
    const double v = std::strtod(num.c_str(), &end);
    if (end != num.c_str() + num.size()) c.fail("malformed value '" + tok + "'");
    return v;
  }
  if (num.empty() || !(std::isdigit(static_cast<unsigned char>(num[0])) || num[0] == '-' || num[0] == '+'))
    c.fail("malformed value '" + tok + "'");
  if (num[0] == '-') {
    const long long v = std::strtoll(num.c_str(), &end, 10);
    if (end != num.c_str() + num.size()) c.fail("malformed value '" + tok + "'");
    return v;
  }
  const unsigned long long v = std::strtoull(num.c_str() + (num[0] == '+'), &end, 10);
  if (end != num.c_str() + num.size()) c.fail("malformed value '" + tok + "'");
  return v;
}

inline json parse_value(Cursor& c) {
  c.skip_ws();
  switch (c.peek()) {
    case '"':
      if (c.s.compare(c.i, 3, "\"\"\"") == 0) c.fail("multi-line strings are not supported");
      return parse_basic_string(c);
    case '\'': return parse_literal_string(c);
    case '{': c.fail("inline tables are not supported");
    case '[': {
      ++c.i;
      json arr = json::array();
      for (;;) {
        c.skip_all();
        if (c.peek() == ']') {
          ++c.i;
          return arr;
        }
        arr.push_back(parse_value(c));
        c.skip_all();
        if (c.peek() == ',') {
          ++c.i;
        } else if (c.peek() != ']') {
          c.fail("expected ',' or ']' in array");
        }
      }
    }
    default: return parse_scalar_token(c);
  }
}

inline std::vector<std::string> parse_key(Cursor& c) {
  std::vector<std::string> parts;
  for (;;) {
    c.skip_ws();
    if (c.peek() == '"') {
      parts.push_back(parse_basic_string(c));
    } else if (c.peek() == '\'') {
      parts.push_back(parse_literal_string(c));
    } else {
      const std::size_t start = c.i;
      while (!c.done() && (std::isalnum(static_cast<unsigned char>(c.peek())) || c.peek() == '_' || c.peek() == '-'))
        ++c.i;
      if (c.i == start) c.fail("expected a key");
      parts.push_back(c.s.substr(start, c.i - start));
    }
    c.skip_ws();
    if (c.peek() != '.') return parts;
    ++c.i;
  }
}

inline std::size_t line_of(const std::string& s, std::size_t pos) {
  return 1 + static_cast<std::size_t>(std::count(s.begin(), s.begin() + std::min(pos, s.size()), '\n'));
}

}  // namespace toml_detail

inline json parse_toml(const std::string& text, const std::string& origin = "<toml>") {
  using namespace toml_detail;
  json root = json::object();
  json* table = &root;
  Cursor c{text, 0, origin};
  const auto locate = [&] { c.where = origin + ":" + std::to_string(line_of(text, c.i)); };

  const auto descend = [&](json* node, const std::vector<std::string>& path, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      json& next = (*node)[path[k]];
      if (next.is_null()) next = json::object();
      if (!next.is_object()) c.fail("key '" + path[k] + "' is not a table");
      node = &next;
    }
    return node;
  };

  while (true) {
    c.skip_all();
    if (c.done()) break;
    locate();
    if (c.peek() == '[') {
      ++c.i;
      if (c.peek() == '[') c.fail("arrays of tables are not supported");
      const auto path = parse_key(c);
      if (c.peek() != ']') c.fail("expected ']' after table name");
      ++c.i;
      table = descend(&root, path, path.size());
    } else {
      const auto path = parse_key(c);
      if (c.peek() != '=') c.fail("expected '=' after key");
      ++c.i;
      json* parent = descend(table, path, path.size() - 1);
      if (parent->contains(path.back())) c.fail("duplicate key '" + path.back() + "'");
      (*parent)[path.back()] = parse_value(c);
    }
    c.skip_ws();
    if (c.peek() == '#')
      while (!c.done() && c.peek() != '\n') ++c.i;
    if (c.peek() == '\r') ++c.i;
    if (!c.done() && c.peek() != '\n') c.fail("unexpected trailing characters");
  }
  return root;
}

// ---------------------------------------------------------------------------
// PipelineConfig

enum class ModelKind { cnn, lstm };

inline const char* to_string(ModelKind k) { return k == ModelKind::cnn ? "cnn" : "lstm"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "cnn") return ModelKind::cnn;
  if (s == "lstm") return ModelKind::lstm;
  throw ConfigError("model.kind", "expected 'cnn' or 'lstm', got '" + s + "'");
}

inline const char* to_string(ChainOrder c) {
  return c == ChainOrder::decimate_then_filter ? "decimate_then_filter" : "filter_then_decimate";
}

struct EvalConfig {
  std::size_t n_splits = 20;
  std::uint64_t base_seed = 0;
  SplitRatios ratios;
};

struct PipelineConfig {
  PreprocessConfig dsp;
  ErspConfig ersp;
  TrainConfig train;
  SynthConfig synth;
  ModelKind model = ModelKind::cnn;
  EvalConfig eval;
};

inline json to_json(const PipelineConfig& c) {
  json j;
  j["dsp"] = {{"target_fs_hz", c.dsp.target_fs_hz},
              {"bandpass_order", c.dsp.bandpass_order},
              {"low_hz", c.dsp.low_hz},
              {"high_hz", c.dsp.high_hz},
              {"epoch_start_s", c.dsp.epoch_start_s},
              {"epoch_end_s", c.dsp.epoch_end_s},
              {"baseline_start_s", c.dsp.baseline_start_s},
              {"baseline_end_s", c.dsp.baseline_end_s},
              {"chain", to_string(c.dsp.chain)},
              {"antialias_order", c.dsp.antialias_order},
              {"antialias_cutoff_ratio", c.dsp.antialias_cutoff_ratio}};
  j["ersp"] = {{"window_len_s", c.ersp.window_len_s},
               {"fft_len", c.ersp.fft_len},
               {"hop_samples", c.ersp.hop_samples},
               {"freq_low_hz", c.ersp.freq_low_hz},
               {"freq_high_hz", c.ersp.freq_high_hz},
               {"baseline_start_s", c.ersp.baseline_start_s},
               {"baseline_end_s", c.ersp.baseline_end_s},
               {"grid_h", c.ersp.grid_h},
               {"grid_w", c.ersp.grid_w},
               {"zscore", c.ersp.zscore},
               {"zscore_std_floor", c.ersp.zscore_std_floor}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},
                {"val_frequency_iters", c.train.val_frequency_iters},
                {"val_patience", c.train.val_patience},
                {"shuffle", c.train.shuffle}};
  j["synth"] = {{"n_subjects", c.synth.n_subjects},
                {"n_channels", c.synth.n_channels},
                {"n_trials_per_class", c.synth.n_trials_per_class},
                {"fs_hz", c.synth.fs_hz},
                {"noise_std", c.synth.noise_std},
                {"signature_band_hz", {c.synth.signature_low_hz, c.synth.signature_high_hz}},
                {"signature_gain", c.synth.signature_gain},
                {"signature_amplitude_uv", c.synth.signature_amplitude_uv},
                {"seed", c.synth.seed}};
  j["model"] = {{"kind", to_string(c.model)}};
  j["eval"] = {{"n_splits", c.eval.n_splits},
               {"base_seed", c.eval.base_seed},
               {"train_fraction", c.eval.ratios.train},
               {"val_fraction", c.eval.ratios.val},
               {"test_fraction", c.eval.ratios.test}};
  return j;
}

namespace config_detail {

// Overlays `user` onto `base`, which holds every known field with its default.
// Unknown fields and type mismatches raise ConfigError naming the dotted path.
inline void overlay(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected a table");
  for (const auto& [key, v] : user.items()) {
    const std::string field = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError(field, "unknown field");
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, v, field);
    } else if (slot.is_boolean()) {
      if (!v.is_boolean()) throw ConfigError(field, "expected a boolean");
      slot = v;
    } else if (slot.is_string()) {
      if (!v.is_string()) throw ConfigError(field, "expected a string");
      slot = v;
    } else if (slot.is_number_unsigned()) {
      if (v.is_number_unsigned()) {
        slot = v;
      } else if (v.is_number_integer()) {
        if (v.get<std::int64_t>() < 0) throw ConfigError(field, "must be non-negative");
        slot = v.get<std::uint64_t>();
      } else {
        throw ConfigError(field, "expected an integer");
      }
    } else if (slot.is_number_integer()) {
      if (!v.is_number_integer()) throw ConfigError(field, "expected an integer");
      slot = v;
    } else if (slot.is_number()) {
      if (!v.is_number()) throw ConfigError(field, "expected a number");
      slot = v.get<double>();
    } else if (slot.is_array()) {
      if (!v.is_array() || v.size() != slot.size()) throw ConfigError(field, "expected an array of " + std::to_string(slot.size()) + " numbers");
      for (const auto& x : v)
        if (!x.is_number()) throw ConfigError(field, "expected an array of numbers");
      slot = v;
    }
  }
}

template <class T>
T get(const json& j, const char* section, const char* key) {
  return j.at(section).at(key).get<T>();
}

}  // namespace config_detail

inline void validate(const EvalConfig& e) {
  if (e.n_splits < 1) throw ConfigError("eval.n_splits", "must be >= 1");
  const auto& r = e.ratios;
  if (!(r.train > 0)) throw ConfigError("eval.train_fraction", "must be > 0");
  if (!(r.val > 0)) throw ConfigError("eval.val_fraction", "must be > 0");
  if (!(r.test > 0)) throw ConfigError("eval.test_fraction", "must be > 0");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw ConfigError("eval.test_fraction", "fractions must sum to 1");
}

// Cross-module checks (the ERSP grid is evaluated at the dsp output rate).
inline void validate(const PipelineConfig& c) {
  validate(c.dsp);
  validate(c.ersp, c.dsp.target_fs_hz);
  if (c.ersp.baseline_start_s < c.dsp.epoch_start_s || c.ersp.baseline_end_s > c.dsp.epoch_end_s)
    throw ConfigError("ersp.baseline_start_s", "ERSP baseline must lie inside the epoch window");
  validate(c.train);
  validate(c.synth);
  validate(c.eval);
  if (c.model == ModelKind::cnn && (c.ersp.grid_h % 2 || c.ersp.grid_w % 2))
    throw ConfigError("ersp.grid_h", "the CNN needs an even grid (2x2 max-pooling)");
}

// Builds a validated config from JSON that may omit any field.
inline PipelineConfig config_from_json(const json& user) {
  using config_detail::get;
  json j = to_json(PipelineConfig{});
  config_detail::overlay(j, user, "");
  PipelineConfig c;
  c.dsp.target_fs_hz = get<double>(j, "dsp", "target_fs_hz");
  c.dsp.bandpass_order = get<int>(j, "dsp", "bandpass_order");
  c.dsp.low_hz = get<double>(j, "dsp", "low_hz");
  c.dsp.high_hz = get<double>(j, "dsp", "high_hz");
  c.dsp.epoch_start_s = get<double>(j, "dsp", "epoch_start_s");
  c.dsp.epoch_end_s = get<double>(j, "dsp", "epoch_end_s");
  c.dsp.baseline_start_s = get<double>(j, "dsp", "baseline_start_s");
  c.dsp.baseline_end_s = get<double>(j, "dsp", "baseline_end_s");
  const auto chain = get<std::string>(j, "dsp", "chain");
  if (chain == "decimate_then_filter")
    c.dsp.chain = ChainOrder::decimate_then_filter;
  else if (chain == "filter_then_decimate")
    c.dsp.chain = ChainOrder::filter_then_decimate;
  else
    throw ConfigError("dsp.chain", "expected 'decimate_then_filter' or 'filter_then_decimate', got '" + chain + "'");
  c.dsp.antialias_order = get<int>(j, "dsp", "antialias_order");
  c.dsp.antialias_cutoff_ratio = get<double>(j, "dsp", "antialias_cutoff_ratio");

  c.ersp.window_len_s = get<double>(j, "ersp", "window_len_s");
  c.ersp.fft_len = get<std::size_t>(j, "ersp", "fft_len");
  c.ersp.hop_samples = get<std::size_t>(j, "ersp", "hop_samples");
  c.ersp.freq_low_hz = get<double>(j, "ersp", "freq_low_hz");
  c.ersp.freq_high_hz = get<double>(j, "ersp", "freq_high_hz");
  c.ersp.baseline_start_s = get<double>(j, "ersp", "baseline_start_s");
  c.ersp.baseline_end_s = get<double>(j, "ersp", "baseline_end_s");
  c.ersp.grid_h = get<std::size_t>(j, "ersp", "grid_h");
  c.ersp.grid_w = get<std::size_t>(j, "ersp", "grid_w");
  c.ersp.zscore = get<bool>(j, "ersp", "zscore");
  c.ersp.zscore_std_floor = get<double>(j, "ersp", "zscore_std_floor");

  c.train.learning_rate = get<double>(j, "train", "learning_rate");
  c.train.momentum = get<double>(j, "train", "momentum");
  c.train.batch_size = get<std::size_t>(j, "train", "batch_size");
  c.train.max_epochs = get<std::size_t>(j, "train", "max_epochs");
  c.train.val_frequency_iters = get<std::size_t>(j, "train", "val_frequency_iters");
  c.train.val_patience = get<std::size_t>(j, "train", "val_patience");
  c.train.shuffle = get<bool>(j, "train", "shuffle");

  c.synth.n_subjects = get<std::size_t>(j, "synth", "n_subjects");
  c.synth.n_channels = get<std::size_t>(j, "synth", "n_channels");
  c.synth.n_trials_per_class = get<std::size_t>(j, "synth", "n_trials_per_class");
  c.synth.fs_hz = get<double>(j, "synth", "fs_hz");
  c.synth.noise_std = get<double>(j, "synth", "noise_std");
  const auto band = j.at("synth").at("signature_band_hz");
  c.synth.signature_low_hz = band.at(0).get<double>();
  c.synth.signature_high_hz = band.at(1).get<double>();
  c.synth.signature_gain = get<double>(j, "synth", "signature_gain");
  c.synth.signature_amplitude_uv = get<double>(j, "synth", "signature_amplitude_uv");
  c.synth.seed = get<std::uint64_t>(j, "synth", "seed");

  c.model = parse_model_kind(get<std::string>(j, "model", "kind"));

  c.eval.n_splits = get<std::size_t>(j, "eval", "n_splits");
  c.eval.base_seed = get<std::uint64_t>(j, "eval", "base_seed");
  c.eval.ratios.train = get<double>(j, "eval", "train_fraction");
  c.eval.ratios.val = get<double>(j, "eval", "val_fraction");
  c.eval.ratios.test = get<double>(j, "eval", "test_fraction");

  validate(c);
  return c;
}

// Reads a TOML or JSON config file into raw (unvalidated) JSON. JSON is
// recognised by a ".json" extension or a leading '{'.
inline json read_config_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool is_json = (path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0) ||
                       (first != std::string::npos && text[first] == '{');
  if (!is_json) return parse_toml(text, path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

// Applies "section.key=value" where value uses TOML value syntax; a bare word
// that is not a TOML literal is taken as a string.
inline void apply_override(json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like section.key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = parse_toml("v = " + raw, "override").at("v");
  } catch (const DataError&) {
    value = raw;
  }
  json* node = &user;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "malformed override key");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError(key, "override path crosses a non-table value");
    node = &next;
    start = dot + 1;
  }
}

inline PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json user = path.empty() ? json::object() : read_config_file(path);
  for (const auto& o : overrides) apply_override(user, o);
  return config_from_json(user);
}

}  // namespace smind
