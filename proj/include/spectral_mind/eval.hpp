#pragma once

// Confusion-derived metrics (MA positive), multi-split evaluation harness,
// overall / per-subject / per-channel reports and their CSV form.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "spectral_mind/eegio.hpp"
#include "spectral_mind/error.hpp"
#include "spectral_mind/train.hpp"

namespace smind {

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  void add(Label pred, Label truth) {
    if (truth == Label::MA)
      ++(pred == Label::MA ? tp : fn);
    else
      ++(pred == Label::MA ? fp : tn);
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const Label> predictions, std::span<const Label> truths) {
  if (predictions.size() != truths.size())
    throw DataError("confusion: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(truths.size()) + " truths");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truths.size(); ++i) cm.add(predictions[i], truths[i]);
  return cm;
}

// A metric whose denominator is zero is std::nullopt ("undef" in reports).
struct Metrics {
  std::optional<double> accuracy, sensitivity, specificity, f1;

  std::optional<double> get(std::size_t i) const {
    switch (i) {
      case 0: return accuracy;
      case 1: return sensitivity;
      case 2: return specificity;
      default: return f1;
    }
  }
};

inline constexpr std::array<const char*, 4> kMetricNames{"acc", "sens", "spec", "f1"};

inline Metrics metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("metrics: empty confusion matrix");
  const auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return double(num) / double(den);
  };
  return {ratio(cm.tp + cm.tn, cm.total()), ratio(cm.tp, cm.tp + cm.fn), ratio(cm.tn, cm.tn + cm.fp),
          ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn)};
}

enum class AggregateKind { median, std };

// Median (midpoint of the two central values for even n) or sample standard
// deviation (n - 1 denominator; 0 for a single value).
inline double aggregate(std::span<const double> values, AggregateKind kind) {
  if (values.empty()) throw DataError("aggregate: empty list");
  const std::size_t n = values.size();
  if (kind == AggregateKind::median) {
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  if (n == 1) return 0.0;
  double mean = 0;
  for (double x : values) mean += x;
  mean /= double(n);
  double ss = 0;
  for (double x : values) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(n - 1));
}

// ---------------------------------------------------------------------------
// Per-split results and reports

struct SplitResult {
  std::uint64_t seed = 0;
  ConfusionMatrix overall;
  std::map<std::string, ConfusionMatrix> by_subject;
  std::map<std::string, ConfusionMatrix> by_channel;
  TrainHistory history;
};

inline SplitResult evaluate_predictions(const SpectrogramSet& ds, std::span<const std::size_t> test,
                                        std::span<const int> predictions) {
  if (test.size() != predictions.size()) throw DataError("evaluate: prediction count != test size");
  SplitResult r;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& m = ds.meta.at(test[i]);
    const Label p = label_from_class(predictions[i]);
    r.overall.add(p, m.label);
    r.by_subject[m.subject_id].add(p, m.label);
    r.by_channel[m.channel_name].add(p, m.label);
  }
  return r;
}

enum class Grouping { overall, by_subject, by_channel };

inline const char* to_string(Grouping g) {
  switch (g) {
    case Grouping::overall: return "overall";
    case Grouping::by_subject: return "by_subject";
    case Grouping::by_channel: return "by_channel";
  }
  return "?";
}

struct ReportRow {
  std::string group;
  std::vector<Metrics> per_split;                 // one entry per split containing the group
  std::array<std::optional<double>, 4> median{};  // acc, sens, spec, f1
  std::array<std::optional<double>, 4> std{};
};

struct MetricsReport {
  Grouping grouping = Grouping::overall;
  std::vector<ReportRow> rows;
};

namespace detail {

inline void finish_row(ReportRow& row) {
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> v;
    for (const auto& m : row.per_split)
      if (auto x = m.get(k)) v.push_back(*x);
    if (!v.empty()) {
      row.median[k] = aggregate(v, AggregateKind::median);
      row.std[k] = aggregate(v, AggregateKind::std);
    }
  }
}

}  // namespace detail

// `group_order` fixes row order for per-subject / per-channel reports.
inline MetricsReport build_report(std::span<const SplitResult> splits, Grouping g,
                                  const std::vector<std::string>& group_order = {}) {
  MetricsReport rep;
  rep.grouping = g;
  if (g == Grouping::overall) {
    ReportRow row{"overall", {}, {}, {}};
    for (const auto& s : splits)
      if (s.overall.total()) row.per_split.push_back(metrics(s.overall));
    detail::finish_row(row);
    rep.rows.push_back(std::move(row));
    return rep;
  }
  std::vector<std::string> keys = group_order;
  for (const auto& s : splits)
    for (const auto& [k, cm] : g == Grouping::by_subject ? s.by_subject : s.by_channel)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  for (const auto& key : keys) {
    ReportRow row{key, {}, {}, {}};
    for (const auto& s : splits) {
      const auto& m = g == Grouping::by_subject ? s.by_subject : s.by_channel;
      auto it = m.find(key);
      if (it != m.end() && it->second.total()) row.per_split.push_back(metrics(it->second));
    }
    if (row.per_split.empty()) continue;
    detail::finish_row(row);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// Percent with two decimals, or "undef".
inline std::string format_percent(std::optional<double> v) {
  if (!v) return "undef";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

// <grouping>.csv: group,acc_median,acc_std,sens_median,sens_std,spec_median,spec_std,f1_median,f1_std
inline std::string report_summary_csv(const MetricsReport& rep) {
  std::string out = "group";
  for (const char* m : kMetricNames) out += std::string(",") + m + "_median," + m + "_std";
  out += "\n";
  for (const auto& row : rep.rows) {
    out += row.group;
    for (std::size_t k = 0; k < 4; ++k) out += "," + format_percent(row.median[k]) + "," + format_percent(row.std[k]);
    out += "\n";
  }
  return out;
}

// <grouping>_splits.csv: group,split,acc,sens,spec,f1 with one row per split
// followed by "median" and "std" rows for each group.
inline std::string report_splits_csv(const MetricsReport& rep) {
  std::string out = "group,split,acc,sens,spec,f1\n";
  for (const auto& row : rep.rows) {
    for (std::size_t s = 0; s < row.per_split.size(); ++s) {
      out += row.group + "," + std::to_string(s);
      for (std::size_t k = 0; k < 4; ++k) out += "," + format_percent(row.per_split[s].get(k));
      out += "\n";
    }
    out += row.group + ",median";
    for (std::size_t k = 0; k < 4; ++k) out += "," + format_percent(row.median[k]);
    out += "\n" + row.group + ",std";
    for (std::size_t k = 0; k < 4; ++k) out += "," + format_percent(row.std[k]);
    out += "\n";
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << text;
}

// ---------------------------------------------------------------------------
// Harness

struct EvaluationResult {
  std::vector<SplitResult> splits;
  MetricsReport overall, by_subject, by_channel;
};

struct FitOutput {
  std::vector<int> predictions;  // class index per test sample, in split.test order
  TrainHistory history;
};

inline std::vector<std::string> channel_order(const SpectrogramSet& ds) {
  std::vector<std::string> out;
  for (const auto& m : ds.meta)
    if (std::find(out.begin(), out.end(), m.channel_name) == out.end()) out.push_back(m.channel_name);
  return out;
}

inline EvaluationResult assemble_reports(const SpectrogramSet& ds, std::vector<SplitResult> splits) {
  EvaluationResult r;
  r.splits = std::move(splits);
  r.overall = build_report(r.splits, Grouping::overall);
  r.by_subject = build_report(r.splits, Grouping::by_subject);
  r.by_channel = build_report(r.splits, Grouping::by_channel, channel_order(ds));
  return r;
}

// Split i uses seed base_seed + i for both the split and the model.
// fit_predict(ds, split, seed) -> FitOutput. Splits run on up to `jobs` threads;
// results are identical for any job count.
template <class FitPredict>
EvaluationResult evaluate_splits_with(const SpectrogramSet& ds, std::size_t n_splits, std::uint64_t base_seed,
                                      FitPredict&& fit_predict, unsigned jobs = 1, const SplitRatios& ratios = {}) {
  if (n_splits < 1) throw DataError("evaluate_splits: n_splits must be >= 1");
  std::vector<SplitResult> results(n_splits);
  std::vector<std::exception_ptr> errors(n_splits);

  const auto run = [&](std::size_t i) {
    try {
      const std::uint64_t seed = base_seed + i;
      const SplitSet split = split_dataset(ds, seed, ratios);
      FitOutput fo = fit_predict(ds, split, seed);
      results[i] = evaluate_predictions(ds, split.test, fo.predictions);
      results[i].seed = seed;
      results[i].history = std::move(fo.history);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n_splits)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n_splits; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        for (std::size_t i = j; i < n_splits; i += jobs) run(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return assemble_reports(ds, std::move(results));
}

// builder(seed) -> nn::Network<T>. on_trained(split_index, net) is called after
// each split's training (e.g. to save checkpoints).
template <class Builder, class OnTrained>
EvaluationResult evaluate_splits(Builder&& builder, const SpectrogramSet& ds, std::size_t n_splits,
                                 const TrainConfig& cfg, std::uint64_t base_seed, unsigned jobs,
                                 OnTrained&& on_trained) {
  validate(cfg);
  return evaluate_splits_with(
      ds, n_splits, base_seed,
      [&](const SpectrogramSet& d, const SplitSet& split, std::uint64_t seed) {
        auto net = builder(derive_seed(seed, "model"));
        TrainConfig tc = cfg;
        tc.seed = seed;
        FitOutput out;
        out.history = train_model(net, d, split, tc);
        out.predictions = evaluate_network(net, d, split.test, cfg.batch_size).predictions;
        on_trained(static_cast<std::size_t>(seed - base_seed), net);
        return out;
      },
      jobs);
}

template <class Builder>
EvaluationResult evaluate_splits(Builder&& builder, const SpectrogramSet& ds, std::size_t n_splits,
                                 const TrainConfig& cfg, std::uint64_t base_seed, unsigned jobs = 1) {
  return evaluate_splits(std::forward<Builder>(builder), ds, n_splits, cfg, base_seed, jobs, [](std::size_t, auto&) {});
}

// ---------------------------------------------------------------------------
// Result persistence (raw confusion counts, so reports can be rebuilt)

inline json to_json(const ConfusionMatrix& cm) { return {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}}; }

inline ConfusionMatrix cm_from_json(const json& j) {
  return {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("tn").get<std::size_t>(),
          j.at("fn").get<std::size_t>()};
}

inline json to_json(const EvaluationResult& r, const std::vector<std::string>& channel_order_hint = {}) {
  json splits = json::array();
  for (const auto& s : r.splits) {
    json subj = json::object(), chan = json::object();
    for (const auto& [k, cm] : s.by_subject) subj[k] = to_json(cm);
    for (const auto& [k, cm] : s.by_channel) chan[k] = to_json(cm);
    splits.push_back({{"seed", s.seed},
                      {"overall", to_json(s.overall)},
                      {"by_subject", subj},
                      {"by_channel", chan},
                      {"iterations", s.history.iterations()},
                      {"best_iteration", s.history.best_iteration},
                      {"stop_reason", to_string(s.history.stop_reason)}});
  }
  std::vector<std::string> order = channel_order_hint;
  if (order.empty())
    for (const auto& row : r.by_channel.rows) order.push_back(row.group);
  return {{"schema_version", kSchemaVersion}, {"splits", splits}, {"channel_order", order}};
}

inline EvaluationResult evaluation_from_json(const json& j) {
  std::vector<SplitResult> splits;
  try {
    for (const auto& s : j.at("splits")) {
      SplitResult r;
      r.seed = s.at("seed").get<std::uint64_t>();
      r.overall = cm_from_json(s.at("overall"));
      for (const auto& [k, v] : s.at("by_subject").items()) r.by_subject[k] = cm_from_json(v);
      for (const auto& [k, v] : s.at("by_channel").items()) r.by_channel[k] = cm_from_json(v);
      splits.push_back(std::move(r));
    }
    EvaluationResult out;
    out.splits = std::move(splits);
    out.overall = build_report(out.splits, Grouping::overall);
    out.by_subject = build_report(out.splits, Grouping::by_subject);
    out.by_channel =
        build_report(out.splits, Grouping::by_channel, j.value("channel_order", std::vector<std::string>{}));
    return out;
  } catch (const json::exception& e) {
    throw DataError(std::string("evaluation results: malformed JSON: ") + e.what());
  }
}

}  // namespace smind
