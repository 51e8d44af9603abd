#include <gtest/gtest.h>

#include <cmath>
#include <regex>

#include "support.hpp"

using namespace smind;
using smind::testkit::stratified_meta;

namespace {

std::vector<Label> labels_of(std::initializer_list<int> ma_flags) {
  std::vector<Label> out;
  for (int f : ma_flags) out.push_back(f ? Label::MA : Label::BL);
  return out;
}

SpectrogramSet meta_only(std::vector<SampleMeta> meta) {
  SpectrogramSet ds;
  ds.height = ds.width = 2;
  ds.meta = std::move(meta);
  ds.images.assign(ds.meta.size() * 4, 0.0f);
  return ds;
}

std::size_t count_of(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// confusion and metrics

TEST(Confusion, PerfectPredictions) {
  const auto t = labels_of({1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  EXPECT_EQ(confusion(t, t), (ConfusionMatrix{4, 0, 6, 0}));
}

TEST(Confusion, AllPredictedMa) {
  const auto t = labels_of({1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
  const std::vector<Label> p(10, Label::MA);
  EXPECT_EQ(confusion(p, t), (ConfusionMatrix{5, 5, 0, 0}));
}

TEST(Confusion, EmptyAndMismatch) {
  EXPECT_EQ(confusion({}, {}), ConfusionMatrix{});
  const auto a = labels_of({1, 0});
  const auto b = labels_of({1});
  EXPECT_THROW(confusion(a, b), DataError);
}

TEST(Metrics, HandExample) {
  const auto m = metrics({3, 2, 2, 1});
  EXPECT_DOUBLE_EQ(*m.accuracy, 0.625);
  EXPECT_DOUBLE_EQ(*m.sensitivity, 0.75);
  EXPECT_DOUBLE_EQ(*m.specificity, 0.5);
  EXPECT_NEAR(*m.f1, 6.0 / 9.0, 1e-15);
}

TEST(Metrics, PerfectAndUndefined) {
  const auto m = metrics({5, 0, 5, 0});
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(*m.get(k), 1.0);
  const auto u = metrics({0, 2, 3, 0});
  EXPECT_FALSE(u.sensitivity.has_value());
  EXPECT_TRUE(u.specificity.has_value());
  EXPECT_EQ(format_percent(u.sensitivity), "undef");
  EXPECT_EQ(format_percent(0.90678), "90.68");
  EXPECT_THROW(metrics({}), DataError);
}

TEST(Metrics, MatchesBruteForceRecount) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<Label> p, t;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pm = rng.uniform() < 0.5, tm = rng.uniform() < 0.4;
      p.push_back(pm ? Label::MA : Label::BL);
      t.push_back(tm ? Label::MA : Label::BL);
      tp += pm && tm;
      fp += pm && !tm;
      tn += !pm && !tm;
      fn += !pm && tm;
    }
    const auto m = metrics(confusion(p, t));
    const auto frac = [](std::size_t a, std::size_t b) { return b ? std::optional(double(a) / double(b)) : std::nullopt; };
    ASSERT_EQ(m.accuracy, frac(tp + tn, n));
    ASSERT_EQ(m.sensitivity, frac(tp, tp + fn));
    ASSERT_EQ(m.specificity, frac(tn, tn + fp));
    ASSERT_EQ(m.f1, frac(2 * tp, 2 * tp + fp + fn));
  }
}

TEST(Metrics, PermutationInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<Label, Label>> pairs;
    for (int i = 0; i < 40; ++i)
      pairs.push_back({rng.uniform() < 0.5 ? Label::MA : Label::BL, rng.uniform() < 0.5 ? Label::MA : Label::BL});
    const auto cm_of = [](const auto& v) {
      std::vector<Label> p, t;
      for (auto [a, b] : v) {
        p.push_back(a);
        t.push_back(b);
      }
      return confusion(p, t);
    };
    const auto before = cm_of(pairs);
    rng.shuffle(pairs);
    EXPECT_EQ(cm_of(pairs), before);
  }
}

TEST(Metrics, LabelFlipSwapsSensitivityAndSpecificity) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Label> p, t, flipped;
    for (int i = 0; i < 30; ++i) {
      t.push_back(i % 2 ? Label::BL : Label::MA);
      p.push_back(rng.uniform() < 0.5 ? Label::MA : Label::BL);
      flipped.push_back(p.back() == Label::MA ? Label::BL : Label::MA);
    }
    const auto a = metrics(confusion(p, t)), b = metrics(confusion(flipped, t));
    EXPECT_DOUBLE_EQ(*a.sensitivity, 1.0 - *b.sensitivity);
    EXPECT_DOUBLE_EQ(*a.specificity, 1.0 - *b.specificity);
    // flipping predictions and the positive class together swaps the two rates exactly
    std::vector<Label> t_flip;
    for (Label l : t) t_flip.push_back(l == Label::MA ? Label::BL : Label::MA);
    const auto c = metrics(confusion(flipped, t_flip));
    EXPECT_EQ(c.sensitivity, a.specificity);
    EXPECT_EQ(c.specificity, a.sensitivity);
  }
}

TEST(Metrics, ChanceLevelWithinBinomialBounds) {
  Rng rng(4);
  for (std::size_t n : {200u, 1000u, 5000u}) {
    std::vector<Label> p, t;
    for (std::size_t i = 0; i < n; ++i) {
      t.push_back(i % 2 ? Label::BL : Label::MA);
      p.push_back(rng.uniform() < 0.5 ? Label::MA : Label::BL);
    }
    EXPECT_NEAR(*metrics(confusion(p, t)).accuracy, 0.5, 3 * std::sqrt(0.25 / double(n)));
    const std::vector<Label> constant(n, Label::BL);
    EXPECT_EQ(*metrics(confusion(constant, t)).accuracy, 0.5);
  }
}

// ---------------------------------------------------------------------------
// aggregate

TEST(Aggregate, Examples) {
  EXPECT_EQ(aggregate(std::vector<double>{1, 3, 2}, AggregateKind::median), 2.0);
  EXPECT_EQ(aggregate(std::vector<double>{1, 2, 3, 4}, AggregateKind::median), 2.5);
  EXPECT_NEAR(aggregate(std::vector<double>{2, 4}, AggregateKind::std), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(aggregate(std::vector<double>{0.7}, AggregateKind::std), 0.0);
  EXPECT_THROW(aggregate(std::vector<double>{}, AggregateKind::median), DataError);
}

TEST(Aggregate, MedianInvariantUnderReordering) {
  Rng rng(5);
  std::vector<double> v(21);
  for (auto& x : v) x = rng.uniform();
  const double m = aggregate(v, AggregateKind::median), s = aggregate(v, AggregateKind::std);
  for (int i = 0; i < 10; ++i) {
    rng.shuffle(v);
    EXPECT_EQ(aggregate(v, AggregateKind::median), m);
    EXPECT_NEAR(aggregate(v, AggregateKind::std), s, 1e-15);
  }
}

// ---------------------------------------------------------------------------
// harness and reports

namespace {

FitOutput constant_predictor(const SpectrogramSet&, const SplitSet& split, std::uint64_t) {
  return {std::vector<int>(split.test.size(), class_index(Label::MA)), {}};
}

// Predicts the truth, flipping about 10% of answers with a seeded stream.
FitOutput mostly_right(const SpectrogramSet& ds, const SplitSet& split, std::uint64_t seed) {
  FitOutput out;
  Rng rng(seed);
  for (std::size_t i : split.test) {
    const int truth = class_index(ds.meta[i].label);
    out.predictions.push_back(rng.uniform() < 0.1 ? 1 - truth : truth);
  }
  return out;
}

}  // namespace

TEST(EvaluateSplits, ConstantModelScoresHalfEverySplit) {
  const auto ds = meta_only(stratified_meta(3, 20, 4));
  const auto r = evaluate_splits_with(ds, 5, 0, constant_predictor);
  ASSERT_EQ(r.splits.size(), 5u);
  for (const auto& s : r.splits) EXPECT_EQ(*metrics(s.overall).accuracy, 0.5);
  EXPECT_EQ(*r.overall.rows[0].median[0], 0.5);
  EXPECT_EQ(*r.overall.rows[0].std[0], 0.0);
  EXPECT_EQ(*r.overall.rows[0].median[1], 1.0);
  EXPECT_EQ(*r.overall.rows[0].median[2], 0.0);
}

TEST(EvaluateSplits, SingleSplitMedianEqualsValuesAndStdZero) {
  const auto ds = meta_only(stratified_meta(2, 30, 3));
  const auto r = evaluate_splits_with(ds, 1, 7, mostly_right);
  const auto m = metrics(r.splits[0].overall);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(r.overall.rows[0].median[k], m.get(k));
    EXPECT_EQ(*r.overall.rows[0].std[k], 0.0);
  }
}

TEST(EvaluateSplits, SeedsAndJobInvariance) {
  const auto ds = meta_only(stratified_meta(2, 30, 3));
  const auto a = evaluate_splits_with(ds, 6, 100, mostly_right, 1);
  const auto b = evaluate_splits_with(ds, 6, 100, mostly_right, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a.splits[i].seed, 100 + i);
    EXPECT_EQ(a.splits[i].overall, b.splits[i].overall);
    EXPECT_EQ(a.splits[i].by_channel, b.splits[i].by_channel);
  }
  EXPECT_EQ(report_summary_csv(a.by_subject), report_summary_csv(b.by_subject));
  EXPECT_THROW(evaluate_splits_with(ds, 0, 0, mostly_right), DataError);
}

TEST(EvaluateSplits, GroupsPartitionTheTestSet) {
  const auto ds = meta_only(stratified_meta(4, 25, 5));
  const auto r = evaluate_splits_with(ds, 4, 3, mostly_right);
  for (const auto& s : r.splits) {
    ConfusionMatrix subj, chan;
    for (const auto& [k, cm] : s.by_subject) subj += cm;
    for (const auto& [k, cm] : s.by_channel) chan += cm;
    EXPECT_EQ(subj, s.overall);
    EXPECT_EQ(chan, s.overall);
    EXPECT_EQ(s.by_subject.size(), 4u);
  }
}

TEST(EvaluateSplits, MedianInvariantUnderSplitReordering) {
  const auto ds = meta_only(stratified_meta(2, 30, 3));
  auto r = evaluate_splits_with(ds, 7, 0, mostly_right);
  const auto before = report_summary_csv(build_report(r.splits, Grouping::by_subject));
  std::reverse(r.splits.begin(), r.splits.end());
  EXPECT_EQ(report_summary_csv(build_report(r.splits, Grouping::by_subject)), before);
}

TEST(EvaluateSplits, ErrorsPropagate) {
  const auto ds = meta_only(stratified_meta(2, 10));
  const auto bad = [](const SpectrogramSet&, const SplitSet&, std::uint64_t) -> FitOutput {
    throw DataError("boom");
  };
  EXPECT_THROW(evaluate_splits_with(ds, 3, 0, bad, 2), DataError);
}

TEST(Reports, CsvShapes) {
  const auto ds = meta_only(stratified_meta(3, 20, 4));
  const auto r = evaluate_splits_with(ds, 5, 0, mostly_right);
  const auto summary = report_summary_csv(r.by_channel);
  std::istringstream is(summary);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "group,acc_median,acc_std,sens_median,sens_std,spec_median,spec_std,f1_median,f1_std");
  std::vector<std::string> groups;
  const std::regex row(R"(^([A-Za-z0-9]+)(,(\d+\.\d\d|undef)){8}$)");
  while (std::getline(is, line)) {
    std::smatch m;
    ASSERT_TRUE(std::regex_match(line, m, row)) << line;
    groups.push_back(m[1]);
  }
  EXPECT_EQ(groups, (std::vector<std::string>{"F7", "AFF5h", "F3", "AFp1"}));

  const auto splits = report_splits_csv(r.by_subject);
  EXPECT_EQ(splits.substr(0, splits.find('\n')), "group,split,acc,sens,spec,f1");
  EXPECT_EQ(count_of(splits, "\n"), 1u + 3u * (5u + 2u));
  EXPECT_EQ(count_of(splits, "S02,median,"), 1u);
  EXPECT_EQ(count_of(splits, "S02,std,"), 1u);

  const auto overall = report_summary_csv(r.overall);
  EXPECT_EQ(count_of(overall, "\n"), 2u);
  EXPECT_EQ(overall.substr(overall.find('\n') + 1, 8), "overall,");
}

TEST(Reports, UndefinedMetricsSkippedInAggregates) {
  SplitResult a, b;
  a.overall = {0, 1, 3, 0};  // no positives: sensitivity undefined
  b.overall = {2, 0, 2, 2};
  const std::vector<SplitResult> s = {a, b};
  const auto rep = build_report(s, Grouping::overall);
  EXPECT_EQ(*rep.rows[0].median[1], 0.5);
  EXPECT_EQ(*rep.rows[0].std[1], 0.0);
  const auto csv = report_splits_csv(rep);
  EXPECT_NE(csv.find("overall,0,75.00,undef,75.00,0.00"), std::string::npos) << csv;
}

TEST(Reports, JsonRoundTripRebuildsReports) {
  const auto ds = meta_only(stratified_meta(3, 20, 4));
  const auto r = evaluate_splits_with(ds, 4, 9, mostly_right);
  const auto j = to_json(r, channel_order(ds));
  const auto back = evaluation_from_json(json::parse(j.dump()));
  EXPECT_EQ(report_summary_csv(back.overall), report_summary_csv(r.overall));
  EXPECT_EQ(report_splits_csv(back.by_subject), report_splits_csv(r.by_subject));
  EXPECT_EQ(report_summary_csv(back.by_channel), report_summary_csv(r.by_channel));
  EXPECT_THROW(evaluation_from_json(json{{"splits", {{{"seed", 1}}}}}), DataError);
}

// ---------------------------------------------------------------------------
// topomap

namespace {

const std::vector<std::pair<std::string, double>> kChannelTable = {
    {"F7", 89.1},   {"AFF5h", 91.3}, {"F3", 91.7},   {"AFp1", 92.2}, {"AFp2", 88.1}, {"AFF6h", 89.3},
    {"F4", 91.4},   {"F8", 88.8},    {"AFF1h", 93.3}, {"AFF2h", 91.3}, {"Cz", 89.7},   {"Pz", 90.5},
    {"T7", 88.5},   {"C3", 86.9},    {"P7", 91.5},   {"P3", 92.3},   {"POO1", 92.6}, {"POO2", 89.1},
    {"P4", 89.2},   {"P8", 91.4},    {"C4", 90.0},   {"T8", 91.4}};

std::map<std::string, std::string> electrode_fills(const std::string& svg) {
  std::map<std::string, std::string> out;
  const std::regex re(R"re(<circle class="electrode" data-channel="([^"]+)"[^>]*fill="(#[0-9a-f]{6})")re");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it)
    out[(*it)[1]] = (*it)[2];
  return out;
}

std::vector<std::string> field_fills(const std::string& svg) {
  const auto a = svg.find("<g id=\"field\""), b = svg.find("</g>", a);
  const std::string field = svg.substr(a, b - a);
  std::vector<std::string> out;
  const std::regex re(R"re(<rect [^>]*fill="(#[0-9a-f]{6})")re");
  for (auto it = std::sregex_iterator(field.begin(), field.end(), re); it != std::sregex_iterator(); ++it)
    out.push_back((*it)[1]);
  return out;
}

// Position along the colormap of an 8-bit color (nearest of a fine sampling).
double colormap_position(const std::string& hex_color) {
  const int r = std::stoi(hex_color.substr(1, 2), nullptr, 16), g = std::stoi(hex_color.substr(3, 2), nullptr, 16),
            b = std::stoi(hex_color.substr(5, 2), nullptr, 16);
  double best_t = 0, best_d = 1e18;
  for (int k = 0; k <= 20000; ++k) {
    const double t = k / 20000.0;
    const auto c = jet(t);
    const double d = std::pow(c.r - r, 2) + std::pow(c.g - g, 2) + std::pow(c.b - b, 2);
    if (d < best_d) {
      best_d = d;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace

TEST(Topomap, ColormapEndpoints) {
  EXPECT_EQ(hex(jet(0.0)), "#000080");
  EXPECT_EQ(hex(jet(0.5)), "#80ff80");
  EXPECT_EQ(hex(jet(1.0)), "#800000");
  EXPECT_EQ(hex(jet(-3)), hex(jet(0)));
}

TEST(Topomap, UniformValuesGiveUniformField) {
  std::map<std::string, double> v;
  for (const auto& [name, _] : kChannelTable) v[name] = 0.9;
  const auto svg = render_topomap(v, default_electrode_coords());
  const auto fills = field_fills(svg);
  ASSERT_GT(fills.size(), 100u);
  for (const auto& f : fills) EXPECT_EQ(f, fills.front());
  EXPECT_EQ(count_of(svg, "class=\"electrode\""), 22u);
  for (const auto& [name, _] : kChannelTable) EXPECT_EQ(count_of(svg, ">" + name + "</text>"), 1u) << name;
}

TEST(Topomap, SingleChannelIsSolidDisk) {
  const auto svg = render_topomap({{"Cz", 0.8}}, default_electrode_coords());
  const auto fills = field_fills(svg);
  for (const auto& f : fills) EXPECT_EQ(f, fills.front());
  EXPECT_EQ(electrode_fills(svg).at("Cz"), fills.front());
}

TEST(Topomap, ElectrodeColorsFollowChannelTableRanks) {
  std::map<std::string, double> v;
  for (const auto& [name, acc] : kChannelTable) v[name] = acc / 100.0;
  const auto svg = render_topomap(v, default_electrode_coords());
  const auto fills = electrode_fills(svg);
  ASSERT_EQ(fills.size(), 22u);
  for (const auto& [a, va] : kChannelTable)
    for (const auto& [b, vb] : kChannelTable) {
      const double ta = colormap_position(fills.at(a)), tb = colormap_position(fills.at(b));
      if (va < vb) {
        EXPECT_LT(ta, tb) << a << " vs " << b;
      } else if (va == vb) {
        EXPECT_EQ(fills.at(a), fills.at(b)) << a << " vs " << b;
      }
    }
  EXPECT_EQ(fills.at("C3"), hex(jet(0.0)));
  EXPECT_EQ(fills.at("AFF1h"), hex(jet(1.0)));
}

TEST(Topomap, WellFormedAndDeterministic) {
  std::map<std::string, double> v;
  for (const auto& [name, acc] : kChannelTable) v[name] = acc / 100.0;
  const auto svg = render_topomap(v, default_electrode_coords(), {40, 160, "by channel"});
  EXPECT_EQ(svg, render_topomap(v, default_electrode_coords(), {40, 160, "by channel"}));
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("version=\"1.1\""), std::string::npos);
  EXPECT_EQ(svg.substr(svg.size() - 7), "</svg>\n");
  EXPECT_EQ(count_of(svg, "<g "), count_of(svg, "</g>"));
  EXPECT_EQ(count_of(svg, "<text"), count_of(svg, "</text>"));
  EXPECT_NE(svg.find("93.3%"), std::string::npos);
  EXPECT_NE(svg.find("86.9%"), std::string::npos);
}

TEST(Topomap, InvalidInputsRejected) {
  const auto& coords = default_electrode_coords();
  EXPECT_EQ(coords.size(), 22u);
  try {
    render_topomap({{"Fp1", 0.5}}, coords);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("Fp1"), std::string::npos);
  }
  EXPECT_THROW(render_topomap({{"Cz", 1.5}}, coords), DataError);
  EXPECT_THROW(render_topomap({}, coords), DataError);
}
