#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support.hpp"

using namespace smind;
using smind::testkit::stratified_meta;

// ---------------------------------------------------------------------------
// cross-entropy

TEST(CrossEntropy, UniformIsLn2) {
  const nn::Tensor<double> p({3, 2}, 0.5);
  const std::vector<int> y = {0, 1, 1};
  EXPECT_NEAR(cross_entropy<double>(p, y).loss, std::log(2.0), 1e-15);
}

TEST(CrossEntropy, PerfectPredictionNearZero) {
  const nn::Tensor<double> p({2, 2}, std::vector<double>{1, 0, 0, 1});
  const std::vector<int> y = {0, 1};
  EXPECT_LE(cross_entropy<double>(p, y).loss, 1e-10);
}

TEST(CrossEntropy, HandExample) {
  const nn::Tensor<double> p({2, 2}, std::vector<double>{0.8, 0.2, 0.3, 0.7});
  const std::vector<int> y = {0, 1};
  const auto r = cross_entropy<double>(p, y);
  EXPECT_NEAR(r.loss, -(std::log(0.8) + std::log(0.7)) / 2, 1e-15);
  EXPECT_EQ(r.grad.data, (std::vector<double>{(0.8 - 1) / 2, 0.2 / 2, 0.3 / 2, (0.7 - 1) / 2}));
}

TEST(CrossEntropy, FloorAndLabelRange) {
  const nn::Tensor<double> p({1, 2}, std::vector<double>{1, 0});
  const std::vector<int> wrong = {1};
  EXPECT_NEAR(cross_entropy<double>(p, wrong).loss, -std::log(1e-12), 1e-9);
  const std::vector<int> bad = {2};
  EXPECT_THROW(cross_entropy<double>(p, bad), DataError);
  const std::vector<int> neg = {-1};
  EXPECT_THROW(cross_entropy<double>(p, neg), DataError);
}

TEST(CrossEntropy, FusedGradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (auto [n, k] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 2}, {4, 2}, {3, 5}, {8, 3}, {2, 7}}) {
    const auto r = testkit::check_softmax_ce(n, k, rng);
    EXPECT_LT(r.max_rel, 1e-4) << r.worst;
  }
}

// ---------------------------------------------------------------------------
// SGDM

TEST(Sgdm, ZeroGradZeroVelocityUnchanged) {
  std::vector<double> p = {1.5, -2}, g = {0, 0}, v = {0, 0};
  sgdm_step<double>(p, g, v, 0.1, 0.9);
  EXPECT_EQ(p, (std::vector<double>{1.5, -2}));
}

TEST(Sgdm, ZeroMomentumIsPlainSgd) {
  std::vector<double> p = {1.0, 2.0}, g = {0.5, -4}, v = {0, 0};
  sgdm_step<double>(p, g, v, 0.01, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.01 * 0.5);
  EXPECT_DOUBLE_EQ(p[1], 2.0 + 0.01 * 4);
  sgdm_step<double>(p, g, v, 0.01, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 2 * 0.01 * 0.5);
}

TEST(Sgdm, TwoStepsUnrolled) {
  const double g0 = 0.37, lr = 0.001;
  std::vector<double> p = {0.0}, g = {g0}, v = {0.0};
  sgdm_step<double>(p, g, v, lr, 0.9);
  sgdm_step<double>(p, g, v, lr, 0.9);
  EXPECT_NEAR(p[0], -lr * (g0 + 1.9 * g0), 1e-15);
  EXPECT_NEAR(v[0], 1.9 * g0, 1e-15);
}

TEST(Sgdm, SizeMismatchRejected) {
  std::vector<double> p = {0, 0}, g = {1}, v = {0, 0};
  EXPECT_THROW(sgdm_step<double>(p, g, v, 0.1, 0.9), DataError);
}

TEST(Sgdm, DescendsQuadraticBowl) {
  // f(p) = 3 p0^2 + 0.5 p1^2, gradient (6 p0, p1); lr < 2/6 guarantees descent
  const auto f = [](const std::vector<double>& p) { return 3 * p[0] * p[0] + 0.5 * p[1] * p[1]; };
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p = {rng.uniform(-5, 5), rng.uniform(-5, 5)}, v = {0, 0};
    const std::vector<double> g = {6 * p[0], p[1]};
    const double before = f(p);
    sgdm_step<double>(p, g, v, 0.1, 0.0);
    EXPECT_LT(f(p), before);
  }
}

// ---------------------------------------------------------------------------
// splits

TEST(Split, FullDatasetSizes) {
  const auto meta = stratified_meta(12, 660, 22);
  ASSERT_EQ(meta.size(), 15840u);
  const auto s = split_dataset(meta, 0);
  EXPECT_EQ(s.train.size(), 11088u);
  EXPECT_EQ(s.val.size(), 2376u);
  EXPECT_EQ(s.test.size(), 2376u);
}

TEST(Split, DeterministicPerSeed) {
  const auto meta = stratified_meta(3, 20);
  EXPECT_EQ(split_dataset(meta, 5), split_dataset(meta, 5));
  EXPECT_NE(split_dataset(meta, 5), split_dataset(meta, 6));
}

TEST(Split, PerStratumProportions) {
  const auto meta = stratified_meta(12, 37);
  const auto s = split_dataset(meta, 9);
  std::map<std::pair<std::string, Label>, std::array<std::size_t, 3>> counts;
  for (std::size_t i : s.train) ++counts[{meta[i].subject_id, meta[i].label}][0];
  for (std::size_t i : s.val) ++counts[{meta[i].subject_id, meta[i].label}][1];
  for (std::size_t i : s.test) ++counts[{meta[i].subject_id, meta[i].label}][2];
  ASSERT_EQ(counts.size(), 24u);
  for (const auto& [key, c] : counts) {
    EXPECT_LE(std::abs(double(c[0]) - 0.70 * 37), 1.0);
    EXPECT_LE(std::abs(double(c[1]) - 0.15 * 37), 1.0);
    EXPECT_LE(std::abs(double(c[2]) - 0.15 * 37), 1.0);
  }
}

TEST(Split, IsPartitionForRandomInputs) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SampleMeta> meta;
    const std::size_t subjects = 1 + rng.below(5);
    for (std::size_t s = 0; s < subjects; ++s)
      for (Label l : {Label::MA, Label::BL}) {
        const std::size_t n = 3 + rng.below(40);
        for (std::size_t i = 0; i < n; ++i) meta.push_back({synth_subject_id(s), "Cz", i, l});
      }
    rng.shuffle(meta);
    const auto sp = split_dataset(meta, rng.next_u64());
    std::vector<std::size_t> all;
    for (const auto* part : {&sp.train, &sp.val, &sp.test}) all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), meta.size());
    for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
  }
}

TEST(Split, SmallStratumRejected) {
  auto meta = stratified_meta(2, 5);
  meta.push_back({"S09", "Cz", 0, Label::MA});
  meta.push_back({"S09", "Cz", 1, Label::MA});
  for (int i = 0; i < 3; ++i) meta.push_back({"S09", "Cz", std::size_t(2 + i), Label::BL});
  try {
    split_dataset(meta, 0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("S09/MA"), std::string::npos) << e.what();
  }
}

TEST(Split, ApportionSumsAndRatios) {
  for (std::size_t n = 3; n < 200; ++n) {
    const auto c = apportion(n, {});
    EXPECT_EQ(c[0] + c[1] + c[2], n);
    EXPECT_LE(std::abs(double(c[0]) - 0.7 * double(n)), 1.0);
    EXPECT_LE(std::abs(double(c[1]) - 0.15 * double(n)), 1.0);
  }
}

// ---------------------------------------------------------------------------
// early stopping schedule

TEST(EarlyStopping, ConstantValidationLossStopsAt168) {
  TrainConfig cfg;
  cfg.max_epochs = 1000;
  const auto h = run_training_loop(
      cfg, 64 * 10, [](auto) { return 1.0; }, [] { return std::pair{0.5, 0.5}; }, [] {});
  EXPECT_EQ(h.stop_reason, StopReason::patience_exhausted);
  EXPECT_EQ(h.iterations(), 168u);
  EXPECT_EQ(h.iterations(), (cfg.val_patience + 1) * cfg.val_frequency_iters);
  EXPECT_EQ(h.best_iteration, 8u);
  ASSERT_EQ(h.validations.size(), 21u);
  for (std::size_t i = 0; i < h.validations.size(); ++i) EXPECT_EQ(h.validations[i].iteration, 8 * (i + 1));
}

TEST(EarlyStopping, DecreasingValidationRunsToMaxEpochs) {
  TrainConfig cfg;
  cfg.max_epochs = 7;
  double v = 10;
  int best_calls = 0;
  const auto h = run_training_loop(
      cfg, 100, [](auto) { return 1.0; }, [&] { return std::pair{v -= 0.01, 0.5}; }, [&] { ++best_calls; });
  EXPECT_EQ(h.stop_reason, StopReason::max_epochs);
  EXPECT_EQ(h.epochs_run, 7u);
  EXPECT_EQ(h.iterations(), 7u * 2u);  // 100 samples, batch 64: last partial batch kept
  EXPECT_EQ(std::size_t(best_calls), h.validations.size());
}

TEST(EarlyStopping, BatchesCoverTrainingSetEachEpoch) {
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 7;
  std::vector<std::size_t> seen;
  run_training_loop(
      cfg, 30,
      [&](std::span<const std::size_t> b) {
        seen.insert(seen.end(), b.begin(), b.end());
        return 0.0;
      },
      [] { return std::pair{1.0, 0.0}; }, [] {});
  ASSERT_EQ(seen.size(), 90u);
  for (int e = 0; e < 3; ++e) {
    std::vector<std::size_t> epoch(seen.begin() + 30 * e, seen.begin() + 30 * (e + 1));
    std::sort(epoch.begin(), epoch.end());
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(epoch[i], i);
  }
}

TEST(EarlyStopping, ImprovementIsStrict) {
  TrainConfig cfg;
  cfg.val_patience = 3;
  cfg.val_frequency_iters = 1;
  cfg.max_epochs = 100;
  const std::vector<double> losses = {1.0, 0.9, 0.9, 0.9, 0.9, 0.1};
  std::size_t k = 0;
  const auto h = run_training_loop(
      cfg, 64, [](auto) { return 0.0; }, [&] { return std::pair{losses[std::min(k++, losses.size() - 1)], 0.0}; },
      [] {});
  EXPECT_EQ(h.stop_reason, StopReason::patience_exhausted);
  EXPECT_EQ(h.best_iteration, 2u);
  EXPECT_EQ(h.iterations(), 5u);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.learning_rate = 0;
  try {
    validate(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "train.learning_rate");
  }
}

// ---------------------------------------------------------------------------
// end-to-end training

namespace {

// MA images brighter on average than BL images: a mean-pixel threshold separates them.
SpectrogramSet separable_toy(std::size_t n, std::size_t side, std::uint64_t seed) {
  SpectrogramSet ds;
  ds.height = ds.width = side;
  ds.freq_range_hz = {0.5, 50};
  ds.time_range_s = {-1.5, 9.5};
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const Label l = i % 2 ? Label::BL : Label::MA;
    ds.meta.push_back({"S01", "Cz", i, l});
    const double shift = l == Label::MA ? 1.0 : -1.0;
    for (std::size_t k = 0; k < side * side; ++k) ds.images.push_back(float(shift + 0.5 * rng.normal()));
  }
  return ds;
}

}  // namespace

TEST(TrainModel, SeparableToyReachesFullTrainingAccuracy) {
  const auto ds = separable_toy(64, 8, 1);
  // oracle: mean pixel threshold at zero classifies perfectly
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double m = 0;
    for (float v : ds.image(i)) m += v;
    ASSERT_EQ(m > 0, ds.meta[i].label == Label::MA);
  }
  SplitSet split;
  for (std::size_t i = 0; i < 64; ++i) (i % 4 == 3 ? split.val : split.train).push_back(i);
  split.test = split.val;
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  cfg.seed = 3;
  auto net = nn::build_shallow_cnn(8, 8, 2, 3);
  const auto h = train_model(net, ds, split, cfg);
  EXPECT_LE(h.epochs_run, 50u);
  EXPECT_EQ(evaluate_network(net, ds, split.train).accuracy, 1.0);
  EXPECT_EQ(net.mode(), nn::Mode::infer);
}

TEST(TrainModel, ReturnsBestValidationParameters) {
  const auto ds = separable_toy(96, 8, 2);
  const auto split = split_dataset(ds, 4);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.val_frequency_iters = 2;
  cfg.val_patience = 4;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 20;
  auto net = nn::build_shallow_cnn(8, 8, 2, 5);
  const auto h = train_model(net, ds, split, cfg);
  ASSERT_FALSE(h.validations.empty());
  double best = h.validations[0].loss;
  for (const auto& v : h.validations) best = std::min(best, v.loss);
  EXPECT_EQ(h.best_val_loss, best);
  const auto r = evaluate_network(net, ds, split.val, cfg.batch_size);
  EXPECT_LE(r.loss, h.best_val_loss + 1e-6);
  for (std::size_t i = 0; i < h.validations.size(); ++i)
    EXPECT_EQ(h.validations[i].iteration, (i + 1) * cfg.val_frequency_iters);
}

TEST(TrainModel, BitIdenticalAcrossRuns) {
  const auto ds = separable_toy(48, 8, 3);
  const auto split = split_dataset(ds, 1);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.seed = 17;
  auto a = nn::build_shallow_cnn(8, 8, 2, 17);
  auto b = nn::build_shallow_cnn(8, 8, 2, 17);
  const auto ha = train_model(a, ds, split, cfg);
  const auto hb = train_model(b, ds, split, cfg);
  EXPECT_EQ(ha.train_loss, hb.train_loss);
  ASSERT_EQ(ha.validations.size(), hb.validations.size());
  for (std::size_t i = 0; i < ha.validations.size(); ++i) EXPECT_EQ(ha.validations[i].loss, hb.validations[i].loss);
  EXPECT_EQ(a.snapshot(), b.snapshot());
}

TEST(TrainModel, LstmTrainsOnRowsAsTimeSteps) {
  const auto ds = separable_toy(24, 4, 4);
  const auto split = split_dataset(ds, 2);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 1;
  cfg.val_frequency_iters = 1;
  auto net = nn::build_lstm_classifier(4, 4, 2, 1);
  const auto h = train_model(net, ds, split, cfg);
  EXPECT_EQ(h.iterations(), 2u);
  for (double l : h.train_loss) EXPECT_TRUE(std::isfinite(l));
}

TEST(TrainModel, EmptySplitsAndShapeMismatchRejected) {
  const auto ds = separable_toy(12, 4, 5);
  auto net = nn::build_shallow_cnn(4, 4, 2);
  SplitSet s;
  s.val = {0};
  EXPECT_THROW(train_model(net, ds, s, TrainConfig{}), DataError);
  s = {{0, 1}, {}, {}};
  EXPECT_THROW(train_model(net, ds, s, TrainConfig{}), DataError);
  auto wrong = nn::build_shallow_cnn(8, 8, 2);
  s = {{0, 1}, {2}, {3}};
  EXPECT_THROW(train_model(wrong, ds, s, TrainConfig{}), DataError);
}

TEST(TrainModel, HistoryCsv) {
  testkit::TempDir tmp;
  TrainHistory h;
  h.train_loss = {0.7, 0.6, 0.5};
  h.validations = {{2, 0.65, 0.5}};
  write_history_csv(h, tmp / "h.csv");
  EXPECT_EQ(testkit::slurp(tmp / "h.csv"), "iteration,train_loss,val_loss,val_acc\n1,0.7,,\n2,0.6,0.65,0.5\n3,0.5,,\n");
}
