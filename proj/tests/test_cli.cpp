#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "support.hpp"

using namespace smind;
using smind::testkit::slurp;
using smind::testkit::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout then stderr
};

Run cli(const std::string& args, const std::string& env = "") {
  TempDir tmp;
  const std::string out = tmp / "stdout", err = tmp / "stderr";
  const std::string cmd = "env -u SPECTRAL_MIND_SEED " + env + " '" + std::string(SMIND_CLI_PATH) + "' " + args +
                          " >'" + out + "' 2>'" + err + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = slurp(out) + slurp(err);
  return r;
}

json summary_of(const Run& r) { return json::parse(r.output.substr(0, r.output.find('\n'))); }

const std::string kSmall =
    " --set synth.n_subjects=2 --set synth.n_channels=2 --set synth.n_trials_per_class=10"
    " --set ersp.grid_h=16 --set ersp.grid_w=16 --set train.max_epochs=2 --set train.batch_size=16"
    " --set eval.n_splits=2";

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("synth").code, 1);  // --out is required
  EXPECT_EQ(cli("synth --out /tmp/x --jobs 0").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, SynthWritesRecordingsAndResolvedConfig) {
  TempDir tmp;
  const auto r = cli("synth --out '" + (tmp / "raw") + "'" + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto s = summary_of(r);
  EXPECT_EQ(s["command"], "synth");
  EXPECT_EQ(s["status"], "ok");
  EXPECT_EQ(s["files"], json::array({"S01.eegr", "S02.eegr"}));
  const auto rec = load_recording(tmp / "raw/S01.eegr");
  EXPECT_EQ(rec.n_channels(), 2u);
  EXPECT_EQ(rec.markers.size(), 20u);
  const auto resolved = json::parse(slurp(tmp / "raw/resolved_config.json"));
  EXPECT_EQ(resolved["ersp"]["grid_h"], 16);
}

TEST(Cli, ConfigErrorsExitTwoAndNameTheField) {
  TempDir tmp;
  auto r = cli("synth --out '" + (tmp / "a") + "' --set ersp.grid_h=-1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("ersp.grid_h"), std::string::npos) << r.output;
  r = cli("synth --out '" + (tmp / "a") + "' --set ersp.nope=1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("ersp.nope"), std::string::npos) << r.output;
  write_file(tmp / "bad.toml", "[train]\nlearning_rate = \"fast\"\n");
  r = cli("synth --out '" + (tmp / "a") + "' --config '" + (tmp / "bad.toml") + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train.learning_rate"), std::string::npos) << r.output;
  r = cli("preprocess --out '" + (tmp / "a") + "' --in '" + (tmp / "missing.eegr") + "'");
  EXPECT_EQ(r.code, 2);
  r = cli("synth --out '" + (tmp / "a") + "' --seed -3");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, SeedEnvironmentVariableIsHonoured) {
  TempDir tmp;
  ASSERT_EQ(cli("synth --out '" + (tmp / "a") + "'" + kSmall, "SPECTRAL_MIND_SEED=7").code, 0);
  ASSERT_EQ(cli("synth --out '" + (tmp / "b") + "'" + kSmall + " --seed 7").code, 0);
  ASSERT_EQ(cli("synth --out '" + (tmp / "c") + "'" + kSmall).code, 0);
  EXPECT_EQ(slurp(tmp / "a/S01.eegr"), slurp(tmp / "b/S01.eegr"));
  EXPECT_NE(slurp(tmp / "a/S01.eegr"), slurp(tmp / "c/S01.eegr"));
  EXPECT_EQ(json::parse(slurp(tmp / "a/resolved_config.json"))["eval"]["base_seed"], 7);
  EXPECT_EQ(cli("synth --out '" + (tmp / "d") + "'", "SPECTRAL_MIND_SEED=abc").code, 2);
}

TEST(Cli, ImportReadsCsv) {
  TempDir tmp;
  ASSERT_EQ(cli("synth --out '" + (tmp / "raw") + "'" + kSmall).code, 0);
  const auto rec = load_recording(tmp / "raw/S01.eegr");
  std::string samples = rec.channel_names[0] + "," + rec.channel_names[1] + "\n";
  char buf[64];
  for (std::size_t i = 0; i < rec.n_samples; ++i) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", rec.data[i], rec.data[rec.n_samples + i]);
    samples += buf;
  }
  std::string markers = "onset_s,label\n";
  for (const auto& m : rec.markers) {
    std::snprintf(buf, sizeof buf, "%.17g,", m.onset_s);
    markers += buf + std::string(to_string(m.label)) + "\n";
  }
  write_file(tmp / "s.csv", samples);
  write_file(tmp / "m.csv", markers);
  const auto r = cli("import --out '" + (tmp / "imp") + "' --csv '" + (tmp / "s.csv") + "' --markers '" +
                     (tmp / "m.csv") + "' --fs 200 --subject S01");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(summary_of(r)["markers"], 20);
  EXPECT_EQ(load_recording(tmp / "imp/S01.eegr"), rec);

  write_file(tmp / "bad.csv", "a,b\n1,2\n3\n");
  const auto bad = cli("import --out '" + (tmp / "imp2") + "' --csv '" + (tmp / "bad.csv") + "' --markers '" +
                       (tmp / "m.csv") + "' --fs 200");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("line 3"), std::string::npos) << bad.output;
}

TEST(Cli, StagedPipelineMatchesRunAndResolvedConfigReproduces) {
  TempDir tmp;
  const std::string raw = tmp / "raw";
  ASSERT_EQ(cli("synth --out '" + raw + "'" + kSmall).code, 0);
  auto r = cli("preprocess --in '" + raw + "' --out '" + (tmp / "pre") + "'" + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(summary_of(r)["epochs"], 40);
  r = cli("features --in '" + (tmp / "pre") + "' --out '" + (tmp / "feat") + "'" + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(summary_of(r)["samples"], 80);
  r = cli("evaluate --in '" + (tmp / "feat/features.eegs") + "' --out '" + (tmp / "ev") + "'" + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(summary_of(r)["splits"], 2);

  r = cli("run --in '" + raw + "' --out '" + (tmp / "run") + "'" + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  for (std::string f : {"results.json", "overall.csv", "by_subject.csv", "by_channel_splits.csv", "topomap.svg",
                        "checkpoints/split_01.eegm", "histories/split_00.csv"})
    EXPECT_EQ(slurp(tmp / "ev/" + f), slurp(tmp / "run/" + f)) << f;

  // rerunning from the resolved config alone gives the same outputs
  r = cli("run --in '" + raw + "' --out '" + (tmp / "again") + "' --config '" + (tmp / "run/resolved_config.json") +
          "'");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(tmp / "again/results.json"), slurp(tmp / "run/results.json"));

  // report rebuilds the same tables
  r = cli("report --in '" + (tmp / "run/results.json") + "' --out '" + (tmp / "rep") + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(tmp / "rep/by_subject.csv"), slurp(tmp / "run/by_subject.csv"));
  EXPECT_EQ(slurp(tmp / "rep/topomap.svg"), slurp(tmp / "run/topomap.svg"));
}

TEST(Cli, TrainAndWarmStart) {
  TempDir tmp;
  const std::string raw = tmp / "raw";
  ASSERT_EQ(cli("synth --out '" + raw + "'" + kSmall).code, 0);
  ASSERT_EQ(cli("preprocess --in '" + raw + "' --out '" + (tmp / "pre") + "'" + kSmall).code, 0);
  ASSERT_EQ(cli("features --in '" + (tmp / "pre") + "' --out '" + (tmp / "feat") + "'" + kSmall).code, 0);
  const std::string feats = tmp / "feat/features.eegs";
  auto r = cli("train --in '" + feats + "' --out '" + (tmp / "cnn") + "'" + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto s = summary_of(r);
  EXPECT_EQ(s["model"], "cnn");
  EXPECT_EQ(s["parameters"], nn::build_shallow_cnn<float>(16, 16, 2, 0).count_parameters());
  EXPECT_EQ(slurp(tmp / "cnn/history.csv").rfind("iteration,", 0), 0u);

  r = cli("train --in '" + feats + "' --out '" + (tmp / "warm") + "' --init '" + (tmp / "cnn/model.eegm") + "'" +
          kSmall);
  EXPECT_EQ(r.code, 0) << r.output;

  r = cli("train --model lstm --in '" + feats + "' --out '" + (tmp / "lstm") + "' --init '" +
          (tmp / "cnn/model.eegm") + "'" + kSmall);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("shape mismatch"), std::string::npos) << r.output;

  r = cli("train --model gru --in '" + feats + "' --out '" + (tmp / "gru") + "'" + kSmall);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("model.kind"), std::string::npos) << r.output;
}
