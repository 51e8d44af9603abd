// spectral-mind: command-line driver for the EEG mental-arithmetic pipeline.
//
//   synth      generate synthetic recordings              -> <out>/<subject>.eegr
//   import     CSV samples + marker CSV                   -> <out>/<subject>.eegr
//   preprocess resample, band-pass, epoch, baseline       -> <out>/<subject>.eegp
//   features   ERSP images for every epoch and channel    -> <out>/features.eegs
//   train      one split, one model                       -> <out>/model.eegm, history.csv, metrics.json
//   evaluate   multi-split protocol                       -> <out>/{overall,by_subject,by_channel}[_splits].csv, ...
//   report     rebuild CSVs and topomap from results.json -> <out>/...
//   run        preprocess + features + evaluate in one go
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "spectral_mind.hpp"

namespace fs = std::filesystem;
using namespace smind;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  unsigned jobs = 1;
  std::string seed;
  std::string model;
  std::size_t splits = 0;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "TOML or JSON configuration file");
  cmd->add_option("--set", c.sets, "Override a config field, e.g. --set train.batch_size=32");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option("--jobs", c.jobs, "Worker threads (default 1)")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Base seed (overrides config and SPECTRAL_MIND_SEED)");
}

// Defaults < config file < SPECTRAL_MIND_SEED < --set < dedicated flags.
PipelineConfig resolve(const Common& c) {
  json user = c.config.empty() ? json::object() : read_config_file(c.config);
  const auto seed_override = [&](const std::string& text, const std::string& origin) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
    if (text.empty() || text[0] == '-' || *end != '\0' || errno == ERANGE)
      throw ConfigError(origin, "expected a non-negative integer seed, got '" + text + "'");
    apply_override(user, "eval.base_seed=" + std::to_string(v));
    apply_override(user, "synth.seed=" + std::to_string(v));
  };
  if (const char* env = std::getenv("SPECTRAL_MIND_SEED"); env && *env) seed_override(env, "SPECTRAL_MIND_SEED");
  for (const auto& s : c.sets) apply_override(user, s);
  if (!c.seed.empty()) seed_override(c.seed, "--seed");
  if (!c.model.empty()) apply_override(user, "model.kind=\"" + c.model + "\"");
  if (c.splits) apply_override(user, "eval.n_splits=" + std::to_string(c.splits));
  return config_from_json(user);
}

fs::path prepare_out(const Common& c, const PipelineConfig& cfg) {
  const fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory '" + c.out + "': " + ec.message());
  write_text((out / "resolved_config.json").string(), to_json(cfg).dump(2) + "\n");
  return out;
}

// Files given directly, or every file with `ext` in a given directory (sorted).
std::vector<std::string> collect_inputs(const std::vector<std::string>& inputs, const std::string& ext) {
  std::vector<std::string> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ext) found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(in)) {
      files.push_back(in);
    } else {
      throw DataError("input '" + in + "' does not exist");
    }
  }
  if (files.empty()) throw DataError("no " + ext + " inputs found");
  return files;
}

nn::Network<float> build_model(const PipelineConfig& cfg, const SpectrogramSet& ds, std::uint64_t seed) {
  if (cfg.model == ModelKind::cnn) return nn::build_shallow_cnn<float>(ds.height, ds.width, 2, seed);
  return nn::build_lstm_classifier<float>(ds.height, ds.width, 2, seed);
}

std::string split_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "split_%02zu", i);
  return buf;
}

SpectrogramSet features_from_epochs(const std::vector<EpochSet>& epochs, const PipelineConfig& cfg, unsigned jobs) {
  SpectrogramSet ds;
  for (const auto& e : epochs) {
    auto part = build_dataset(e, cfg.ersp, jobs);
    if (ds.meta.empty())
      ds = std::move(part);
    else
      append(ds, part);
  }
  return ds;
}

json write_reports(const EvaluationResult& r, const fs::path& out) {
  json files = json::array();
  for (const auto* rep : {&r.overall, &r.by_subject, &r.by_channel}) {
    const std::string base = to_string(rep->grouping);
    write_text((out / (base + ".csv")).string(), report_summary_csv(*rep));
    write_text((out / (base + "_splits.csv")).string(), report_splits_csv(*rep));
    files.push_back(base + ".csv");
    files.push_back(base + "_splits.csv");
  }
  std::map<std::string, double> acc;
  for (const auto& row : r.by_channel.rows)
    if (row.median[0]) acc[row.group] = *row.median[0];
  const auto& coords = default_electrode_coords();
  const bool all_known = !acc.empty() && std::all_of(acc.begin(), acc.end(), [&](const auto& kv) {
    return coords.count(kv.first) > 0;
  });
  if (all_known) {
    write_text((out / "topomap.svg").string(),
               render_topomap(acc, coords, {40, 160.0, "Median test accuracy by channel"}));
    files.push_back("topomap.svg");
  }
  return files;
}

json overall_summary(const EvaluationResult& r) {
  json m;
  const auto& row = r.overall.rows.at(0);
  for (std::size_t k = 0; k < 4; ++k) m[std::string(kMetricNames[k]) + "_median"] = format_percent(row.median[k]);
  return m;
}

json run_evaluate(const PipelineConfig& cfg, const SpectrogramSet& ds, const fs::path& out, unsigned jobs) {
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "histories");
  const auto builder = [&](std::uint64_t seed) { return build_model(cfg, ds, seed); };
  TrainConfig tc = cfg.train;
  auto res = evaluate_splits_with(
      ds, cfg.eval.n_splits, cfg.eval.base_seed,
      [&](const SpectrogramSet& d, const SplitSet& split, std::uint64_t seed) {
        auto net = builder(derive_seed(seed, "model"));
        TrainConfig c = tc;
        c.seed = seed;
        FitOutput fo;
        fo.history = train_model(net, d, split, c);
        fo.predictions = evaluate_network(net, d, split.test, c.batch_size).predictions;
        const std::string name = split_name(std::size_t(seed - cfg.eval.base_seed));
        nn::save_checkpoint(net, (out / "checkpoints" / (name + ".eegm")).string());
        write_history_csv(fo.history, (out / "histories" / (name + ".csv")).string());
        return fo;
      },
      jobs, cfg.eval.ratios);
  write_text((out / "results.json").string(), to_json(res, channel_order(ds)).dump(2) + "\n");
  json files = write_reports(res, out);
  files.push_back("results.json");
  return {{"splits", cfg.eval.n_splits}, {"model", to_string(cfg.model)}, {"samples", ds.size()},
          {"overall", overall_summary(res)}, {"files", files}};
}

void print_summary(const std::string& command, const fs::path& out, json extra) {
  json s = {{"command", command}, {"status", "ok"}, {"out", out.string()}};
  s.update(extra);
  std::cout << s.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG mental-arithmetic classification pipeline"};
  app.require_subcommand(1);

  Common synth_o, import_o, pre_o, feat_o, train_o, eval_o, report_o, run_o;
  std::vector<std::string> inputs;
  std::string csv, markers, subject = "S01", init;
  double fs_hz = 0.0;

  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic recordings");
  add_common(synth_cmd, synth_o);

  auto* import_cmd = app.add_subcommand("import", "Import a CSV recording");
  add_common(import_cmd, import_o);
  import_cmd->add_option("--csv", csv, "Samples CSV (one column per channel, header row of names)")->required();
  import_cmd->add_option("--markers", markers, "Marker CSV (onset_s,label)")->required();
  import_cmd->add_option("--fs", fs_hz, "Sample rate in Hz")->required()->check(CLI::PositiveNumber);
  import_cmd->add_option("--subject", subject, "Subject id");

  auto* pre_cmd = app.add_subcommand("preprocess", "Resample, band-pass, epoch and baseline-correct");
  add_common(pre_cmd, pre_o);
  pre_cmd->add_option("--in", inputs, ".eegr files or directories")->required();

  auto* feat_cmd = app.add_subcommand("features", "Compute ERSP images");
  add_common(feat_cmd, feat_o);
  feat_cmd->add_option("--in", inputs, ".eegp files or directories")->required();

  auto* train_cmd = app.add_subcommand("train", "Train one model on one split");
  add_common(train_cmd, train_o);
  train_cmd->add_option("--in", inputs, "features .eegs file")->required();
  train_cmd->add_option("--model", train_o.model, "cnn or lstm");
  train_cmd->add_option("--init", init, "Initial weights from a checkpoint");

  auto* eval_cmd = app.add_subcommand("evaluate", "Multi-split training and evaluation");
  add_common(eval_cmd, eval_o);
  eval_cmd->add_option("--in", inputs, "features .eegs file")->required();
  eval_cmd->add_option("--model", eval_o.model, "cnn or lstm");
  eval_cmd->add_option("--splits", eval_o.splits, "Number of splits")->check(CLI::PositiveNumber);

  auto* report_cmd = app.add_subcommand("report", "Rebuild reports from results.json");
  add_common(report_cmd, report_o);
  report_cmd->add_option("--in", inputs, "results.json from evaluate")->required();

  auto* run_cmd = app.add_subcommand("run", "preprocess + features + evaluate");
  add_common(run_cmd, run_o);
  run_cmd->add_option("--in", inputs, ".eegr files or directories")->required();
  run_cmd->add_option("--model", run_o.model, "cnn or lstm");
  run_cmd->add_option("--splits", run_o.splits, "Number of splits")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth_cmd->parsed()) {
      const auto cfg = resolve(synth_o);
      const auto out = prepare_out(synth_o, cfg);
      json files = json::array();
      for (const auto& rec : generate(cfg.synth, synth_o.jobs)) {
        const std::string name = rec.subject_id + ".eegr";
        save_recording(rec, (out / name).string());
        files.push_back(name);
      }
      print_summary("synth", out, {{"files", files}});
    } else if (import_cmd->parsed()) {
      const auto cfg = resolve(import_o);
      const auto out = prepare_out(import_o, cfg);
      const auto rec = import_csv(csv, fs_hz, markers, subject);
      save_recording(rec, (out / (subject + ".eegr")).string());
      print_summary("import", out,
                    {{"files", {subject + ".eegr"}}, {"channels", rec.n_channels()}, {"markers", rec.markers.size()}});
    } else if (pre_cmd->parsed()) {
      const auto cfg = resolve(pre_o);
      const auto out = prepare_out(pre_o, cfg);
      json files = json::array();
      std::size_t n_epochs = 0;
      for (const auto& f : collect_inputs(inputs, ".eegr")) {
        const auto e = preprocess(load_recording(f), cfg.dsp);
        const std::string name = e.subject_id + ".eegp";
        save_epochs(e, (out / name).string());
        files.push_back(name);
        n_epochs += e.n_epochs;
      }
      print_summary("preprocess", out, {{"files", files}, {"epochs", n_epochs}});
    } else if (feat_cmd->parsed()) {
      const auto cfg = resolve(feat_o);
      const auto out = prepare_out(feat_o, cfg);
      std::vector<EpochSet> epochs;
      for (const auto& f : collect_inputs(inputs, ".eegp")) epochs.push_back(load_epochs(f));
      const auto ds = features_from_epochs(epochs, cfg, feat_o.jobs);
      save_spectrograms(ds, (out / "features.eegs").string());
      print_summary("features", out,
                    {{"files", {"features.eegs"}}, {"samples", ds.size()}, {"grid", {ds.height, ds.width}}});
    } else if (train_cmd->parsed()) {
      const auto cfg = resolve(train_o);
      const auto ds = load_spectrograms(collect_inputs(inputs, ".eegs").at(0));
      auto net = build_model(cfg, ds, derive_seed(cfg.eval.base_seed, "model"));
      if (!init.empty()) {
        auto src = nn::load_checkpoint<float>(init);
        nn::copy_weights(net, src);
      }
      const auto out = prepare_out(train_o, cfg);
      const SplitSet split = split_dataset(ds, cfg.eval.base_seed, cfg.eval.ratios);
      TrainConfig tc = cfg.train;
      tc.seed = cfg.eval.base_seed;
      const auto hist = train_model(net, ds, split, tc);
      const auto test = evaluate_network(net, ds, split.test, tc.batch_size);
      const auto r = evaluate_predictions(ds, split.test, test.predictions);
      const auto m = metrics(r.overall);
      nn::save_checkpoint(net, (out / "model.eegm").string());
      write_history_csv(hist, (out / "history.csv").string());
      json mj = {{"confusion", to_json(r.overall)}};
      for (std::size_t k = 0; k < 4; ++k) mj[kMetricNames[k]] = format_percent(m.get(k));
      write_text((out / "metrics.json").string(), mj.dump(2) + "\n");
      print_summary("train", out,
                    {{"files", {"model.eegm", "history.csv", "metrics.json"}},
                     {"model", to_string(cfg.model)},
                     {"parameters", net.count_parameters()},
                     {"iterations", hist.iterations()},
                     {"best_iteration", hist.best_iteration},
                     {"stop_reason", to_string(hist.stop_reason)},
                     {"test", mj}});
    } else if (eval_cmd->parsed()) {
      const auto cfg = resolve(eval_o);
      const auto ds = load_spectrograms(collect_inputs(inputs, ".eegs").at(0));
      const auto out = prepare_out(eval_o, cfg);
      print_summary("evaluate", out, run_evaluate(cfg, ds, out, eval_o.jobs));
    } else if (report_cmd->parsed()) {
      const auto cfg = resolve(report_o);
      const auto path = collect_inputs(inputs, ".json").at(0);
      const json raw = json::parse(std::ifstream(path), nullptr, false);
      if (raw.is_discarded()) throw DataError(path + ": not valid JSON");
      const auto res = evaluation_from_json(raw);
      const auto out = prepare_out(report_o, cfg);
      print_summary("report", out, {{"files", write_reports(res, out)}, {"overall", overall_summary(res)}});
    } else if (run_cmd->parsed()) {
      const auto cfg = resolve(run_o);
      const auto out = prepare_out(run_o, cfg);
      std::vector<EpochSet> epochs;
      for (const auto& f : collect_inputs(inputs, ".eegr")) epochs.push_back(preprocess(load_recording(f), cfg.dsp));
      const auto ds = features_from_epochs(epochs, cfg, run_o.jobs);
      print_summary("run", out, run_evaluate(cfg, ds, out, run_o.jobs));
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
