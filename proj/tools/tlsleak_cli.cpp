// tlsleak command line. Each subcommand parses flags, resolves paths and
// calls into the library; see README.md for the full list.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tlsleak/error.hpp"
#include "tlsleak/evaluation.hpp"
#include "tlsleak/experiment.hpp"
#include "tlsleak/features.hpp"
#include "tlsleak/gbdt.hpp"
#include "tlsleak/io.hpp"
#include "tlsleak/mitigation.hpp"
#include "tlsleak/pcap.hpp"
#include "tlsleak/synth.hpp"
#include "tlsleak/trace.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace tlsleak;

namespace {

constexpr const char* kVersion = "0.1.0";

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNotFound: return 3;
    case ErrorKind::kFormat: return 4;
    case ErrorKind::kInvalidArgument: return 5;
    case ErrorKind::kIo: return 6;
    case ErrorKind::kUnsupported:
    case ErrorKind::kCorrupt: return 7;
  }
  return 1;
}

void fail(const std::string& code, const std::string& message) {
  std::string flat = message;
  for (char& c : flat) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error: code=" << code << " message=" << flat << '\n';
}

// TLSLEAK_OUTPUT_DIR, when set, anchors relative output paths.
fs::path output_path(const std::string& p) {
  fs::path path(p);
  const char* root = std::getenv("TLSLEAK_OUTPUT_DIR");
  if (root && *root && path.is_relative()) path = fs::path(root) / path;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  return path;
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json inputs = json::object();
  json params = json::object();

  void input(const fs::path& p) {
    if (fs::is_directory(p)) {
      inputs[p.string()] = "directory";
    } else {
      inputs[p.string()] = digest(read_file(p));
    }
  }

  std::string dump() const {
    json j;
    j["tool"] = "tlsleak";
    j["version"] = kVersion;
    j["command"] = command;
    j["argv"] = argv;
    j["inputs"] = inputs;
    j["params"] = params;
    return j.dump(2) + "\n";
  }

  // sidecar next to a single output file
  void write_beside(const fs::path& out) const {
    write_file_atomic(fs::path(out.string() + ".manifest.json"), dump());
  }
};

std::string slurp_json_arg(const std::string& arg) {
  // inline JSON or a path to a JSON file
  if (!arg.empty() && arg.front() == '{') return arg;
  return read_file(arg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic-metadata topic inference toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Manifest manifest;
  for (int i = 0; i < argc; ++i) manifest.argv.push_back(argv[i]);

  // synth
  std::string scenario_path, out;
  std::size_t n_target = 2000, n_noise = 8000;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from a scenario");
  synth->add_option("--scenario", scenario_path, "Scenario JSON")->required();
  synth->add_option("--n-target", n_target, "Target traces");
  synth->add_option("--n-noise", n_noise, "Noise traces");
  auto* seed_opt = synth->add_option("--seed", seed, "Overrides the scenario seed");
  synth->add_option("--out", out, "Output JSONL")->required();

  // ingest
  std::string pcap_path, report_path, direction = "server-to-client";
  std::uint16_t port = 443;
  auto* ingest = app.add_subcommand("ingest", "Extract traces from pcap captures");
  ingest->add_option("--pcap", pcap_path, "Capture file or directory of .pcap files")->required();
  ingest->add_option("--port", port, "Server TCP port");
  ingest->add_option("--direction", direction, "server-to-client or client-to-server")
      ->check(CLI::IsMember({"server-to-client", "client-to-server"}));
  ingest->add_option("--out", out, "Output JSONL")->required();
  ingest->add_option("--report", report_path, "Diagnostics JSON (default <out>.ingest.json)");

  // split
  std::string dataset_path, out_dir;
  double holdout = 0.2, val_fraction = 0.05;
  auto* split = app.add_subcommand("split", "Prompt-grouped train/val/test split");
  split->add_option("--dataset", dataset_path, "Input JSONL")->required();
  split->add_option("--holdout", holdout, "Held-out prompt fraction");
  split->add_option("--val", val_fraction, "Validation fraction of the remainder");
  split->add_option("--seed", seed, "Split seed");
  split->add_option("--out-dir", out_dir, "Writes train/val/test.jsonl and split.json")->required();

  // train
  std::string train_path, val_path, modality = "both", params_json;
  std::size_t pad_len = 0;
  TrainParams params;
  auto* train = app.add_subcommand("train", "Fit the gradient-boosted attacker");
  train->add_option("--train", train_path, "Training JSONL")->required();
  train->add_option("--val", val_path, "Validation JSONL")->required();
  train->add_option("--modality", modality, "both, size-only or time-only");
  train->add_option("--pad-len", pad_len, "Sequence length (default: 95th percentile of train)");
  train->add_option("--params", params_json, "GBDT parameters JSON (inline or file)");
  train->add_option("--learning-rate", params.learning_rate);
  train->add_option("--max-trees", params.max_trees);
  train->add_option("--patience", params.early_stop_patience);
  train->add_option("--max-leaves", params.max_leaves);
  train->add_option("--min-samples-per-leaf", params.min_samples_per_leaf);
  train->add_option("--out", out, "Model JSON")->required();

  // eval
  std::string model_path, test_path, csv_path;
  double ratio = 10000;
  auto* eval = app.add_subcommand("eval", "Score a test set and write an EvalReport");
  eval->add_option("--model", model_path, "Model JSON")->required();
  eval->add_option("--test", test_path, "Test JSONL")->required();
  eval->add_option("--ratio", ratio, "Noise:target ratio for projected precision");
  eval->add_option("--out", out, "Report JSON")->required();
  eval->add_option("--csv", csv_path, "Also write the per-trial CSV");

  // mitigate
  std::string in_path, strategy, stats_from;
  auto* mitigate = app.add_subcommand("mitigate", "Apply a defense transform to a dataset");
  mitigate->add_option("--in", in_path, "Input JSONL")->required();
  mitigate->add_option("--strategy", strategy, "Strategy JSON (inline or file)")->required();
  mitigate->add_option("--stats-from", stats_from,
                       "Training JSONL for injection statistics (default: --in)");
  mitigate->add_option("--out", out, "Output JSONL")->required();

  // experiment
  std::string kind, config_path, mitigations_csv;
  std::vector<int> batch_sizes;
  std::vector<double> fractions;
  std::vector<std::string> mitigation_args;
  int n_trials = 5, threads = 1;
  auto* experiment = app.add_subcommand("experiment", "Multi-trial experiments and sweeps");
  experiment->add_option("kind", kind, "baseline, batch-sweep, volume-sweep, mitigation-compare")
      ->required()
      ->check(CLI::IsMember({"baseline", "batch-sweep", "volume-sweep", "mitigation-compare"}));
  experiment->add_option("--config", config_path, "Experiment config JSON; flags override it");
  auto* exp_dataset = experiment->add_option("--dataset", dataset_path, "Input JSONL");
  auto* exp_scenario = experiment->add_option("--scenario", scenario_path, "Scenario to synthesize");
  auto* exp_nt = experiment->add_option("--n-target", n_target);
  auto* exp_nn = experiment->add_option("--n-noise", n_noise);
  auto* exp_mod = experiment->add_option("--modality", modality);
  auto* exp_trials = experiment->add_option("--trials", n_trials);
  auto* exp_seed = experiment->add_option("--seed", seed, "Base split seed");
  auto* exp_ratio = experiment->add_option("--ratio", ratio);
  auto* exp_threads = experiment->add_option("--threads", threads);
  auto* exp_batches = experiment->add_option("--batch-sizes", batch_sizes)->delimiter(',');
  auto* exp_fractions = experiment->add_option("--fractions", fractions)->delimiter(',');
  experiment->add_option("--mitigation", mitigation_args, "Strategy JSON; repeatable");
  experiment->add_option("--out-dir", out_dir, "Output directory")->required();

  // encode
  std::string tokens_path;
  std::size_t max_len = 510;
  auto* encode_cmd = app.add_subcommand("encode", "Fit the bucket encoder and write its manifest");
  encode_cmd->add_option("--dataset", dataset_path, "Training JSONL to fit on")->required();
  encode_cmd->add_option("--modality", modality);
  encode_cmd->add_option("--max-len", max_len, "Token budget excluding sentinels");
  encode_cmd->add_option("--manifest", out, "Encoder manifest JSON")->required();
  encode_cmd->add_option("--tokens", tokens_path, "Also write {id,label,tokens} JSONL");

  // features
  auto* features = app.add_subcommand("features", "Write the padded feature matrix as CSV");
  features->add_option("--dataset", dataset_path, "Input JSONL")->required();
  features->add_option("--modality", modality);
  features->add_option("--pad-len", pad_len, "Sequence length (default: 95th percentile)");
  features->add_option("--out", out, "CSV")->required();

  // summarize
  std::vector<std::string> reports;
  auto* summarize = app.add_subcommand("summarize", "Tabulate EvalReport files, any attacker");
  summarize->add_option("reports", reports, "Report JSON files")->required();
  summarize->add_option("--out", out, "CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    if (*synth) {
      manifest.command = "synth";
      manifest.input(scenario_path);
      ScenarioConfig cfg = load_scenario(scenario_path);
      if (*seed_opt) cfg.seed = seed;
      manifest.params = {{"n_target", n_target}, {"n_noise", n_noise}, {"seed", cfg.seed}};
      const fs::path dst = output_path(out);
      manifest.write_beside(dst);
      GenerationReport gen;
      write_dataset(generate(cfg, n_target, n_noise, &gen), dst);
      std::cout << "wrote " << gen.n_target << " target + " << gen.n_noise << " noise traces to "
                << dst.string() << " (mean tokens/event " << gen.mean_tokens_per_event << ")\n";
    } else if (*ingest) {
      manifest.command = "ingest";
      manifest.input(pcap_path);
      IngestOptions opts;
      opts.server_port = port;
      opts.direction = direction == "server-to-client" ? Direction::kServerToClient
                                                       : Direction::kClientToServer;
      manifest.params = {{"port", port}, {"direction", direction}};
      const fs::path dst = output_path(out);
      manifest.write_beside(dst);
      const IngestResult res = ingest_path(pcap_path, opts);
      write_dataset(res.dataset, dst);
      const fs::path diag =
          report_path.empty() ? fs::path(dst.string() + ".ingest.json") : output_path(report_path);
      write_file_atomic(diag, res.report.to_json() + "\n");
      std::cout << "wrote " << res.dataset.traces.size() << " traces from " << res.report.flows
                << " flows; diagnostics in " << diag.string() << '\n';
    } else if (*split) {
      manifest.command = "split";
      manifest.input(dataset_path);
      manifest.params = {{"holdout", holdout}, {"val", val_fraction}, {"seed", seed}};
      const fs::path dir = output_path(out_dir + "/.");
      write_file_atomic(dir / "split.manifest.json", manifest.dump());
      const Dataset ds = read_dataset(dataset_path);
      const SplitResult s = split_dataset(ds, holdout, val_fraction, seed);
      json ids = {{"seed", s.seed}, {"train", s.train}, {"val", s.val}, {"test", s.test}};
      write_file_atomic(dir / "split.json", ids.dump() + "\n");
      for (const auto& [name, list] : {std::pair{"train", &s.train}, std::pair{"val", &s.val},
                                       std::pair{"test", &s.test}}) {
        Dataset part;
        part.provenance = ds.provenance;
        part.traces = select(ds, *list);
        write_dataset(part, dir / (std::string(name) + ".jsonl"));
      }
      std::cout << "train " << s.train.size() << ", val " << s.val.size() << ", test "
                << s.test.size() << '\n';
    } else if (*train) {
      manifest.command = "train";
      manifest.input(train_path);
      manifest.input(val_path);
      if (!params_json.empty()) {
        const json p = json::parse(slurp_json_arg(params_json));
        params.learning_rate = p.value("learning_rate", params.learning_rate);
        params.max_trees = p.value("max_trees", params.max_trees);
        params.early_stop_patience = p.value("early_stop_patience", params.early_stop_patience);
        params.max_leaves = p.value("max_leaves", params.max_leaves);
        params.min_samples_per_leaf = p.value("min_samples_per_leaf", params.min_samples_per_leaf);
        params.n_histogram_bins = p.value("n_histogram_bins", params.n_histogram_bins);
        params.l2_lambda = p.value("l2_lambda", params.l2_lambda);
        params.min_child_hessian = p.value("min_child_hessian", params.min_child_hessian);
      }
      const Dataset tr = read_dataset(train_path);
      const Dataset va = read_dataset(val_path);
      FeatureConfig fc{parse_modality(modality), pad_len};
      if (fc.pad_len == 0) fc.pad_len = fit_pad_len(tr.traces);
      manifest.params = {{"modality", to_string(fc.modality)}, {"pad_len", fc.pad_len}};
      const fs::path dst = output_path(out);
      manifest.write_beside(dst);
      GbdtModel model = fit(vectorize(std::span<const Trace>(tr.traces), fc),
                            vectorize(std::span<const Trace>(va.traces), fc), params);
      model.meta["modality"] = to_string(fc.modality);
      model.meta["pad_len"] = std::to_string(fc.pad_len);
      save_model(model, dst);
      std::cout << "trees " << model.trees.size() << ", best val log-loss "
                << (model.val_loss.empty() ? 0.0 : model.val_loss[static_cast<std::size_t>(model.best_iteration)])
                << '\n';
    } else if (*eval) {
      manifest.command = "eval";
      manifest.input(model_path);
      manifest.input(test_path);
      manifest.params = {{"ratio", ratio}};
      const fs::path dst = output_path(out);
      manifest.write_beside(dst);
      const GbdtModel model = load_model(model_path);
      if (!model.meta.count("modality") || !model.meta.count("pad_len")) {
        throw format_error("model: missing feature configuration in meta");
      }
      const FeatureConfig fc{parse_modality(model.meta.at("modality")),
                             static_cast<std::size_t>(std::stoul(model.meta.at("pad_len")))};
      const Dataset te = read_dataset(test_path);
      const FeatureMatrix x = vectorize(std::span<const Trace>(te.traces), fc);
      EvalReport report;
      report.modality = to_string(fc.modality);
      report.ratio = ratio;
      report.params_digest = digest(read_file(model_path));
      TrialResult t = score_trial(ScoredSet::from(predict_proba(model, x), x.labels),
                                  report.recalls, ratio);
      t.seed = te.provenance.seed;
      t.n_trees = static_cast<int>(model.trees.size());
      report.trials.push_back(t);
      report.finalize();
      write_file_atomic(dst, report.to_json() + "\n");
      if (!csv_path.empty()) write_file_atomic(output_path(csv_path), report.to_csv());
      std::cout << "auprc " << report.median_auprc << '\n';
    } else if (*mitigate) {
      manifest.command = "mitigate";
      manifest.input(in_path);
      if (!stats_from.empty()) manifest.input(stats_from);
      MitigationSpec spec = MitigationSpec::from_json(slurp_json_arg(strategy));
      const Dataset ds = read_dataset(in_path);
      if (spec.strategy == Strategy::kInjection && spec.injection.stats.mean_gap <= 0) {
        const Dataset stats_ds = stats_from.empty() ? ds : read_dataset(stats_from);
        spec = fit_mitigation(spec, stats_ds.traces);
        for (const auto& w : spec.injection.stats.warnings) std::cerr << "warning: " << w << '\n';
      }
      spec.validate();
      manifest.params = json::parse(spec.to_json());
      const fs::path dst = output_path(out);
      manifest.write_beside(dst);
      write_dataset(apply(ds, spec), dst);
      std::cout << "wrote " << ds.traces.size() << " traces to " << dst.string() << '\n';
    } else if (*experiment) {
      manifest.command = "experiment " + kind;
      ExperimentConfig cfg;
      if (!config_path.empty()) {
        manifest.input(config_path);
        cfg = ExperimentConfig::from_json(read_file(config_path), fs::path(config_path).parent_path());
      }
      cfg.kind = parse_experiment_kind(kind);
      if (*exp_dataset) {
        cfg.dataset = dataset_path;
        cfg.scenario.clear();
      }
      if (*exp_scenario) {
        cfg.scenario = scenario_path;
        cfg.dataset.clear();
      }
      if (*exp_nt) cfg.n_target = n_target;
      if (*exp_nn) cfg.n_noise = n_noise;
      if (*exp_mod) cfg.trials.modality = parse_modality(modality);
      if (*exp_trials) cfg.trials.n_trials = n_trials;
      if (*exp_seed) cfg.trials.base_seed = seed;
      if (*exp_ratio) cfg.trials.ratio = ratio;
      if (*exp_threads) cfg.trials.threads = threads;
      if (*exp_batches) cfg.batch_sizes = batch_sizes;
      if (*exp_fractions) cfg.fractions = fractions;
      if (!mitigation_args.empty()) {
        cfg.mitigations.clear();
        for (const auto& m : mitigation_args) cfg.mitigations.push_back(MitigationSpec::from_json(slurp_json_arg(m)));
      }
      cfg.validate();
      if (!cfg.dataset.empty()) manifest.input(cfg.dataset);
      if (!cfg.scenario.empty()) manifest.input(cfg.scenario);
      manifest.params = json::parse(cfg.to_json());
      const fs::path dir = output_path(out_dir + "/.");
      const SweepResult sweep = write_experiment(cfg, dir, manifest.dump());
      std::cout << sweep.to_csv();
    } else if (*encode_cmd) {
      manifest.command = "encode";
      manifest.input(dataset_path);
      manifest.params = {{"modality", modality}, {"max_len", max_len}};
      const fs::path dst = output_path(out);
      manifest.write_beside(dst);
      const Dataset ds = read_dataset(dataset_path);
      const BucketEncoder enc = fit_bucket_encoder(ds.traces, parse_modality(modality), max_len);
      write_file_atomic(dst, enc.manifest_json() + "\n");
      if (!tokens_path.empty()) {
        std::string lines;
        for (const Trace& t : ds.traces) {
          json j = {{"id", t.id}, {"label", to_string(t.label)}, {"tokens", encode(t, enc)}};
          lines += j.dump() + "\n";
        }
        write_file_atomic(output_path(tokens_path), lines);
      }
    } else if (*features) {
      manifest.command = "features";
      manifest.input(dataset_path);
      const Dataset ds = read_dataset(dataset_path);
      FeatureConfig fc{parse_modality(modality), pad_len};
      if (fc.pad_len == 0) fc.pad_len = fit_pad_len(ds.traces);
      manifest.params = {{"modality", to_string(fc.modality)}, {"pad_len", fc.pad_len}};
      const fs::path dst = output_path(out);
      manifest.write_beside(dst);
      write_file_atomic(dst, to_csv(vectorize(std::span<const Trace>(ds.traces), fc)));
    } else if (*summarize) {
      manifest.command = "summarize";
      std::ostringstream csv;
      csv.precision(17);
      csv << "report,attacker,modality,n_trials,median_auprc";
      for (const double r : kReportRecalls) csv << ',' << recall_column(r);
      csv << '\n';
      for (const auto& path : reports) {
        manifest.input(path);
        const EvalReport r = EvalReport::from_json(read_file(path));
        csv << path << ',' << r.attacker << ',' << r.modality << ',' << r.trials.size() << ','
            << r.median_auprc;
        for (const double p : r.median_precision_at_recall) csv << ',' << p;
        csv << '\n';
      }
      const fs::path dst = output_path(out);
      manifest.write_beside(dst);
      write_file_atomic(dst, csv.str());
    }
  } catch (const Error& e) {
    fail(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    fail("format", e.what());
    return 4;
  } catch (const fs::filesystem_error& e) {
    fail("io", e.what());
    return 6;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 0;
}
