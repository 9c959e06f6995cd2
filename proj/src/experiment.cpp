#include "tlsleak/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tlsleak/error.hpp"
#include "tlsleak/io.hpp"
#include "tlsleak/random.hpp"
#include "tlsleak/synth.hpp"

namespace tlsleak {

namespace {

using json = nlohmann::ordered_json;

std::vector<std::string> subsample(const std::vector<std::string>& ids, double fraction,
                                   std::uint64_t seed) {
  if (fraction >= 1.0) return ids;
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, fnv1a64("train-fraction")));
  rng.shuffle(order);
  // a prefix of one fixed permutation, so smaller fractions nest in larger
  const auto keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(ids.size()) - 1e-9));
  order.resize(std::max<std::size_t>(keep, 1));
  std::sort(order.begin(), order.end());
  std::vector<std::string> out;
  for (const std::size_t i : order) out.push_back(ids[i]);
  return out;
}

void require_labels(const FeatureMatrix& m, const char* what) {
  const auto pos = m.labels.sum();
  if (pos == 0 || pos == m.labels.size()) {
    throw invalid_argument(std::string(what) + " split holds a single class");
  }
}

}  // namespace

Attacker gbdt_attacker(const TrainParams& params) {
  return [params](const FeatureMatrix& train, const FeatureMatrix& val, const FeatureMatrix& test,
                  int& n_trees) {
    const GbdtModel model = fit(train, val, params);
    n_trees = static_cast<int>(model.trees.size());
    return predict_proba(model, test);
  };
}

void TrialConfig::validate() const {
  if (n_trials < 1) throw invalid_argument("n_trials must be >= 1");
  if (!(train_fraction > 0 && train_fraction <= 1)) {
    throw invalid_argument("train_fraction must be in (0, 1]");
  }
  if (!(ratio >= 1)) throw invalid_argument("ratio must be >= 1");
  if (threads < 1) throw invalid_argument("threads must be >= 1");
  gbdt.validate();
}

std::string TrialConfig::to_json() const {
  json j;
  j["modality"] = tlsleak::to_string(modality);
  j["n_trials"] = n_trials;
  j["base_seed"] = base_seed;
  j["holdout_fraction"] = holdout_fraction;
  j["val_fraction"] = val_fraction;
  j["ratio"] = ratio;
  j["train_fraction"] = train_fraction;
  j["mitigation"] = json::parse(mitigation.to_json());
  j["gbdt"] = {{"learning_rate", gbdt.learning_rate},
               {"max_trees", gbdt.max_trees},
               {"early_stop_patience", gbdt.early_stop_patience},
               {"max_leaves", gbdt.max_leaves},
               {"min_samples_per_leaf", gbdt.min_samples_per_leaf},
               {"n_histogram_bins", gbdt.n_histogram_bins},
               {"l2_lambda", gbdt.l2_lambda},
               {"min_child_hessian", gbdt.min_child_hessian}};
  return j.dump();
}

TrialResult run_trial(const Dataset& dataset, const TrialConfig& config, int trial,
                      const Attacker& attacker) {
  const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(trial);
  const SplitResult split =
      split_dataset(dataset, config.holdout_fraction, config.val_fraction, seed);
  const std::vector<std::string> train_ids = subsample(split.train, config.train_fraction, seed);

  std::vector<Trace> train = select(dataset, train_ids);
  std::vector<Trace> val = select(dataset, split.val);
  std::vector<Trace> test = select(dataset, split.test);
  if (config.mitigation.strategy != Strategy::kNone) {
    const MitigationSpec spec = fit_mitigation(config.mitigation, train);
    train = apply(std::span<const Trace>(train), spec);
    val = apply(std::span<const Trace>(val), spec);
    test = apply(std::span<const Trace>(test), spec);
  }

  FeatureConfig fc{config.modality, fit_pad_len(train)};
  const FeatureMatrix xtr = vectorize(std::span<const Trace>(train), fc);
  const FeatureMatrix xva = vectorize(std::span<const Trace>(val), fc);
  const FeatureMatrix xte = vectorize(std::span<const Trace>(test), fc);
  require_labels(xtr, "training");
  require_labels(xte, "test");

  int n_trees = 0;
  const Eigen::VectorXd scores =
      attacker ? attacker(xtr, xva, xte, n_trees) : gbdt_attacker(config.gbdt)(xtr, xva, xte, n_trees);

  std::vector<double> recalls(kReportRecalls.begin(), kReportRecalls.end());
  TrialResult r = score_trial(ScoredSet::from(scores, xte.labels), recalls, config.ratio);
  r.trial = trial;
  r.seed = seed;
  r.n_train = train.size();
  r.n_val = val.size();
  r.n_trees = n_trees;
  return r;
}

EvalReport run_trials(const Dataset& dataset, const TrialConfig& config, const Attacker& attacker) {
  config.validate();
  EvalReport report;
  report.attacker = attacker ? "custom" : "gbdt";
  report.modality = to_string(config.modality);
  report.ratio = config.ratio;
  report.params_digest = digest(config.to_json() + dataset.provenance.config_digest);
  if (!attacker) {
    report.notes.push_back("gbdt leaf limits (framework stand-ins): max_leaves=" +
                           std::to_string(config.gbdt.max_leaves) +
                           " min_samples_per_leaf=" + std::to_string(config.gbdt.min_samples_per_leaf));
  }
  if (config.mitigation.strategy == Strategy::kPadding &&
      config.mitigation.padding.placeholder_defaults()) {
    report.notes.push_back("padding bounds are placeholder defaults (10, 500)");
  }

  report.trials.resize(static_cast<std::size_t>(config.n_trials));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int t = next++; t < config.n_trials; t = next++) {
      try {
        report.trials[static_cast<std::size_t>(t)] = run_trial(dataset, config, t, attacker);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_threads = std::min(config.threads, config.n_trials);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  report.finalize();
  return report;
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << key_column << ",median_auprc";
  for (const double r : kReportRecalls) out << ',' << recall_column(r);
  out << '\n';
  for (const SweepRow& row : rows) {
    out << row.key << ',' << row.report.median_auprc;
    for (const double p : row.report.median_precision_at_recall) out << ',' << p;
    out << '\n';
  }
  return out.str();
}

SweepResult baseline_experiment(const Dataset& dataset, const TrialConfig& config,
                                const std::vector<Modality>& modalities) {
  SweepResult out{"baseline", "modality", {}};
  for (const Modality m : modalities) {
    TrialConfig c = config;
    c.modality = m;
    out.rows.push_back({to_string(m), run_trials(dataset, c)});
  }
  return out;
}

SweepResult batch_sweep(const Dataset& dataset, const TrialConfig& config,
                        const std::vector<int>& batch_sizes) {
  SweepResult out{"batch-sweep", "batch_size", {}};
  for (const int n : batch_sizes) {
    TrialConfig c = config;
    c.mitigation = MitigationSpec{};
    c.mitigation.strategy = Strategy::kBatching;
    c.mitigation.batching.batch_size = n;
    out.rows.push_back({std::to_string(n), run_trials(dataset, c)});
  }
  return out;
}

SweepResult volume_sweep(const Dataset& dataset, const TrialConfig& config,
                         const std::vector<double>& fractions) {
  SweepResult out{"volume-sweep", "train_fraction", {}};
  for (const double f : fractions) {
    TrialConfig c = config;
    c.train_fraction = f;
    std::ostringstream key;
    key << f;
    out.rows.push_back({key.str(), run_trials(dataset, c)});
  }
  return out;
}

SweepResult mitigation_compare(const Dataset& dataset, const TrialConfig& config,
                               const std::vector<MitigationSpec>& specs) {
  SweepResult out{"mitigation-compare", "mitigation", {}};
  std::map<std::string, int> seen;
  for (const MitigationSpec& s : specs) {
    TrialConfig c = config;
    c.mitigation = s;
    std::string key = to_string(s.strategy);
    if (const int k = seen[key]++; k > 0) key += "-" + std::to_string(k + 1);
    out.rows.push_back({key, run_trials(dataset, c)});
  }
  return out;
}

}  // namespace tlsleak

namespace tlsleak {

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kBaseline: return "baseline";
    case ExperimentKind::kBatchSweep: return "batch-sweep";
    case ExperimentKind::kVolumeSweep: return "volume-sweep";
    case ExperimentKind::kMitigationCompare: return "mitigation-compare";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& text) {
  for (const auto k : {ExperimentKind::kBaseline, ExperimentKind::kBatchSweep,
                       ExperimentKind::kVolumeSweep, ExperimentKind::kMitigationCompare}) {
    if (text == to_string(k)) return k;
  }
  throw invalid_argument("unknown experiment kind '" + text + "'");
}

std::vector<MitigationSpec> default_mitigations() {
  MitigationSpec none, injection, padding;
  injection.strategy = Strategy::kInjection;
  padding.strategy = Strategy::kPadding;
  return {none, injection, padding};
}

void ExperimentConfig::validate() const {
  trials.validate();
  if (dataset.empty() == scenario.empty()) {
    throw invalid_argument("experiment: set exactly one of dataset and scenario");
  }
  if (!scenario.empty() && (n_target == 0 || n_noise == 0)) {
    throw invalid_argument("experiment: n_target and n_noise must be positive");
  }
  if (kind == ExperimentKind::kBaseline && modalities.empty()) {
    throw invalid_argument("experiment: no modalities");
  }
  if (kind == ExperimentKind::kBatchSweep) {
    if (batch_sizes.empty()) throw invalid_argument("experiment: no batch sizes");
    for (const int n : batch_sizes) {
      if (n < 1) throw invalid_argument("experiment: batch sizes must be >= 1");
    }
  }
  if (kind == ExperimentKind::kVolumeSweep) {
    if (fractions.empty()) throw invalid_argument("experiment: no fractions");
    for (const double f : fractions) {
      if (!(f > 0 && f <= 1)) throw invalid_argument("experiment: fractions must be in (0, 1]");
    }
  }
  for (const auto& m : mitigations) {
    if (m.strategy != Strategy::kInjection) m.validate();
  }
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text,
                                             const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    json j = json::parse(text);
    // trial settings may sit at the top level or under "trials" (as written by to_json)
    if (j.contains("trials") && j["trials"].is_object()) {
      const json nested = j["trials"];
      j.erase("trials");
      for (const auto& [k, v] : nested.items()) j[k] = v;
    }
    if (j.contains("kind")) c.kind = parse_experiment_kind(j.at("kind").get<std::string>());
    auto path = [&](const char* key) {
      std::filesystem::path p = j.at(key).get<std::string>();
      return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };
    if (j.contains("dataset")) c.dataset = path("dataset");
    if (j.contains("scenario")) c.scenario = path("scenario");
    c.n_target = j.value("n_target", c.n_target);
    c.n_noise = j.value("n_noise", c.n_noise);
    TrialConfig& t = c.trials;
    if (j.contains("modality")) t.modality = parse_modality(j.at("modality").get<std::string>());
    t.n_trials = j.value("n_trials", t.n_trials);
    t.base_seed = j.value("base_seed", t.base_seed);
    t.holdout_fraction = j.value("holdout_fraction", t.holdout_fraction);
    t.val_fraction = j.value("val_fraction", t.val_fraction);
    t.ratio = j.value("ratio", t.ratio);
    t.train_fraction = j.value("train_fraction", t.train_fraction);
    t.threads = j.value("threads", t.threads);
    if (j.contains("gbdt")) {
      const json& g = j.at("gbdt");
      t.gbdt.learning_rate = g.value("learning_rate", t.gbdt.learning_rate);
      t.gbdt.max_trees = g.value("max_trees", t.gbdt.max_trees);
      t.gbdt.early_stop_patience = g.value("early_stop_patience", t.gbdt.early_stop_patience);
      t.gbdt.max_leaves = g.value("max_leaves", t.gbdt.max_leaves);
      t.gbdt.min_samples_per_leaf = g.value("min_samples_per_leaf", t.gbdt.min_samples_per_leaf);
      t.gbdt.n_histogram_bins = g.value("n_histogram_bins", t.gbdt.n_histogram_bins);
      t.gbdt.l2_lambda = g.value("l2_lambda", t.gbdt.l2_lambda);
      t.gbdt.min_child_hessian = g.value("min_child_hessian", t.gbdt.min_child_hessian);
    }
    if (j.contains("mitigation")) t.mitigation = MitigationSpec::from_json(j.at("mitigation").dump());
    if (j.contains("modalities")) {
      c.modalities.clear();
      for (const auto& m : j.at("modalities")) c.modalities.push_back(parse_modality(m.get<std::string>()));
    }
    if (j.contains("batch_sizes")) c.batch_sizes = j.at("batch_sizes").get<std::vector<int>>();
    if (j.contains("fractions")) c.fractions = j.at("fractions").get<std::vector<double>>();
    if (j.contains("mitigations")) {
      for (const auto& m : j.at("mitigations")) c.mitigations.push_back(MitigationSpec::from_json(m.dump()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("experiment config: ") + e.what());
  }
  return c;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  if (!dataset.empty()) j["dataset"] = dataset.string();
  if (!scenario.empty()) {
    j["scenario"] = scenario.string();
    j["n_target"] = n_target;
    j["n_noise"] = n_noise;
  }
  j["trials"] = json::parse(trials.to_json());
  json mods = json::array();
  for (const Modality m : modalities) mods.push_back(tlsleak::to_string(m));
  j["modalities"] = mods;
  j["batch_sizes"] = batch_sizes;
  j["fractions"] = fractions;
  json mits = json::array();
  for (const auto& m : mitigations) mits.push_back(json::parse(m.to_json()));
  j["mitigations"] = mits;
  return j.dump();
}

Dataset load_experiment_dataset(const ExperimentConfig& config) {
  config.validate();
  if (!config.dataset.empty()) return read_dataset(config.dataset);
  return generate(load_scenario(config.scenario), config.n_target, config.n_noise);
}

SweepResult run_experiment(const ExperimentConfig& config, const Dataset& dataset) {
  config.validate();
  switch (config.kind) {
    case ExperimentKind::kBaseline:
      return baseline_experiment(dataset, config.trials, config.modalities);
    case ExperimentKind::kBatchSweep:
      return batch_sweep(dataset, config.trials, config.batch_sizes);
    case ExperimentKind::kVolumeSweep:
      return volume_sweep(dataset, config.trials, config.fractions);
    case ExperimentKind::kMitigationCompare:
      return mitigation_compare(dataset, config.trials,
                                config.mitigations.empty() ? default_mitigations() : config.mitigations);
  }
  throw invalid_argument("unknown experiment kind");
}

SweepResult write_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                             const std::string& manifest_json) {
  config.validate();
  std::filesystem::create_directories(out_dir / "reports");
  write_file_atomic(out_dir / "manifest.json", manifest_json);
  const Dataset dataset = load_experiment_dataset(config);
  SweepResult sweep = run_experiment(config, dataset);
  for (const SweepRow& row : sweep.rows) {
    write_file_atomic(out_dir / "reports" / (sweep.key_column + "-" + row.key + ".json"),
                      row.report.to_json() + "\n");
  }
  write_file_atomic(out_dir / "results.csv", sweep.to_csv());
  return sweep;
}

}  // namespace tlsleak
