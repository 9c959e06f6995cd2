#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tlsleak/evaluation.hpp"
#include "tlsleak/features.hpp"
#include "tlsleak/gbdt.hpp"
#include "tlsleak/mitigation.hpp"
#include "tlsleak/trace.hpp"

namespace tlsleak {

/// Fits on train (early stopping on val) and returns test scores.
/// n_trees is reported back for the trial record.
using Attacker = std::function<Eigen::VectorXd(const FeatureMatrix& train, const FeatureMatrix& val,
                                               const FeatureMatrix& test, int& n_trees)>;

Attacker gbdt_attacker(const TrainParams& params = {});

struct TrialConfig {
  Modality modality = Modality::kBoth;
  TrainParams gbdt;
  int n_trials = 5;
  std::uint64_t base_seed = 0;
  double holdout_fraction = 0.2;
  double val_fraction = 0.05;
  double ratio = 10000;
  double train_fraction = 1.0;  // nested subsample of the training split
  MitigationSpec mitigation;    // fitted on each trial's training split
  int threads = 1;

  void validate() const;
  std::string to_json() const;
};

/// One trial: split with seed base_seed + trial, subsample, mitigate, fit
/// pad_len on train, vectorize, fit, score the held-out prompts.
TrialResult run_trial(const Dataset& dataset, const TrialConfig& config, int trial,
                      const Attacker& attacker = {});

EvalReport run_trials(const Dataset& dataset, const TrialConfig& config,
                      const Attacker& attacker = {});

struct SweepRow {
  std::string key;
  EvalReport report;
};

struct SweepResult {
  std::string kind;
  std::string key_column;
  std::vector<SweepRow> rows;

  /// Header "<key>,median_auprc,p@5,p@10,p@20,p@50", one row per setting.
  std::string to_csv() const;
};

SweepResult baseline_experiment(const Dataset& dataset, const TrialConfig& config,
                                const std::vector<Modality>& modalities);
SweepResult batch_sweep(const Dataset& dataset, const TrialConfig& config,
                        const std::vector<int>& batch_sizes);
SweepResult volume_sweep(const Dataset& dataset, const TrialConfig& config,
                         const std::vector<double>& fractions);
/// Row per spec; keys are the strategy names, suffixed on repeats.
SweepResult mitigation_compare(const Dataset& dataset, const TrialConfig& config,
                               const std::vector<MitigationSpec>& specs);

enum class ExperimentKind { kBaseline, kBatchSweep, kVolumeSweep, kMitigationCompare };

const char* to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& text);

/// Everything an experiment run depends on. Either dataset or scenario is
/// set; a scenario is synthesized with n_target / n_noise traces.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kBaseline;
  std::filesystem::path dataset;
  std::filesystem::path scenario;
  std::size_t n_target = 2000;
  std::size_t n_noise = 8000;
  TrialConfig trials;
  std::vector<Modality> modalities{Modality::kBoth, Modality::kSizeOnly, Modality::kTimeOnly};
  std::vector<int> batch_sizes{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<double> fractions{0.25, 0.5, 1.0};
  std::vector<MitigationSpec> mitigations;  // empty: none, injection, padding

  /// JSON keys mirror the fields; relative paths resolve against base_dir.
  static ExperimentConfig from_json(const std::string& text,
                                    const std::filesystem::path& base_dir = {});
  std::string to_json() const;
  void validate() const;
};

std::vector<MitigationSpec> default_mitigations();

Dataset load_experiment_dataset(const ExperimentConfig& config);

SweepResult run_experiment(const ExperimentConfig& config, const Dataset& dataset);

/// Writes manifest.json (before any work), then results.csv and one
/// report JSON per row under reports/. Returns the sweep.
SweepResult write_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                             const std::string& manifest_json);

}  // namespace tlsleak
