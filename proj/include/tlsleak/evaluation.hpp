#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tlsleak/trace.hpp"

namespace tlsleak {

struct ScoredSet {
  std::vector<double> positives;
  std::vector<double> negatives;

  /// Splits scores by 0/1 label.
  static ScoredSet from(const Eigen::VectorXd& scores, const Eigen::VectorXi& labels);
  void require_both() const;
};

/// Step-wise average precision. Tied scores form one threshold: every
/// positive in a tie group is credited with the precision at the group's end.
double auprc(const ScoredSet& scored);

/// Highest threshold whose true-positive fraction reaches the recall.
struct OperatingPoint {
  double threshold = 0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  double tpr = 0;  // achieved, >= requested recall
  double fpr = 0;
};

OperatingPoint operating_point(const ScoredSet& scored, double recall);

/// Precision at the operating point with negatives reweighted to
/// ratio : 1 against positives: tpr / (tpr + fpr * ratio).
double precision_at_recall_projected(const ScoredSet& scored, double recall, double ratio);

inline constexpr double kCharsPerToken = 4.52;

/// Mean over events of max(size - B - C, 0) / 4.52, snapped to 1.0 when
/// within 0.25 of it.
double estimate_tokens_per_event(std::span<const Trace> traces, std::int64_t envelope_bytes = 120,
                                 std::int64_t tls_overhead = 22);

inline constexpr std::array<double, 4> kReportRecalls{0.05, 0.10, 0.20, 0.50};

/// Median; mean of the middle pair for even counts.
double median(std::vector<double> values);

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  double auprc = 0;
  std::vector<double> precision_at_recall;  // aligned with EvalReport::recalls
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test_target = 0;
  std::size_t n_test_noise = 0;
  int n_trees = 0;

  bool operator==(const TrialResult&) const = default;
};

struct EvalReport {
  std::string attacker = "gbdt";
  std::string modality;
  double ratio = 10000;
  std::vector<double> recalls{kReportRecalls.begin(), kReportRecalls.end()};
  std::vector<TrialResult> trials;
  double median_auprc = 0;
  std::vector<double> median_precision_at_recall;
  std::string params_digest;
  std::vector<std::string> notes;

  /// Recomputes the medians from trials (sorted by trial index first).
  void finalize();

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);

  /// Header "trial,auprc,p@5,p@10,p@20,p@50", one row per trial.
  std::string to_csv() const;
};

/// Single-trial report for an already scored test set.
TrialResult score_trial(const ScoredSet& scored, const std::vector<double>& recalls, double ratio);

/// Column name for a recall, e.g. 0.05 -> "p@5".
std::string recall_column(double recall);

}  // namespace tlsleak
