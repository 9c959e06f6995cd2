#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tlsleak/features.hpp"

namespace tlsleak {

/// Boosting hyperparameters. learning_rate, max_trees and patience follow
/// the reference attacker; leaf limits stand in for framework defaults.
struct TrainParams {
  double learning_rate = 0.02;
  int max_trees = 5000;
  int early_stop_patience = 40;  // rounds without validation log-loss gain
  int max_leaves = 31;
  int min_samples_per_leaf = 20;
  int n_histogram_bins = 255;
  double l2_lambda = 1.0;
  double min_child_hessian = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainParams&) const = default;
};

struct TreeNode {
  int feature = -1;        // -1 marks a leaf
  int bin = -1;            // rank of the threshold among the feature's bins
  double threshold = 0.0;  // x <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;      // leaf output, shrinkage included

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  template <typename Row>
  double predict(const Row& x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  int leaf_count() const;
  bool operator==(const Tree&) const = default;
};

struct GbdtModel {
  double base_score = 0.0;  // log-odds of the training prevalence
  std::vector<Tree> trees;
  TrainParams params;
  int n_features = 0;
  std::map<std::string, std::string> meta;  // free-form, persisted

  // Training curves (not persisted): loss after each boosting round.
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_iteration = -1;
};

/// Per-feature quantile binning of training columns. Split decisions depend
/// only on the order statistics of each column.
class FeatureBinner {
 public:
  FeatureBinner() = default;
  FeatureBinner(const Eigen::MatrixXd& x, int max_bins);

  int n_bins(int feature) const {
    return static_cast<int>(bounds_[static_cast<std::size_t>(feature)].size()) + 1;
  }
  /// Threshold separating bin b from bin b + 1.
  double bound(int feature, int b) const {
    return bounds_[static_cast<std::size_t>(feature)][static_cast<std::size_t>(b)];
  }
  int bin(int feature, double x) const;

  /// Bounds for one column: midpoints between adjacent distinct values, with
  /// distinct values greedily merged into equal-count bins when there are
  /// more than max_bins of them.
  static std::vector<double> column_bounds(std::vector<double> column, int max_bins);

 private:
  std::vector<std::vector<double>> bounds_;
};

/// Binary log-loss boosting with Newton leaf values and early stopping on
/// validation log-loss. Labels: 1 = target.
GbdtModel fit(const FeatureMatrix& train, const FeatureMatrix& val,
              const TrainParams& params = {});

Eigen::VectorXd predict_raw(const GbdtModel& model, const Eigen::MatrixXd& x);
Eigen::VectorXd predict_proba(const GbdtModel& model, const Eigen::MatrixXd& x);
Eigen::VectorXd predict_proba(const GbdtModel& model, const FeatureMatrix& features);

/// Mean binary log-loss of raw scores against 0/1 labels.
double log_loss(const Eigen::VectorXd& raw, const Eigen::VectorXi& labels);

inline constexpr int kModelVersion = 1;

std::string to_json(const GbdtModel& model);
GbdtModel model_from_json(const std::string& text);
void save_model(const GbdtModel& model, const std::filesystem::path& path);
GbdtModel load_model(const std::filesystem::path& path);

}  // namespace tlsleak
