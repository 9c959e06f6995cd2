#pragma once

// Slow, direct reference computations used to check the fast paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tlsleak/gbdt.hpp"

namespace tlsleak::testing {

// AP straight from the definition: for every distinct threshold tau (high to
// low) take precision/recall of {score >= tau} and add P * delta R.
inline double brute_force_auprc(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<double> taus(pos);
  taus.insert(taus.end(), neg.begin(), neg.end());
  std::sort(taus.begin(), taus.end(), std::greater<>());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  double ap = 0, prev_recall = 0;
  for (const double tau : taus) {
    const auto tp = std::count_if(pos.begin(), pos.end(), [&](double s) { return s >= tau; });
    const auto fp = std::count_if(neg.begin(), neg.end(), [&](double s) { return s >= tau; });
    const double recall = static_cast<double>(tp) / static_cast<double>(pos.size());
    if (tp > 0) ap += (recall - prev_recall) * static_cast<double>(tp) / static_cast<double>(tp + fp);
    prev_recall = recall;
  }
  return ap;
}

// precision at the largest threshold with recall >= r, by scanning every candidate
inline double brute_force_projected_precision(const std::vector<double>& pos,
                                              const std::vector<double>& neg, double r,
                                              double ratio) {
  double best_tau = -std::numeric_limits<double>::infinity();
  for (const double tau : pos) {
    const auto tp = std::count_if(pos.begin(), pos.end(), [&](double s) { return s >= tau; });
    if (static_cast<double>(tp) >= r * static_cast<double>(pos.size()) - 1e-9) best_tau = std::max(best_tau, tau);
  }
  const auto tp = std::count_if(pos.begin(), pos.end(), [&](double s) { return s >= best_tau; });
  const auto fp = std::count_if(neg.begin(), neg.end(), [&](double s) { return s >= best_tau; });
  const double tpr = static_cast<double>(tp) / static_cast<double>(pos.size());
  const double fpr = static_cast<double>(fp) / static_cast<double>(neg.size());
  return tpr / (tpr + fpr * ratio);
}

struct SplitCandidate {
  int f;
  double t, gain, gl, hl;
};

struct SplitOracle {
  std::vector<SplitCandidate> candidates;  // every admissible split with gain > 0
  int feature = -1;
  double threshold = 0;
  double gain = 0;
};

// First split of the first tree, enumerating every (feature, midpoint) pair.
// Gradients start from the log-odds of the prevalence.
inline SplitOracle brute_force_first_split(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                                           double lambda, int min_samples) {
  const auto n = x.rows();
  const double prev = y.cast<double>().mean();
  std::vector<double> g(static_cast<std::size_t>(n)), h(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    g[static_cast<std::size_t>(i)] = prev - y(i);
    h[static_cast<std::size_t>(i)] = prev * (1 - prev);
  }
  double G = 0, H = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    G += g[static_cast<std::size_t>(i)];
    H += h[static_cast<std::size_t>(i)];
  }
  const auto score = [&](double gs, double hs) { return gs * gs / (hs + lambda); };
  SplitOracle best;
  auto& cands = best.candidates;
  for (int f = 0; f < x.cols(); ++f) {
    std::vector<double> v(x.col(f).data(), x.col(f).data() + n);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const double t = v[k] + (v[k + 1] - v[k]) / 2;
      double gl = 0, hl = 0;
      int nl = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (x(i, f) <= t) {
          gl += g[static_cast<std::size_t>(i)];
          hl += h[static_cast<std::size_t>(i)];
          ++nl;
        }
      }
      if (nl < min_samples || n - nl < min_samples) continue;
      const double gain = score(gl, hl) + score(G - gl, H - hl) - score(G, H);
      if (gain > 0) cands.push_back({f, t, gain, gl, hl});
    }
  }
  if (cands.empty()) return best;
  std::size_t b = 0;
  for (std::size_t i = 1; i < cands.size(); ++i) {
    if (cands[i].gain > cands[b].gain) b = i;  // ties keep the earliest (feature, threshold)
  }
  best.feature = cands[b].f;
  best.threshold = cands[b].t;
  best.gain = cands[b].gain;
  return best;
}

// Fits one depth-1 tree and compares its root with the oracle. Returns an
// empty string on agreement, else a description of the mismatch.
inline std::string first_split_mismatch(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                                        int min_samples) {
  TrainParams p;
  p.max_trees = 1;
  p.max_leaves = 2;
  p.min_samples_per_leaf = min_samples;
  FeatureMatrix fm;
  fm.values = x;
  fm.labels = y;
  const GbdtModel m = fit(fm, fm, p);
  const SplitOracle o = brute_force_first_split(x, y, p.l2_lambda, min_samples);
  if (o.feature < 0) return m.trees.empty() ? "" : "model split where the oracle found none";
  if (m.trees.size() != 1 || m.trees[0].nodes.size() != 3) return "model did not split";
  const TreeNode& root = m.trees[0].nodes[0];
  const auto rel = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); };
  // Candidates within rounding of the best gain are all acceptable; float sums
  // in a different order can flip exact ties. Tie order is tested separately.
  const SplitCandidate* hit = nullptr;
  for (const auto& c : o.candidates) {
    if (c.f == root.feature && c.t == root.threshold && rel(c.gain, o.gain)) hit = &c;
  }
  if (hit == nullptr) {
    return "root split f=" + std::to_string(root.feature) + " t=" + std::to_string(root.threshold) +
           " oracle f=" + std::to_string(o.feature) + " t=" + std::to_string(o.threshold);
  }
  double G = 0, H = 0;
  const double prev = y.cast<double>().mean();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    G += prev - y(i);
    H += prev * (1 - prev);
  }
  const double want_l = -p.learning_rate * hit->gl / (hit->hl + p.l2_lambda);
  const double want_r = -p.learning_rate * (G - hit->gl) / (H - hit->hl + p.l2_lambda);
  const double lv = m.trees[0].nodes[static_cast<std::size_t>(root.left)].value;
  const double rv = m.trees[0].nodes[static_cast<std::size_t>(root.right)].value;
  if (std::abs(lv - want_l) > 1e-12 || std::abs(rv - want_r) > 1e-12) {
    return "leaf values differ from -lr*G/(H+lambda)";
  }
  return "";
}

}  // namespace tlsleak::testing
