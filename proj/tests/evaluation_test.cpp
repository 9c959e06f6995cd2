#include "tlsleak/evaluation.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tlsleak/error.hpp"

namespace tlsleak {
namespace {

ScoredSet set(std::vector<double> pos, std::vector<double> neg) {
  return ScoredSet{std::move(pos), std::move(neg)};
}

// Scores on a coarse grid so ties show up often.
ScoredSet random_set(Rng& rng, int max_per_class, bool coarse) {
  ScoredSet s;
  const auto np = 1 + rng.below(static_cast<std::uint64_t>(max_per_class));
  const auto nn = 1 + rng.below(static_cast<std::uint64_t>(max_per_class));
  const auto draw = [&](double shift) {
    const double v = rng.normal() + shift;
    return coarse ? std::round(v * 2) / 2 : v;
  };
  for (std::uint64_t i = 0; i < np; ++i) s.positives.push_back(draw(0.7));
  for (std::uint64_t i = 0; i < nn; ++i) s.negatives.push_back(draw(0.0));
  return s;
}

TEST(Auprc, Examples) {
  EXPECT_DOUBLE_EQ(auprc(set({0.9, 0.8}, {0.2, 0.1})), 1.0);
  EXPECT_DOUBLE_EQ(auprc(set({0.5}, {0.5, 0.5, 0.5})), 0.25);
  EXPECT_NEAR(auprc(set({0.8, 0.4}, {0.6, 0.2})), 5.0 / 6.0, 1e-15);
}

TEST(Auprc, EmptyClassOrNanRejected) {
  EXPECT_THROW(auprc(set({}, {0.1})), Error);
  EXPECT_THROW(auprc(set({0.1}, {})), Error);
  EXPECT_THROW(auprc(set({std::nan("")}, {0.1})), Error);
}

TEST(Auprc, MatchesBruteForceOracle) {
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const ScoredSet s = random_set(rng, 50, i % 2 == 0);
    ASSERT_NEAR(auprc(s), testing::brute_force_auprc(s.positives, s.negatives), 1e-12) << "set " << i;
  }
}

TEST(Auprc, InvariantUnderInputOrder) {
  Rng rng(32);
  for (int i = 0; i < 100; ++i) {
    ScoredSet s = random_set(rng, 30, true);
    const double a = auprc(s);
    std::reverse(s.positives.begin(), s.positives.end());
    std::reverse(s.negatives.begin(), s.negatives.end());
    EXPECT_EQ(auprc(s), a);
  }
}

TEST(Projection, Examples) {
  EXPECT_DOUBLE_EQ(precision_at_recall_projected(set({0.9, 0.8}, {0.2, 0.1}), 0.5, 10000), 1.0);
  std::vector<double> same;
  for (int i = 1; i <= 10; ++i) same.push_back(i);
  EXPECT_NEAR(precision_at_recall_projected(set(same, same), 0.5, 10000), 1.0 / 10001.0, 1e-15);
  const auto s = set({0.9, 0.7, 0.5}, {0.6, 0.4});
  const OperatingPoint op = operating_point(s, 1.0);
  EXPECT_EQ(op.threshold, 0.5);
  EXPECT_EQ(op.fpr, 0.5);
  EXPECT_NEAR(precision_at_recall_projected(s, 1.0, 1), 2.0 / 3.0, 1e-15);
}

TEST(Projection, OperatingPointIsHighestThresholdReachingRecall) {
  const auto s = set({0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05}, {0.75, 0.35});
  EXPECT_EQ(operating_point(s, 0.05).threshold, 0.9);  // 1 of 10 already >= 5%
  EXPECT_EQ(operating_point(s, 0.10).threshold, 0.9);
  EXPECT_EQ(operating_point(s, 0.20).threshold, 0.8);
  const auto op = operating_point(s, 0.5);
  EXPECT_EQ(op.threshold, 0.5);
  EXPECT_EQ(op.tp, 5);
  EXPECT_EQ(op.fp, 1);
  EXPECT_THROW(operating_point(s, 0.0), Error);
  EXPECT_THROW(operating_point(s, 1.5), Error);
  EXPECT_THROW(precision_at_recall_projected(s, 0.5, 0.5), Error);
}

TEST(Projection, TiedPositivesCountedTogether) {
  const auto op = operating_point(set({0.5, 0.5, 0.5, 0.1}, {0.5}), 0.25);
  EXPECT_EQ(op.tp, 3);
  EXPECT_DOUBLE_EQ(op.tpr, 0.75);
  EXPECT_EQ(op.fp, 1);
}

TEST(Projection, MatchesBruteForce) {
  Rng rng(33);
  for (int i = 0; i < 300; ++i) {
    const ScoredSet s = random_set(rng, 40, i % 2 == 0);
    for (const double r : kReportRecalls) {
      for (const double ratio : {1.0, 37.0, 10000.0}) {
        ASSERT_NEAR(precision_at_recall_projected(s, r, ratio),
                    testing::brute_force_projected_precision(s.positives, s.negatives, r, ratio), 1e-12);
      }
    }
  }
}

TEST(Projection, NonIncreasingInRatio) {
  Rng rng(34);
  for (int i = 0; i < 200; ++i) {
    const ScoredSet s = random_set(rng, 40, true);
    for (const double r : kReportRecalls) {
      double prev = 2;
      for (double ratio = 1; ratio <= 1e6; ratio *= 3.7) {
        const double p = precision_at_recall_projected(s, r, ratio);
        EXPECT_LE(p, prev);
        prev = p;
      }
    }
  }
}

TEST(Projection, ConsistentWithEmpiricalPrecisionAtNaturalRatio) {
  Rng rng(35);
  for (int i = 0; i < 300; ++i) {
    ScoredSet s = random_set(rng, 50, i % 3 == 0);
    if (s.negatives.size() < s.positives.size()) std::swap(s.positives, s.negatives);
    const double ratio = static_cast<double>(s.negatives.size()) / static_cast<double>(s.positives.size());
    for (const double r : kReportRecalls) {
      const OperatingPoint op = operating_point(s, r);
      const double empirical = static_cast<double>(op.tp) / static_cast<double>(op.tp + op.fp);
      EXPECT_NEAR(precision_at_recall_projected(s, r, ratio), empirical, 1e-12);
    }
  }
}

TEST(Projection, MonteCarloResamplingAgrees) {
  Rng rng(36);
  ScoredSet s;
  for (int i = 0; i < 200; ++i) s.positives.push_back(rng.normal() + 1.0);
  for (int i = 0; i < 40000; ++i) s.negatives.push_back(rng.normal());
  const double ratio = 1000;
  const std::size_t m = static_cast<std::size_t>(ratio) * s.positives.size();
  for (const double r : {0.2, 0.5}) {
    const OperatingPoint op = operating_point(s, r);
    const double projected = precision_at_recall_projected(s, r, ratio);
    std::vector<double> draws;
    for (int rep = 0; rep < 50; ++rep) {
      std::int64_t fp = 0;
      for (std::size_t k = 0; k < m; ++k) fp += s.negatives[rng.below(s.negatives.size())] >= op.threshold;
      draws.push_back(static_cast<double>(op.tp) / static_cast<double>(op.tp + fp));
    }
    double mean = 0, var = 0;
    for (const double d : draws) mean += d;
    mean /= static_cast<double>(draws.size());
    for (const double d : draws) var += (d - mean) * (d - mean);
    const double se = std::sqrt(var / static_cast<double>(draws.size() - 1) / static_cast<double>(draws.size()));
    EXPECT_LE(std::abs(mean - projected), 3 * se) << "recall " << r;
  }
}

Trace payload_trace(const std::vector<std::pair<int, std::int64_t>>& counts) {
  std::vector<NetworkEvent> ev;
  for (const auto& [n, payload] : counts) {
    for (int i = 0; i < n; ++i) ev.push_back({0.0, 120 + 22 + payload});
  }
  return testing::make_trace("p", ev);
}

TEST(TokensPerEvent, Examples) {
  const std::vector<Trace> a = {payload_trace({{52, 5}, {48, 4}})};
  EXPECT_EQ(estimate_tokens_per_event(a), 1.0);
  const std::vector<Trace> b = {payload_trace({{4, 10}, {96, 9}})};
  EXPECT_NEAR(estimate_tokens_per_event(b), 2.0, 1e-12);
  const std::vector<Trace> c = {payload_trace({{60, 5}, {40, 6}})};
  EXPECT_EQ(estimate_tokens_per_event(c), 1.0);
  const std::vector<Trace> d = {payload_trace({{1, 27}})};  // 5.97 -> not snapped
  EXPECT_NEAR(estimate_tokens_per_event(d), 27 / 4.52, 1e-12);
  const std::vector<Trace> tiny = {testing::make_trace("t", {{0, 5}})};  // below envelope
  EXPECT_EQ(estimate_tokens_per_event(tiny), 0.0);
  EXPECT_THROW(estimate_tokens_per_event({}), Error);
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_EQ(median({7}), 7);
  EXPECT_THROW(median({}), Error);
}

EvalReport sample_report() {
  EvalReport r;
  r.modality = "size";
  r.params_digest = "abc";
  r.notes = {"note one"};
  for (int t = 0; t < 3; ++t) {
    TrialResult tr;
    tr.trial = 2 - t;
    tr.seed = 100 + static_cast<std::uint64_t>(t);
    tr.auprc = 0.5 + 0.1 * t;
    tr.precision_at_recall = {0.9, 0.8 - 0.1 * t, 0.1, 1.0 / 3.0};
    tr.n_train = 10;
    tr.n_test_target = 4;
    tr.n_test_noise = 6;
    tr.n_trees = 7 + t;
    r.trials.push_back(tr);
  }
  r.finalize();
  return r;
}

TEST(Report, FinalizeSortsAndTakesMedians) {
  const EvalReport r = sample_report();
  EXPECT_EQ(r.trials[0].trial, 0);
  EXPECT_EQ(r.trials[2].seed, 100u);
  EXPECT_EQ(r.median_auprc, 0.6);
  EXPECT_NEAR(r.median_precision_at_recall[1], 0.7, 1e-15);
  EXPECT_EQ(r.median_precision_at_recall[0], 0.9);
}

TEST(Report, JsonRoundTrip) {
  const EvalReport r = sample_report();
  const EvalReport back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back.trials, r.trials);
  EXPECT_EQ(back.median_auprc, r.median_auprc);
  EXPECT_EQ(back.median_precision_at_recall, r.median_precision_at_recall);
  EXPECT_EQ(back.notes, r.notes);
  EXPECT_EQ(back.params_digest, "abc");
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_THROW(EvalReport::from_json("{\"ratio\": 1}"), Error);
  EXPECT_THROW(EvalReport::from_json("not json"), Error);
}

TEST(Report, CsvLayout) {
  const std::string csv = sample_report().to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "trial,auprc,p@5,p@10,p@20,p@50");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  // rows are in trial order with full precision
  EXPECT_NE(csv.find("\n0,0.69999999999999996,0.90000000000000002,"), std::string::npos);
  EXPECT_NE(csv.find("\n2,0.5,"), std::string::npos);
}

}  // namespace
}  // namespace tlsleak
