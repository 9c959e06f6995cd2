#include "tlsleak/features.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tlsleak/error.hpp"

namespace tlsleak {
namespace {

using testing::make_trace;

std::vector<Trace> traces_of_lengths(const std::vector<std::size_t>& lengths) {
  std::vector<Trace> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    out.push_back(make_trace("t" + std::to_string(i),
                             std::vector<NetworkEvent>(lengths[i], NetworkEvent{0.0, 1})));
  }
  return out;
}

TEST(PadLen, NearestRank) {
  std::vector<std::size_t> a, b;
  for (std::size_t i = 1; i <= 100; ++i) {
    a.push_back(i);
    b.push_back(2 * i);
  }
  EXPECT_EQ(fit_pad_len(traces_of_lengths(a)), 95u);
  EXPECT_EQ(fit_pad_len(traces_of_lengths(b)), 190u);
  EXPECT_EQ(fit_pad_len(traces_of_lengths({7, 7, 7})), 7u);
  EXPECT_EQ(fit_pad_len(traces_of_lengths({3})), 3u);
  EXPECT_THROW(fit_pad_len({}), Error);
}

TEST(PadLen, MatchesCeilFormula) {
  Rng rng(8);
  for (int round = 0; round < 200; ++round) {
    std::vector<std::size_t> lengths(1 + rng.below(300));
    for (auto& l : lengths) l = 1 + rng.below(50);
    auto sorted = lengths;
    std::sort(sorted.begin(), sorted.end());
    const auto idx = static_cast<std::size_t>(std::ceil(0.95L * static_cast<long double>(sorted.size())));
    EXPECT_EQ(fit_pad_len(traces_of_lengths(lengths)), sorted[idx - 1]);
  }
}

TEST(Vectorize, PaddingAndConcatenation) {
  const std::vector<Trace> t = {make_trace("a", {{0, 10}, {0.5, 20}}, Label::kTarget)};
  const auto size_only = vectorize(std::span<const Trace>(t), {Modality::kSizeOnly, 3});
  EXPECT_EQ(size_only.values, (Eigen::MatrixXd(1, 3) << 10, 20, 0).finished());
  const auto both = vectorize(std::span<const Trace>(t), {Modality::kBoth, 3});
  EXPECT_EQ(both.values, (Eigen::MatrixXd(1, 6) << 10, 20, 0, 0, 0.5, 0).finished());
  const auto time_only = vectorize(std::span<const Trace>(t), {Modality::kTimeOnly, 3});
  EXPECT_EQ(time_only.values, (Eigen::MatrixXd(1, 3) << 0, 0.5, 0).finished());
  EXPECT_EQ(both.labels(0), 1);
  EXPECT_EQ(both.ids[0], "a");
}

TEST(Vectorize, TruncatesToPadLen) {
  std::vector<NetworkEvent> ev;
  for (int i = 0; i < 10; ++i) ev.push_back({0.1 * i, 100 + i});
  const std::vector<Trace> t = {make_trace("a", ev)};
  const auto m = vectorize(std::span<const Trace>(t), {Modality::kBoth, 4});
  EXPECT_EQ(m.values, (Eigen::MatrixXd(1, 8) << 100, 101, 102, 103, 0, 0.1, 0.2, 0.1 * 3).finished());
}

TEST(Vectorize, WidthProperty) {
  Rng rng(3);
  std::vector<Trace> traces;
  for (int i = 0; i < 50; ++i) traces.push_back(testing::random_trace(rng, "r" + std::to_string(i)));
  for (const Modality m : {Modality::kBoth, Modality::kSizeOnly, Modality::kTimeOnly}) {
    for (const std::size_t pad : {1u, 7u, 64u}) {
      const auto x = vectorize(std::span<const Trace>(traces), {m, pad});
      EXPECT_EQ(static_cast<std::size_t>(x.cols()), pad * (m == Modality::kBoth ? 2 : 1));
      EXPECT_EQ(x.rows(), 50);
      EXPECT_TRUE(x.values.allFinite());
      const auto xf = vectorize<float>(std::span<const Trace>(traces), {m, pad});
      EXPECT_EQ(xf.cols(), x.cols());
    }
  }
  EXPECT_THROW(vectorize(std::span<const Trace>(), {Modality::kBoth, 3}), Error);
}

TEST(Vectorize, CsvHeader) {
  const std::vector<Trace> t = {make_trace("a", {{0, 10}, {0.5, 20}})};
  const std::string csv = to_csv(vectorize(std::span<const Trace>(t), {Modality::kBoth, 2}));
  EXPECT_EQ(csv, "id,label,size_0,size_1,time_0,time_1\na,0,10,20,0,0.5\n");
}

TEST(Buckets, MedianSplitOfFourValues) {
  const auto bounds = BucketEncoder::quantile_bounds({1, 2, 3, 4}, 2);
  EXPECT_EQ(BucketEncoder::bucket_of(bounds, 1), 0);
  EXPECT_EQ(BucketEncoder::bucket_of(bounds, 2), 0);
  EXPECT_EQ(BucketEncoder::bucket_of(bounds, 3), 1);
  EXPECT_EQ(BucketEncoder::bucket_of(bounds, 4), 1);
  // out of range clamps
  EXPECT_EQ(BucketEncoder::bucket_of(bounds, -100), 0);
  EXPECT_EQ(BucketEncoder::bucket_of(bounds, 100), 1);
}

TEST(Buckets, IdenticalValuesAllInBucketZero) {
  const auto bounds = BucketEncoder::quantile_bounds(std::vector<double>(100, 5.0), kBuckets);
  EXPECT_EQ(BucketEncoder::bucket_of(bounds, 5.0), 0);
  EXPECT_EQ(BucketEncoder::bucket_of(bounds, 4.0), 0);
}

TEST(Buckets, StandardNormalCountsOnTrainingData) {
  Rng rng(12);
  std::vector<double> v(100000);
  for (auto& x : v) x = rng.normal();
  const auto bounds = BucketEncoder::quantile_bounds(v, kBuckets);
  std::vector<int> counts(kBuckets, 0);
  for (const double x : v) ++counts[static_cast<std::size_t>(BucketEncoder::bucket_of(bounds, x))];
  const double share = 100000.0 / kBuckets;
  for (const int c : counts) EXPECT_LE(std::abs(c - share), 3 * std::sqrt(share));
}

TEST(Buckets, MonotoneAndOccupancyProperties) {
  Rng rng(77);
  for (int round = 0; round < 50; ++round) {
    const std::size_t n = 500 + rng.below(5000);
    std::vector<double> v(n);
    const bool integer = round % 2 == 1;
    for (auto& x : v) x = integer ? static_cast<double>(rng.below(100000)) : rng.lognormal(0, 2);
    const auto bounds = BucketEncoder::quantile_bounds(v, kBuckets);
    ASSERT_TRUE(std::is_sorted(bounds.begin(), bounds.end()));
    std::vector<int> counts(kBuckets, 0);
    for (const double x : v) ++counts[static_cast<std::size_t>(BucketEncoder::bucket_of(bounds, x))];
    const double share = static_cast<double>(n) / kBuckets;
    for (const int c : counts) {
      EXPECT_GE(c, share / 2);
      EXPECT_LE(c, share * 2);
    }
    for (int k = 0; k < 100; ++k) {
      double a = v[rng.below(n)], b = v[rng.below(n)] + rng.normal();
      if (a > b) std::swap(a, b);
      EXPECT_LE(BucketEncoder::bucket_of(bounds, a), BucketEncoder::bucket_of(bounds, b));
    }
  }
}

TEST(Encode, BothLayoutTruncatesTo255PerStream) {
  std::vector<NetworkEvent> ev;
  for (int i = 0; i < 1000; ++i) ev.push_back({i == 0 ? 0.0 : 0.01 * (i % 7), 150 + i % 13});
  const std::vector<Trace> t = {make_trace("a", ev)};
  const BucketEncoder enc = fit_bucket_encoder(t, Modality::kBoth, 510);
  const auto ids = encode(t[0], enc);
  ASSERT_EQ(ids.size(), 255u + 255u + 3u);
  EXPECT_EQ(ids[0], kClsToken);
  EXPECT_EQ(ids[256], kSepToken);
  EXPECT_EQ(ids.back(), kSepToken);
  for (std::size_t i = 1; i <= 255; ++i) {
    EXPECT_GE(ids[i], kLenTokenBase);
    EXPECT_LT(ids[i], kTimeTokenBase);
    EXPECT_GE(ids[256 + i], kTimeTokenBase);
    EXPECT_LT(ids[256 + i], kVocabSize);
  }
}

TEST(Encode, SingleLayout) {
  std::vector<NetworkEvent> ev(600, NetworkEvent{0.0, 9});
  const std::vector<Trace> t = {make_trace("a", ev)};
  const BucketEncoder enc = fit_bucket_encoder(t, Modality::kSizeOnly);
  const auto ids = encode(t[0], enc);
  EXPECT_EQ(ids.size(), 512u);
  EXPECT_EQ(ids[1], kLenTokenBase);
  const auto short_ids = encode(make_trace("b", {{0, 9}, {0.1, 9}}), enc);
  EXPECT_EQ(short_ids, (std::vector<int>{kClsToken, kLenTokenBase, kLenTokenBase, kSepToken}));
}

TEST(Encode, UnfittedEncoderRejected) {
  const BucketEncoder enc;
  EXPECT_THROW(encode(make_trace("a", {{0, 1}}), enc), Error);
  EXPECT_THROW(enc.manifest_json(), Error);
}

TEST(Encode, ManifestRoundTrip) {
  Rng rng(5);
  std::vector<Trace> traces;
  for (int i = 0; i < 40; ++i) traces.push_back(testing::random_trace(rng, "r" + std::to_string(i)));
  for (const Modality m : {Modality::kBoth, Modality::kTimeOnly}) {
    const BucketEncoder enc = fit_bucket_encoder(traces, m, 64);
    const BucketEncoder back = BucketEncoder::from_manifest(enc.manifest_json());
    EXPECT_EQ(back.size_bounds(), enc.size_bounds());
    EXPECT_EQ(back.time_bounds(), enc.time_bounds());
    EXPECT_EQ(back.max_len, 64u);
    EXPECT_EQ(back.modality, m);
    EXPECT_EQ(back.fitted_on, enc.fitted_on);
    for (const auto& t : traces) EXPECT_EQ(encode(t, back), encode(t, enc));
  }
  EXPECT_EQ(token_name(kTimeTokenBase + 49), "[TIME_49]");
  EXPECT_EQ(token_name(kLenTokenBase), "[LEN_0]");
  EXPECT_EQ(kVocabSize, 103);
  EXPECT_THROW(BucketEncoder::from_manifest("{\"time_bounds\": [], \"size_bounds\": [], \"max_len\": 3, \"layout\": \"zig\"}"),
               Error);
}

}  // namespace
}  // namespace tlsleak
