#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tlsleak/error.hpp"
#include "tlsleak/trace.hpp"

namespace tlsleak {

enum class Modality { kBoth, kSizeOnly, kTimeOnly };

const char* to_string(Modality modality);
Modality parse_modality(const std::string& text);

struct FeatureConfig {
  Modality modality = Modality::kBoth;
  std::size_t pad_len = 1;

  std::size_t width() const {
    return modality == Modality::kBoth ? 2 * pad_len : pad_len;
  }
  bool operator==(const FeatureConfig&) const = default;
};

/// Row per trace. Columns hold the size block then the time block (Both),
/// or a single stream; sequences are truncated or zero padded to pad_len.
template <typename Scalar>
struct BasicFeatureMatrix {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Matrix values;
  Eigen::VectorXi labels;  // 1 = target, 0 = noise
  std::vector<std::string> ids;
  FeatureConfig config;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

using FeatureMatrix = BasicFeatureMatrix<double>;

/// Nearest-rank 95th percentile of event counts: sorted[ceil(0.95 n) - 1].
std::size_t fit_pad_len(std::span<const Trace> traces);

template <typename Scalar = double>
BasicFeatureMatrix<Scalar> vectorize(std::span<const Trace> traces,
                                     const FeatureConfig& config) {
  if (traces.empty()) throw invalid_argument("vectorize: no traces");
  if (config.pad_len < 1) throw invalid_argument("vectorize: pad_len must be >= 1");
  const auto n = static_cast<Eigen::Index>(traces.size());
  const auto pad = static_cast<Eigen::Index>(config.pad_len);
  BasicFeatureMatrix<Scalar> out;
  out.config = config;
  out.values.setZero(n, static_cast<Eigen::Index>(config.width()));
  out.labels.resize(n);
  out.ids.reserve(traces.size());
  const Eigen::Index time_col = config.modality == Modality::kBoth ? pad : 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const Trace& t = traces[static_cast<std::size_t>(r)];
    const auto len = std::min<Eigen::Index>(pad, static_cast<Eigen::Index>(t.events.size()));
    for (Eigen::Index k = 0; k < len; ++k) {
      const auto& e = t.events[static_cast<std::size_t>(k)];
      if (config.modality != Modality::kTimeOnly) {
        out.values(r, k) = static_cast<Scalar>(e.size);
      }
      if (config.modality != Modality::kSizeOnly) {
        out.values(r, time_col + k) = static_cast<Scalar>(e.dt);
      }
    }
    out.labels(r) = t.label == Label::kTarget ? 1 : 0;
    out.ids.push_back(t.id);
  }
  return out;
}

/// CSV with header "id,label,size_0,...,time_0,...".
template <typename Scalar>
std::string to_csv(const BasicFeatureMatrix<Scalar>& m);

// Bucket-token encoding shared with the neural attackers.

inline constexpr int kBuckets = 50;
inline constexpr int kPadToken = 0;
inline constexpr int kClsToken = 1;
inline constexpr int kSepToken = 2;
inline constexpr int kLenTokenBase = 3;
inline constexpr int kTimeTokenBase = kLenTokenBase + kBuckets;
inline constexpr int kVocabSize = kTimeTokenBase + kBuckets;

/// Quantile bucketizer for the size and time streams.
///
/// Boundary j (1..49) is the nearest-rank j/50 quantile of the training
/// values; bucket(x) counts boundaries strictly below x, so ties go to the
/// lower bucket and out-of-range values clamp to 0 or 49.
class BucketEncoder {
 public:
  BucketEncoder() = default;

  bool fitted() const { return fitted_; }
  int size_bucket(double size) const;
  int time_bucket(double dt) const;

  const std::vector<double>& size_bounds() const { return size_bounds_; }
  const std::vector<double>& time_bounds() const { return time_bounds_; }

  /// Layout: Both = [CLS] sizes [SEP] times [SEP] with max_len/2 per stream;
  /// single = [CLS] stream [SEP] with up to max_len tokens.
  Modality modality = Modality::kBoth;
  std::size_t max_len = 510;
  std::string fitted_on;  // digest of the training trace ids

  std::string manifest_json() const;
  static BucketEncoder from_manifest(const std::string& text);

  /// Quantile boundaries of values for n_buckets buckets.
  static std::vector<double> quantile_bounds(std::vector<double> values, int n_buckets);
  static int bucket_of(const std::vector<double>& bounds, double x);

 private:
  friend BucketEncoder fit_bucket_encoder(std::span<const Trace>, Modality, std::size_t);

  std::vector<double> size_bounds_;
  std::vector<double> time_bounds_;
  bool fitted_ = false;
};

BucketEncoder fit_bucket_encoder(std::span<const Trace> traces,
                                 Modality modality = Modality::kBoth,
                                 std::size_t max_len = 510);

std::vector<int> encode(const Trace& trace, const BucketEncoder& encoder);
std::vector<int> encode(const Trace& trace, const BucketEncoder& encoder,
                        std::size_t max_len);

/// Token string for an id, e.g. "[LEN_12]".
std::string token_name(int id);

}  // namespace tlsleak
