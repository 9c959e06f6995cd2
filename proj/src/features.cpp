#include "tlsleak/features.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "tlsleak/io.hpp"

namespace tlsleak {

const char* to_string(Modality modality) {
  switch (modality) {
    case Modality::kBoth: return "both";
    case Modality::kSizeOnly: return "size";
    case Modality::kTimeOnly: return "time";
  }
  return "both";
}

Modality parse_modality(const std::string& text) {
  if (text == "both") return Modality::kBoth;
  if (text == "size" || text == "size-only") return Modality::kSizeOnly;
  if (text == "time" || text == "time-only") return Modality::kTimeOnly;
  throw invalid_argument("unknown modality '" + text + "' (both|size|time)");
}

std::size_t fit_pad_len(std::span<const Trace> traces) {
  if (traces.empty()) throw invalid_argument("fit_pad_len: no traces");
  std::vector<std::size_t> lengths;
  lengths.reserve(traces.size());
  for (const auto& t : traces) lengths.push_back(t.events.size());
  std::sort(lengths.begin(), lengths.end());
  const std::size_t n = lengths.size();
  const std::size_t rank = (95 * n + 99) / 100;  // ceil(0.95 n), exact
  return std::max<std::size_t>(1, lengths[rank - 1]);
}

template <typename Scalar>
std::string to_csv(const BasicFeatureMatrix<Scalar>& m) {
  std::ostringstream out;
  out.precision(17);
  out << "id,label";
  const std::size_t pad = m.config.pad_len;
  if (m.config.modality != Modality::kTimeOnly) {
    for (std::size_t k = 0; k < pad; ++k) out << ",size_" << k;
  }
  if (m.config.modality != Modality::kSizeOnly) {
    for (std::size_t k = 0; k < pad; ++k) out << ",time_" << k;
  }
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << m.ids[static_cast<std::size_t>(r)] << ',' << m.labels(r);
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << m.values(r, c);
    out << '\n';
  }
  return out.str();
}

template std::string to_csv(const BasicFeatureMatrix<double>&);
template std::string to_csv(const BasicFeatureMatrix<float>&);

std::vector<double> BucketEncoder::quantile_bounds(std::vector<double> values,
                                                   int n_buckets) {
  if (values.empty()) throw invalid_argument("quantile_bounds: no values");
  if (n_buckets < 1) throw invalid_argument("quantile_bounds: n_buckets must be >= 1");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  const auto k = static_cast<std::size_t>(n_buckets);
  std::vector<double> bounds;
  bounds.reserve(k - 1);
  for (std::size_t j = 1; j < k; ++j) {
    const std::size_t rank = (j * n + k - 1) / k;  // ceil(j n / k)
    bounds.push_back(values[std::max<std::size_t>(rank, 1) - 1]);
  }
  return bounds;
}

int BucketEncoder::bucket_of(const std::vector<double>& bounds, double x) {
  return static_cast<int>(std::lower_bound(bounds.begin(), bounds.end(), x) -
                          bounds.begin());
}

int BucketEncoder::size_bucket(double size) const {
  if (!fitted_) throw invalid_argument("bucket encoder is not fitted");
  return bucket_of(size_bounds_, size);
}

int BucketEncoder::time_bucket(double dt) const {
  if (!fitted_) throw invalid_argument("bucket encoder is not fitted");
  return bucket_of(time_bounds_, dt);
}

BucketEncoder fit_bucket_encoder(std::span<const Trace> traces, Modality modality,
                                 std::size_t max_len) {
  std::vector<double> sizes;
  std::vector<double> times;
  for (const auto& t : traces) {
    for (const auto& e : t.events) {
      sizes.push_back(static_cast<double>(e.size));
      times.push_back(e.dt);
    }
  }
  if (sizes.empty()) throw invalid_argument("fit_bucket_encoder: no events");
  BucketEncoder enc;
  std::string ids;
  for (const auto& t : traces) ids += t.id + '\n';
  enc.fitted_on = digest(ids);
  enc.size_bounds_ = BucketEncoder::quantile_bounds(std::move(sizes), kBuckets);
  enc.time_bounds_ = BucketEncoder::quantile_bounds(std::move(times), kBuckets);
  enc.modality = modality;
  enc.max_len = max_len;
  enc.fitted_ = true;
  return enc;
}

std::vector<int> encode(const Trace& trace, const BucketEncoder& encoder) {
  return encode(trace, encoder, encoder.max_len);
}

std::vector<int> encode(const Trace& trace, const BucketEncoder& encoder,
                        std::size_t max_len) {
  if (!encoder.fitted()) throw invalid_argument("encode: bucket encoder is not fitted");
  const bool both = encoder.modality == Modality::kBoth;
  const std::size_t cap = both ? max_len / 2 : max_len;
  const std::size_t n = std::min(cap, trace.events.size());
  std::vector<int> ids;
  ids.reserve(2 * n + 3);
  ids.push_back(kClsToken);
  if (encoder.modality != Modality::kTimeOnly) {
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back(kLenTokenBase +
                    encoder.size_bucket(static_cast<double>(trace.events[i].size)));
    }
    if (both) ids.push_back(kSepToken);
  }
  if (encoder.modality != Modality::kSizeOnly) {
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back(kTimeTokenBase + encoder.time_bucket(trace.events[i].dt));
    }
  }
  ids.push_back(kSepToken);
  return ids;
}

std::string token_name(int id) {
  if (id == kPadToken) return "[PAD]";
  if (id == kClsToken) return "[CLS]";
  if (id == kSepToken) return "[SEP]";
  if (id >= kLenTokenBase && id < kTimeTokenBase) {
    return "[LEN_" + std::to_string(id - kLenTokenBase) + "]";
  }
  if (id >= kTimeTokenBase && id < kVocabSize) {
    return "[TIME_" + std::to_string(id - kTimeTokenBase) + "]";
  }
  throw invalid_argument("token id out of range: " + std::to_string(id));
}

std::string BucketEncoder::manifest_json() const {
  if (!fitted_) throw invalid_argument("manifest of an unfitted encoder");
  nlohmann::ordered_json j;
  j["time_bounds"] = time_bounds_;
  j["size_bounds"] = size_bounds_;
  j["max_len"] = max_len;
  j["layout"] = modality == Modality::kBoth ? "both" : "single";
  j["stream"] = to_string(modality);
  j["n_buckets"] = kBuckets;
  j["fitted_on"] = fitted_on;
  std::vector<std::string> vocab;
  for (int id = 0; id < kVocabSize; ++id) vocab.push_back(token_name(id));
  j["vocab"] = vocab;
  return j.dump(2);
}

BucketEncoder BucketEncoder::from_manifest(const std::string& text) {
  BucketEncoder enc;
  try {
    const auto j = nlohmann::json::parse(text);
    enc.time_bounds_ = j.at("time_bounds").get<std::vector<double>>();
    enc.size_bounds_ = j.at("size_bounds").get<std::vector<double>>();
    enc.max_len = j.at("max_len").get<std::size_t>();
    enc.fitted_on = j.value("fitted_on", std::string());
    const auto layout = j.at("layout").get<std::string>();
    if (layout == "both") {
      enc.modality = Modality::kBoth;
    } else if (layout == "single") {
      enc.modality = parse_modality(j.value("stream", std::string("size")));
      if (enc.modality == Modality::kBoth) throw format_error("single layout with stream 'both'");
    } else {
      throw format_error("unknown layout '" + layout + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("encoder manifest: ") + e.what());
  }
  const auto expected = static_cast<std::size_t>(kBuckets - 1);
  if (enc.time_bounds_.size() != expected || enc.size_bounds_.size() != expected) {
    throw format_error("encoder manifest: expected 49 bounds per stream");
  }
  if (!std::is_sorted(enc.time_bounds_.begin(), enc.time_bounds_.end()) ||
      !std::is_sorted(enc.size_bounds_.begin(), enc.size_bounds_.end())) {
    throw format_error("encoder manifest: bounds must be non-decreasing");
  }
  enc.fitted_ = true;
  return enc;
}

}  // namespace tlsleak
