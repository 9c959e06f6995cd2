#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tlsleak/trace.hpp"

namespace tlsleak {

/// Folds each event with dt <= epsilon into its predecessor (sizes summed,
/// the predecessor's dt kept). The first event always survives.
Trace merge_simultaneous(const Trace& trace, double epsilon);

struct BatchingParams {
  int batch_size = 1;  // 1 = zero-gap merge only

  void validate() const;
};

/// merge_simultaneous(0), then runs of batch_size events become one event
/// carrying the summed dt and size. A trailing short run is emitted as is.
Trace apply_batching(const Trace& trace, const BatchingParams& params);

struct PaddingParams {
  // Placeholder bounds; the deployed distributions are unpublished.
  std::int64_t pad_min = 10;
  std::int64_t pad_max = 500;
  std::uint64_t seed = 0;

  void validate() const;
  bool placeholder_defaults() const { return pad_min == 10 && pad_max == 500; }
};

Trace apply_padding(const Trace& trace, const PaddingParams& params);

struct InjectionStats {
  double mean_gap = 0;       // mean dt over merged events, first events excluded
  double size_mean = 0;
  double size_std = 0;
  double increase_mean = 0;  // moments of positive consecutive size deltas
  double increase_std = 0;
  bool increase_fallback = false;
  std::vector<std::string> warnings;
};

InjectionStats compute_injection_stats(std::span<const Trace> traces, double merge_epsilon);

struct InjectionParams {
  double injections_per_mean = 2.0;  // k
  double stddev_multiplier = 2.0;
  double merge_epsilon = 0.005;
  int monotone_window = 4;
  InjectionStats stats;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Merges at merge_epsilon, then interleaves synthetic events on the
/// absolute timeline. Injection times form a jittered lattice with spacing
/// m = mean_gap / k: point j sits at (j + u) m + N(0, s / sqrt(2)) for a
/// per-trace phase u, s = stddev_multiplier * m. Neighbouring points are
/// then N(m, s) apart and the expected count over a duration D is D / m.
/// Sizes follow the last real-or-injected sizes: after a strictly increasing
/// window, last + N(increase_mean, increase_std); otherwise
/// N(size_mean, size_std). Rounded, at least 1.
Trace apply_injection(const Trace& trace, const InjectionParams& params);

enum class Strategy { kNone, kMerge, kBatching, kInjection, kPadding };

const char* to_string(Strategy s);

/// A mitigation as configured on the command line:
///   {"strategy": "batching", "batch_size": 5}
///   {"strategy": "padding", "pad_min": 10, "pad_max": 500, "seed": 1}
///   {"strategy": "injection", "injections_per_mean": 2.0, ...}
///   {"strategy": "merge", "epsilon": 0.005}
struct MitigationSpec {
  Strategy strategy = Strategy::kNone;
  double merge_epsilon = 0.0;
  BatchingParams batching;
  PaddingParams padding;
  InjectionParams injection;  // stats filled by fit_mitigation

  std::string to_json() const;
  static MitigationSpec from_json(const std::string& text);
  void validate() const;
};

/// Derives any data-dependent state (injection statistics) from training
/// traces only.
MitigationSpec fit_mitigation(MitigationSpec spec, std::span<const Trace> train);

Trace apply(const Trace& trace, const MitigationSpec& spec);
std::vector<Trace> apply(std::span<const Trace> traces, const MitigationSpec& spec);

/// Transformed dataset with provenance "transformed" and a "mitigation" meta
/// entry on every trace.
Dataset apply(const Dataset& dataset, const MitigationSpec& spec);

}  // namespace tlsleak
