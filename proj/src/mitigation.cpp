#include "tlsleak/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "tlsleak/error.hpp"
#include "tlsleak/io.hpp"
#include "tlsleak/random.hpp"

namespace tlsleak {

namespace {

using json = nlohmann::ordered_json;

std::uint64_t trace_seed(std::uint64_t seed, const Trace& t) {
  return derive_seed(seed, fnv1a64(t.id));
}

struct Moments {
  double n = 0, mean = 0, m2 = 0;
  void add(double x) {
    n += 1;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  double std() const { return n > 0 ? std::sqrt(m2 / n) : 0.0; }
};

}  // namespace

Trace merge_simultaneous(const Trace& trace, double epsilon) {
  Trace out = trace;
  out.events.clear();
  for (const NetworkEvent& e : trace.events) {
    if (!out.events.empty() && e.dt <= epsilon) {
      out.events.back().size += e.size;
    } else {
      out.events.push_back(e);
    }
  }
  return out;
}

void BatchingParams::validate() const {
  if (batch_size < 1) throw invalid_argument("batching: batch_size must be >= 1");
}

Trace apply_batching(const Trace& trace, const BatchingParams& params) {
  params.validate();
  Trace merged = merge_simultaneous(trace, 0.0);
  const auto n = static_cast<std::size_t>(params.batch_size);
  Trace out = merged;
  out.events.clear();
  for (std::size_t i = 0; i < merged.events.size(); i += n) {
    NetworkEvent b{0.0, 0};
    for (std::size_t j = i; j < std::min(i + n, merged.events.size()); ++j) {
      b.dt += merged.events[j].dt;
      b.size += merged.events[j].size;
    }
    out.events.push_back(b);
  }
  return out;
}

void PaddingParams::validate() const {
  if (pad_min < 0 || pad_max < pad_min) {
    throw invalid_argument("padding: need 0 <= pad_min <= pad_max");
  }
}

Trace apply_padding(const Trace& trace, const PaddingParams& params) {
  params.validate();
  Rng rng(trace_seed(params.seed, trace));
  Trace out = trace;
  for (NetworkEvent& e : out.events) e.size += rng.uniform_int(params.pad_min, params.pad_max);
  return out;
}

InjectionStats compute_injection_stats(std::span<const Trace> traces, double merge_epsilon) {
  if (traces.empty()) throw invalid_argument("injection stats: no traces");
  if (!(merge_epsilon >= 0)) throw invalid_argument("injection stats: merge_epsilon must be >= 0");
  Moments gaps, sizes, increases;
  for (const Trace& t : traces) {
    const Trace m = merge_simultaneous(t, merge_epsilon);
    for (std::size_t i = 0; i < m.events.size(); ++i) {
      sizes.add(static_cast<double>(m.events[i].size));
      if (i == 0) continue;
      gaps.add(m.events[i].dt);
      const auto delta = m.events[i].size - m.events[i - 1].size;
      if (delta > 0) increases.add(static_cast<double>(delta));
    }
  }
  if (gaps.n == 0) {
    throw invalid_argument("injection stats: no inter-arrival gaps (all traces have one event)");
  }
  InjectionStats s;
  s.mean_gap = gaps.mean;
  s.size_mean = sizes.mean;
  s.size_std = sizes.std();
  if (increases.n > 0) {
    s.increase_mean = increases.mean;
    s.increase_std = increases.std();
  } else {
    s.increase_mean = s.size_mean;
    s.increase_std = s.size_std;
    s.increase_fallback = true;
    s.warnings.push_back("no positive size deltas; increase moments fall back to size moments");
  }
  return s;
}

void InjectionParams::validate() const {
  if (!(injections_per_mean > 0) || !std::isfinite(injections_per_mean)) {
    throw invalid_argument("injection: injections_per_mean must be > 0");
  }
  if (!(stddev_multiplier >= 0) || !std::isfinite(stddev_multiplier)) {
    throw invalid_argument("injection: stddev_multiplier must be >= 0");
  }
  if (!(merge_epsilon >= 0)) throw invalid_argument("injection: merge_epsilon must be >= 0");
  if (monotone_window < 2) throw invalid_argument("injection: monotone_window must be >= 2");
  for (const double v : {stats.mean_gap, stats.size_mean, stats.size_std, stats.increase_mean,
                         stats.increase_std}) {
    if (!std::isfinite(v)) throw invalid_argument("injection: non-finite dataset statistic");
  }
  if (!(stats.mean_gap > 0)) throw invalid_argument("injection: mean_gap must be > 0");
}

Trace apply_injection(const Trace& trace, const InjectionParams& params) {
  params.validate();
  const Trace merged = merge_simultaneous(trace, params.merge_epsilon);
  if (merged.events.empty()) return merged;

  std::vector<double> when(merged.events.size());
  double clock = 0;
  for (std::size_t i = 0; i < merged.events.size(); ++i) {
    clock += merged.events[i].dt;
    when[i] = clock;
  }
  const double start = when.front();
  const double duration = when.back() - start;

  Rng rng(trace_seed(params.seed, trace));
  const double m = params.stats.mean_gap / params.injections_per_mean;
  const double jitter = params.stddev_multiplier * m / std::numbers::sqrt2;
  std::vector<double> injected;
  if (duration > 0) {
    if (duration / m > 1e6) throw invalid_argument("injection: more than 1e6 injections per trace");
    const double u = rng.uniform();
    const double reach = std::ceil(8.0 * jitter / m) + 2.0;
    const auto lo = static_cast<std::int64_t>(-reach);
    const auto hi = static_cast<std::int64_t>(std::ceil(duration / m) + reach);
    for (std::int64_t j = lo; j <= hi; ++j) {
      const double t = (static_cast<double>(j) + u) * m + jitter * rng.normal();
      if (t > 0 && t <= duration) injected.push_back(start + t);
    }
    std::sort(injected.begin(), injected.end());
  }

  Trace out = merged;
  out.events.clear();
  std::vector<std::int64_t> recent;
  const auto window = static_cast<std::size_t>(params.monotone_window);
  auto increasing = [&] {
    if (recent.size() < window) return false;
    for (std::size_t i = recent.size() - window + 1; i < recent.size(); ++i) {
      if (recent[i] <= recent[i - 1]) return false;
    }
    return true;
  };
  double last = 0;
  std::size_t r = 0, k = 0;
  while (r < merged.events.size() || k < injected.size()) {
    // real events win ties
    const bool real = k == injected.size() ||
                      (r < merged.events.size() && when[r] <= injected[k]);
    NetworkEvent e;
    double t;
    if (real) {
      t = when[r];
      e.size = merged.events[r].size;
      e.dt = r == 0 ? merged.events[0].dt : t - last;
      ++r;
    } else {
      t = injected[k++];
      const double draw = increasing()
                              ? static_cast<double>(recent.back()) +
                                    rng.normal(params.stats.increase_mean, params.stats.increase_std)
                              : rng.normal(params.stats.size_mean, params.stats.size_std);
      e.size = std::max<std::int64_t>(1, std::llround(draw));
      e.dt = t - last;
    }
    e.dt = std::max(0.0, e.dt);
    last = t;
    recent.push_back(e.size);
    out.events.push_back(e);
  }
  return out;
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kMerge: return "merge";
    case Strategy::kBatching: return "batching";
    case Strategy::kInjection: return "injection";
    case Strategy::kPadding: return "padding";
  }
  return "?";
}

namespace {

Strategy parse_strategy(const std::string& s) {
  for (const Strategy v : {Strategy::kNone, Strategy::kMerge, Strategy::kBatching,
                           Strategy::kInjection, Strategy::kPadding}) {
    if (s == to_string(v)) return v;
  }
  throw invalid_argument("mitigation: unknown strategy '" + s + "'");
}

json stats_json(const InjectionStats& s) {
  return {{"mean_gap", s.mean_gap},           {"size_mean", s.size_mean},
          {"size_std", s.size_std},           {"increase_mean", s.increase_mean},
          {"increase_std", s.increase_std},   {"increase_fallback", s.increase_fallback}};
}

}  // namespace

void MitigationSpec::validate() const {
  switch (strategy) {
    case Strategy::kNone: break;
    case Strategy::kMerge:
      if (!(merge_epsilon >= 0)) throw invalid_argument("merge: epsilon must be >= 0");
      break;
    case Strategy::kBatching: batching.validate(); break;
    case Strategy::kPadding: padding.validate(); break;
    case Strategy::kInjection: injection.validate(); break;
  }
}

std::string MitigationSpec::to_json() const {
  json j;
  j["strategy"] = to_string(strategy);
  switch (strategy) {
    case Strategy::kNone: break;
    case Strategy::kMerge: j["epsilon"] = merge_epsilon; break;
    case Strategy::kBatching: j["batch_size"] = batching.batch_size; break;
    case Strategy::kPadding:
      j["pad_min"] = padding.pad_min;
      j["pad_max"] = padding.pad_max;
      j["seed"] = padding.seed;
      if (padding.placeholder_defaults()) j["placeholder_defaults"] = true;
      break;
    case Strategy::kInjection:
      j["injections_per_mean"] = injection.injections_per_mean;
      j["stddev_multiplier"] = injection.stddev_multiplier;
      j["merge_epsilon"] = injection.merge_epsilon;
      j["monotone_window"] = injection.monotone_window;
      j["seed"] = injection.seed;
      j["stats"] = stats_json(injection.stats);
      break;
  }
  return j.dump();
}

MitigationSpec MitigationSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw format_error(std::string("mitigation spec: ") + e.what());
  }
  MitigationSpec s;
  try {
    s.strategy = parse_strategy(j.at("strategy").get<std::string>());
    s.merge_epsilon = j.value("epsilon", 0.0);
    s.batching.batch_size = j.value("batch_size", 1);
    s.padding.pad_min = j.value("pad_min", s.padding.pad_min);
    s.padding.pad_max = j.value("pad_max", s.padding.pad_max);
    s.padding.seed = j.value("seed", std::uint64_t{0});
    InjectionParams& in = s.injection;
    in.injections_per_mean = j.value("injections_per_mean", in.injections_per_mean);
    in.stddev_multiplier = j.value("stddev_multiplier", in.stddev_multiplier);
    in.merge_epsilon = j.value("merge_epsilon", in.merge_epsilon);
    in.monotone_window = j.value("monotone_window", in.monotone_window);
    in.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("stats")) {
      const json& st = j.at("stats");
      in.stats.mean_gap = st.at("mean_gap").get<double>();
      in.stats.size_mean = st.at("size_mean").get<double>();
      in.stats.size_std = st.at("size_std").get<double>();
      in.stats.increase_mean = st.at("increase_mean").get<double>();
      in.stats.increase_std = st.at("increase_std").get<double>();
      in.stats.increase_fallback = st.value("increase_fallback", false);
    }
  } catch (const json::exception& e) {
    throw format_error(std::string("mitigation spec: ") + e.what());
  }
  return s;
}

MitigationSpec fit_mitigation(MitigationSpec spec, std::span<const Trace> train) {
  if (spec.strategy == Strategy::kInjection) {
    spec.injection.stats = compute_injection_stats(train, spec.injection.merge_epsilon);
  }
  spec.validate();
  return spec;
}

Trace apply(const Trace& trace, const MitigationSpec& spec) {
  switch (spec.strategy) {
    case Strategy::kNone: return trace;
    case Strategy::kMerge: return merge_simultaneous(trace, spec.merge_epsilon);
    case Strategy::kBatching: return apply_batching(trace, spec.batching);
    case Strategy::kInjection: return apply_injection(trace, spec.injection);
    case Strategy::kPadding: return apply_padding(trace, spec.padding);
  }
  return trace;
}

std::vector<Trace> apply(std::span<const Trace> traces, const MitigationSpec& spec) {
  spec.validate();
  std::vector<Trace> out;
  out.reserve(traces.size());
  for (const Trace& t : traces) out.push_back(apply(t, spec));
  return out;
}

Dataset apply(const Dataset& dataset, const MitigationSpec& spec) {
  Dataset out;
  out.traces = apply(std::span<const Trace>(dataset.traces), spec);
  const std::string params = spec.to_json();
  for (Trace& t : out.traces) t.meta["mitigation"] = params;
  out.provenance.source = Source::kTransformed;
  out.provenance.config_digest = digest(dataset.provenance.config_digest + params);
  out.provenance.seed = dataset.provenance.seed;
  return out;
}

}  // namespace tlsleak
