#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tlsleak/random.hpp"
#include "tlsleak/trace.hpp"

namespace tlsleak {

/// Inter-event gap model: log-normal, with an optional second (burst) mode.
struct TimingModel {
  double mu = -3.5;      // log-seconds
  double sigma = 0.5;
  double burst_prob = 0.0;
  double burst_mu = -6.5;
  double burst_sigma = 0.5;

  bool operator==(const TimingModel&) const = default;
};

struct TopicModel {
  std::string name;
  Label label = Label::kNoise;
  Categorical token_lengths;    // plaintext bytes per token
  Categorical response_tokens;  // tokens per response
  std::optional<TimingModel> timing;  // falls back to the scenario timing
};

/// Generator parameters. Event size = sum of token lengths in the batch
/// + envelope_bytes + tls_overhead.
struct ScenarioConfig {
  std::string name = "scenario";
  std::vector<TopicModel> topics;  // exactly one target topic
  std::int64_t envelope_bytes = 120;
  std::int64_t tls_overhead = 22;
  int provider_batch = 1;
  TimingModel timing;
  int n_target_prompts = 100;
  std::vector<std::string> target_prompts;  // optional prompt texts
  std::uint64_t seed = 0;
};

void validate(const ScenarioConfig& config);

std::string to_json(const ScenarioConfig& config);
ScenarioConfig scenario_from_json(const std::string& text,
                                  const std::filesystem::path& base_dir = {});
/// Loads a scenario; "target_prompts_file" resolves against the file's directory.
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// One question per non-empty line.
std::vector<std::string> load_prompts(const std::filesystem::path& path);

struct GenerationReport {
  std::size_t n_target = 0;
  std::size_t n_noise = 0;
  double mean_tokens_per_event = 0.0;
  double mean_event_size = 0.0;
};

/// Simulates n_target + n_noise streamed responses. Trace i draws from
/// Rng(derive_seed(config.seed, i)), so traces are independent of each
/// other and of generation order.
Dataset generate(const ScenarioConfig& config, std::size_t n_target,
                 std::size_t n_noise, GenerationReport* report = nullptr);

struct ScenarioEstimate {
  ScenarioConfig config;
  bool timing_fallback = false;
  std::vector<std::string> warnings;
};

/// Calibrates a scenario to a dataset, one topic per label present:
/// empirical payload (size - envelope - overhead) and length distributions,
/// log-normal timing from log-dt moments. Assumes one token per event.
ScenarioEstimate estimate_scenario_from_dataset(const Dataset& dataset,
                                                std::int64_t envelope_bytes = 120,
                                                std::int64_t tls_overhead = 22);

}  // namespace tlsleak
