#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tlsleak {

/// One observed TLS application-data record.
struct NetworkEvent {
  double dt = 0.0;         // seconds since the previous record of the stream
  std::int64_t size = 1;   // record length in bytes

  bool operator==(const NetworkEvent&) const = default;
};

enum class Label { kTarget, kNoise };

const char* to_string(Label label);
Label parse_label(const std::string& text);

/// One streamed response: ordered (dt, size) events plus a binary label.
///
/// Captured and generated traces start with dt = 0. Traces that went through
/// a batching transform may carry the accumulated gap of their first batch.
struct Trace {
  std::string id;
  Label label = Label::kNoise;
  std::string prompt_id;
  std::vector<NetworkEvent> events;
  std::map<std::string, std::string> meta;

  bool operator==(const Trace&) const = default;

  std::int64_t total_bytes() const;
  double duration() const;
};

enum class Source { kSynthetic, kPcap, kTransformed };

const char* to_string(Source source);
Source parse_source(const std::string& text);

struct Provenance {
  Source source = Source::kSynthetic;
  std::string config_digest;
  std::uint64_t seed = 0;

  bool operator==(const Provenance&) const = default;
};

struct Dataset {
  std::vector<Trace> traces;
  Provenance provenance;

  bool operator==(const Dataset&) const = default;

  std::size_t count(Label label) const;
};

/// Throws if a trace breaks the event invariants (non-empty, dt >= 0,
/// size >= 1, non-empty prompt id).
void validate(const Trace& trace);

/// Validates every trace and checks id uniqueness.
void validate(const Dataset& dataset);

/// Throws unless the dataset holds at least one trace of each label.
void require_both_labels(const Dataset& dataset);

// JSONL persistence. One trace object per line, keys in fixed order:
//   {"id", "label", "prompt_id", "events": [{"dt", "size"}...], "meta"}
// A non-empty dataset is preceded by one "# {...}" provenance header line.

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

std::string to_jsonl(const Dataset& dataset);
Dataset parse_jsonl(const std::string& text, const std::string& origin = "<memory>");

struct SplitResult {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;

  bool operator==(const SplitResult&) const = default;
};

/// Prompt-grouped train/val/test partition.
///
/// ceil(holdout_fraction * #target prompts) target prompt ids go wholly to
/// test. Noise prompts are held out the same way at noise_holdout_fraction
/// (defaults to holdout_fraction; 0 keeps every noise trace in train/val).
/// Everything not held out is split per trace, with
/// round(val_fraction * pool) traces in val.
SplitResult split_dataset(const Dataset& dataset, double holdout_fraction,
                          double val_fraction, std::uint64_t seed,
                          std::optional<double> noise_holdout_fraction = {});

/// Copies out the traces named by ids, in the order given.
std::vector<Trace> select(const Dataset& dataset,
                          const std::vector<std::string>& ids);

/// n distinct variants of prompt, each with extra spaces inserted after
/// existing whitespace characters.
std::vector<std::string> perturb_prompt(const std::string& prompt,
                                        int n_variants, std::uint64_t seed);

/// Replaces every run of whitespace by its first character.
std::string collapse_whitespace(const std::string& text);

}  // namespace tlsleak
