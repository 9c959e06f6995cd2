#include "tlsleak/trace.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "tlsleak/error.hpp"
#include "tlsleak/io.hpp"
#include "tlsleak/random.hpp"

namespace tlsleak {

using ordered_json = nlohmann::ordered_json;

const char* to_string(Label label) {
  return label == Label::kTarget ? "target" : "noise";
}

Label parse_label(const std::string& text) {
  if (text == "target") return Label::kTarget;
  if (text == "noise") return Label::kNoise;
  throw format_error("unknown label '" + text + "'");
}

const char* to_string(Source source) {
  switch (source) {
    case Source::kSynthetic: return "synthetic";
    case Source::kPcap: return "pcap";
    case Source::kTransformed: return "transformed";
  }
  return "synthetic";
}

Source parse_source(const std::string& text) {
  if (text == "synthetic") return Source::kSynthetic;
  if (text == "pcap") return Source::kPcap;
  if (text == "transformed") return Source::kTransformed;
  throw format_error("unknown provenance source '" + text + "'");
}

std::int64_t Trace::total_bytes() const {
  std::int64_t total = 0;
  for (const auto& e : events) total += e.size;
  return total;
}

double Trace::duration() const {
  double total = 0.0;
  for (std::size_t i = 1; i < events.size(); ++i) total += events[i].dt;
  return total;
}

std::size_t Dataset::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(traces.begin(), traces.end(),
                    [label](const Trace& t) { return t.label == label; }));
}

void validate(const Trace& trace) {
  if (trace.id.empty()) throw invalid_argument("trace with empty id");
  if (trace.prompt_id.empty()) {
    throw invalid_argument("trace " + trace.id + " has empty prompt_id");
  }
  if (trace.events.empty()) {
    throw invalid_argument("trace " + trace.id + " has no events");
  }
  for (std::size_t i = 0; i < trace.events.size(); ++i) {
    const auto& e = trace.events[i];
    if (!std::isfinite(e.dt) || e.dt < 0.0) {
      throw invalid_argument("trace " + trace.id + " event " +
                             std::to_string(i) + ": dt must be >= 0");
    }
    if (e.size < 1) {
      throw invalid_argument("trace " + trace.id + " event " +
                             std::to_string(i) + ": size must be >= 1");
    }
  }
}

void validate(const Dataset& dataset) {
  std::unordered_set<std::string> seen;
  seen.reserve(dataset.traces.size());
  for (const auto& t : dataset.traces) {
    validate(t);
    if (!seen.insert(t.id).second) {
      throw invalid_argument("duplicate trace id " + t.id);
    }
  }
}

void require_both_labels(const Dataset& dataset) {
  if (dataset.count(Label::kTarget) == 0 || dataset.count(Label::kNoise) == 0) {
    throw invalid_argument("dataset needs at least one target and one noise trace");
  }
}

namespace {

ordered_json trace_to_json(const Trace& t) {
  ordered_json j;
  j["id"] = t.id;
  j["label"] = to_string(t.label);
  j["prompt_id"] = t.prompt_id;
  ordered_json events = ordered_json::array();
  for (const auto& e : t.events) {
    ordered_json ev;
    ev["dt"] = e.dt;
    ev["size"] = e.size;
    events.push_back(std::move(ev));
  }
  j["events"] = std::move(events);
  ordered_json meta = ordered_json::object();
  for (const auto& [k, v] : t.meta) meta[k] = v;
  j["meta"] = std::move(meta);
  return j;
}

template <typename T>
T require_field(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw format_error(std::string("missing field '") + key + "'");
  return it->get<T>();
}

Trace trace_from_json(const ordered_json& j) {
  if (!j.is_object()) throw format_error("trace line is not a JSON object");
  Trace t;
  t.id = require_field<std::string>(j, "id");
  t.label = parse_label(require_field<std::string>(j, "label"));
  t.prompt_id = require_field<std::string>(j, "prompt_id");
  auto events = j.find("events");
  if (events == j.end() || !events->is_array()) {
    throw format_error("missing events array");
  }
  t.events.reserve(events->size());
  for (const auto& ev : *events) {
    NetworkEvent e;
    e.dt = require_field<double>(ev, "dt");
    const auto& size = ev.at("size");
    if (!size.is_number_integer()) throw format_error("size must be an integer");
    e.size = size.get<std::int64_t>();
    t.events.push_back(e);
  }
  if (auto meta = j.find("meta"); meta != j.end()) {
    for (auto it = meta->begin(); it != meta->end(); ++it) {
      t.meta[it.key()] = it.value().get<std::string>();
    }
  }
  return t;
}

}  // namespace

std::string to_jsonl(const Dataset& dataset) {
  std::string out;
  if (dataset.traces.empty()) return out;
  ordered_json header;
  header["source"] = to_string(dataset.provenance.source);
  header["config_digest"] = dataset.provenance.config_digest;
  header["seed"] = dataset.provenance.seed;
  out += "# ";
  out += header.dump();
  out += '\n';
  for (const auto& t : dataset.traces) {
    out += trace_to_json(t).dump(-1, ' ', false,
                                 ordered_json::error_handler_t::strict);
    out += '\n';
  }
  return out;
}

Dataset parse_jsonl(const std::string& text, const std::string& origin) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool saw_record = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    try {
      if (line[0] == '#') {
        if (saw_record) throw format_error("header after first record");
        const auto header = ordered_json::parse(line.substr(1));
        ds.provenance.source = parse_source(header.value("source", "synthetic"));
        ds.provenance.config_digest = header.value("config_digest", "");
        ds.provenance.seed = header.value("seed", std::uint64_t{0});
        continue;
      }
      saw_record = true;
      Trace t = trace_from_json(ordered_json::parse(line));
      validate(t);
      ds.traces.push_back(std::move(t));
    } catch (const Error& e) {
      throw format_error(where + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw format_error(where + ": " + e.what());
    }
  }
  std::unordered_set<std::string> seen;
  for (const auto& t : ds.traces) {
    if (!seen.insert(t.id).second) {
      throw format_error(origin + ": duplicate trace id " + t.id);
    }
  }
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(dataset));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return parse_jsonl(read_file(path), path.string());
}

SplitResult split_dataset(const Dataset& dataset, double holdout_fraction,
                          double val_fraction, std::uint64_t seed,
                          std::optional<double> noise_holdout_fraction) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw invalid_argument("holdout_fraction must be in (0,1)");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw invalid_argument("val_fraction must be in (0,1)");
  }
  const double noise_fraction = noise_holdout_fraction.value_or(holdout_fraction);
  if (!(noise_fraction >= 0.0 && noise_fraction < 1.0)) {
    throw invalid_argument("noise_holdout_fraction must be in [0,1)");
  }

  std::set<std::string> target_prompts;
  std::set<std::string> noise_prompts;
  for (const auto& t : dataset.traces) {
    (t.label == Label::kTarget ? target_prompts : noise_prompts).insert(t.prompt_id);
  }
  if (target_prompts.size() < 2) {
    throw invalid_argument("split needs at least 2 distinct target prompt ids");
  }

  Rng rng(derive_seed(seed, 0x5b1e));
  auto pick = [&rng](const std::set<std::string>& prompts, double fraction) {
    std::vector<std::string> order(prompts.begin(), prompts.end());
    rng.shuffle(order);
    const auto k = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(order.size()) - 1e-9));
    return std::unordered_set<std::string>(order.begin(),
                                           order.begin() + std::min(k, order.size()));
  };
  const auto held_targets = pick(target_prompts, holdout_fraction);
  const auto held_noise = noise_fraction > 0.0
                              ? pick(noise_prompts, noise_fraction)
                              : std::unordered_set<std::string>{};

  SplitResult split;
  split.seed = seed;
  std::vector<std::size_t> pool;
  std::vector<char> in_val(dataset.traces.size(), 0);
  for (std::size_t i = 0; i < dataset.traces.size(); ++i) {
    const auto& t = dataset.traces[i];
    const auto& held = t.label == Label::kTarget ? held_targets : held_noise;
    if (!held.contains(t.prompt_id)) pool.push_back(i);
  }
  const auto n_val = static_cast<std::size_t>(
      std::llround(val_fraction * static_cast<double>(pool.size())));
  std::vector<std::size_t> shuffled = pool;
  rng.shuffle(shuffled);
  for (std::size_t k = 0; k < n_val; ++k) in_val[shuffled[k]] = 1;

  std::size_t p = 0;
  for (std::size_t i = 0; i < dataset.traces.size(); ++i) {
    const auto& id = dataset.traces[i].id;
    if (p < pool.size() && pool[p] == i) {
      (in_val[i] ? split.val : split.train).push_back(id);
      ++p;
    } else {
      split.test.push_back(id);
    }
  }
  return split;
}

std::vector<Trace> select(const Dataset& dataset,
                          const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  index.reserve(dataset.traces.size());
  for (std::size_t i = 0; i < dataset.traces.size(); ++i) {
    index.emplace(dataset.traces[i].id, i);
  }
  std::vector<Trace> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw invalid_argument("unknown trace id " + id);
    out.push_back(dataset.traces[it->second]);
  }
  return out;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t'; }

}  // namespace

std::string collapse_whitespace(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_space(text[i]) && i > 0 && is_space(text[i - 1])) continue;
    out.push_back(text[i]);
  }
  return out;
}

std::vector<std::string> perturb_prompt(const std::string& prompt,
                                        int n_variants, std::uint64_t seed) {
  if (n_variants < 1) throw invalid_argument("n_variants must be >= 1");
  // Insertion sites: just after the last whitespace char of each gap.
  std::vector<std::size_t> gaps;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (is_space(prompt[i]) && (i + 1 == prompt.size() || !is_space(prompt[i + 1]))) {
      gaps.push_back(i + 1);
    }
  }
  if (gaps.empty()) {
    if (n_variants > 1) {
      throw invalid_argument("prompt has no whitespace; cannot build distinct variants");
    }
    return {prompt};
  }

  Rng rng(derive_seed(seed, 0x9e27));
  std::vector<std::string> variants;
  std::unordered_set<std::string> seen;
  // The cap on inserted spaces grows with failed attempts, so the candidate
  // space always outgrows n_variants.
  std::size_t max_insertions = std::max<std::size_t>(2, gaps.size() / 2);
  std::size_t failures = 0;
  while (variants.size() < static_cast<std::size_t>(n_variants)) {
    const std::size_t k = 1 + rng.below(max_insertions);
    std::vector<std::size_t> extra(gaps.size(), 0);
    for (std::size_t j = 0; j < k; ++j) ++extra[rng.below(gaps.size())];
    std::string out;
    out.reserve(prompt.size() + k);
    std::size_t g = 0;
    for (std::size_t i = 0; i <= prompt.size(); ++i) {
      if (g < gaps.size() && gaps[g] == i) {
        out.append(extra[g], ' ');
        ++g;
      }
      if (i < prompt.size()) out.push_back(prompt[i]);
    }
    if (seen.insert(out).second) {
      variants.push_back(std::move(out));
    } else if (++failures % 16 == 0) {
      ++max_insertions;
    }
  }
  return variants;
}

}  // namespace tlsleak
