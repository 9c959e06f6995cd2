#include "tlsleak/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "tlsleak/error.hpp"
#include "tlsleak/io.hpp"

namespace tlsleak {

using json = nlohmann::ordered_json;

namespace {

void validate(const Categorical& dist, const std::string& what, std::int64_t min_value) {
  if (dist.values.empty() || dist.values.size() != dist.weights.size()) {
    throw invalid_argument(what + ": values and weights must be non-empty and equal length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < dist.values.size(); ++i) {
    if (dist.values[i] < min_value) {
      throw invalid_argument(what + ": value below " + std::to_string(min_value));
    }
    if (!std::isfinite(dist.weights[i]) || dist.weights[i] < 0.0) {
      throw invalid_argument(what + ": weights must be finite and >= 0");
    }
    total += dist.weights[i];
  }
  if (!(total > 0.0)) throw invalid_argument(what + ": weights sum to zero");
}

void validate(const TimingModel& t, const std::string& what) {
  for (double v : {t.mu, t.sigma, t.burst_prob, t.burst_mu, t.burst_sigma}) {
    if (!std::isfinite(v)) throw invalid_argument(what + ": non-finite timing parameter");
  }
  if (t.sigma < 0.0 || t.burst_sigma < 0.0) {
    throw invalid_argument(what + ": timing sigma must be >= 0");
  }
  if (t.burst_prob < 0.0 || t.burst_prob > 1.0) {
    throw invalid_argument(what + ": burst_prob must be in [0,1]");
  }
}

json to_json(const Categorical& c) {
  json j;
  j["values"] = c.values;
  j["weights"] = c.weights;
  return j;
}

Categorical categorical_from_json(const json& j) {
  Categorical c;
  if (j.contains("min") || j.contains("max")) {
    const auto lo = j.at("min").get<std::int64_t>();
    const auto hi = j.at("max").get<std::int64_t>();
    if (hi < lo) throw invalid_argument("categorical range has max < min");
    for (auto v = lo; v <= hi; ++v) c.values.push_back(v);
    c.weights.assign(c.values.size(), 1.0);
    return c;
  }
  c.values = j.at("values").get<std::vector<std::int64_t>>();
  if (j.contains("weights")) {
    c.weights = j.at("weights").get<std::vector<double>>();
  } else {
    c.weights.assign(c.values.size(), 1.0);
  }
  return c;
}

json to_json(const TimingModel& t) {
  json j;
  j["mu"] = t.mu;
  j["sigma"] = t.sigma;
  j["burst_prob"] = t.burst_prob;
  j["burst_mu"] = t.burst_mu;
  j["burst_sigma"] = t.burst_sigma;
  return j;
}

TimingModel timing_from_json(const json& j) {
  TimingModel t;
  t.mu = j.value("mu", t.mu);
  t.sigma = j.value("sigma", t.sigma);
  t.burst_prob = j.value("burst_prob", t.burst_prob);
  t.burst_mu = j.value("burst_mu", t.burst_mu);
  t.burst_sigma = j.value("burst_sigma", t.burst_sigma);
  return t;
}

double draw_gap(const TimingModel& t, Rng& rng) {
  if (t.burst_prob > 0.0 && rng.bernoulli(t.burst_prob)) {
    return rng.lognormal(t.burst_mu, t.burst_sigma);
  }
  return rng.lognormal(t.mu, t.sigma);
}

Categorical empirical(const std::map<std::int64_t, double>& counts) {
  Categorical c;
  for (const auto& [v, n] : counts) {
    c.values.push_back(v);
    c.weights.push_back(n);
  }
  return c;
}

}  // namespace

void validate(const ScenarioConfig& config) {
  if (config.envelope_bytes < 0) throw invalid_argument("envelope_bytes must be >= 0");
  if (config.tls_overhead < 0) throw invalid_argument("tls_overhead must be >= 0");
  if (config.provider_batch < 1) throw invalid_argument("provider_batch must be >= 1");
  if (config.n_target_prompts < 1) throw invalid_argument("n_target_prompts must be >= 1");
  validate(config.timing, "timing");
  std::size_t targets = 0;
  std::size_t noise = 0;
  for (const auto& topic : config.topics) {
    (topic.label == Label::kTarget ? targets : noise) += 1;
    validate(topic.token_lengths, topic.name + ".token_lengths", 1);
    validate(topic.response_tokens, topic.name + ".response_tokens", 1);
    if (topic.timing) validate(*topic.timing, topic.name + ".timing");
  }
  if (targets != 1) throw invalid_argument("scenario needs exactly one target topic");
  if (noise < 1) throw invalid_argument("scenario needs at least one noise topic");
}

std::string to_json(const ScenarioConfig& config) {
  json j;
  j["name"] = config.name;
  j["seed"] = config.seed;
  j["envelope_bytes"] = config.envelope_bytes;
  j["tls_overhead"] = config.tls_overhead;
  j["provider_batch"] = config.provider_batch;
  j["n_target_prompts"] = config.n_target_prompts;
  j["timing"] = to_json(config.timing);
  json topics = json::array();
  for (const auto& t : config.topics) {
    json tj;
    tj["name"] = t.name;
    tj["label"] = to_string(t.label);
    tj["token_lengths"] = to_json(t.token_lengths);
    tj["response_tokens"] = to_json(t.response_tokens);
    if (t.timing) tj["timing"] = to_json(*t.timing);
    topics.push_back(std::move(tj));
  }
  j["topics"] = std::move(topics);
  if (!config.target_prompts.empty()) j["target_prompts"] = config.target_prompts;
  return j.dump(2);
}

ScenarioConfig scenario_from_json(const std::string& text,
                                  const std::filesystem::path& base_dir) {
  ScenarioConfig c;
  try {
    const json j = json::parse(text);
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    c.envelope_bytes = j.value("envelope_bytes", c.envelope_bytes);
    c.tls_overhead = j.value("tls_overhead", c.tls_overhead);
    c.provider_batch = j.value("provider_batch", c.provider_batch);
    c.n_target_prompts = j.value("n_target_prompts", c.n_target_prompts);
    if (j.contains("timing")) c.timing = timing_from_json(j.at("timing"));
    for (const auto& tj : j.at("topics")) {
      TopicModel t;
      t.name = tj.value("name", std::string("topic"));
      t.label = parse_label(tj.at("label").get<std::string>());
      t.token_lengths = categorical_from_json(tj.at("token_lengths"));
      t.response_tokens = categorical_from_json(tj.at("response_tokens"));
      if (tj.contains("timing")) t.timing = timing_from_json(tj.at("timing"));
      c.topics.push_back(std::move(t));
    }
    if (j.contains("target_prompts")) {
      c.target_prompts = j.at("target_prompts").get<std::vector<std::string>>();
    } else if (j.contains("target_prompts_file")) {
      c.target_prompts =
          load_prompts(base_dir / j.at("target_prompts_file").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("scenario JSON: ") + e.what());
  }
  validate(c);
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_file(path), path.parent_path());
}

std::vector<std::string> load_prompts(const std::filesystem::path& path) {
  std::vector<std::string> prompts;
  const std::string text = read_file(path);
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) prompts.push_back(std::move(line));
    start = end + 1;
  }
  return prompts;
}

Dataset generate(const ScenarioConfig& config, std::size_t n_target,
                 std::size_t n_noise, GenerationReport* report) {
  if (n_target == 0 || n_noise == 0) {
    throw invalid_argument("n_target and n_noise must be positive");
  }
  validate(config);
  const TopicModel* target = nullptr;
  std::vector<const TopicModel*> noise_topics;
  for (const auto& t : config.topics) {
    if (t.label == Label::kTarget) {
      target = &t;
    } else {
      noise_topics.push_back(&t);
    }
  }

  const auto n_prompts = static_cast<std::size_t>(config.n_target_prompts);
  const std::size_t repeats = (n_target + n_prompts - 1) / n_prompts;
  std::vector<std::vector<std::string>> variants(n_prompts);
  if (!config.target_prompts.empty()) {
    for (std::size_t p = 0; p < n_prompts && p < n_target; ++p) {
      const auto& question = config.target_prompts[p % config.target_prompts.size()];
      const bool has_gap = question.find(' ') != std::string::npos;
      variants[p] = has_gap ? perturb_prompt(question, static_cast<int>(repeats),
                                             derive_seed(config.seed, 0x70000 + p))
                            : std::vector<std::string>(repeats, question);
    }
  }

  Dataset ds;
  ds.provenance.source = Source::kSynthetic;
  ds.provenance.config_digest = digest(to_json(config));
  ds.provenance.seed = config.seed;
  ds.traces.reserve(n_target + n_noise);

  std::size_t total_events = 0;
  std::size_t total_tokens = 0;
  double total_size = 0.0;
  const auto batch = static_cast<std::size_t>(config.provider_batch);
  const std::int64_t fixed = config.envelope_bytes + config.tls_overhead;

  char buf[32];
  for (std::size_t i = 0; i < n_target + n_noise; ++i) {
    const bool is_target = i < n_target;
    const TopicModel& topic =
        is_target ? *target : *noise_topics[(i - n_target) % noise_topics.size()];
    const TimingModel& timing = topic.timing ? *topic.timing : config.timing;
    Rng rng(derive_seed(config.seed, i));

    Trace t;
    t.label = topic.label;
    if (is_target) {
      const std::size_t p = i % n_prompts;
      std::snprintf(buf, sizeof buf, "t%06zu", i);
      t.id = buf;
      std::snprintf(buf, sizeof buf, "target-%03zu", p);
      t.prompt_id = buf;
      if (!variants[p].empty()) t.meta["prompt"] = variants[p][(i / n_prompts) % repeats];
    } else {
      std::snprintf(buf, sizeof buf, "n%06zu", i - n_target);
      t.id = buf;
      t.prompt_id = "noise-" + std::string(buf + 1);
    }
    t.meta["topic"] = topic.name;

    // Full batches only: the last event is topped up to provider_batch tokens.
    const auto tokens = static_cast<std::size_t>(sample(topic.response_tokens, rng));
    const std::size_t n_events = (tokens + batch - 1) / batch;
    t.events.reserve(n_events);
    for (std::size_t e = 0; e < n_events; ++e) {
      std::int64_t payload = 0;
      for (std::size_t k = 0; k < batch; ++k) payload += sample(topic.token_lengths, rng);
      const double dt = e == 0 ? 0.0 : draw_gap(timing, rng);
      t.events.push_back(NetworkEvent{dt, payload + fixed});
      total_size += static_cast<double>(payload + fixed);
    }
    total_events += n_events;
    total_tokens += n_events * batch;
    ds.traces.push_back(std::move(t));
  }

  if (report) {
    report->n_target = n_target;
    report->n_noise = n_noise;
    report->mean_tokens_per_event =
        static_cast<double>(total_tokens) / static_cast<double>(total_events);
    report->mean_event_size = total_size / static_cast<double>(total_events);
  }
  return ds;
}

ScenarioEstimate estimate_scenario_from_dataset(const Dataset& dataset,
                                                std::int64_t envelope_bytes,
                                                std::int64_t tls_overhead) {
  if (dataset.traces.empty()) throw invalid_argument("cannot calibrate from an empty dataset");
  ScenarioEstimate est;
  ScenarioConfig& c = est.config;
  c.name = "estimated";
  c.envelope_bytes = envelope_bytes;
  c.tls_overhead = tls_overhead;
  c.provider_batch = 1;

  struct LogMoments {
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t n = 0;
    void add(double x) {
      sum += x;
      sum_sq += x * x;
      ++n;
    }
    std::optional<TimingModel> fit() const {
      if (n < 2) return std::nullopt;
      TimingModel t;
      t.mu = sum / static_cast<double>(n);
      const double var = sum_sq / static_cast<double>(n) - t.mu * t.mu;
      t.sigma = std::sqrt(std::max(var, 0.0));
      return t;
    }
  };

  LogMoments all;
  std::size_t clamped = 0;
  std::set<std::string> target_prompts;
  for (Label label : {Label::kTarget, Label::kNoise}) {
    std::map<std::int64_t, double> payloads;
    std::map<std::int64_t, double> lengths;
    LogMoments gaps;
    for (const auto& t : dataset.traces) {
      if (t.label != label) continue;
      if (label == Label::kTarget) target_prompts.insert(t.prompt_id);
      lengths[static_cast<std::int64_t>(t.events.size())] += 1.0;
      for (std::size_t i = 0; i < t.events.size(); ++i) {
        std::int64_t payload = t.events[i].size - envelope_bytes - tls_overhead;
        if (payload < 1) {
          payload = 1;
          ++clamped;
        }
        payloads[payload] += 1.0;
        if (i > 0 && t.events[i].dt > 0.0) {
          const double lg = std::log(t.events[i].dt);
          gaps.add(lg);
          all.add(lg);
        }
      }
    }
    if (lengths.empty()) continue;
    TopicModel topic;
    topic.name = label == Label::kTarget ? "target" : "noise";
    topic.label = label;
    topic.token_lengths = empirical(payloads);
    topic.response_tokens = empirical(lengths);
    topic.timing = gaps.fit();
    c.topics.push_back(std::move(topic));
  }
  if (auto fitted = all.fit()) {
    c.timing = *fitted;
  } else {
    est.timing_fallback = true;
    est.warnings.push_back("no inter-arrival gaps to fit; default timing model used");
  }
  if (clamped > 0) {
    est.warnings.push_back(std::to_string(clamped) +
                           " events smaller than envelope + overhead clamped to 1 payload byte");
  }
  if (!target_prompts.empty()) {
    c.n_target_prompts = static_cast<int>(target_prompts.size());
  }
  return est;
}

}  // namespace tlsleak
