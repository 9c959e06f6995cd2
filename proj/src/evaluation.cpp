#include "tlsleak/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "tlsleak/error.hpp"

namespace tlsleak {

namespace {

using json = nlohmann::ordered_json;

struct Scored {
  double score;
  int label;
};

std::vector<Scored> ranked(const ScoredSet& s) {
  std::vector<Scored> all;
  all.reserve(s.positives.size() + s.negatives.size());
  for (const double v : s.positives) all.push_back({v, 1});
  for (const double v : s.negatives) all.push_back({v, 0});
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  return all;
}

void check_scores(const std::vector<double>& v) {
  for (const double x : v) {
    if (std::isnan(x)) throw invalid_argument("scores: NaN score");
  }
}

}  // namespace

ScoredSet ScoredSet::from(const Eigen::VectorXd& scores, const Eigen::VectorXi& labels) {
  if (scores.size() != labels.size()) throw invalid_argument("scores: size mismatch with labels");
  ScoredSet s;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    (labels(i) == 1 ? s.positives : s.negatives).push_back(scores(i));
  }
  return s;
}

void ScoredSet::require_both() const {
  if (positives.empty()) throw invalid_argument("scores: no positive (target) samples");
  if (negatives.empty()) throw invalid_argument("scores: no negative (noise) samples");
  check_scores(positives);
  check_scores(negatives);
}

double auprc(const ScoredSet& scored) {
  scored.require_both();
  const auto all = ranked(scored);
  double ap = 0;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::int64_t group_tp = 0;
    std::size_t j = i;
    for (; j < all.size() && all[j].score == all[i].score; ++j) {
      if (all[j].label == 1) {
        ++group_tp;
      } else {
        ++fp;
      }
    }
    tp += group_tp;
    if (group_tp > 0) {
      ap += static_cast<double>(group_tp) * static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    i = j;
  }
  return ap / static_cast<double>(scored.positives.size());
}

OperatingPoint operating_point(const ScoredSet& scored, double recall) {
  scored.require_both();
  if (!(recall > 0 && recall <= 1)) throw invalid_argument("recall must be in (0, 1]");
  std::vector<double> pos = scored.positives;
  std::sort(pos.begin(), pos.end(), std::greater<>());
  const auto n_pos = static_cast<std::int64_t>(pos.size());
  // smallest k with k / n_pos >= recall
  auto k = static_cast<std::int64_t>(std::ceil(recall * static_cast<double>(n_pos) - 1e-9));
  k = std::clamp<std::int64_t>(k, 1, n_pos);
  OperatingPoint op;
  op.threshold = pos[static_cast<std::size_t>(k - 1)];
  op.tp = std::count_if(pos.begin(), pos.end(), [&](double v) { return v >= op.threshold; });
  op.fp = std::count_if(scored.negatives.begin(), scored.negatives.end(),
                        [&](double v) { return v >= op.threshold; });
  op.tpr = static_cast<double>(op.tp) / static_cast<double>(n_pos);
  op.fpr = static_cast<double>(op.fp) / static_cast<double>(scored.negatives.size());
  return op;
}

double precision_at_recall_projected(const ScoredSet& scored, double recall, double ratio) {
  if (!(ratio >= 1) || !std::isfinite(ratio)) throw invalid_argument("ratio must be >= 1");
  const OperatingPoint op = operating_point(scored, recall);
  return op.tpr / (op.tpr + op.fpr * ratio);
}

double estimate_tokens_per_event(std::span<const Trace> traces, std::int64_t envelope_bytes,
                                 std::int64_t tls_overhead) {
  double total = 0;
  std::size_t n = 0;
  for (const Trace& t : traces) {
    for (const NetworkEvent& e : t.events) {
      total += static_cast<double>(std::max<std::int64_t>(e.size - envelope_bytes - tls_overhead, 0));
      ++n;
    }
  }
  if (n == 0) throw invalid_argument("estimate_tokens_per_event: no events");
  const double est = total / static_cast<double>(n) / kCharsPerToken;
  return std::abs(est - 1.0) <= 0.25 ? 1.0 : est;
}

double median(std::vector<double> values) {
  if (values.empty()) throw invalid_argument("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

std::string recall_column(double recall) {
  return "p@" + std::to_string(static_cast<int>(std::lround(recall * 100)));
}

TrialResult score_trial(const ScoredSet& scored, const std::vector<double>& recalls, double ratio) {
  TrialResult r;
  r.auprc = auprc(scored);
  for (const double rec : recalls) {
    r.precision_at_recall.push_back(precision_at_recall_projected(scored, rec, ratio));
  }
  r.n_test_target = scored.positives.size();
  r.n_test_noise = scored.negatives.size();
  return r;
}

void EvalReport::finalize() {
  if (trials.empty()) throw invalid_argument("report: no trials");
  std::sort(trials.begin(), trials.end(),
            [](const TrialResult& a, const TrialResult& b) { return a.trial < b.trial; });
  std::vector<double> a;
  for (const auto& t : trials) a.push_back(t.auprc);
  median_auprc = median(a);
  median_precision_at_recall.clear();
  for (std::size_t k = 0; k < recalls.size(); ++k) {
    std::vector<double> p;
    for (const auto& t : trials) p.push_back(t.precision_at_recall.at(k));
    median_precision_at_recall.push_back(median(p));
  }
}

std::string EvalReport::to_json() const {
  json j;
  j["attacker"] = attacker;
  j["modality"] = modality;
  j["ratio"] = ratio;
  j["recalls"] = recalls;
  j["median_auprc"] = median_auprc;
  json med = json::object();
  for (std::size_t k = 0; k < recalls.size() && k < median_precision_at_recall.size(); ++k) {
    med[recall_column(recalls[k])] = median_precision_at_recall[k];
  }
  j["median_precision_at_recall"] = med;
  json ts = json::array();
  for (const auto& t : trials) {
    json p = json::object();
    for (std::size_t k = 0; k < recalls.size(); ++k) {
      p[recall_column(recalls[k])] = t.precision_at_recall.at(k);
    }
    ts.push_back({{"trial", t.trial},
                  {"seed", t.seed},
                  {"auprc", t.auprc},
                  {"precision_at_recall", p},
                  {"n_train", t.n_train},
                  {"n_val", t.n_val},
                  {"n_test_target", t.n_test_target},
                  {"n_test_noise", t.n_test_noise},
                  {"n_trees", t.n_trees}});
  }
  j["trials"] = ts;
  j["params_digest"] = params_digest;
  j["notes"] = notes;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EvalReport r;
    r.attacker = j.value("attacker", std::string("unknown"));
    r.modality = j.value("modality", std::string());
    r.ratio = j.at("ratio").get<double>();
    r.recalls = j.at("recalls").get<std::vector<double>>();
    for (const json& jt : j.at("trials")) {
      TrialResult t;
      t.trial = jt.at("trial").get<int>();
      t.seed = jt.value("seed", std::uint64_t{0});
      t.auprc = jt.at("auprc").get<double>();
      for (const double rec : r.recalls) {
        t.precision_at_recall.push_back(jt.at("precision_at_recall").at(recall_column(rec)).get<double>());
      }
      t.n_train = jt.value("n_train", std::size_t{0});
      t.n_val = jt.value("n_val", std::size_t{0});
      t.n_test_target = jt.value("n_test_target", std::size_t{0});
      t.n_test_noise = jt.value("n_test_noise", std::size_t{0});
      t.n_trees = jt.value("n_trees", 0);
      if (!(t.auprc >= 0 && t.auprc <= 1)) throw format_error("report: auprc outside [0, 1]");
      r.trials.push_back(std::move(t));
    }
    r.params_digest = j.value("params_digest", std::string());
    if (j.contains("notes")) r.notes = j.at("notes").get<std::vector<std::string>>();
    r.finalize();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("report: ") + e.what());
  }
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "trial,auprc";
  for (const double r : recalls) out << ',' << recall_column(r);
  out << '\n';
  for (const auto& t : trials) {
    out << t.trial << ',' << t.auprc;
    for (const double p : t.precision_at_recall) out << ',' << p;
    out << '\n';
  }
  return out.str();
}

}  // namespace tlsleak
