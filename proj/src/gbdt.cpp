#include "tlsleak/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "tlsleak/error.hpp"
#include "tlsleak/io.hpp"

namespace tlsleak {

namespace {

using json = nlohmann::ordered_json;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

void check_finite(const Eigen::MatrixXd& x, const char* what) {
  if (!x.allFinite()) {
    throw invalid_argument(std::string("gbdt: non-finite value in ") + what + " features");
  }
}

struct HistBin {
  double g = 0;
  double h = 0;
  std::int64_t n = 0;
};

struct SplitInfo {
  int feature = -1;
  int bin = -1;
  double gain = 0;
  double gl = 0, hl = 0;
  std::int64_t nl = 0;
};

struct Leaf {
  std::size_t begin = 0, end = 0;  // range in the row index array
  double g = 0, h = 0;
  std::int64_t n = 0;
  int node = 0;
  std::vector<HistBin> hist;
  SplitInfo best;
};

struct GradPair {
  double g;
  double h;
};

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::uint8_t>& bins, const FeatureBinner& binner,
              Eigen::Index n_rows, int n_features, const TrainParams& p)
      : bins_(bins), binner_(binner), n_(static_cast<std::size_t>(n_rows)),
        f_(n_features), p_(p) {
    offsets_.resize(static_cast<std::size_t>(f_) + 1, 0);
    for (int f = 0; f < f_; ++f) {
      offsets_[static_cast<std::size_t>(f) + 1] =
          offsets_[static_cast<std::size_t>(f)] + static_cast<std::size_t>(binner.n_bins(f));
      if (binner.n_bins(f) > 1) active_.push_back(f);
    }
    rows_.resize(n_);
    scratch_.resize(n_);
  }

  // Grows one tree on gradients gh; adds the shrunk leaf outputs to raw.
  Tree build(const std::vector<GradPair>& gh, std::vector<double>& raw) {
    std::iota(rows_.begin(), rows_.end(), 0u);
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<Leaf> leaves(1);
    Leaf& root = leaves[0];
    root.begin = 0;
    root.end = n_;
    root.hist = histogram(root, gh);
    totals(root);
    root.best = best_split(root);

    while (static_cast<int>(leaves.size()) < p_.max_leaves) {
      int pick = -1;
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        const auto& b = leaves[i].best;
        if (b.feature < 0) continue;
        if (pick < 0 || b.gain > leaves[static_cast<std::size_t>(pick)].best.gain) {
          pick = static_cast<int>(i);
        }
      }
      if (pick < 0) break;
      split(leaves, static_cast<std::size_t>(pick), tree, gh);
    }

    for (Leaf& leaf : leaves) {
      const double value = -p_.learning_rate * leaf.g / (leaf.h + p_.l2_lambda);
      tree.nodes[static_cast<std::size_t>(leaf.node)].value = value;
      for (std::size_t i = leaf.begin; i < leaf.end; ++i) raw[rows_[i]] += value;
      pool_.push_back(std::move(leaf.hist));
    }
    return tree;
  }

 private:
  // Buffers are recycled across leaves and trees; wide inputs make each one
  // several megabytes and fresh allocations dominated the runtime.
  std::vector<HistBin> acquire() {
    std::vector<HistBin> hist;
    if (pool_.empty()) {
      hist.resize(offsets_.back());
    } else {
      hist = std::move(pool_.back());
      pool_.pop_back();
      std::fill(hist.begin(), hist.end(), HistBin{});
    }
    return hist;
  }

  std::vector<HistBin> histogram(const Leaf& leaf, const std::vector<GradPair>& gh) {
    std::vector<HistBin> hist = acquire();
    // gradients gathered once in leaf order, then each column streams over them
    const std::size_t count = leaf.end - leaf.begin;
    ordered_.resize(count);
    for (std::size_t i = 0; i < count; ++i) ordered_[i] = gh[rows_[leaf.begin + i]];
    const std::uint32_t* rows = rows_.data() + leaf.begin;
    for (const int f : active_) {
      const std::uint8_t* col = bins_.data() + static_cast<std::size_t>(f) * n_;
      HistBin* h = hist.data() + offsets_[static_cast<std::size_t>(f)];
      for (std::size_t i = 0; i < count; ++i) {
        HistBin& b = h[col[rows[i]]];
        b.g += ordered_[i].g;
        b.h += ordered_[i].h;
        ++b.n;
      }
    }
    return hist;
  }

  void totals(Leaf& leaf) const {
    // every active feature covers all rows; with none active, nothing splits
    leaf.g = leaf.h = 0;
    leaf.n = static_cast<std::int64_t>(leaf.end - leaf.begin);
    if (active_.empty()) return;
    const int f = active_.front();
    for (std::size_t b = offsets_[static_cast<std::size_t>(f)];
         b < offsets_[static_cast<std::size_t>(f) + 1]; ++b) {
      leaf.g += leaf.hist[b].g;
      leaf.h += leaf.hist[b].h;
    }
  }

  double score(double g, double h) const { return g * g / (h + p_.l2_lambda); }

  SplitInfo best_split(const Leaf& leaf) const {
    SplitInfo best;
    if (leaf.n < 2 * static_cast<std::int64_t>(p_.min_samples_per_leaf)) return best;
    const double parent = score(leaf.g, leaf.h);
    for (const int f : active_) {
      const HistBin* h = leaf.hist.data() + offsets_[static_cast<std::size_t>(f)];
      const int nb = binner_.n_bins(f);
      double gl = 0, hl = 0;
      std::int64_t nl = 0;
      for (int b = 0; b + 1 < nb; ++b) {
        // an empty bin repeats the previous candidate, which wins the tie
        if (h[b].n == 0) continue;
        gl += h[b].g;
        hl += h[b].h;
        nl += h[b].n;
        if (nl < p_.min_samples_per_leaf) continue;
        const std::int64_t nr = leaf.n - nl;
        if (nr < p_.min_samples_per_leaf) break;
        const double gr = leaf.g - gl;
        const double hr = leaf.h - hl;
        if (hl < p_.min_child_hessian || hr < p_.min_child_hessian) continue;
        const double gain = score(gl, hl) + score(gr, hr) - parent;
        if (gain > best.gain) best = SplitInfo{f, b, gain, gl, hl, nl};
      }
    }
    return best;
  }

  void split(std::vector<Leaf>& leaves, std::size_t which, Tree& tree,
             const std::vector<GradPair>& gh) {
    Leaf parent = std::move(leaves[which]);
    const SplitInfo s = parent.best;

    const int left_node = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& node = tree.nodes[static_cast<std::size_t>(parent.node)];
    node.feature = s.feature;
    node.bin = s.bin;
    node.threshold = binner_.bound(s.feature, s.bin);
    node.left = left_node;
    node.right = left_node + 1;

    // stable partition keeps each leaf's rows ascending
    const std::uint8_t* col = bins_.data() + static_cast<std::size_t>(s.feature) * n_;
    std::size_t nl = parent.begin, nr = 0;
    for (std::size_t i = parent.begin; i < parent.end; ++i) {
      const std::uint32_t r = rows_[i];
      if (col[r] <= s.bin) {
        rows_[nl++] = r;
      } else {
        scratch_[nr++] = r;
      }
    }
    std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(nr),
              rows_.begin() + static_cast<std::ptrdiff_t>(nl));

    Leaf left, right;
    left.begin = parent.begin;
    left.end = nl;
    left.node = left_node;
    right.begin = nl;
    right.end = parent.end;
    right.node = left_node + 1;

    Leaf& small = left.end - left.begin <= right.end - right.begin ? left : right;
    Leaf& large = &small == &left ? right : left;
    small.hist = histogram(small, gh);
    large.hist = std::move(parent.hist);
    for (std::size_t b = 0; b < large.hist.size(); ++b) {
      large.hist[b].g -= small.hist[b].g;
      large.hist[b].h -= small.hist[b].h;
      large.hist[b].n -= small.hist[b].n;
    }
    left.g = s.gl;
    left.h = s.hl;
    left.n = s.nl;
    right.g = parent.g - s.gl;
    right.h = parent.h - s.hl;
    right.n = parent.n - s.nl;
    left.best = best_split(left);
    right.best = best_split(right);

    leaves[which] = std::move(left);
    leaves.push_back(std::move(right));
  }

  const std::vector<std::uint8_t>& bins_;
  const FeatureBinner& binner_;
  std::size_t n_;
  int f_;
  TrainParams p_;
  std::vector<std::size_t> offsets_;
  std::vector<int> active_;
  std::vector<std::uint32_t> rows_;
  std::vector<std::uint32_t> scratch_;
  std::vector<GradPair> ordered_;
  std::vector<std::vector<HistBin>> pool_;
};

}  // namespace

void TrainParams::validate() const {
  if (!(learning_rate > 0)) throw invalid_argument("gbdt: learning_rate must be > 0");
  if (max_trees < 1) throw invalid_argument("gbdt: max_trees must be >= 1");
  if (early_stop_patience < 1) throw invalid_argument("gbdt: early_stop_patience must be >= 1");
  if (max_leaves < 2) throw invalid_argument("gbdt: max_leaves must be >= 2");
  if (min_samples_per_leaf < 1) throw invalid_argument("gbdt: min_samples_per_leaf must be >= 1");
  if (n_histogram_bins < 2 || n_histogram_bins > 256) {
    throw invalid_argument("gbdt: n_histogram_bins must be in [2, 256]");
  }
  if (!(l2_lambda >= 0)) throw invalid_argument("gbdt: l2_lambda must be >= 0");
  if (!(min_child_hessian >= 0)) throw invalid_argument("gbdt: min_child_hessian must be >= 0");
}

int Tree::leaf_count() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(),
                                        [](const TreeNode& n) { return n.is_leaf(); }));
}

std::vector<double> FeatureBinner::column_bounds(std::vector<double> column, int max_bins) {
  std::sort(column.begin(), column.end());
  std::vector<double> distinct;
  std::vector<std::int64_t> counts;
  for (const double v : column) {
    if (distinct.empty() || v != distinct.back()) {
      distinct.push_back(v);
      counts.push_back(1);
    } else {
      ++counts.back();
    }
  }
  auto midpoint = [](double a, double b) {
    const double m = a + (b - a) / 2;
    return m < b ? m : a;
  };
  std::vector<double> bounds;
  if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
      bounds.push_back(midpoint(distinct[i], distinct[i + 1]));
    }
    return bounds;
  }
  // Greedy equal-count merge over distinct values.
  std::int64_t remaining = static_cast<std::int64_t>(column.size());
  int bins_left = max_bins;
  std::int64_t acc = 0;
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
    acc += counts[i];
    const double target = static_cast<double>(remaining) / bins_left;
    const bool next_is_heavy = static_cast<double>(counts[i + 1]) >= target;
    if (static_cast<double>(acc) >= target || next_is_heavy) {
      bounds.push_back(midpoint(distinct[i], distinct[i + 1]));
      remaining -= acc;
      acc = 0;
      if (--bins_left == 1) break;
    }
  }
  return bounds;
}

FeatureBinner::FeatureBinner(const Eigen::MatrixXd& x, int max_bins) {
  bounds_.reserve(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::vector<double> col(x.col(c).data(), x.col(c).data() + x.rows());
    bounds_.push_back(column_bounds(std::move(col), max_bins));
  }
}

int FeatureBinner::bin(int feature, double x) const {
  const auto& b = bounds_[static_cast<std::size_t>(feature)];
  return static_cast<int>(std::lower_bound(b.begin(), b.end(), x) - b.begin());
}

double log_loss(const Eigen::VectorXd& raw, const Eigen::VectorXi& labels) {
  if (raw.size() != labels.size() || raw.size() == 0) {
    throw invalid_argument("log_loss: size mismatch or empty input");
  }
  double total = 0;
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    total += labels(i) == 1 ? softplus(-raw(i)) : softplus(raw(i));
  }
  return total / static_cast<double>(raw.size());
}

GbdtModel fit(const FeatureMatrix& train, const FeatureMatrix& val, const TrainParams& params) {
  params.validate();
  const Eigen::Index n = train.rows();
  const Eigen::Index width = train.cols();
  if (n == 0 || width == 0) throw invalid_argument("gbdt: empty training matrix");
  if (train.labels.size() != n) throw invalid_argument("gbdt: label count mismatch");
  if (val.rows() == 0) throw invalid_argument("gbdt: empty validation matrix");
  if (val.cols() != width) {
    throw invalid_argument("gbdt: validation width " + std::to_string(val.cols()) +
                           " != training width " + std::to_string(width));
  }
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw invalid_argument("gbdt: too many training rows");
  }
  check_finite(train.values, "training");
  check_finite(val.values, "validation");
  const auto positives = train.labels.cast<std::int64_t>().sum();
  if (positives == 0 || positives == n) {
    throw invalid_argument("gbdt: training labels hold a single class");
  }

  GbdtModel model;
  model.params = params;
  model.n_features = static_cast<int>(width);
  const double prevalence = static_cast<double>(positives) / static_cast<double>(n);
  model.base_score = std::log(prevalence / (1.0 - prevalence));

  const FeatureBinner binner(train.values, params.n_histogram_bins);
  std::vector<std::uint8_t> bins(static_cast<std::size_t>(n * width));
  for (Eigen::Index c = 0; c < width; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      bins[static_cast<std::size_t>(c * n + r)] =
          static_cast<std::uint8_t>(binner.bin(static_cast<int>(c), train.values(r, c)));
    }
  }

  TreeBuilder builder(bins, binner, n, static_cast<int>(width), params);
  std::vector<double> raw(static_cast<std::size_t>(n), model.base_score);
  Eigen::VectorXd val_raw = Eigen::VectorXd::Constant(val.rows(), model.base_score);
  std::vector<GradPair> gh(static_cast<std::size_t>(n));

  double best_val = std::numeric_limits<double>::infinity();
  for (int it = 0; it < params.max_trees; ++it) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const double p = sigmoid(raw[static_cast<std::size_t>(r)]);
      gh[static_cast<std::size_t>(r)] = {p - train.labels(r), p * (1.0 - p)};
    }
    Tree tree = builder.build(gh, raw);
    if (tree.nodes.size() == 1) break;  // no admissible split left
    for (Eigen::Index r = 0; r < val.rows(); ++r) val_raw(r) += tree.predict(val.values.row(r));
    model.trees.push_back(std::move(tree));

    model.train_loss.push_back(
        log_loss(Eigen::Map<const Eigen::VectorXd>(raw.data(), n), train.labels));
    model.val_loss.push_back(log_loss(val_raw, val.labels));
    if (model.val_loss.back() < best_val) {
      best_val = model.val_loss.back();
      model.best_iteration = it;
    } else if (it - model.best_iteration >= params.early_stop_patience) {
      break;
    }
  }
  model.trees.resize(static_cast<std::size_t>(model.best_iteration + 1));
  return model;
}

Eigen::VectorXd predict_raw(const GbdtModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.n_features) {
    throw invalid_argument("gbdt: feature width " + std::to_string(x.cols()) +
                           " != model width " + std::to_string(model.n_features));
  }
  check_finite(x, "scoring");
  Eigen::VectorXd out = Eigen::VectorXd::Constant(x.rows(), model.base_score);
  for (const Tree& t : model.trees) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) out(r) += t.predict(x.row(r));
  }
  return out;
}

Eigen::VectorXd predict_proba(const GbdtModel& model, const Eigen::MatrixXd& x) {
  return predict_raw(model, x).unaryExpr([](double z) { return sigmoid(z); });
}

Eigen::VectorXd predict_proba(const GbdtModel& model, const FeatureMatrix& features) {
  return predict_proba(model, features.values);
}

std::string to_json(const GbdtModel& model) {
  json j;
  j["version"] = kModelVersion;
  j["base_score"] = model.base_score;
  j["n_features"] = model.n_features;
  const TrainParams& p = model.params;
  j["params"] = {{"learning_rate", p.learning_rate},
                 {"max_trees", p.max_trees},
                 {"early_stop_patience", p.early_stop_patience},
                 {"max_leaves", p.max_leaves},
                 {"min_samples_per_leaf", p.min_samples_per_leaf},
                 {"n_histogram_bins", p.n_histogram_bins},
                 {"l2_lambda", p.l2_lambda},
                 {"min_child_hessian", p.min_child_hessian},
                 {"seed", p.seed}};
  json trees = json::array();
  for (const Tree& t : model.trees) {
    json nodes = json::array();
    for (const TreeNode& n : t.nodes) {
      if (n.is_leaf()) {
        nodes.push_back({{"v", n.value}});
      } else {
        nodes.push_back({{"f", n.feature}, {"b", n.bin}, {"t", n.threshold},
                         {"l", n.left}, {"r", n.right}});
      }
    }
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  j["trees"] = std::move(trees);
  j["meta"] = model.meta;
  return j.dump();
}

GbdtModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw format_error(std::string("model: ") + e.what());
  }
  try {
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) {
      throw format_error("model: unsupported version " + std::to_string(version) +
                         " (expected " + std::to_string(kModelVersion) + ")");
    }
    GbdtModel m;
    m.base_score = j.at("base_score").get<double>();
    m.n_features = j.at("n_features").get<int>();
    const json& p = j.at("params");
    m.params.learning_rate = p.at("learning_rate").get<double>();
    m.params.max_trees = p.at("max_trees").get<int>();
    m.params.early_stop_patience = p.at("early_stop_patience").get<int>();
    m.params.max_leaves = p.at("max_leaves").get<int>();
    m.params.min_samples_per_leaf = p.at("min_samples_per_leaf").get<int>();
    m.params.n_histogram_bins = p.at("n_histogram_bins").get<int>();
    m.params.l2_lambda = p.at("l2_lambda").get<double>();
    m.params.min_child_hessian = p.at("min_child_hessian").get<double>();
    m.params.seed = p.at("seed").get<std::uint64_t>();
    for (const json& jt : j.at("trees")) {
      Tree t;
      for (const json& jn : jt.at("nodes")) {
        TreeNode n;
        if (jn.contains("v")) {
          n.value = jn.at("v").get<double>();
        } else {
          n.feature = jn.at("f").get<int>();
          n.bin = jn.at("b").get<int>();
          n.threshold = jn.at("t").get<double>();
          n.left = jn.at("l").get<int>();
          n.right = jn.at("r").get<int>();
        }
        t.nodes.push_back(n);
      }
      const int size = static_cast<int>(t.nodes.size());
      for (const TreeNode& n : t.nodes) {
        if (n.is_leaf()) continue;
        if (n.feature >= m.n_features || n.left <= 0 || n.right <= 0 || n.left >= size ||
            n.right >= size) {
          throw format_error("model: tree node out of range");
        }
      }
      if (t.nodes.empty()) throw format_error("model: empty tree");
      m.trees.push_back(std::move(t));
    }
    if (j.contains("meta")) m.meta = j.at("meta").get<std::map<std::string, std::string>>();
    m.best_iteration = static_cast<int>(m.trees.size()) - 1;
    return m;
  } catch (const json::exception& e) {
    throw format_error(std::string("model: ") + e.what());
  }
}

void save_model(const GbdtModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(model) + "\n");
}

GbdtModel load_model(const std::filesystem::path& path) {
  return model_from_json(read_file(path));
}

}  // namespace tlsleak
