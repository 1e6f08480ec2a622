#include "aptmcl/iforest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aptmcl/errors.hpp"
#include "aptmcl/rng.hpp"

namespace aptmcl {

using nlohmann::json;

namespace {

constexpr int kForestFormatVersion = 1;

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& data, int height_limit, std::mt19937_64& rng)
      : data_(data), height_limit_(height_limit), rng_(rng) {}

  IsolationTree build(std::vector<Eigen::Index> rows) {
    tree_.nodes.clear();
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  int grow(std::span<Eigen::Index> rows, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back(IsolationTree::Node{});
    if (depth >= height_limit_ || rows.size() <= 1) return leaf(id, rows.size());

    const auto d = static_cast<int>(data_.cols());
    std::uniform_int_distribution<int> pick_dim(0, d - 1);
    // A constant dimension cannot split; redraw up to d times before giving up.
    for (int attempt = 0; attempt < d; ++attempt) {
      const int q = pick_dim(rng_);
      double lo = data_(rows[0], q), hi = lo;
      for (auto r : rows) {
        lo = std::min(lo, data_(r, q));
        hi = std::max(hi, data_(r, q));
      }
      // no double strictly between adjacent values: treat as constant
      if (!(std::nextafter(lo, hi) < hi)) continue;
      std::uniform_real_distribution<double> pick_split(lo, hi);
      double p = pick_split(rng_);
      while (!(p > lo && p < hi)) p = pick_split(rng_);

      auto mid = std::partition(rows.begin(), rows.end(), [&](Eigen::Index r) { return data_(r, q) < p; });
      const auto n_left = static_cast<std::size_t>(mid - rows.begin());
      const int left = grow(rows.first(n_left), depth + 1);
      const int right = grow(rows.subspan(n_left), depth + 1);
      auto& node = tree_.nodes[static_cast<std::size_t>(id)];
      node.feature = q;
      node.split = p;
      node.left = left;
      node.right = right;
      node.size = rows.size();
      return id;
    }
    return leaf(id, rows.size());
  }

  int leaf(int id, std::size_t size) {
    tree_.nodes[static_cast<std::size_t>(id)].size = size;
    return id;
  }

  const Matrix& data_;
  int height_limit_;
  std::mt19937_64& rng_;
  IsolationTree tree_;
};

}  // namespace

double harmonic(std::size_t i) {
  double h = 0.0;
  for (std::size_t k = 1; k <= i; ++k) h += 1.0 / static_cast<double>(k);
  return h;
}

double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  const double nd = static_cast<double>(n);
  return 2.0 * harmonic(n - 1) - 2.0 * (nd - 1.0) / nd;
}

int IsolationTree::depth() const {
  std::vector<int> depth(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    best = std::max(best, depth[i]);
    if (n.feature >= 0) {
      depth[static_cast<std::size_t>(n.left)] = depth[i] + 1;
      depth[static_cast<std::size_t>(n.right)] = depth[i] + 1;
    }
  }
  return best;
}

double IsolationTree::path_length(std::span<const double> x) const {
  std::size_t at = 0;
  double depth = 0.0;
  while (nodes[at].feature >= 0) {
    const auto& n = nodes[at];
    at = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.split ? n.left : n.right);
    depth += 1.0;
  }
  return depth + average_path_length(nodes[at].size);
}

IsolationForest IsolationForest::fit(const Matrix& data, const IsolationForestParams& params) {
  if (params.n_trees <= 0) throw ConfigError("n_trees must be positive");
  if (params.subsample < 2) throw ConfigError("subsample size must be at least 2");
  if (data.rows() < 2) throw InputError("isolation forest needs at least 2 rows");
  if (data.cols() == 0) throw InputError("isolation forest needs at least 1 column");
  if (!data.allFinite()) throw InputError("isolation forest input contains non-finite values");
  bool constant = true;
  for (Eigen::Index r = 1; r < data.rows() && constant; ++r) constant = data.row(r) == data.row(0);
  if (constant) throw DegenerateDataError("every training row is identical; nothing to isolate");

  IsolationForest forest;
  forest.params_ = params;
  forest.dim_ = static_cast<int>(data.cols());
  forest.sample_size_ = std::min(params.subsample, static_cast<std::size_t>(data.rows()));
  forest.height_limit_ = static_cast<int>(std::ceil(std::log2(static_cast<double>(forest.sample_size_))));

  std::vector<Eigen::Index> all(static_cast<std::size_t>(data.rows()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  forest.trees_.reserve(static_cast<std::size_t>(params.n_trees));
  for (int t = 0; t < params.n_trees; ++t) {
    std::mt19937_64 rng(derive_seed(params.seed, static_cast<std::uint64_t>(t)));
    std::vector<Eigen::Index> pool = all;
    for (std::size_t i = 0; i < forest.sample_size_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(forest.sample_size_);
    TreeBuilder builder(data, forest.height_limit_, rng);
    forest.trees_.push_back(builder.build(std::move(pool)));
  }
  const auto scores = forest.score_rows(data);
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  forest.score_floor_ = std::min(0.5, *lo);
  forest.score_ceiling_ = std::max(0.5, *hi);
  return forest;
}

double IsolationForest::mean_path_length(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim_) {
    throw DimensionError("score input width " + std::to_string(x.size()) + " does not match forest width " +
                         std::to_string(dim_));
  }
  double total = 0.0;
  for (const auto& t : trees_) total += t.path_length(x);
  return total / static_cast<double>(trees_.size());
}

double IsolationForest::score(std::span<const double> x) const {
  return std::exp2(-mean_path_length(x) / average_path_length(sample_size_));
}

double IsolationForest::anomaly_probability(std::span<const double> x) const {
  return to_anomaly_probability(score(x), score_floor_, score_ceiling_).probability;
}

std::vector<double> IsolationForest::score_rows(const Matrix& rows) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    out.push_back(score(std::span<const double>(rows.row(r).data(), static_cast<std::size_t>(rows.cols()))));
  }
  return out;
}

json IsolationForest::to_json() const {
  json trees = json::array();
  for (const auto& t : trees_) {
    json nodes = json::array();
    for (const auto& n : t.nodes) nodes.push_back(json::array({n.feature, n.split, n.left, n.right, n.size}));
    trees.push_back(std::move(nodes));
  }
  return json{{"format", "aptmcl.iforest"},
              {"version", kForestFormatVersion},
              {"n_trees", params_.n_trees},
              {"subsample", params_.subsample},
              {"seed", params_.seed},
              {"dim", dim_},
              {"sample_size", sample_size_},
              {"height_limit", height_limit_},
              {"score_floor", score_floor_},
              {"score_ceiling", score_ceiling_},
              {"trees", trees}};
}

IsolationForest IsolationForest::from_json(const json& j) {
  try {
    if (j.at("format") != "aptmcl.iforest") throw ArtifactError("not an isolation forest dump");
    if (j.at("version").get<int>() != kForestFormatVersion) throw ArtifactError("unsupported forest version");
    IsolationForest f;
    f.params_.n_trees = j.at("n_trees").get<int>();
    f.params_.subsample = j.at("subsample").get<std::size_t>();
    f.params_.seed = j.at("seed").get<std::uint64_t>();
    f.dim_ = j.at("dim").get<int>();
    f.sample_size_ = j.at("sample_size").get<std::size_t>();
    f.height_limit_ = j.at("height_limit").get<int>();
    f.score_floor_ = j.at("score_floor").get<double>();
    f.score_ceiling_ = j.at("score_ceiling").get<double>();
    for (const auto& tj : j.at("trees")) {
      IsolationTree t;
      for (const auto& nj : tj) {
        t.nodes.push_back(IsolationTree::Node{nj.at(0).get<int>(), nj.at(1).get<double>(), nj.at(2).get<int>(),
                                              nj.at(3).get<int>(), nj.at(4).get<std::size_t>()});
      }
      f.trees_.push_back(std::move(t));
    }
    return f;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("malformed isolation forest dump: ") + e.what());
  }
}

bool IsolationForest::operator==(const IsolationForest& other) const {
  if (dim_ != other.dim_ || sample_size_ != other.sample_size_ || trees_.size() != other.trees_.size() ||
      score_floor_ != other.score_floor_ || score_ceiling_ != other.score_ceiling_) {
    return false;
  }
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    const auto& a = trees_[t].nodes;
    const auto& b = other.trees_[t].nodes;
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].feature != b[i].feature || a[i].split != b[i].split || a[i].left != b[i].left ||
          a[i].right != b[i].right || a[i].size != b[i].size) {
        return false;
      }
    }
  }
  return true;
}

AnomalyVerdict to_anomaly_probability(double score) { return {score, score > 0.5}; }

AnomalyVerdict to_anomaly_probability(double score, double floor, double ceiling) {
  const bool malicious = score > 0.5;
  if (score >= 0.5) {
    if (ceiling <= 0.5) return {score, malicious};
    return {std::min(1.0, 0.5 + 0.5 * (score - 0.5) / (ceiling - 0.5)), malicious};
  }
  if (floor >= 0.5) return {score, malicious};
  return {std::max(0.0, 0.5 * (score - floor) / (0.5 - floor)), malicious};
}

}  // namespace aptmcl
