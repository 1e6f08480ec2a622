#include "aptmcl/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "aptmcl/errors.hpp"
#include "aptmcl/rng.hpp"

namespace aptmcl {

using nlohmann::json;

namespace {

void check_training_set(const Matrix& x, std::span<const int> labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw DimensionError("one label per row required");
  if (!x.allFinite()) throw InputError("classifier input contains non-finite values");
  bool has[2] = {false, false};
  for (int y : labels) {
    if (y != kBenign && y != kMalicious) throw InputError("labels must be 0 (benign) or 1 (malicious)");
    has[y] = true;
  }
  if (!has[0] || !has[1]) throw ClassStarvationError("training set holds a single class");
}

class CartBuilder {
 public:
  CartBuilder(const Matrix& x, std::span<const int> labels, const double class_weight[2], int max_depth)
      : x_(x), labels_(labels), max_depth_(max_depth) {
    w_[0] = class_weight[0];
    w_[1] = class_weight[1];
  }

  BaggedTreeClassifier::Tree build(std::vector<Eigen::Index> rows) {
    tree_.clear();
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  int grow(std::span<Eigen::Index> rows, int depth) {
    const int id = static_cast<int>(tree_.size());
    tree_.push_back({});
    double wt[2] = {0.0, 0.0};
    for (auto r : rows) wt[labels_[static_cast<std::size_t>(r)]] += w_[labels_[static_cast<std::size_t>(r)]];
    tree_[static_cast<std::size_t>(id)].label = wt[1] > wt[0] ? kMalicious : kBenign;
    if (depth >= max_depth_ || rows.size() < 2 || wt[0] == 0.0 || wt[1] == 0.0) return id;

    const double total = wt[0] + wt[1];
    double best_cost = gini_cost(wt[0], wt[1]) - 1e-12 * total;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<Eigen::Index> sorted(rows.begin(), rows.end());
    for (Eigen::Index f = 0; f < x_.cols(); ++f) {
      std::sort(sorted.begin(), sorted.end(), [&](Eigen::Index a, Eigen::Index b) {
        return x_(a, f) < x_(b, f) || (x_(a, f) == x_(b, f) && a < b);
      });
      double left[2] = {0.0, 0.0};
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        const int y = labels_[static_cast<std::size_t>(sorted[i])];
        left[y] += w_[y];
        const double a = x_(sorted[i], f), b = x_(sorted[i + 1], f);
        if (!(b > a)) continue;
        const double cost = gini_cost(left[0], left[1]) + gini_cost(wt[0] - left[0], wt[1] - left[1]);
        if (cost < best_cost) {
          best_cost = cost;
          best_feature = static_cast<int>(f);
          best_threshold = a + 0.5 * (b - a);
        }
      }
    }
    if (best_feature < 0) return id;

    auto mid = std::partition(rows.begin(), rows.end(),
                              [&](Eigen::Index r) { return x_(r, best_feature) <= best_threshold; });
    const auto n_left = static_cast<std::size_t>(mid - rows.begin());
    const int l = grow(rows.first(n_left), depth + 1);
    const int r = grow(rows.subspan(n_left), depth + 1);
    auto& node = tree_[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  // Weighted Gini impurity times node weight.
  static double gini_cost(double w0, double w1) {
    const double w = w0 + w1;
    if (w <= 0.0) return 0.0;
    return w - (w0 * w0 + w1 * w1) / w;
  }

  const Matrix& x_;
  std::span<const int> labels_;
  double w_[2];
  int max_depth_;
  BaggedTreeClassifier::Tree tree_;
};

int tree_vote(const BaggedTreeClassifier::Tree& tree, std::span<const double> x) {
  std::size_t at = 0;
  while (tree[at].feature >= 0) {
    at = static_cast<std::size_t>(x[static_cast<std::size_t>(tree[at].feature)] <= tree[at].threshold ? tree[at].left
                                                                                                      : tree[at].right);
  }
  return tree[at].label;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::vector<double> ConfidenceClassifier::predict_rows(const Matrix& x) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.push_back(malicious_probability(std::span<const double>(x.row(r).data(), static_cast<std::size_t>(x.cols()))));
  }
  return out;
}

// ---------------------------------------------------------------------------

json BaggedTreeParams::to_json() const {
  return json{{"n_trees", n_trees}, {"max_depth", max_depth}, {"class_weighted", class_weighted}, {"seed", seed}};
}

BaggedTreeParams BaggedTreeParams::from_json(const json& j) {
  BaggedTreeParams p;
  p.n_trees = j.value("n_trees", p.n_trees);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.class_weighted = j.value("class_weighted", p.class_weighted);
  p.seed = j.value("seed", p.seed);
  if (p.n_trees <= 0 || p.max_depth <= 0) throw ConfigError("bagged trees need positive n_trees and max_depth");
  return p;
}

void BaggedTreeClassifier::fit(const Matrix& x, std::span<const int> labels) {
  check_training_set(x, labels);
  const auto n = static_cast<std::size_t>(x.rows());
  double class_weight[2] = {1.0, 1.0};
  if (params_.class_weighted) {
    const auto n_mal = static_cast<double>(std::count(labels.begin(), labels.end(), kMalicious));
    const auto n_ben = static_cast<double>(n) - n_mal;
    class_weight[kBenign] = static_cast<double>(n) / (2.0 * n_ben);
    class_weight[kMalicious] = static_cast<double>(n) / (2.0 * n_mal);
  }
  dim_ = static_cast<int>(x.cols());
  trees_.clear();
  std::vector<int> oob_votes(n, 0), oob_count(n, 0);
  std::vector<char> in_bag(n);
  CartBuilder builder(x, labels, class_weight, params_.max_depth);
  for (int t = 0; t < params_.n_trees; ++t) {
    std::mt19937_64 rng(derive_seed(params_.seed, static_cast<std::uint64_t>(t)));
    std::uniform_int_distribution<Eigen::Index> pick(0, static_cast<Eigen::Index>(n) - 1);
    std::vector<Eigen::Index> rows(n);
    std::fill(in_bag.begin(), in_bag.end(), 0);
    for (auto& r : rows) {
      r = pick(rng);
      in_bag[static_cast<std::size_t>(r)] = 1;
    }
    trees_.push_back(builder.build(std::move(rows)));
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      const auto row = x.row(static_cast<Eigen::Index>(i));
      oob_votes[i] += tree_vote(trees_.back(), std::span<const double>(row.data(), static_cast<std::size_t>(x.cols())));
      ++oob_count[i];
    }
  }
  oob_.assign(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    if (oob_count[i] > 0) oob_[i] = static_cast<double>(oob_votes[i]) / static_cast<double>(oob_count[i]);
  }
}

double BaggedTreeClassifier::malicious_probability(std::span<const double> x) const {
  if (!trained()) throw StateError("bagged tree classifier used before fit()");
  if (static_cast<int>(x.size()) != dim_) throw DimensionError("classifier input width mismatch");
  int votes = 0;
  for (const auto& t : trees_) votes += tree_vote(t, x);
  return static_cast<double>(votes) / static_cast<double>(trees_.size());
}

json BaggedTreeClassifier::to_json() const {
  json trees = json::array();
  for (const auto& t : trees_) {
    json nodes = json::array();
    for (const auto& n : t) nodes.push_back(json::array({n.feature, n.threshold, n.left, n.right, n.label}));
    trees.push_back(std::move(nodes));
  }
  return json{{"kind", "bagged_trees"}, {"params", params_.to_json()}, {"dim", dim_}, {"trees", trees}};
}

BaggedTreeClassifier BaggedTreeClassifier::from_json(const json& j) {
  try {
    BaggedTreeClassifier c(BaggedTreeParams::from_json(j.at("params")));
    c.dim_ = j.at("dim").get<int>();
    for (const auto& tj : j.at("trees")) {
      Tree t;
      for (const auto& nj : tj) {
        t.push_back(Node{nj.at(0).get<int>(), nj.at(1).get<double>(), nj.at(2).get<int>(), nj.at(3).get<int>(),
                         nj.at(4).get<int>()});
      }
      c.trees_.push_back(std::move(t));
    }
    return c;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("malformed bagged tree dump: ") + e.what());
  }
}

std::unique_ptr<ConfidenceClassifier> BaggedTreeClassifier::clone() const {
  return std::make_unique<BaggedTreeClassifier>(*this);
}

// ---------------------------------------------------------------------------

void LogisticClassifier::fit(const Matrix& x, std::span<const int> labels) {
  check_training_set(x, labels);
  const Eigen::Index n = x.rows(), d = x.cols();
  // Augmented design [x | 1]; the last coefficient is the bias.
  Matrix a(n, d + 1);
  a.leftCols(d) = x;
  a.col(d).setOnes();
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)];
  Vector penalty = Vector::Constant(d + 1, params_.l2);
  penalty(d) = 0.0;

  Vector beta = Vector::Zero(d + 1);
  for (int it = 0; it < params_.max_iterations; ++it) {
    Vector p(n), w(n);
    const Vector z = a * beta;
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      w(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
    }
    const Vector grad = a.transpose() * (p - y) + penalty.cwiseProduct(beta);
    Matrix hess = a.transpose() * w.asDiagonal() * a;
    hess.diagonal() += penalty + Vector::Constant(d + 1, 1e-9);
    const Vector step = hess.ldlt().solve(grad);
    beta -= step;
    if (step.norm() < params_.tolerance) break;
  }
  if (!beta.allFinite()) throw DivergenceError("logistic meta-model diverged");
  weights_ = beta.head(d);
  bias_ = beta(d);
}

double LogisticClassifier::malicious_probability(std::span<const double> x) const {
  if (!trained()) throw StateError("meta-model used before it was trained");
  if (static_cast<Eigen::Index>(x.size()) != weights_.size()) throw DimensionError("meta-model input width mismatch");
  double z = bias_;
  for (std::size_t i = 0; i < x.size(); ++i) z += weights_(static_cast<Eigen::Index>(i)) * x[i];
  return sigmoid(z);
}

json LogisticClassifier::to_json() const {
  return json{{"kind", "logistic"},
              {"l2", params_.l2},
              {"weights", std::vector<double>(weights_.data(), weights_.data() + weights_.size())},
              {"bias", bias_}};
}

LogisticClassifier LogisticClassifier::from_json(const json& j) {
  try {
    LogisticParams p;
    p.l2 = j.at("l2").get<double>();
    LogisticClassifier c(p);
    const auto w = j.at("weights").get<std::vector<double>>();
    c.weights_ = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    c.bias_ = j.at("bias").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("malformed logistic dump: ") + e.what());
  }
}

std::unique_ptr<ConfidenceClassifier> LogisticClassifier::clone() const {
  return std::make_unique<LogisticClassifier>(*this);
}

std::unique_ptr<ConfidenceClassifier> classifier_from_json(const json& j) {
  const auto kind = j.value("kind", std::string());
  if (kind == "bagged_trees") return std::make_unique<BaggedTreeClassifier>(BaggedTreeClassifier::from_json(j));
  if (kind == "logistic") return std::make_unique<LogisticClassifier>(LogisticClassifier::from_json(j));
  throw ArtifactError("unknown classifier kind '" + kind + "'");
}

}  // namespace aptmcl
