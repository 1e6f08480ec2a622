#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "aptmcl/matrix.hpp"
#include "json.hpp"

namespace aptmcl {

// Binary label encoding used throughout: 1 = malicious, 0 = benign.
inline constexpr int kBenign = 0;
inline constexpr int kMalicious = 1;

// Supervised model emitting P(malicious); P(benign) is its complement.
class ConfidenceClassifier {
 public:
  virtual ~ConfidenceClassifier() = default;

  // Throws ClassStarvationError unless both classes are present.
  virtual void fit(const Matrix& x, std::span<const int> labels) = 0;
  virtual double malicious_probability(std::span<const double> x) const = 0;
  virtual bool trained() const = 0;
  virtual nlohmann::json to_json() const = 0;
  virtual std::unique_ptr<ConfidenceClassifier> clone() const = 0;

  std::vector<double> predict_rows(const Matrix& x) const;
};

std::unique_ptr<ConfidenceClassifier> classifier_from_json(const nlohmann::json& j);

struct BaggedTreeParams {
  int n_trees = 50;
  int max_depth = 8;
  bool class_weighted = true;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static BaggedTreeParams from_json(const nlohmann::json& j);
};

// Bootstrap-aggregated CART trees (weighted Gini, every feature considered at
// each split). P(malicious) is the fraction of trees voting malicious.
class BaggedTreeClassifier final : public ConfidenceClassifier {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int label = kBenign;
  };
  using Tree = std::vector<Node>;

  explicit BaggedTreeClassifier(BaggedTreeParams params = {}) : params_(params) {}

  void fit(const Matrix& x, std::span<const int> labels) override;
  double malicious_probability(std::span<const double> x) const override;
  bool trained() const override { return !trees_.empty(); }
  nlohmann::json to_json() const override;
  std::unique_ptr<ConfidenceClassifier> clone() const override;

  // Vote fraction over the trees whose bootstrap left row i out; NaN when
  // every tree saw it. Aligned with the rows of the last fit().
  const std::vector<double>& oob_probabilities() const { return oob_; }

  static BaggedTreeClassifier from_json(const nlohmann::json& j);
  const BaggedTreeParams& params() const { return params_; }

 private:
  BaggedTreeParams params_;
  int dim_ = 0;
  std::vector<Tree> trees_;
  std::vector<double> oob_;
};

struct LogisticParams {
  double l2 = 1.0;
  int max_iterations = 100;
  double tolerance = 1e-12;
};

// L2-regularised logistic regression fitted by Newton iterations. The bias
// is not penalised.
class LogisticClassifier final : public ConfidenceClassifier {
 public:
  explicit LogisticClassifier(LogisticParams params = {}) : params_(params) {}

  void fit(const Matrix& x, std::span<const int> labels) override;
  double malicious_probability(std::span<const double> x) const override;
  bool trained() const override { return weights_.size() > 0; }
  nlohmann::json to_json() const override;
  std::unique_ptr<ConfidenceClassifier> clone() const override;

  const Vector& weights() const { return weights_; }
  double bias() const { return bias_; }

  static LogisticClassifier from_json(const nlohmann::json& j);

 private:
  LogisticParams params_;
  Vector weights_;
  double bias_ = 0.0;
};

}  // namespace aptmcl
