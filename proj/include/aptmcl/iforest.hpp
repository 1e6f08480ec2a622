#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aptmcl/matrix.hpp"
#include "json.hpp"

namespace aptmcl {

// Harmonic number H(i) = 1 + 1/2 + ... + 1/i, summed exactly.
double harmonic(std::size_t i);
// Average unsuccessful-search path length in a BST of n points:
// c(n) = 2 H(n-1) - 2 (n-1) / n, with c(0) = c(1) = 0.
double average_path_length(std::size_t n);

struct IsolationTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
    std::size_t size = 0;  // residual sample count at a leaf
  };
  std::vector<Node> nodes;

  int depth() const;
  double path_length(std::span<const double> x) const;
};

struct IsolationForestParams {
  int n_trees = 100;
  std::size_t subsample = 256;
  std::uint64_t seed = 1;
};

class IsolationForest {
 public:
  // Throws InputError for fewer than 2 rows or non-finite entries and
  // DegenerateDataError when every row is identical.
  static IsolationForest fit(const Matrix& data, const IsolationForestParams& params);

  double mean_path_length(std::span<const double> x) const;
  // s(x, psi) = 2^(-E[h(x)] / c(psi)), strictly inside (0, 1).
  double score(std::span<const double> x) const;
  std::vector<double> score_rows(const Matrix& rows) const;
  // Score mapped through to_anomaly_probability(score, score_floor(), score_ceiling()).
  double anomaly_probability(std::span<const double> x) const;

  // Lowest training score, capped at 0.5.
  double score_floor() const { return score_floor_; }
  // Highest training score, at least 0.5.
  double score_ceiling() const { return score_ceiling_; }

  int dim() const { return dim_; }
  std::size_t sample_size() const { return sample_size_; }
  int height_limit() const { return height_limit_; }
  const std::vector<IsolationTree>& trees() const { return trees_; }
  const IsolationForestParams& params() const { return params_; }

  nlohmann::json to_json() const;
  static IsolationForest from_json(const nlohmann::json& j);
  bool operator==(const IsolationForest& other) const;

 private:
  IsolationForestParams params_;
  int dim_ = 0;
  std::size_t sample_size_ = 0;
  int height_limit_ = 0;
  double score_floor_ = 0.5;
  double score_ceiling_ = 0.5;
  std::vector<IsolationTree> trees_;
};

struct AnomalyVerdict {
  double probability;
  bool malicious;  // probability > 0.5
};

// Identity calibration: the score already lies in (0, 1) and preserves order.
AnomalyVerdict to_anomaly_probability(double score);

// Piecewise-linear stretch anchored at the training range: [floor, 0.5] onto
// [0, 0.5] and [0.5, ceiling] onto [0.5, 1], clamped to [0, 1]. Raw scores on
// clustered data stay within roughly 0.35..0.75, so without the stretch the
// cut-offs t and 1 - t are unreachable for t >= 0.65. The label is the same
// as the identity mapping.
AnomalyVerdict to_anomaly_probability(double score, double floor, double ceiling);

}  // namespace aptmcl
