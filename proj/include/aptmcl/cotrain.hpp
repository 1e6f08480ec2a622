#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aptmcl/classifier.hpp"
#include "aptmcl/matrix.hpp"
#include "json.hpp"

namespace aptmcl {

struct CoTrainConfig {
  double batch_thres = 0.65;
  double batch_prob = 0.3;
  int max_iterations = 50;
  BaggedTreeParams classifier;

  // 0.5 <= batch_thres < 1 and 0 < batch_prob <= 1.
  void validate() const;
  nlohmann::json to_json() const;
  static CoTrainConfig from_json(const nlohmann::json& j);
};

// Where a pseudo-label came from: the unsupervised detector of a view during
// seeding (USM/UBM) or a supervised sub-model during a round (SM/BM).
struct LabelSource {
  bool supervised = false;
  int view = 0;

  std::string name() const;
  bool operator==(const LabelSource&) const = default;
};

struct PseudoLabel {
  std::size_t sample;  // row in the SampleTable
  int label;
  LabelSource source;
  int iteration;  // 0 for seeds
  double confidence;
};

// Process samples with one embedding matrix per view, rows aligned with keys.
struct SampleTable {
  std::vector<std::string> keys;
  std::vector<Matrix> views;

  std::size_t size() const { return keys.size(); }
  std::size_t view_count() const { return views.size(); }
  void validate() const;
};

// LD: a key appears at most once.
class LabeledPool {
 public:
  void add(PseudoLabel entry);
  bool contains(std::size_t sample) const { return index_.contains(sample); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<PseudoLabel>& entries() const { return entries_; }
  std::size_t count(int label) const;

 private:
  std::vector<PseudoLabel> entries_;
  std::map<std::size_t, std::size_t> index_;
};

// UD: ascending sample indices.
using UnlabeledPool = std::vector<std::size_t>;

// Number of samples taken from a candidate set of size n.
std::size_t batch_count(double batch_prob, std::size_t n);

struct BatchSelection {
  std::size_t malicious_candidates = 0;
  std::size_t benign_candidates = 0;
  std::vector<std::size_t> malicious;  // sample indices, most anomalous first
  std::vector<std::size_t> benign;     // least anomalous first
};

// Malicious candidates: probability > batch_thres; the batch_prob share with
// the highest probabilities is taken. Benign candidates: probability <
// 1 - batch_thres; the share with the lowest probabilities is taken. Ties
// break on ascending sample index.
BatchSelection select_batch(std::span<const std::size_t> pool, std::span<const double> probability,
                            const CoTrainConfig& config);

struct ViewRoundStats {
  std::size_t malicious_candidates = 0;
  std::size_t benign_candidates = 0;
  std::size_t malicious_selected = 0;
  std::size_t benign_selected = 0;
  std::size_t label_flips = 0;  // UD keys whose predicted label changed since the previous round
};

struct RoundRecord {
  int iteration = 0;
  std::size_t labeled_before = 0;
  std::size_t unlabeled_before = 0;
  std::size_t unlabeled_after = 0;
  std::size_t added_malicious = 0;
  std::size_t added_benign = 0;
  std::size_t conflicts_resolved = 0;
  std::size_t conflicts_tied = 0;
  std::size_t view_disagreements = 0;
  std::vector<ViewRoundStats> views;

  nlohmann::json to_json() const;
};

struct SeedResult {
  LabeledPool labeled;
  UnlabeledPool unlabeled;
  RoundRecord record;
};

// Seeds LD from the unsupervised detectors' anomaly probabilities (one
// vector per view, aligned with the SampleTable rows). Throws ColdStartError
// when no view has a sample above batch_thres.
SeedResult seed_pools(const UnlabeledPool& unlabeled, std::span<const std::vector<double>> anomaly_probability,
                      const CoTrainConfig& config);

struct RoundResult {
  std::vector<std::unique_ptr<ConfidenceClassifier>> models;
  // Per view, indexed by SampleTable row; NaN for rows that were not in UD.
  std::vector<std::vector<double>> predictions;
  RoundRecord record;
  bool progress = false;
};

// One iteration of the supervised loop. Mutates labeled/unlabeled in place.
// Throws ClassStarvationError when LD lacks a class.
RoundResult cotrain_round(LabeledPool& labeled, UnlabeledPool& unlabeled, const SampleTable& samples,
                          const CoTrainConfig& config, int iteration,
                          const std::vector<std::vector<double>>* previous_predictions = nullptr);

enum class Termination { kExhausted, kNoProgress, kMaxIterations };
std::string_view to_string(Termination t);

struct CoTrainResult {
  std::vector<std::unique_ptr<ConfidenceClassifier>> models;  // one per view, fit on the final LD
  LabeledPool labeled;
  UnlabeledPool residual;
  std::vector<RoundRecord> audit;  // record 0 is the seeding step
  Termination termination = Termination::kExhausted;
  int iterations = 0;
  std::vector<std::string> warnings;

  // P(malicious) per view for every SampleTable row: out-of-bag votes for LD
  // rows when available, full-ensemble votes otherwise.
  std::vector<std::vector<double>> training_probabilities;
};

// Runs the seeding step and the supervised loop until UD is empty, a round
// selects nothing, or max_iterations rounds have run.
CoTrainResult run_cotraining(const SampleTable& samples, const UnlabeledPool& unlabeled,
                             std::span<const std::vector<double>> anomaly_probability, const CoTrainConfig& config);

nlohmann::json audit_to_json(const CoTrainResult& result, const SampleTable& samples);

}  // namespace aptmcl
