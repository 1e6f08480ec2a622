#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "aptmcl/classifier.hpp"
#include "json.hpp"

namespace aptmcl {

// Per-view [malicious, benign] probabilities of the structural (SM) and
// behavioral (BM) sub-models.
struct ProbPair {
  double mp_sm = 0.5;
  double bp_sm = 0.5;
  double mp_bm = 0.5;
  double bp_bm = 0.5;

  static ProbPair from_malicious(double sm, double bm) { return {sm, 1.0 - sm, bm, 1.0 - bm}; }
  // Throws InputError unless entries lie in [0,1] and each pair sums to 1 +- 1e-9.
  void validate() const;
  std::array<double, 4> as_array() const { return {mp_sm, bp_sm, mp_bm, bp_bm}; }

  int sm_label() const { return mp_sm > 0.5 ? kMalicious : kBenign; }
  int bm_label() const { return mp_bm > 0.5 ? kMalicious : kBenign; }
};

enum class FusionStrategy { kBV, kMV, kSV, kST };

std::string_view to_string(FusionStrategy s);
FusionStrategy parse_strategy(std::string_view name);

int fuse_bv(const ProbPair& p);
int fuse_mv(const ProbPair& p);

struct SoftVote {
  int label;
  double mp;
  double bp;
};
// Exact tie MP == BP resolves to benign.
SoftVote fuse_sv(const ProbPair& p);

class MetaModel {
 public:
  MetaModel() = default;
  explicit MetaModel(LogisticClassifier model) : model_(std::move(model)) {}

  bool trained() const { return model_.trained(); }
  double malicious_probability(const ProbPair& p) const;
  const LogisticClassifier& model() const { return model_; }

  nlohmann::json to_json() const { return model_.to_json(); }
  static MetaModel from_json(const nlohmann::json& j) { return MetaModel(LogisticClassifier::from_json(j)); }

 private:
  LogisticClassifier model_;
};

// Fits the meta-model on the samples where both views agree, labelled with
// the agreed verdict. Throws ClassStarvationError when that set lacks a class.
MetaModel train_stacking(std::span<const ProbPair> pairs, LogisticParams params = {});

// Throws StateError on an untrained meta-model.
int fuse_st(const MetaModel& meta, const ProbPair& p);

// Dispatches on the strategy; meta is required only for kST.
int fuse(FusionStrategy strategy, const ProbPair& p, const MetaModel* meta);

}  // namespace aptmcl
