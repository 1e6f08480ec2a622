#include "aptmcl/fusion.hpp"

#include <cmath>

#include "aptmcl/errors.hpp"

namespace aptmcl {

void ProbPair::validate() const {
  for (double v : as_array()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("probabilities must lie in [0, 1]");
  }
  if (std::abs(mp_sm + bp_sm - 1.0) > 1e-9 || std::abs(mp_bm + bp_bm - 1.0) > 1e-9) {
    throw InputError("each view's [malicious, benign] pair must sum to 1");
  }
}

std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kBV: return "bv";
    case FusionStrategy::kMV: return "mv";
    case FusionStrategy::kSV: return "sv";
    case FusionStrategy::kST: return "st";
  }
  return "?";
}

FusionStrategy parse_strategy(std::string_view name) {
  if (name == "bv") return FusionStrategy::kBV;
  if (name == "mv") return FusionStrategy::kMV;
  if (name == "sv") return FusionStrategy::kSV;
  if (name == "st") return FusionStrategy::kST;
  throw ConfigError("unknown fusion strategy '" + std::string(name) + "' (expected bv, mv, sv or st)");
}

int fuse_bv(const ProbPair& p) {
  return p.sm_label() == kMalicious && p.bm_label() == kMalicious ? kMalicious : kBenign;
}

int fuse_mv(const ProbPair& p) {
  return p.sm_label() == kMalicious || p.bm_label() == kMalicious ? kMalicious : kBenign;
}

SoftVote fuse_sv(const ProbPair& p) {
  const double mp = (p.mp_sm + p.mp_bm) / 2.0;
  const double bp = (p.bp_sm + p.bp_bm) / 2.0;
  return {mp > bp ? kMalicious : kBenign, mp, bp};
}

double MetaModel::malicious_probability(const ProbPair& p) const {
  if (!trained()) throw StateError("stacking meta-model has not been trained; run cotrain first");
  const auto x = p.as_array();
  return model_.malicious_probability(x);
}

MetaModel train_stacking(std::span<const ProbPair> pairs, LogisticParams params) {
  std::vector<std::array<double, 4>> rows;
  std::vector<int> labels;
  for (const auto& p : pairs) {
    if (p.sm_label() != p.bm_label()) continue;
    rows.push_back(p.as_array());
    labels.push_back(p.sm_label());
  }
  if (rows.empty()) throw ClassStarvationError("no sample where both sub-models agree");
  Matrix x(static_cast<Eigen::Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int c = 0; c < 4; ++c) x(static_cast<Eigen::Index>(i), c) = rows[i][static_cast<std::size_t>(c)];
  }
  LogisticClassifier model(params);
  model.fit(x, labels);  // throws ClassStarvationError on a single class
  return MetaModel(std::move(model));
}

int fuse_st(const MetaModel& meta, const ProbPair& p) {
  return meta.malicious_probability(p) > 0.5 ? kMalicious : kBenign;
}

int fuse(FusionStrategy strategy, const ProbPair& p, const MetaModel* meta) {
  switch (strategy) {
    case FusionStrategy::kBV: return fuse_bv(p);
    case FusionStrategy::kMV: return fuse_mv(p);
    case FusionStrategy::kSV: return fuse_sv(p).label;
    case FusionStrategy::kST:
      if (!meta) throw StateError("stacking requires a trained meta-model");
      return fuse_st(*meta, p);
  }
  return kBenign;
}

}  // namespace aptmcl
