#include "aptmcl/cotrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aptmcl/errors.hpp"
#include "aptmcl/rng.hpp"

namespace aptmcl {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Vote {
  double malicious_conf = -1.0;
  int malicious_view = -1;
  double benign_conf = -1.0;
  int benign_view = -1;
};

struct MergeOutcome {
  std::vector<PseudoLabel> accepted;
  std::size_t conflicts_resolved = 0;
  std::size_t conflicts_tied = 0;
};

// Unions the per-view selections. A key picked with opposite labels goes to
// the more confident view; equal confidence leaves it unlabeled.
MergeOutcome merge(const std::vector<BatchSelection>& selections,
                   const std::vector<std::vector<double>>& probability_by_sample, bool supervised, int iteration) {
  std::map<std::size_t, Vote> votes;
  for (std::size_t v = 0; v < selections.size(); ++v) {
    const auto view = static_cast<int>(v);
    for (auto s : selections[v].malicious) {
      auto& vote = votes[s];
      const double conf = probability_by_sample[v][s];
      if (conf > vote.malicious_conf) {
        vote.malicious_conf = conf;
        vote.malicious_view = view;
      }
    }
    for (auto s : selections[v].benign) {
      auto& vote = votes[s];
      const double conf = 1.0 - probability_by_sample[v][s];
      if (conf > vote.benign_conf) {
        vote.benign_conf = conf;
        vote.benign_view = view;
      }
    }
  }
  MergeOutcome out;
  for (const auto& [sample, vote] : votes) {
    const bool mal = vote.malicious_view >= 0, ben = vote.benign_view >= 0;
    if (mal && ben) {
      if (vote.malicious_conf == vote.benign_conf) {
        ++out.conflicts_tied;
        continue;
      }
      ++out.conflicts_resolved;
    }
    const bool pick_mal = mal && (!ben || vote.malicious_conf > vote.benign_conf);
    out.accepted.push_back(PseudoLabel{sample, pick_mal ? kMalicious : kBenign,
                                       LabelSource{supervised, pick_mal ? vote.malicious_view : vote.benign_view},
                                       iteration, pick_mal ? vote.malicious_conf : vote.benign_conf});
  }
  return out;
}

void apply(const MergeOutcome& merged, LabeledPool& labeled, UnlabeledPool& unlabeled, RoundRecord& record) {
  std::vector<std::size_t> taken;
  taken.reserve(merged.accepted.size());
  for (const auto& e : merged.accepted) {
    labeled.add(e);
    taken.push_back(e.sample);
    (e.label == kMalicious ? record.added_malicious : record.added_benign) += 1;
  }
  std::sort(taken.begin(), taken.end());
  UnlabeledPool rest;
  rest.reserve(unlabeled.size() - taken.size());
  std::set_difference(unlabeled.begin(), unlabeled.end(), taken.begin(), taken.end(), std::back_inserter(rest));
  unlabeled = std::move(rest);
  record.unlabeled_after = unlabeled.size();
  record.conflicts_resolved = merged.conflicts_resolved;
  record.conflicts_tied = merged.conflicts_tied;
}

std::unique_ptr<BaggedTreeClassifier> fit_view(const LabeledPool& labeled, const SampleTable& samples, std::size_t view,
                                               const CoTrainConfig& config, int stream) {
  const Matrix& source = samples.views[view];
  Matrix x(static_cast<Eigen::Index>(labeled.size()), source.cols());
  std::vector<int> y;
  y.reserve(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto& e = labeled.entries()[i];
    x.row(static_cast<Eigen::Index>(i)) = source.row(static_cast<Eigen::Index>(e.sample));
    y.push_back(e.label);
  }
  BaggedTreeParams params = config.classifier;
  params.seed = derive_seed(config.classifier.seed, static_cast<std::uint64_t>(stream) * 8 + view);
  auto model = std::make_unique<BaggedTreeClassifier>(params);
  model->fit(x, y);
  return model;
}

void check_pools(const LabeledPool& labeled, const UnlabeledPool& unlabeled) {
  for (auto s : unlabeled) {
    if (labeled.contains(s)) throw IntegrityError("sample present in both LD and UD");
  }
}

}  // namespace

void CoTrainConfig::validate() const {
  if (!(batch_thres >= 0.5 && batch_thres < 1.0)) throw ConfigError("batch_thres must lie in [0.5, 1)");
  if (!(batch_prob > 0.0 && batch_prob <= 1.0)) throw ConfigError("batch_prob must lie in (0, 1]");
  if (max_iterations <= 0) throw ConfigError("max_iterations must be positive");
}

json CoTrainConfig::to_json() const {
  return json{{"batch_thres", batch_thres},
              {"batch_prob", batch_prob},
              {"max_iterations", max_iterations},
              {"classifier", classifier.to_json()}};
}

CoTrainConfig CoTrainConfig::from_json(const json& j) {
  CoTrainConfig c;
  try {
    c.batch_thres = j.value("batch_thres", c.batch_thres);
    c.batch_prob = j.value("batch_prob", c.batch_prob);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    if (auto it = j.find("classifier"); it != j.end()) c.classifier = BaggedTreeParams::from_json(*it);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cotrain config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string LabelSource::name() const {
  static constexpr const char* kSeed[] = {"USM", "UBM"};
  static constexpr const char* kRound[] = {"SM", "BM"};
  if (view == 0 || view == 1) return supervised ? kRound[view] : kSeed[view];
  return std::string(supervised ? "S" : "U") + "V" + std::to_string(view);
}

void SampleTable::validate() const {
  if (views.empty()) throw InputError("sample table has no views");
  for (const auto& v : views) {
    if (static_cast<std::size_t>(v.rows()) != keys.size()) throw DimensionError("view rows do not match key count");
  }
}

void LabeledPool::add(PseudoLabel entry) {
  if (index_.contains(entry.sample)) throw IntegrityError("sample already pseudo-labeled");
  index_.emplace(entry.sample, entries_.size());
  entries_.push_back(entry);
}

std::size_t LabeledPool::count(int label) const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [&](const PseudoLabel& e) { return e.label == label; }));
}

std::size_t batch_count(double batch_prob, std::size_t n) {
  if (n == 0) return 0;
  // Guard against 0.3 * 10 evaluating to 2.9999...
  const auto k = static_cast<std::size_t>(std::floor(batch_prob * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

BatchSelection select_batch(std::span<const std::size_t> pool, std::span<const double> probability,
                            const CoTrainConfig& config) {
  if (pool.size() != probability.size()) throw DimensionError("one probability per pool entry required");
  std::vector<std::size_t> mal, ben;  // positions into pool
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (probability[i] > config.batch_thres) mal.push_back(i);
    if (probability[i] < 1.0 - config.batch_thres) ben.push_back(i);
  }
  std::sort(mal.begin(), mal.end(), [&](std::size_t a, std::size_t b) {
    return probability[a] > probability[b] || (probability[a] == probability[b] && pool[a] < pool[b]);
  });
  std::sort(ben.begin(), ben.end(), [&](std::size_t a, std::size_t b) {
    return probability[a] < probability[b] || (probability[a] == probability[b] && pool[a] < pool[b]);
  });
  BatchSelection sel;
  sel.malicious_candidates = mal.size();
  sel.benign_candidates = ben.size();
  for (std::size_t i = 0; i < batch_count(config.batch_prob, mal.size()); ++i) sel.malicious.push_back(pool[mal[i]]);
  for (std::size_t i = 0; i < batch_count(config.batch_prob, ben.size()); ++i) sel.benign.push_back(pool[ben[i]]);
  return sel;
}

SeedResult seed_pools(const UnlabeledPool& unlabeled, std::span<const std::vector<double>> anomaly_probability,
                      const CoTrainConfig& config) {
  config.validate();
  if (anomaly_probability.empty()) throw InputError("seeding needs at least one view");
  SeedResult out;
  out.unlabeled = unlabeled;
  out.record.unlabeled_before = unlabeled.size();

  std::vector<BatchSelection> selections;
  std::vector<std::vector<double>> by_sample(anomaly_probability.begin(), anomaly_probability.end());
  bool any_above = false;
  for (const auto& probs : anomaly_probability) {
    std::vector<double> aligned;
    aligned.reserve(unlabeled.size());
    for (auto s : unlabeled) {
      if (s >= probs.size()) throw DimensionError("anomaly probability missing for a UD sample");
      aligned.push_back(probs[s]);
    }
    selections.push_back(select_batch(unlabeled, aligned, config));
    any_above = any_above || selections.back().malicious_candidates > 0;
    const auto& sel = selections.back();
    out.record.views.push_back(ViewRoundStats{sel.malicious_candidates, sel.benign_candidates, sel.malicious.size(),
                                              sel.benign.size(), 0});
  }
  if (!any_above) {
    throw ColdStartError("no unlabeled sample has an anomaly probability above batch_thres=" +
                         std::to_string(config.batch_thres) + " in any view; lower batch_thres");
  }
  apply(merge(selections, by_sample, false, 0), out.labeled, out.unlabeled, out.record);
  return out;
}

RoundResult cotrain_round(LabeledPool& labeled, UnlabeledPool& unlabeled, const SampleTable& samples,
                          const CoTrainConfig& config, int iteration,
                          const std::vector<std::vector<double>>* previous_predictions) {
  samples.validate();
  if (labeled.count(kMalicious) == 0 || labeled.count(kBenign) == 0) {
    throw ClassStarvationError("LD holds a single class (" + std::to_string(labeled.count(kMalicious)) +
                               " malicious, " + std::to_string(labeled.count(kBenign)) + " benign) at iteration " +
                               std::to_string(iteration));
  }
  check_pools(labeled, unlabeled);
  RoundResult out;
  out.record.iteration = iteration;
  out.record.labeled_before = labeled.size();
  out.record.unlabeled_before = unlabeled.size();

  std::vector<BatchSelection> selections;
  std::vector<std::vector<int>> hard(samples.view_count());
  for (std::size_t v = 0; v < samples.view_count(); ++v) {
    out.models.push_back(fit_view(labeled, samples, v, config, iteration));
    std::vector<double> by_sample(samples.size(), kNaN);
    std::vector<double> aligned;
    aligned.reserve(unlabeled.size());
    ViewRoundStats stats;
    for (auto s : unlabeled) {
      const auto row = samples.views[v].row(static_cast<Eigen::Index>(s));
      const double p = out.models.back()->malicious_probability(
          std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
      by_sample[s] = p;
      aligned.push_back(p);
      hard[v].push_back(p > 0.5 ? kMalicious : kBenign);
      if (previous_predictions && v < previous_predictions->size()) {
        const double before = (*previous_predictions)[v][s];
        if (!std::isnan(before) && (before > 0.5) != (p > 0.5)) ++stats.label_flips;
      }
    }
    selections.push_back(select_batch(unlabeled, aligned, config));
    stats.malicious_candidates = selections.back().malicious_candidates;
    stats.benign_candidates = selections.back().benign_candidates;
    stats.malicious_selected = selections.back().malicious.size();
    stats.benign_selected = selections.back().benign.size();
    out.record.views.push_back(stats);
    out.predictions.push_back(std::move(by_sample));
  }
  if (samples.view_count() >= 2) {
    for (std::size_t i = 0; i < unlabeled.size(); ++i) {
      if (hard[0][i] != hard[1][i]) ++out.record.view_disagreements;
    }
  }
  apply(merge(selections, out.predictions, true, iteration), labeled, unlabeled, out.record);
  out.progress = out.record.unlabeled_after < out.record.unlabeled_before;
  return out;
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::kExhausted: return "exhausted";
    case Termination::kNoProgress: return "no_progress";
    case Termination::kMaxIterations: return "max_iterations";
  }
  return "?";
}

CoTrainResult run_cotraining(const SampleTable& samples, const UnlabeledPool& unlabeled,
                             std::span<const std::vector<double>> anomaly_probability, const CoTrainConfig& config) {
  samples.validate();
  config.validate();
  if (anomaly_probability.size() != samples.view_count()) {
    throw DimensionError("one anomaly-probability vector per view required");
  }
  if (!std::is_sorted(unlabeled.begin(), unlabeled.end()) ||
      std::adjacent_find(unlabeled.begin(), unlabeled.end()) != unlabeled.end()) {
    throw InputError("UD must hold ascending, distinct sample indices");
  }
  CoTrainResult out;
  SeedResult seed = seed_pools(unlabeled, anomaly_probability, config);
  out.labeled = std::move(seed.labeled);
  out.residual = std::move(seed.unlabeled);
  out.audit.push_back(seed.record);

  std::vector<std::vector<double>> previous;
  out.termination = Termination::kExhausted;
  while (!out.residual.empty()) {
    if (out.iterations >= config.max_iterations) {
      out.termination = Termination::kMaxIterations;
      out.warnings.push_back("stopped after max_iterations=" + std::to_string(config.max_iterations) + " with " +
                             std::to_string(out.residual.size()) + " samples unlabeled");
      break;
    }
    ++out.iterations;
    RoundResult round = cotrain_round(out.labeled, out.residual, samples, config, out.iterations,
                                      previous.empty() ? nullptr : &previous);
    out.audit.push_back(round.record);
    previous = std::move(round.predictions);
    if (!round.progress) {
      out.termination = Termination::kNoProgress;
      out.warnings.push_back("iteration " + std::to_string(out.iterations) + " selected no samples at batch_thres=" +
                             std::to_string(config.batch_thres) + "; " + std::to_string(out.residual.size()) +
                             " samples left unlabeled");
      break;
    }
  }

  if (out.labeled.count(kMalicious) == 0 || out.labeled.count(kBenign) == 0) {
    throw ClassStarvationError("final LD holds a single class (" + std::to_string(out.labeled.count(kMalicious)) +
                               " malicious, " + std::to_string(out.labeled.count(kBenign)) + " benign)");
  }
  out.training_probabilities.resize(samples.view_count());
  for (std::size_t v = 0; v < samples.view_count(); ++v) {
    auto model = fit_view(out.labeled, samples, v, config, out.iterations + 1);
    auto& probs = out.training_probabilities[v];
    probs.assign(samples.size(), kNaN);
    const auto& oob = model->oob_probabilities();
    for (std::size_t i = 0; i < out.labeled.size(); ++i) probs[out.labeled.entries()[i].sample] = oob[i];
    for (std::size_t s = 0; s < samples.size(); ++s) {
      if (!std::isnan(probs[s])) continue;
      const auto row = samples.views[v].row(static_cast<Eigen::Index>(s));
      probs[s] = model->malicious_probability(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    }
    out.models.push_back(std::move(model));
  }
  return out;
}

json RoundRecord::to_json() const {
  json views_json = json::array();
  for (const auto& v : views) {
    views_json.push_back(json{{"malicious_candidates", v.malicious_candidates},
                              {"benign_candidates", v.benign_candidates},
                              {"malicious_selected", v.malicious_selected},
                              {"benign_selected", v.benign_selected},
                              {"label_flips", v.label_flips}});
  }
  return json{{"iteration", iteration},
              {"labeled_before", labeled_before},
              {"unlabeled_before", unlabeled_before},
              {"unlabeled_after", unlabeled_after},
              {"added_malicious", added_malicious},
              {"added_benign", added_benign},
              {"conflicts_resolved", conflicts_resolved},
              {"conflicts_tied", conflicts_tied},
              {"view_disagreements", view_disagreements},
              {"views", views_json}};
}

json audit_to_json(const CoTrainResult& result, const SampleTable& samples) {
  json rounds = json::array();
  for (const auto& r : result.audit) rounds.push_back(r.to_json());
  json labels = json::array();
  for (const auto& e : result.labeled.entries()) {
    labels.push_back(json{{"key", samples.keys[e.sample]},
                          {"label", e.label == kMalicious ? "malicious" : "benign"},
                          {"source", e.source.name()},
                          {"iteration", e.iteration},
                          {"confidence", e.confidence}});
  }
  std::vector<std::string> residual;
  for (auto s : result.residual) residual.push_back(samples.keys[s]);
  return json{{"termination", to_string(result.termination)},
              {"iterations", result.iterations},
              {"warnings", result.warnings},
              {"rounds", rounds},
              {"pseudo_labels", labels},
              {"residual", residual}};
}

}  // namespace aptmcl
