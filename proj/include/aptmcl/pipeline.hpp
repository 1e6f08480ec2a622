#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aptmcl/cotrain.hpp"
#include "aptmcl/eval.hpp"
#include "aptmcl/features.hpp"
#include "aptmcl/fusion.hpp"
#include "aptmcl/gnn.hpp"
#include "aptmcl/iforest.hpp"
#include "aptmcl/provenance.hpp"
#include "json.hpp"

namespace aptmcl {

enum class ViewSelection { kStructural, kBehavioral, kBoth };

std::string_view to_string(ViewSelection v);
ViewSelection parse_view_selection(std::string_view name);
std::vector<View> selected_views(ViewSelection v);

struct PipelinePaths {
  std::filesystem::path events = "events.jsonl";
  std::filesystem::path ground_truth = "ground_truth.jsonl";
  std::filesystem::path graph_dir = "graph";
  std::filesystem::path model_dir = "models";
  std::filesystem::path report_dir = "reports";
};

struct PipelineConfig {
  PipelinePaths paths;
  ScenarioSpec scenario;
  SensitivityConfig sensitivity = scenario_sensitivity();
  TrainConfig train;
  IsolationForestParams forest;
  CoTrainConfig cotrain;
  SplitSpec split;
  FusionStrategy strategy = FusionStrategy::kST;
  ViewSelection views = ViewSelection::kBoth;
  std::vector<double> thres_sweep = {0.5, 0.65, 0.8};

  // Derives every component seed from one master seed.
  void apply_seed(std::uint64_t seed);
  void validate() const;

  nlohmann::json to_json() const;
  // Relative paths resolve against base_dir.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

  // FNV-1a 64 over the canonical JSON of everything that shapes a model:
  // paths, the fusion strategy and the view selection are left out.
  std::string hash() const;
};

PipelineConfig load_config(const std::filesystem::path& path);

// Encoder input for one view over all graph nodes. Structural counts are
// log1p-compressed; behavioral bits pass through.
Matrix encoder_input(const ProvenanceGraph& graph, View view, const SensitivityConfig& sensitivity);

struct TrainedView {
  View view = View::kStructural;
  EncoderModel encoder;
  IsolationForest forest;
};

// Trains the encoder on the whole graph and the forest on the embeddings of
// forest_keys (benign training processes).
TrainedView train_view(const ProvenanceGraph& graph, View view, const PipelineConfig& config,
                       const std::vector<std::string>& forest_keys);

// Process embeddings for a view, keyed for lookup.
class EmbeddingTable {
 public:
  EmbeddingTable(const TrainedView& tv, const ProvenanceGraph& graph, const SensitivityConfig& sensitivity);

  Matrix rows(const std::vector<std::string>& keys) const;
  double anomaly(const std::string& key) const;

 private:
  const TrainedView* view_;
  ProcessEmbeddings emb_;
  std::map<std::string, std::size_t> index_;
};

// Supervised stage for a set of views: co-trained sub-models plus the
// meta-model, or the unsupervised fallback when co-training cannot start.
struct Detector {
  std::vector<View> views;
  std::vector<std::unique_ptr<ConfidenceClassifier>> models;  // empty when fallback
  std::optional<MetaModel> meta;
  bool fallback = false;
  std::vector<std::string> annotations;
  nlohmann::json audit;

  nlohmann::json to_json() const;
  static Detector from_json(const nlohmann::json& j);
};

Detector fit_detector(const std::vector<const EmbeddingTable*>& tables, const std::vector<View>& views,
                      const std::vector<std::string>& unlabeled_keys, const CoTrainConfig& config);

struct DetectionRow {
  std::string key;
  std::string partition;  // "test", "train" or "unlabeled"
  std::vector<double> anomaly;      // per view
  std::vector<double> probability;  // per view P(malicious) of the verdict inputs
  int verdict = kBenign;
  std::string strategy;
  std::vector<std::pair<int, std::uint64_t>> top_structural;  // (dimension, count)
  std::vector<std::string> behavioral_labels;

  nlohmann::json to_json(const std::vector<View>& views) const;
};

// Verdicts for keys. strategy matters only with two views; a fallback
// detector or an untrained meta-model turns ST into SV.
std::vector<DetectionRow> detect(const Detector& detector, const std::vector<const EmbeddingTable*>& tables,
                                 const std::vector<std::string>& keys, FusionStrategy strategy);

void attach_evidence(std::vector<DetectionRow>& rows, const ProvenanceGraph& graph,
                     const SensitivityConfig& sensitivity);

void write_detections(const std::vector<DetectionRow>& rows, const std::vector<View>& views, std::ostream& out);

// ------------------------------------------------------------ experiments

struct ExperimentRow {
  std::string variant;   // SFV, BFV, CON, APT-MCL, iForest-S, iForest-B, Supervised
  std::string strategy;  // bv/mv/sv/st or "-"
  double batch_thres = 0.0;
  MetricsReport metrics;
  std::vector<std::string> annotations;
};

struct ExperimentReport {
  std::string config_hash;
  std::size_t test_benign = 0;
  std::size_t test_malicious = 0;
  std::vector<ExperimentRow> rows;

  const ExperimentRow* find(std::string_view variant, std::string_view strategy, double thres) const;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

ExperimentReport run_experiment(const PipelineConfig& config, const ProvenanceGraph& graph,
                                const std::map<std::string, int>& truth);

}  // namespace aptmcl
