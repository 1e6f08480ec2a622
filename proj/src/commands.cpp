#include "aptmcl/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "aptmcl/errors.hpp"

namespace aptmcl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kArtifactVersion = 1;

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump() << '\n';
}

// Loads an artifact and checks its format tag and config hash.
json read_artifact(const fs::path& path, std::string_view format, const PipelineConfig& config,
                   std::string_view producer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(path.string() + " not found; run '" + std::string(producer) + "' first");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ArtifactError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != format || j.value("version", 0) != kArtifactVersion) {
    throw ArtifactError(path.string() + " is not a " + std::string(format) + " v1 artifact");
  }
  const auto hash = j.value("config_hash", "");
  if (hash != config.hash()) {
    throw ArtifactError(path.string() + " was produced with config " + hash + " but the current config is " +
                        config.hash() + "; rerun '" + std::string(producer) + "'");
  }
  return j;
}

json artifact(std::string_view format, const PipelineConfig& config) {
  return json{{"format", format}, {"version", kArtifactVersion}, {"config_hash", config.hash()}};
}

ProvenanceGraph load_checked_graph(const PipelineConfig& config) {
  read_artifact(config.paths.graph_dir / "manifest.json", "aptmcl.graph", config, "ingest");
  return load_graph(config.paths.graph_dir);
}

std::map<std::string, int> load_truth(const PipelineConfig& config) {
  std::ifstream in(config.paths.ground_truth);
  if (!in) {
    throw ArtifactError("ground truth " + config.paths.ground_truth.string() + " not found; run 'synth' first");
  }
  return read_ground_truth(in);
}

struct TrainedModels {
  DataSplit split;
  std::vector<TrainedView> views;
};

TrainedModels load_trained(const PipelineConfig& config) {
  const json j = read_artifact(config.paths.model_dir / "train.json", "aptmcl.train", config, "train");
  TrainedModels m;
  try {
    const auto& s = j.at("split");
    m.split.benign_train = s.at("benign_train").get<std::vector<std::string>>();
    m.split.benign_test = s.at("benign_test").get<std::vector<std::string>>();
    m.split.malicious_train = s.at("malicious_train").get<std::vector<std::string>>();
    m.split.malicious_test = s.at("malicious_test").get<std::vector<std::string>>();
    for (const auto& v : j.at("views")) {
      m.views.push_back(TrainedView{parse_view(v.at("view").get<std::string>()),
                                    EncoderModel::from_json(v.at("encoder")),
                                    IsolationForest::from_json(v.at("forest"))});
    }
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("train artifact: ") + e.what());
  }
  return m;
}

std::vector<std::string> sorted_union(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out;
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// Views of the trained bundle in the order the selection asks for.
std::vector<const TrainedView*> pick_views(const TrainedModels& m, const PipelineConfig& config) {
  std::vector<const TrainedView*> out;
  for (View v : selected_views(config.views)) {
    const TrainedView* found = nullptr;
    for (const auto& tv : m.views) {
      if (tv.view == v) found = &tv;
    }
    if (!found) {
      throw ArtifactError("no trained " + std::string(to_string(v)) + " model; run 'train' with --view " +
                          std::string(to_string(config.views)));
    }
    out.push_back(found);
  }
  return out;
}

}  // namespace

fs::path report_dir(const PipelineConfig& config) {
  if (const char* env = std::getenv("APTMCL_REPORT_DIR"); env != nullptr && *env != '\0') return env;
  return config.paths.report_dir;
}

void cmd_synth(const PipelineConfig& config) {
  const ScenarioData data = generate_scenario(config.scenario);
  for (const auto* p : {&config.paths.events, &config.paths.ground_truth}) {
    if (p->has_parent_path()) fs::create_directories(p->parent_path());
  }
  std::ofstream events(config.paths.events, std::ios::binary);
  std::ofstream truth(config.paths.ground_truth, std::ios::binary);
  if (!events || !truth) throw InputError("cannot write scenario output");
  write_events(events, data.events);
  write_ground_truth(data, truth);
  std::cout << "synth: " << data.events.size() << " events, " << data.malicious_keys().size() << " of "
            << data.processes.size() << " processes malicious -> " << config.paths.events.string() << '\n';
}

void cmd_ingest(const PipelineConfig& config) {
  if (!fs::exists(config.paths.events)) {
    throw ArtifactError("event file " + config.paths.events.string() + " not found; run 'synth' first");
  }
  const auto events = read_events(config.paths.events);
  const ProvenanceGraph graph = build_graph(events);
  save_graph(graph, config.paths.graph_dir);
  json manifest = artifact("aptmcl.graph", config);
  manifest["events"] = events.size();
  manifest["nodes"] = graph.node_count();
  manifest["edges"] = graph.edge_count();
  write_json(config.paths.graph_dir / "manifest.json", manifest);
  std::cout << "ingest: " << events.size() << " events -> " << graph.node_count() << " nodes, "
            << graph.edge_count() << " edges\n";
}

void cmd_train(const PipelineConfig& config) {
  const ProvenanceGraph graph = load_checked_graph(config);
  const auto truth = load_truth(config);
  std::vector<std::string> benign, malicious;
  for (const auto& [k, label] : truth) (label == kMalicious ? malicious : benign).push_back(k);
  const DataSplit parts = split(benign, malicious, config.split);

  json j = artifact("aptmcl.train", config);
  j["split"] = json{{"benign_train", parts.benign_train},
                    {"benign_test", parts.benign_test},
                    {"malicious_train", parts.malicious_train},
                    {"malicious_test", parts.malicious_test}};
  j["views"] = json::array();
  for (View v : selected_views(config.views)) {
    const TrainedView tv = train_view(graph, v, config, parts.benign_train);
    const auto& loss = tv.encoder.loss_history;
    std::cout << "train: " << to_string(v) << " encoder loss " << (loss.empty() ? 0.0 : loss.front()) << " -> "
              << (loss.empty() ? 0.0 : loss.back()) << '\n';
    j["views"].push_back(json{{"view", to_string(v)}, {"encoder", tv.encoder.to_json()}, {"forest", tv.forest.to_json()}});
  }
  write_json(config.paths.model_dir / "train.json", j);
}

void cmd_cotrain(const PipelineConfig& config) {
  const ProvenanceGraph graph = load_checked_graph(config);
  const TrainedModels m = load_trained(config);
  const auto views = pick_views(m, config);
  std::vector<EmbeddingTable> tables;
  tables.reserve(views.size());
  std::vector<const EmbeddingTable*> ptrs;
  std::vector<View> names;
  for (const auto* tv : views) {
    tables.emplace_back(*tv, graph, config.sensitivity);
    names.push_back(tv->view);
  }
  for (const auto& t : tables) ptrs.push_back(&t);
  const auto unlabeled = sorted_union(m.split.benign_train, m.split.malicious_train);
  const Detector d = fit_detector(ptrs, names, unlabeled, config.cotrain);

  json j = artifact("aptmcl.cotrain", config);
  j["detector"] = d.to_json();
  write_json(config.paths.model_dir / "cotrain.json", j);
  json audit = artifact("aptmcl.audit", config);
  audit["audit"] = d.audit;
  write_json(config.paths.model_dir / "audit.json", audit);
  for (const auto& a : d.annotations) std::cout << "cotrain: " << a << '\n';
  std::cout << "cotrain: " << (d.fallback ? "fell back to the anomaly detectors" : "sub-models trained") << '\n';
}

void cmd_detect(const PipelineConfig& config) {
  const ProvenanceGraph graph = load_checked_graph(config);
  const TrainedModels m = load_trained(config);
  const json cj = read_artifact(config.paths.model_dir / "cotrain.json", "aptmcl.cotrain", config, "cotrain");
  const Detector d = Detector::from_json(cj.at("detector"));

  std::vector<EmbeddingTable> tables;
  tables.reserve(d.views.size());
  std::vector<const EmbeddingTable*> ptrs;
  for (View v : d.views) {
    const TrainedView* tv = nullptr;
    for (const auto& t : m.views) {
      if (t.view == v) tv = &t;
    }
    if (!tv) throw ArtifactError("cotrain artifact needs a " + std::string(to_string(v)) + " model; run 'train' first");
    tables.emplace_back(*tv, graph, config.sensitivity);
  }
  for (const auto& t : tables) ptrs.push_back(&t);

  const auto train_keys = sorted_union(m.split.benign_train, m.split.malicious_train);
  const auto test_keys = sorted_union(m.split.benign_test, m.split.malicious_test);
  auto rows = detect(d, ptrs, test_keys, config.strategy);
  auto train_rows = detect(d, ptrs, train_keys, config.strategy);
  for (auto& r : train_rows) r.partition = "train";
  rows.insert(rows.end(), train_rows.begin(), train_rows.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  attach_evidence(rows, graph, config.sensitivity);

  const fs::path dir = report_dir(config);
  fs::create_directories(dir);
  std::ofstream out(dir / "detections.jsonl", std::ios::binary);
  if (!out) throw InputError("cannot write " + (dir / "detections.jsonl").string());
  write_detections(rows, d.views, out);
  std::size_t flagged = 0;
  for (const auto& r : rows) flagged += r.verdict == kMalicious ? 1 : 0;
  std::cout << "detect: " << flagged << " of " << rows.size() << " processes flagged -> "
            << (dir / "detections.jsonl").string() << '\n';
}

void cmd_eval(const PipelineConfig& config, bool experiment) {
  const fs::path dir = report_dir(config);
  fs::create_directories(dir);
  const auto truth = load_truth(config);
  if (experiment) {
    const ProvenanceGraph graph = load_checked_graph(config);
    const ExperimentReport report = run_experiment(config, graph, truth);
    write_json(dir / "experiment.json", report.to_json());
    std::ofstream(dir / "experiment.txt", std::ios::binary) << report.to_table();
    std::cout << report.to_table();
    return;
  }
  std::ifstream in(dir / "detections.jsonl", std::ios::binary);
  if (!in) throw ArtifactError((dir / "detections.jsonl").string() + " not found; run 'detect' first");
  std::map<std::string, int> pred, test_truth;
  std::string line, strategy = "-";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.at("partition") != "test") continue;
    strategy = j.at("strategy").get<std::string>();
    const auto key = j.at("key").get<std::string>();
    pred[key] = j.at("verdict") == "malicious" ? kMalicious : kBenign;
    auto it = truth.find(key);
    if (it == truth.end()) throw InputError("process '" + key + "' has no ground-truth label");
    test_truth[key] = it->second;
  }
  const MetricsReport m = compute_metrics(pred, test_truth);
  json j = artifact("aptmcl.metrics", config);
  j["strategy"] = strategy;
  j["metrics"] = m.to_json();
  write_json(dir / "metrics.json", j);
  ExperimentReport single;
  single.rows.push_back(ExperimentRow{"detect", strategy, config.cotrain.batch_thres, m, {}});
  std::ofstream(dir / "metrics.txt", std::ios::binary) << single.to_table();
  std::cout << single.to_table();
}

}  // namespace aptmcl
