#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "aptmcl/features.hpp"
#include "aptmcl/provenance.hpp"
#include "json.hpp"

namespace aptmcl {

// ----------------------------------------------------------------- splitting

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t rng_seed = 1;
};

struct DataSplit {
  std::vector<std::string> benign_train;     // NTS
  std::vector<std::string> benign_test;      // NES
  std::vector<std::string> malicious_train;  // MTS
  std::vector<std::string> malicious_test;   // MES
};

// Training share per class = round(train_fraction * n), half away from zero.
std::size_t train_count(double train_fraction, std::size_t n);

// Shuffles each class independently (keys are sorted first, so the caller's
// order does not matter). Throws InputError on an empty benign set.
DataSplit split(std::vector<std::string> benign, std::vector<std::string> malicious, const SplitSpec& spec);

// ------------------------------------------------------------------- metrics

struct MetricsReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  double fpr = 0.0;
  double macro_f1 = 0.0;
  // False when the denominator is zero (the metric is then reported as 0).
  bool precision_defined = true;
  bool recall_defined = true;
  bool fpr_defined = true;

  static MetricsReport from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
  nlohmann::json to_json() const;
};

// predictions / truth: key -> 1 (malicious) or 0 (benign). Key sets must match.
MetricsReport compute_metrics(const std::map<std::string, int>& predictions, const std::map<std::string, int>& truth);

// ------------------------------------------------------------------ scenarios

enum class ScenarioKind { kBenignBackground, kRansomwareBurst, kCollectionExfiltration, kMixed };

std::string_view to_string(ScenarioKind kind);
ScenarioKind parse_scenario(std::string_view name);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kMixed;
  int benign_processes = 400;    // templated top-level benign processes
  int events_per_process = 40;   // rough mean of a benign process's own events
  int ransomware_plants = -1;    // -1: default for the kind
  int exfiltration_plants = -1;  // -1: default for the kind
  std::uint64_t rng_seed = 1;

  int ransomware_count() const;
  int exfiltration_count() const;
  // Throws ConfigError below the minimum viable sizes.
  void validate() const;
  nlohmann::json to_json() const;
  static ScenarioSpec from_json(const nlohmann::json& j);
};

enum class PlantKind { kBenign, kRansomware, kExfiltration };
std::string_view to_string(PlantKind kind);

struct ScenarioData {
  std::vector<EventRecord> events;
  // Every process key with its ground truth role.
  std::map<std::string, PlantKind> processes;

  std::vector<std::string> malicious_keys() const;
  std::vector<std::string> benign_keys() const;
  std::map<std::string, int> labels() const;
};

ScenarioData generate_scenario(const ScenarioSpec& spec);

// Sensitivity lists that match the entities the generator emits.
SensitivityConfig scenario_sensitivity();

void write_ground_truth(const ScenarioData& data, std::ostream& out);
// key -> 1 (malicious) / 0 (benign)
std::map<std::string, int> read_ground_truth(std::istream& in);

}  // namespace aptmcl
