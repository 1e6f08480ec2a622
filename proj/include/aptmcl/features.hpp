#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "aptmcl/matrix.hpp"
#include "aptmcl/provenance.hpp"
#include "json.hpp"

namespace aptmcl {

inline constexpr int kStructuralDim = 2 * kNumEdgeTypes;  // 42
inline constexpr int kBehavioralDim = 20;

// Entries 0..20 are incoming counts by edge type 1..21, entries 21..41 the
// outgoing counts. Counts include edge multiplicity.
using StructuralFeature = std::array<std::uint64_t, kStructuralDim>;

// Behavioral label positions. Semantics of each label, evaluated over the
// node's incident edges and the attrs of the entities at the other end:
//
//   PL0  node is a process
//   PL1  process has any edge to a socket
//   PL2  process reads a network file
//   PL3  process writes or deletes a network file
//   PL4  process launches a child whose "exe" equals the "path" of a network file
//   PL5  process touches a file whose "exists" attr is "false"
//   PL6  process reads a sensitive file
//   PL7  process writes or deletes a sensitive file
//   PL8  process launches a child whose "exe" matches a sensitive file pattern
//   PL9  process launches a child whose command is a sensitive instruction
//   PL10 process modifies or deletes a registry item
//   FL0  node is a file
//   FL1  file "path" matches a sensitive file pattern
//   FL2  file is read by a process that also sends to a socket (uploaded)
//   FL3  file is written by a process that also receives from a socket
//   FL4  file "hash" is a known IoC hash
//   NL0  node is a socket
//   NL1  socket "addr" is a known IoC endpoint
//   RL0  node is a registry item
//   RL1  registry "key" is a known IoC key
//
// A "network file" is one satisfying FL3 (taint by one hop only).
enum BehavioralLabel : int {
  PL0 = 0, PL1, PL2, PL3, PL4, PL5, PL6, PL7, PL8, PL9, PL10,
  FL0, FL1, FL2, FL3, FL4,
  NL0, NL1,
  RL0, RL1,
};

using BehavioralFeature = std::array<bool, kBehavioralDim>;

std::string_view behavioral_label_name(int label);

struct SensitivityConfig {
  std::vector<std::string> sensitive_file_patterns;  // fnmatch globs
  std::vector<std::string> sensitive_instructions;   // bare command names
  std::set<std::string> ioc_addresses;
  std::set<std::string> ioc_file_hashes;
  std::set<std::string> ioc_registry_keys;

  // Throws ConfigError if any list is empty.
  void validate() const;

  bool is_sensitive_path(std::string_view path) const;
  bool is_sensitive_command(std::string_view command_line) const;

  static SensitivityConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// "C:\\Windows\\System32\\whoami.exe /all" -> "whoami"
std::string command_name(std::string_view command_line);

StructuralFeature extract_structural(const ProvenanceGraph& graph, std::string_view key);
StructuralFeature extract_structural(const ProvenanceGraph& graph, std::size_t node);

BehavioralFeature extract_behavioral(const ProvenanceGraph& graph, std::string_view key,
                                     const SensitivityConfig& config);

enum class View { kStructural, kBehavioral, kConcatenated };

std::string_view to_string(View view);
View parse_view(std::string_view name);
int view_width(View view);

struct FeatureMatrix {
  // keys[i] labels row i; rows follow the graph's ascending key order.
  std::vector<std::string> keys;
  Matrix values;
};

// kConcatenated stacks the structural columns followed by the behavioral ones.
FeatureMatrix view_matrix(const ProvenanceGraph& graph, View view, const SensitivityConfig& config);

void write_feature_matrix(const FeatureMatrix& fm, View view, std::ostream& out);
FeatureMatrix read_feature_matrix(std::istream& in);

}  // namespace aptmcl
