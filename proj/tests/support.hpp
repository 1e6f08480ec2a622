#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "aptmcl/cotrain.hpp"
#include "aptmcl/features.hpp"
#include "aptmcl/gnn.hpp"
#include "aptmcl/pipeline.hpp"
#include "aptmcl/provenance.hpp"

namespace testsupport {

using namespace aptmcl;

// Random event stream over a few entities. Attribute values come from small
// pools whose sensitivity is known up front, so the oracles below never call
// into the library's matching code.
struct RandomCase {
  std::vector<EventRecord> events;
  SensitivityConfig config;
  std::set<std::string> sensitive_paths;     // file paths / exes matching a pattern
  std::set<std::string> sensitive_commands;  // command lines naming an instruction
};

RandomCase random_case(std::mt19937_64& rng, int n_events);

// Independent edge index (1..21) from a hand-written list.
int oracle_edge_index(NodeType object_type, const std::string& action);

std::map<std::string, StructuralFeature> oracle_structural(const std::vector<EventRecord>& events);
std::map<std::string, BehavioralFeature> oracle_behavioral(const RandomCase& c);

// Empty when every node of the case matches both oracles, else a description
// of the first mismatch.
std::optional<std::string> check_features(const RandomCase& c);

// Small graph with random features for the gradient check.
struct GradCase {
  ProvenanceGraph graph;
  Matrix features;
  std::vector<int> labels;
  EncoderModel model;
};
GradCase gradient_case(std::uint64_t seed, int n_nodes);

// Largest relative error between analytic and central-difference gradients
// over every scalar parameter, with step h.
double max_gradient_error(const GradCase& c, double h);

// Runs co-training on random embeddings and probabilities and checks pool
// conservation, disjointness, strict |UD| decrease per productive round and
// the iteration cap. Empty on success; cold-start and starvation errors are
// legal outcomes and count as success.
std::optional<std::string> check_cotrain_run(std::uint64_t seed);

// 251 standard normal 2-D points followed by 5 at radius 10 in random
// directions. Rows 251..255 are the planted ones.
Matrix planted_cloud(std::uint64_t seed);

// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

// A small mixed scenario whose artifacts all live under dir.
PipelineConfig small_config(const std::filesystem::path& dir);

// Writes config.json into dir with paths relative to it; returns its path.
std::filesystem::path write_config(const PipelineConfig& config, const std::filesystem::path& dir);

std::string slurp(const std::filesystem::path& path);

}  // namespace testsupport
