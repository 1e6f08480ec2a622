#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace aptmcl {

enum class NodeType : std::uint8_t { kProcess = 0, kFile = 1, kRegistry = 2, kSocket = 3 };

inline constexpr int kNumNodeTypes = 4;
inline constexpr std::array<NodeType, kNumNodeTypes> kAllNodeTypes = {
    NodeType::kProcess, NodeType::kFile, NodeType::kRegistry, NodeType::kSocket};

std::string_view to_string(NodeType type);
// Throws SchemaError on anything but "process", "file", "registry", "socket".
NodeType parse_node_type(std::string_view name);

// One monitored (subject type, object type, action) combination. Indices run
// 1..21 in the canonical order: process-process launch; process-file
// create..open; process-registry open..delete; process-socket send..reconnect.
struct EdgeType {
  int index;
  NodeType src;
  NodeType dst;
  std::string_view action;
};

inline constexpr int kNumEdgeTypes = 21;

const std::array<EdgeType, kNumEdgeTypes>& edge_types();
const EdgeType& edge_type(int index);
int edge_type_index(NodeType subject_type, NodeType object_type, std::string_view action);
std::optional<int> find_edge_type(NodeType subject_type, NodeType object_type,
                                  std::string_view action);

using Attrs = std::map<std::string, std::string>;

struct EventRecord {
  std::int64_t timestamp = 0;
  std::string subject_id;
  NodeType subject_type = NodeType::kProcess;
  std::string action;
  std::string object_id;
  NodeType object_type = NodeType::kProcess;
  // Attributes of the object entity (path, addr, key, cmd, exe, hash, ...).
  Attrs attrs;
  // Optional attributes of the subject process, carried as "sub_attrs".
  Attrs subject_attrs;

  int edge_type() const { return edge_type_index(subject_type, object_type, action); }
};

// Parses one JSON-Lines event. line_no is only used in error messages.
EventRecord parse_event(std::string_view line, std::size_t line_no = 1);
std::string format_event(const EventRecord& event);

std::vector<EventRecord> read_events(std::istream& in);
std::vector<EventRecord> read_events(const std::filesystem::path& path);
void write_events(std::ostream& out, std::span<const EventRecord> events);

struct Node {
  std::string key;
  NodeType type;
  Attrs attrs;

  bool operator==(const Node&) const = default;
};

struct Edge {
  std::uint32_t src;
  std::uint32_t dst;
  int edge_type;
  // Earliest timestamp among the collapsed events.
  std::int64_t timestamp;
  std::uint64_t multiplicity;

  bool operator==(const Edge&) const = default;
};

// Immutable typed multigraph. Nodes are stored in ascending key order and
// edges in ascending (src, dst, edge_type) order, so two graphs built from
// the same event multiset compare equal.
class ProvenanceGraph {
 public:
  ProvenanceGraph() = default;

  // Validates endpoints, type pairs and key uniqueness; sorts both tables.
  static ProvenanceGraph from_parts(std::vector<Node> nodes, std::vector<Edge> edges);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  bool empty() const { return nodes_.empty(); }

  const Node& node(std::size_t index) const { return nodes_[index]; }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const Edge> edges() const { return edges_; }

  std::optional<std::size_t> find(std::string_view key) const;
  // Throws LookupError for unknown keys.
  std::size_t index_of(std::string_view key) const;

  std::span<const std::uint32_t> out_edges(std::size_t v) const;
  std::span<const std::uint32_t> in_edges(std::size_t v) const;
  // Distinct in- and out-neighbours, ascending, excluding v itself.
  std::span<const std::uint32_t> neighbors(std::size_t v) const;

  std::vector<std::size_t> nodes_of_type(NodeType type) const;
  std::uint64_t total_multiplicity() const;

  bool operator==(const ProvenanceGraph& other) const {
    return nodes_ == other.nodes_ && edges_ == other.edges_;
  }

 private:
  void index();

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::unordered_map<std::string, std::size_t> key_index_;
  std::vector<std::uint32_t> out_offsets_, out_list_;
  std::vector<std::uint32_t> in_offsets_, in_list_;
  std::vector<std::uint32_t> nbr_offsets_, nbr_list_;
};

// Single-writer accumulator; duplicate (src, dst, edge type) events collapse
// into one edge with multiplicity.
class GraphBuilder {
 public:
  void add(const EventRecord& event);
  ProvenanceGraph build() const;
  std::size_t event_count() const { return event_count_; }

 private:
  struct PendingNode {
    NodeType type;
    // attr name -> (timestamp, value); the earliest (timestamp, value) wins
    std::map<std::string, std::pair<std::int64_t, std::string>> attrs;
  };
  struct EdgeKey {
    std::string src, dst;
    int edge_type;
    auto operator<=>(const EdgeKey&) const = default;
  };
  struct EdgeAccum {
    std::int64_t timestamp;
    std::uint64_t multiplicity;
  };

  void touch(const std::string& key, NodeType type, const Attrs& attrs, std::int64_t ts);

  std::map<std::string, PendingNode> nodes_;
  std::map<EdgeKey, EdgeAccum> edges_;
  std::size_t event_count_ = 0;
};

ProvenanceGraph build_graph(std::span<const EventRecord> events);

// Two-file JSON-Lines persistence: nodes.jsonl and edges.jsonl under dir.
void save_graph(const ProvenanceGraph& graph, const std::filesystem::path& dir);
ProvenanceGraph load_graph(const std::filesystem::path& dir);
void write_graph(const ProvenanceGraph& graph, std::ostream& nodes_out, std::ostream& edges_out);
ProvenanceGraph read_graph(std::istream& nodes_in, std::istream& edges_in);

}  // namespace aptmcl
