#include "aptmcl/provenance.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <tuple>

#include "aptmcl/errors.hpp"
#include "json.hpp"

namespace aptmcl {

using nlohmann::json;

namespace {

constexpr std::array<EdgeType, kNumEdgeTypes> kEdgeTypes = {{
    {1, NodeType::kProcess, NodeType::kProcess, "launch"},
    {2, NodeType::kProcess, NodeType::kFile, "create"},
    {3, NodeType::kProcess, NodeType::kFile, "read"},
    {4, NodeType::kProcess, NodeType::kFile, "write"},
    {5, NodeType::kProcess, NodeType::kFile, "close"},
    {6, NodeType::kProcess, NodeType::kFile, "delete"},
    {7, NodeType::kProcess, NodeType::kFile, "open"},
    {8, NodeType::kProcess, NodeType::kRegistry, "open"},
    {9, NodeType::kProcess, NodeType::kRegistry, "query"},
    {10, NodeType::kProcess, NodeType::kRegistry, "enumerate"},
    {11, NodeType::kProcess, NodeType::kRegistry, "modify"},
    {12, NodeType::kProcess, NodeType::kRegistry, "close"},
    {13, NodeType::kProcess, NodeType::kRegistry, "delete"},
    {14, NodeType::kProcess, NodeType::kSocket, "send"},
    {15, NodeType::kProcess, NodeType::kSocket, "receive"},
    {16, NodeType::kProcess, NodeType::kSocket, "retransmit"},
    {17, NodeType::kProcess, NodeType::kSocket, "copy"},
    {18, NodeType::kProcess, NodeType::kSocket, "connect"},
    {19, NodeType::kProcess, NodeType::kSocket, "disconnect"},
    {20, NodeType::kProcess, NodeType::kSocket, "accept"},
    {21, NodeType::kProcess, NodeType::kSocket, "reconnect"},
}};

Attrs parse_attrs(const json& obj, std::size_t line_no, const char* field) {
  Attrs attrs;
  if (!obj.is_object()) throw ParseError(line_no, std::string(field) + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (v.is_string()) {
      attrs[k] = v.get<std::string>();
    } else {
      attrs[k] = v.dump();
    }
  }
  return attrs;
}

template <typename T>
T required(const json& j, const char* field, std::size_t line_no) {
  auto it = j.find(field);
  if (it == j.end()) throw ParseError(line_no, std::string("missing field '") + field + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError(line_no, std::string("field '") + field + "' has the wrong type");
  }
}

}  // namespace

std::string_view to_string(NodeType type) {
  switch (type) {
    case NodeType::kProcess: return "process";
    case NodeType::kFile: return "file";
    case NodeType::kRegistry: return "registry";
    case NodeType::kSocket: return "socket";
  }
  return "?";
}

NodeType parse_node_type(std::string_view name) {
  for (NodeType t : kAllNodeTypes) {
    if (to_string(t) == name) return t;
  }
  throw SchemaError("unknown node type '" + std::string(name) + "'");
}

const std::array<EdgeType, kNumEdgeTypes>& edge_types() { return kEdgeTypes; }

const EdgeType& edge_type(int index) {
  if (index < 1 || index > kNumEdgeTypes) {
    throw SchemaError("edge type index " + std::to_string(index) + " outside 1..21");
  }
  return kEdgeTypes[static_cast<std::size_t>(index - 1)];
}

std::optional<int> find_edge_type(NodeType subject_type, NodeType object_type,
                                  std::string_view action) {
  for (const auto& et : kEdgeTypes) {
    if (et.src == subject_type && et.dst == object_type && et.action == action) return et.index;
  }
  return std::nullopt;
}

int edge_type_index(NodeType subject_type, NodeType object_type, std::string_view action) {
  if (auto idx = find_edge_type(subject_type, object_type, action)) return *idx;
  throw SchemaError("action '" + std::string(action) + "' is not valid for " +
                    std::string(to_string(subject_type)) + "-" +
                    std::string(to_string(object_type)));
}

EventRecord parse_event(std::string_view line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line_no, "event must be a JSON object");

  EventRecord ev;
  ev.timestamp = required<std::int64_t>(j, "ts", line_no);
  ev.subject_id = required<std::string>(j, "sub", line_no);
  ev.action = required<std::string>(j, "act", line_no);
  ev.object_id = required<std::string>(j, "obj", line_no);
  const auto sub_t = required<std::string>(j, "sub_t", line_no);
  const auto obj_t = required<std::string>(j, "obj_t", line_no);
  try {
    ev.subject_type = parse_node_type(sub_t);
    ev.object_type = parse_node_type(obj_t);
    if (ev.subject_type != NodeType::kProcess) {
      throw SchemaError("subject must be a process, got '" + sub_t + "'");
    }
    edge_type_index(ev.subject_type, ev.object_type, ev.action);
  } catch (const SchemaError& e) {
    throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
  }
  if (auto it = j.find("attrs"); it != j.end() && !it->is_null()) {
    ev.attrs = parse_attrs(*it, line_no, "attrs");
  }
  if (auto it = j.find("sub_attrs"); it != j.end() && !it->is_null()) {
    ev.subject_attrs = parse_attrs(*it, line_no, "sub_attrs");
  }
  return ev;
}

std::string format_event(const EventRecord& event) {
  json j;
  j["ts"] = event.timestamp;
  j["sub"] = event.subject_id;
  j["sub_t"] = to_string(event.subject_type);
  j["act"] = event.action;
  j["obj"] = event.object_id;
  j["obj_t"] = to_string(event.object_type);
  if (!event.attrs.empty()) j["attrs"] = event.attrs;
  if (!event.subject_attrs.empty()) j["sub_attrs"] = event.subject_attrs;
  return j.dump();
}

std::vector<EventRecord> read_events(std::istream& in) {
  std::vector<EventRecord> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    events.push_back(parse_event(line, line_no));
  }
  return events;
}

std::vector<EventRecord> read_events(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open event log " + path.string());
  return read_events(in);
}

void write_events(std::ostream& out, std::span<const EventRecord> events) {
  for (const auto& ev : events) out << format_event(ev) << '\n';
}

// ---------------------------------------------------------------------------

ProvenanceGraph ProvenanceGraph::from_parts(std::vector<Node> nodes, std::vector<Edge> edges) {
  ProvenanceGraph g;
  // Edges refer to positions in the caller's node vector; remap after sorting.
  std::vector<std::uint32_t> order(nodes.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return nodes[a].key < nodes[b].key; });
  std::vector<std::uint32_t> remap(nodes.size());
  g.nodes_.reserve(nodes.size());
  for (std::uint32_t pos = 0; pos < order.size(); ++pos) {
    remap[order[pos]] = pos;
    if (pos > 0 && nodes[order[pos]].key == nodes[order[pos - 1]].key) {
      throw IntegrityError("duplicate entity key '" + nodes[order[pos]].key + "'");
    }
  }
  for (auto idx : order) g.nodes_.push_back(std::move(nodes[idx]));

  for (auto& e : edges) {
    if (e.src >= remap.size() || e.dst >= remap.size()) {
      throw IntegrityError("edge endpoint outside the node table");
    }
    e.src = remap[e.src];
    e.dst = remap[e.dst];
    const auto& et = edge_type(e.edge_type);
    if (g.nodes_[e.src].type != et.src || g.nodes_[e.dst].type != et.dst) {
      throw IntegrityError("edge " + g.nodes_[e.src].key + " -> " + g.nodes_[e.dst].key +
                           " does not match the type pair of edge type " +
                           std::to_string(e.edge_type));
    }
    if (e.multiplicity == 0) throw IntegrityError("edge multiplicity must be positive");
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.src, a.dst, a.edge_type) < std::tie(b.src, b.dst, b.edge_type);
  });
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (edges[i].src == edges[i - 1].src && edges[i].dst == edges[i - 1].dst &&
        edges[i].edge_type == edges[i - 1].edge_type) {
      throw IntegrityError("duplicate edge " + g.nodes_[edges[i].src].key + " -> " +
                           g.nodes_[edges[i].dst].key);
    }
  }
  g.edges_ = std::move(edges);
  g.index();
  return g;
}

void ProvenanceGraph::index() {
  const std::size_t n = nodes_.size();
  key_index_.clear();
  key_index_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) key_index_.emplace(nodes_[i].key, i);

  auto build_csr = [n](auto&& endpoint, std::size_t count, std::vector<std::uint32_t>& offsets,
                       std::vector<std::uint32_t>& list) {
    offsets.assign(n + 1, 0);
    for (std::size_t e = 0; e < count; ++e) ++offsets[endpoint(e) + 1];
    for (std::size_t i = 0; i < n; ++i) offsets[i + 1] += offsets[i];
    list.assign(count, 0);
    std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t e = 0; e < count; ++e) list[cursor[endpoint(e)]++] = static_cast<std::uint32_t>(e);
  };
  build_csr([this](std::size_t e) { return edges_[e].src; }, edges_.size(), out_offsets_, out_list_);
  build_csr([this](std::size_t e) { return edges_[e].dst; }, edges_.size(), in_offsets_, in_list_);

  nbr_offsets_.assign(n + 1, 0);
  nbr_list_.clear();
  std::vector<std::uint32_t> scratch;
  for (std::size_t v = 0; v < n; ++v) {
    scratch.clear();
    for (auto e : out_edges(v)) scratch.push_back(edges_[e].dst);
    for (auto e : in_edges(v)) scratch.push_back(edges_[e].src);
    std::sort(scratch.begin(), scratch.end());
    scratch.erase(std::unique(scratch.begin(), scratch.end()), scratch.end());
    std::erase(scratch, static_cast<std::uint32_t>(v));
    nbr_list_.insert(nbr_list_.end(), scratch.begin(), scratch.end());
    nbr_offsets_[v + 1] = static_cast<std::uint32_t>(nbr_list_.size());
  }
}

std::optional<std::size_t> ProvenanceGraph::find(std::string_view key) const {
  auto it = key_index_.find(std::string(key));
  if (it == key_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ProvenanceGraph::index_of(std::string_view key) const {
  if (auto idx = find(key)) return *idx;
  throw LookupError("unknown entity key '" + std::string(key) + "'");
}

std::span<const std::uint32_t> ProvenanceGraph::out_edges(std::size_t v) const {
  return {out_list_.data() + out_offsets_[v], out_offsets_[v + 1] - out_offsets_[v]};
}

std::span<const std::uint32_t> ProvenanceGraph::in_edges(std::size_t v) const {
  return {in_list_.data() + in_offsets_[v], in_offsets_[v + 1] - in_offsets_[v]};
}

std::span<const std::uint32_t> ProvenanceGraph::neighbors(std::size_t v) const {
  return {nbr_list_.data() + nbr_offsets_[v], nbr_offsets_[v + 1] - nbr_offsets_[v]};
}

std::vector<std::size_t> ProvenanceGraph::nodes_of_type(NodeType type) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].type == type) out.push_back(i);
  }
  return out;
}

std::uint64_t ProvenanceGraph::total_multiplicity() const {
  std::uint64_t total = 0;
  for (const auto& e : edges_) total += e.multiplicity;
  return total;
}

// ---------------------------------------------------------------------------

void GraphBuilder::touch(const std::string& key, NodeType type, const Attrs& attrs,
                         std::int64_t ts) {
  auto [it, inserted] = nodes_.try_emplace(key, PendingNode{type, {}});
  if (!inserted && it->second.type != type) {
    throw IntegrityError("entity '" + key + "' observed as both " +
                         std::string(to_string(it->second.type)) + " and " +
                         std::string(to_string(type)));
  }
  for (const auto& [name, value] : attrs) {
    auto cand = std::make_pair(ts, value);
    auto [ait, fresh] = it->second.attrs.try_emplace(name, cand);
    if (!fresh && cand < ait->second) ait->second = std::move(cand);
  }
}

void GraphBuilder::add(const EventRecord& event) {
  const int et = edge_type_index(event.subject_type, event.object_type, event.action);
  touch(event.subject_id, event.subject_type, event.subject_attrs, event.timestamp);
  touch(event.object_id, event.object_type, event.attrs, event.timestamp);
  auto [it, inserted] = edges_.try_emplace(EdgeKey{event.subject_id, event.object_id, et},
                                           EdgeAccum{event.timestamp, 0});
  it->second.timestamp = std::min(it->second.timestamp, event.timestamp);
  ++it->second.multiplicity;
  ++event_count_;
}

ProvenanceGraph GraphBuilder::build() const {
  std::vector<Node> nodes;
  nodes.reserve(nodes_.size());
  std::unordered_map<std::string, std::uint32_t> pos;
  for (const auto& [key, pending] : nodes_) {
    Attrs attrs;
    for (const auto& [name, tv] : pending.attrs) attrs.emplace(name, tv.second);
    pos.emplace(key, static_cast<std::uint32_t>(nodes.size()));
    nodes.push_back(Node{key, pending.type, std::move(attrs)});
  }
  std::vector<Edge> edges;
  edges.reserve(edges_.size());
  for (const auto& [k, acc] : edges_) {
    edges.push_back(Edge{pos.at(k.src), pos.at(k.dst), k.edge_type, acc.timestamp, acc.multiplicity});
  }
  return ProvenanceGraph::from_parts(std::move(nodes), std::move(edges));
}

ProvenanceGraph build_graph(std::span<const EventRecord> events) {
  GraphBuilder builder;
  for (const auto& ev : events) builder.add(ev);
  return builder.build();
}

// ---------------------------------------------------------------------------

void write_graph(const ProvenanceGraph& graph, std::ostream& nodes_out, std::ostream& edges_out) {
  for (const auto& n : graph.nodes()) {
    json row;
    row["key"] = n.key;
    row["type"] = to_string(n.type);
    row["attrs"] = n.attrs;
    nodes_out << row.dump() << '\n';
  }
  for (const auto& e : graph.edges()) {
    json row;
    row["src"] = graph.node(e.src).key;
    row["dst"] = graph.node(e.dst).key;
    row["type"] = e.edge_type;
    row["ts"] = e.timestamp;
    row["mult"] = e.multiplicity;
    edges_out << row.dump() << '\n';
  }
}

ProvenanceGraph read_graph(std::istream& nodes_in, std::istream& edges_in) {
  std::vector<Node> nodes;
  std::unordered_map<std::string, std::uint32_t> pos;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(nodes_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("nodes table: ") + e.what());
    }
    Node n{required<std::string>(j, "key", line_no),
           parse_node_type(required<std::string>(j, "type", line_no)), {}};
    if (auto it = j.find("attrs"); it != j.end()) n.attrs = parse_attrs(*it, line_no, "attrs");
    if (!pos.emplace(n.key, static_cast<std::uint32_t>(nodes.size())).second) {
      throw IntegrityError("duplicate entity key '" + n.key + "' in nodes table");
    }
    nodes.push_back(std::move(n));
  }
  std::vector<Edge> edges;
  line_no = 0;
  while (std::getline(edges_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("edges table: ") + e.what());
    }
    auto lookup = [&](const std::string& key) {
      auto it = pos.find(key);
      if (it == pos.end()) throw IntegrityError("edge references unknown entity '" + key + "'");
      return it->second;
    };
    edges.push_back(Edge{lookup(required<std::string>(j, "src", line_no)),
                         lookup(required<std::string>(j, "dst", line_no)),
                         required<int>(j, "type", line_no),
                         required<std::int64_t>(j, "ts", line_no),
                         required<std::uint64_t>(j, "mult", line_no)});
  }
  return ProvenanceGraph::from_parts(std::move(nodes), std::move(edges));
}

void save_graph(const ProvenanceGraph& graph, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream nodes_out(dir / "nodes.jsonl", std::ios::binary);
  std::ofstream edges_out(dir / "edges.jsonl", std::ios::binary);
  if (!nodes_out || !edges_out) throw InputError("cannot write graph to " + dir.string());
  write_graph(graph, nodes_out, edges_out);
}

ProvenanceGraph load_graph(const std::filesystem::path& dir) {
  std::ifstream nodes_in(dir / "nodes.jsonl", std::ios::binary);
  std::ifstream edges_in(dir / "edges.jsonl", std::ios::binary);
  if (!nodes_in || !edges_in) {
    throw ArtifactError("no provenance graph under " + dir.string() + "; run 'ingest' first");
  }
  return read_graph(nodes_in, edges_in);
}

}  // namespace aptmcl
