#include "aptmcl/features.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "aptmcl/errors.hpp"

namespace aptmcl {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kBehavioralDim> kLabelNames = {
    "PL0", "PL1", "PL2", "PL3", "PL4", "PL5", "PL6", "PL7", "PL8", "PL9", "PL10",
    "FL0", "FL1", "FL2", "FL3", "FL4", "NL0", "NL1", "RL0", "RL1"};

constexpr int kLaunch = 1;
constexpr int kFileRead = 3;
constexpr int kFileWrite = 4;
constexpr int kFileDelete = 6;
constexpr int kRegModify = 11;
constexpr int kRegDelete = 13;
constexpr int kSockSend = 14;
constexpr int kSockReceive = 15;

const std::string* attr(const Node& n, const char* name) {
  auto it = n.attrs.find(name);
  return it == n.attrs.end() ? nullptr : &it->second;
}

std::vector<std::string> string_list(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) return {};
  return it->get<std::vector<std::string>>();
}

// Graph-wide facts shared by every per-node evaluation.
struct BehavioralContext {
  std::vector<bool> sends;      // process has an outgoing send edge
  std::vector<bool> receives;   // process has an outgoing receive edge
  std::vector<bool> network_file;
  std::vector<bool> uploaded_file;
  std::unordered_set<std::string> network_paths;

  BehavioralContext(const ProvenanceGraph& g) {
    const std::size_t n = g.node_count();
    sends.assign(n, false);
    receives.assign(n, false);
    network_file.assign(n, false);
    uploaded_file.assign(n, false);
    for (const auto& e : g.edges()) {
      if (e.edge_type == kSockSend) sends[e.src] = true;
      if (e.edge_type == kSockReceive) receives[e.src] = true;
    }
    for (const auto& e : g.edges()) {
      if (e.edge_type == kFileWrite && receives[e.src]) network_file[e.dst] = true;
      if (e.edge_type == kFileRead && sends[e.src]) uploaded_file[e.dst] = true;
    }
    for (std::size_t v = 0; v < n; ++v) {
      if (!network_file[v]) continue;
      if (const auto* p = attr(g.node(v), "path")) network_paths.insert(*p);
    }
  }
};

BehavioralFeature evaluate(const ProvenanceGraph& g, const BehavioralContext& ctx, std::size_t v,
                           const SensitivityConfig& cfg) {
  BehavioralFeature b{};
  const Node& node = g.node(v);
  switch (node.type) {
    case NodeType::kProcess: {
      b[PL0] = true;
      for (auto ei : g.out_edges(v)) {
        const Edge& e = g.edges()[ei];
        const Node& other = g.node(e.dst);
        const int t = e.edge_type;
        if (other.type == NodeType::kSocket) b[PL1] = true;
        if (other.type == NodeType::kFile) {
          const bool modifies = t == kFileWrite || t == kFileDelete;
          const auto* path = attr(other, "path");
          const bool sensitive = path && cfg.is_sensitive_path(*path);
          if (ctx.network_file[e.dst] && t == kFileRead) b[PL2] = true;
          if (ctx.network_file[e.dst] && modifies) b[PL3] = true;
          if (const auto* ex = attr(other, "exists"); ex && *ex == "false") b[PL5] = true;
          if (sensitive && t == kFileRead) b[PL6] = true;
          if (sensitive && modifies) b[PL7] = true;
        }
        if (t == kLaunch) {
          const auto* exe = attr(other, "exe");
          if (exe && ctx.network_paths.contains(*exe)) b[PL4] = true;
          if (exe && cfg.is_sensitive_path(*exe)) b[PL8] = true;
          const auto* cmd = attr(other, "cmd");
          if (!cmd) cmd = exe;
          if (cmd && cfg.is_sensitive_command(*cmd)) b[PL9] = true;
        }
        if (t == kRegModify || t == kRegDelete) b[PL10] = true;
      }
      break;
    }
    case NodeType::kFile: {
      b[FL0] = true;
      if (const auto* p = attr(node, "path"); p && cfg.is_sensitive_path(*p)) b[FL1] = true;
      b[FL2] = ctx.uploaded_file[v];
      b[FL3] = ctx.network_file[v];
      if (const auto* h = attr(node, "hash"); h && cfg.ioc_file_hashes.contains(*h)) b[FL4] = true;
      break;
    }
    case NodeType::kSocket: {
      b[NL0] = true;
      if (const auto* a = attr(node, "addr"); a && cfg.ioc_addresses.contains(*a)) b[NL1] = true;
      break;
    }
    case NodeType::kRegistry: {
      b[RL0] = true;
      if (const auto* k = attr(node, "key"); k && cfg.ioc_registry_keys.contains(*k)) b[RL1] = true;
      break;
    }
  }
  return b;
}

void fill_structural(const ProvenanceGraph& g, Matrix& out, Eigen::Index col0) {
  for (const auto& e : g.edges()) {
    const auto m = static_cast<double>(e.multiplicity);
    out(e.dst, col0 + e.edge_type - 1) += m;
    out(e.src, col0 + kNumEdgeTypes + e.edge_type - 1) += m;
  }
}

}  // namespace

std::string_view behavioral_label_name(int label) {
  if (label < 0 || label >= kBehavioralDim) throw LookupError("no behavioral label " + std::to_string(label));
  return kLabelNames[static_cast<std::size_t>(label)];
}

std::string command_name(std::string_view command_line) {
  const auto start = command_line.find_first_not_of(" \t\"");
  if (start == std::string_view::npos) return {};
  auto token = command_line.substr(start);
  token = token.substr(0, token.find_first_of(" \t\""));
  if (auto slash = token.find_last_of("/\\"); slash != std::string_view::npos) {
    token = token.substr(slash + 1);
  }
  std::string name(token);
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (name.size() > 4 && name.ends_with(".exe")) name.resize(name.size() - 4);
  return name;
}

void SensitivityConfig::validate() const {
  if (sensitive_file_patterns.empty()) throw ConfigError("sensitivity: sensitive_file_patterns is empty");
  if (sensitive_instructions.empty()) throw ConfigError("sensitivity: sensitive_instructions is empty");
  if (ioc_addresses.empty()) throw ConfigError("sensitivity: ioc_addresses is empty");
  if (ioc_file_hashes.empty()) throw ConfigError("sensitivity: ioc_file_hashes is empty");
  if (ioc_registry_keys.empty()) throw ConfigError("sensitivity: ioc_registry_keys is empty");
}

bool SensitivityConfig::is_sensitive_path(std::string_view path) const {
  const std::string p(path);
  return std::any_of(sensitive_file_patterns.begin(), sensitive_file_patterns.end(),
                     [&](const std::string& pat) { return fnmatch(pat.c_str(), p.c_str(), 0) == 0; });
}

bool SensitivityConfig::is_sensitive_command(std::string_view command_line) const {
  const auto name = command_name(command_line);
  if (name.empty()) return false;
  return std::find(sensitive_instructions.begin(), sensitive_instructions.end(), name) !=
         sensitive_instructions.end();
}

SensitivityConfig SensitivityConfig::from_json(const json& j) {
  SensitivityConfig c;
  try {
    c.sensitive_file_patterns = string_list(j, "sensitive_file_patterns");
    c.sensitive_instructions = string_list(j, "sensitive_instructions");
    for (auto& s : c.sensitive_instructions) s = command_name(s);
    for (auto& s : string_list(j, "ioc_addresses")) c.ioc_addresses.insert(s);
    for (auto& s : string_list(j, "ioc_file_hashes")) c.ioc_file_hashes.insert(s);
    for (auto& s : string_list(j, "ioc_registry_keys")) c.ioc_registry_keys.insert(s);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sensitivity config: ") + e.what());
  }
  return c;
}

json SensitivityConfig::to_json() const {
  return json{{"sensitive_file_patterns", sensitive_file_patterns},
              {"sensitive_instructions", sensitive_instructions},
              {"ioc_addresses", ioc_addresses},
              {"ioc_file_hashes", ioc_file_hashes},
              {"ioc_registry_keys", ioc_registry_keys}};
}

StructuralFeature extract_structural(const ProvenanceGraph& graph, std::size_t node) {
  if (node >= graph.node_count()) throw LookupError("node index out of range");
  StructuralFeature s{};
  for (auto ei : graph.in_edges(node)) {
    const Edge& e = graph.edges()[ei];
    s[static_cast<std::size_t>(e.edge_type - 1)] += e.multiplicity;
  }
  for (auto ei : graph.out_edges(node)) {
    const Edge& e = graph.edges()[ei];
    s[static_cast<std::size_t>(kNumEdgeTypes + e.edge_type - 1)] += e.multiplicity;
  }
  return s;
}

StructuralFeature extract_structural(const ProvenanceGraph& graph, std::string_view key) {
  return extract_structural(graph, graph.index_of(key));
}

BehavioralFeature extract_behavioral(const ProvenanceGraph& graph, std::string_view key,
                                     const SensitivityConfig& config) {
  const auto v = graph.index_of(key);
  BehavioralContext ctx(graph);
  return evaluate(graph, ctx, v, config);
}

std::string_view to_string(View view) {
  switch (view) {
    case View::kStructural: return "structural";
    case View::kBehavioral: return "behavioral";
    case View::kConcatenated: return "concatenated";
  }
  return "?";
}

View parse_view(std::string_view name) {
  if (name == "structural") return View::kStructural;
  if (name == "behavioral") return View::kBehavioral;
  if (name == "concatenated") return View::kConcatenated;
  throw ConfigError("unknown view '" + std::string(name) + "'");
}

int view_width(View view) {
  switch (view) {
    case View::kStructural: return kStructuralDim;
    case View::kBehavioral: return kBehavioralDim;
    case View::kConcatenated: return kStructuralDim + kBehavioralDim;
  }
  return 0;
}

FeatureMatrix view_matrix(const ProvenanceGraph& graph, View view, const SensitivityConfig& config) {
  FeatureMatrix fm;
  const auto n = static_cast<Eigen::Index>(graph.node_count());
  fm.keys.reserve(graph.node_count());
  for (const auto& node : graph.nodes()) fm.keys.push_back(node.key);
  fm.values = Matrix::Zero(n, view_width(view));

  if (view != View::kBehavioral) fill_structural(graph, fm.values, 0);
  if (view != View::kStructural) {
    const Eigen::Index col0 = view == View::kConcatenated ? kStructuralDim : 0;
    BehavioralContext ctx(graph);
    for (Eigen::Index v = 0; v < n; ++v) {
      const auto b = evaluate(graph, ctx, static_cast<std::size_t>(v), config);
      for (int i = 0; i < kBehavioralDim; ++i) fm.values(v, col0 + i) = b[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
  }
  return fm;
}

void write_feature_matrix(const FeatureMatrix& fm, View view, std::ostream& out) {
  for (std::size_t i = 0; i < fm.keys.size(); ++i) {
    const auto row = fm.values.row(static_cast<Eigen::Index>(i));
    json j;
    j["key"] = fm.keys[i];
    j["view"] = to_string(view);
    j["values"] = std::vector<double>(row.data(), row.data() + row.size());
    out << j.dump() << '\n';
  }
}

FeatureMatrix read_feature_matrix(std::istream& in) {
  FeatureMatrix fm;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      fm.keys.push_back(j.at("key").get<std::string>());
      rows.push_back(j.at("values").get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (rows.back().size() != rows.front().size()) throw DimensionError("ragged feature matrix rows");
  }
  const auto width = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  fm.values.resize(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index c = 0; c < width; ++c) fm.values(static_cast<Eigen::Index>(i), c) = rows[i][static_cast<std::size_t>(c)];
  }
  return fm;
}

}  // namespace aptmcl
