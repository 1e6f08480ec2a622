#include "support.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "aptmcl/errors.hpp"

namespace testsupport {

namespace {

const std::array<const char*, 6> kFileActions = {"create", "read", "write", "close", "delete", "open"};
const std::array<const char*, 6> kRegistryActions = {"open", "query", "enumerate", "modify", "close", "delete"};
const std::array<const char*, 8> kSocketActions = {"send",    "receive",    "retransmit", "copy",
                                                   "connect", "disconnect", "accept",     "reconnect"};

// (value, sensitive) pools
const std::vector<std::pair<std::string, bool>> kPaths = {
    {"/etc/shadow", true},        {"/home/user/secret/a.txt", true}, {"/tmp/dl/payload", false},
    {"/var/log/syslog", false},   {"/home/user/doc.txt", false},     {"/tmp/dl/other", false}};
const std::vector<std::pair<std::string, bool>> kExes = {{"/usr/bin/ls", false},
                                                         {"/tmp/dl/payload", false},
                                                         {"/home/user/secret/tool", true},
                                                         {"/usr/bin/whoami", false},
                                                         {"/bin/bash", false}};
const std::vector<std::pair<std::string, bool>> kCommands = {{"ls -la", false},
                                                             {"whoami", true},
                                                             {"C:\\Windows\\System32\\TaskList.EXE /v", true},
                                                             {"bash -c true", false},
                                                             {"netstat -an", true},
                                                             {"\"C:\\Program Files\\app.exe\" --x", false}};
const std::vector<std::string> kHashes = {"ioc-hash", "h1", "h2"};
const std::vector<std::string> kKeys = {"HKCU\\Run\\evil", "HKLM\\Software\\A", "HKCU\\Software\\B"};
const std::vector<std::string> kAddrs = {"203.0.113.10:443", "10.0.0.1:80", "10.0.0.2:53"};

template <typename T>
const T& draw(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

int uniform(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

RandomCase random_case(std::mt19937_64& rng, int n_events) {
  RandomCase c;
  c.config.sensitive_file_patterns = {"/etc/shadow", "*/secret/*"};
  c.config.sensitive_instructions = {"whoami", "tasklist", "netstat"};
  c.config.ioc_addresses = {"203.0.113.10:443"};
  c.config.ioc_file_hashes = {"ioc-hash"};
  c.config.ioc_registry_keys = {"HKCU\\Run\\evil"};
  for (const auto& [p, s] : kPaths) {
    if (s) c.sensitive_paths.insert(p);
  }
  for (const auto& [p, s] : kExes) {
    if (s) c.sensitive_paths.insert(p);
  }
  for (const auto& [p, s] : kCommands) {
    if (s) c.sensitive_commands.insert(p);
  }
  c.sensitive_commands.insert("/usr/bin/whoami");  // exe used when cmd is absent

  struct Entity {
    std::string key;
    NodeType type;
    Attrs attrs;
  };
  std::vector<Entity> procs, files, regs, socks;
  for (int i = 0, n = uniform(rng, 2, 6); i < n; ++i) {
    Attrs a{{"exe", draw(kExes, rng).first}};
    if (uniform(rng, 0, 3) > 0) a["cmd"] = draw(kCommands, rng).first;
    procs.push_back({"p" + std::to_string(i), NodeType::kProcess, a});
  }
  for (int i = 0, n = uniform(rng, 1, 5); i < n; ++i) {
    Attrs a{{"path", draw(kPaths, rng).first}};
    if (uniform(rng, 0, 3) == 0) a["exists"] = "false";
    if (uniform(rng, 0, 2) == 0) a["hash"] = draw(kHashes, rng);
    files.push_back({"f" + std::to_string(i), NodeType::kFile, a});
  }
  for (int i = 0, n = uniform(rng, 0, 3); i < n; ++i) {
    regs.push_back({"r" + std::to_string(i), NodeType::kRegistry, {{"key", draw(kKeys, rng)}}});
  }
  for (int i = 0, n = uniform(rng, 0, 2); i < n; ++i) {
    socks.push_back({"s" + std::to_string(i), NodeType::kSocket, {{"addr", draw(kAddrs, rng)}}});
  }

  for (int e = 0; e < n_events; ++e) {
    EventRecord ev;
    ev.timestamp = uniform(rng, 0, n_events / 2);
    const auto& sub = draw(procs, rng);
    ev.subject_id = sub.key;
    ev.subject_type = NodeType::kProcess;
    const Entity* obj = nullptr;
    std::string action;
    switch (uniform(rng, 0, 3)) {
      case 0: obj = &draw(procs, rng); action = "launch"; break;
      case 1: obj = &draw(files, rng); action = kFileActions[static_cast<std::size_t>(uniform(rng, 0, 5))]; break;
      case 2:
        if (regs.empty()) { obj = &draw(files, rng); action = "read"; break; }
        obj = &draw(regs, rng); action = kRegistryActions[static_cast<std::size_t>(uniform(rng, 0, 5))]; break;
      default:
        if (socks.empty()) { obj = &draw(procs, rng); action = "launch"; break; }
        obj = &draw(socks, rng); action = kSocketActions[static_cast<std::size_t>(uniform(rng, 0, 7))]; break;
    }
    ev.action = action;
    ev.object_id = obj->key;
    ev.object_type = obj->type;
    // attrs ride along on some events only; the graph keeps them once seen
    if (uniform(rng, 0, 2) > 0) ev.attrs = obj->attrs;
    c.events.push_back(std::move(ev));
  }
  // make sure every entity's attrs appear at least once
  auto announce = [&](const std::vector<Entity>& es) {
    for (const auto& en : es) {
      EventRecord ev;
      ev.timestamp = 0;
      ev.subject_id = procs.front().key;
      ev.object_id = en.key;
      ev.object_type = en.type;
      ev.attrs = en.attrs;
      switch (en.type) {
        case NodeType::kProcess: ev.action = "launch"; break;
        case NodeType::kFile: ev.action = "open"; break;
        case NodeType::kRegistry: ev.action = "query"; break;
        case NodeType::kSocket: ev.action = "connect"; break;
      }
      c.events.push_back(std::move(ev));
    }
  };
  announce(procs);
  announce(files);
  announce(regs);
  announce(socks);
  std::shuffle(c.events.begin(), c.events.end(), rng);
  return c;
}

int oracle_edge_index(NodeType object_type, const std::string& action) {
  auto find = [&](const auto& list, int base) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (action == list[i]) return base + static_cast<int>(i);
    }
    return -1;
  };
  switch (object_type) {
    case NodeType::kProcess: return action == "launch" ? 1 : -1;
    case NodeType::kFile: return find(kFileActions, 2);
    case NodeType::kRegistry: return find(kRegistryActions, 8);
    case NodeType::kSocket: return find(kSocketActions, 14);
  }
  return -1;
}

std::map<std::string, StructuralFeature> oracle_structural(const std::vector<EventRecord>& events) {
  std::map<std::string, StructuralFeature> out;
  for (const auto& e : events) {
    const int t = oracle_edge_index(e.object_type, e.action);
    out[e.subject_id][static_cast<std::size_t>(21 + t - 1)] += 1;
    out[e.object_id][static_cast<std::size_t>(t - 1)] += 1;
  }
  return out;
}

std::map<std::string, BehavioralFeature> oracle_behavioral(const RandomCase& c) {
  std::map<std::string, NodeType> type;
  std::map<std::string, Attrs> attrs;
  for (const auto& e : c.events) {
    type[e.subject_id] = e.subject_type;
    type[e.object_id] = e.object_type;
    for (const auto& [k, v] : e.attrs) attrs[e.object_id][k] = v;  // values never conflict in random_case
  }
  auto get = [&](const std::string& key, const char* name) -> std::string {
    auto it = attrs[key].find(name);
    return it == attrs[key].end() ? std::string() : it->second;
  };

  std::set<std::string> senders, receivers;
  for (const auto& e : c.events) {
    if (e.action == "send" && e.object_type == NodeType::kSocket) senders.insert(e.subject_id);
    if (e.action == "receive" && e.object_type == NodeType::kSocket) receivers.insert(e.subject_id);
  }
  std::set<std::string> network_files, uploaded_files, network_paths;
  for (const auto& e : c.events) {
    if (e.object_type != NodeType::kFile) continue;
    if (e.action == "write" && receivers.contains(e.subject_id)) network_files.insert(e.object_id);
    if (e.action == "read" && senders.contains(e.subject_id)) uploaded_files.insert(e.object_id);
  }
  for (const auto& f : network_files) {
    if (!get(f, "path").empty()) network_paths.insert(get(f, "path"));
  }

  std::map<std::string, BehavioralFeature> out;
  for (const auto& [key, t] : type) {
    BehavioralFeature b{};
    switch (t) {
      case NodeType::kProcess: b[PL0] = true; break;
      case NodeType::kFile:
        b[FL0] = true;
        b[FL1] = c.sensitive_paths.contains(get(key, "path"));
        b[FL2] = uploaded_files.contains(key);
        b[FL3] = network_files.contains(key);
        b[FL4] = c.config.ioc_file_hashes.contains(get(key, "hash"));
        break;
      case NodeType::kSocket:
        b[NL0] = true;
        b[NL1] = c.config.ioc_addresses.contains(get(key, "addr"));
        break;
      case NodeType::kRegistry:
        b[RL0] = true;
        b[RL1] = c.config.ioc_registry_keys.contains(get(key, "key"));
        break;
    }
    out[key] = b;
  }
  for (const auto& e : c.events) {
    auto& b = out[e.subject_id];
    const auto& o = e.object_id;
    const bool modifies = e.action == "write" || e.action == "delete";
    switch (e.object_type) {
      case NodeType::kSocket: b[PL1] = true; break;
      case NodeType::kFile:
        if (network_files.contains(o) && e.action == "read") b[PL2] = true;
        if (network_files.contains(o) && modifies) b[PL3] = true;
        if (get(o, "exists") == "false") b[PL5] = true;
        if (c.sensitive_paths.contains(get(o, "path")) && e.action == "read") b[PL6] = true;
        if (c.sensitive_paths.contains(get(o, "path")) && modifies) b[PL7] = true;
        break;
      case NodeType::kProcess: {
        const auto exe = get(o, "exe");
        if (network_paths.contains(exe)) b[PL4] = true;
        if (c.sensitive_paths.contains(exe)) b[PL8] = true;
        const auto cmd = attrs[o].contains("cmd") ? get(o, "cmd") : exe;
        if (c.sensitive_commands.contains(cmd)) b[PL9] = true;
        break;
      }
      case NodeType::kRegistry:
        if (e.action == "modify" || e.action == "delete") b[PL10] = true;
        break;
    }
  }
  return out;
}

std::optional<std::string> check_features(const RandomCase& c) {
  const ProvenanceGraph g = build_graph(c.events);
  const auto s_oracle = oracle_structural(c.events);
  const auto b_oracle = oracle_behavioral(c);
  if (g.node_count() != b_oracle.size()) return "node count differs from the distinct key count";
  const FeatureMatrix fs = view_matrix(g, View::kStructural, c.config);
  const FeatureMatrix fb = view_matrix(g, View::kBehavioral, c.config);
  for (std::size_t v = 0; v < g.node_count(); ++v) {
    const auto& key = g.node(v).key;
    const auto s = extract_structural(g, key);
    if (s != s_oracle.at(key)) return "structural mismatch at " + key;
    const auto b = extract_behavioral(g, key, c.config);
    if (b != b_oracle.at(key)) {
      std::ostringstream os;
      os << "behavioral mismatch at " << key << ":";
      for (int i = 0; i < kBehavioralDim; ++i) {
        if (b[static_cast<std::size_t>(i)] != b_oracle.at(key)[static_cast<std::size_t>(i)]) {
          os << ' ' << behavioral_label_name(i);
        }
      }
      return os.str();
    }
    for (int i = 0; i < kStructuralDim; ++i) {
      if (fs.values(static_cast<Eigen::Index>(v), i) != static_cast<double>(s[static_cast<std::size_t>(i)])) {
        return "structural matrix row differs at " + key;
      }
    }
    for (int i = 0; i < kBehavioralDim; ++i) {
      if (fb.values(static_cast<Eigen::Index>(v), i) != (b[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) {
        return "behavioral matrix row differs at " + key;
      }
    }
  }
  return std::nullopt;
}

GradCase gradient_case(std::uint64_t seed, int n_nodes) {
  std::mt19937_64 rng(seed);
  std::vector<EventRecord> events;
  const int n_proc = std::max(2, n_nodes / 3);
  auto ev = [&](int sub, NodeType t, int obj, const char* act) {
    EventRecord e;
    e.subject_id = "p" + std::to_string(sub);
    e.object_type = t;
    e.object_id = std::string(t == NodeType::kProcess ? "p" : t == NodeType::kFile ? "f" : t == NodeType::kRegistry ? "r" : "s") +
                  std::to_string(obj);
    e.action = act;
    events.push_back(e);
  };
  for (int p = 1; p < n_proc; ++p) ev(uniform(rng, 0, p - 1), NodeType::kProcess, p, "launch");
  const std::array<NodeType, 3> others = {NodeType::kFile, NodeType::kRegistry, NodeType::kSocket};
  const std::array<const char*, 3> acts = {"write", "modify", "send"};
  for (int i = 0; n_proc + i < n_nodes; ++i) {
    const int k = i % 3;
    ev(uniform(rng, 0, n_proc - 1), others[static_cast<std::size_t>(k)], i, acts[static_cast<std::size_t>(k)]);
  }
  GradCase c;
  c.graph = build_graph(events);
  const int d = 6;
  std::normal_distribution<double> normal(0.0, 1.0);
  c.features = Matrix(static_cast<Eigen::Index>(c.graph.node_count()), d);
  for (Eigen::Index r = 0; r < c.features.rows(); ++r) {
    for (Eigen::Index k = 0; k < d; ++k) c.features(r, k) = normal(rng);
  }
  c.labels = node_type_labels(c.graph);
  TrainConfig tc;
  tc.rng_seed = seed;
  c.model = EncoderModel::initialize(d, tc);
  // non-zero biases so every bias gradient is exercised
  for (auto* p : c.model.parameters()) {
    if (p->rows() == 1) {
      for (Eigen::Index k = 0; k < p->cols(); ++k) (*p)(0, k) = 0.1 * normal(rng);
    }
  }
  return c;
}

double max_gradient_error(const GradCase& c, double h) {
  const std::vector<Neighborhood> hoods = {Neighborhood::full(c.graph), Neighborhood::full(c.graph)};
  std::vector<std::uint32_t> batch(c.graph.node_count());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = static_cast<std::uint32_t>(i);
  const auto analytic = nll_loss_and_gradient(c.model, hoods, c.features, c.labels, batch, 0.0, nullptr);

  EncoderModel m = c.model;
  auto params = m.parameters();
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& p = *params[pi];
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (Eigen::Index k = 0; k < p.cols(); ++k) {
        const double saved = p(r, k);
        p(r, k) = saved + h;
        const double up = nll_loss_and_gradient(m, hoods, c.features, c.labels, batch, 0.0, nullptr).loss;
        p(r, k) = saved - h;
        const double down = nll_loss_and_gradient(m, hoods, c.features, c.labels, batch, 0.0, nullptr).loss;
        p(r, k) = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic.gradients[pi](r, k);
        // floor keeps exact zeros (dead units) from dividing by zero
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(a - numeric) / denom);
      }
    }
  }
  return worst;
}

std::optional<std::string> check_cotrain_run(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = uniform(rng, 20, 90);
  SampleTable samples;
  std::vector<int> truth(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    samples.keys.push_back("k" + std::to_string(1000 + i));
    truth[static_cast<std::size_t>(i)] = unit(rng) < 0.2 ? 1 : 0;
  }
  const double shift = 3.0 * unit(rng);
  for (int v = 0; v < 2; ++v) {
    const int d = uniform(rng, 2, 5);
    Matrix x(n, d);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < d; ++k) x(i, k) = normal(rng) + (truth[static_cast<std::size_t>(i)] ? shift : 0.0);
    }
    samples.views.push_back(std::move(x));
  }
  std::vector<std::vector<double>> anomaly(2, std::vector<double>(static_cast<std::size_t>(n)));
  for (auto& view : anomaly) {
    for (int i = 0; i < n; ++i) {
      const double base = truth[static_cast<std::size_t>(i)] ? 0.75 : 0.3;
      view[static_cast<std::size_t>(i)] = std::clamp(base + 0.25 * normal(rng), 0.0, 1.0);
    }
  }
  UnlabeledPool ud;
  for (int i = 0; i < n; ++i) {
    if (unit(rng) < 0.85) ud.push_back(static_cast<std::size_t>(i));
  }
  CoTrainConfig cfg;
  cfg.batch_thres = 0.5 + 0.45 * unit(rng);
  cfg.batch_prob = 0.05 + 0.95 * unit(rng);
  cfg.max_iterations = uniform(rng, 1, 12);
  cfg.classifier.n_trees = uniform(rng, 3, 9);
  cfg.classifier.max_depth = uniform(rng, 2, 5);
  cfg.classifier.seed = seed;

  const std::set<std::size_t> initial(ud.begin(), ud.end());
  auto check_pools = [&](const LabeledPool& ld, const UnlabeledPool& rest, const std::string& when)
      -> std::optional<std::string> {
    std::set<std::size_t> seen;
    for (const auto& e : ld.entries()) {
      if (!initial.contains(e.sample)) return when + ": LD holds a key outside the initial UD";
      if (!seen.insert(e.sample).second) return when + ": key labeled twice";
    }
    for (auto s : rest) {
      if (!initial.contains(s)) return when + ": UD holds a foreign key";
      if (!seen.insert(s).second) return when + ": key in both LD and UD";
    }
    if (seen != initial) return when + ": keys lost";
    return std::nullopt;
  };

  // step by step through the public round API
  try {
    SeedResult seeded = seed_pools(ud, anomaly, cfg);
    if (auto err = check_pools(seeded.labeled, seeded.unlabeled, "seeding")) return err;
    LabeledPool ld = std::move(seeded.labeled);
    UnlabeledPool rest = std::move(seeded.unlabeled);
    int it = 0;
    while (!rest.empty() && it < cfg.max_iterations) {
      ++it;
      const std::size_t before = rest.size();
      RoundResult r = cotrain_round(ld, rest, samples, cfg, it);
      const std::string when = "round " + std::to_string(it);
      if (auto err = check_pools(ld, rest, when)) return err;
      const std::size_t added = r.record.added_malicious + r.record.added_benign;
      if (r.progress != (added > 0)) return when + ": progress flag disagrees with the additions";
      if (r.progress && !(rest.size() < before)) return when + ": productive round without |UD| decrease";
      if (rest.size() != before - added) return when + ": |UD| does not drop by the number of additions";
      if (!r.progress) break;
    }
  } catch (const ColdStartError&) {
    return std::nullopt;
  } catch (const ClassStarvationError&) {
    return std::nullopt;
  }

  // the driver on the same inputs
  try {
    const CoTrainResult res = run_cotraining(samples, ud, anomaly, cfg);
    if (auto err = check_pools(res.labeled, res.residual, "driver")) return err;
    if (res.iterations > cfg.max_iterations) return std::string("driver exceeded max_iterations");
    if (res.audit.size() != static_cast<std::size_t>(res.iterations) + 1) return std::string("audit length mismatch");
    for (std::size_t i = 1; i < res.audit.size(); ++i) {
      const auto& r = res.audit[i];
      if (r.unlabeled_before != res.audit[i - 1].unlabeled_after) return std::string("audit pool sizes do not chain");
      const bool productive = r.added_malicious + r.added_benign > 0;
      if (productive && !(r.unlabeled_after < r.unlabeled_before)) return std::string("audit shows no decrease");
      if (!productive && i + 1 != res.audit.size()) return std::string("driver continued after an empty round");
    }
    if (res.termination == Termination::kExhausted && !res.residual.empty()) {
      return std::string("exhausted with a non-empty residual");
    }
  } catch (const ClassStarvationError&) {
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace testsupport

namespace testsupport {

Matrix planted_cloud(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix all(256, 2);
  for (Eigen::Index i = 0; i < 251 * 2; ++i) all.data()[i] = normal(rng);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  for (int k = 0; k < 5; ++k) {
    const double a = angle(rng);
    all(251 + k, 0) = 10.0 * std::cos(a);
    all(251 + k, 1) = 10.0 * std::sin(a);
  }
  return all;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("aptmcl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

PipelineConfig small_config(const std::filesystem::path& dir) {
  PipelineConfig c;
  c.scenario.benign_processes = 80;
  c.scenario.ransomware_plants = 4;
  c.scenario.exfiltration_plants = 4;
  c.train.epochs = 10;
  c.forest.n_trees = 50;
  c.cotrain.classifier.n_trees = 15;
  c.paths.events = dir / "events.jsonl";
  c.paths.ground_truth = dir / "ground_truth.jsonl";
  c.paths.graph_dir = dir / "graph";
  c.paths.model_dir = dir / "models";
  c.paths.report_dir = dir / "reports";
  return c;
}

std::filesystem::path write_config(const PipelineConfig& config, const std::filesystem::path& dir) {
  nlohmann::json j = config.to_json();
  j["paths"] = {{"events", "events.jsonl"},
                {"ground_truth", "ground_truth.jsonl"},
                {"graph_dir", "graph"},
                {"model_dir", "models"},
                {"report_dir", "reports"}};
  const auto path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace testsupport
