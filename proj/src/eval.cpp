#include "aptmcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "aptmcl/errors.hpp"

namespace aptmcl {

using nlohmann::json;

std::size_t train_count(double train_fraction, std::size_t n) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
}

DataSplit split(std::vector<std::string> benign, std::vector<std::string> malicious, const SplitSpec& spec) {
  if (benign.empty()) throw InputError("cannot split: the benign key set is empty");
  std::mt19937_64 rng(spec.rng_seed);
  auto shuffle_split = [&](std::vector<std::string>& keys, std::vector<std::string>& train,
                           std::vector<std::string>& test) {
    std::sort(keys.begin(), keys.end());
    if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) throw InputError("duplicate key in split input");
    std::shuffle(keys.begin(), keys.end(), rng);
    const auto k = train_count(spec.train_fraction, keys.size());
    train.assign(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k));
    test.assign(keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
  };
  DataSplit out;
  shuffle_split(benign, out.benign_train, out.benign_test);
  shuffle_split(malicious, out.malicious_train, out.malicious_test);
  std::vector<std::string> overlap;
  std::vector<std::string> b = benign, m = malicious;
  std::sort(b.begin(), b.end());
  std::sort(m.begin(), m.end());
  std::set_intersection(b.begin(), b.end(), m.begin(), m.end(), std::back_inserter(overlap));
  if (!overlap.empty()) throw InputError("key '" + overlap.front() + "' is both benign and malicious");
  return out;
}

// ---------------------------------------------------------------------------

MetricsReport MetricsReport::from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  MetricsReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  auto ratio = [](std::size_t num, std::size_t den, bool& defined) {
    defined = den > 0;
    return defined ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };
  r.precision = ratio(tp, tp + fp, r.precision_defined);
  r.recall = ratio(tp, tp + fn, r.recall_defined);
  r.fpr = ratio(fp, fp + tn, r.fpr_defined);
  const std::size_t total = tp + fp + tn + fn;
  r.accuracy = total == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total);
  bool unused;
  const double f1_mal = ratio(2 * tp, 2 * tp + fp + fn, unused);
  const double f1_ben = ratio(2 * tn, 2 * tn + fn + fp, unused);
  r.macro_f1 = (f1_mal + f1_ben) / 2.0;
  return r;
}

json MetricsReport::to_json() const {
  auto value = [](double v, bool defined) { return defined ? json(v) : json("n/a"); };
  return json{{"tp", tp},
              {"fp", fp},
              {"tn", tn},
              {"fn", fn},
              {"precision", value(precision, precision_defined)},
              {"recall", value(recall, recall_defined)},
              {"accuracy", accuracy},
              {"fpr", value(fpr, fpr_defined)},
              {"macro_f1", macro_f1}};
}

MetricsReport compute_metrics(const std::map<std::string, int>& predictions, const std::map<std::string, int>& truth) {
  if (predictions.size() != truth.size()) {
    throw InputError("prediction and ground-truth key sets differ in size (" + std::to_string(predictions.size()) +
                     " vs " + std::to_string(truth.size()) + ")");
  }
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  auto it = truth.begin();
  for (const auto& [key, pred] : predictions) {
    if (it->first != key) throw InputError("key '" + key + "' has no ground-truth label");
    const int actual = it->second;
    if (pred == 1 && actual == 1) ++tp;
    else if (pred == 1) ++fp;
    else if (actual == 1) ++fn;
    else ++tn;
    ++it;
  }
  return MetricsReport::from_counts(tp, fp, tn, fn);
}

// ---------------------------------------------------------------------------

std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kBenignBackground: return "benign_background";
    case ScenarioKind::kRansomwareBurst: return "ransomware_burst";
    case ScenarioKind::kCollectionExfiltration: return "collection_exfiltration";
    case ScenarioKind::kMixed: return "mixed";
  }
  return "?";
}

ScenarioKind parse_scenario(std::string_view name) {
  for (auto k : {ScenarioKind::kBenignBackground, ScenarioKind::kRansomwareBurst,
                 ScenarioKind::kCollectionExfiltration, ScenarioKind::kMixed}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown scenario '" + std::string(name) + "'");
}

std::string_view to_string(PlantKind kind) {
  switch (kind) {
    case PlantKind::kBenign: return "benign";
    case PlantKind::kRansomware: return "ransomware";
    case PlantKind::kExfiltration: return "exfiltration";
  }
  return "?";
}

int ScenarioSpec::ransomware_count() const {
  if (ransomware_plants >= 0) return ransomware_plants;
  return kind == ScenarioKind::kRansomwareBurst || kind == ScenarioKind::kMixed ? 20 : 0;
}

int ScenarioSpec::exfiltration_count() const {
  if (exfiltration_plants >= 0) return exfiltration_plants;
  return kind == ScenarioKind::kCollectionExfiltration || kind == ScenarioKind::kMixed ? 20 : 0;
}

void ScenarioSpec::validate() const {
  if (benign_processes < 20) throw ConfigError("scenario needs at least 20 benign processes");
  if (events_per_process < 10) throw ConfigError("scenario needs at least 10 events per process");
  if (ransomware_plants < -1 || exfiltration_plants < -1) throw ConfigError("plant counts must be non-negative");
}

json ScenarioSpec::to_json() const {
  return json{{"scenario", to_string(kind)},
              {"benign_processes", benign_processes},
              {"events_per_process", events_per_process},
              {"ransomware_plants", ransomware_count()},
              {"exfiltration_plants", exfiltration_count()},
              {"rng_seed", rng_seed}};
}

ScenarioSpec ScenarioSpec::from_json(const json& j) {
  ScenarioSpec s;
  try {
    if (auto it = j.find("scenario"); it != j.end()) s.kind = parse_scenario(it->get<std::string>());
    s.benign_processes = j.value("benign_processes", s.benign_processes);
    s.events_per_process = j.value("events_per_process", s.events_per_process);
    s.ransomware_plants = j.value("ransomware_plants", s.ransomware_plants);
    s.exfiltration_plants = j.value("exfiltration_plants", s.exfiltration_plants);
    s.rng_seed = j.value("rng_seed", s.rng_seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<std::string> ScenarioData::malicious_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, kind] : processes) {
    if (kind != PlantKind::kBenign) out.push_back(k);
  }
  return out;
}

std::vector<std::string> ScenarioData::benign_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, kind] : processes) {
    if (kind == PlantKind::kBenign) out.push_back(k);
  }
  return out;
}

std::map<std::string, int> ScenarioData::labels() const {
  std::map<std::string, int> out;
  for (const auto& [k, kind] : processes) out[k] = kind == PlantKind::kBenign ? 0 : 1;
  return out;
}

namespace {

constexpr int kLibs = 40;
constexpr int kDocs = 300;
constexpr int kLogs = 20;
constexpr int kBenignSockets = 60;
constexpr int kIocSockets = 4;

const std::vector<std::string> kSensitivePaths = {"/etc/shadow", "/etc/passwd", "/etc/sudoers",
                                                  "/home/user/.ssh/id_rsa", "/home/user/secret/payroll.xlsx",
                                                  "/home/user/secret/keys.txt"};
const std::vector<std::string> kShellCommands = {"ls -la", "ps", "grep -r TODO .", "cat notes.txt", "git status",
                                                 "make", "vim notes.txt", "du -sh ."};
const std::vector<std::string> kAgentProbes = {"/proc/uptime", "/proc/mounts",     "/proc/meminfo",
                                               "/proc/stat",   "/proc/partitions", "/proc/vmstat"};
const std::vector<std::string> kReconCommands = {"whoami", "systeminfo", "tasklist", "netstat -an", "ipconfig /all",
                                                 "hostname"};
const std::string kIocRunKey = "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\updater";

// Benign programs run in a handful of fixed configurations; instances of a
// configuration touch the same entities and differ only in repetition counts.
struct Variant {
  std::vector<int> libs;
  std::vector<int> files;     // docs, logs or config files depending on the template
  std::vector<int> keys;      // registry keys queried
  int modify_key = -1;        // registry key modified, -1 for none
  std::vector<int> sockets;
  std::vector<std::string> commands;
};

class Generator {
 public:
  explicit Generator(const ScenarioSpec& spec) : spec_(spec), rng_(spec.rng_seed), scale_(spec.events_per_process / 40.0) {
    for (int v = 0; v < 8; ++v) editors_.push_back(Variant{distinct(3, 0, 10), distinct(3, 0, kDocs - 1),
                                                           distinct(2, 0, 49), uniform(50, 59), {}, {}});
    for (int v = 0; v < 4; ++v) browsers_.push_back(Variant{distinct(3, 10, 19), {}, distinct(1, 0, 49), -1,
                                                            distinct(3, 0, kBenignSockets - 1), {}});
    for (int v = 0; v < 4; ++v) daemons_.push_back(Variant{distinct(2, 20, 29), {uniform(0, kLogs - 1)},
                                                           distinct(3, 60, 99), uniform(100, 109),
                                                           {uniform(0, kBenignSockets - 1)}, {}});
    for (int v = 0; v < 2; ++v) backups_.push_back(Variant{distinct(2, 20, 29), distinct(12, 0, kDocs - 1), {}, -1, {}, {}});
    for (int v = 0; v < 5; ++v) {
      Variant sh{distinct(2, 0, 9), distinct(uniform(0, 2), 0, kDocs - 1), {}, -1, {}, {}};
      sh.commands.push_back(pick(kShellCommands));
      shells_.push_back(std::move(sh));
    }
    for (int v = 0; v < 3; ++v) {
      Variant a{distinct(2, 30, 39), distinct(uniform(3, 4), 0, 9), {}, uniform(110, 119), {v}, {}};
      for (int c : distinct(uniform(3, 4), 0, static_cast<int>(kAgentProbes.size()) - 1)) {
        a.commands.push_back(kAgentProbes[static_cast<std::size_t>(c)]);
      }
      agents_.push_back(std::move(a));
    }
  }

  ScenarioData run() {
    init_ = "p:init";
    explorer_ = spawn(init_, "explorer", "/usr/bin/explorer", "explorer", PlantKind::kBenign);

    for (int i = 0; i < spec_.benign_processes; ++i) {
      const double r = uniform01();
      if (r < 0.22) editor();
      else if (r < 0.38) browser();
      else if (r < 0.50) daemon();
      else if (r < 0.65) backup();
      else if (r < 0.80) agent();
      else shell();
    }
    // per-process means over every benign process emitted so far
    double file_reg = 0.0, write_modify = 0.0;
    std::size_t benign = 0;
    for (const auto& [key, kind] : data_.processes) {
      if (kind != PlantKind::kBenign) continue;
      ++benign;
      file_reg += static_cast<double>(counts_[key].file_reg);
      write_modify += static_cast<double>(counts_[key].write_modify);
    }
    file_reg /= static_cast<double>(benign);
    write_modify /= static_cast<double>(benign);
    for (int i = 0; i < spec_.ransomware_count(); ++i) ransomware(file_reg, write_modify);
    for (int i = 0; i < spec_.exfiltration_count(); ++i) exfiltration();
    return std::move(data_);
  }

 private:
  struct Counts {
    std::uint64_t file_reg = 0;
    std::uint64_t write_modify = 0;
  };

  double uniform01() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return uniform01() < p; }
  int reps(int lo, int hi) { return std::max(1, static_cast<int>(std::lround(uniform(lo, hi) * scale_))); }
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(uniform(0, static_cast<int>(v.size()) - 1))];
  }
  // k distinct integers from [lo, hi], ascending
  std::vector<int> distinct(int k, int lo, int hi) {
    std::vector<int> all(static_cast<std::size_t>(hi - lo + 1));
    std::iota(all.begin(), all.end(), lo);
    std::shuffle(all.begin(), all.end(), rng_);
    all.resize(static_cast<std::size_t>(k));
    std::sort(all.begin(), all.end());
    return all;
  }

  void emit(const std::string& sub, const char* act, const std::string& obj, NodeType obj_t, Attrs attrs = {},
            int count = 1) {
    const std::string_view action = act;
    for (int i = 0; i < count; ++i) {
      clock_ += uniform(1, 5000);
      EventRecord ev;
      ev.timestamp = clock_;
      ev.subject_id = sub;
      ev.subject_type = NodeType::kProcess;
      ev.action = act;
      ev.object_id = obj;
      ev.object_type = obj_t;
      ev.attrs = attrs;
      if (sub == init_ && !init_announced_) {
        ev.subject_attrs = {{"exe", "/sbin/init"}, {"cmd", "init"}};
        init_announced_ = true;
      }
      data_.events.push_back(std::move(ev));
    }
    auto& c = counts_[sub];
    if (obj_t == NodeType::kFile || obj_t == NodeType::kRegistry) c.file_reg += static_cast<std::uint64_t>(count);
    if ((obj_t == NodeType::kFile && action == "write") || (obj_t == NodeType::kRegistry && action == "modify")) {
      c.write_modify += static_cast<std::uint64_t>(count);
    }
  }

  std::string spawn(const std::string& parent, const std::string& role, const std::string& exe, const std::string& cmd,
                    PlantKind kind) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "p:%05d:%s", next_pid_++, role.c_str());
    std::string key = buf;
    emit(parent, "launch", key, NodeType::kProcess, {{"exe", exe}, {"cmd", cmd}});
    data_.processes[key] = kind;
    return key;
  }

  void file(const std::string& p, const char* act, const std::string& key, const std::string& path, int count = 1,
            Attrs extra = {}) {
    extra["path"] = path;
    emit(p, act, key, NodeType::kFile, std::move(extra), count);
  }

  void lib(const std::string& p, int i) {
    file(p, "read", "f:lib:" + std::to_string(i), "/usr/lib/lib" + std::to_string(i) + ".so", reps(1, 2));
  }

  std::pair<std::string, std::string> doc(int i) {
    return {"f:doc:" + std::to_string(i), "/home/user/docs/doc" + std::to_string(i) + ".txt"};
  }

  void registry(const std::string& p, const char* act, int key_index, int count = 1) {
    emit(p, act, "r:" + std::to_string(key_index), NodeType::kRegistry,
         {{"key", "HKLM\\Software\\Vendor\\Key" + std::to_string(key_index)}}, count);
  }

  void socket(const std::string& p, const char* act, int i, int count = 1) {
    char addr[32];
    std::snprintf(addr, sizeof addr, "10.0.%d.%d:443", i / 256, i % 256 + 1);
    emit(p, act, "s:" + std::to_string(i), NodeType::kSocket, {{"addr", addr}}, count);
  }

  // a short-lived child running one command
  void command(const std::string& parent, const std::string& cmd, PlantKind kind) {
    const auto name = command_name(cmd);
    const auto c = spawn(parent, "cmd", "/usr/bin/" + name, cmd, kind);
    lib(c, 0);
    file(c, "read", "f:cmdconf:" + name, "/usr/share/" + name + "/defaults");
  }

  void editor() {
    const Variant& v = pick(editors_);
    const auto p = spawn(explorer_, "editor", "/usr/bin/editor", "editor", PlantKind::kBenign);
    for (int l : v.libs) lib(p, l);
    for (int d : v.files) {
      const auto [k, path] = doc(d);
      file(p, "open", k, path);
      file(p, "read", k, path, reps(1, 4));
      file(p, "write", k, path, reps(1, 3));
      file(p, "close", k, path);
    }
    for (int r : v.keys) registry(p, "query", r, reps(1, 2));
    registry(p, "modify", v.modify_key);  // recent-files list
    const auto k = "f:tmp:" + p;
    const auto path = "/tmp/" + p.substr(2, 5) + ".swp";
    file(p, "create", k, path);
    file(p, "write", k, path, reps(1, 3));
    file(p, "delete", k, path);
    if (chance(0.03)) file(p, "read", "f:sens:4", kSensitivePaths[4]);
  }

  void browser() {
    const Variant& v = pick(browsers_);
    const auto p = spawn(explorer_, "browser", "/usr/bin/browser", "browser", PlantKind::kBenign);
    for (int l : v.libs) lib(p, l);
    for (int s : v.sockets) {
      socket(p, "connect", s);
      socket(p, "send", s, reps(1, 5));
      socket(p, "receive", s, reps(2, 8));
    }
    for (int i = 0; i < 3; ++i) {
      const auto k = "f:cache:" + p + ":" + std::to_string(i);
      const auto path = "/home/user/.cache/browser/" + p.substr(2, 5) + "_" + std::to_string(i);
      file(p, "create", k, path);
      file(p, "write", k, path, reps(1, 3));
    }
    for (int r : v.keys) registry(p, "query", r);
  }

  void daemon() {
    const Variant& v = pick(daemons_);
    const auto p = spawn(init_, "daemon", "/usr/sbin/daemon", "daemon --foreground", PlantKind::kBenign);
    for (int l : v.libs) lib(p, l);
    const auto lk = "f:log:" + std::to_string(v.files[0]);
    const auto lp = "/var/log/svc" + std::to_string(v.files[0]) + ".log";
    file(p, "open", lk, lp);
    file(p, "write", lk, lp, reps(5, 15));
    for (int r : v.keys) registry(p, "query", r, reps(1, 2));
    registry(p, "enumerate", v.keys[0]);
    registry(p, "modify", v.modify_key, reps(1, 3));
    const int s = v.sockets[0];
    socket(p, "accept", s);
    socket(p, "receive", s, reps(1, 4));
    socket(p, "send", s, reps(1, 4));
  }

  void backup() {
    const Variant& v = pick(backups_);
    const auto p = spawn(init_, "backup", "/usr/bin/backup", "backup --incremental", PlantKind::kBenign);
    for (int l : v.libs) lib(p, l);
    for (int d : v.files) {
      const auto [k, path] = doc(d);
      file(p, "open", k, path);
      file(p, "read", k, path, reps(1, 2));
      file(p, "close", k, path);
    }
    file(p, "write", "f:archive:" + p, "/var/backups/" + p.substr(2) + ".tar", reps(2, 4));
    file(p, "write", "f:log:backup", "/var/log/backup.log", reps(1, 3));
  }

  // Monitoring agent: reads a few /proc probes and its config, stages a
  // batch, reports to its management server. Close to the exfiltration edge mix.
  void agent() {
    const std::size_t vi = static_cast<std::size_t>(uniform(0, static_cast<int>(agents_.size()) - 1));
    const Variant& v = agents_[vi];
    const auto p = spawn(init_, "agent", "/opt/agent/bin/agent", "agent --report", PlantKind::kBenign);
    for (int l : v.libs) lib(p, l);
    for (const auto& probe : v.commands) file(p, "read", "f:" + probe, probe);
    for (int f : v.files) {
      file(p, "read", "f:conf:" + std::to_string(f), "/etc/agent/conf" + std::to_string(f) + ".yaml");
    }
    const Attrs addr = {{"addr", "10.2.0." + std::to_string(v.sockets[0] + 1) + ":8443"}};
    const auto sk = "s:mgmt:" + std::to_string(v.sockets[0]);
    emit(p, "connect", sk, NodeType::kSocket, addr);
    emit(p, "receive", sk, NodeType::kSocket, addr, reps(1, 3));
    const auto bk = "f:spool:" + p;
    const auto bp = "/var/spool/agent/batch_" + p.substr(2, 5);
    file(p, "create", bk, bp);
    file(p, "write", bk, bp, reps(1, 2));
    file(p, "read", bk, bp);
    file(p, "delete", bk, bp);
    file(p, "write", "f:agentstate:" + std::to_string(vi), "/var/lib/agent/state" + std::to_string(vi));
    emit(p, "send", sk, NodeType::kSocket, addr, reps(2, 5));
    registry(p, "modify", v.modify_key);
  }

  void shell() {
    const Variant& v = pick(shells_);
    const auto p = spawn(explorer_, "shell", "/bin/bash", "bash", PlantKind::kBenign);
    for (int l : v.libs) lib(p, l);
    for (int d : v.files) {
      const auto [k, path] = doc(d);
      file(p, "read", k, path, reps(1, 2));
    }
    for (const auto& cmd : v.commands) command(p, cmd, PlantKind::kBenign);
  }

  void ransomware(double file_reg_mean, double write_modify_mean) {
    const auto p = spawn(explorer_, "svchost", "/home/user/Downloads/thanos.exe", "thanos.exe", PlantKind::kRansomware);
    const auto file_reg_target = static_cast<std::uint64_t>(std::ceil(25.0 * file_reg_mean));
    const auto write_modify_target = static_cast<std::uint64_t>(std::ceil(25.0 * write_modify_mean));
    for (int l : {0, 1, 2}) lib(p, l);
    int next_doc = uniform(0, kDocs - 1);
    int locked = 0;
    while (counts_[p].file_reg < file_reg_target || counts_[p].write_modify < write_modify_target) {
      const auto [k, path] = doc(next_doc);
      next_doc = (next_doc + 1) % kDocs;
      file(p, "open", k, path);
      file(p, "read", k, path, reps(2, 4));
      file(p, "write", k, path, reps(2, 4));
      file(p, "close", k, path);
      const auto lk = "f:locked:" + p + ":" + std::to_string(locked++);
      const auto lp = path + ".locked";
      file(p, "create", lk, lp);
      file(p, "write", lk, lp, reps(1, 2));
      if (chance(0.5)) file(p, "delete", k, path);
      registry(p, "query", uniform(0, 49), reps(1, 3));
      registry(p, "modify", uniform(50, 59), reps(1, 2));
    }
  }

  void exfiltration() {
    const auto p = spawn(explorer_, "winword", "/home/user/Downloads/invoice.doc.exe", "winword.exe invoice.doc",
                         PlantKind::kExfiltration);
    lib(p, 30);
    lib(p, 31);
    std::vector<std::string> recon = kReconCommands;
    std::shuffle(recon.begin(), recon.end(), rng_);
    recon.resize(static_cast<std::size_t>(uniform(3, 4)));
    for (const auto& cmd : recon) command(p, cmd, PlantKind::kBenign);
    for (int i = uniform(2, 3); i > 0; --i) {
      const int s = uniform(0, static_cast<int>(kSensitivePaths.size()) - 1);
      file(p, "read", "f:sens:" + std::to_string(s), kSensitivePaths[static_cast<std::size_t>(s)]);
    }
    file(p, "read", "f:missing:keytab", "/etc/krb5.keytab", 1, {{"exists", "false"}});
    const int ioc = uniform(0, kIocSockets - 1);
    const auto sk = "s:ioc:" + std::to_string(ioc);
    const Attrs addr = {{"addr", "203.0.113." + std::to_string(10 + ioc) + ":8443"}};
    emit(p, "connect", sk, NodeType::kSocket, addr);
    // second stage: fetch a script, stage it on disk, run it, clean up
    emit(p, "receive", sk, NodeType::kSocket, addr, reps(1, 3));
    const auto xk = "f:stage:" + p;
    const auto xp = "/home/user/AppData/upd_" + p.substr(2, 5) + ".ps1";
    file(p, "create", xk, xp);
    file(p, "write", xk, xp, reps(1, 2));
    file(p, "read", xk, xp);
    file(p, "delete", xk, xp);
    file(p, "write", "f:sens:authkeys", "/home/user/.ssh/authorized_keys");
    emit(p, "send", sk, NodeType::kSocket, addr, reps(2, 5));
    emit(p, "modify", "r:ioc:run", NodeType::kRegistry, {{"key", kIocRunKey}});
  }

  const ScenarioSpec& spec_;
  std::mt19937_64 rng_;
  double scale_;
  std::vector<Variant> editors_, browsers_, daemons_, backups_, agents_, shells_;
  ScenarioData data_;
  std::map<std::string, Counts> counts_;
  std::string init_;
  std::string explorer_;
  bool init_announced_ = false;
  std::int64_t clock_ = 1'600'000'000'000'000'000;
  int next_pid_ = 1;
};

}  // namespace

ScenarioData generate_scenario(const ScenarioSpec& spec) {
  spec.validate();
  return Generator(spec).run();
}

SensitivityConfig scenario_sensitivity() {
  SensitivityConfig c;
  c.sensitive_file_patterns = {"/etc/shadow", "/etc/passwd", "/etc/sudoers", "*/.ssh/*", "*/secret/*"};
  c.sensitive_instructions = {"whoami", "systeminfo", "tasklist", "netstat", "ipconfig", "hostname"};
  for (int i = 0; i < kIocSockets; ++i) c.ioc_addresses.insert("203.0.113." + std::to_string(10 + i) + ":8443");
  c.ioc_file_hashes = {"e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"};
  c.ioc_registry_keys = {kIocRunKey};
  return c;
}

void write_ground_truth(const ScenarioData& data, std::ostream& out) {
  for (const auto& [key, kind] : data.processes) {
    out << json{{"key", key}, {"label", kind == PlantKind::kBenign ? "benign" : "malicious"}, {"role", to_string(kind)}}
               .dump()
        << '\n';
  }
}

std::map<std::string, int> read_ground_truth(std::istream& in) {
  std::map<std::string, int> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto label = j.at("label").get<std::string>();
      if (label != "benign" && label != "malicious") throw ParseError(line_no, "label must be benign or malicious");
      out[j.at("key").get<std::string>()] = label == "malicious" ? 1 : 0;
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace aptmcl
