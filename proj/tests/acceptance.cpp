// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <numeric>
#include <sstream>
#include <string>

#include "aptmcl/commands.hpp"
#include "aptmcl/eval.hpp"
#include "aptmcl/fusion.hpp"
#include "aptmcl/iforest.hpp"
#include "aptmcl/pipeline.hpp"
#include "support.hpp"

using namespace aptmcl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Outcome features() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto c = testsupport::random_case(rng, 5 + static_cast<int>(rng() % 80));
    if (auto err = testsupport::check_features(c)) return {false, "graph " + std::to_string(i) + ": " + *err};
  }
  const double s = seconds_since(t0);
  return {s < 60.0, fmt("1000 graphs match both oracles in %.1fs", s)};
}

Outcome gradients() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto c = testsupport::gradient_case(seed, 10);
    worst = std::max(worst, testsupport::max_gradient_error(c, 1e-5));
  }
  return {worst <= 1e-4, fmt("max relative error %.2e over 10 graphs of 10 nodes", worst)};
}

Outcome encoder() {
  const auto t0 = std::chrono::steady_clock::now();
  const ScenarioData data = generate_scenario(ScenarioSpec{});
  const ProvenanceGraph g = build_graph(data.events);
  const auto types = node_type_labels(g);
  const auto sensitivity = scenario_sensitivity();
  std::string detail = std::to_string(g.node_count()) + " nodes:";
  bool pass = true;
  for (View v : {View::kStructural, View::kBehavioral}) {
    const Matrix x = encoder_input(g, v, sensitivity);
    const EncoderModel m = train_encoder(g, x, types, TrainConfig{});
    const double acc = type_accuracy(m, g, x, types);
    pass = pass && acc >= 0.95;
    detail += " " + std::string(to_string(v)) + fmt(" %.4f", acc);
  }
  const double s = seconds_since(t0);
  return {pass && s < 300.0, detail + fmt(" in %.1fs", s)};
}

Outcome iforest() {
  const Matrix x = testsupport::planted_cloud(1);
  const auto f = IsolationForest::fit(x, IsolationForestParams{});
  const auto s = f.score_rows(x);
  std::vector<int> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + 5, order.end(), [&](int a, int b) { return s[a] > s[b]; });
  std::vector<int> top(order.begin(), order.begin() + 5);
  std::sort(top.begin(), top.end());
  const bool planted = top == std::vector<int>{251, 252, 253, 254, 255};
  const bool bounded = std::all_of(s.begin(), s.end(), [](double v) { return v > 0.0 && v < 1.0; });
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  return {planted && bounded, std::string(planted ? "top 5 are the planted points" : "top 5 differ from the planted points") +
                                  fmt(", scores in [%.3f, %.3f]", *lo, *hi)};
}

Outcome cotraining() {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    if (auto err = testsupport::check_cotrain_run(seed)) return {false, "run " + std::to_string(seed) + ": " + *err};
  }
  return {true, "200 randomized runs keep every invariant"};
}

// flags from a detection report, key -> verdict and per-view probabilities
struct ReportRow {
  int verdict;
  double sm, bm;
};

std::map<std::string, ReportRow> read_report(const fs::path& path) {
  std::map<std::string, ReportRow> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("partition") != "test") continue;
    rows[j.at("key")] = {j.at("verdict") == "malicious" ? kMalicious : kBenign, j.at("probability").at("structural"),
                         j.at("probability").at("behavioral")};
  }
  return rows;
}

Outcome fusion(const PipelineConfig& base) {
  // identities on the grid
  std::size_t grid = 0;
  for (int i = 0; i <= 100; ++i) {
    for (int k = 0; k <= 100; ++k) {
      const auto p = ProbPair::from_malicious(i / 100.0, k / 100.0);
      const int sm = p.sm_label(), bm = p.bm_label();
      const double mp = (p.mp_sm + p.mp_bm) / 2, bp = (p.bp_sm + p.bp_bm) / 2;
      const int sv = mp > bp ? kMalicious : kBenign;
      if (fuse_bv(p) != (sm & bm) || fuse_mv(p) != (sm | bm) || fuse_sv(p).label != sv) {
        return {false, fmt("grid point (%.2f, %.2f) breaks an identity", i / 100.0, k / 100.0)};
      }
      ++grid;
    }
  }
  // and on the mixed scenario's test set, through the detection reports
  std::size_t rows = 0;
  for (auto strategy : {FusionStrategy::kBV, FusionStrategy::kMV}) {
    PipelineConfig c = base;
    c.strategy = strategy;
    c.paths.report_dir = base.paths.report_dir.string() + "_" + std::string(to_string(strategy));
    cmd_detect(c);
    for (const auto& [key, r] : read_report(c.paths.report_dir / "detections.jsonl")) {
      const int sm = r.sm > 0.5, bm = r.bm > 0.5;
      const int want = strategy == FusionStrategy::kBV ? (sm & bm) : (sm | bm);
      if (r.verdict != want) return {false, std::string(to_string(strategy)) + " verdict of " + key + " breaks the identity"};
      ++rows;
    }
  }
  return {true, std::to_string(grid) + " grid pairs and " + std::to_string(rows) + " test-set verdicts agree"};
}

struct MixedRun {
  ExperimentReport report;
  double seconds;
};

double f1(const ExperimentReport& r, const char* variant, const char* strategy, double thres = 0.65) {
  const auto* row = r.find(variant, strategy, thres);
  return row ? row->metrics.macro_f1 : -1.0;
}

Outcome ablation(const MixedRun& run) {
  const auto& r = run.report;
  const double st = f1(r, "APT-MCL", "st"), s = f1(r, "SFV", "-"), b = f1(r, "BFV", "-"), c = f1(r, "CON", "-");
  const bool pass = st >= s + 0.05 && st >= b + 0.05 && st >= c + 0.05 && run.seconds < 900.0;
  return {pass, fmt("ST %.4f vs SFV %.4f, BFV %.4f, CON %.4f", st, s, b, c) + fmt(" in %.1fs", run.seconds)};
}

Outcome strategies(const MixedRun& run) {
  const auto& r = run.report;
  const double st = f1(r, "APT-MCL", "st"), bv = f1(r, "APT-MCL", "bv"), mv = f1(r, "APT-MCL", "mv");
  const double rbv = r.find("APT-MCL", "bv", 0.65)->metrics.recall, rmv = r.find("APT-MCL", "mv", 0.65)->metrics.recall;
  return {st >= bv && st >= mv && rmv >= rbv,
          fmt("ST %.4f, BV %.4f, MV %.4f", st, bv, mv) + fmt("; recall MV %.4f, BV %.4f", rmv, rbv)};
}

Outcome sweep(const MixedRun& run) {
  const auto& r = run.report;
  const double lo = f1(r, "APT-MCL", "st", 0.5), mid = f1(r, "APT-MCL", "st", 0.65), hi = f1(r, "APT-MCL", "st", 0.8);
  return {mid >= lo && mid >= hi && lo >= 0 && hi >= 0, fmt("0.50: %.4f  0.65: %.4f  0.80: %.4f", lo, mid, hi)};
}

PipelineConfig project(const std::string& name) {
  const auto dir = testsupport::scratch_dir(name);
  PipelineConfig c;
  c.paths.events = dir / "events.jsonl";
  c.paths.ground_truth = dir / "ground_truth.jsonl";
  c.paths.graph_dir = dir / "graph";
  c.paths.model_dir = dir / "models";
  c.paths.report_dir = dir / "reports";
  return c;
}

void end_to_end(const PipelineConfig& c) {
  cmd_synth(c);
  cmd_ingest(c);
  cmd_train(c);
  cmd_cotrain(c);
  cmd_detect(c);
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, Outcome>> results;
  auto record = [&](int n, const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    results.emplace_back(std::to_string(n) + " " + name, o);
  };

  // the end-to-end runs print progress; keep it off the result lines
  std::ostringstream quiet;
  auto* saved = std::cout.rdbuf(quiet.rdbuf());

  const PipelineConfig a = project("accept_a");
  const PipelineConfig b = project("accept_b");

  record(1, "feature extraction", features);
  record(2, "encoder gradients", gradients);
  record(3, "encoder node types", encoder);
  record(4, "isolation forest", iforest);
  record(5, "co-training safety", cotraining);

  std::optional<MixedRun> mixed;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineConfig c;
    const ScenarioData data = generate_scenario(c.scenario);
    ExperimentReport report = run_experiment(c, build_graph(data.events), data.labels());
    mixed = MixedRun{std::move(report), seconds_since(t0)};
  } catch (const std::exception& e) {
    std::cout.rdbuf(saved);
    std::printf("mixed scenario failed: %s\n", e.what());
    std::cout.rdbuf(quiet.rdbuf());
  }

  bool runs_ok = true;
  try {
    end_to_end(a);
    end_to_end(b);
  } catch (const std::exception& e) {
    runs_ok = false;
    results.emplace_back("10 determinism", Outcome{false, std::string("end-to-end run threw: ") + e.what()});
  }

  record(6, "fusion identities", [&] { return fusion(a); });
  auto mixed_check = [&](Outcome (*f)(const MixedRun&)) {
    return [&, f] { return mixed ? f(*mixed) : Outcome{false, "mixed scenario did not run"}; };
  };
  record(7, "ablation margin", mixed_check(ablation));
  record(8, "fusion strategies", mixed_check(strategies));
  record(9, "threshold sweep", mixed_check(sweep));
  if (runs_ok) {
    record(10, "determinism", [&] {
      const auto ra = testsupport::slurp(a.paths.report_dir / "detections.jsonl");
      const auto rb = testsupport::slurp(b.paths.report_dir / "detections.jsonl");
      return Outcome{!ra.empty() && ra == rb, std::to_string(ra.size()) + " bytes, " +
                                                  (ra == rb ? "identical" : "different")};
    });
  }
  std::cout.rdbuf(saved);

  std::sort(results.begin(), results.end(), [](const auto& x, const auto& y) {
    return std::stoi(x.first) < std::stoi(y.first);
  });
  int failed = 0;
  for (const auto& [name, o] : results) {
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
