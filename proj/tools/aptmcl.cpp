#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "aptmcl/commands.hpp"
#include "aptmcl/errors.hpp"

int main(int argc, char** argv) {
  using namespace aptmcl;
  CLI::App app{"Multi-view co-training detector for provenance graphs"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string strategy;
  std::string view;
  app.add_option("--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed; derives every component seed");
  app.add_option("--strategy", strategy, "fusion strategy")->check(CLI::IsMember({"bv", "mv", "sv", "st"}));
  app.add_option("--view", view, "feature views")->check(CLI::IsMember({"structural", "behavioral", "both"}));

  auto* synth = app.add_subcommand("synth", "generate a synthetic scenario and its ground truth");
  std::string scenario;
  synth->add_option("--scenario", scenario, "scenario kind")
      ->check(CLI::IsMember({"benign_background", "ransomware_burst", "collection_exfiltration", "mixed"}));
  auto* ingest = app.add_subcommand("ingest", "build the provenance graph from the event file");
  auto* train = app.add_subcommand("train", "train per-view encoders and anomaly forests");
  auto* cotrain = app.add_subcommand("cotrain", "co-train the supervised sub-models and the meta-model");
  auto* detect = app.add_subcommand("detect", "write the detection report");
  auto* eval = app.add_subcommand("eval", "score the detection report");
  bool experiment = false;
  eval->add_flag("--experiment", experiment, "run every variant and write the comparison table");

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig config = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (seed) config.apply_seed(*seed);
    if (!strategy.empty()) config.strategy = parse_strategy(strategy);
    if (!view.empty()) config.views = parse_view_selection(view);
    if (!scenario.empty()) config.scenario.kind = parse_scenario(scenario);
    config.validate();

    if (synth->parsed()) cmd_synth(config);
    else if (ingest->parsed()) cmd_ingest(config);
    else if (train->parsed()) cmd_train(config);
    else if (cotrain->parsed()) cmd_cotrain(config);
    else if (detect->parsed()) cmd_detect(config);
    else if (eval->parsed()) cmd_eval(config, experiment);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
