#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "aptmcl/pipeline.hpp"

namespace aptmcl {

// Subcommand bodies behind the command-line front end. Each reads the
// artifacts of the previous stage from the configured directories and
// throws ArtifactError naming the producing subcommand when one is missing.

// Report directory after applying the APTMCL_REPORT_DIR override.
std::filesystem::path report_dir(const PipelineConfig& config);

void cmd_synth(const PipelineConfig& config);
void cmd_ingest(const PipelineConfig& config);
void cmd_train(const PipelineConfig& config);
void cmd_cotrain(const PipelineConfig& config);
void cmd_detect(const PipelineConfig& config);
// Scores the detection report; with experiment=true runs every variant instead.
void cmd_eval(const PipelineConfig& config, bool experiment);

}  // namespace aptmcl
