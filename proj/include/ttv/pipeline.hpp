#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ttv/augment.hpp"
#include "ttv/labeling.hpp"
#include "ttv/scene.hpp"
#include "ttv/vit.hpp"

namespace ttv {

// Whole-run configuration. One master seed derives every stage's randomness;
// stage boundaries are files under out_dir.
struct PipelineConfig {
  std::string out_dir;

  std::uint64_t seed = 1;
  int threads = 1;

  // Data source: synthetic corpus by default, or externally provided files
  // when feed/avl/manifest are all set.
  std::string feed_path;
  std::string avl_path;
  std::string manifest_path;
  SynthParams synth;

  ScopePolicy scope = ScopePolicy::PerDirection;

  int augment_passes = 6;

  ViTConfig vit;
  TrainOptions train;

  int folds = 5;
  bool per_direction_models = true;
  bool regress_lookahead = false;

  bool ingest_mode() const {
    return !feed_path.empty() || !avl_path.empty() || !manifest_path.empty();
  }
};

// Parses a key=value config file ('#' comments, blank lines ignored) and
// normalizes it. All violations are reported together; an empty error list
// means the config is ready to run.
struct ConfigLoadResult {
  PipelineConfig config;
  std::vector<std::string> errors;
};

ConfigLoadResult load_pipeline_config(const std::string& path);
ConfigLoadResult validate_pipeline_config(const std::map<std::string, std::string>& keys);

struct StageRecord {
  std::string name;
  std::string status;  // "ok", "failed", "skipped"
  std::map<std::string, std::string> metrics;
};

struct RunSummary {
  bool ok = false;
  std::string failed_stage;
  std::string error;
  std::vector<StageRecord> stages;
};

// Executes synth (or ingest) -> trigger -> label -> augment -> folds ->
// train -> eval -> regress. A stage failure halts the run but preserves
// completed artifacts and the summary. summary.json under out_dir is
// deterministic for a fixed config (timings go to run_log.txt).
RunSummary run_pipeline(const PipelineConfig& config);

}  // namespace ttv
