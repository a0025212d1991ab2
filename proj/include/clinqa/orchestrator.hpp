#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clinqa/answer_builder.hpp"
#include "clinqa/classifier.hpp"
#include "clinqa/llm_gateway.hpp"
#include "clinqa/metrics.hpp"

namespace clinqa {

/// Connection plus sampling parameters for one pipeline stage. Classifier
/// and generator stages may point at different models (e.g. a small model
/// for sentence selection driving a larger one for generation).
struct StageConfig {
  BackendProfile profile;
  double temperature = 0.0;
  int max_output_tokens = 256;
};

struct RunPaths {
  std::string cases;
  std::string shots;
  std::string references;
  std::string run_dir = "run";
};

struct CalibrationConfig {
  std::vector<int> essential_grid{1, 2, 3, 4, 5, 6};
  std::vector<int> supplementary_grid{1, 2};
  std::optional<std::string> holdout_case;  // excluded from sweep scoring
};

/// Full pipeline configuration. Loadable from a JSON document; every CLI
/// flag overrides its config key.
struct RunConfig {
  std::uint64_t seed = 0;
  ThresholdPolicy policy;  // policy.n_samples is the sample budget
  SelectionMode mode = SelectionMode::lenient;
  int shots_k = 30;
  std::size_t word_limit = 75;
  int workers = 4;
  bool use_cache = true;

  StageConfig classify_stage{BackendProfile{}, 1.0, 8};
  StageConfig generate_stage{BackendProfile{}, 0.0, 256};

  // generation behavior
  RepairOptions repair;
  bool fallback_on_no_essential = false;
  int parse_retries = 2;

  AggregateConfig aggregate;
  std::map<std::string, std::string> external_metric_files;  // name -> path
  CalibrationConfig calibration;
  RunPaths paths;

  // "scripted:PATH" or "oracle:RATE"; empty means real HTTP backends.
  std::string mock_spec;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig from_json_file(const std::string& path);
};

/// Fixed artifact names inside the run directory.
namespace run_files {
inline constexpr const char* kLabels = "labels.jsonl";
inline constexpr const char* kAudit = "audit.jsonl";
inline constexpr const char* kAnswers = "answers.jsonl";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kPerCase = "per_case.tsv";
inline constexpr const char* kCalibration = "calibration.tsv";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kCache = "cache.jsonl";
}  // namespace run_files

/// How much work a stage actually pushed to its backend; cache hits keep
/// backend_calls at zero on reruns.
struct StageStats {
  std::uint64_t backend_calls = 0;
  std::size_t cache_size = 0;
};

/// Classifies every sentence of every case; writes the labels and audit
/// files into the run directory.
StageStats cmd_classify(const RunConfig& config);

/// Composes one answer per case from the labels file; writes the answers
/// file. All emitted answers are parseable.
StageStats cmd_generate(const RunConfig& config);

/// Scores the answers file against gold labels and references; writes the
/// report and per-case table.
EvaluationReport cmd_evaluate(const RunConfig& config);

/// classify -> generate -> evaluate, then writes the run manifest. A stage
/// failure halts the run; artifacts written so far stay on disk.
EvaluationReport cmd_run(const RunConfig& config);

/// One row of the threshold sweep. Per-class scores are one-vs-rest over
/// all sentences; lenient_micro pools the binary relevant-vs-not decision.
struct CalibrationRow {
  int essential_min = 0;
  int supplementary_min = 0;
  PRF essential, supplementary, not_relevant;
  PRF lenient_micro;
  bool best = false;
};

/// Recomputes labels from the stored audit tallies over the configured
/// threshold grid; never issues backend calls. Writes calibration.tsv and
/// returns the rows with the best one (by lenient micro F1) flagged.
std::vector<CalibrationRow> cmd_calibrate(const RunConfig& config);
std::string calibration_table(const std::vector<CalibrationRow>& rows);

/// Manifest: config snapshot, timestamps, fnv1a64 digests of every stage
/// input and output file.
nlohmann::json read_manifest(const std::string& run_dir);

/// Recomputes digests for all files recorded in the manifest; returns the
/// paths that changed (empty means intact).
std::vector<std::string> verify_manifest(const std::string& run_dir);

}  // namespace clinqa
