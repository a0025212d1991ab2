#include "clinqa/orchestrator.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "clinqa/error.hpp"
#include "clinqa/util.hpp"

namespace clinqa {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- config ------------------------------------------------------------------

void RunConfig::validate() const {
  policy.validate();
  if (shots_k < 3 || shots_k % 3 != 0) {
    throw ContractError("config: shots k must be a positive multiple of 3");
  }
  if (word_limit < 1) throw ContractError("config: word_limit must be >= 1");
  if (workers < 1) throw ContractError("config: workers must be >= 1");
  if (parse_retries < 0) throw ContractError("config: parse_retries must be >= 0");
  if (paths.cases.empty()) throw ContractError("config: cases path is required");
}

namespace {

json profile_to_json(const BackendProfile& p) {
  return json{{"endpoint", p.endpoint},
              {"model", p.model_name},
              {"timeout_ms", p.request_timeout.count()},
              {"max_retries", p.max_retries},
              {"max_in_flight", p.max_in_flight},
              {"backoff_ms", p.backoff_base.count()},
              {"api_key_env", p.api_key_env}};
}

BackendProfile profile_from_json(const json& doc) {
  BackendProfile p;
  p.endpoint = doc.value("endpoint", p.endpoint);
  p.model_name = doc.value("model", p.model_name);
  p.request_timeout = std::chrono::milliseconds(doc.value("timeout_ms", p.request_timeout.count()));
  p.max_retries = doc.value("max_retries", p.max_retries);
  p.max_in_flight = doc.value("max_in_flight", p.max_in_flight);
  p.backoff_base = std::chrono::milliseconds(doc.value("backoff_ms", p.backoff_base.count()));
  p.api_key_env = doc.value("api_key_env", p.api_key_env);
  return p;
}

json stage_to_json(const StageConfig& s) {
  json doc = profile_to_json(s.profile);
  doc["temperature"] = s.temperature;
  doc["max_output_tokens"] = s.max_output_tokens;
  return doc;
}

StageConfig stage_from_json(const json& doc, const StageConfig& defaults) {
  StageConfig s = defaults;
  s.profile = profile_from_json(doc);
  s.temperature = doc.value("temperature", defaults.temperature);
  s.max_output_tokens = doc.value("max_output_tokens", defaults.max_output_tokens);
  return s;
}

std::string mode_name(ThresholdMode mode) {
  return mode == ThresholdMode::absolute ? "absolute" : "fractional";
}

}  // namespace

json RunConfig::to_json() const {
  json doc;
  doc["seed"] = seed;
  doc["samples"] = policy.n_samples;
  doc["shots"] = shots_k;
  doc["word_limit"] = word_limit;
  doc["workers"] = workers;
  doc["use_cache"] = use_cache;
  doc["mode"] = std::string(to_string(mode));
  doc["threshold"] = json{{"mode", mode_name(policy.mode)},
                          {"essential_min", policy.essential_min},
                          {"supplementary_min", policy.supplementary_min},
                          {"fraction", policy.fraction},
                          {"rounding", policy.rounding == FractionRounding::ceil ? "ceil" : "floor"},
                          {"single_essential_promotes", policy.single_essential_promotes}};
  doc["classify_backend"] = stage_to_json(classify_stage);
  doc["generate_backend"] = stage_to_json(generate_stage);
  doc["generation"] = json{{"strip_uncited", repair.strip_uncited},
                           {"fallback_on_no_essential", fallback_on_no_essential},
                           {"parse_retries", parse_retries}};
  doc["evaluation"] = json{{"factuality", aggregate.factuality_source},
                           {"relevance_metrics", aggregate.relevance_metrics},
                           {"external_metrics", external_metric_files}};
  doc["calibration"] = json{{"essential_grid", calibration.essential_grid},
                            {"supplementary_grid", calibration.supplementary_grid}};
  if (calibration.holdout_case) doc["calibration"]["holdout_case"] = *calibration.holdout_case;
  doc["paths"] = json{{"cases", paths.cases},
                      {"shots", paths.shots},
                      {"references", paths.references},
                      {"run_dir", paths.run_dir}};
  doc["mock"] = mock_spec;
  return doc;
}

RunConfig RunConfig::from_json(const json& doc) {
  RunConfig config;
  config.seed = doc.value("seed", config.seed);
  config.policy.n_samples = doc.value("samples", config.policy.n_samples);
  config.shots_k = doc.value("shots", config.shots_k);
  config.word_limit = doc.value("word_limit", config.word_limit);
  config.workers = doc.value("workers", config.workers);
  config.use_cache = doc.value("use_cache", config.use_cache);
  if (doc.contains("mode")) {
    const std::string mode = doc["mode"].get<std::string>();
    if (mode == "strict") {
      config.mode = SelectionMode::strict;
    } else if (mode == "lenient") {
      config.mode = SelectionMode::lenient;
    } else {
      throw Error("config: mode must be \"strict\" or \"lenient\"");
    }
  }
  if (doc.contains("threshold")) {
    const json& t = doc["threshold"];
    config.policy.essential_min = t.value("essential_min", config.policy.essential_min);
    config.policy.supplementary_min = t.value("supplementary_min", config.policy.supplementary_min);
    config.policy.fraction = t.value("fraction", config.policy.fraction);
    if (t.contains("mode")) {
      const std::string m = t["mode"].get<std::string>();
      if (m == "absolute") {
        config.policy.mode = ThresholdMode::absolute;
      } else if (m == "fractional") {
        config.policy.mode = ThresholdMode::fractional;
      } else {
        throw Error("config: threshold mode must be \"absolute\" or \"fractional\"");
      }
    }
    if (t.contains("rounding")) {
      const std::string r = t["rounding"].get<std::string>();
      if (r == "ceil") {
        config.policy.rounding = FractionRounding::ceil;
      } else if (r == "floor") {
        config.policy.rounding = FractionRounding::floor;
      } else {
        throw Error("config: threshold rounding must be \"ceil\" or \"floor\"");
      }
    }
    config.policy.single_essential_promotes =
        t.value("single_essential_promotes", config.policy.single_essential_promotes);
  }
  if (doc.contains("classify_backend")) {
    config.classify_stage = stage_from_json(doc["classify_backend"], config.classify_stage);
  }
  if (doc.contains("generate_backend")) {
    config.generate_stage = stage_from_json(doc["generate_backend"], config.generate_stage);
  }
  if (doc.contains("generation")) {
    const json& g = doc["generation"];
    config.repair.strip_uncited = g.value("strip_uncited", config.repair.strip_uncited);
    config.fallback_on_no_essential =
        g.value("fallback_on_no_essential", config.fallback_on_no_essential);
    config.parse_retries = g.value("parse_retries", config.parse_retries);
  }
  if (doc.contains("evaluation")) {
    const json& e = doc["evaluation"];
    config.aggregate.factuality_source = e.value("factuality", config.aggregate.factuality_source);
    if (e.contains("relevance_metrics")) {
      config.aggregate.relevance_metrics = e["relevance_metrics"].get<std::vector<std::string>>();
    }
    if (e.contains("external_metrics")) {
      config.external_metric_files =
          e["external_metrics"].get<std::map<std::string, std::string>>();
    }
  }
  if (doc.contains("calibration")) {
    const json& c = doc["calibration"];
    if (c.contains("essential_grid")) {
      config.calibration.essential_grid = c["essential_grid"].get<std::vector<int>>();
    }
    if (c.contains("supplementary_grid")) {
      config.calibration.supplementary_grid = c["supplementary_grid"].get<std::vector<int>>();
    }
    if (c.contains("holdout_case")) {
      config.calibration.holdout_case = c["holdout_case"].get<std::string>();
    }
  }
  if (doc.contains("paths")) {
    const json& p = doc["paths"];
    config.paths.cases = p.value("cases", config.paths.cases);
    config.paths.shots = p.value("shots", config.paths.shots);
    config.paths.references = p.value("references", config.paths.references);
    config.paths.run_dir = p.value("run_dir", config.paths.run_dir);
  }
  config.mock_spec = doc.value("mock", config.mock_spec);
  return config;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  json doc = json::parse(read_text_file(path), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error("config file is not a JSON object: " + path);
  }
  return from_json(doc);
}

// ---- shared plumbing ------------------------------------------------------------

namespace {

std::string run_path(const RunConfig& config, const char* name) {
  return (fs::path(config.paths.run_dir) / name).string();
}

void ensure_run_dir(const RunConfig& config) {
  fs::create_directories(config.paths.run_dir);
}

/// Fills in an endpoint from the environment when the config left it blank.
BackendProfile resolve_profile(BackendProfile profile) {
  if (profile.endpoint.empty()) {
    if (const char* endpoint = std::getenv("CLINQA_ENDPOINT"); endpoint != nullptr) {
      profile.endpoint = endpoint;
    }
  }
  return profile;
}

struct StageRuntime {
  Gateway gateway;
  std::shared_ptr<ResponseCache> cache;
  std::string cache_path;

  void flush_cache() const {
    if (cache) cache->save(cache_path);
  }
};

StageRuntime make_stage_runtime(const RunConfig& config, const StageConfig& stage,
                                const std::vector<CaseRecord>& cases) {
  std::shared_ptr<Backend> backend;
  if (!config.mock_spec.empty()) {
    backend = make_mock_backend(config.mock_spec, cases, config.seed);
  } else {
    const BackendProfile profile = resolve_profile(stage.profile);
    if (profile.endpoint.empty()) {
      throw Error("no backend configured: pass --mock, a backend URL, or set CLINQA_ENDPOINT");
    }
    backend = std::make_shared<HttpBackend>(profile);
  }

  std::shared_ptr<ResponseCache> cache;
  std::string cache_path;
  if (config.use_cache) {
    cache_path = run_path(config, run_files::kCache);
    cache = ResponseCache::load(cache_path);
  }
  const int max_in_flight = std::max(1, stage.profile.max_in_flight);
  return StageRuntime{Gateway(std::move(backend), cache, max_in_flight), cache, cache_path};
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_digest(const std::string& path) { return fnv1a64_hex(read_text_file(path)); }

}  // namespace

// ---- classify ---------------------------------------------------------------------

StageStats cmd_classify(const RunConfig& config) {
  config.validate();
  const std::vector<CaseRecord> cases = parse_cases_file(config.paths.cases);
  if (config.paths.shots.empty()) throw Error("classify requires a shots pool path");
  const std::vector<FewShotExample> pool = parse_shots_pool_file(config.paths.shots);

  ensure_run_dir(config);
  StageRuntime runtime = make_stage_runtime(config, config.classify_stage, cases);

  ClassifyOptions options;
  options.shots_k = config.shots_k;
  options.temperature = config.classify_stage.temperature;
  options.max_output_tokens = config.classify_stage.max_output_tokens;
  options.global_seed = config.seed;

  std::vector<CaseClassification> results(cases.size());
  parallel_for_index(cases.size(), config.workers, [&](std::size_t i) {
    results[i] = classify_case(cases[i], config.policy, pool, runtime.gateway, options);
  });

  CaseLabels labels;
  std::vector<AuditRecord> audit;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    labels[cases[i].case_id] = results[i].labels;
    for (auto& [sentence_id, sentence_audit] : results[i].audit) {
      audit.push_back({cases[i].case_id, sentence_id, std::move(sentence_audit)});
    }
  }

  std::ofstream labels_out(run_path(config, run_files::kLabels), std::ios::trunc);
  if (!labels_out) throw Error("unable to write labels file");
  write_labels(cases, labels, labels_out);

  std::ofstream audit_out(run_path(config, run_files::kAudit), std::ios::trunc);
  if (!audit_out) throw Error("unable to write audit file");
  write_audit(audit, audit_out);

  runtime.flush_cache();
  return StageStats{runtime.gateway.backend_calls(),
                    runtime.cache ? runtime.cache->size() : 0};
}

// ---- generate ----------------------------------------------------------------------

StageStats cmd_generate(const RunConfig& config) {
  config.validate();
  const std::vector<CaseRecord> cases = parse_cases_file(config.paths.cases);
  const CaseLabels labels = parse_labels_file(run_path(config, run_files::kLabels));

  ensure_run_dir(config);
  StageRuntime runtime = make_stage_runtime(config, config.generate_stage, cases);

  GenerateOptions options;
  options.mode = config.mode;
  options.word_limit = config.word_limit;
  options.summarizer_temperature = config.generate_stage.temperature;
  options.summarizer_max_tokens = config.generate_stage.max_output_tokens;
  options.parse_retries = config.parse_retries;
  options.repair = config.repair;
  options.fallback_on_no_essential = config.fallback_on_no_essential;

  std::vector<std::string> raw(cases.size());
  parallel_for_index(cases.size(), config.workers, [&](std::size_t i) {
    const CaseRecord& rec = cases[i];
    const auto it = labels.find(rec.case_id);
    if (it == labels.end()) throw Error("no labels for case \"" + rec.case_id + "\"");
    std::mt19937_64 rng(SeedMixer(config.seed).mix("generate").mix(rec.case_id).value());
    raw[i] = emit_answer(generate_answer(rec, it->second, runtime.gateway, rng, options));
  });

  std::vector<std::string> order;
  std::map<std::string, std::string> answers;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    order.push_back(cases[i].case_id);
    answers[cases[i].case_id] = raw[i];
  }
  std::ofstream answers_out(run_path(config, run_files::kAnswers), std::ios::trunc);
  if (!answers_out) throw Error("unable to write answers file");
  write_answers(order, answers, answers_out);

  runtime.flush_cache();
  return StageStats{runtime.gateway.backend_calls(),
                    runtime.cache ? runtime.cache->size() : 0};
}

// ---- evaluate -----------------------------------------------------------------------

EvaluationReport cmd_evaluate(const RunConfig& config) {
  config.validate();
  const std::vector<CaseRecord> cases = parse_cases_file(config.paths.cases);
  const auto answers = parse_answers_file(run_path(config, run_files::kAnswers));
  if (config.paths.references.empty()) throw Error("evaluate requires a references path");
  const auto references = parse_references_file(config.paths.references);

  EvalOptions options;
  options.word_limit = config.word_limit;
  options.aggregate = config.aggregate;
  for (const auto& [name, path] : config.external_metric_files) {
    std::ifstream in(path);
    if (!in) throw Error("unable to read external metric file: " + path);
    std::map<std::string, double> scores;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      json record = json::parse(line, nullptr, false);
      if (record.is_discarded() || !record.contains("case_id") || !record.contains("score")) {
        throw ParseError(line_no, "external metric records must be {\"case_id\", \"score\"}");
      }
      scores[record["case_id"].get<std::string>()] = record["score"].get<double>();
    }
    options.external_metrics[name] = std::move(scores);
  }

  const EvaluationReport report = evaluate_answers(cases, answers, references, options);

  ensure_run_dir(config);
  write_text_file(run_path(config, run_files::kReport), report_to_json(report));
  write_text_file(run_path(config, run_files::kPerCase), report_per_case_table(report));
  return report;
}

// ---- run ----------------------------------------------------------------------------

EvaluationReport cmd_run(const RunConfig& config) {
  config.validate();
  const std::string created_at = iso_timestamp();

  cmd_classify(config);
  cmd_generate(config);
  EvaluationReport report = cmd_evaluate(config);

  json manifest;
  manifest["created_at"] = created_at;
  manifest["finished_at"] = iso_timestamp();
  manifest["config"] = config.to_json();
  json stages;
  stages["classify"] = json{{"inputs",
                             json{{"cases", file_digest(config.paths.cases)},
                                  {"shots", file_digest(config.paths.shots)}}},
                            {"outputs",
                             json{{"labels", file_digest(run_path(config, run_files::kLabels))},
                                  {"audit", file_digest(run_path(config, run_files::kAudit))}}}};
  stages["generate"] =
      json{{"inputs", json{{"labels", file_digest(run_path(config, run_files::kLabels))}}},
           {"outputs", json{{"answers", file_digest(run_path(config, run_files::kAnswers))}}}};
  stages["evaluate"] =
      json{{"inputs",
            json{{"answers", file_digest(run_path(config, run_files::kAnswers))},
                 {"references", file_digest(config.paths.references)}}},
           {"outputs", json{{"report", file_digest(run_path(config, run_files::kReport))}}}};
  manifest["stages"] = std::move(stages);
  // Inputs keep their configured paths; artifacts are named relative to the
  // run directory. Both carry digests so integrity can be re-verified.
  manifest["inputs"] = json{{"cases", config.paths.cases},
                            {"shots", config.paths.shots},
                            {"references", config.paths.references}};
  manifest["artifacts"] = json{{"labels", run_files::kLabels},
                               {"audit", run_files::kAudit},
                               {"answers", run_files::kAnswers},
                               {"report", run_files::kReport}};
  json digests;
  for (const auto& [name, path] : manifest["inputs"].items()) {
    digests[name] = file_digest(path.get<std::string>());
  }
  for (const auto& [name, path] : manifest["artifacts"].items()) {
    digests[name] =
        file_digest((fs::path(config.paths.run_dir) / path.get<std::string>()).string());
  }
  manifest["digests"] = std::move(digests);
  write_text_file(run_path(config, run_files::kManifest), manifest.dump(2) + "\n");
  return report;
}

nlohmann::json read_manifest(const std::string& run_dir) {
  const std::string path = (fs::path(run_dir) / run_files::kManifest).string();
  json doc = json::parse(read_text_file(path), nullptr, false);
  if (doc.is_discarded()) throw Error("malformed manifest: " + path);
  return doc;
}

std::vector<std::string> verify_manifest(const std::string& run_dir) {
  const json manifest = read_manifest(run_dir);
  std::vector<std::string> mismatched;
  const auto check = [&](const std::string& name, const fs::path& resolved) {
    const std::string expected = manifest.at("digests").at(name).get<std::string>();
    std::string actual;
    try {
      actual = file_digest(resolved.string());
    } catch (const Error&) {
      actual = "<missing>";
    }
    if (actual != expected) mismatched.push_back(resolved.string());
  };
  for (const auto& [name, path] : manifest.at("inputs").items()) {
    check(name, fs::path(path.get<std::string>()));
  }
  for (const auto& [name, path] : manifest.at("artifacts").items()) {
    check(name, fs::path(run_dir) / path.get<std::string>());
  }
  return mismatched;
}

// ---- calibrate -----------------------------------------------------------------------

namespace {

struct ClassCounts {
  ConfusionCounts essential, supplementary, not_relevant, lenient;
};

void accumulate_class_counts(ClassCounts& counts, RelevanceLabel predicted, RelevanceLabel gold) {
  const auto bump = [&](ConfusionCounts& c, RelevanceLabel cls) {
    const bool p = predicted == cls;
    const bool g = gold == cls;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  };
  bump(counts.essential, RelevanceLabel::essential);
  bump(counts.supplementary, RelevanceLabel::supplementary);
  bump(counts.not_relevant, RelevanceLabel::not_relevant);

  const bool p_rel = predicted != RelevanceLabel::not_relevant;
  const bool g_rel = gold != RelevanceLabel::not_relevant;
  if (p_rel && g_rel) ++counts.lenient.tp;
  else if (p_rel) ++counts.lenient.fp;
  else if (g_rel) ++counts.lenient.fn;
  else ++counts.lenient.tn;
}

}  // namespace

std::vector<CalibrationRow> cmd_calibrate(const RunConfig& config) {
  config.validate();
  const std::vector<CaseRecord> cases = parse_cases_file(config.paths.cases);
  const std::vector<AuditRecord> audit = parse_audit_file(run_path(config, run_files::kAudit));
  if (audit.empty()) throw Error("audit file is empty; run classify first");

  std::map<std::string, const CaseRecord*> by_id;
  for (const CaseRecord& rec : cases) by_id[rec.case_id] = &rec;

  std::vector<CalibrationRow> rows;
  for (int essential_min : config.calibration.essential_grid) {
    for (int supplementary_min : config.calibration.supplementary_grid) {
      if (supplementary_min > essential_min) continue;  // violates the policy invariant
      ThresholdPolicy policy = config.policy;
      policy.mode = ThresholdMode::absolute;
      policy.essential_min = essential_min;
      policy.supplementary_min = supplementary_min;

      ClassCounts counts;
      for (const AuditRecord& record : audit) {
        if (config.calibration.holdout_case &&
            record.case_id == *config.calibration.holdout_case) {
          continue;
        }
        const auto rec_it = by_id.find(record.case_id);
        if (rec_it == by_id.end()) throw Error("audit references unknown case \"" + record.case_id + "\"");
        if (!rec_it->second->gold_labels) {
          throw Error("case \"" + record.case_id + "\" has no gold labels for calibration");
        }
        const RelevanceLabel gold = rec_it->second->gold_labels->at(record.sentence_id);
        const RelevanceLabel predicted = apply_threshold(record.audit.tally, policy);
        accumulate_class_counts(counts, predicted, gold);
      }

      CalibrationRow row;
      row.essential_min = essential_min;
      row.supplementary_min = supplementary_min;
      row.essential = prf(counts.essential);
      row.supplementary = prf(counts.supplementary);
      row.not_relevant = prf(counts.not_relevant);
      row.lenient_micro = prf(counts.lenient);
      rows.push_back(row);
    }
  }
  if (rows.empty()) throw Error("calibration grid is empty");

  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].lenient_micro.f1 > rows[best].lenient_micro.f1) best = i;
  }
  rows[best].best = true;

  ensure_run_dir(config);
  write_text_file(run_path(config, run_files::kCalibration), calibration_table(rows));
  return rows;
}

std::string calibration_table(const std::vector<CalibrationRow>& rows) {
  std::ostringstream out;
  out << "essential_min\tsupplementary_min\tess_p\tess_r\tess_f1\tsupp_p\tsupp_r\tsupp_f1"
         "\tnotrel_p\tnotrel_r\tnotrel_f1\tlenient_micro_f1\tbest\n";
  const auto fixed4 = [](double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(4);
    s << v;
    return s.str();
  };
  for (const CalibrationRow& row : rows) {
    out << row.essential_min << '\t' << row.supplementary_min << '\t'
        << fixed4(row.essential.precision) << '\t' << fixed4(row.essential.recall) << '\t'
        << fixed4(row.essential.f1) << '\t' << fixed4(row.supplementary.precision) << '\t'
        << fixed4(row.supplementary.recall) << '\t' << fixed4(row.supplementary.f1) << '\t'
        << fixed4(row.not_relevant.precision) << '\t' << fixed4(row.not_relevant.recall) << '\t'
        << fixed4(row.not_relevant.f1) << '\t' << fixed4(row.lenient_micro.f1) << '\t'
        << (row.best ? "*" : "") << '\n';
  }
  return out.str();
}

}  // namespace clinqa
