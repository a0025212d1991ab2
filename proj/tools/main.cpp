#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "clinqa/error.hpp"
#include "clinqa/orchestrator.hpp"

namespace {

using clinqa::RunConfig;

struct CliFlags {
  std::string config_path;
  std::string cases, shots, refs, out;
  std::string mode;
  int samples = 0;
  int shots_k = 0;
  int essential_min = 0;
  int supplementary_min = 0;
  double fraction = -1.0;
  std::string rounding;
  std::uint64_t seed = 0;
  int word_limit = 0;
  int workers = 0;
  std::string backend_classify, backend_generate;
  std::string model_classify, model_generate;
  std::string mock;
  std::string holdout_case;
  bool no_cache = false;
};

void add_common_flags(CLI::App* cmd, CliFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file; flags override its keys");
  cmd->add_option("--cases", flags.cases, "cases file (one JSON case per line)");
  cmd->add_option("--shots", flags.shots, "few-shot pool file");
  cmd->add_option("--refs", flags.refs, "reference answers file");
  cmd->add_option("--out", flags.out, "run directory for artifacts");
  cmd->add_option("--mode", flags.mode, "selection mode: strict|lenient")
      ->check(CLI::IsMember({"strict", "lenient"}));
  cmd->add_option("--samples", flags.samples, "self-consistency sample budget per sentence");
  cmd->add_option("--shots-k", flags.shots_k, "few-shot examples per prompt (multiple of 3)");
  cmd->add_option("--essential-min", flags.essential_min, "absolute essential vote threshold");
  cmd->add_option("--supplementary-min", flags.supplementary_min,
                  "absolute supplementary vote threshold");
  cmd->add_option("--fraction", flags.fraction,
                  "fractional essential threshold in (0,1]; switches the policy to fractional mode");
  cmd->add_option("--rounding", flags.rounding, "fractional threshold rounding: ceil|floor")
      ->check(CLI::IsMember({"ceil", "floor"}));
  cmd->add_option("--seed", flags.seed, "global random seed");
  cmd->add_option("--word-limit", flags.word_limit, "answer word limit");
  cmd->add_option("--workers", flags.workers, "case-level worker threads");
  cmd->add_option("--backend-classify", flags.backend_classify, "classifier endpoint URL");
  cmd->add_option("--backend-generate", flags.backend_generate, "generator endpoint URL");
  cmd->add_option("--model-classify", flags.model_classify, "classifier model name");
  cmd->add_option("--model-generate", flags.model_generate, "generator model name");
  cmd->add_option("--mock", flags.mock, "mock backend: scripted:PATH or oracle:RATE");
  cmd->add_flag("--no-cache", flags.no_cache, "disable the response cache");
}

RunConfig build_config(const CLI::App* cmd, const CliFlags& flags) {
  RunConfig config;
  if (cmd->count("--config") > 0) config = RunConfig::from_json_file(flags.config_path);

  if (cmd->count("--cases") > 0) config.paths.cases = flags.cases;
  if (cmd->count("--shots") > 0) config.paths.shots = flags.shots;
  if (cmd->count("--refs") > 0) config.paths.references = flags.refs;
  if (cmd->count("--out") > 0) config.paths.run_dir = flags.out;
  if (cmd->count("--mode") > 0) {
    config.mode =
        flags.mode == "strict" ? clinqa::SelectionMode::strict : clinqa::SelectionMode::lenient;
  }
  if (cmd->count("--samples") > 0) config.policy.n_samples = flags.samples;
  if (cmd->count("--shots-k") > 0) config.shots_k = flags.shots_k;
  if (cmd->count("--essential-min") > 0) {
    config.policy.essential_min = flags.essential_min;
    config.policy.mode = clinqa::ThresholdMode::absolute;
  }
  if (cmd->count("--supplementary-min") > 0) config.policy.supplementary_min = flags.supplementary_min;
  if (cmd->count("--fraction") > 0) {
    config.policy.fraction = flags.fraction;
    config.policy.mode = clinqa::ThresholdMode::fractional;
  }
  if (cmd->count("--rounding") > 0) {
    config.policy.rounding = flags.rounding == "ceil" ? clinqa::FractionRounding::ceil
                                                      : clinqa::FractionRounding::floor;
  }
  if (cmd->count("--seed") > 0) config.seed = flags.seed;
  if (cmd->count("--word-limit") > 0) config.word_limit = static_cast<std::size_t>(flags.word_limit);
  if (cmd->count("--workers") > 0) config.workers = flags.workers;
  if (cmd->count("--backend-classify") > 0) config.classify_stage.profile.endpoint = flags.backend_classify;
  if (cmd->count("--backend-generate") > 0) config.generate_stage.profile.endpoint = flags.backend_generate;
  if (cmd->count("--model-classify") > 0) config.classify_stage.profile.model_name = flags.model_classify;
  if (cmd->count("--model-generate") > 0) config.generate_stage.profile.model_name = flags.model_generate;
  if (cmd->count("--mock") > 0) config.mock_spec = flags.mock;
  if (flags.no_cache) config.use_cache = false;
  return config;
}

void print_report_summary(const clinqa::EvaluationReport& report) {
  const auto line = [](const char* name, const clinqa::PRF& v) {
    std::printf("%-14s P=%.4f R=%.4f F1=%.4f\n", name, v.precision, v.recall, v.f1);
  };
  line("strict micro", report.strict_micro);
  line("strict macro", report.strict_macro);
  line("lenient micro", report.lenient_micro);
  line("lenient macro", report.lenient_macro);
  std::printf("rouge_l=%.4f bleu=%.4f sari=%.4f\n", report.rouge_l, report.bleu, report.sari);
  for (const auto& [name, value] : report.external) {
    std::printf("%s=%.4f\n", name.c_str(), value);
  }
  std::printf("factuality=%.4f relevance=%.4f overall=%.4f\n", report.factuality,
              report.relevance, report.overall);
  for (const std::string& diag : report.diagnostics) {
    std::fprintf(stderr, "warning: %s\n", diag.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounded clinical question answering pipeline"};
  app.require_subcommand(1);

  CliFlags flags;
  CLI::App* classify = app.add_subcommand("classify", "label every note sentence");
  CLI::App* generate = app.add_subcommand("generate", "compose answers from labels");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score answers against gold and references");
  CLI::App* run = app.add_subcommand("run", "classify, generate and evaluate in sequence");
  CLI::App* calibrate = app.add_subcommand("calibrate", "sweep thresholds over the stored audit");
  for (CLI::App* cmd : {classify, generate, evaluate, run, calibrate}) {
    add_common_flags(cmd, flags);
  }
  calibrate->add_option("--holdout-case", flags.holdout_case,
                        "case id excluded from the calibration sweep");

  CLI11_PARSE(app, argc, argv);

  try {
    if (classify->parsed()) {
      cmd_classify(build_config(classify, flags));
      std::cout << "labels and audit written\n";
    } else if (generate->parsed()) {
      cmd_generate(build_config(generate, flags));
      std::cout << "answers written\n";
    } else if (evaluate->parsed()) {
      print_report_summary(cmd_evaluate(build_config(evaluate, flags)));
    } else if (run->parsed()) {
      print_report_summary(cmd_run(build_config(run, flags)));
      std::cout << "manifest written\n";
    } else if (calibrate->parsed()) {
      RunConfig config = build_config(calibrate, flags);
      if (calibrate->count("--holdout-case") > 0) {
        config.calibration.holdout_case = flags.holdout_case;
      }
      std::cout << clinqa::calibration_table(cmd_calibrate(config));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
