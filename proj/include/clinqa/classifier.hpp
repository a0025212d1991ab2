#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "clinqa/corpus.hpp"

namespace clinqa {

class Gateway;  // llm_gateway.hpp

/// One labeled (question, sentence) pair used as an in-context example.
struct FewShotExample {
  std::string question;
  std::string context;
  RelevanceLabel label = RelevanceLabel::not_relevant;
};

/// Per-sentence vote counts over one self-consistency round. The four
/// counters always sum to the sample budget.
struct VoteTally {
  int essential = 0;
  int supplementary = 0;
  int not_relevant = 0;
  int invalid = 0;

  int total() const { return essential + supplementary + not_relevant + invalid; }
  bool operator==(const VoteTally&) const = default;
};

enum class ThresholdMode { absolute, fractional };
enum class FractionRounding { ceil, floor };

/// Vote-to-label aggregation rule. In absolute mode the essential cutoff is
/// essential_min; in fractional mode it is fraction * n_samples rounded per
/// `rounding`. A sentence that misses the essential cutoff is still labeled
/// supplementary when it drew supplementary votes, or (when
/// single_essential_promotes is set) at least one essential vote, so votes
/// for relevant classes are never discarded outright.
struct ThresholdPolicy {
  int n_samples = 20;
  int essential_min = 2;
  int supplementary_min = 1;
  ThresholdMode mode = ThresholdMode::absolute;
  double fraction = 0.26;  // used when mode == fractional
  FractionRounding rounding = FractionRounding::ceil;
  bool single_essential_promotes = true;

  /// The essential cutoff this policy resolves to.
  int essential_cutoff() const;

  /// Throws ContractError when field invariants are violated.
  void validate() const;
};

/// Draws k/3 examples per class from the pool and shuffles the result.
/// Throws Error naming the class when the pool cannot cover one.
std::vector<FewShotExample> sample_few_shot_set(const std::vector<FewShotExample>& pool, int k,
                                                std::mt19937_64& rng);

/// Renders (system, user) prompts: the fixed relevance instruction plus one
/// "Question:/Context:/Label:" block per shot and a final block whose label
/// is left blank for the model to fill.
std::pair<std::string, std::string> build_classifier_prompt(
    const std::string& question, const NoteSentence& sentence,
    const std::vector<FewShotExample>& shots);

/// Maps raw model output to a label: first non-empty line, optional
/// "Label:" prefix stripped, terminal punctuation stripped, then exact
/// match against the canonical forms. Everything else is invalid (nullopt).
std::optional<RelevanceLabel> parse_label(const std::string& raw);

VoteTally tally(const std::vector<std::optional<RelevanceLabel>>& parsed);

/// Applies the policy to one tally. Throws ContractError when the tally
/// total does not match the policy sample budget.
RelevanceLabel apply_threshold(const VoteTally& t, const ThresholdPolicy& policy);

/// Everything recorded for one sentence during classification.
struct SentenceAudit {
  std::vector<std::string> samples;  // all raw completions, by sample index
  VoteTally tally;
  RelevanceLabel label = RelevanceLabel::not_relevant;
};

struct CaseClassification {
  LabelMap labels;
  std::map<int, SentenceAudit> audit;
};

struct ClassifyOptions {
  int shots_k = 30;
  double temperature = 1.0;
  int max_output_tokens = 8;
  std::uint64_t global_seed = 0;
};

/// Classifies every sentence of one case independently: per-case few-shot
/// draw, n_samples completions per sentence, tally, threshold.
CaseClassification classify_case(const CaseRecord& rec, const ThresholdPolicy& policy,
                                 const std::vector<FewShotExample>& pool, Gateway& gateway,
                                 const ClassifyOptions& options);

/// Shots pool file: one JSON object per line {"question","context","label"}.
std::vector<FewShotExample> parse_shots_pool(std::istream& stream);
std::vector<FewShotExample> parse_shots_pool_file(const std::string& path);

/// Audit file: one record per (case, sentence) holding the raw samples,
/// tally and final label, enabling threshold recalibration offline.
struct AuditRecord {
  std::string case_id;
  int sentence_id = 0;
  SentenceAudit audit;
};

void write_audit(const std::vector<AuditRecord>& records, std::ostream& sink);
std::vector<AuditRecord> parse_audit(std::istream& stream);
std::vector<AuditRecord> parse_audit_file(const std::string& path);

}  // namespace clinqa
