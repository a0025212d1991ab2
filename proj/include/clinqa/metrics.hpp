#pragma once

#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "clinqa/citations.hpp"
#include "clinqa/corpus.hpp"

namespace clinqa {

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& other);
  bool operator==(const ConfusionCounts&) const = default;
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Set-membership confusion of pred against gold_positive over universe.
/// Throws ContractError when pred or gold_positive stray outside universe.
ConfusionCounts confusion(const std::set<int>& pred, const std::set<int>& gold_positive,
                          const std::set<int>& universe);

/// Precision/recall/F1 with the zero-division -> 0 convention.
PRF prf(const ConfusionCounts& c);

/// Citation-level scores for one answer set. Micro pools counts across
/// cases; macro is the unweighted mean of per-case precision/recall/F1. A
/// case whose gold positive set and prediction are both empty scores 1.
struct CitationScores {
  PRF strict_micro, strict_macro, lenient_micro, lenient_macro;
  ConfusionCounts strict_pooled, lenient_pooled;

  struct PerCase {
    std::string case_id;
    ConfusionCounts strict_counts, lenient_counts;
    PRF strict, lenient;
  };
  std::vector<PerCase> per_case;
};

/// Strict positives are gold-essential ids; lenient adds supplementary.
/// The universe is the case's sentence ids, expanded by any cited id
/// outside it (such citations count as false positives). Throws Error when
/// an answered case has no gold labels.
CitationScores citation_metrics(const std::map<std::string, Answer>& answers,
                                const CaseLabels& gold,
                                const std::map<std::string, std::set<int>>& universes);

/// Same scoring over raw prediction id sets. Cases in `forced_zero` (e.g.
/// unparseable answers) score 0 per-case while still pooling their false
/// negatives into the micro counts.
CitationScores citation_metrics_from_ids(const std::map<std::string, std::set<int>>& predictions,
                                         const CaseLabels& gold,
                                         const std::map<std::string, std::set<int>>& universes,
                                         const std::set<std::string>& forced_zero = {});

// ---- lexical metrics (lowercased whitespace tokens) ------------------------

/// LCS-based F1 (beta = 1). Returns 0 when either side has no tokens.
double rouge_l(const std::string& candidate, const std::string& reference);

/// Sentence BLEU, n-gram orders 1..4: clipped modified precisions, add-one
/// smoothing on zero counts for n >= 2, orders the candidate is too short
/// to populate are skipped, brevity penalty against the closest reference
/// length. Empty candidate scores 0. Throws ContractError on empty refs.
double bleu(const std::string& candidate, const std::vector<std::string>& references);

/// SARI on the [0,1] scale: mean over n of (F_keep + F_add + P_del) / 3
/// with fractional reference counts for keep/delete and set semantics for
/// addition. Degenerate "nothing to do" components score 1. Throws
/// ContractError on empty refs.
double sari(const std::string& source, const std::string& candidate,
            const std::vector<std::string>& references, int max_n = 4);

// ---- aggregation ------------------------------------------------------------

struct AggregateConfig {
  // one of: strict_micro_f1, strict_macro_f1, lenient_micro_f1, lenient_macro_f1
  std::string factuality_source = "lenient_micro_f1";
  std::vector<std::string> relevance_metrics = {"rouge_l", "bleu", "sari"};
};

struct CaseScore {
  std::string case_id;
  bool parse_ok = true;
  PRF strict, lenient;
  double rouge_l = 0.0;
  double bleu = 0.0;
  double sari = 0.0;
  std::map<std::string, double> external;
  std::string note;  // diagnostic for unparseable answers
};

struct EvaluationReport {
  PRF strict_micro, strict_macro, lenient_micro, lenient_macro;
  double rouge_l = 0.0;
  double bleu = 0.0;
  double sari = 0.0;
  std::map<std::string, double> external;  // corpus means of plug-in metrics
  double factuality = 0.0;
  double relevance = 0.0;
  double overall = 0.0;
  std::vector<CaseScore> cases;
  std::vector<std::string> diagnostics;
};

struct EvalOptions {
  std::size_t word_limit = 75;
  AggregateConfig aggregate;
  // Plug-in metric name -> per-case scores in [0,1]; names are merged into
  // the relevance mean alongside the built-in lexical metrics.
  std::map<std::string, std::map<std::string, double>> external_metrics;
};

/// Scoring-script behavior: parse citations, truncate to the word limit,
/// then score. An unparseable answer scores 0 for its case (with a
/// diagnostic) and the run continues.
EvaluationReport evaluate_answers(const std::vector<CaseRecord>& cases,
                                  const std::map<std::string, std::string>& raw_answers,
                                  const std::map<std::string, std::string>& references,
                                  const EvalOptions& options = {});

/// factuality from the selected citation block, relevance as the unweighted
/// mean of the selected metrics, overall as their arithmetic mean.
void aggregate(EvaluationReport& report, const AggregateConfig& config);

/// Report rendering: JSON document and a flat per-case TSV; every score is
/// rendered to 4 decimal places.
std::string report_to_json(const EvaluationReport& report);
std::string report_per_case_table(const EvaluationReport& report);

/// References file: one JSON object per line {"case_id", "reference"}.
std::map<std::string, std::string> parse_references(std::istream& stream);
std::map<std::string, std::string> parse_references_file(const std::string& path);

}  // namespace clinqa
