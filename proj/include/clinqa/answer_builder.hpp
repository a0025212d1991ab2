#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "clinqa/citations.hpp"
#include "clinqa/corpus.hpp"

namespace clinqa {

class Gateway;  // llm_gateway.hpp

/// Which labels feed answer composition: strict keeps essential sentences
/// only, lenient adds supplementary ones.
enum class SelectionMode { strict, lenient };

std::string_view to_string(SelectionMode mode);

/// Selected note sentences in note order (ids ascending, distinct).
struct SelectedSentence {
  int sentence_id = 0;
  std::string text;
};
using SelectedSet = std::vector<SelectedSentence>;

/// Filters a fully labeled case by mode. not-relevant sentences are never
/// selected; an empty result is valid.
SelectedSet select_sentences(const LabelMap& labels, const CaseRecord& rec, SelectionMode mode);

/// Verbatim one-sentence-per-selection answer, each citing its own id.
/// Throws ContractError when sel is empty or exceeds the word limit.
Answer compose_direct(const SelectedSet& sel, std::size_t word_limit = 75);

/// (system, user) prompts for the summarize branch: fixed instruction plus
/// one "text |id|" line per selected sentence.
std::pair<std::string, std::string> build_summary_prompt(const SelectedSet& sel);

struct RepairOptions {
  // Strip citations that point outside the selected set. Off reproduces the
  // append-only behavior of the original pipeline.
  bool strip_uncited = true;
};

/// Reconciles a parsed summary with the selected set: uncited selected ids
/// are appended (ascending) to the final sentence; citations outside the
/// set are removed everywhere; a sentence stripped of all its citations is
/// merged into its neighbor.
Answer repair_citations(const Answer& parsed, const SelectedSet& sel,
                        const RepairOptions& options = {});

/// Placeholder emitted when nothing was selected: "No citations found" with
/// one citation drawn uniformly from 1-10.
Answer fallback_answer(std::mt19937_64& rng);

struct GenerateOptions {
  SelectionMode mode = SelectionMode::lenient;
  std::size_t word_limit = 75;
  double summarizer_temperature = 0.0;
  int summarizer_max_tokens = 256;
  int parse_retries = 2;  // extra summarizer attempts on unparseable output
  RepairOptions repair;
  // Paper-literal fallback trigger: fall back when no sentence is labeled
  // essential, even if the lenient selection is non-empty. Default triggers
  // on an empty selection under the active mode.
  bool fallback_on_no_essential = false;
};

/// Full per-case composition: select, then direct/summarize/fallback.
Answer generate_answer(const CaseRecord& rec, const LabelMap& labels, Gateway& gateway,
                       std::mt19937_64& rng, const GenerateOptions& options = {});

}  // namespace clinqa
