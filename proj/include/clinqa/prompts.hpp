#pragma once

namespace clinqa::prompts {

/// System instruction for the per-sentence relevance check. The wording is
/// part of the pipeline contract; do not edit casually.
extern const char* const kRelevanceSystemPrompt;

/// System instruction for the citation-preserving summarizer.
extern const char* const kSummarySystemPrompt;

}  // namespace clinqa::prompts
