#include "clinqa/answer_builder.hpp"

#include <algorithm>
#include <set>

#include "clinqa/error.hpp"
#include "clinqa/llm_gateway.hpp"
#include "clinqa/prompts.hpp"
#include "clinqa/util.hpp"

namespace clinqa {

std::string_view to_string(SelectionMode mode) {
  return mode == SelectionMode::strict ? "strict" : "lenient";
}

SelectedSet select_sentences(const LabelMap& labels, const CaseRecord& rec, SelectionMode mode) {
  SelectedSet sel;
  for (const NoteSentence& sentence : rec.sentences) {
    const auto it = labels.find(sentence.sentence_id);
    if (it == labels.end()) {
      throw ContractError("labels do not cover sentence " + std::to_string(sentence.sentence_id) +
                          " of case \"" + rec.case_id + "\"");
    }
    const bool keep = it->second == RelevanceLabel::essential ||
                      (mode == SelectionMode::lenient && it->second == RelevanceLabel::supplementary);
    if (keep) sel.push_back({sentence.sentence_id, sentence.text});
  }
  return sel;
}

namespace {

std::size_t selection_word_count(const SelectedSet& sel) {
  std::size_t total = 0;
  for (const SelectedSentence& s : sel) total += count_words(s.text);
  return total;
}

std::string join_text(const std::string& a, const std::string& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return a + " " + b;
}

}  // namespace

Answer compose_direct(const SelectedSet& sel, std::size_t word_limit) {
  if (sel.empty()) throw ContractError("compose_direct: selection is empty");
  const std::size_t words = selection_word_count(sel);
  if (words > word_limit) {
    throw ContractError("compose_direct: selection has " + std::to_string(words) +
                        " words, over the limit of " + std::to_string(word_limit));
  }
  Answer answer;
  for (const SelectedSentence& s : sel) {
    answer.sentences.push_back({s.text, {s.sentence_id}});
  }
  return answer;
}

std::pair<std::string, std::string> build_summary_prompt(const SelectedSet& sel) {
  if (sel.empty()) throw ContractError("build_summary_prompt: selection is empty");
  std::string user;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    if (i > 0) user.push_back('\n');
    user += sel[i].text;
    user += " |";
    user += std::to_string(sel[i].sentence_id);
    user.push_back('|');
  }
  return {prompts::kSummarySystemPrompt, std::move(user)};
}

Answer repair_citations(const Answer& parsed, const SelectedSet& sel,
                        const RepairOptions& options) {
  std::set<int> selected_ids;
  for (const SelectedSentence& s : sel) selected_ids.insert(s.sentence_id);

  Answer repaired;
  std::string pending;  // text of sentences stripped of every citation
  for (const AnswerSentence& sentence : parsed.sentences) {
    std::vector<int> kept;
    for (int id : sentence.citations) {
      if (!options.strip_uncited || selected_ids.count(id) != 0) kept.push_back(id);
    }
    const std::string text = join_text(pending, sentence.text);
    if (kept.empty()) {
      pending = text;
      continue;
    }
    repaired.sentences.push_back({text, std::move(kept)});
    pending.clear();
  }
  if (!pending.empty() || repaired.sentences.empty()) {
    if (repaired.sentences.empty()) {
      repaired.sentences.push_back({pending, {}});
    } else {
      repaired.sentences.back().text = join_text(repaired.sentences.back().text, pending);
    }
  }

  const std::set<int> cited = collect_cited_ids(repaired);
  std::vector<int>& last = repaired.sentences.back().citations;
  for (int id : selected_ids) {
    if (cited.count(id) == 0) last.push_back(id);  // selected_ids iterates ascending
  }
  return repaired;
}

Answer fallback_answer(std::mt19937_64& rng) {
  const int citation = static_cast<int>(uniform_below(rng, 10)) + 1;
  Answer answer;
  answer.sentences.push_back({"No citations found", {citation}});
  return answer;
}

namespace {

/// Longest selection prefix within the limit; when even the first sentence
/// is over it, that sentence is cut to the limit. Ids left out are appended
/// to the last sentence so no citation is lost.
Answer greedy_prefix_answer(const SelectedSet& sel, std::size_t word_limit) {
  SelectedSet prefix;
  std::size_t used = 0;
  for (const SelectedSentence& s : sel) {
    const std::size_t words = count_words(s.text);
    if (used + words > word_limit) break;
    prefix.push_back(s);
    used += words;
  }
  Answer answer;
  if (prefix.empty()) {
    const std::vector<std::string> words = split_words(sel.front().text);
    std::string text;
    for (std::size_t i = 0; i < std::min(word_limit, words.size()); ++i) {
      if (i > 0) text.push_back(' ');
      text += words[i];
    }
    answer.sentences.push_back({std::move(text), {sel.front().sentence_id}});
  } else {
    answer = compose_direct(prefix, word_limit);
  }
  std::set<int> cited = collect_cited_ids(answer);
  for (const SelectedSentence& s : sel) {
    if (cited.count(s.sentence_id) == 0) {
      answer.sentences.back().citations.push_back(s.sentence_id);
    }
  }
  return answer;
}

}  // namespace

Answer generate_answer(const CaseRecord& rec, const LabelMap& labels, Gateway& gateway,
                       std::mt19937_64& rng, const GenerateOptions& options) {
  const SelectedSet sel = select_sentences(labels, rec, options.mode);

  bool fall_back = sel.empty();
  if (options.fallback_on_no_essential) {
    const bool any_essential =
        std::any_of(labels.begin(), labels.end(),
                    [](const auto& kv) { return kv.second == RelevanceLabel::essential; });
    fall_back = fall_back || !any_essential;
  }
  if (fall_back) return fallback_answer(rng);

  if (selection_word_count(sel) <= options.word_limit) {
    return compose_direct(sel, options.word_limit);
  }

  const auto [system_prompt, user_prompt] = build_summary_prompt(sel);
  for (int attempt = 0; attempt <= options.parse_retries; ++attempt) {
    GenerationRequest request;
    request.system_prompt = system_prompt;
    request.user_prompt = user_prompt;
    request.temperature = options.summarizer_temperature;
    request.max_output_tokens = options.summarizer_max_tokens;
    request.sample_index = attempt;
    const std::string raw = gateway.complete(request);
    try {
      return repair_citations(parse_answer(raw), sel, options.repair);
    } catch (const AnswerParseError&) {
      // try a fresh sample
    }
  }
  return greedy_prefix_answer(sel, options.word_limit);
}

}  // namespace clinqa
