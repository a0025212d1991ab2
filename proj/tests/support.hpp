#pragma once

// Shared fixture builders for the unit and acceptance suites.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "clinqa/citations.hpp"
#include "clinqa/corpus.hpp"
#include "clinqa/util.hpp"

namespace testsupport {

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "patient", "stable", "discharged", "dialysis",  "renal",   "failure", "oxygen",
      "fever",   "daily",  "aspirin",    "improved",  "chronic", "acute",   "therapy",
      "noted",   "exam",   "normal",     "follow-up", "cardiac", "imaging"};
  return words;
}

inline std::string random_sentence_text(std::mt19937_64& rng, std::size_t min_words = 1,
                                        std::size_t max_words = 12) {
  const auto& vocab = vocabulary();
  const std::size_t n =
      min_words + clinqa::uniform_below(rng, max_words - min_words + 1);
  std::string text;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) text.push_back(' ');
    text += vocab[clinqa::uniform_below(rng, vocab.size())];
  }
  return text;
}

/// Structurally valid random answer: 1-6 sentences, 1-4 distinct citations
/// each, ids in 1..12, citation order randomized.
inline clinqa::Answer random_answer(std::mt19937_64& rng) {
  clinqa::Answer answer;
  const std::size_t sentences = 1 + clinqa::uniform_below(rng, 6);
  for (std::size_t s = 0; s < sentences; ++s) {
    clinqa::AnswerSentence sentence;
    sentence.text = random_sentence_text(rng);
    std::vector<int> ids;
    for (int id = 1; id <= 12; ++id) ids.push_back(id);
    clinqa::deterministic_shuffle(ids, rng);
    const std::size_t citations = 1 + clinqa::uniform_below(rng, 4);
    sentence.citations.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(citations));
    answer.sentences.push_back(std::move(sentence));
  }
  return answer;
}

/// A gold-labeled case whose sentences carry the given labels, with short
/// unique texts so selections stay under the word limit.
inline clinqa::CaseRecord make_case(const std::string& case_id, const std::string& question,
                                    const std::vector<clinqa::RelevanceLabel>& labels) {
  clinqa::CaseRecord rec;
  rec.case_id = case_id;
  rec.clinician_question = question;
  clinqa::LabelMap gold;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    rec.sentences.push_back(
        {id, "note " + case_id + " sentence " + std::to_string(id) + " detail"});
    gold[id] = labels[i];
  }
  rec.gold_labels = gold;
  return rec;
}

/// Unique scratch directory under the build tree's temp space.
inline std::string make_temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("clinqa_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter.fetch_add(1)));
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace testsupport
