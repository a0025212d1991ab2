#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace clinqa {

/// Relevance of one note sentence to the question being answered.
enum class RelevanceLabel { essential, supplementary, not_relevant };

/// Canonical lowercase hyphenated form: "essential", "supplementary",
/// "not-relevant".
std::string_view to_string(RelevanceLabel label);

/// Normalizes a label token (trim, lowercase, collapse internal whitespace,
/// accept "not relevant" / "not_relevant" spellings) and matches it against
/// the canonical forms. Anything else -> nullopt.
std::optional<RelevanceLabel> normalize_label_token(std::string_view token);

/// One numbered sentence from a clinical note excerpt. Ids are 1-based and
/// case-local; text never contains '|', which is reserved for citations.
struct NoteSentence {
  int sentence_id = 0;
  std::string text;
};

using LabelMap = std::map<int, RelevanceLabel>;

struct CaseRecord {
  std::string case_id;
  std::string clinician_question;
  std::optional<std::string> patient_question;
  std::vector<NoteSentence> sentences;
  // When present, covers exactly the sentence_id set of `sentences`.
  std::optional<LabelMap> gold_labels;
};

using CaseLabels = std::map<std::string, LabelMap>;

/// Reads the line-delimited cases file. Throws ParseError naming the line
/// and violated field for malformed records, duplicate case ids,
/// non-contiguous sentence ids, or gold labels that do not match the
/// sentence set.
std::vector<CaseRecord> parse_cases(std::istream& stream);
std::vector<CaseRecord> parse_cases_file(const std::string& path);

/// Writes one line per labeled case, in the order cases appear in `cases`.
/// Throws Error for labels that reference an unknown case or sentence.
void write_labels(const std::vector<CaseRecord>& cases, const CaseLabels& labels,
                  std::ostream& sink);

/// Inverse of write_labels. Throws ParseError on unknown label tokens or
/// duplicate case ids.
CaseLabels parse_labels(std::istream& stream);
CaseLabels parse_labels_file(const std::string& path);

}  // namespace clinqa
