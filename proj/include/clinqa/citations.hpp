#pragma once

#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "clinqa/error.hpp"

namespace clinqa {

/// One answer sentence: pipe-free text plus the note-sentence ids that
/// ground it. Every sentence carries at least one citation.
struct AnswerSentence {
  std::string text;
  std::vector<int> citations;  // distinct positive ids, order preserved

  bool operator==(const AnswerSentence&) const = default;
};

struct Answer {
  std::vector<AnswerSentence> sentences;  // non-empty

  bool operator==(const Answer&) const = default;
};

/// Why an answer failed to parse.
enum class AnswerParseFault {
  empty_answer,
  missing_citation,
  range_forbidden,
  duplicate_id,
  bad_token,
  stray_pipe,
};

class AnswerParseError : public ParseError {
 public:
  AnswerParseError(AnswerParseFault fault, int line, const std::string& what)
      : ParseError(line, what), fault_(fault) {}

  AnswerParseFault fault() const { return fault_; }

 private:
  AnswerParseFault fault_;
};

/// Parses answer text: one sentence per line, each non-empty line ending
/// with exactly one citation group `|i,j,...|` (trailing punctuation after
/// the group is folded back into the sentence text). Throws
/// AnswerParseError with the offending 1-based line number.
Answer parse_answer(const std::string& raw);

/// Canonical rendering: `text |i,j|` per line. parse_answer(emit_answer(a))
/// reproduces `a` exactly.
std::string emit_answer(const Answer& answer);

/// Whitespace-delimited words across all sentence texts; citations are not
/// part of the text and never counted.
std::size_t word_count(const Answer& answer);

/// Keeps the first `limit` words in reading order. A partially kept
/// sentence retains its full citation set; fully dropped sentences lose
/// theirs. Identity when already within the limit.
Answer truncate_to_limit(const Answer& answer, std::size_t limit);

/// Union of all citation ids.
std::set<int> collect_cited_ids(const Answer& answer);

/// Answers file: one JSON object per line {"case_id": ..., "answer": raw
/// multi-line text}. Order of `order` controls emission order.
void write_answers(const std::vector<std::string>& order,
                   const std::map<std::string, std::string>& raw_answers, std::ostream& sink);
std::map<std::string, std::string> parse_answers(std::istream& stream);
std::map<std::string, std::string> parse_answers_file(const std::string& path);

}  // namespace clinqa
