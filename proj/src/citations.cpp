#include "clinqa/citations.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "clinqa/util.hpp"

namespace clinqa {

using nlohmann::json;

namespace {

bool is_ascii_digit(char c) { return c >= '0' && c <= '9'; }

bool is_ascii_alnum(char c) {
  return is_ascii_digit(c) || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

// Bytes outside ASCII are treated as word characters so UTF-8 text is never
// mistaken for trailing punctuation.
bool is_trailing_decoration(char c) {
  return static_cast<unsigned char>(c) < 0x80 && !is_ascii_alnum(c) && c != '|';
}

std::vector<int> parse_citation_group(const std::string& group, int line_no) {
  std::vector<int> ids;
  std::size_t start = 0;
  while (start <= group.size()) {
    const std::size_t comma = group.find(',', start);
    const std::string token =
        trim(group.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (token.find('-') != std::string::npos) {
      throw AnswerParseError(AnswerParseFault::range_forbidden, line_no,
                             "citation ranges are forbidden: |" + group + "| (list ids individually)");
    }
    if (token.empty() || !std::all_of(token.begin(), token.end(), is_ascii_digit)) {
      throw AnswerParseError(AnswerParseFault::bad_token, line_no,
                             "invalid citation token \"" + token + "\"");
    }
    int id = 0;
    try {
      id = std::stoi(token);
    } catch (const std::exception&) {
      throw AnswerParseError(AnswerParseFault::bad_token, line_no,
                             "citation id \"" + token + "\" out of range");
    }
    if (id < 1) {
      throw AnswerParseError(AnswerParseFault::bad_token, line_no,
                             "citation ids are positive integers, got \"" + token + "\"");
    }
    if (std::find(ids.begin(), ids.end(), id) != ids.end()) {
      throw AnswerParseError(AnswerParseFault::duplicate_id, line_no,
                             "duplicate citation id " + std::to_string(id));
    }
    ids.push_back(id);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return ids;
}

AnswerSentence parse_answer_line(const std::string& line, int line_no) {
  // Walk back over trailing punctuation so "text |1,2|." parses; the
  // punctuation is folded back into the sentence text.
  std::size_t end = line.size();
  while (end > 0 && is_trailing_decoration(line[end - 1])) --end;
  if (end == 0 || line[end - 1] != '|') {
    throw AnswerParseError(AnswerParseFault::missing_citation, line_no,
                           "sentence does not end with a |...| citation group");
  }
  const std::size_t close = end - 1;
  if (close == 0) {
    throw AnswerParseError(AnswerParseFault::missing_citation, line_no,
                           "unterminated citation group");
  }
  const std::size_t open = line.rfind('|', close - 1);
  if (open == std::string::npos) {
    throw AnswerParseError(AnswerParseFault::missing_citation, line_no,
                           "unterminated citation group");
  }

  AnswerSentence sentence;
  sentence.citations = parse_citation_group(line.substr(open + 1, close - open - 1), line_no);

  const std::string prefix = trim(line.substr(0, open));
  if (prefix.find('|') != std::string::npos) {
    throw AnswerParseError(AnswerParseFault::stray_pipe, line_no,
                           "pipe character before the terminal citation group");
  }
  std::string suffix = trim(line.substr(close + 1));
  sentence.text = prefix + suffix;
  return sentence;
}

void check_answer_invariants(const Answer& answer) {
  if (answer.sentences.empty()) throw ContractError("answer has no sentences");
  for (const AnswerSentence& s : answer.sentences) {
    if (s.citations.empty()) throw ContractError("answer sentence without citations");
    if (s.text.find('|') != std::string::npos) {
      throw ContractError("answer sentence text contains '|'");
    }
    std::set<int> seen;
    for (int id : s.citations) {
      if (id < 1) throw ContractError("non-positive citation id");
      if (!seen.insert(id).second) throw ContractError("duplicate citation id");
    }
  }
}

}  // namespace

Answer parse_answer(const std::string& raw) {
  Answer answer;
  std::istringstream lines(raw);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    answer.sentences.push_back(parse_answer_line(trimmed, line_no));
  }
  if (answer.sentences.empty()) {
    throw AnswerParseError(AnswerParseFault::empty_answer, 1, "empty answer");
  }
  return answer;
}

std::string emit_answer(const Answer& answer) {
  check_answer_invariants(answer);
  std::string out;
  for (std::size_t i = 0; i < answer.sentences.size(); ++i) {
    const AnswerSentence& s = answer.sentences[i];
    if (i > 0) out.push_back('\n');
    out += s.text;
    if (!s.text.empty()) out.push_back(' ');
    out.push_back('|');
    for (std::size_t j = 0; j < s.citations.size(); ++j) {
      if (j > 0) out.push_back(',');
      out += std::to_string(s.citations[j]);
    }
    out.push_back('|');
  }
  return out;
}

std::size_t word_count(const Answer& answer) {
  std::size_t total = 0;
  for (const AnswerSentence& s : answer.sentences) total += count_words(s.text);
  return total;
}

Answer truncate_to_limit(const Answer& answer, std::size_t limit) {
  if (limit < 1) throw ContractError("truncate_to_limit: limit must be >= 1");
  if (word_count(answer) <= limit) return answer;

  Answer out;
  std::size_t budget = limit;
  for (const AnswerSentence& s : answer.sentences) {
    const std::vector<std::string> words = split_words(s.text);
    if (words.size() <= budget) {
      out.sentences.push_back(s);
      budget -= words.size();
      if (budget == 0) break;
      continue;
    }
    if (budget > 0) {
      AnswerSentence partial;
      for (std::size_t i = 0; i < budget; ++i) {
        if (i > 0) partial.text.push_back(' ');
        partial.text += words[i];
      }
      partial.citations = s.citations;  // partial keep retains all citations
      out.sentences.push_back(std::move(partial));
    }
    break;
  }
  return out;
}

std::set<int> collect_cited_ids(const Answer& answer) {
  std::set<int> ids;
  for (const AnswerSentence& s : answer.sentences) ids.insert(s.citations.begin(), s.citations.end());
  return ids;
}

void write_answers(const std::vector<std::string>& order,
                   const std::map<std::string, std::string>& raw_answers, std::ostream& sink) {
  for (const std::string& case_id : order) {
    const auto it = raw_answers.find(case_id);
    if (it == raw_answers.end()) continue;
    json entry;
    entry["case_id"] = case_id;
    entry["answer"] = it->second;
    sink << entry.dump() << '\n';
  }
}

std::map<std::string, std::string> parse_answers(std::istream& stream) {
  std::map<std::string, std::string> result;
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object() || !record.contains("case_id") ||
        !record["case_id"].is_string() || !record.contains("answer") ||
        !record["answer"].is_string()) {
      throw ParseError(line_no, "answers records must be {\"case_id\": string, \"answer\": string}");
    }
    const std::string case_id = record["case_id"].get<std::string>();
    if (result.count(case_id) != 0) throw ParseError(line_no, "duplicate case_id \"" + case_id + "\"");
    result[case_id] = record["answer"].get<std::string>();
  }
  return result;
}

std::map<std::string, std::string> parse_answers_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("unable to read answers file: " + path);
  return parse_answers(in);
}

}  // namespace clinqa
