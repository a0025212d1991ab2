#include "clinqa/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "json.hpp"

#include "clinqa/error.hpp"
#include "clinqa/util.hpp"

namespace clinqa {

using nlohmann::json;

std::string_view to_string(RelevanceLabel label) {
  switch (label) {
    case RelevanceLabel::essential: return "essential";
    case RelevanceLabel::supplementary: return "supplementary";
    case RelevanceLabel::not_relevant: return "not-relevant";
  }
  return "not-relevant";
}

std::optional<RelevanceLabel> normalize_label_token(std::string_view token) {
  const std::string norm = collapse_whitespace(to_lower(token));
  if (norm == "essential") return RelevanceLabel::essential;
  if (norm == "supplementary") return RelevanceLabel::supplementary;
  if (norm == "not-relevant" || norm == "not relevant" || norm == "not_relevant") {
    return RelevanceLabel::not_relevant;
  }
  return std::nullopt;
}

namespace {

RelevanceLabel require_label(std::string_view token, int line) {
  const auto label = normalize_label_token(token);
  if (!label) throw ParseError(line, "unknown label \"" + std::string(token) + "\"");
  return *label;
}

json parse_json_line(const std::string& line, int line_no) {
  json record = json::parse(line, nullptr, false);
  if (record.is_discarded() || !record.is_object()) {
    throw ParseError(line_no, "record is not a JSON object");
  }
  return record;
}

std::string require_string(const json& record, const char* field, int line) {
  if (!record.contains(field) || !record[field].is_string()) {
    throw ParseError(line, std::string("missing or non-string field \"") + field + "\"");
  }
  return record[field].get<std::string>();
}

int parse_sentence_id_key(const std::string& key, int line) {
  if (key.empty()) throw ParseError(line, "empty sentence id key");
  for (char c : key) {
    if (c < '0' || c > '9') throw ParseError(line, "sentence id key \"" + key + "\" is not an integer");
  }
  try {
    return std::stoi(key);
  } catch (const std::exception&) {
    throw ParseError(line, "sentence id key \"" + key + "\" out of range");
  }
}

CaseRecord parse_case_record(const json& record, int line) {
  CaseRecord rec;
  rec.case_id = require_string(record, "case_id", line);
  if (rec.case_id.empty()) throw ParseError(line, "empty case_id");

  rec.clinician_question = require_string(record, "clinician_question", line);
  if (rec.clinician_question.empty()) throw ParseError(line, "empty clinician_question");

  if (record.contains("patient_question") && !record["patient_question"].is_null()) {
    if (!record["patient_question"].is_string()) {
      throw ParseError(line, "patient_question must be a string or null");
    }
    rec.patient_question = record["patient_question"].get<std::string>();
  }

  if (!record.contains("sentences") || !record["sentences"].is_array() ||
      record["sentences"].empty()) {
    throw ParseError(line, "sentences must be a non-empty array");
  }
  int expected_id = 1;
  for (const json& s : record["sentences"]) {
    if (!s.is_object() || !s.contains("id") || !s["id"].is_number_integer() ||
        !s.contains("text") || !s["text"].is_string()) {
      throw ParseError(line, "sentence entries must be {\"id\": int, \"text\": string}");
    }
    NoteSentence sentence;
    sentence.sentence_id = s["id"].get<int>();
    sentence.text = s["text"].get<std::string>();
    if (sentence.sentence_id != expected_id) {
      throw ParseError(line, "non-contiguous sentence ids (expected " +
                                 std::to_string(expected_id) + ", got " +
                                 std::to_string(sentence.sentence_id) + ")");
    }
    if (sentence.text.empty()) {
      throw ParseError(line, "empty text for sentence " + std::to_string(sentence.sentence_id));
    }
    if (sentence.text.find('|') != std::string::npos) {
      throw ParseError(line, "sentence " + std::to_string(sentence.sentence_id) +
                                 " contains reserved character '|'");
    }
    rec.sentences.push_back(std::move(sentence));
    ++expected_id;
  }

  if (record.contains("gold") && !record["gold"].is_null()) {
    if (!record["gold"].is_object()) throw ParseError(line, "gold must be an object");
    LabelMap gold;
    for (const auto& [key, value] : record["gold"].items()) {
      const int id = parse_sentence_id_key(key, line);
      if (id < 1 || id > static_cast<int>(rec.sentences.size())) {
        throw ParseError(line, "gold label for unknown sentence " + std::to_string(id));
      }
      if (!value.is_string()) throw ParseError(line, "gold label values must be strings");
      gold[id] = require_label(value.get<std::string>(), line);
    }
    if (gold.size() != rec.sentences.size()) {
      throw ParseError(line, "gold labels must cover every sentence (" +
                                 std::to_string(gold.size()) + " of " +
                                 std::to_string(rec.sentences.size()) + " labeled)");
    }
    rec.gold_labels = std::move(gold);
  }
  return rec;
}

}  // namespace

std::vector<CaseRecord> parse_cases(std::istream& stream) {
  std::vector<CaseRecord> cases;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    CaseRecord rec = parse_case_record(parse_json_line(line, line_no), line_no);
    if (!seen_ids.insert(rec.case_id).second) {
      throw ParseError(line_no, "duplicate case_id \"" + rec.case_id + "\"");
    }
    cases.push_back(std::move(rec));
  }
  return cases;
}

std::vector<CaseRecord> parse_cases_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("unable to read cases file: " + path);
  return parse_cases(in);
}

void write_labels(const std::vector<CaseRecord>& cases, const CaseLabels& labels,
                  std::ostream& sink) {
  std::set<std::string> known_cases;
  for (const CaseRecord& rec : cases) known_cases.insert(rec.case_id);
  for (const auto& [case_id, per_case] : labels) {
    if (known_cases.count(case_id) == 0) {
      throw Error("labels reference unknown case \"" + case_id + "\"");
    }
    (void)per_case;
  }

  // Emit in cases-file order so output is stable across runs.
  for (const CaseRecord& rec : cases) {
    const auto it = labels.find(rec.case_id);
    if (it == labels.end()) continue;
    json entry;
    entry["case_id"] = rec.case_id;
    json per_case = json::object();
    for (const auto& [sentence_id, label] : it->second) {
      if (sentence_id < 1 || sentence_id > static_cast<int>(rec.sentences.size())) {
        throw Error("label for unknown sentence " + std::to_string(sentence_id) +
                    " in case \"" + rec.case_id + "\"");
      }
      per_case[std::to_string(sentence_id)] = std::string(to_string(label));
    }
    entry["labels"] = std::move(per_case);
    sink << entry.dump() << '\n';
  }
}

CaseLabels parse_labels(std::istream& stream) {
  CaseLabels result;
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const json record = parse_json_line(line, line_no);
    const std::string case_id = require_string(record, "case_id", line_no);
    if (result.count(case_id) != 0) {
      throw ParseError(line_no, "duplicate case_id \"" + case_id + "\"");
    }
    if (!record.contains("labels") || !record["labels"].is_object()) {
      throw ParseError(line_no, "missing labels object");
    }
    LabelMap per_case;
    for (const auto& [key, value] : record["labels"].items()) {
      const int id = parse_sentence_id_key(key, line_no);
      if (!value.is_string()) throw ParseError(line_no, "label values must be strings");
      per_case[id] = require_label(value.get<std::string>(), line_no);
    }
    result[case_id] = std::move(per_case);
  }
  return result;
}

CaseLabels parse_labels_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("unable to read labels file: " + path);
  return parse_labels(in);
}

}  // namespace clinqa
