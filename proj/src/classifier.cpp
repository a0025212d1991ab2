#include "clinqa/classifier.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "clinqa/error.hpp"
#include "clinqa/llm_gateway.hpp"
#include "clinqa/prompts.hpp"
#include "clinqa/util.hpp"

namespace clinqa {

using nlohmann::json;

int ThresholdPolicy::essential_cutoff() const {
  if (mode == ThresholdMode::absolute) return essential_min;
  // Guard against binary representation noise (0.3 * 10 is not exactly 3).
  const double raw = fraction * static_cast<double>(n_samples);
  const int cutoff = rounding == FractionRounding::ceil
                         ? static_cast<int>(std::ceil(raw - 1e-9))
                         : static_cast<int>(std::floor(raw + 1e-9));
  return std::max(cutoff, 1);
}

void ThresholdPolicy::validate() const {
  if (n_samples < 1) throw ContractError("threshold policy: n_samples must be positive");
  if (essential_min < 1 || essential_min > n_samples) {
    throw ContractError("threshold policy: essential_min must be in [1, n_samples]");
  }
  if (supplementary_min < 1 || supplementary_min > essential_min) {
    throw ContractError("threshold policy: supplementary_min must be in [1, essential_min]");
  }
  if (mode == ThresholdMode::fractional && (fraction <= 0.0 || fraction > 1.0)) {
    throw ContractError("threshold policy: fraction must be in (0, 1]");
  }
}

std::vector<FewShotExample> sample_few_shot_set(const std::vector<FewShotExample>& pool, int k,
                                                std::mt19937_64& rng) {
  if (k < 1 || k % 3 != 0) throw ContractError("few-shot k must be a positive multiple of 3");
  const int per_class = k / 3;

  std::array<std::vector<FewShotExample>, 3> by_class;
  for (const FewShotExample& ex : pool) {
    if (ex.question.empty() || ex.context.empty()) {
      throw ContractError("few-shot example with empty question or context");
    }
    by_class[static_cast<std::size_t>(ex.label)].push_back(ex);
  }

  std::vector<FewShotExample> picked;
  picked.reserve(static_cast<std::size_t>(k));
  for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
    auto& bucket = by_class[cls];
    if (static_cast<int>(bucket.size()) < per_class) {
      throw Error("insufficient " + std::string(to_string(static_cast<RelevanceLabel>(cls))) +
                  " examples in shots pool (need " + std::to_string(per_class) + ", have " +
                  std::to_string(bucket.size()) + ")");
    }
    deterministic_shuffle(bucket, rng);
    picked.insert(picked.end(), bucket.begin(), bucket.begin() + per_class);
  }
  deterministic_shuffle(picked, rng);
  return picked;
}

namespace {

void render_shot(std::string& out, const std::string& question, const std::string& context,
                 const std::string& label) {
  out += "Question: ";
  out += question;
  out += "\nContext: ";
  out += context;
  out += "\nLabel:";
  if (!label.empty()) {
    out += ' ';
    out += label;
  }
}

}  // namespace

std::pair<std::string, std::string> build_classifier_prompt(
    const std::string& question, const NoteSentence& sentence,
    const std::vector<FewShotExample>& shots) {
  if (shots.empty()) throw ContractError("classifier prompt requires at least one shot");
  std::string user;
  for (const FewShotExample& shot : shots) {
    render_shot(user, shot.question, shot.context, std::string(to_string(shot.label)));
    user += "\n\n";
  }
  render_shot(user, question, sentence.text, "");
  return {prompts::kRelevanceSystemPrompt, std::move(user)};
}

std::optional<RelevanceLabel> parse_label(const std::string& raw) {
  // First non-empty line.
  std::istringstream lines(raw);
  std::string line;
  std::string candidate;
  while (std::getline(lines, line)) {
    candidate = trim(line);
    if (!candidate.empty()) break;
  }
  if (candidate.empty()) return std::nullopt;

  const std::string lowered = to_lower(candidate);
  if (lowered.rfind("label:", 0) == 0) candidate = trim(candidate.substr(6));

  while (!candidate.empty()) {
    const char last = candidate.back();
    if (last == '.' || last == ',' || last == '!' || last == '?' || last == ';' || last == ':' ||
        last == '"' || last == '\'') {
      candidate.pop_back();
    } else {
      break;
    }
  }
  return normalize_label_token(candidate);
}

VoteTally tally(const std::vector<std::optional<RelevanceLabel>>& parsed) {
  VoteTally t;
  for (const auto& label : parsed) {
    if (!label) {
      ++t.invalid;
    } else if (*label == RelevanceLabel::essential) {
      ++t.essential;
    } else if (*label == RelevanceLabel::supplementary) {
      ++t.supplementary;
    } else {
      ++t.not_relevant;
    }
  }
  return t;
}

RelevanceLabel apply_threshold(const VoteTally& t, const ThresholdPolicy& policy) {
  policy.validate();
  if (t.essential < 0 || t.supplementary < 0 || t.not_relevant < 0 || t.invalid < 0 ||
      t.total() != policy.n_samples) {
    throw ContractError("vote tally does not sum to the policy sample budget");
  }
  if (t.essential >= policy.essential_cutoff()) return RelevanceLabel::essential;
  if (t.supplementary >= policy.supplementary_min) return RelevanceLabel::supplementary;
  if (policy.single_essential_promotes && t.essential >= 1) return RelevanceLabel::supplementary;
  return RelevanceLabel::not_relevant;
}

CaseClassification classify_case(const CaseRecord& rec, const ThresholdPolicy& policy,
                                 const std::vector<FewShotExample>& pool, Gateway& gateway,
                                 const ClassifyOptions& options) {
  policy.validate();

  // One few-shot draw per case, stream keyed by case id alone so sentence
  // scheduling cannot perturb it.
  std::mt19937_64 shots_rng(SeedMixer(options.global_seed).mix("shots").mix(rec.case_id).value());
  const std::vector<FewShotExample> shots = sample_few_shot_set(pool, options.shots_k, shots_rng);

  CaseClassification result;
  for (const NoteSentence& sentence : rec.sentences) {
    auto [system_prompt, user_prompt] =
        build_classifier_prompt(rec.clinician_question, sentence, shots);
    SentenceAudit audit;
    audit.samples = gateway.sample_n(system_prompt, user_prompt, policy.n_samples,
                                     options.temperature, options.max_output_tokens);
    std::vector<std::optional<RelevanceLabel>> parsed;
    parsed.reserve(audit.samples.size());
    for (const std::string& sample : audit.samples) parsed.push_back(parse_label(sample));
    audit.tally = tally(parsed);
    audit.label = apply_threshold(audit.tally, policy);
    result.labels[sentence.sentence_id] = audit.label;
    result.audit[sentence.sentence_id] = std::move(audit);
  }
  return result;
}

std::vector<FewShotExample> parse_shots_pool(std::istream& stream) {
  std::vector<FewShotExample> pool;
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object() || !record.contains("question") ||
        !record["question"].is_string() || !record.contains("context") ||
        !record["context"].is_string() || !record.contains("label") ||
        !record["label"].is_string()) {
      throw ParseError(line_no,
                       "shots records must be {\"question\",\"context\",\"label\"} strings");
    }
    FewShotExample ex;
    ex.question = record["question"].get<std::string>();
    ex.context = record["context"].get<std::string>();
    if (ex.question.empty() || ex.context.empty()) {
      throw ParseError(line_no, "question and context must be non-empty");
    }
    const auto label = normalize_label_token(record["label"].get<std::string>());
    if (!label) {
      throw ParseError(line_no, "unknown label \"" + record["label"].get<std::string>() + "\"");
    }
    ex.label = *label;
    pool.push_back(std::move(ex));
  }
  return pool;
}

std::vector<FewShotExample> parse_shots_pool_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("unable to read shots pool file: " + path);
  return parse_shots_pool(in);
}

void write_audit(const std::vector<AuditRecord>& records, std::ostream& sink) {
  for (const AuditRecord& record : records) {
    json entry;
    entry["case_id"] = record.case_id;
    entry["sentence_id"] = record.sentence_id;
    entry["samples"] = record.audit.samples;
    entry["tally"] = json{{"essential", record.audit.tally.essential},
                          {"supplementary", record.audit.tally.supplementary},
                          {"not_relevant", record.audit.tally.not_relevant},
                          {"invalid", record.audit.tally.invalid}};
    entry["label"] = std::string(to_string(record.audit.label));
    sink << entry.dump() << '\n';
  }
}

std::vector<AuditRecord> parse_audit(std::istream& stream) {
  std::vector<AuditRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json entry = json::parse(line, nullptr, false);
    if (entry.is_discarded() || !entry.is_object()) {
      throw ParseError(line_no, "malformed audit record");
    }
    try {
      AuditRecord record;
      record.case_id = entry.at("case_id").get<std::string>();
      record.sentence_id = entry.at("sentence_id").get<int>();
      record.audit.samples = entry.at("samples").get<std::vector<std::string>>();
      const json& t = entry.at("tally");
      record.audit.tally.essential = t.at("essential").get<int>();
      record.audit.tally.supplementary = t.at("supplementary").get<int>();
      record.audit.tally.not_relevant = t.at("not_relevant").get<int>();
      record.audit.tally.invalid = t.at("invalid").get<int>();
      const auto label = normalize_label_token(entry.at("label").get<std::string>());
      if (!label) throw ParseError(line_no, "unknown label in audit record");
      record.audit.label = *label;
      records.push_back(std::move(record));
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("malformed audit record: ") + e.what());
    }
  }
  return records;
}

std::vector<AuditRecord> parse_audit_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("unable to read audit file: " + path);
  return parse_audit(in);
}

}  // namespace clinqa
