#include "clinqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "clinqa/error.hpp"
#include "clinqa/util.hpp"

namespace clinqa {

using nlohmann::json;

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

ConfusionCounts confusion(const std::set<int>& pred, const std::set<int>& gold_positive,
                          const std::set<int>& universe) {
  for (int id : pred) {
    if (universe.count(id) == 0) {
      throw ContractError("prediction id " + std::to_string(id) + " outside the universe");
    }
  }
  for (int id : gold_positive) {
    if (universe.count(id) == 0) {
      throw ContractError("gold id " + std::to_string(id) + " outside the universe");
    }
  }
  ConfusionCounts c;
  for (int id : universe) {
    const bool p = pred.count(id) != 0;
    const bool g = gold_positive.count(id) != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

PRF prf(const ConfusionCounts& c) {
  PRF out;
  out.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  out.recall = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

namespace {

PRF per_case_prf(const std::set<int>& pred, const std::set<int>& gold_positive,
                 const ConfusionCounts& counts) {
  if (gold_positive.empty() && pred.empty()) return PRF{1.0, 1.0, 1.0};
  return prf(counts);
}

PRF mean_prf(const std::vector<PRF>& values) {
  PRF out;
  if (values.empty()) return out;
  for (const PRF& v : values) {
    out.precision += v.precision;
    out.recall += v.recall;
    out.f1 += v.f1;
  }
  const double n = static_cast<double>(values.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

}  // namespace

CitationScores citation_metrics_from_ids(const std::map<std::string, std::set<int>>& predictions,
                                         const CaseLabels& gold,
                                         const std::map<std::string, std::set<int>>& universes,
                                         const std::set<std::string>& forced_zero) {
  CitationScores scores;
  std::vector<PRF> strict_per_case;
  std::vector<PRF> lenient_per_case;

  for (const auto& [case_id, pred] : predictions) {
    const auto gold_it = gold.find(case_id);
    if (gold_it == gold.end()) throw Error("no gold labels for case \"" + case_id + "\"");
    const auto universe_it = universes.find(case_id);
    if (universe_it == universes.end()) throw Error("no universe for case \"" + case_id + "\"");

    std::set<int> strict_gold;
    std::set<int> lenient_gold;
    for (const auto& [sentence_id, label] : gold_it->second) {
      if (label == RelevanceLabel::essential) strict_gold.insert(sentence_id);
      if (label != RelevanceLabel::not_relevant) lenient_gold.insert(sentence_id);
    }

    // Cited ids outside the case expand the universe and land as false
    // positives (fallback answers cite a random 1-10).
    std::set<int> universe = universe_it->second;
    universe.insert(pred.begin(), pred.end());

    CitationScores::PerCase row;
    row.case_id = case_id;
    row.strict_counts = confusion(pred, strict_gold, universe);
    row.lenient_counts = confusion(pred, lenient_gold, universe);
    if (forced_zero.count(case_id) != 0) {
      row.strict = PRF{};
      row.lenient = PRF{};
    } else {
      row.strict = per_case_prf(pred, strict_gold, row.strict_counts);
      row.lenient = per_case_prf(pred, lenient_gold, row.lenient_counts);
    }
    scores.strict_pooled += row.strict_counts;
    scores.lenient_pooled += row.lenient_counts;
    strict_per_case.push_back(row.strict);
    lenient_per_case.push_back(row.lenient);
    scores.per_case.push_back(std::move(row));
  }

  scores.strict_micro = prf(scores.strict_pooled);
  scores.lenient_micro = prf(scores.lenient_pooled);
  scores.strict_macro = mean_prf(strict_per_case);
  scores.lenient_macro = mean_prf(lenient_per_case);
  return scores;
}

CitationScores citation_metrics(const std::map<std::string, Answer>& answers,
                                const CaseLabels& gold,
                                const std::map<std::string, std::set<int>>& universes) {
  std::map<std::string, std::set<int>> predictions;
  for (const auto& [case_id, answer] : answers) predictions[case_id] = collect_cited_ids(answer);
  return citation_metrics_from_ids(predictions, gold, universes);
}

// ---- lexical metrics ---------------------------------------------------------

namespace {

std::vector<std::string> tokenize(const std::string& text) {
  return split_words(to_lower(text));
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> curr(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
    }
    std::swap(prev, curr);
  }
  return prev[b.size()];
}

using NgramCounts = std::map<std::vector<std::string>, double>;

NgramCounts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n || n == 0) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                    tokens.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
  }
  return counts;
}

double harmonic(double p, double r) { return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

double rouge_l(const std::string& candidate, const std::string& reference) {
  const std::vector<std::string> cand = tokenize(candidate);
  const std::vector<std::string> ref = tokenize(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(cand, ref));
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  return harmonic(p, r);
}

double bleu(const std::string& candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw ContractError("bleu requires at least one reference");
  const std::vector<std::string> cand = tokenize(candidate);
  if (cand.empty()) return 0.0;

  std::vector<std::vector<std::string>> refs;
  refs.reserve(references.size());
  for (const std::string& r : references) refs.push_back(tokenize(r));

  double log_sum = 0.0;
  int orders = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts cand_counts = ngram_counts(cand, n);
    if (cand_counts.empty()) continue;  // candidate too short for this order

    NgramCounts max_ref;
    for (const auto& ref : refs) {
      for (const auto& [gram, count] : ngram_counts(ref, n)) {
        max_ref[gram] = std::max(max_ref[gram], count);
      }
    }
    double clipped = 0.0;
    double total = 0.0;
    for (const auto& [gram, count] : cand_counts) {
      const auto it = max_ref.find(gram);
      clipped += std::min(count, it == max_ref.end() ? 0.0 : it->second);
      total += count;
    }
    double precision = 0.0;
    if (clipped > 0.0) {
      precision = clipped / total;
    } else if (n >= 2) {
      precision = 1.0 / (total + 1.0);  // add-one smoothing on zero counts
    } else {
      return 0.0;  // no unigram overlap at all
    }
    log_sum += std::log(precision);
    ++orders;
  }
  if (orders == 0) return 0.0;

  // Closest reference length; ties favor the shorter reference.
  const std::size_t c = cand.size();
  std::size_t r_len = refs.front().size();
  for (const auto& ref : refs) {
    const auto dist = [c](std::size_t len) {
      return len > c ? len - c : c - len;
    };
    if (dist(ref.size()) < dist(r_len) || (dist(ref.size()) == dist(r_len) && ref.size() < r_len)) {
      r_len = ref.size();
    }
  }
  const double bp = c >= r_len ? 1.0
                               : std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c));
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

double sari(const std::string& source, const std::string& candidate,
            const std::vector<std::string>& references, int max_n) {
  if (references.empty()) throw ContractError("sari requires at least one reference");
  if (max_n < 1) throw ContractError("sari: max_n must be >= 1");

  const std::vector<std::string> src = tokenize(source);
  const std::vector<std::string> cand = tokenize(candidate);
  std::vector<std::vector<std::string>> refs;
  refs.reserve(references.size());
  for (const std::string& r : references) refs.push_back(tokenize(r));
  const double num_refs = static_cast<double>(refs.size());

  double total = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts src_counts = ngram_counts(src, static_cast<std::size_t>(n));
    const NgramCounts cand_counts = ngram_counts(cand, static_cast<std::size_t>(n));
    NgramCounts ref_sum;
    for (const auto& ref : refs) {
      for (const auto& [gram, count] : ngram_counts(ref, static_cast<std::size_t>(n))) {
        ref_sum[gram] += count;
      }
    }
    const auto count_of = [](const NgramCounts& counts, const std::vector<std::string>& gram) {
      const auto it = counts.find(gram);
      return it == counts.end() ? 0.0 : it->second;
    };

    // keep: n-grams retained from the source, scored against the fraction
    // of references that also retain them.
    double keep_num = 0.0;
    double keep_p_den = 0.0;
    double keep_r_den = 0.0;
    for (const auto& [gram, src_count] : src_counts) {
      const double in_cand = std::min(src_count, count_of(cand_counts, gram));
      const double in_refs = std::min(src_count, count_of(ref_sum, gram) / num_refs);
      keep_num += std::min(in_cand, in_refs);
      keep_p_den += in_cand;
      keep_r_den += in_refs;
    }
    const double keep_p = keep_p_den > 0.0 ? keep_num / keep_p_den : 1.0;
    const double keep_r = keep_r_den > 0.0 ? keep_num / keep_r_den : 1.0;
    const double f_keep = harmonic(keep_p, keep_r);

    // add: set semantics over n-grams absent from the source.
    std::set<std::vector<std::string>> added;
    for (const auto& [gram, count] : cand_counts) {
      (void)count;
      if (count_of(src_counts, gram) == 0.0) added.insert(gram);
    }
    std::set<std::vector<std::string>> addable;
    for (const auto& [gram, count] : ref_sum) {
      (void)count;
      if (count_of(src_counts, gram) == 0.0) addable.insert(gram);
    }
    double add_good = 0.0;
    for (const auto& gram : added) {
      if (count_of(ref_sum, gram) > 0.0) add_good += 1.0;
    }
    const double add_p = !added.empty() ? add_good / static_cast<double>(added.size()) : 1.0;
    const double add_r = !addable.empty() ? add_good / static_cast<double>(addable.size()) : 1.0;
    const double f_add = harmonic(add_p, add_r);

    // delete: precision only, with fractional reference counts.
    double del_num = 0.0;
    double del_den = 0.0;
    for (const auto& [gram, src_count] : src_counts) {
      const double deleted = std::max(src_count - count_of(cand_counts, gram), 0.0);
      const double deletable = std::max(src_count - count_of(ref_sum, gram) / num_refs, 0.0);
      del_num += std::min(deleted, deletable);
      del_den += deleted;
    }
    const double del_p = del_den > 0.0 ? del_num / del_den : 1.0;

    total += (f_keep + f_add + del_p) / 3.0;
  }
  return total / static_cast<double>(max_n);
}

// ---- evaluation -----------------------------------------------------------------

namespace {

std::string answer_plain_text(const Answer& answer) {
  std::string text;
  for (const AnswerSentence& s : answer.sentences) {
    if (!text.empty() && !s.text.empty()) text.push_back(' ');
    text += s.text;
  }
  return text;
}

double mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double round4(double v) { return std::round(v * 10000.0) / 10000.0; }

json prf_to_json(const PRF& v) {
  return json{{"precision", round4(v.precision)}, {"recall", round4(v.recall)}, {"f1", round4(v.f1)}};
}

}  // namespace

void aggregate(EvaluationReport& report, const AggregateConfig& config) {
  if (config.factuality_source == "strict_micro_f1") {
    report.factuality = report.strict_micro.f1;
  } else if (config.factuality_source == "strict_macro_f1") {
    report.factuality = report.strict_macro.f1;
  } else if (config.factuality_source == "lenient_micro_f1") {
    report.factuality = report.lenient_micro.f1;
  } else if (config.factuality_source == "lenient_macro_f1") {
    report.factuality = report.lenient_macro.f1;
  } else {
    throw ContractError("unknown factuality source \"" + config.factuality_source + "\"");
  }

  std::vector<double> parts;
  for (const std::string& name : config.relevance_metrics) {
    if (name == "rouge_l") {
      parts.push_back(report.rouge_l);
    } else if (name == "bleu") {
      parts.push_back(report.bleu);
    } else if (name == "sari") {
      parts.push_back(report.sari);
    } else {
      const auto it = report.external.find(name);
      if (it == report.external.end()) {
        throw ContractError("relevance metric \"" + name + "\" has no scores");
      }
      parts.push_back(it->second);
    }
  }
  report.relevance = mean(parts);
  report.overall = (report.factuality + report.relevance) / 2.0;
}

EvaluationReport evaluate_answers(const std::vector<CaseRecord>& cases,
                                  const std::map<std::string, std::string>& raw_answers,
                                  const std::map<std::string, std::string>& references,
                                  const EvalOptions& options) {
  std::map<std::string, const CaseRecord*> by_id;
  for (const CaseRecord& rec : cases) by_id[rec.case_id] = &rec;

  EvaluationReport report;
  CaseLabels gold;
  std::map<std::string, std::set<int>> universes;
  std::map<std::string, Answer> parsed_answers;
  std::map<std::string, CaseScore> case_scores;

  std::vector<double> rouge_values;
  std::vector<double> bleu_values;
  std::vector<double> sari_values;
  std::map<std::string, std::vector<double>> external_values;

  for (const auto& [case_id, raw] : raw_answers) {
    const auto rec_it = by_id.find(case_id);
    if (rec_it == by_id.end()) throw Error("answer for unknown case \"" + case_id + "\"");
    const CaseRecord& rec = *rec_it->second;
    if (!rec.gold_labels) throw Error("case \"" + case_id + "\" has no gold labels");
    const auto ref_it = references.find(case_id);
    if (ref_it == references.end()) throw Error("no reference answer for case \"" + case_id + "\"");

    gold[case_id] = *rec.gold_labels;
    std::set<int>& universe = universes[case_id];
    std::string source_text;
    for (const NoteSentence& s : rec.sentences) {
      universe.insert(s.sentence_id);
      if (!source_text.empty()) source_text.push_back(' ');
      source_text += s.text;
    }

    CaseScore score;
    score.case_id = case_id;
    try {
      // Scoring-script order: parse citations first, then truncate.
      const Answer truncated = truncate_to_limit(parse_answer(raw), options.word_limit);
      parsed_answers[case_id] = truncated;
      const std::string candidate = answer_plain_text(truncated);
      score.rouge_l = rouge_l(candidate, ref_it->second);
      score.bleu = bleu(candidate, {ref_it->second});
      score.sari = sari(source_text, candidate, {ref_it->second});
    } catch (const AnswerParseError& e) {
      score.parse_ok = false;
      score.note = e.what();
      report.diagnostics.push_back("case " + case_id + ": unparseable answer: " + e.what());
      // Scores stay 0; citation metrics see an empty prediction.
    }
    rouge_values.push_back(score.rouge_l);
    bleu_values.push_back(score.bleu);
    sari_values.push_back(score.sari);
    for (const auto& [name, per_case] : options.external_metrics) {
      const auto it = per_case.find(case_id);
      if (it != per_case.end()) {
        score.external[name] = it->second;
        external_values[name].push_back(it->second);
      }
    }
    case_scores[case_id] = std::move(score);
  }

  // Citation scoring: unparseable answers contribute an empty prediction,
  // so their gold positives still pool in as false negatives, and their
  // per-case scores are forced to zero.
  std::map<std::string, std::set<int>> predictions;
  std::set<std::string> unparseable;
  for (const auto& [case_id, raw] : raw_answers) {
    (void)raw;
    const auto it = parsed_answers.find(case_id);
    if (it == parsed_answers.end()) {
      predictions[case_id] = {};
      unparseable.insert(case_id);
    } else {
      predictions[case_id] = collect_cited_ids(it->second);
    }
  }
  const CitationScores citations = citation_metrics_from_ids(predictions, gold, universes, unparseable);
  report.strict_micro = citations.strict_micro;
  report.strict_macro = citations.strict_macro;
  report.lenient_micro = citations.lenient_micro;
  report.lenient_macro = citations.lenient_macro;
  for (const CitationScores::PerCase& row : citations.per_case) {
    CaseScore& score = case_scores[row.case_id];
    if (score.parse_ok) {
      score.strict = row.strict;
      score.lenient = row.lenient;
    }
  }

  report.rouge_l = mean(rouge_values);
  report.bleu = mean(bleu_values);
  report.sari = mean(sari_values);
  for (const auto& [name, values] : external_values) report.external[name] = mean(values);

  for (auto& [case_id, score] : case_scores) {
    (void)case_id;
    report.cases.push_back(std::move(score));
  }
  aggregate(report, options.aggregate);
  return report;
}

std::string report_to_json(const EvaluationReport& report) {
  json doc;
  doc["citations"] = json{{"strict_micro", prf_to_json(report.strict_micro)},
                          {"strict_macro", prf_to_json(report.strict_macro)},
                          {"lenient_micro", prf_to_json(report.lenient_micro)},
                          {"lenient_macro", prf_to_json(report.lenient_macro)}};
  doc["lexical"] = json{{"rouge_l", round4(report.rouge_l)},
                        {"bleu", round4(report.bleu)},
                        {"sari", round4(report.sari)}};
  json ext = json::object();
  for (const auto& [name, value] : report.external) ext[name] = round4(value);
  doc["external"] = std::move(ext);
  doc["factuality"] = round4(report.factuality);
  doc["relevance"] = round4(report.relevance);
  doc["overall"] = round4(report.overall);
  json cases = json::array();
  for (const CaseScore& score : report.cases) {
    json row;
    row["case_id"] = score.case_id;
    row["parse_ok"] = score.parse_ok;
    row["strict_f1"] = round4(score.strict.f1);
    row["lenient_f1"] = round4(score.lenient.f1);
    row["rouge_l"] = round4(score.rouge_l);
    row["bleu"] = round4(score.bleu);
    row["sari"] = round4(score.sari);
    for (const auto& [name, value] : score.external) row[name] = round4(value);
    if (!score.note.empty()) row["note"] = score.note;
    cases.push_back(std::move(row));
  }
  doc["cases"] = std::move(cases);
  doc["diagnostics"] = report.diagnostics;
  return doc.dump(2) + "\n";
}

namespace {

std::string fixed4(double v) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << v;
  return out.str();
}

}  // namespace

std::string report_per_case_table(const EvaluationReport& report) {
  std::ostringstream out;
  out << "case_id\tstrict_f1\tlenient_f1\trouge_l\tbleu\tsari\tparse_ok\n";
  for (const CaseScore& score : report.cases) {
    out << score.case_id << '\t' << fixed4(score.strict.f1) << '\t' << fixed4(score.lenient.f1)
        << '\t' << fixed4(score.rouge_l) << '\t' << fixed4(score.bleu) << '\t'
        << fixed4(score.sari) << '\t' << (score.parse_ok ? "1" : "0") << '\n';
  }
  return out.str();
}

std::map<std::string, std::string> parse_references(std::istream& stream) {
  std::map<std::string, std::string> refs;
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object() || !record.contains("case_id") ||
        !record["case_id"].is_string() || !record.contains("reference") ||
        !record["reference"].is_string()) {
      throw ParseError(line_no, "reference records must be {\"case_id\", \"reference\"} strings");
    }
    const std::string case_id = record["case_id"].get<std::string>();
    if (refs.count(case_id) != 0) throw ParseError(line_no, "duplicate case_id \"" + case_id + "\"");
    refs[case_id] = record["reference"].get<std::string>();
  }
  return refs;
}

std::map<std::string, std::string> parse_references_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("unable to read references file: " + path);
  return parse_references(in);
}

}  // namespace clinqa
