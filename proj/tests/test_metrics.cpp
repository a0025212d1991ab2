#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "clinqa/error.hpp"
#include "clinqa/metrics.hpp"
#include "clinqa/util.hpp"

#include "oracles.hpp"
#include "support.hpp"

using namespace clinqa;
using oracles::join_tokens;
using oracles::rouge_l_bruteforce;
using oracles::sari_bruteforce;

namespace {

std::string join(const std::vector<std::string>& tokens) { return join_tokens(tokens); }

std::vector<std::string> random_tokens(std::mt19937_64& rng, std::size_t max_len,
                                       const std::vector<std::string>& alphabet) {
  const std::size_t len = uniform_below(rng, max_len + 1);
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < len; ++i) {
    tokens.push_back(alphabet[uniform_below(rng, alphabet.size())]);
  }
  return tokens;
}

}  // namespace

// ---- confusion / prf ----------------------------------------------------------

TEST_CASE("confusion counts set memberships") {
  CHECK(confusion({1, 2}, {1, 2}, {1, 2, 3, 4, 5}) == ConfusionCounts{2, 0, 0, 3});
  CHECK(confusion({1}, {2}, {1, 2}) == ConfusionCounts{0, 1, 1, 0});
  CHECK(confusion({}, {}, {1, 2, 3}) == ConfusionCounts{0, 0, 0, 3});
  CHECK_THROWS_AS(confusion({7}, {}, {1, 2}), ContractError);
}

TEST_CASE("prf reproduces the published strict confusion rows") {
  // strict three-class rows: (tp, fp, fn) with hand-derived fractions
  const PRF essential = prf(ConfusionCounts{64, 67, 74, 223});
  CHECK(essential.precision == doctest::Approx(64.0 / 131.0).epsilon(1e-9));
  CHECK(essential.recall == doctest::Approx(64.0 / 138.0).epsilon(1e-9));
  CHECK(essential.f1 == doctest::Approx(128.0 / 269.0).epsilon(1e-9));

  const PRF supplementary = prf(ConfusionCounts{18, 89, 33, 288});
  CHECK(supplementary.precision == doctest::Approx(18.0 / 107.0).epsilon(1e-9));
  CHECK(supplementary.recall == doctest::Approx(18.0 / 51.0).epsilon(1e-9));
  CHECK(supplementary.f1 == doctest::Approx(36.0 / 158.0).epsilon(1e-9));

  const PRF not_relevant = prf(ConfusionCounts{130, 60, 109, 129});
  CHECK(not_relevant.precision == doctest::Approx(130.0 / 190.0).epsilon(1e-9));
  CHECK(not_relevant.recall == doctest::Approx(130.0 / 239.0).epsilon(1e-9));
  CHECK(not_relevant.f1 == doctest::Approx(260.0 / 429.0).epsilon(1e-9));
}

TEST_CASE("prf reproduces the published lenient confusion rows") {
  const PRF essential = prf(ConfusionCounts{129, 109, 60, 130});
  CHECK(essential.precision == doctest::Approx(129.0 / 238.0).epsilon(1e-9));
  CHECK(essential.recall == doctest::Approx(129.0 / 189.0).epsilon(1e-9));
  CHECK(essential.f1 == doctest::Approx(258.0 / 427.0).epsilon(1e-9));
}

TEST_CASE("prf zero-division convention and scale consistency") {
  const PRF zero = prf(ConfusionCounts{0, 0, 0, 5});
  CHECK(zero.precision == 0.0);
  CHECK(zero.recall == 0.0);
  CHECK(zero.f1 == 0.0);

  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    ConfusionCounts c{static_cast<long>(uniform_below(rng, 50)),
                      static_cast<long>(uniform_below(rng, 50)),
                      static_cast<long>(uniform_below(rng, 50)), 0};
    const long k = 1 + static_cast<long>(uniform_below(rng, 9));
    const ConfusionCounts scaled{c.tp * k, c.fp * k, c.fn * k, 0};
    const PRF a = prf(c);
    const PRF b = prf(scaled);
    CHECK(a.precision == doctest::Approx(b.precision).epsilon(1e-12));
    CHECK(a.recall == doctest::Approx(b.recall).epsilon(1e-12));
    CHECK(a.f1 == doctest::Approx(b.f1).epsilon(1e-12));
  }
}

TEST_CASE("citation_metrics micro pools, macro averages") {
  CaseLabels gold;
  gold["c1"] = {{1, RelevanceLabel::essential}, {2, RelevanceLabel::not_relevant}};
  gold["c2"] = {{1, RelevanceLabel::essential}, {2, RelevanceLabel::supplementary}};
  std::map<std::string, std::set<int>> universes{{"c1", {1, 2}}, {"c2", {1, 2}}};

  std::map<std::string, Answer> answers;
  answers["c1"] = Answer{{{"x", {1}}}};      // exact strict hit
  answers["c2"] = Answer{{{"y", {2}}}};      // strict miss (cites the supplementary one)
  const CitationScores scores = citation_metrics(answers, gold, universes);

  CHECK(scores.per_case.size() == 2);
  CHECK(scores.strict_macro.f1 == doctest::Approx(0.5));  // 1.0 and 0.0
  // pooled strict counts: c1 (1,0,0) + c2 (0,1,1)
  CHECK(scores.strict_pooled == ConfusionCounts{1, 1, 1, 1});
  const PRF micro = prf(ConfusionCounts{1, 1, 1, 1});
  CHECK(scores.strict_micro.f1 == doctest::Approx(micro.f1));
  // lenient: c2's citation of sentence 2 is a hit
  CHECK(scores.lenient_micro.recall == doctest::Approx(2.0 / 3.0));

  // pooling property: micro counts equal the sum of per-case counts
  ConfusionCounts summed;
  for (const auto& row : scores.per_case) summed += row.strict_counts;
  CHECK(summed == scores.strict_pooled);
}

TEST_CASE("citation_metrics expands the universe for out-of-case citations") {
  CaseLabels gold;
  gold["c1"] = {{1, RelevanceLabel::essential}};
  std::map<std::string, std::set<int>> universes{{"c1", {1}}};
  std::map<std::string, Answer> answers;
  answers["c1"] = Answer{{{"No citations found", {7}}}};  // fallback-style citation
  const CitationScores scores = citation_metrics(answers, gold, universes);
  CHECK(scores.strict_pooled == ConfusionCounts{0, 1, 1, 0});
  CHECK(scores.strict_micro.f1 == 0.0);
}

TEST_CASE("citation_metrics empty-gold empty-pred case scores one") {
  CaseLabels gold;
  gold["c1"] = {{1, RelevanceLabel::not_relevant}};
  std::map<std::string, std::set<int>> universes{{"c1", {1}}};
  const CitationScores scores =
      citation_metrics_from_ids({{"c1", {}}}, gold, universes);
  CHECK(scores.strict_macro.f1 == doctest::Approx(1.0));
  CHECK(scores.strict_micro.f1 == 0.0);  // no pooled tp anywhere
}

TEST_CASE("citation_metrics requires gold labels") {
  std::map<std::string, Answer> answers;
  answers["c1"] = Answer{{{"x", {1}}}};
  CHECK_THROWS_WITH_AS(citation_metrics(answers, {}, {{"c1", {1}}}),
                       doctest::Contains("no gold labels"), Error);
}

// ---- rouge ---------------------------------------------------------------------

TEST_CASE("rouge_l basics") {
  CHECK(rouge_l("same text here", "same text here") == doctest::Approx(1.0));
  CHECK(rouge_l("a b c d", "a c d e") == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(rouge_l("x y", "p q") == 0.0);
  CHECK(rouge_l("", "") == 0.0);
  CHECK(rouge_l("a", "") == 0.0);
  CHECK(rouge_l("Case INSENSITIVE", "case insensitive") == doctest::Approx(1.0));
}

TEST_CASE("rouge_l equals the subsequence-enumeration oracle exhaustively") {
  const std::vector<std::string> alphabet{"a", "b", "c"};
  // all pairs of token strings up to length 4 (121 x 121), exact
  const auto strings = oracles::all_token_strings(alphabet, 4);
  REQUIRE(strings.size() == 121);
  for (const auto& cand : strings) {
    for (const auto& ref : strings) {
      const double expected = rouge_l_bruteforce(cand, ref);
      CHECK(rouge_l(join(cand), join(ref)) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("rouge_l matches the oracle on random length-8 strings") {
  const std::vector<std::string> alphabet{"a", "b", "c"};
  std::mt19937_64 rng(23);
  for (int i = 0; i < 2000; ++i) {
    const auto cand = random_tokens(rng, 8, alphabet);
    const auto ref = random_tokens(rng, 8, alphabet);
    CHECK(rouge_l(join(cand), join(ref)) ==
          doctest::Approx(rouge_l_bruteforce(cand, ref)).epsilon(1e-12));
  }
}

// ---- bleu ----------------------------------------------------------------------

TEST_CASE("bleu identity and degenerate inputs") {
  CHECK(bleu("a b c d e", {"a b c d e"}) == doctest::Approx(1.0));
  CHECK(bleu("a", {"a"}) == doctest::Approx(1.0));          // short identity still 1
  CHECK(bleu("a b", {"a b"}) == doctest::Approx(1.0));
  CHECK(bleu("", {"a b"}) == 0.0);
  CHECK(bleu("x y z", {"p q r"}) == 0.0);                    // zero unigram overlap
  CHECK_THROWS_AS(bleu("a", {}), ContractError);
}

TEST_CASE("bleu matches hand-computed clipped-count examples") {
  // cand "a a a" vs ref "a b": p1 = 1/3 (clip to the single ref "a");
  // p2 = 1/(2+1) and p3 = 1/(1+1) by add-one smoothing; no 4-grams; BP = 1.
  const double expected = std::cbrt((1.0 / 3.0) * (1.0 / 3.0) * (1.0 / 2.0));
  CHECK(bleu("a a a", {"a b"}) == doctest::Approx(expected).epsilon(1e-6));
  CHECK(expected < 0.39);

  // brevity penalty: cand "the cat" vs ref "the cat sat": precisions 1, BP = e^(1 - 3/2)
  CHECK(bleu("the cat", {"the cat sat"}) == doctest::Approx(std::exp(-0.5)).epsilon(1e-6));

  // clipping with repeats: "the the the the" vs "the cat"
  // p1 = 1/4, p2 = 1/(3+1), p3 = 1/(2+1), p4 = 1/(1+1); BP = 1
  const double repeats =
      std::pow((1.0 / 4.0) * (1.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0), 0.25);
  CHECK(bleu("the the the the", {"the cat"}) == doctest::Approx(repeats).epsilon(1e-6));

  // multiple references: unigrams clipped against the max across refs
  // cand "a b" refs {"a x","y b"}: p1 = 2/2, p2 = 1/(1+1); BP = 1 (closest len = 2)
  CHECK(bleu("a b", {"a x", "y b"}) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
}

TEST_CASE("bleu brevity penalty picks the closest reference length") {
  // cand length 2; refs of length 2 and 9: closest is 2 -> BP = 1
  CHECK(bleu("a b", {"a b", "a b x x x x x x x"}) == doctest::Approx(1.0));
  // only a longer ref: BP = exp(1 - 4/2) with perfect precisions
  CHECK(bleu("a b", {"a b c d"}) == doctest::Approx(std::exp(-1.0)).epsilon(1e-6));
}

TEST_CASE("bleu(a,[a]) = 1 on random strings") {
  std::mt19937_64 rng(29);
  const std::vector<std::string> alphabet{"w1", "w2", "w3", "w4", "w5"};
  for (int i = 0; i < 200; ++i) {
    auto tokens = random_tokens(rng, 12, alphabet);
    if (tokens.empty()) tokens.push_back("w1");
    const std::string text = join(tokens);
    CHECK(bleu(text, {text}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rouge_l(text, text) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

// ---- sari ----------------------------------------------------------------------

TEST_CASE("sari degenerate identity scores one") {
  CHECK(sari("the cat sat", "the cat sat", {"the cat sat"}) == doctest::Approx(1.0));
}

TEST_CASE("sari matches the brute-force oracle on hand fixtures") {
  struct Fixture {
    std::string source, candidate;
    std::vector<std::string> references;
  };
  const std::vector<Fixture> fixtures = {
      {"the cat sat", "the dog sat", {"the dog sat"}},
      {"the cat sat on the mat", "the cat sat", {"a cat sat on a mat"}},
      {"a b c d e f", "a b c", {"a b c d", "a b"}},
      {"one two three", "", {"one three"}},
      {"alpha beta", "alpha beta gamma", {"alpha gamma"}},
      {"x x y", "x y", {"x y", "x x y"}},
  };
  for (const auto& f : fixtures) {
    CAPTURE(f.source);
    CAPTURE(f.candidate);
    for (int max_n : {2, 4}) {
      CHECK(sari(f.source, f.candidate, f.references, max_n) ==
            doctest::Approx(sari_bruteforce(f.source, f.candidate, f.references, max_n)).epsilon(1e-6));
    }
  }
}

TEST_CASE("sari matches the brute-force oracle on random 6-word fixtures") {
  const std::vector<std::string> alphabet{"a", "b", "c", "d"};
  std::mt19937_64 rng(37);
  for (int i = 0; i < 300; ++i) {
    const auto src = random_tokens(rng, 6, alphabet);
    const auto cand = random_tokens(rng, 6, alphabet);
    std::vector<std::string> refs;
    const std::size_t n_refs = 1 + uniform_below(rng, 2);
    for (std::size_t r = 0; r < n_refs; ++r) refs.push_back(join(random_tokens(rng, 6, alphabet)));
    const double expected = sari_bruteforce(join(src), join(cand), refs, 4);
    CHECK(sari(join(src), join(cand), refs, 4) == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("sari: empty candidate scores below a reference-matching candidate") {
  const std::string source = "the patient was started on dialysis for renal failure";
  const std::vector<std::string> refs = {"dialysis was started for renal failure"};
  CHECK(sari(source, "", refs) < sari(source, refs[0], refs));
  CHECK_THROWS_AS(sari("a", "a", {}), ContractError);
}

// ---- aggregation -----------------------------------------------------------------

TEST_CASE("aggregate reproduces the published overall relation") {
  EvaluationReport report;
  report.lenient_micro.f1 = 0.527;
  report.rouge_l = 0.321;
  AggregateConfig config;
  config.relevance_metrics = {"rouge_l"};
  aggregate(report, config);
  CHECK(report.factuality == doctest::Approx(0.527));
  CHECK(report.relevance == doctest::Approx(0.321));
  CHECK(report.overall == doctest::Approx(0.424).epsilon(1e-12));
}

TEST_CASE("aggregate means and overall relation hold for any inputs") {
  EvaluationReport report;
  report.rouge_l = 1.0;
  report.bleu = 0.5;
  report.sari = 0.0;
  report.strict_micro.f1 = 0.8;
  AggregateConfig config;
  config.factuality_source = "strict_micro_f1";
  aggregate(report, config);
  CHECK(report.relevance == doctest::Approx(0.5));
  CHECK(report.overall == doctest::Approx((0.8 + 0.5) / 2.0));

  std::mt19937_64 rng(41);
  for (int i = 0; i < 100; ++i) {
    report.lenient_micro.f1 = static_cast<double>(uniform_below(rng, 1000)) / 1000.0;
    report.rouge_l = static_cast<double>(uniform_below(rng, 1000)) / 1000.0;
    config.factuality_source = "lenient_micro_f1";
    config.relevance_metrics = {"rouge_l"};
    aggregate(report, config);
    CHECK(report.overall ==
          doctest::Approx((report.factuality + report.relevance) / 2.0).epsilon(1e-12));
  }

  config.factuality_source = "nope";
  CHECK_THROWS_AS(aggregate(report, config), ContractError);
}

TEST_CASE("aggregate merges external metrics into the relevance mean") {
  EvaluationReport report;
  report.rouge_l = 0.4;
  report.external["align"] = 0.8;
  AggregateConfig config;
  config.relevance_metrics = {"rouge_l", "align"};
  aggregate(report, config);
  CHECK(report.relevance == doctest::Approx(0.6));
  config.relevance_metrics = {"missing"};
  CHECK_THROWS_AS(aggregate(report, config), ContractError);
}

// ---- evaluate_answers ---------------------------------------------------------------

TEST_CASE("evaluate_answers scores parse failures as zero and continues") {
  std::vector<CaseRecord> cases = {
      testsupport::make_case("c1", "q1", {RelevanceLabel::essential, RelevanceLabel::not_relevant}),
      testsupport::make_case("c2", "q2", {RelevanceLabel::essential})};
  std::map<std::string, std::string> answers{
      {"c1", "note c1 sentence 1 detail |1|"},
      {"c2", "this line has no citation group"},
  };
  std::map<std::string, std::string> references{{"c1", "note c1 sentence 1 detail"},
                                                {"c2", "note c2 sentence 1 detail"}};
  const EvaluationReport report = evaluate_answers(cases, answers, references);
  REQUIRE(report.cases.size() == 2);
  const auto& c1 = report.cases[0].case_id == "c1" ? report.cases[0] : report.cases[1];
  const auto& c2 = report.cases[0].case_id == "c2" ? report.cases[0] : report.cases[1];
  CHECK(c1.parse_ok);
  CHECK(c1.strict.f1 == doctest::Approx(1.0));
  CHECK(c1.rouge_l == doctest::Approx(1.0));
  CHECK_FALSE(c2.parse_ok);
  CHECK(c2.strict.f1 == 0.0);
  CHECK(c2.rouge_l == 0.0);
  REQUIRE(report.diagnostics.size() == 1);
  CHECK(report.diagnostics[0].find("c2") != std::string::npos);
  // micro still counts c2's gold essential as a false negative
  CHECK(report.strict_micro.recall == doctest::Approx(0.5));
}

TEST_CASE("evaluate_answers truncates before scoring") {
  std::vector<CaseRecord> cases = {testsupport::make_case("c1", "q", {RelevanceLabel::essential})};
  std::string eighty;
  for (int i = 0; i < 80; ++i) eighty += (i ? " w" + std::to_string(i) : "w0");
  std::string seventy_five;
  for (int i = 0; i < 75; ++i) seventy_five += (i ? " w" + std::to_string(i) : "w0");

  std::map<std::string, std::string> references{{"c1", seventy_five}};
  const EvaluationReport over =
      evaluate_answers(cases, {{"c1", eighty + " |1|"}}, references);
  const EvaluationReport exact =
      evaluate_answers(cases, {{"c1", seventy_five + " |1|"}}, references);
  // the last 5 words never participate in scoring
  CHECK(over.rouge_l == doctest::Approx(exact.rouge_l).epsilon(1e-12));
  CHECK(over.bleu == doctest::Approx(exact.bleu).epsilon(1e-12));
  CHECK(over.rouge_l == doctest::Approx(1.0));
}

TEST_CASE("evaluate_answers requires gold and references") {
  std::vector<CaseRecord> cases = {testsupport::make_case("c1", "q", {RelevanceLabel::essential})};
  CHECK_THROWS_WITH_AS(evaluate_answers(cases, {{"c1", "x |1|"}}, {}),
                       doctest::Contains("no reference answer"), Error);
  cases[0].gold_labels.reset();
  CHECK_THROWS_WITH_AS(evaluate_answers(cases, {{"c1", "x |1|"}}, {{"c1", "r"}}),
                       doctest::Contains("no gold labels"), Error);
}

TEST_CASE("report rendering rounds to 4 decimals") {
  EvaluationReport report;
  report.strict_micro = PRF{1.0 / 3.0, 2.0 / 3.0, 0.5};
  report.rouge_l = 0.123456;
  CaseScore score;
  score.case_id = "c1";
  score.rouge_l = 0.9999999;
  report.cases.push_back(score);
  const std::string doc = report_to_json(report);
  CHECK(doc.find("0.3333") != std::string::npos);
  CHECK(doc.find("0.123456") == std::string::npos);
  CHECK(doc.find("0.1235") != std::string::npos);
  const std::string table = report_per_case_table(report);
  CHECK(table.find("c1\t0.0000\t0.0000\t1.0000") != std::string::npos);
}

TEST_CASE("references file parsing") {
  std::istringstream in(R"({"case_id":"c1","reference":"text one"}
{"case_id":"c2","reference":"text two"}
)");
  const auto refs = parse_references(in);
  CHECK(refs.at("c1") == "text one");
  CHECK(refs.at("c2") == "text two");
  std::istringstream dup(R"({"case_id":"c1","reference":"a"}
{"case_id":"c1","reference":"b"}
)");
  CHECK_THROWS_AS(parse_references(dup), ParseError);
}
