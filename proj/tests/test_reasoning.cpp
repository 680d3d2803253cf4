#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "test_support.hpp"

namespace xalign {
namespace {

using testing::bundled_kb;
using testing::data_dir;
using testing::make_record;
using testing::random_matrix;
using testing::random_vector;

FusionOutput attention_only(std::vector<Matrix> heads) {
  FusionOutput f;
  f.attention = std::move(heads);
  return f;
}

KnowledgeContext pepe_context() {
  const auto& kb = bundled_kb();
  return retrieve_and_aggregate(
      extract_entities(make_record("fig1", {"welcome", "to", "our", "neighborhood"}, {"pepe_the_frog"}), kb), kb);
}

TEST(Evidence, NoFactsMeansNoEvidence) {
  const auto f = attention_only({Matrix(3, 1, 1.0)});
  EXPECT_TRUE(build_evidence(KnowledgeContext{}, f, 3).empty());
}

TEST(Evidence, UniformAttentionGivesUniformSalience) {
  const auto ctx = pepe_context();
  const std::size_t lk = ctx.facts.size();
  ASSERT_EQ(lk, 3u);
  const auto f = attention_only({Matrix(5, lk, 1.0 / 3.0), Matrix(5, lk, 1.0 / 3.0)});
  const auto ev = build_evidence(ctx, f, 4);
  ASSERT_EQ(ev.size(), 3u);
  for (const auto& e : ev) {
    EXPECT_NEAR(e.salience, 1.0 / 3.0, 1e-15);
    EXPECT_EQ(e.entity.entity_id, "pepe_the_frog");
    EXPECT_EQ(e.symbol, std::optional<std::string>("alt-right symbol"));
  }
  EXPECT_EQ(ev[0].fact_index, 0u);
  EXPECT_EQ(ev[2].fact_index, 2u);
}

TEST(Evidence, SalienceMatchesLoopOracle) {
  const auto& kb = bundled_kb();
  const auto rec = make_record("r", {"look", "pepe", "the", "frog", "now"}, {"doge", "sonnenrad"});
  const auto ctx = retrieve_and_aggregate(extract_entities(rec, kb), kb);
  ASSERT_GE(ctx.facts.size(), 3u);
  std::mt19937_64 gen(1);
  std::vector<Matrix> heads;
  for (int h = 0; h < 4; ++h) heads.push_back(random_matrix(7, ctx.facts.size(), gen, 0.0, 1.0));
  const auto ev = build_evidence(ctx, attention_only(heads), 5);
  ASSERT_EQ(ev.size(), ctx.facts.size());
  for (std::size_t k = 0; k < ev.size(); ++k) {
    const auto& link = ctx.links[ctx.facts[k].link_index];
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < link.length; ++r) rows.push_back((link.modality == Modality::text ? 0 : 5) + link.start + r);
    double s = 0.0;
    for (const auto& a : heads)
      for (std::size_t r : rows) s += a(r, k);
    EXPECT_NEAR(ev[k].salience, s / (4.0 * static_cast<double>(rows.size())), 1e-14);
  }
}

TEST(Evidence, ShapeMismatchIsNumericError) {
  const auto ctx = pepe_context();
  EXPECT_THROW(build_evidence(ctx, attention_only({Matrix(5, 2, 0.5)}), 4), NumericError);
}

struct Candidates {
  std::vector<EvidenceTuple> evidence;
  std::vector<Vector> entities;
  Matrix m_k;
  Vector pooled;
  Matrix w_r;
};

Candidates random_candidates(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Candidates c;
  c.m_k = random_matrix(n, d, gen);
  c.pooled = random_vector(d, gen);
  c.w_r = random_matrix(1, 3 * d, gen);
  for (std::size_t i = 0; i < n; ++i) {
    EvidenceTuple e;
    e.entity.entity_id = "e" + std::to_string(i % 3);
    e.fact_index = i;
    c.evidence.push_back(e);
    c.entities.push_back(random_vector(d, gen));
  }
  return c;
}

TEST(ScoreAndSelect, SingleCandidateScoresOne) {
  auto c = random_candidates(1, 4, 2);
  const auto chain = score_and_select(c.evidence, c.pooled, c.entities, c.m_k, c.w_r, 3, 0.07);
  ASSERT_EQ(chain.steps.size(), 1u);
  EXPECT_DOUBLE_EQ(chain.steps[0].score, 1.0);
  EXPECT_TRUE(score_and_select({}, c.pooled, {}, c.m_k, c.w_r, 3, 0.07).steps.empty());
}

TEST(ScoreAndSelect, KeepsAllWhenMExceedsCandidates) {
  auto c = random_candidates(2, 4, 3);
  EXPECT_EQ(score_and_select(c.evidence, c.pooled, c.entities, c.m_k, c.w_r, 5, 0.07).steps.size(), 2u);
}

TEST(ScoreAndSelect, MatchesSortOracle) {
  const std::size_t d = 6;
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    auto c = random_candidates(5, d, seed);
    const double tau = 0.07 + 0.1 * static_cast<double>(seed % 3);
    const auto chain = score_and_select(c.evidence, c.pooled, c.entities, c.m_k, c.w_r, 3, tau);
    std::vector<double> logits;
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        s += c.w_r(0, j) * c.pooled[j] + c.w_r(0, d + j) * c.entities[i][j] + c.w_r(0, 2 * d + j) * c.m_k(i, j);
      logits.push_back(s / tau);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    std::vector<std::size_t> idx(5);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    ASSERT_EQ(chain.steps.size(), 3u);
    double total = 0.0;
    for (double s : chain.all_scores) total += s;
    EXPECT_NEAR(total, 1.0, 1e-12);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(chain.steps[k].evidence.fact_index, idx[k]);
      EXPECT_NEAR(chain.steps[k].score, logits[idx[k]] / z, 1e-12);
    }
  }
}

TEST(ScoreAndSelect, TiesBrokenByEntityThenFactRow) {
  auto c = random_candidates(4, 4, 4);
  c.w_r = Matrix(1, 12);  // every logit 0
  c.evidence[0].entity.entity_id = "b";
  c.evidence[1].entity.entity_id = "a";
  c.evidence[2].entity.entity_id = "b";
  c.evidence[3].entity.entity_id = "a";
  const auto chain = score_and_select(c.evidence, c.pooled, c.entities, c.m_k, c.w_r, 4, 0.07);
  std::vector<std::size_t> order;
  for (const auto& s : chain.steps) order.push_back(s.evidence.fact_index);
  EXPECT_EQ(order, (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(ScoreAndSelect, WrongReasoningShapeIsNumericError) {
  auto c = random_candidates(2, 4, 5);
  EXPECT_THROW(score_and_select(c.evidence, c.pooled, c.entities, c.m_k, Matrix(1, 8), 3, 0.07), NumericError);
}

ReasoningChain pepe_chain() {
  const auto ctx = pepe_context();
  const auto f = attention_only({Matrix(5, 3, 1.0 / 3.0)});
  auto ev = build_evidence(ctx, f, 4);
  const auto it = std::find_if(ev.begin(), ev.end(), [](const EvidenceTuple& e) { return e.relation == "associated_with"; });
  EXPECT_NE(it, ev.end());
  ReasoningChain chain;
  chain.steps.push_back({*it, 1.0});
  chain.all_scores = {1.0};
  return chain;
}

TEST(Explanation, PepeSymbolText) {
  const auto e = generate_explanation(pepe_chain(), 1, 0.91, Task::hatefulness);
  EXPECT_EQ(e.template_id, "abusive_symbol_image");
  EXPECT_EQ(e.text.rfind("Detected pepe the frog symbol linked to alt-right groups", 0), 0u) << e.text;
  EXPECT_EQ(e.text,
            "Detected pepe the frog symbol linked to alt-right groups; image phrase 'pepe_the_frog' amplifies "
            "exclusion.");
  EXPECT_FALSE(e.flagged);
  std::string why;
  EXPECT_TRUE(audit_explanation(e, &why)) << why;
}

TEST(Explanation, BenignIsVerbatim) {
  const auto e = generate_explanation(pepe_chain(), 0, 0.1, Task::hatefulness);
  EXPECT_EQ(e.text, "No culturally harmful symbol or phrase detected; knowledge context does not indicate abuse.");
  EXPECT_EQ(e.template_id, "benign");
}

TEST(Explanation, AbusiveWithoutEvidenceIsFlagged) {
  const auto e = generate_explanation(ReasoningChain{}, 1, 0.8, std::nullopt);
  EXPECT_TRUE(e.flagged);
  EXPECT_EQ(e.text, "Predicted abusive without retrievable knowledge evidence.");
  EXPECT_TRUE(audit_explanation(e));
}

TEST(Explanation, AdditionalStepsAppendSnippets) {
  const auto ctx = pepe_context();
  auto ev = build_evidence(ctx, attention_only({Matrix(5, 3, 1.0 / 3.0)}), 4);
  ReasoningChain chain;
  for (std::size_t i = 0; i < ev.size(); ++i) chain.steps.push_back({ev[i], 1.0 / 3.0});
  const auto e = generate_explanation(chain, 1, 0.9, Task::harmfulness);
  for (std::size_t i = 1; i < ev.size(); ++i) {
    std::string snippet = ev[i].snippet;
    while (!snippet.empty() && snippet.back() == '.') snippet.pop_back();
    EXPECT_NE(e.text.find("; also " + snippet), std::string::npos) << e.text;
  }
  EXPECT_EQ(e.text.back(), '.');
  EXPECT_TRUE(audit_explanation(e));
}

TEST(Explanation, FactTemplateWithoutSymbol) {
  auto chain = pepe_chain();
  chain.steps[0].evidence.symbol.reset();
  chain.steps[0].evidence.entity.modality = Modality::text;
  const auto e = generate_explanation(chain, 1, 0.9, Task::sarcasm);
  EXPECT_EQ(e.template_id, "abusive_fact_text");
  EXPECT_EQ(e.text,
            "Knowledge links pepe the frog to alt-right groups (is associated with); text phrase 'pepe_the_frog' "
            "amplifies mockery.");
}

TEST(Explanation, Deterministic) {
  const auto a = generate_explanation(pepe_chain(), 1, 0.9, Task::misogyny);
  const auto b = generate_explanation(pepe_chain(), 1, 0.9, Task::misogyny);
  EXPECT_EQ(a.text, b.text);
}

TEST(Audit, RejectsTamperedText) {
  auto e = generate_explanation(pepe_chain(), 1, 0.9, Task::hatefulness);
  auto bad = e;
  bad.text = "Detected {entity} symbol";
  EXPECT_FALSE(audit_explanation(bad));
  bad = e;
  bad.slots[1].value = "someone else";
  EXPECT_FALSE(audit_explanation(bad));
  bad = e;
  bad.text = "unrelated text.";
  EXPECT_FALSE(audit_explanation(bad));
}

TEST(Audit, EveryToyExplanationIsGrounded) {
  const auto& kb = bundled_kb();
  const auto records = load_dataset(data_dir() / "toy" / "test.jsonl");
  Checkpoint ck;
  ck.vocab = build_vocab(records, kb);
  ck.params = init_model(ck.config.model, ck.vocab.size(), 3);
  std::size_t evidence_backed = 0;
  for (double bias : {-50.0, 50.0}) {
    ck.params.head.bias(0, 0) = bias;
    for (const auto& r : explain_records(ck, records, kb)) {
      ASSERT_TRUE(r.explanation);
      std::string why;
      EXPECT_TRUE(audit_explanation(*r.explanation, &why)) << r.prediction.id << ": " << why;
      if (!r.explanation->chain.steps.empty() && r.prediction.label == 1) ++evidence_backed;
    }
  }
  EXPECT_GT(evidence_backed, 0u);
}

TEST(Templates, ParseErrors) {
  const std::string builtin(kBuiltinTemplates);
  EXPECT_THROW(TemplateTable::parse("benign\tonly\n"), DataError);
  EXPECT_THROW(TemplateTable::parse(builtin + "benign\tagain\n"), DataError);
  EXPECT_THROW(TemplateTable::parse(builtin + "broken line without tab\n"), DataError);
  const auto t = TemplateTable::parse(builtin);
  EXPECT_THROW(t.render("abusive_symbol_text", {{"entity", "x"}}), DataError);
  auto odd = TemplateTable::parse(builtin + "extra\tstart {oops\n");
  EXPECT_THROW(odd.render("extra", {{"oops", "x"}}), DataError);
}

TEST(Templates, BundledFileMatchesBuiltin) {
  std::ifstream in(data_dir() / "templates.txt");
  std::stringstream buf;
  buf << in.rdbuf();
  EXPECT_EQ(buf.str(), std::string(kBuiltinTemplates));
  const auto loaded = TemplateTable::load(data_dir() / "templates.txt");
  EXPECT_EQ(loaded.pattern("benign"), TemplateTable::builtin().pattern("benign"));
}

TEST(HarmCategory, Mapping) {
  EXPECT_EQ(harm_category(Task::hatefulness), "exclusion");
  EXPECT_EQ(harm_category(Task::harmfulness), "harm");
  EXPECT_EQ(harm_category(Task::misogyny), "misogyny");
  EXPECT_EQ(harm_category(Task::offensiveness), "offense");
  EXPECT_EQ(harm_category(Task::sarcasm), "mockery");
  EXPECT_EQ(harm_category(std::nullopt), "abuse");
}

}  // namespace
}  // namespace xalign
