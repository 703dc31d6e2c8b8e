#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "ccs/world.hpp"

using namespace ccs;

namespace {

WorldConfig small_config(std::uint64_t seed) {
  WorldConfig c;
  c.n_entities = 12;
  c.n_relations = 3;
  c.n_facts = 20;
  c.n_distractors = 6;
  c.n_questions = 10;
  c.seed = seed;
  return c;
}

// Follows the chain by scanning every chain fact.
std::optional<std::size_t> brute_follow(const KnowledgeBase& kb, std::size_t head, std::size_t rel) {
  std::optional<std::size_t> found;
  for (const Fact& f : kb.facts()) {
    if (f.head == head && f.relation == rel) {
      if (found) return std::nullopt;  // ambiguous
      found = f.tail;
    }
  }
  return found;
}

std::vector<std::size_t> brute_ranking(const KnowledgeBase& kb, const Tokens& query, std::size_t k) {
  std::vector<std::pair<int, std::size_t>> scored;
  for (std::size_t id = 0; id < kb.corpus_size(); ++id) {
    const Fact& f = kb.corpus_fact(id);
    const std::string words[3] = {kb.entity(f.head).surface, kb.relation(f.relation).surface,
                                  kb.entity(f.tail).surface};
    int s = 0;
    for (const auto& q : query)
      if (q == words[0] || q == words[1] || q == words[2]) ++s;
    if (s > 0) scored.emplace_back(-s, id);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < scored.size() && i < k; ++i) ids.push_back(scored[i].second);
  return ids;
}

}  // namespace

TEST(World, TwoEntityWorldHasExactlyOneFact) {
  WorldConfig c;
  c.n_entities = 2;
  c.n_relations = 1;
  c.n_facts = 1;
  c.n_distractors = 0;
  c.seed = 7;
  const auto kb = generate_world(c);
  EXPECT_EQ(kb.facts().size(), 1u);
  EXPECT_NE(kb.facts()[0].head, kb.facts()[0].tail);
}

TEST(World, SameSeedSameSerialization) {
  const auto c = WorldConfig{};
  EXPECT_EQ(kb_to_string(generate_world(c)), kb_to_string(generate_world(c)));
  auto c2 = c;
  c2.seed = 1;
  EXPECT_NE(kb_to_string(generate_world(c)), kb_to_string(generate_world(c2)));
}

TEST(World, InfeasibleConfigIsRejected) {
  WorldConfig c;
  c.n_entities = 3;
  c.n_relations = 1;
  c.n_facts = 3;
  c.n_distractors = 1;
  EXPECT_THROW(generate_world(c), ConfigError);
  c.n_entities = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = WorldConfig{};
  c.hops = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(World, TypeInvariantsHold) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto kb = generate_world(WorldConfig{.seed = seed});
    std::set<std::string> surfaces;
    for (const auto& e : kb.entities()) {
      EXPECT_TRUE(surfaces.insert(e.surface).second);
      EXPECT_FALSE(is_tag_token(e.surface));
    }
    for (const auto& r : kb.relations()) {
      EXPECT_TRUE(surfaces.insert(r.surface).second) << r.surface;
      EXPECT_FALSE(is_tag_token(r.surface));
    }
    std::set<std::pair<std::size_t, std::size_t>> slots;
    std::set<Fact> unique;
    for (std::size_t id = 0; id < kb.corpus_size(); ++id) {
      const Fact& f = kb.corpus_fact(id);
      EXPECT_TRUE(slots.emplace(f.head, f.relation).second);
      EXPECT_TRUE(unique.insert(f).second);
    }
    EXPECT_EQ(kb.facts().size(), 150u);
    EXPECT_EQ(kb.distractors().size(), 50u);
  }
}

TEST(World, DefaultWorldQuestionsHaveUniqueAnswers) {
  const WorldConfig c;
  const auto kb = generate_world(c);
  const auto qs = generate_questions(kb, c);
  ASSERT_EQ(qs.size(), static_cast<std::size_t>(c.n_questions));
  for (const auto& q : qs) {
    std::optional<std::size_t> at = q.anchor;
    for (auto r : q.chain) {
      ASSERT_TRUE(at);
      at = brute_follow(kb, *at, r);
    }
    ASSERT_TRUE(at);
    EXPECT_EQ(*at, q.gold_answer());
  }
}

TEST(World, QuestionsMentionOnlyTheirAnchor) {
  const WorldConfig c;
  const auto kb = generate_world(c);
  for (const auto& q : generate_questions(kb, c)) {
    EXPECT_TRUE(contains_token(q.tokens, kb.entity(q.anchor).surface));
    for (auto r : q.chain) EXPECT_TRUE(contains_token(q.tokens, kb.relation(r).surface));
    for (const auto& e : kb.entities())
      if (e.id != q.anchor) EXPECT_FALSE(contains_token(q.tokens, e.surface)) << e.surface;
  }
}

TEST(World, TemplateInstantiation) {
  std::vector<Entity> es{{0, "anna", EntityTag::Person}, {1, "bert", EntityTag::Person}, {2, "cora", EntityTag::Loc}};
  std::vector<Relation> rs{{0, "born-in"}, {1, "capital-of"}};
  const KnowledgeBase kb(es, rs, {{0, 0, 1}, {1, 1, 2}}, {}, 0);

  WorldConfig one;
  one.hops = 1;
  one.n_questions = 2;
  auto q1 = generate_questions(kb, one);
  std::set<Tokens> rendered;
  for (const auto& q : q1) rendered.insert(q.tokens);
  EXPECT_TRUE(rendered.count(split_tokens("what is the born-in of anna")));
  for (const auto& q : q1)
    if (q.tokens == split_tokens("what is the born-in of anna")) EXPECT_EQ(q.gold_answer(), 1u);

  WorldConfig two;
  two.hops = 2;
  two.n_questions = 1;
  auto q2 = generate_questions(kb, two);
  ASSERT_EQ(q2.size(), 1u);
  EXPECT_EQ(q2[0].tokens, split_tokens("what is the capital-of of the born-in of anna"));
  EXPECT_EQ(q2[0].gold_answer(), 2u);

  WorldConfig three;
  three.hops = 3;
  EXPECT_THROW(generate_questions(kb, three), GenerationError);
}

TEST(World, ChainEnumerationMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto kb = generate_world(small_config(seed));
    std::set<std::vector<std::size_t>> expected;
    for (const Fact& a : kb.facts())
      for (const Fact& b : kb.facts())
        if (a.tail == b.head && a.relation != b.relation && b.tail != a.head) expected.insert({a.head, a.relation, b.relation});
    std::set<std::vector<std::size_t>> got;
    for (const auto& ch : enumerate_chains(kb, 2)) got.insert({ch.anchor, ch.relations[0], ch.relations[1]});
    EXPECT_EQ(got, expected);
  }
}

TEST(Retrieval, ExactFactTextRanksFirst) {
  const auto kb = generate_world(WorldConfig{});
  for (std::size_t id = 0; id < kb.corpus_size(); id += 17) {
    const auto hits = retrieve(kb, kb.render(kb.corpus_fact(id)), 10);
    ASSERT_FALSE(hits.empty());
    EXPECT_EQ(hits[0].fact_id, id);
    EXPECT_EQ(hits[0].score, 3.0);
  }
}

TEST(Retrieval, NoOverlapGivesEmptyList) {
  const auto kb = generate_world(WorldConfig{});
  EXPECT_TRUE(retrieve(kb, split_tokens("zzz qqq"), 10).empty());
  EXPECT_THROW(retrieve(kb, split_tokens("zzz"), 0), ContractError);
}

TEST(Retrieval, MatchesBruteForceScorer) {
  std::vector<Entity> es{{0, "ada", EntityTag::Person}, {1, "ben", EntityTag::Org}, {2, "cal", EntityTag::Loc}};
  std::vector<Relation> rs{{0, "r1"}, {1, "r2"}};
  const KnowledgeBase tiny(es, rs, {{0, 0, 1}, {1, 1, 2}, {2, 0, 0}}, {}, 0);
  const Tokens query{"r1", "ada"};
  std::vector<std::size_t> got;
  for (const auto& s : retrieve(tiny, query, 10)) got.push_back(s.fact_id);
  EXPECT_EQ(got, brute_ranking(tiny, query, 10));
  EXPECT_EQ(got, (std::vector<std::size_t>{0, 2}));

  const auto kb = generate_world(WorldConfig{});
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tokens q{kb.relation(rng.index(kb.relations().size())).surface, kb.entity(rng.index(kb.entities().size())).surface};
    if (trial % 3 == 0) q.push_back(kb.entity(rng.index(kb.entities().size())).surface);
    const auto hits = retrieve(kb, q, 10);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      ids.push_back(hits[i].fact_id);
      EXPECT_GE(hits[i].score, 1.0);
      if (i) EXPECT_LE(hits[i].score, hits[i - 1].score);
      EXPECT_EQ(hits[i].text, kb.render(hits[i].fact));
    }
    EXPECT_EQ(ids, brute_ranking(kb, q, 10));
  }
}

TEST(Retrieval, DistractorOnlyRestriction) {
  const auto kb = generate_world(WorldConfig{});
  for (const auto& s : retrieve(kb, split_tokens("what is the born-in of the member-of of x"), 10, true))
    EXPECT_TRUE(kb.is_distractor(s.fact_id));
}

TEST(World, LexicalSimilarity) {
  EXPECT_TRUE(lexically_similar("bada", "badan"));
  EXPECT_TRUE(lexically_similar("bada", "bida"));
  EXPECT_TRUE(lexically_similar("bada", "ada"));
  EXPECT_FALSE(lexically_similar("bada", "bada"));
  EXPECT_FALSE(lexically_similar("bada", "bidan"));
}

TEST(Persistence, KnowledgeBaseRoundTrip) {
  const auto kb = generate_world(small_config(4));
  std::stringstream ss(kb_to_string(kb));
  const auto back = read_kb_jsonl(ss);
  EXPECT_EQ(kb_to_string(back), kb_to_string(kb));
  EXPECT_EQ(world_hash(back), world_hash(kb));
}

TEST(Persistence, MalformedLineReportsLineNumber) {
  const auto kb = generate_world(small_config(4));
  std::string text = kb_to_string(kb);
  text += "{not json\n";
  std::stringstream ss(text);
  try {
    read_kb_jsonl(ss);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::size_t lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    EXPECT_NE(std::string(e.what()).find("line " + std::to_string(lines)), std::string::npos) << e.what();
  }
  std::stringstream wrong("{\"schema\":\"other\",\"version\":1}\n");
  EXPECT_THROW(read_kb_jsonl(wrong), ParseError);
}

TEST(Persistence, QuestionsRoundTripBySplit) {
  const auto c = small_config(2);
  const auto kb = generate_world(c);
  const auto qs = generate_questions(kb, c, 6);
  std::stringstream ss;
  write_questions_header(ss);
  write_questions_jsonl(ss, {qs.begin(), qs.begin() + 4}, "train");
  write_questions_jsonl(ss, {qs.begin() + 4, qs.end()}, "eval");
  const auto back = read_questions_jsonl(ss);
  ASSERT_EQ(back.at("train").size(), 4u);
  ASSERT_EQ(back.at("eval").size(), 2u);
  EXPECT_EQ(back.at("eval")[1].tokens, qs[5].tokens);
  EXPECT_EQ(back.at("eval")[1].gold_answer(), qs[5].gold_answer());
}

TEST(GoldAudit, CountsReadsPerContext) {
  auto& audit = GoldAccessAudit::instance();
  audit.reset();
  const auto c = small_config(1);
  const auto kb = generate_world(c);
  const auto qs = generate_questions(kb, c, 1);
  {
    ScopedAccessContext scope(AccessContext::Training);
    (void)qs[0].gold_answer();
  }
  {
    ScopedAccessContext scope(AccessContext::Evaluation);
    (void)qs[0].gold_answer();
    (void)qs[0].gold_answer();
  }
  EXPECT_EQ(audit.reads(AccessContext::Training), 1u);
  EXPECT_EQ(audit.reads(AccessContext::Evaluation), 2u);
}
