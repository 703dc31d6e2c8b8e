#include <gtest/gtest.h>

#include "ccs/reconstruct.hpp"
#include "ccs/reward.hpp"

using namespace ccs;

namespace {

Snippet snip(const std::string& text) { return Snippet{0, {}, split_tokens(text), 1.0}; }

BottleneckedStep step(std::optional<std::string> action, std::vector<std::string> texts) {
  BottleneckedStep s;
  if (action) s.action = split_tokens(*action);
  for (const auto& t : texts) s.observation.snippets.push_back(snip(t));
  return s;
}

KnowledgeBase toy_kb() {
  std::vector<Entity> es{{0, "ann", EntityTag::Person}, {1, "bob", EntityTag::Person}, {2, "cat", EntityTag::Org},
                         {3, "dan", EntityTag::Org},    {4, "eve", EntityTag::Loc},    {5, "fay", EntityTag::Loc}};
  std::vector<Relation> rs{{0, "r1"}, {1, "r2"}, {2, "r3"}};
  return KnowledgeBase(es, rs, {{0, 0, 2}, {2, 1, 4}, {1, 0, 3}, {3, 1, 5}}, {}, 0);
}

// Independent count of evidence chains: one observed fact per hop, linked
// tail to head, matching the hop's relation and slot, and such that ranking
// the observation by overlap with "<relation> <head>" could produce it.
std::size_t brute_count(const BottleneckedTrajectory& in, const KnowledgeBase& kb) {
  const std::size_t n = in.steps.size();
  std::vector<std::vector<Tokens>> facts(n);
  for (std::size_t h = 0; h < n; ++h)
    for (const auto& s : in.steps[h].observation.snippets)
      if (s.text.size() == 3 && kb.relation_by_surface(s.text[1])) facts[h].push_back(s.text);
  auto ok_hop = [&](std::size_t h, const Tokens& f) {
    const auto& a = in.steps[h].action;
    if (!a) return true;
    if (a->size() != 2) return false;
    const std::string& rel = (*a)[0];
    const std::string& slot = (*a)[1];
    if (!kb.relation_by_surface(rel) || f[1] != rel) return false;
    if (auto tag = parse_tag_token(slot)) {
      if (kb.entity(*kb.entity_by_surface(f[0])).tag != *tag) return false;
    } else if (slot != f[0]) {
      return false;
    }
    int prev = 99;
    for (const auto& s : in.steps[h].observation.snippets) {
      int score = 0;
      for (const auto& w : {rel, f[0]})
        if (std::count(s.text.begin(), s.text.end(), w) > 0) ++score;
      if (score == 0 || score > prev) return false;
      prev = score;
    }
    return true;
  };
  std::set<std::vector<Tokens>> chains;
  std::vector<Tokens> cur;
  std::function<void(std::size_t)> rec = [&](std::size_t h) {
    if (h == n) {
      chains.insert(cur);
      return;
    }
    for (const auto& f : facts[h]) {
      if (h > 0 && f[0] != cur.back()[2]) continue;
      if (!ok_hop(h, f)) continue;
      cur.push_back(f);
      rec(h + 1);
      cur.pop_back();
    }
  };
  if (n > 0) rec(0);
  return chains.size();
}

}  // namespace

TEST(Oracle, PerfectMaskedTrajectoryRoundTrips) {
  const auto kb = toy_kb();
  const OracleContext ctx(kb);
  BottleneckedTrajectory in;
  in.steps.push_back(step("r1 [PERSON]", {"ann r1 cat", "bob r1 dan"}));
  in.steps.push_back(step("r2 [ORG]", {"cat r2 eve", "dan r2 fay"}));
  const auto r = reconstruct_oracle(in, ctx);
  ASSERT_TRUE(r.reconstructible());
  EXPECT_EQ(*r.question, split_tokens("what is the r2 of the r1 of ann"));
  EXPECT_EQ(brute_count(in, kb), 1u);
}

TEST(Oracle, TwoConsistentChainsGiveNotReconstructible) {
  const auto kb = toy_kb();
  const OracleContext ctx(kb);
  BottleneckedTrajectory in;
  in.steps.push_back(step("r1 [PERSON]", {"ann r1 cat", "ann r1 dan"}));
  in.steps.push_back(step("r2 [ORG]", {"cat r2 dan", "dan r2 cat"}));
  EXPECT_EQ(brute_count(in, kb), 2u);
  EXPECT_EQ(oracle_chains(in, ctx, 10).size(), 2u);
  EXPECT_FALSE(reconstruct_oracle(in, ctx).reconstructible());
}

TEST(Oracle, MissingEvidenceGivesNotReconstructible) {
  const auto kb = toy_kb();
  const OracleContext ctx(kb);
  BottleneckedTrajectory in;
  in.steps.push_back(step("r1 [PERSON]", {"cat r3 eve"}));
  in.steps.push_back(step("r2 [ORG]", {"dan r3 fay"}));
  EXPECT_FALSE(reconstruct_oracle(in, ctx).reconstructible());
  EXPECT_FALSE(reconstruct_oracle(BottleneckedTrajectory{}, ctx).reconstructible());
  // Wrong entity type for the masked slot.
  BottleneckedTrajectory typed;
  typed.steps.push_back(step("r1 [LOC]", {"ann r1 cat"}));
  EXPECT_FALSE(reconstruct_oracle(typed, ctx).reconstructible());
  // Unparseable scaffold.
  BottleneckedTrajectory junk;
  junk.steps.push_back(step("what is the r1 of [PERSON]", {"ann r1 cat"}));
  EXPECT_FALSE(reconstruct_oracle(junk, ctx).reconstructible());
}

TEST(Oracle, PerfectTrajectoriesOnDefaultWorldRoundTrip) {
  const WorldConfig c;
  const auto kb = generate_world(c);
  const OracleContext ctx(kb);
  for (const auto& q : generate_questions(kb, c, 100, 7)) {
    const auto r = reconstruct_oracle(psi(scripted_perfect_trajectory(kb, q, 10), ctx.vocab), ctx);
    ASSERT_TRUE(r.reconstructible());
    EXPECT_EQ(*r.question, q.tokens);
  }
}

TEST(Oracle, SoundnessAndUniquenessAgainstBruteForce) {
  WorldConfig c;
  c.n_entities = 16;
  c.n_relations = 3;
  c.n_facts = 30;
  c.n_distractors = 10;
  std::size_t reconstructed = 0, checked = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    c.seed = seed;
    const auto kb = generate_world(c);
    const OracleContext ctx(kb);
    const auto qs = generate_questions(kb, c, 20);
    Rng rng(seed);
    for (std::size_t i = 0; i < 60; ++i) {
      const Question& q = qs[i % qs.size()];
      PolicyParams th = PolicyParams::zeros(feature::dim(4));
      for (auto& v : th.theta) v = 3 * rng.uniform01() - 1;
      const auto t = i % 5 == 0 ? scripted_perfect_trajectory(kb, q, 10) : rollout(th, kb, q, {}, rng);
      for (auto mode : kAllModes) {
        const auto in = apply_mode(t, mode, ctx.vocab);
        const auto r = reconstruct_oracle(in, ctx);
        const std::size_t n = brute_count(in, kb);
        ++checked;
        EXPECT_EQ(r.reconstructible(), n == 1);
        if (!r.reconstructible()) continue;
        ++reconstructed;
        // Every hop is witnessed by an observed snippet.
        const auto chain = oracle_chains(in, ctx, 2).front();
        ASSERT_EQ(chain.size(), in.steps.size());
        for (std::size_t h = 0; h < chain.size(); ++h) {
          const Tokens want{chain[h].head, chain[h].relation, chain[h].tail};
          EXPECT_TRUE(std::any_of(in.steps[h].observation.snippets.begin(), in.steps[h].observation.snippets.end(),
                                  [&](const Snippet& s) { return s.text == want; }));
        }
      }
    }
  }
  EXPECT_GT(reconstructed, 20u);
  EXPECT_GT(checked, reconstructed);
}

TEST(Lexical, CopiesActionsAndResponse) {
  BottleneckedTrajectory in;
  in.mode = BottleneckMode::FullWithResponse;
  in.steps.push_back(step("what is the r2 of the r1 of ann", {}));
  in.final_response = Tokens{"ann", "eve"};
  const auto r = reconstruct_lexical(in);
  ASSERT_TRUE(r.reconstructible());
  EXPECT_EQ(*r.question, split_tokens("what is the r2 of r1 ann eve"));
}

TEST(Lexical, ObsOnlyIsNotReconstructible) {
  BottleneckedTrajectory in;
  in.steps.push_back(step(std::nullopt, {"ann r1 cat"}));
  EXPECT_FALSE(reconstruct_lexical(in).reconstructible());
}

TEST(Lexical, MaskedInputHasNoEntitySurfaces) {
  const WorldConfig c;
  const auto kb = generate_world(c);
  const MaskerVocab vocab(kb);
  for (const auto& q : generate_questions(kb, c, 30)) {
    const auto r = reconstruct_lexical(psi(scripted_perfect_trajectory(kb, q, 10), vocab));
    ASSERT_TRUE(r.reconstructible());
    for (const auto& t : *r.question) EXPECT_FALSE(vocab.contains(t));
  }
}

TEST(Lexical, InvariantToObservations) {
  BottleneckedTrajectory a, b;
  a.steps.push_back(step("r1 [PERSON]", {"ann r1 cat"}));
  b.steps.push_back(step("r1 [PERSON]", {"bob r1 dan", "x y z"}));
  EXPECT_EQ(reconstruct_lexical(a), reconstruct_lexical(b));
}

TEST(OracleCopy, AgreesWithOracleOnMaskedInput) {
  const WorldConfig c;
  const auto kb = generate_world(c);
  const OracleContext ctx(kb);
  Rng rng(1);
  for (const auto& q : generate_questions(kb, c, 40)) {
    const auto t = rollout(PolicyParams::zeros(feature::dim(4)), kb, q, {}, rng);
    const auto in = psi(t, ctx.vocab);
    EXPECT_EQ(reconstruct_oracle_copy(in, ctx), reconstruct_oracle(in, ctx));
  }
}

TEST(OracleCopy, FallsBackToUnmaskedCues) {
  const auto kb = toy_kb();
  const OracleContext ctx(kb);
  BottleneckedTrajectory in;
  in.mode = BottleneckMode::ActionsObs;
  in.steps.push_back(step("r1 ann", {"fay r3 eve"}));
  in.steps.push_back(step("r2 cat", {}));
  const auto r = reconstruct_oracle_copy(in, ctx);
  ASSERT_TRUE(r.reconstructible());
  EXPECT_EQ(*r.question, split_tokens("what is the r2 of the r1 of ann"));
  EXPECT_FALSE(reconstruct_oracle(in, ctx).reconstructible());
}

TEST(Result, EmptyTokensMeanNotReconstructible) {
  EXPECT_FALSE(ReconstructionResult::of({}).reconstructible());
  EXPECT_TRUE(ReconstructionResult::of({"x"}).reconstructible());
}
