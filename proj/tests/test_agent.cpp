#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ccs/agent.hpp"

using namespace ccs;

namespace {

struct Fixture {
  WorldConfig config;
  KnowledgeBase kb;
  std::vector<Question> questions;

  explicit Fixture(std::uint64_t seed = 0) {
    config.seed = seed;
    kb = generate_world(config);
    questions = generate_questions(kb, config, 32);
  }
};

CandidateAction cand(std::vector<std::pair<std::size_t, double>> f) {
  CandidateAction c{FinalAction{{"x"}}, {}};
  for (auto [i, v] : f) c.features.set(i, v);
  return c;
}

std::vector<CandidateAction> random_candidates(Rng& rng, std::size_t dim) {
  std::vector<CandidateAction> cs(2 + rng.index(6));
  for (auto& c : cs) {
    c.action = SearchAction{{"q"}};
    for (std::size_t i = 0; i < dim; ++i)
      if (rng.uniform01() < 0.4) c.features.set(i, rng.uniform01() < 0.8 ? 1.0 : 2.0 * rng.uniform01());
  }
  return cs;
}

PolicyParams random_params(Rng& rng, std::size_t dim, double scale) {
  PolicyParams p = PolicyParams::zeros(dim);
  for (auto& v : p.theta) v = scale * (2 * rng.uniform01() - 1);
  return p;
}

}  // namespace

TEST(Candidates, InitialStateOfTwoHopQuestion) {
  Fixture fx;
  const Question& q = fx.questions[0];
  const auto cands = candidate_actions(AgentState{&q, {}, 4}, fx.kb);
  const auto& A = fx.kb.entity(q.anchor).surface;
  const auto& r1 = fx.kb.relation(q.chain[0]).surface;
  const auto& r2 = fx.kb.relation(q.chain[1]).surface;
  std::set<Tokens> searches;
  std::size_t finals = 0;
  for (const auto& c : cands) {
    if (is_search(c.action)) searches.insert(std::get<SearchAction>(c.action).query);
    else ++finals;
  }
  EXPECT_EQ(searches, (std::set<Tokens>{{r1, A}, {r2, A}}));
  EXPECT_EQ(finals, 1u);
  EXPECT_TRUE(is_final(cands.back().action));
  EXPECT_TRUE(std::get<FinalAction>(cands.back().action).response.empty());
}

TEST(Candidates, ObservedTailBecomesSearchable) {
  Fixture fx;
  const Question& q = fx.questions[0];
  std::vector<Step> history{scripted_search(fx.kb, {fx.kb.relation(q.chain[0]).surface, fx.kb.entity(q.anchor).surface}, 10)};
  const std::size_t B = *fx.kb.follow(q.anchor, q.chain[0]);
  const auto cands = candidate_actions(AgentState{&q, history, 4}, fx.kb);
  const Tokens want{fx.kb.relation(q.chain[1]).surface, fx.kb.entity(B).surface};
  EXPECT_TRUE(std::any_of(cands.begin(), cands.end(), [&](const CandidateAction& c) {
    return is_search(c.action) && std::get<SearchAction>(c.action).query == want;
  }));
  // The final response follows the snippet answering "r1 A".
  EXPECT_EQ(std::get<FinalAction>(cands.back().action).response, Tokens{fx.kb.entity(B).surface});
}

TEST(Candidates, CountMatchesBruteForceEnumeration) {
  Fixture fx;
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Question& q = fx.questions[rng.index(fx.questions.size())];
    std::vector<Step> history;
    const int depth = static_cast<int>(rng.index(3));
    for (int d = 0; d < depth; ++d)
      history.push_back(scripted_search(fx.kb,
                                        {fx.kb.relation(q.chain[rng.index(2)]).surface,
                                         fx.kb.entity(rng.index(fx.kb.entities().size())).surface},
                                        10));
    std::set<std::string> visible{fx.kb.entity(q.anchor).surface};
    for (const auto& s : history)
      for (const auto& sn : s.observation->snippets) {
        visible.insert(sn.text[0]);
        visible.insert(sn.text[2]);
      }
    std::set<std::string> rels;
    for (auto r : q.chain) rels.insert(fx.kb.relation(r).surface);
    const auto cands = candidate_actions(AgentState{&q, history, 4}, fx.kb);
    EXPECT_EQ(cands.size(), rels.size() * visible.size() + 1);
    std::set<Tokens> distinct;
    for (const auto& c : cands) {
      for (auto [i, v] : c.features.entries) EXPECT_LT(i, feature::dim(4));
      if (is_search(c.action)) EXPECT_TRUE(distinct.insert(std::get<SearchAction>(c.action).query).second);
    }
    // Deterministic ordering.
    const auto again = candidate_actions(AgentState{&q, history, 4}, fx.kb);
    ASSERT_EQ(again.size(), cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) EXPECT_EQ(action_tokens(again[i].action), action_tokens(cands[i].action));
  }
}

TEST(Policy, UniformAtZeroParams) {
  std::vector<CandidateAction> cs{cand({{0, 1}}), cand({{1, 1}}), cand({}), cand({{0, 1}, {1, 1}})};
  for (double p : action_distribution(PolicyParams::zeros(3), cs)) EXPECT_DOUBLE_EQ(p, 0.25);
  cs.push_back(cand({{2, 1}}));
  EXPECT_NEAR(log_prob(PolicyParams::zeros(3), cs, 4), -1.60944, 1e-5);
}

TEST(Policy, UnitVectorTwoCandidates) {
  std::vector<CandidateAction> cs{cand({{0, 1}}), cand({})};
  const auto p = action_distribution(PolicyParams{{1.0, 0.0}}, cs);
  const double e = std::exp(1.0);
  EXPECT_NEAR(p[0], e / (e + 1), 1e-12);
  EXPECT_NEAR(p[1], 1 / (e + 1), 1e-12);
  EXPECT_NEAR(p[0], 0.7311, 1e-4);
}

TEST(Policy, ShiftInvarianceAndNormalization) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto cs = random_candidates(rng, 6);
    auto th = random_params(rng, 7, 3.0);
    auto p = action_distribution(th, cs);
    double sum = 0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    // Feature 6 present in every candidate with value 1 adds the same constant to every logit.
    for (auto& c : cs) c.features.set(6, 1.0);
    auto th2 = th;
    th2.theta[6] = 17.0;
    auto q = action_distribution(th2, cs);
    th2.theta[6] = 0.0;
    auto r = action_distribution(th2, cs);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(q[i], r[i], 1e-12);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(std::exp(log_prob(th, cs, i)) - p[i], 0.0, 1e-12);
  }
}

TEST(Policy, LargeLogitsStayFinite) {
  std::vector<CandidateAction> cs{cand({{0, 1}}), cand({})};
  const auto p = action_distribution(PolicyParams{{800.0}}, cs);
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(log_prob(PolicyParams{{800.0}}, cs, 1)));
}

TEST(Policy, GradientOfSingleCandidateIsZero) {
  std::vector<CandidateAction> cs{cand({{0, 1}, {2, 1}})};
  for (double g : grad_log_prob(PolicyParams{{0.3, 0.1, -2}}, cs, 0)) EXPECT_EQ(g, 0.0);
}

TEST(Policy, ScoreFunctionIdentity) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto cs = random_candidates(rng, 5);
    auto th = random_params(rng, 5, 2.0);
    const auto p = action_distribution(th, cs);
    std::vector<double> expect(5, 0.0);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const auto g = grad_log_prob(th, cs, i);
      for (std::size_t d = 0; d < 5; ++d) expect[d] += p[i] * g[d];
    }
    for (double v : expect) EXPECT_NEAR(v, 0.0, 1e-10);
  }
}

TEST(Policy, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    auto cs = random_candidates(rng, 6);
    auto th = random_params(rng, 6, 1.5);
    const std::size_t chosen = rng.index(cs.size());
    const auto g = grad_log_prob(th, cs, chosen);
    for (std::size_t d = 0; d < 6; ++d) {
      auto plus = th, minus = th;
      plus.theta[d] += h;
      minus.theta[d] -= h;
      const double fd = (log_prob(plus, cs, chosen) - log_prob(minus, cs, chosen)) / (2 * h);
      EXPECT_LE(std::abs(fd - g[d]), 1e-4 * std::max(1.0, std::abs(g[d]))) << "d=" << d;
    }
  }
}

TEST(Rollout, BudgetOneIsSingleForcedFinal) {
  Fixture fx;
  Rng rng(1);
  const auto t = rollout(PolicyParams::zeros(feature::dim(1)), fx.kb, fx.questions[0], {1, 10}, rng);
  ASSERT_EQ(t.steps.size(), 1u);
  EXPECT_TRUE(is_final(t.steps[0].action));
  EXPECT_EQ(t.behavior_log_likelihood, 0.0);
}

TEST(Rollout, StructureAndSearchBound) {
  Fixture fx;
  Rng rng(2);
  for (int budget = 1; budget <= 5; ++budget) {
    for (int i = 0; i < 60; ++i) {
      auto th = random_params(rng, feature::dim(budget), 1.0);
      const auto t = rollout(th, fx.kb, fx.questions[static_cast<std::size_t>(i) % fx.questions.size()], {budget, 10}, rng);
      EXPECT_NO_THROW(t.validate());
      EXPECT_TRUE(t.has_final());
      EXPECT_LE(t.num_searches(), static_cast<std::size_t>(budget - 1));
      for (const auto& s : t.steps)
        if (s.observation) EXPECT_LE(s.observation->snippets.size(), 10u);
    }
  }
}

TEST(Rollout, SameSeedSameTrajectory) {
  Fixture fx;
  Rng prng(4);
  const auto th = random_params(prng, feature::dim(4), 1.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    const auto ta = rollout(th, fx.kb, fx.questions[seed], {}, a);
    const auto tb = rollout(th, fx.kb, fx.questions[seed], {}, b);
    ASSERT_EQ(ta.steps.size(), tb.steps.size());
    for (std::size_t i = 0; i < ta.steps.size(); ++i) {
      EXPECT_EQ(action_tokens(ta.steps[i].action), action_tokens(tb.steps[i].action));
      EXPECT_EQ(ta.steps[i].chosen, tb.steps[i].chosen);
    }
    EXPECT_EQ(ta.behavior_log_likelihood, tb.behavior_log_likelihood);
  }
}

TEST(Rollout, RecordedLikelihoodRecomputesBitForBit) {
  Fixture fx;
  Rng prng(6);
  for (int i = 0; i < 50; ++i) {
    const auto th = random_params(prng, feature::dim(4), 2.0);
    Rng rng(static_cast<std::uint64_t>(i));
    const auto t = rollout(th, fx.kb, fx.questions[static_cast<std::size_t>(i) % 32], {}, rng);
    EXPECT_EQ(trajectory_log_likelihood(th, t), t.behavior_log_likelihood);
    double sum = 0;
    for (const auto& s : t.steps) sum += log_prob(th, s.candidates, s.chosen);
    EXPECT_EQ(sum, t.behavior_log_likelihood);
  }
}

TEST(Trajectory, ValidateRejectsMalformedStructure) {
  Trajectory t;
  t.steps.push_back(Step{SearchAction{{"a"}}, std::nullopt, {}, 0});
  EXPECT_THROW(t.validate(), ContractError);
  t.steps[0].observation = Observation{};
  t.steps.insert(t.steps.begin(), Step{FinalAction{{}}, std::nullopt, {}, 0});
  EXPECT_THROW(t.validate(), ContractError);
  Trajectory empty_query;
  empty_query.steps.push_back(Step{SearchAction{{}}, Observation{}, {}, 0});
  EXPECT_THROW(empty_query.validate(), ContractError);
}

TEST(Scripted, PerfectTrajectoryFollowsChain) {
  Fixture fx;
  for (const auto& q : fx.questions) {
    const auto t = scripted_perfect_trajectory(fx.kb, q, 10);
    ASSERT_EQ(t.num_searches(), 2u);
    EXPECT_EQ(t.final_action()->response, Tokens{fx.kb.entity(q.gold_answer()).surface});
  }
}
