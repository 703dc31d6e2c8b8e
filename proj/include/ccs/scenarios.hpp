#pragma once

// Scripted failure-mode scenarios. Each yields a question, a scripted
// trajectory that exhibits the failure, and a matched trajectory that
// completes the chain correctly.
//
//  * Information Void: the agent asks the right question but the forced
//    observations concern a lexically similar entity and never mention the
//    queried relations.
//  * Shallow Depth: the agent stops after the first hop of a two-hop question.

#include "ccs/agent.hpp"
#include "ccs/bottleneck.hpp"
#include "ccs/reconstruct.hpp"
#include "ccs/world.hpp"

namespace ccs {

struct Scenario {
  Question question;
  Trajectory scripted;
  Trajectory repaired;
};

namespace detail {

inline bool round_trips(const KnowledgeBase& kb, const Question& q, const Trajectory& t) {
  const OracleContext ctx(kb);
  const auto r = reconstruct_oracle(psi(t, ctx.vocab), ctx);
  return r.question && *r.question == q.tokens;
}

inline std::vector<Chain> shuffled_chains(const KnowledgeBase& kb, int hops, std::uint64_t seed, std::uint64_t salt) {
  auto chains = enumerate_chains(kb, hops);
  Rng rng(derive_seed({seed, salt}));
  rng.shuffle(chains);
  return chains;
}

// Snippets for corpus facts mentioning `entity` whose relation is not in `excluded`.
inline Observation forced_observation(const KnowledgeBase& kb, std::size_t entity,
                                      const std::vector<std::size_t>& excluded, const Tokens& query, int top_k) {
  Observation obs;
  for (auto id : kb.corpus_ids_mentioning(entity)) {
    if (std::find(excluded.begin(), excluded.end(), kb.corpus_fact(id).relation) != excluded.end()) continue;
    if (obs.snippets.size() >= static_cast<std::size_t>(top_k)) break;
    obs.snippets.push_back(make_snippet(kb, id, query));
  }
  return obs;
}

}  // namespace detail

inline Scenario gen_info_void_scenario(const KnowledgeBase& kb, std::uint64_t seed, int top_k = 10) {
  for (const Chain& chain : detail::shuffled_chains(kb, 2, seed, 0x766f6964ULL)) {
    const Entity& anchor = kb.entity(chain.anchor);
    for (const Entity& other : kb.entities()) {
      if (!lexically_similar(anchor.surface, other.surface)) continue;
      Question q = make_question(kb, 0, chain);
      const Tokens q1{kb.relation(chain.relations[0]).surface, anchor.surface};
      Observation o1 = detail::forced_observation(kb, other.id, chain.relations, q1, top_k);
      if (o1.snippets.empty()) continue;

      Trajectory scripted;
      scripted.question_id = q.id;
      scripted.steps.push_back(Step{SearchAction{q1}, o1, {}, 0});
      const Fact& first = o1.snippets.front().fact;
      const std::size_t next = first.head == other.id ? first.tail : first.head;
      const Tokens q2{kb.relation(chain.relations[1]).surface, kb.entity(next).surface};
      scripted.steps.push_back(
          Step{SearchAction{q2}, detail::forced_observation(kb, next, chain.relations, q2, top_k), {}, 0});
      scripted.steps.push_back(Step{FinalAction{final_response(kb, scripted.steps)}, std::nullopt, {}, 0});

      Trajectory repaired = scripted_perfect_trajectory(kb, q, top_k);
      if (!detail::round_trips(kb, q, repaired)) continue;
      return Scenario{std::move(q), std::move(scripted), std::move(repaired)};
    }
  }
  throw ScenarioError("information void: no anchor with a lexically similar entity carrying off-chain facts");
}

inline Scenario gen_shallow_depth_scenario(const KnowledgeBase& kb, std::uint64_t seed, int top_k = 10) {
  for (const Chain& chain : detail::shuffled_chains(kb, 2, seed, 0x7368616cULL)) {
    Question q = make_question(kb, 0, chain);
    Trajectory repaired = scripted_perfect_trajectory(kb, q, top_k);
    if (!detail::round_trips(kb, q, repaired)) continue;
    Trajectory scripted = scripted_perfect_trajectory(kb, q, top_k, 1);
    return Scenario{std::move(q), std::move(scripted), std::move(repaired)};
  }
  throw ScenarioError("shallow depth: knowledge base has no reconstructible two-hop chain");
}

}  // namespace ccs
