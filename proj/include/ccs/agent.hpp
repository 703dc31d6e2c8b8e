#pragma once

// Search agent: trajectory model, candidate actions, log-linear softmax policy
// with exact log-probabilities and score-function gradients, and rollouts.

#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "ccs/common.hpp"
#include "ccs/world.hpp"

namespace ccs {

struct SearchAction {
  Tokens query;
  friend bool operator==(const SearchAction&, const SearchAction&) = default;
};

struct FinalAction {
  Tokens response;
  friend bool operator==(const FinalAction&, const FinalAction&) = default;
};

using Action = std::variant<SearchAction, FinalAction>;

inline bool is_search(const Action& a) { return std::holds_alternative<SearchAction>(a); }
inline bool is_final(const Action& a) { return std::holds_alternative<FinalAction>(a); }
inline const Tokens& action_tokens(const Action& a) {
  return is_search(a) ? std::get<SearchAction>(a).query : std::get<FinalAction>(a).response;
}

struct Observation {
  std::vector<Snippet> snippets;
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Sparse feature vector phi(s, a): (index, value) pairs with unique indices.
struct SparseFeatures {
  std::vector<std::pair<std::size_t, double>> entries;

  void set(std::size_t index, double value = 1.0) { entries.emplace_back(index, value); }

  double dot(std::span<const double> theta) const {
    double s = 0;
    for (auto [i, v] : entries) s += theta[i] * v;
    return s;
  }
  void add_to(std::span<double> out, double scale) const {
    for (auto [i, v] : entries) out[i] += scale * v;
  }
  friend bool operator==(const SparseFeatures&, const SparseFeatures&) = default;
};

struct CandidateAction {
  Action action;
  SparseFeatures features;
};

struct Step {
  Action action;
  std::optional<Observation> observation;
  // Recorded for sampled steps so the likelihood can be recomputed under any
  // parameters. Scripted trajectories leave these empty.
  std::vector<CandidateAction> candidates;
  std::size_t chosen = 0;
};

struct Trajectory {
  std::size_t question_id = 0;
  std::vector<Step> steps;
  double behavior_log_likelihood = 0.0;

  std::size_t num_actions() const { return steps.size(); }
  std::size_t num_searches() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += is_search(s.action) ? 1 : 0;
    return n;
  }
  bool has_final() const { return !steps.empty() && is_final(steps.back().action); }
  const FinalAction* final_action() const {
    return has_final() ? &std::get<FinalAction>(steps.back().action) : nullptr;
  }

  /// Structure (a_1, o_1, ..., a_{T-1}, o_{T-1}, a_T).
  void validate() const {
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const Step& s = steps[i];
      if (is_search(s.action)) {
        if (std::get<SearchAction>(s.action).query.empty()) throw ContractError("empty search query");
        if (!s.observation) throw ContractError("search action without observation");
      } else {
        if (i + 1 != steps.size()) throw ContractError("final action is not the last action");
        if (s.observation) throw ContractError("final action carries an observation");
      }
    }
  }
};

struct PolicyParams {
  std::vector<double> theta;

  static PolicyParams zeros(std::size_t dim) { return PolicyParams{std::vector<double>(dim, 0.0)}; }
  std::size_t dim() const { return theta.size(); }
  bool finite() const {
    return std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); });
  }
  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

// Feature indices of phi(s, a). Indices from kFinalAtHop onward hold one
// "Final chosen at hop_index = t" indicator per t < budget.
namespace feature {
inline constexpr std::size_t kRelationInQuestion = 0;
inline constexpr std::size_t kEntityIsAnchor = 1;
inline constexpr std::size_t kEntityInLastObservation = 2;
inline constexpr std::size_t kEntityInEarlierObservation = 3;
inline constexpr std::size_t kRepeatsQuery = 4;
inline constexpr std::size_t kFinal = 5;
inline constexpr std::size_t kSearchBias = 6;
inline constexpr std::size_t kRelationIsNextHop = 7;
inline constexpr std::size_t kEntityIsFrontier = 8;  // anchor before any search, then the answer to the last query
inline constexpr std::size_t kFinalAfterAllRelations = 9;
inline constexpr std::size_t kFinalAtHop = 10;

inline constexpr std::size_t dim(int budget) { return kFinalAtHop + static_cast<std::size_t>(budget); }
}  // namespace feature

struct AgentState {
  const Question* question = nullptr;
  std::span<const Step> history;
  int budget = 4;

  /// Number of searches issued so far.
  int hop_index() const {
    int n = 0;
    for (const auto& s : history) n += is_search(s.action) ? 1 : 0;
    return n;
  }
};

namespace detail {

// The snippet that answers the last query read as a (relation, entity) lookup:
// head is the queried entity and relation the queried relation.
inline const Snippet* answering_snippet(const KnowledgeBase& kb, const Step& last) {
  if (!is_search(last.action) || !last.observation) return nullptr;
  const Tokens& q = std::get<SearchAction>(last.action).query;
  for (const auto& s : last.observation->snippets) {
    if (contains_token(q, kb.entity(s.fact.head).surface) && contains_token(q, kb.relation(s.fact.relation).surface))
      return &s;
  }
  return nullptr;
}

}  // namespace detail

/// Response used by the Final candidate: tail of the snippet answering the last
/// query, else tail of the top-ranked snippet, else empty.
inline Tokens final_response(const KnowledgeBase& kb, std::span<const Step> history) {
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    if (!it->observation) continue;
    if (const Snippet* s = detail::answering_snippet(kb, *it)) return {kb.entity(s->fact.tail).surface};
    if (!it->observation->snippets.empty()) return {kb.entity(it->observation->snippets.front().fact.tail).surface};
    return {};
  }
  return {};
}

inline CandidateAction final_candidate(const AgentState& state, const KnowledgeBase& kb) {
  const int hop = state.hop_index();
  SparseFeatures phi;
  phi.set(feature::kFinal);
  bool all_queried = true;
  for (auto r : state.question->chain) {
    const auto& rs = kb.relation(r).surface;
    bool queried = false;
    for (const auto& s : state.history)
      if (is_search(s.action) && contains_token(std::get<SearchAction>(s.action).query, rs)) queried = true;
    all_queried = all_queried && queried;
  }
  if (all_queried) phi.set(feature::kFinalAfterAllRelations);
  if (hop < state.budget) phi.set(feature::kFinalAtHop + static_cast<std::size_t>(hop));
  return CandidateAction{FinalAction{final_response(kb, state.history)}, std::move(phi)};
}

/// Search candidates "<relation> <entity>" for every question relation and
/// every visible entity (anchor, then entities of prior observations in order
/// of appearance), followed by one Final candidate.
inline std::vector<CandidateAction> candidate_actions(const AgentState& state, const KnowledgeBase& kb) {
  const Question& q = *state.question;
  const int hop = state.hop_index();

  std::vector<std::size_t> visible{q.anchor};
  auto add_visible = [&](std::size_t e) {
    if (std::find(visible.begin(), visible.end(), e) == visible.end()) visible.push_back(e);
  };
  std::vector<std::size_t> in_last, in_earlier;
  const Step* last_search = nullptr;
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const Step& s = state.history[i];
    if (!s.observation) continue;
    const bool is_last = (i + 1 == state.history.size());
    if (is_last) last_search = &s;
    for (const auto& sn : s.observation->snippets) {
      for (auto e : {sn.fact.head, sn.fact.tail}) {
        add_visible(e);
        (is_last ? in_last : in_earlier).push_back(e);
      }
    }
  }
  std::optional<std::size_t> answer_of_last;
  if (last_search)
    if (const Snippet* s = detail::answering_snippet(kb, *last_search)) answer_of_last = s->fact.tail;

  auto has = [](const std::vector<std::size_t>& v, std::size_t e) {
    return std::find(v.begin(), v.end(), e) != v.end();
  };

  std::vector<CandidateAction> out;
  for (std::size_t pos = 0; pos < q.chain.size(); ++pos) {
    const auto& rel = kb.relation(q.chain[pos]).surface;
    for (auto e : visible) {
      Tokens query{rel, kb.entity(e).surface};
      SparseFeatures phi;
      phi.set(feature::kRelationInQuestion);
      if (e == q.anchor) phi.set(feature::kEntityIsAnchor);
      if (has(in_last, e)) phi.set(feature::kEntityInLastObservation);
      if (has(in_earlier, e)) phi.set(feature::kEntityInEarlierObservation);
      for (const auto& s : state.history) {
        if (is_search(s.action) && std::get<SearchAction>(s.action).query == query) {
          phi.set(feature::kRepeatsQuery);
          break;
        }
      }
      phi.set(feature::kSearchBias);
      if (static_cast<int>(pos) == hop) phi.set(feature::kRelationIsNextHop);
      if (answer_of_last ? *answer_of_last == e : (hop == 0 && e == q.anchor)) phi.set(feature::kEntityIsFrontier);
      out.push_back(CandidateAction{SearchAction{std::move(query)}, std::move(phi)});
    }
  }
  out.push_back(final_candidate(state, kb));
  return out;
}

inline std::vector<double> logits(const PolicyParams& params, std::span<const CandidateAction> candidates) {
  std::vector<double> z(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) z[i] = candidates[i].features.dot(params.theta);
  return z;
}

/// Softmax over candidate logits, computed with max subtraction.
inline std::vector<double> action_distribution(const PolicyParams& params, std::span<const CandidateAction> candidates) {
  if (candidates.empty()) throw ContractError("action_distribution: no candidates");
  auto z = logits(params, candidates);
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (auto& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : z) v /= sum;
  return z;
}

inline double log_prob(const PolicyParams& params, std::span<const CandidateAction> candidates, std::size_t chosen) {
  if (chosen >= candidates.size()) throw ContractError("log_prob: chosen index out of range");
  const auto z = logits(params, candidates);
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (double v : z) sum += std::exp(v - m);
  return z[chosen] - m - std::log(sum);
}

/// phi_chosen - sum_i p_i phi_i, as a dense vector of params.dim() entries.
inline std::vector<double> grad_log_prob(const PolicyParams& params, std::span<const CandidateAction> candidates,
                                         std::size_t chosen) {
  if (chosen >= candidates.size()) throw ContractError("grad_log_prob: chosen index out of range");
  std::vector<double> g(params.dim(), 0.0);
  if (candidates.size() == 1) return g;
  const auto p = action_distribution(params, candidates);
  candidates[chosen].features.add_to(g, 1.0);
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].features.add_to(g, -p[i]);
  return g;
}

/// Sum of per-action log-probabilities; observations carry no likelihood.
inline double trajectory_log_likelihood(const PolicyParams& params, const Trajectory& traj) {
  double ll = 0;
  for (const auto& s : traj.steps) ll += log_prob(params, s.candidates, s.chosen);
  return ll;
}

inline std::vector<double> grad_trajectory_log_likelihood(const PolicyParams& params, const Trajectory& traj) {
  std::vector<double> g(params.dim(), 0.0);
  for (const auto& s : traj.steps) {
    auto gs = grad_log_prob(params, s.candidates, s.chosen);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs[i];
  }
  return g;
}

inline std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

struct RolloutSettings {
  int budget = 4;
  int top_k = 10;
};

/// Samples one trajectory. At most budget - 1 searches are issued; after that
/// the Final action is forced (recorded as a single-candidate step).
inline Trajectory rollout(const PolicyParams& params, const KnowledgeBase& kb, const Question& question,
                          const RolloutSettings& settings, Rng& rng) {
  if (settings.budget < 1) throw ContractError("rollout: budget must be at least 1");
  Trajectory traj;
  traj.question_id = question.id;
  int searches = 0;
  for (;;) {
    AgentState state{&question, traj.steps, settings.budget};
    std::vector<CandidateAction> cands;
    if (searches >= settings.budget - 1) {
      cands.push_back(final_candidate(state, kb));
    } else {
      cands = candidate_actions(state, kb);
    }
    const auto probs = action_distribution(params, cands);
    const std::size_t idx = sample_index(probs, rng);
    traj.behavior_log_likelihood += log_prob(params, cands, idx);
    Step step{cands[idx].action, std::nullopt, {}, idx};
    const bool done = is_final(step.action);
    if (!done) {
      step.observation = Observation{retrieve(kb, std::get<SearchAction>(step.action).query, settings.top_k)};
      ++searches;
    }
    step.candidates = std::move(cands);
    traj.steps.push_back(std::move(step));
    if (done) break;
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Scripted trajectories (no recorded candidates).
// ---------------------------------------------------------------------------

inline Step scripted_search(const KnowledgeBase& kb, Tokens query, int top_k) {
  Observation obs{retrieve(kb, query, top_k)};
  return Step{SearchAction{std::move(query)}, std::move(obs), {}, 0};
}

/// Follows the question chain through retrieval alone: each hop queries
/// "<relation> <entity>" where the entity is the answer found by the previous hop.
inline Trajectory scripted_perfect_trajectory(const KnowledgeBase& kb, const Question& q, int top_k,
                                              std::size_t hops_to_cover = SIZE_MAX) {
  Trajectory t;
  t.question_id = q.id;
  std::size_t entity = q.anchor;
  const std::size_t n = std::min(hops_to_cover, q.chain.size());
  for (std::size_t h = 0; h < n; ++h) {
    t.steps.push_back(scripted_search(kb, {kb.relation(q.chain[h]).surface, kb.entity(entity).surface}, top_k));
    const Snippet* s = detail::answering_snippet(kb, t.steps.back());
    if (!s) break;
    entity = s->fact.tail;
  }
  t.steps.push_back(Step{FinalAction{final_response(kb, t.steps)}, std::nullopt, {}, 0});
  return t;
}

}  // namespace ccs
