#pragma once

// Inverse mapping: recover the source question from a reconstructor input.
//
//  * reconstruct_oracle: evidence-grounded. Reads only the facts rendered in the
//    observations, treats each action "<relation> <slot>" as a hop constraint
//    and answers only when exactly one evidenced chain fits.
//  * reconstruct_lexical: copies action tokens, ignores observations.
//  * reconstruct_oracle_copy: the oracle, falling back to rendering a question
//    from literal entity and relation tokens found in the actions. Models a
//    reconstructor that takes unmasked surface cues at face value.

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "ccs/bottleneck.hpp"
#include "ccs/world.hpp"

namespace ccs {

struct ReconstructionResult {
  std::optional<Tokens> question;  // nullopt: not reconstructible ("N/A")

  static ReconstructionResult not_reconstructible() { return {}; }
  static ReconstructionResult of(Tokens t) {
    if (t.empty()) return {};
    return ReconstructionResult{std::move(t)};
  }
  bool reconstructible() const { return question.has_value(); }
  friend bool operator==(const ReconstructionResult&, const ReconstructionResult&) = default;
};

/// What the oracle may know besides its input: the vocabularies (entity
/// surfaces with their types, relation surfaces) and the question templates.
/// It never sees the fact base.
struct OracleContext {
  MaskerVocab vocab;
  std::unordered_set<std::string> relations;

  OracleContext() = default;
  explicit OracleContext(const KnowledgeBase& kb) : vocab(kb) {
    for (const auto& r : kb.relations()) relations.insert(r.surface);
  }
  bool is_relation(std::string_view t) const { return relations.count(std::string(t)) > 0; }
};

struct EvidenceFact {
  std::string head, relation, tail;
  friend bool operator==(const EvidenceFact&, const EvidenceFact&) = default;
};

namespace detail {

struct HopConstraint {
  bool has_action = false;
  std::string relation;
  std::optional<EntityTag> tag;      // masked slot
  std::optional<std::string> literal;  // unmasked slot
};

inline std::optional<HopConstraint> parse_hop(const BottleneckedStep& step, const OracleContext& ctx) {
  HopConstraint c;
  if (!step.action) return c;
  c.has_action = true;
  const Tokens& a = *step.action;
  if (a.size() != 2) return std::nullopt;
  int rel_idx = ctx.is_relation(a[0]) ? 0 : (ctx.is_relation(a[1]) ? 1 : -1);
  if (rel_idx < 0) return std::nullopt;
  const std::string& slot = a[static_cast<std::size_t>(1 - rel_idx)];
  if (ctx.is_relation(slot)) return std::nullopt;
  c.relation = a[static_cast<std::size_t>(rel_idx)];
  if (auto tag = parse_tag_token(slot)) {
    c.tag = tag;
  } else {
    c.literal = slot;
  }
  return c;
}

inline std::vector<EvidenceFact> observed_facts(const Observation& obs, const OracleContext& ctx) {
  std::vector<EvidenceFact> out;
  for (const auto& s : obs.snippets) {
    if (s.text.size() == 3 && ctx.is_relation(s.text[1])) out.push_back(EvidenceFact{s.text[0], s.text[1], s.text[2]});
  }
  return out;
}

// The observation must be explainable as the ranked result of the query
// "<relation> <entity>": every snippet overlaps the query and overlap is
// non-increasing down the list.
inline bool explains_observation(const Observation& obs, const std::string& relation, const std::string& entity) {
  double prev = 3;
  for (const auto& s : obs.snippets) {
    const double score = (contains_token(s.text, relation) ? 1 : 0) + (contains_token(s.text, entity) ? 1 : 0);
    if (score < 1 || score > prev) return false;
    prev = score;
  }
  return true;
}

}  // namespace detail

/// Evidence chains consistent with the input, up to `limit` of them.
inline std::vector<std::vector<EvidenceFact>> oracle_chains(const BottleneckedTrajectory& input,
                                                            const OracleContext& ctx, std::size_t limit) {
  std::vector<std::vector<EvidenceFact>> out;
  const std::size_t n = input.steps.size();
  if (n == 0) return out;
  std::vector<detail::HopConstraint> hops;
  std::vector<std::vector<EvidenceFact>> evidence;
  for (const auto& s : input.steps) {
    auto c = detail::parse_hop(s, ctx);
    if (!c) return out;
    hops.push_back(*c);
    evidence.push_back(detail::observed_facts(s.observation, ctx));
  }

  std::vector<EvidenceFact> chain;
  auto dfs = [&](auto&& self, std::size_t hop) -> void {
    if (out.size() >= limit) return;
    if (hop == n) {
      if (std::find(out.begin(), out.end(), chain) == out.end()) out.push_back(chain);
      return;
    }
    const auto& c = hops[hop];
    for (const auto& f : evidence[hop]) {
      if (hop > 0 && f.head != chain.back().tail) continue;
      if (c.has_action) {
        if (f.relation != c.relation) continue;
        if (c.literal && f.head != *c.literal) continue;
        if (c.tag && ctx.vocab.lookup(f.head) != c.tag) continue;
        if (!detail::explains_observation(input.steps[hop].observation, c.relation, f.head)) continue;
      }
      chain.push_back(f);
      self(self, hop + 1);
      chain.pop_back();
    }
  };
  dfs(dfs, 0);
  return out;
}

inline ReconstructionResult reconstruct_oracle(const BottleneckedTrajectory& input, const OracleContext& ctx) {
  auto chains = oracle_chains(input, ctx, 2);
  if (chains.size() != 1) return ReconstructionResult::not_reconstructible();
  std::vector<std::string> rels;
  for (const auto& f : chains.front()) rels.push_back(f.relation);
  return ReconstructionResult::of(render_question(chains.front().front().head, rels));
}

/// Action tokens (and the final response when present), deduplicated in
/// first-occurrence order. Observations are ignored.
inline ReconstructionResult reconstruct_lexical(const BottleneckedTrajectory& input) {
  Tokens out;
  auto take = [&](const Tokens& ts) {
    for (const auto& t : ts)
      if (!contains_token(out, t)) out.push_back(t);
  };
  for (const auto& s : input.steps)
    if (s.action) take(*s.action);
  if (input.final_response) take(*input.final_response);
  return ReconstructionResult::of(std::move(out));
}

inline ReconstructionResult reconstruct_oracle_copy(const BottleneckedTrajectory& input, const OracleContext& ctx) {
  if (auto r = reconstruct_oracle(input, ctx); r.reconstructible()) return r;
  std::optional<std::string> anchor;
  std::vector<std::string> rels;
  auto scan = [&](const Tokens& ts) {
    for (const auto& t : ts) {
      if (!anchor && ctx.vocab.contains(t)) anchor = t;
      if (ctx.is_relation(t) && std::find(rels.begin(), rels.end(), t) == rels.end()) rels.push_back(t);
    }
  };
  for (const auto& s : input.steps)
    if (s.action) scan(*s.action);
  if (input.final_response) scan(*input.final_response);
  if (!anchor || rels.empty()) return ReconstructionResult::not_reconstructible();
  return ReconstructionResult::of(render_question(*anchor, rels));
}

}  // namespace ccs
