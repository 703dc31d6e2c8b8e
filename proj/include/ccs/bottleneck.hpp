#pragma once

// Information bottleneck psi = psi_mask . psi_trace and the four reconstructor
// input modes used for ablations.

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ccs/agent.hpp"
#include "ccs/world.hpp"
#include "json.hpp"

namespace ccs {

enum class BottleneckMode { FullWithResponse, ActionsObs, ObsOnly, MaskedActionsObs };

inline constexpr std::array<BottleneckMode, 4> kAllModes{BottleneckMode::FullWithResponse, BottleneckMode::ActionsObs,
                                                         BottleneckMode::ObsOnly, BottleneckMode::MaskedActionsObs};

inline std::string_view mode_name(BottleneckMode m) {
  switch (m) {
    case BottleneckMode::FullWithResponse: return "FullWithResponse";
    case BottleneckMode::ActionsObs: return "ActionsObs";
    case BottleneckMode::ObsOnly: return "ObsOnly";
    case BottleneckMode::MaskedActionsObs: return "MaskedActionsObs";
  }
  return "?";
}

inline BottleneckMode parse_mode(std::string_view s) {
  for (auto m : kAllModes)
    if (mode_name(m) == s) return m;
  throw ConfigError("unknown bottleneck mode: " + std::string(s));
}

/// Entity surface -> tag. Tag tokens are never keys, so masking is idempotent.
class MaskerVocab {
 public:
  MaskerVocab() = default;
  explicit MaskerVocab(const KnowledgeBase& kb) {
    for (const auto& e : kb.entities()) add(e.surface, e.tag);
  }

  void add(const std::string& surface, EntityTag tag) {
    if (is_tag_token(surface)) throw ContractError("tag token cannot be a masker vocabulary entry: " + surface);
    map_[surface] = tag;
  }

  std::optional<EntityTag> lookup(std::string_view tok) const {
    auto it = map_.find(std::string(tok));
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view tok) const { return lookup(tok).has_value(); }
  std::size_t size() const { return map_.size(); }

 private:
  std::unordered_map<std::string, EntityTag> map_;
};

struct TraceStep {
  Tokens action;
  Observation observation;
  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

/// Reconstructor input. `action` is empty when the mode drops actions;
/// `final_response` is only present in FullWithResponse.
struct BottleneckedStep {
  std::optional<Tokens> action;
  Observation observation;
  friend bool operator==(const BottleneckedStep&, const BottleneckedStep&) = default;
};

struct BottleneckedTrajectory {
  std::size_t question_id = 0;
  BottleneckMode mode = BottleneckMode::MaskedActionsObs;
  std::vector<BottleneckedStep> steps;
  std::optional<Tokens> final_response;
  friend bool operator==(const BottleneckedTrajectory&, const BottleneckedTrajectory&) = default;
};

/// (a_1, o_1, ..., a_{T-1}, o_{T-1}): the final response is dropped.
inline std::vector<TraceStep> psi_trace(const Trajectory& traj) {
  std::vector<TraceStep> out;
  for (const auto& s : traj.steps)
    if (is_search(s.action)) out.push_back(TraceStep{std::get<SearchAction>(s.action).query, *s.observation});
  return out;
}

inline std::vector<TraceStep> psi_trace(const std::vector<TraceStep>& trace) { return trace; }

inline Tokens mask_query(const Tokens& tokens, const MaskerVocab& vocab) {
  Tokens out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (auto tag = vocab.lookup(t)) {
      out.emplace_back(tag_token(*tag));
    } else {
      out.push_back(t);
    }
  }
  return out;
}

inline BottleneckedTrajectory psi(const std::vector<TraceStep>& trace, const MaskerVocab& vocab,
                                  std::size_t question_id = 0) {
  BottleneckedTrajectory out{question_id, BottleneckMode::MaskedActionsObs, {}, std::nullopt};
  for (const auto& s : trace) out.steps.push_back(BottleneckedStep{mask_query(s.action, vocab), s.observation});
  return out;
}

inline BottleneckedTrajectory psi(const Trajectory& traj, const MaskerVocab& vocab) {
  return psi(psi_trace(traj), vocab, traj.question_id);
}

/// Re-applies psi to an already bottlenecked trajectory (identity on psi output).
inline BottleneckedTrajectory psi(const BottleneckedTrajectory& bt, const MaskerVocab& vocab) {
  BottleneckedTrajectory out{bt.question_id, BottleneckMode::MaskedActionsObs, {}, std::nullopt};
  for (const auto& s : bt.steps)
    out.steps.push_back(BottleneckedStep{s.action ? std::optional<Tokens>(mask_query(*s.action, vocab)) : std::nullopt,
                                         s.observation});
  return out;
}

inline BottleneckedTrajectory apply_mode(const Trajectory& traj, BottleneckMode mode, const MaskerVocab& vocab) {
  if (mode == BottleneckMode::MaskedActionsObs) return psi(traj, vocab);
  BottleneckedTrajectory out{traj.question_id, mode, {}, std::nullopt};
  for (const auto& s : psi_trace(traj)) {
    out.steps.push_back(BottleneckedStep{
        mode == BottleneckMode::ObsOnly ? std::nullopt : std::optional<Tokens>(s.action), s.observation});
  }
  if (mode == BottleneckMode::FullWithResponse) {
    const FinalAction* f = traj.final_action();
    out.final_response = f ? f->response : Tokens{};
  }
  return out;
}

/// The serialization remote reconstructors receive. Snippets are sent as text only.
inline nlohmann::json bottlenecked_to_json(const BottleneckedTrajectory& bt) {
  using nlohmann::json;
  json steps = json::array();
  for (const auto& s : bt.steps) {
    json obs = json::array();
    for (const auto& sn : s.observation.snippets) obs.push_back(json{{"text", join_tokens(sn.text)}});
    json step{{"observation", std::move(obs)}};
    if (s.action) step["action"] = json{{"type", "search"}, {"tokens", *s.action}};
    steps.push_back(std::move(step));
  }
  json j{{"schema", "ccs.trajectory"},
         {"version", kSchemaVersion},
         {"question_id", bt.question_id},
         {"mode", std::string(mode_name(bt.mode))},
         {"steps", std::move(steps)}};
  if (bt.final_response) j["final_response"] = *bt.final_response;
  return j;
}

}  // namespace ccs
