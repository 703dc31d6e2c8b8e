#pragma once

// Reward channels: cycle-consistency (embedding cosine between the question
// and its reconstruction), gold exact match, and majority vote.

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccs/agent.hpp"
#include "ccs/bottleneck.hpp"
#include "ccs/reconstruct.hpp"
#include "ccs/remote.hpp"
#include "ccs/world.hpp"

namespace ccs {

inline constexpr std::size_t kDefaultEmbeddingDim = 256;

struct EmbeddingVector {
  std::vector<double> values;

  double norm() const {
    double s = 0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }
  bool is_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
  }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

struct HashedSlot {
  std::size_t index;
  double sign;
};

inline HashedSlot hash_token(std::string_view token, std::size_t dim) {
  const std::uint64_t h = fnv1a64(token);
  return HashedSlot{static_cast<std::size_t>(h % dim), ((h >> 32) & 1U) ? -1.0 : 1.0};
}

/// Template function words carry no content and are not embedded.
inline bool is_stopword(std::string_view token) { return is_template_word(token); }

inline EmbeddingVector normalized(std::vector<double> v) {
  EmbeddingVector e{std::move(v)};
  const double n = e.norm();
  if (n > 0)
    for (auto& x : e.values) x /= n;
  return e;
}

/// Signed feature hashing of the non-stopword tokens, L2-normalized.
/// Texts with no content tokens map to the zero vector.
inline EmbeddingVector embed(const Tokens& text, std::size_t dim = kDefaultEmbeddingDim) {
  std::vector<double> v(dim, 0.0);
  for (const auto& t : text) {
    if (is_stopword(t)) continue;
    const auto slot = hash_token(t, dim);
    v[slot.index] += slot.sign;
  }
  return normalized(std::move(v));
}

inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.values.size() != v.values.size()) throw ContractError("cosine: dimension mismatch");
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    dot += u.values[i] * v.values[i];
    nu += u.values[i] * u.values[i];
    nv += v.values[i] * v.values[i];
  }
  if (nu == 0 || nv == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

enum class RewardChannel { Cycle, GoldEM, MajorityVote };

inline std::string_view channel_name(RewardChannel c) {
  switch (c) {
    case RewardChannel::Cycle: return "cycle";
    case RewardChannel::GoldEM: return "gold_em";
    case RewardChannel::MajorityVote: return "majority_vote";
  }
  return "?";
}

inline RewardChannel parse_channel(std::string_view s) {
  for (auto c : {RewardChannel::Cycle, RewardChannel::GoldEM, RewardChannel::MajorityVote})
    if (channel_name(c) == s) return c;
  throw ConfigError("unknown reward channel: " + std::string(s));
}

enum class ReconstructorKind { Oracle, Lexical, OracleCopy, Remote };

struct ReconstructorSpec {
  ReconstructorKind kind = ReconstructorKind::Oracle;
  RemoteConfig remote;  // used when kind == Remote

  /// "oracle", "lexical", "oracle-copy" or "remote:<url>".
  static ReconstructorSpec parse(std::string_view s) {
    ReconstructorSpec spec;
    if (s == "oracle") {
      spec.kind = ReconstructorKind::Oracle;
    } else if (s == "lexical") {
      spec.kind = ReconstructorKind::Lexical;
    } else if (s == "oracle-copy") {
      spec.kind = ReconstructorKind::OracleCopy;
    } else if (s.substr(0, 7) == "remote:" && s.size() > 7) {
      spec.kind = ReconstructorKind::Remote;
      spec.remote.url = std::string(s.substr(7));
    } else {
      throw ConfigError("unknown reconstructor: " + std::string(s));
    }
    return spec;
  }

  std::string name() const {
    switch (kind) {
      case ReconstructorKind::Oracle: return "oracle";
      case ReconstructorKind::Lexical: return "lexical";
      case ReconstructorKind::OracleCopy: return "oracle-copy";
      case ReconstructorKind::Remote: return "remote:" + remote.url;
    }
    return "?";
  }
};

struct RewardConfig {
  RewardChannel channel = RewardChannel::Cycle;
  BottleneckMode mode = BottleneckMode::MaskedActionsObs;
  ReconstructorSpec reconstructor;
  bool clamp_negative = true;
  double na_reward = 0.0;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::optional<RemoteConfig> remote_embedder;
};

/// Embedding cosine between question and reconstruction; na_reward for "N/A".
inline double cycle_reward(const Question& q, const ReconstructionResult& result, const RewardConfig& config) {
  if (!result.reconstructible()) return config.na_reward;
  const double c = cosine(embed(q.tokens, config.embedding_dim), embed(*result.question, config.embedding_dim));
  return config.clamp_negative ? std::clamp(c, 0.0, 1.0) : c;
}

inline double gold_em_reward(const Trajectory& traj, const KnowledgeBase& kb, std::size_t gold) {
  const FinalAction* f = traj.final_action();
  if (!f) throw ContractError("gold_em_reward: trajectory does not end in a final response");
  return (f->response.size() == 1 && f->response[0] == kb.entity(gold).surface) ? 1.0 : 0.0;
}

/// 1 for responses equal to the modal response (ties: lexicographically smallest).
inline std::vector<double> majority_vote_reward(const std::vector<Tokens>& finals) {
  if (finals.empty()) throw ContractError("majority_vote_reward: empty group");
  std::map<Tokens, int> counts;
  for (const auto& f : finals) ++counts[f];
  const Tokens* modal = nullptr;
  int best = 0;
  for (const auto& [resp, n] : counts) {  // std::map iterates in lexicographic order
    if (n > best) {
      best = n;
      modal = &resp;
    }
  }
  std::vector<double> out;
  out.reserve(finals.size());
  for (const auto& f : finals) out.push_back(f == *modal ? 1.0 : 0.0);
  return out;
}

/// Turns a group of trajectories into rewards under one RewardConfig.
class RewardPipeline {
 public:
  RewardPipeline(RewardConfig config, const KnowledgeBase& kb)
      : config_(std::move(config)), kb_(&kb), oracle_(kb) {
    if (config_.reconstructor.kind == ReconstructorKind::Remote)
      remote_ = std::make_shared<RemoteReconstructor>(config_.reconstructor.remote);
    if (config_.remote_embedder) {
      embedder_ = std::make_shared<RemoteEmbedder>(*config_.remote_embedder, config_.embedding_dim);
    }
  }

  const RewardConfig& config() const { return config_; }
  const OracleContext& oracle_context() const { return oracle_; }
  const MaskerVocab& vocab() const { return oracle_.vocab; }

  void check_remote_embedder() const {
    if (embedder_) embedder_->check_dimension();
  }

  BottleneckedTrajectory reconstructor_input(const Trajectory& traj) const {
    return apply_mode(traj, config_.mode, oracle_.vocab);
  }

  ReconstructionResult reconstruct_local(const BottleneckedTrajectory& input) const {
    switch (config_.reconstructor.kind) {
      case ReconstructorKind::Oracle: return reconstruct_oracle(input, oracle_);
      case ReconstructorKind::Lexical: return reconstruct_lexical(input);
      case ReconstructorKind::OracleCopy: return reconstruct_oracle_copy(input, oracle_);
      case ReconstructorKind::Remote: return remote_->reconstruct(input);
    }
    return {};
  }

  std::vector<ReconstructionResult> reconstruct(std::span<const Trajectory> trajs) const {
    std::vector<BottleneckedTrajectory> inputs;
    for (const auto& t : trajs) inputs.push_back(reconstructor_input(t));
    if (remote_) return remote_->reconstruct_batch(inputs);
    std::vector<ReconstructionResult> out;
    for (const auto& in : inputs) out.push_back(reconstruct_local(in));
    return out;
  }

  double score(const Question& q, const ReconstructionResult& r) const {
    if (!embedder_) return cycle_reward(q, r, config_);
    if (!r.reconstructible()) return config_.na_reward;
    const double c = cosine(normalized(embedder_->embed(q.tokens)), normalized(embedder_->embed(*r.question)));
    return config_.clamp_negative ? std::clamp(c, 0.0, 1.0) : c;
  }

  std::vector<double> group_rewards(const Question& q, std::span<const Trajectory> trajs) const {
    std::vector<double> out;
    switch (config_.channel) {
      case RewardChannel::Cycle: {
        for (const auto& r : reconstruct(trajs)) out.push_back(score(q, r));
        break;
      }
      case RewardChannel::GoldEM: {
        const std::size_t gold = q.gold_answer();
        for (const auto& t : trajs) out.push_back(gold_em_reward(t, *kb_, gold));
        break;
      }
      case RewardChannel::MajorityVote: {
        std::vector<Tokens> finals;
        for (const auto& t : trajs) {
          const FinalAction* f = t.final_action();
          if (!f) throw ContractError("majority vote: trajectory without final response");
          finals.push_back(f->response);
        }
        out = majority_vote_reward(finals);
        break;
      }
    }
    return out;
  }

 private:
  RewardConfig config_;
  const KnowledgeBase* kb_;
  OracleContext oracle_;
  std::shared_ptr<RemoteReconstructor> remote_;
  std::shared_ptr<RemoteEmbedder> embedder_;
};

}  // namespace ccs
