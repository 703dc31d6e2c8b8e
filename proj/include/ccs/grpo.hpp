#pragma once

// Group Relative Policy Optimization over the log-linear search policy.

#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ccs/agent.hpp"
#include "ccs/reward.hpp"
#include "ccs/world.hpp"

namespace ccs {

struct GrpoConfig {
  int group_size = 5;
  double eps_clip = 0.2;
  double beta = 0.01;
  double eps_std = 1e-8;
  double learning_rate = 2.0;
  int steps = 200;
  int questions_per_step = 16;

  void validate() const {
    if (group_size < 2) throw ConfigError("grpo.group_size must be at least 2");
    if (!(eps_clip > 0 && eps_clip < 1)) throw ConfigError("grpo.eps_clip must lie in (0, 1)");
    if (beta < 0) throw ConfigError("grpo.beta must be non-negative");
    if (eps_std < 0) throw ConfigError("grpo.eps_std must be non-negative");
    if (!std::isfinite(learning_rate) || learning_rate < 0) throw ConfigError("grpo.learning_rate must be >= 0");
    if (steps < 0) throw ConfigError("grpo.steps must be non-negative");
    if (questions_per_step < 1) throw ConfigError("grpo.questions_per_step must be positive");
  }
};

struct Group {
  const Question* question = nullptr;
  std::vector<Trajectory> trajectories;  // behavior log-likelihoods recorded under theta_old
  std::vector<double> rewards;
  std::vector<double> advantages;
};

struct PolicySnapshots {
  PolicyParams theta_old;
  PolicyParams theta_ref;
};

/// A_i = (r_i - mean) / (std + eps_std), population std. Constant rewards give zeros.
inline std::vector<double> compute_advantages(std::span<const double> rewards, double eps_std) {
  if (rewards.empty()) throw ContractError("compute_advantages: empty reward vector");
  std::vector<double> out(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return out;
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sigma = std::sqrt(var / static_cast<double>(rewards.size()));
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / (sigma + eps_std);
  return out;
}

struct KlResult {
  double value = 0;
  std::vector<double> gradient;
  std::size_t states = 0;
};

/// KL(pi_theta(.|s) || pi_ref(.|s)) at one candidate set, with its gradient in theta.
inline double state_kl(const PolicyParams& theta, const PolicyParams& ref, std::span<const CandidateAction> cands,
                       std::vector<double>* grad) {
  if (cands.size() < 2) return 0.0;
  const auto p = action_distribution(theta, cands);
  std::vector<double> log_ratio(cands.size());
  double kl = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    log_ratio[i] = log_prob(theta, cands, i) - log_prob(ref, cands, i);
    kl += p[i] * log_ratio[i];
  }
  if (grad) {
    // d/dtheta sum_a p_a (log p_a - log q_a) = sum_a p_a (phi_a - phibar) (log p_a - log q_a)
    std::vector<double> phibar(theta.dim(), 0.0);
    for (std::size_t i = 0; i < cands.size(); ++i) cands[i].features.add_to(phibar, p[i]);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const double w = p[i] * log_ratio[i];
      cands[i].features.add_to(*grad, w);
      for (std::size_t d = 0; d < phibar.size(); ++d) (*grad)[d] -= w * phibar[d];
    }
  }
  return kl;
}

/// Exact KL averaged over every visited state of the group.
inline KlResult kl_term(const PolicyParams& theta, const PolicyParams& theta_ref, const Group& group) {
  KlResult r;
  r.gradient.assign(theta.dim(), 0.0);
  for (const auto& t : group.trajectories) {
    for (const auto& s : t.steps) {
      r.value += state_kl(theta, theta_ref, s.candidates, &r.gradient);
      ++r.states;
    }
  }
  if (r.states > 0) {
    r.value /= static_cast<double>(r.states);
    for (auto& g : r.gradient) g /= static_cast<double>(r.states);
  }
  return r;
}

struct SurrogateResult {
  double objective = 0;
  std::vector<double> gradient;
  double kl = 0;
  std::vector<double> ratios;
  std::vector<bool> clipped;  // clip branch selected by the min
  std::vector<std::vector<double>> trajectory_gradients;
};

/// Clipped surrogate minus beta * KL for one group, with its exact gradient.
inline SurrogateResult surrogate_and_gradient(const PolicyParams& theta, const PolicySnapshots& snapshots,
                                              const Group& group, const GrpoConfig& config) {
  const std::size_t g = group.trajectories.size();
  if (g == 0 || group.advantages.size() != g) throw ContractError("surrogate: advantages missing for group");
  SurrogateResult out;
  out.gradient.assign(theta.dim(), 0.0);
  for (std::size_t i = 0; i < g; ++i) {
    const Trajectory& t = group.trajectories[i];
    const double a = group.advantages[i];
    const double ll = trajectory_log_likelihood(theta, t);
    const double ratio = std::exp(ll - t.behavior_log_likelihood);
    if (!std::isfinite(ratio))
      throw NumericalError("non-finite likelihood ratio for question " + std::to_string(t.question_id) +
                           ", trajectory " + std::to_string(i));
    const double unclipped = ratio * a;
    const double clipped = std::clamp(ratio, 1.0 - config.eps_clip, 1.0 + config.eps_clip) * a;
    std::vector<double> tg(theta.dim(), 0.0);
    if (clipped < unclipped) {
      out.objective += clipped;
      out.clipped.push_back(true);
    } else {
      out.objective += unclipped;
      out.clipped.push_back(false);
      if (a != 0.0) {
        const auto gl = grad_trajectory_log_likelihood(theta, t);
        for (std::size_t d = 0; d < tg.size(); ++d) tg[d] = unclipped * gl[d];
      }
    }
    for (std::size_t d = 0; d < tg.size(); ++d) out.gradient[d] += tg[d] / static_cast<double>(g);
    out.ratios.push_back(ratio);
    out.trajectory_gradients.push_back(std::move(tg));
  }
  out.objective /= static_cast<double>(g);
  const KlResult kl = kl_term(theta, snapshots.theta_ref, group);
  out.kl = kl.value;
  out.objective -= config.beta * kl.value;
  for (std::size_t d = 0; d < out.gradient.size(); ++d) out.gradient[d] -= config.beta * kl.gradient[d];
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (int w = 0; w < std::min<int>(workers, static_cast<int>(n)); ++w) threads.emplace_back(work);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

struct TrainContext {
  const KnowledgeBase* kb = nullptr;
  std::span<const Question> questions;
  const RewardPipeline* rewards = nullptr;
  RolloutSettings rollout;
  GrpoConfig grpo;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct StepMetrics {
  int step = 0;
  double mean_reward = 0;
  double mean_abs_advantage = 0;
  double mean_kl = 0;
  double avg_num_search = 0;
  double objective = 0;
};

struct StepResult {
  StepMetrics metrics;
  std::vector<Group> groups;
};

inline std::vector<std::size_t> sample_step_questions(std::size_t pool, int count, std::uint64_t seed, int step) {
  Rng rng(derive_seed({seed, 0x73746570ULL, static_cast<std::uint64_t>(step)}));
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  std::vector<std::size_t> out;
  while (out.size() < static_cast<std::size_t>(count)) {
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size() && out.size() < static_cast<std::size_t>(count); ++i) out.push_back(idx[i]);
  }
  return out;
}

inline std::uint64_t rollout_seed(std::uint64_t seed, int step, std::size_t question_id, std::size_t group_index) {
  return derive_seed({seed, static_cast<std::uint64_t>(step), question_id, group_index});
}

/// One GRPO update. theta_old is the incoming theta; theta is only modified
/// after every group has been scored, so reward errors leave it untouched.
inline StepResult train_step(PolicyParams& theta, const PolicyParams& theta_ref, const TrainContext& ctx, int step) {
  ctx.grpo.validate();
  if (ctx.questions.empty()) throw ContractError("train_step: no training questions");
  const PolicySnapshots snaps{theta, theta_ref};
  const auto picks = sample_step_questions(ctx.questions.size(), ctx.grpo.questions_per_step, ctx.seed, step);

  StepResult res;
  res.groups.resize(picks.size());
  std::vector<SurrogateResult> surrogates(picks.size());
  parallel_for(picks.size(), ctx.workers, [&](std::size_t gi) {
    ScopedAccessContext audit(AccessContext::Training);
    Group& group = res.groups[gi];
    group.question = &ctx.questions[picks[gi]];
    for (int g = 0; g < ctx.grpo.group_size; ++g) {
      Rng rng(rollout_seed(ctx.seed, step, group.question->id, static_cast<std::size_t>(g)));
      group.trajectories.push_back(rollout(snaps.theta_old, *ctx.kb, *group.question, ctx.rollout, rng));
    }
    group.rewards = ctx.rewards->group_rewards(*group.question, group.trajectories);
    group.advantages = compute_advantages(group.rewards, ctx.grpo.eps_std);
    surrogates[gi] = surrogate_and_gradient(snaps.theta_old, snaps, group, ctx.grpo);
  });

  std::vector<double> grad(theta.dim(), 0.0);
  StepMetrics& m = res.metrics;
  m.step = step;
  std::size_t n_traj = 0;
  for (std::size_t gi = 0; gi < picks.size(); ++gi) {
    const auto& s = surrogates[gi];
    for (std::size_t d = 0; d < grad.size(); ++d) grad[d] += s.gradient[d] / static_cast<double>(picks.size());
    m.objective += s.objective / static_cast<double>(picks.size());
    m.mean_kl += s.kl / static_cast<double>(picks.size());
    const Group& group = res.groups[gi];
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      m.mean_reward += group.rewards[i];
      m.mean_abs_advantage += std::abs(group.advantages[i]);
      m.avg_num_search += static_cast<double>(group.trajectories[i].num_searches());
      ++n_traj;
    }
  }
  m.mean_reward /= static_cast<double>(n_traj);
  m.mean_abs_advantage /= static_cast<double>(n_traj);
  m.avg_num_search /= static_cast<double>(n_traj);

  PolicyParams next = theta;
  for (std::size_t d = 0; d < grad.size(); ++d) next.theta[d] += ctx.grpo.learning_rate * grad[d];
  if (!next.finite()) throw NumericalError("parameter update produced non-finite values at step " + std::to_string(step));
  theta = std::move(next);
  return res;
}

/// Runs ctx.grpo.steps updates with the reference policy frozen at the initial parameters.
inline PolicyParams train_loop(PolicyParams theta, const TrainContext& ctx,
                               const std::function<void(const PolicyParams&, const StepResult&)>& on_step = {}) {
  const PolicyParams theta_ref = theta;
  for (int step = 1; step <= ctx.grpo.steps; ++step) {
    auto res = train_step(theta, theta_ref, ctx, step);
    if (on_step) on_step(theta, res);
  }
  return theta;
}

}  // namespace ccs
