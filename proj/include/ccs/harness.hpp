#pragma once

// Experiment orchestration: configuration, seeded runs, ablations, the
// leakage probe, reward replay and plot-series emission.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccs/agent.hpp"
#include "ccs/bottleneck.hpp"
#include "ccs/grpo.hpp"
#include "ccs/io.hpp"
#include "ccs/reconstruct.hpp"
#include "ccs/reward.hpp"
#include "ccs/world.hpp"
#include "json.hpp"

namespace ccs {

namespace fs = std::filesystem;

struct ExperimentConfig {
  WorldConfig world;
  GrpoConfig grpo;
  RewardConfig reward;
  int budget = 4;
  int top_k = 10;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  int eval_every = 10;
  int eval_questions = 64;
  int eval_samples = 4;
  int checkpoint_every = 50;
  int workers = 1;
  bool record_wall_time = false;

  void validate() const {
    world.validate();
    grpo.validate();
    if (budget < 1) throw ConfigError("budget must be at least 1");
    if (top_k < 1) throw ConfigError("top_k must be at least 1");
    if (eval_every < 1) throw ConfigError("eval_every must be positive");
    if (eval_questions < 1) throw ConfigError("eval_questions must be positive");
    if (eval_samples < 1) throw ConfigError("eval_samples must be positive");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
    if (output_dir.empty()) throw ConfigError("output_dir must be set");
    if (reward.embedding_dim < 1) throw ConfigError("reward.embedding_dim must be positive");
  }
};

// ---------------------------------------------------------------------------
// Config file (JSON). Unknown keys are rejected.
// ---------------------------------------------------------------------------
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  const auto& w = c.world;
  const auto& g = c.grpo;
  const auto& r = c.reward;
  json reward{{"channel", std::string(channel_name(r.channel))},
              {"mode", std::string(mode_name(r.mode))},
              {"reconstructor", r.reconstructor.name()},
              {"clamp_negative", r.clamp_negative},
              {"na_reward", r.na_reward},
              {"embedding_dim", r.embedding_dim},
              {"timeout_ms", r.reconstructor.remote.timeout.count()},
              {"retries", r.reconstructor.remote.retries},
              {"max_in_flight", r.reconstructor.remote.max_in_flight},
              {"embedder", r.remote_embedder ? "remote:" + r.remote_embedder->url : std::string("hashed")}};
  return json{{"schema", "ccs.config"},
              {"version", kSchemaVersion},
              {"seed", c.seed},
              {"budget", c.budget},
              {"top_k", c.top_k},
              {"output_dir", c.output_dir},
              {"eval_every", c.eval_every},
              {"eval_questions", c.eval_questions},
              {"eval_samples", c.eval_samples},
              {"checkpoint_every", c.checkpoint_every},
              {"workers", c.workers},
              {"record_wall_time", c.record_wall_time},
              {"world",
               {{"n_entities", w.n_entities},
                {"n_relations", w.n_relations},
                {"n_facts", w.n_facts},
                {"n_distractors", w.n_distractors},
                {"hops", w.hops},
                {"n_questions", w.n_questions},
                {"seed", w.seed}}},
              {"grpo",
               {{"group_size", g.group_size},
                {"eps_clip", g.eps_clip},
                {"beta", g.beta},
                {"eps_std", g.eps_std},
                {"learning_rate", g.learning_rate},
                {"steps", g.steps},
                {"questions_per_step", g.questions_per_step}}},
              {"reward", std::move(reward)}};
}

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* key, T& out, std::vector<std::string>& seen) {
  if (!j.contains(key)) return;
  seen.emplace_back(key);
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& seen, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(seen.begin(), seen.end(), it.key()) == seen.end())
      throw ConfigError("unknown config key: " + where + it.key());
}

}  // namespace detail

/// Applies the keys present in `j` on top of `base`.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {}) {
  using detail::take;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::vector<std::string> seen{"schema", "version"};
  if (j.contains("schema") && j["schema"] != "ccs.config") throw ConfigError("config schema must be ccs.config");
  if (j.contains("version") && j["version"] != kSchemaVersion) throw ConfigError("unsupported config version");
  ExperimentConfig c = std::move(base);
  take(j, "seed", c.seed, seen);
  take(j, "budget", c.budget, seen);
  take(j, "top_k", c.top_k, seen);
  take(j, "output_dir", c.output_dir, seen);
  take(j, "eval_every", c.eval_every, seen);
  take(j, "eval_questions", c.eval_questions, seen);
  take(j, "eval_samples", c.eval_samples, seen);
  take(j, "checkpoint_every", c.checkpoint_every, seen);
  take(j, "workers", c.workers, seen);
  take(j, "record_wall_time", c.record_wall_time, seen);
  if (j.contains("world")) {
    seen.emplace_back("world");
    const auto& w = j["world"];
    std::vector<std::string> ws;
    take(w, "n_entities", c.world.n_entities, ws);
    take(w, "n_relations", c.world.n_relations, ws);
    take(w, "n_facts", c.world.n_facts, ws);
    take(w, "n_distractors", c.world.n_distractors, ws);
    take(w, "hops", c.world.hops, ws);
    take(w, "n_questions", c.world.n_questions, ws);
    take(w, "seed", c.world.seed, ws);
    detail::reject_unknown(w, ws, "world.");
  }
  if (j.contains("grpo")) {
    seen.emplace_back("grpo");
    const auto& g = j["grpo"];
    std::vector<std::string> gs;
    take(g, "group_size", c.grpo.group_size, gs);
    take(g, "eps_clip", c.grpo.eps_clip, gs);
    take(g, "beta", c.grpo.beta, gs);
    take(g, "eps_std", c.grpo.eps_std, gs);
    take(g, "learning_rate", c.grpo.learning_rate, gs);
    take(g, "steps", c.grpo.steps, gs);
    take(g, "questions_per_step", c.grpo.questions_per_step, gs);
    detail::reject_unknown(g, gs, "grpo.");
  }
  if (j.contains("reward")) {
    seen.emplace_back("reward");
    const auto& r = j["reward"];
    std::vector<std::string> rs;
    std::string channel(channel_name(c.reward.channel)), mode(mode_name(c.reward.mode)),
        recon = c.reward.reconstructor.name(), embedder = "hashed";
    if (c.reward.remote_embedder) embedder = "remote:" + c.reward.remote_embedder->url;
    long long timeout_ms = c.reward.reconstructor.remote.timeout.count();
    int retries = c.reward.reconstructor.remote.retries, in_flight = c.reward.reconstructor.remote.max_in_flight;
    take(r, "channel", channel, rs);
    take(r, "mode", mode, rs);
    take(r, "reconstructor", recon, rs);
    take(r, "clamp_negative", c.reward.clamp_negative, rs);
    take(r, "na_reward", c.reward.na_reward, rs);
    take(r, "embedding_dim", c.reward.embedding_dim, rs);
    take(r, "timeout_ms", timeout_ms, rs);
    take(r, "retries", retries, rs);
    take(r, "max_in_flight", in_flight, rs);
    take(r, "embedder", embedder, rs);
    detail::reject_unknown(r, rs, "reward.");
    c.reward.channel = parse_channel(channel);
    c.reward.mode = parse_mode(mode);
    c.reward.reconstructor = ReconstructorSpec::parse(recon);
    c.reward.reconstructor.remote.timeout = std::chrono::milliseconds(timeout_ms);
    c.reward.reconstructor.remote.retries = retries;
    c.reward.reconstructor.remote.max_in_flight = in_flight;
    if (embedder == "hashed") {
      c.reward.remote_embedder.reset();
    } else if (embedder.rfind("remote:", 0) == 0 && embedder.size() > 7) {
      RemoteConfig rc = c.reward.reconstructor.remote;
      rc.url = embedder.substr(7);
      c.reward.remote_embedder = rc;
    } else {
      throw ConfigError("reward.embedder must be 'hashed' or 'remote:<url>'");
    }
  }
  detail::reject_unknown(j, seen, "");
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

/// CCS_RECONSTRUCTOR_URL replaces the remote reconstructor endpoint,
/// CCS_EMBEDDER_URL enables the remote embedder.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* url = std::getenv("CCS_RECONSTRUCTOR_URL"); url && *url &&
                                                            c.reward.reconstructor.kind == ReconstructorKind::Remote)
    c.reward.reconstructor.remote.url = url;
  if (const char* url = std::getenv("CCS_EMBEDDER_URL"); url && *url) {
    RemoteConfig rc = c.reward.reconstructor.remote;
    rc.url = url;
    c.reward.remote_embedder = rc;
  }
}

/// Hash of the effective config. Location and thread count do not affect
/// results and are excluded.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = config_to_json(c);
  j.erase("output_dir");
  j.erase("workers");
  return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Evaluation: held-out gold exact match. Measurement only.
// ---------------------------------------------------------------------------
inline double evaluate_accuracy(const PolicyParams& theta, const KnowledgeBase& kb, std::span<const Question> questions,
                                const RolloutSettings& settings, std::uint64_t seed, int samples) {
  ScopedAccessContext audit(AccessContext::Evaluation);
  double hits = 0;
  std::size_t n = 0;
  for (const auto& q : questions) {
    const std::size_t gold = q.gold_answer();
    for (int j = 0; j < samples; ++j) {
      Rng rng(derive_seed({seed, 0x6576616cULL, q.id, static_cast<std::uint64_t>(j)}));
      hits += gold_em_reward(rollout(theta, kb, q, settings, rng), kb, gold);
      ++n;
    }
  }
  return n ? hits / static_cast<double>(n) : 0.0;
}

struct WorldSetup {
  KnowledgeBase kb;
  std::vector<Question> train;
  std::vector<Question> eval;
};

/// Training questions take ids [0, n_questions); held-out ids follow.
inline WorldSetup build_world(const ExperimentConfig& c) {
  WorldSetup w{generate_world(c.world), {}, {}};
  auto all = generate_questions(w.kb, c.world, c.world.n_questions + c.eval_questions);
  w.train.assign(all.begin(), all.begin() + c.world.n_questions);
  w.eval.assign(all.begin() + c.world.n_questions, all.end());
  return w;
}

struct RunArtifacts {
  fs::path output_dir;
  fs::path config_snapshot;
  fs::path world_file;
  fs::path questions_file;
  fs::path trajectory_log;
  fs::path metrics_csv;
  fs::path summary;
  std::vector<fs::path> checkpoints;
  std::string config_hash;
  std::string world_hash;
  double initial_eval_accuracy = 0;
  double final_eval_accuracy = 0;
  std::vector<MetricsRecord> metrics;
  PolicyParams final_theta;
  std::uint64_t training_gold_reads = 0;
};

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + p.string());
  return os;
}

inline void write_checkpoint_file(const fs::path& p, const Checkpoint& c) {
  auto os = open_out(p);
  write_checkpoint(os, c);
}

inline std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "theta_step_%06d.txt", step);
  return buf;
}

}  // namespace detail

/// Generates the world, trains, and writes every artifact under output_dir.
inline RunArtifacts run_experiment(const ExperimentConfig& config) {
  config.validate();
  RunArtifacts art;
  art.output_dir = config.output_dir;
  fs::create_directories(art.output_dir / "checkpoints");
  art.config_hash = config_hash(config);

  art.config_snapshot = art.output_dir / "config.json";
  {
    auto os = detail::open_out(art.config_snapshot);
    auto j = config_to_json(config);
    j["config_hash"] = art.config_hash;
    os << j.dump(2) << '\n';
  }

  WorldSetup world = build_world(config);
  art.world_hash = world_hash(world.kb);
  art.world_file = art.output_dir / "world.jsonl";
  {
    auto os = detail::open_out(art.world_file);
    write_kb_jsonl(os, world.kb);
  }
  art.questions_file = art.output_dir / "questions.jsonl";
  {
    auto os = detail::open_out(art.questions_file);
    write_questions_header(os);
    write_questions_jsonl(os, world.train, "train");
    write_questions_jsonl(os, world.eval, "eval");
  }

  const RewardPipeline pipeline(config.reward, world.kb);
  const RolloutSettings settings{config.budget, config.top_k};
  TrainContext ctx{&world.kb, world.train, &pipeline, settings, config.grpo, config.seed, config.workers};

  art.trajectory_log = art.output_dir / "trajectories.jsonl";
  art.metrics_csv = art.output_dir / "metrics.csv";
  art.summary = art.output_dir / "summary.json";
  auto traj_os = detail::open_out(art.trajectory_log);
  write_trajectory_log_header(traj_os, art.config_hash);
  auto metrics_os = detail::open_out(art.metrics_csv);
  metrics_os << kMetricsHeader << '\n';

  const std::string channel(channel_name(config.reward.channel));
  const std::string mode(mode_name(config.reward.mode));
  const std::uint64_t gold_before = GoldAccessAudit::instance().reads(AccessContext::Training);
  const auto t0 = std::chrono::steady_clock::now();

  auto write_summary = [&](std::string_view status, const std::string& error) {
    nlohmann::json s{{"schema", "ccs.summary"},
                     {"version", kSchemaVersion},
                     {"status", std::string(status)},
                     {"config_hash", art.config_hash},
                     {"world_hash", art.world_hash},
                     {"steps_completed", art.metrics.size()},
                     {"initial_eval_accuracy", art.initial_eval_accuracy},
                     {"final_eval_accuracy", art.final_eval_accuracy},
                     {"training_gold_reads", art.training_gold_reads}};
    if (!error.empty()) s["error"] = error;
    auto os = detail::open_out(art.summary);
    os << s.dump(2) << '\n';
  };

  try {
    pipeline.check_remote_embedder();
    PolicyParams theta = PolicyParams::zeros(feature::dim(config.budget));
    art.initial_eval_accuracy =
        evaluate_accuracy(theta, world.kb, world.eval, settings, config.seed, config.eval_samples);
    art.final_eval_accuracy = art.initial_eval_accuracy;

    art.final_theta = train_loop(theta, ctx, [&](const PolicyParams& th, const StepResult& res) {
      const int step = res.metrics.step;
      for (const auto& g : res.groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i)
          write_trajectory_record(traj_os, TrajectoryRecord{step, i, g.trajectories[i], g.rewards[i], g.advantages[i]});
      MetricsRecord rec{res.metrics, std::nullopt, 0.0};
      if (step % config.eval_every == 0 || step == config.grpo.steps) {
        rec.eval_accuracy = evaluate_accuracy(th, world.kb, world.eval, settings, config.seed, config.eval_samples);
        art.final_eval_accuracy = *rec.eval_accuracy;
      }
      if (config.record_wall_time)
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_metrics_row(metrics_os, rec, channel, mode, art.config_hash);
      art.metrics.push_back(rec);
      if (step % config.checkpoint_every == 0) {
        auto p = art.output_dir / "checkpoints" / detail::checkpoint_name(step);
        detail::write_checkpoint_file(p, Checkpoint{th, step, config.seed, art.config_hash});
        art.checkpoints.push_back(p);
      }
    });
    auto final_path = art.output_dir / "checkpoints" / "theta_final.txt";
    detail::write_checkpoint_file(final_path,
                                  Checkpoint{art.final_theta, config.grpo.steps, config.seed, art.config_hash});
    art.checkpoints.push_back(final_path);
  } catch (const Error& e) {
    art.training_gold_reads = GoldAccessAudit::instance().reads(AccessContext::Training) - gold_before;
    traj_os.flush();
    metrics_os.flush();
    write_summary("aborted", e.what());
    throw;
  }
  art.training_gold_reads = GoldAccessAudit::instance().reads(AccessContext::Training) - gold_before;
  write_summary("completed", "");
  return art;
}

// ---------------------------------------------------------------------------
// Ablation over reconstructor input modes.
// ---------------------------------------------------------------------------
struct AblationRow {
  BottleneckMode mode;
  std::string world_hash;
  std::vector<double> eval_accuracy;  // one per seed
  std::vector<double> mean_reward;    // last-10-step training reward, one per seed
  double mean_eval_accuracy = 0;
  double mean_final_reward = 0;
};

inline double windowed_mean_reward(const std::vector<MetricsRecord>& m, bool last, std::size_t window = 10) {
  if (m.empty()) return 0;
  const std::size_t n = std::min(window, m.size());
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += m[last ? m.size() - n + i : i].step.mean_reward;
  return s / static_cast<double>(n);
}

/// Trains one policy per (mode, seed) on the same world; output goes to
/// <output_dir>/<mode>/seed_<seed>.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& config, const std::vector<BottleneckMode>& modes,
                                             std::vector<std::uint64_t> seeds = {}) {
  if (modes.size() < 2) throw ConfigError("ablation needs at least two modes");
  if (seeds.empty()) seeds.push_back(config.seed);
  std::vector<AblationRow> rows;
  for (auto mode : modes) {
    AblationRow row{mode, {}, {}, {}, 0, 0};
    for (auto seed : seeds) {
      ExperimentConfig c = config;
      c.reward.mode = mode;
      c.seed = seed;
      c.output_dir = (fs::path(config.output_dir) / std::string(mode_name(mode)) / ("seed_" + std::to_string(seed))).string();
      auto art = run_experiment(c);
      row.world_hash = art.world_hash;
      row.eval_accuracy.push_back(art.final_eval_accuracy);
      row.mean_reward.push_back(windowed_mean_reward(art.metrics, true));
    }
    for (double a : row.eval_accuracy) row.mean_eval_accuracy += a / static_cast<double>(seeds.size());
    for (double r : row.mean_reward) row.mean_final_reward += r / static_cast<double>(seeds.size());
    rows.push_back(std::move(row));
  }
  fs::create_directories(config.output_dir);
  auto os = detail::open_out(fs::path(config.output_dir) / "ablation.csv");
  os << "mode,world_hash,seeds,mean_eval_accuracy,mean_final_reward\n";
  for (const auto& r : rows)
    os << mode_name(r.mode) << ',' << r.world_hash << ',' << seeds.size() << ',' << format_real(r.mean_eval_accuracy)
       << ',' << format_real(r.mean_final_reward) << '\n';
  return rows;
}

// ---------------------------------------------------------------------------
// Leakage probe: a scripted copy policy whose query is the question itself.
// ---------------------------------------------------------------------------
struct LeakageReport {
  std::size_t trajectories = 0;
  double unmasked_lexical = 0;  // FullWithResponse + lexical reconstructor
  double masked_lexical = 0;    // MaskedActionsObs + lexical reconstructor
  double masked_oracle = 0;     // MaskedActionsObs + oracle reconstructor
  double gap() const { return unmasked_lexical - masked_lexical; }
};

/// Search with the question verbatim (retrieval restricted to distractor
/// facts), then restate the question as the final response.
inline Trajectory copy_policy_trajectory(const KnowledgeBase& kb, const Question& q, int top_k) {
  Trajectory t;
  t.question_id = q.id;
  t.steps.push_back(Step{SearchAction{q.tokens}, Observation{retrieve(kb, q.tokens, top_k, true)}, {}, 0});
  t.steps.push_back(Step{FinalAction{q.tokens}, std::nullopt, {}, 0});
  return t;
}

inline LeakageReport run_leakage_probe(const ExperimentConfig& config) {
  config.validate();
  const WorldSetup world = build_world(config);
  std::vector<Question> qs = world.train;
  qs.insert(qs.end(), world.eval.begin(), world.eval.end());

  auto pipeline_for = [&](BottleneckMode mode, ReconstructorKind kind) {
    RewardConfig rc = config.reward;
    rc.channel = RewardChannel::Cycle;
    rc.mode = mode;
    rc.reconstructor.kind = kind;
    rc.remote_embedder.reset();
    return RewardPipeline(rc, world.kb);
  };
  const auto unmasked_lex = pipeline_for(BottleneckMode::FullWithResponse, ReconstructorKind::Lexical);
  const auto masked_lex = pipeline_for(BottleneckMode::MaskedActionsObs, ReconstructorKind::Lexical);
  const auto masked_oracle = pipeline_for(BottleneckMode::MaskedActionsObs, ReconstructorKind::Oracle);

  LeakageReport rep;
  for (const auto& q : qs) {
    const std::vector<Trajectory> t{copy_policy_trajectory(world.kb, q, config.top_k)};
    rep.unmasked_lexical += unmasked_lex.group_rewards(q, t)[0];
    rep.masked_lexical += masked_lex.group_rewards(q, t)[0];
    rep.masked_oracle += masked_oracle.group_rewards(q, t)[0];
    ++rep.trajectories;
  }
  const double n = static_cast<double>(rep.trajectories);
  rep.unmasked_lexical /= n;
  rep.masked_lexical /= n;
  rep.masked_oracle /= n;
  return rep;
}

inline nlohmann::json leakage_report_json(const LeakageReport& r) {
  return nlohmann::json{{"trajectories", r.trajectories},
                        {"unmasked_lexical", r.unmasked_lexical},
                        {"masked_lexical", r.masked_lexical},
                        {"masked_oracle", r.masked_oracle},
                        {"gap", r.gap()}};
}

// ---------------------------------------------------------------------------
// Replay: recompute rewards for a saved trajectory log under another
// reconstructor input mode or reconstructor.
// ---------------------------------------------------------------------------
struct ReplayRecord {
  int step = 0;
  std::size_t question_id = 0;
  std::size_t group_index = 0;
  double logged_reward = 0;
  double replayed_reward = 0;
};

struct LoadedRun {
  ExperimentConfig config;
  KnowledgeBase kb;
  std::map<std::size_t, Question> questions;
  std::vector<TrajectoryRecord> records;
};

inline LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  run.config = [&] {
    std::ifstream in(dir / "config.json");
    if (!in) throw ConfigError("cannot open " + (dir / "config.json").string());
    auto j = nlohmann::json::parse(in);
    j.erase("config_hash");
    return config_from_json(j);
  }();
  {
    std::ifstream in(dir / "world.jsonl");
    if (!in) throw ConfigError("cannot open " + (dir / "world.jsonl").string());
    run.kb = read_kb_jsonl(in);
  }
  {
    std::ifstream in(dir / "questions.jsonl");
    if (!in) throw ConfigError("cannot open " + (dir / "questions.jsonl").string());
    for (auto& [split, qs] : read_questions_jsonl(in))
      for (auto& q : qs) run.questions.emplace(q.id, std::move(q));
  }
  {
    std::ifstream in(dir / "trajectories.jsonl");
    if (!in) throw ConfigError("cannot open " + (dir / "trajectories.jsonl").string());
    run.records = read_trajectory_log(in, run.kb);
  }
  return run;
}

inline std::vector<ReplayRecord> replay_rewards(const LoadedRun& run, const RewardConfig& reward) {
  const RewardPipeline pipeline(reward, run.kb);
  std::vector<ReplayRecord> out;
  std::size_t i = 0;
  while (i < run.records.size()) {
    // A group is a run of consecutive records sharing (step, question id).
    std::size_t j = i;
    std::vector<Trajectory> group;
    while (j < run.records.size() && run.records[j].step == run.records[i].step &&
           run.records[j].trajectory.question_id == run.records[i].trajectory.question_id &&
           (j == i || run.records[j].group_index > run.records[j - 1].group_index)) {
      group.push_back(run.records[j].trajectory);
      ++j;
    }
    const auto qit = run.questions.find(run.records[i].trajectory.question_id);
    if (qit == run.questions.end()) throw ParseError("trajectory log references unknown question");
    ScopedAccessContext audit(AccessContext::Training);
    const auto rewards = pipeline.group_rewards(qit->second, group);
    for (std::size_t k = i; k < j; ++k)
      out.push_back(ReplayRecord{run.records[k].step, run.records[k].trajectory.question_id, run.records[k].group_index,
                                 run.records[k].reward, rewards[k - i]});
    i = j;
  }
  return out;
}

inline void write_replay_csv(std::ostream& os, const std::vector<ReplayRecord>& recs) {
  os << "step,question_id,group_index,logged_reward,replayed_reward\n";
  for (const auto& r : recs)
    os << r.step << ',' << r.question_id << ',' << r.group_index << ',' << format_real(r.logged_reward) << ','
       << format_real(r.replayed_reward) << '\n';
}

// ---------------------------------------------------------------------------
// Plot series.
// ---------------------------------------------------------------------------
struct PlotFiles {
  fs::path reward_series;
  fs::path search_series;
};

/// Projects the metrics CSV onto (step, mean_reward) and (step, avg_num_search).
/// Values are copied as text, so they match the source bit for bit.
inline PlotFiles emit_plots(const fs::path& metrics_csv, const fs::path& out_dir) {
  std::ifstream in(metrics_csv);
  if (!in) throw ParseError("cannot open metrics CSV " + metrics_csv.string());
  const CsvTable t = read_csv(in);
  const auto c_step = t.column("step"), c_reward = t.column("mean_reward"), c_search = t.column("avg_num_search");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t line_no = r + 2;
    parse_real_field(t.rows[r][c_step], line_no);
    parse_real_field(t.rows[r][c_reward], line_no);
    parse_real_field(t.rows[r][c_search], line_no);
  }
  fs::create_directories(out_dir);
  PlotFiles files{out_dir / "reward_series.csv", out_dir / "search_series.csv"};
  auto reward_os = detail::open_out(files.reward_series);
  auto search_os = detail::open_out(files.search_series);
  reward_os << "step,mean_reward\n";
  search_os << "step,avg_num_search\n";
  for (const auto& row : t.rows) {
    reward_os << row[c_step] << ',' << row[c_reward] << '\n';
    search_os << row[c_step] << ',' << row[c_search] << '\n';
  }
  return files;
}

}  // namespace ccs
