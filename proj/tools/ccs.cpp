// Command-line front end: train, ablate, probe-leakage, replay, plots.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ccs/ccs.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> steps;
  std::optional<double> lr;
  std::optional<std::string> mode;
  std::optional<std::string> channel;
  std::optional<std::string> reconstructor;
  std::optional<long long> timeout_ms;
  std::optional<int> retries;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON config file (defaults are used when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "experiment seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--steps", o.steps, "GRPO steps");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--mode", o.mode, "FullWithResponse|ActionsObs|ObsOnly|MaskedActionsObs");
  cmd->add_option("--channel", o.channel, "cycle|gold_em|majority_vote");
  cmd->add_option("--reconstructor", o.reconstructor, "oracle|lexical|oracle-copy|remote:<url>");
  cmd->add_option("--timeout", o.timeout_ms, "remote timeout in milliseconds");
  cmd->add_option("--retries", o.retries, "remote retry count");
  cmd->add_option("--workers", o.workers, "rollout worker threads");
}

ccs::ExperimentConfig resolve(const Overrides& o) {
  ccs::ExperimentConfig c = o.config.empty() ? ccs::ExperimentConfig{} : ccs::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.steps) c.grpo.steps = *o.steps;
  if (o.lr) c.grpo.learning_rate = *o.lr;
  if (o.mode) c.reward.mode = ccs::parse_mode(*o.mode);
  if (o.channel) c.reward.channel = ccs::parse_channel(*o.channel);
  if (o.reconstructor) {
    auto remote = c.reward.reconstructor.remote;
    c.reward.reconstructor = ccs::ReconstructorSpec::parse(*o.reconstructor);
    if (c.reward.reconstructor.kind == ccs::ReconstructorKind::Remote) remote.url = c.reward.reconstructor.remote.url;
    c.reward.reconstructor.remote = remote;
  }
  if (o.timeout_ms) c.reward.reconstructor.remote.timeout = std::chrono::milliseconds(*o.timeout_ms);
  if (o.retries) c.reward.reconstructor.remote.retries = *o.retries;
  if (o.workers) c.workers = *o.workers;
  ccs::apply_env_overrides(c);
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycle-consistent search: synthetic multi-hop QA with gold-free GRPO"};
  app.require_subcommand(1);

  Overrides train_o, ablate_o, probe_o;
  auto* train = app.add_subcommand("train", "train one policy and write run artifacts");
  add_common(train, train_o);

  auto* ablate = app.add_subcommand("ablate", "train one policy per reconstructor input mode");
  add_common(ablate, ablate_o);
  std::vector<std::string> ablate_modes;
  std::vector<std::uint64_t> ablate_seeds;
  ablate->add_option("--modes", ablate_modes, "modes to compare (default: all four)");
  ablate->add_option("--seeds", ablate_seeds, "seeds to average over (default: --seed)");

  auto* probe = app.add_subcommand("probe-leakage", "score the copy policy with and without masking");
  add_common(probe, probe_o);

  auto* replay = app.add_subcommand("replay", "recompute rewards for a saved run under another mode");
  std::string replay_dir, replay_mode, replay_recon, replay_out;
  replay->add_option("run_dir", replay_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  replay->add_option("--mode", replay_mode, "reconstructor input mode (default: the run's mode)");
  replay->add_option("--reconstructor", replay_recon, "reconstructor (default: the run's reconstructor)");
  replay->add_option("--out", replay_out, "CSV output file (default: stdout)");

  auto* plots = app.add_subcommand("plots", "write per-series plot CSVs from a metrics file");
  std::string plots_csv, plots_out;
  plots->add_option("metrics_csv", plots_csv, "metrics CSV")->required()->check(CLI::ExistingFile);
  plots->add_option("--out", plots_out, "output directory (default: next to the metrics file)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto art = ccs::run_experiment(resolve(train_o));
      std::cout << "run written to " << art.output_dir.string() << "\n"
                << "config_hash " << art.config_hash << "\n"
                << "eval_accuracy " << ccs::format_real(art.initial_eval_accuracy) << " -> "
                << ccs::format_real(art.final_eval_accuracy) << "\n";
    } else if (*ablate) {
      const auto cfg = resolve(ablate_o);
      std::vector<ccs::BottleneckMode> modes;
      for (const auto& m : ablate_modes) modes.push_back(ccs::parse_mode(m));
      if (modes.empty()) modes.assign(ccs::kAllModes.begin(), ccs::kAllModes.end());
      const auto rows = ccs::run_ablation(cfg, modes, ablate_seeds);
      std::cout << "mode,mean_eval_accuracy,mean_final_reward\n";
      for (const auto& r : rows)
        std::cout << ccs::mode_name(r.mode) << ',' << ccs::format_real(r.mean_eval_accuracy) << ','
                  << ccs::format_real(r.mean_final_reward) << '\n';
    } else if (*probe) {
      const auto cfg = resolve(probe_o);
      const auto report = ccs::leakage_report_json(ccs::run_leakage_probe(cfg)).dump(2);
      std::filesystem::create_directories(cfg.output_dir);
      std::ofstream os(std::filesystem::path(cfg.output_dir) / "leakage.json");
      if (!(os << report << '\n')) throw ccs::ConfigError("cannot write leakage.json under " + cfg.output_dir);
      std::cout << report << '\n';
    } else if (*replay) {
      const auto run = ccs::load_run(replay_dir);
      ccs::RewardConfig rc = run.config.reward;
      if (!replay_mode.empty()) rc.mode = ccs::parse_mode(replay_mode);
      if (!replay_recon.empty()) {
        auto remote = rc.reconstructor.remote;
        rc.reconstructor = ccs::ReconstructorSpec::parse(replay_recon);
        if (rc.reconstructor.kind == ccs::ReconstructorKind::Remote) remote.url = rc.reconstructor.remote.url;
        rc.reconstructor.remote = remote;
      }
      const auto recs = ccs::replay_rewards(run, rc);
      if (replay_out.empty()) {
        ccs::write_replay_csv(std::cout, recs);
      } else {
        std::ofstream os(replay_out);
        if (!os) throw ccs::ConfigError("cannot write " + replay_out);
        ccs::write_replay_csv(os, recs);
      }
    } else if (*plots) {
      const auto dir = plots_out.empty() ? std::filesystem::path(plots_csv).parent_path() : std::filesystem::path(plots_out);
      const auto files = ccs::emit_plots(plots_csv, dir);
      std::cout << files.reward_series.string() << "\n" << files.search_series.string() << "\n";
    }
  } catch (const ccs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
