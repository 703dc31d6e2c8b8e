#pragma once

// Trajectory logs (line-delimited JSON), parameter checkpoints and the
// per-step metrics CSV.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ccs/agent.hpp"
#include "ccs/grpo.hpp"
#include "ccs/world.hpp"
#include "json.hpp"

namespace ccs {

/// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

struct TrajectoryRecord {
  int step = 0;
  std::size_t group_index = 0;
  Trajectory trajectory;
  double reward = 0;
  double advantage = 0;
};

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
  using nlohmann::json;
  json steps = json::array();
  for (const auto& s : t.steps) {
    json step{{"action", json{{"type", is_search(s.action) ? "search" : "final"}, {"tokens", action_tokens(s.action)}}},
              {"chosen", s.chosen},
              {"candidates", s.candidates.size()}};
    if (s.observation) {
      json obs = json::array();
      for (const auto& sn : s.observation->snippets)
        obs.push_back(json{{"fact", sn.fact_id}, {"text", join_tokens(sn.text)}, {"score", sn.score}});
      step["observation"] = std::move(obs);
    }
    steps.push_back(std::move(step));
  }
  return json{{"question_id", t.question_id}, {"steps", std::move(steps)}, {"log_likelihood", t.behavior_log_likelihood}};
}

/// Rebuilds a trajectory (without candidate features) from its log record.
inline Trajectory trajectory_from_json(const nlohmann::json& j, const KnowledgeBase& kb) {
  Trajectory t;
  t.question_id = j.at("question_id").get<std::size_t>();
  t.behavior_log_likelihood = j.at("log_likelihood").get<double>();
  for (const auto& js : j.at("steps")) {
    const auto& ja = js.at("action");
    Tokens tokens = ja.at("tokens").get<Tokens>();
    Step s;
    s.chosen = js.value("chosen", std::size_t{0});
    if (ja.at("type").get<std::string>() == "search") {
      s.action = SearchAction{std::move(tokens)};
      Observation obs;
      for (const auto& jo : js.at("observation")) {
        const auto id = jo.at("fact").get<std::size_t>();
        if (id >= kb.corpus_size()) throw ParseError("trajectory references unknown fact " + std::to_string(id));
        Snippet sn{id, kb.corpus_fact(id), split_tokens(jo.at("text").get<std::string>()), jo.at("score").get<double>()};
        if (sn.text != kb.render(sn.fact)) throw ParseError("snippet text does not match fact " + std::to_string(id));
        obs.snippets.push_back(std::move(sn));
      }
      s.observation = std::move(obs);
    } else {
      s.action = FinalAction{std::move(tokens)};
    }
    t.steps.push_back(std::move(s));
  }
  return t;
}

inline void write_trajectory_log_header(std::ostream& os, const std::string& config_hash) {
  os << nlohmann::json{{"schema", "ccs.trajectory_log"}, {"version", kSchemaVersion}, {"config_hash", config_hash}}.dump()
     << '\n';
}

inline void write_trajectory_record(std::ostream& os, const TrajectoryRecord& r) {
  auto j = trajectory_to_json(r.trajectory);
  j["step"] = r.step;
  j["group_index"] = r.group_index;
  j["reward"] = r.reward;
  j["advantage"] = r.advantage;
  os << j.dump() << '\n';
}

inline std::vector<TrajectoryRecord> read_trajectory_log(std::istream& is, const KnowledgeBase& kb,
                                                         std::string* config_hash = nullptr) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) throw ParseError("empty trajectory log");
  auto header = parse_json_line(line, line_no);
  expect_header(header, "ccs.trajectory_log");
  if (config_hash) *config_hash = header.value("config_hash", "");
  std::vector<TrajectoryRecord> out;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto j = parse_json_line(line, line_no);
    try {
      out.push_back(TrajectoryRecord{j.at("step").get<int>(), j.at("group_index").get<std::size_t>(),
                                     trajectory_from_json(j, kb), j.at("reward").get<double>(),
                                     j.at("advantage").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: a text header followed by one parameter per line.
// ---------------------------------------------------------------------------
struct Checkpoint {
  PolicyParams params;
  int step = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  os << "ccs-theta v" << kSchemaVersion << '\n'
     << "dim " << c.params.dim() << '\n'
     << "step " << c.step << '\n'
     << "seed " << c.seed << '\n'
     << "config_hash " << c.config_hash << '\n';
  for (double v : c.params.theta) os << format_real(v) << '\n';
}

inline Checkpoint read_checkpoint(std::istream& is) {
  Checkpoint c;
  std::string magic, version, key;
  std::size_t dim = 0;
  if (!(is >> magic >> version) || magic != "ccs-theta" || version != "v1") throw ParseError("not a ccs-theta v1 file");
  if (!(is >> key >> dim) || key != "dim") throw ParseError("checkpoint: missing dim");
  if (!(is >> key >> c.step) || key != "step") throw ParseError("checkpoint: missing step");
  if (!(is >> key >> c.seed) || key != "seed") throw ParseError("checkpoint: missing seed");
  if (!(is >> key >> c.config_hash) || key != "config_hash") throw ParseError("checkpoint: missing config_hash");
  std::string tok;
  for (std::size_t i = 0; i < dim; ++i) {
    if (!(is >> tok)) throw ParseError("checkpoint: expected " + std::to_string(dim) + " values");
    c.params.theta.push_back(std::stod(tok));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Metrics CSV.
// ---------------------------------------------------------------------------
inline constexpr std::string_view kMetricsHeader =
    "step,mean_reward,reward_channel,mode,mean_kl,avg_num_search,mean_abs_advantage,eval_accuracy,wall_time,"
    "config_hash";

struct MetricsRecord {
  StepMetrics step;
  std::optional<double> eval_accuracy;
  double wall_time = 0;
};

inline void write_metrics_row(std::ostream& os, const MetricsRecord& r, std::string_view channel, std::string_view mode,
                              std::string_view config_hash) {
  os << r.step.step << ',' << format_real(r.step.mean_reward) << ',' << channel << ',' << mode << ','
     << format_real(r.step.mean_kl) << ',' << format_real(r.step.avg_num_search) << ','
     << format_real(r.step.mean_abs_advantage) << ',' << (r.eval_accuracy ? format_real(*r.eval_accuracy) : "")
     << ',' << format_real(r.wall_time) << ',' << config_hash << '\n';
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError("missing CSV column: " + std::string(name));
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

/// Plain comma-separated table; every row must have as many fields as the header.
inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw ParseError("line 1: empty CSV");
  ++line_no;
  t.header = split_csv_line(line);
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                       " fields, found " + std::to_string(row.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline double parse_real_field(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": not a number: '" + s + "'");
  }
}

}  // namespace ccs
