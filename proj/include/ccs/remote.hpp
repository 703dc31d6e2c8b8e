#pragma once

// HTTP clients for remote reconstructor and embedder endpoints.
//
// Reconstructor wire format: POST {"prompt": string} -> {"text": string}.
// Embedder wire format:      POST {"text": string}   -> {"vector": [number]}.
// Every request carries an X-Correlation-Id header.

#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ccs/bottleneck.hpp"
#include "ccs/reconstruct.hpp"
#include "ccs/reconstruction_prompt.hpp"
#include "httplib.h"
#include "json.hpp"

namespace ccs {

struct RemoteConfig {
  std::string url;
  std::chrono::milliseconds timeout{10000};
  int retries = 2;
  std::chrono::milliseconds backoff{50};
  int max_in_flight = 4;
};

struct Endpoint {
  std::string scheme_host_port;
  std::string path;
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return Endpoint{url, "/"};
  return Endpoint{url.substr(0, path_start), url.substr(path_start)};
}

/// POSTs JSON with exponential backoff. Makes at most retries + 1 attempts.
class JsonPostClient {
 public:
  explicit JsonPostClient(RemoteConfig config) : config_(std::move(config)), endpoint_(parse_endpoint(config_.url)) {
    if (config_.retries < 0) throw ConfigError("remote retries must be non-negative");
  }

  nlohmann::json post(const nlohmann::json& body, std::uint64_t correlation_id) const {
    const std::string payload = body.dump();
    std::string last_error;
    const int attempts = config_.retries + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1LL << (attempt - 1)));
      attempts_.fetch_add(1, std::memory_order_relaxed);
      httplib::Client cli(endpoint_.scheme_host_port);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout).count() % 1000000;
      cli.set_connection_timeout(static_cast<time_t>(secs), static_cast<time_t>(usecs));
      cli.set_read_timeout(static_cast<time_t>(secs), static_cast<time_t>(usecs));
      httplib::Headers headers{{"X-Correlation-Id", std::to_string(correlation_id)}};
      auto res = cli.Post(endpoint_.path, headers, payload, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw TransportError(std::string("malformed response body: ") + e.what(), attempt + 1);
        }
      }
      last_error = "HTTP status " + std::to_string(res->status);
      if (res->status < 500 && res->status != 429) throw TransportError(config_.url + ": " + last_error, attempt + 1);
    }
    throw TransportError(config_.url + ": " + last_error + " after " + std::to_string(attempts) + " attempts",
                         attempts);
  }

  const RemoteConfig& config() const { return config_; }
  std::uint64_t attempts_made() const { return attempts_.load(); }

 private:
  RemoteConfig config_;
  Endpoint endpoint_;
  mutable std::atomic<std::uint64_t> attempts_{0};
};

/// Fills the reconstruction prompt template with a serialized trajectory.
inline std::string build_reconstruction_prompt(const BottleneckedTrajectory& input,
                                               std::string_view prompt_template = kReconstructionPrompt) {
  std::string prompt(prompt_template);
  const auto pos = prompt.find(kTrajectoryPlaceholder);
  if (pos == std::string::npos) throw ConfigError("prompt template lacks the trajectory placeholder");
  prompt.replace(pos, kTrajectoryPlaceholder.size(), bottlenecked_to_json(input).dump());
  return prompt;
}

inline ReconstructionResult parse_reconstruction_text(const std::string& text) {
  Tokens tokens = split_tokens(text);
  if (tokens.empty() || (tokens.size() == 1 && tokens[0] == "N/A")) return ReconstructionResult::not_reconstructible();
  return ReconstructionResult::of(std::move(tokens));
}

class RemoteReconstructor {
 public:
  explicit RemoteReconstructor(RemoteConfig config, std::string prompt_template = std::string(kReconstructionPrompt))
      : client_(std::move(config)), prompt_template_(std::move(prompt_template)) {}

  ReconstructionResult reconstruct(const BottleneckedTrajectory& input) const {
    return reconstruct_one(input, next_id_.fetch_add(1));
  }

  /// Issues up to max_in_flight concurrent requests. Results are returned in
  /// input order; the first transport error is rethrown after all workers stop.
  std::vector<ReconstructionResult> reconstruct_batch(const std::vector<BottleneckedTrajectory>& inputs) const {
    std::vector<ReconstructionResult> out(inputs.size());
    const std::uint64_t base = next_id_.fetch_add(inputs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= inputs.size()) return;
        {
          std::lock_guard lock(error_mu);
          if (error) return;
        }
        try {
          out[i] = reconstruct_one(inputs[i], base + i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    };
    const std::size_t n_workers =
        std::min<std::size_t>(inputs.size(), static_cast<std::size_t>(std::max(1, client_.config().max_in_flight)));
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
    return out;
  }

  const JsonPostClient& client() const { return client_; }

 private:
  ReconstructionResult reconstruct_one(const BottleneckedTrajectory& input, std::uint64_t id) const {
    auto j = client_.post(nlohmann::json{{"prompt", build_reconstruction_prompt(input, prompt_template_)}}, id);
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
      throw TransportError("reconstructor response lacks a text field", 1);
    return parse_reconstruction_text(j["text"].get<std::string>());
  }

  JsonPostClient client_;
  std::string prompt_template_;
  mutable std::atomic<std::uint64_t> next_id_{0};
};

class RemoteEmbedder {
 public:
  RemoteEmbedder(RemoteConfig config, std::size_t dim) : client_(std::move(config)), dim_(dim) {}

  std::vector<double> embed(const Tokens& text) const {
    auto j = client_.post(nlohmann::json{{"text", join_tokens(text)}}, next_id_.fetch_add(1));
    if (!j.is_object() || !j.contains("vector") || !j["vector"].is_array())
      throw TransportError("embedder response lacks a vector field", 1);
    auto v = j["vector"].get<std::vector<double>>();
    if (v.size() != dim_)
      throw ConfigError("remote embedder dimension " + std::to_string(v.size()) + " does not match configured " +
                        std::to_string(dim_));
    return v;
  }

  /// Startup probe: fails when the endpoint's dimension differs from the configured one.
  void check_dimension() const { (void)embed(Tokens{"probe"}); }

 private:
  JsonPostClient client_;
  std::size_t dim_;
  mutable std::atomic<std::uint64_t> next_id_{0};
};

}  // namespace ccs
