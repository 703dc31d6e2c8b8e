#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ccs {

using Tokens = std::vector<std::string>;

// Error hierarchy. Every failure the library reports is one of these.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct GenerationError : Error {
  using Error::Error;
};
struct ScenarioError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct TransportError : Error {
  TransportError(const std::string& what, int attempts) : Error(what), attempts(attempts) {}
  int attempts;
};

inline Tokens split_tokens(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

inline bool contains_token(const Tokens& tokens, std::string_view tok) {
  return std::find(tokens.begin(), tokens.end(), tok) != tokens.end();
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a tuple of integers, e.g.
/// (experiment seed, step, question id, group index).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// mt19937_64 with distribution mappings written out so that streams are
/// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Gold-answer access audit. Reads of a question's gold answer are counted per
// access context so that a run can prove its training path never touched them.
// ---------------------------------------------------------------------------
enum class AccessContext : int { Unscoped = 0, Training = 1, Evaluation = 2 };

class GoldAccessAudit {
 public:
  static GoldAccessAudit& instance() {
    static GoldAccessAudit audit;
    return audit;
  }

  void record() { counts_[static_cast<int>(current())].fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t reads(AccessContext ctx) const {
    return counts_[static_cast<int>(ctx)].load(std::memory_order_relaxed);
  }
  void reset() {
    for (auto& c : counts_) c.store(0);
  }

  static AccessContext& current() {
    thread_local AccessContext ctx = AccessContext::Unscoped;
    return ctx;
  }

 private:
  std::array<std::atomic<std::uint64_t>, 3> counts_{};
};

class ScopedAccessContext {
 public:
  explicit ScopedAccessContext(AccessContext ctx) : saved_(GoldAccessAudit::current()) {
    GoldAccessAudit::current() = ctx;
  }
  ~ScopedAccessContext() { GoldAccessAudit::current() = saved_; }
  ScopedAccessContext(const ScopedAccessContext&) = delete;
  ScopedAccessContext& operator=(const ScopedAccessContext&) = delete;

 private:
  AccessContext saved_;
};

}  // namespace ccs
