#pragma once

// Synthetic knowledge-graph world: vocabulary, functional fact base, templated
// multi-hop questions and token-overlap snippet retrieval.

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ccs/common.hpp"
#include "json.hpp"

namespace ccs {

enum class EntityTag : std::uint8_t { Person = 0, Org = 1, Loc = 2, Misc = 3 };

inline constexpr std::array<std::string_view, 4> kTagTokens{"[PERSON]", "[ORG]", "[LOC]", "[MISC]"};
inline constexpr std::array<std::string_view, 4> kTagNames{"PERSON", "ORG", "LOC", "MISC"};

inline std::string_view tag_token(EntityTag tag) { return kTagTokens[static_cast<std::size_t>(tag)]; }
inline std::string_view tag_name(EntityTag tag) { return kTagNames[static_cast<std::size_t>(tag)]; }

inline std::optional<EntityTag> parse_tag_token(std::string_view tok) {
  for (std::size_t i = 0; i < kTagTokens.size(); ++i)
    if (kTagTokens[i] == tok) return static_cast<EntityTag>(i);
  return std::nullopt;
}

inline std::optional<EntityTag> parse_tag_name(std::string_view name) {
  for (std::size_t i = 0; i < kTagNames.size(); ++i)
    if (kTagNames[i] == name) return static_cast<EntityTag>(i);
  return std::nullopt;
}

inline bool is_tag_token(std::string_view tok) { return parse_tag_token(tok).has_value(); }

// Function words of the question templates.
inline constexpr std::array<std::string_view, 4> kTemplateWords{"what", "is", "the", "of"};

inline bool is_template_word(std::string_view tok) {
  return std::find(kTemplateWords.begin(), kTemplateWords.end(), tok) != kTemplateWords.end();
}

struct Entity {
  std::size_t id = 0;
  std::string surface;
  EntityTag tag = EntityTag::Misc;
};

struct Relation {
  std::size_t id = 0;
  std::string surface;
};

struct Fact {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;

  friend bool operator==(const Fact&, const Fact&) = default;
  friend auto operator<=>(const Fact&, const Fact&) = default;
};

struct WorldConfig {
  int n_entities = 50;
  int n_relations = 6;
  int n_facts = 150;
  int n_distractors = 50;
  int hops = 2;
  int n_questions = 128;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_entities < 2) throw ConfigError("world.n_entities must be at least 2");
    if (n_relations < 1) throw ConfigError("world.n_relations must be positive");
    if (n_facts < 1) throw ConfigError("world.n_facts must be positive");
    if (n_distractors < 0) throw ConfigError("world.n_distractors must be non-negative");
    if (hops < 1) throw ConfigError("world.hops must be at least 1");
    if (n_questions < 1) throw ConfigError("world.n_questions must be positive");
    // Functional relations: each (head, relation) pair has at most one tail.
    const long long capacity = static_cast<long long>(n_entities) * n_relations;
    if (static_cast<long long>(n_facts) + n_distractors > capacity)
      throw ConfigError("world: n_facts + n_distractors = " +
                        std::to_string(n_facts + n_distractors) +
                        " exceeds the functional capacity n_entities * n_relations = " +
                        std::to_string(capacity));
  }
};

/// Immutable after construction. Fact ids index the retrieval corpus, which is
/// the chain facts followed by the distractor facts.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  KnowledgeBase(std::vector<Entity> entities, std::vector<Relation> relations, std::vector<Fact> facts,
                std::vector<Fact> distractors, std::uint64_t seed)
      : entities_(std::move(entities)),
        relations_(std::move(relations)),
        facts_(std::move(facts)),
        distractors_(std::move(distractors)),
        seed_(seed) {
    index();
  }

  const std::vector<Entity>& entities() const { return entities_; }
  const std::vector<Relation>& relations() const { return relations_; }
  const std::vector<Fact>& facts() const { return facts_; }
  const std::vector<Fact>& distractors() const { return distractors_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t corpus_size() const { return facts_.size() + distractors_.size(); }
  const Fact& corpus_fact(std::size_t id) const {
    return id < facts_.size() ? facts_[id] : distractors_.at(id - facts_.size());
  }
  bool is_distractor(std::size_t id) const { return id >= facts_.size(); }

  const Entity& entity(std::size_t id) const { return entities_.at(id); }
  const Relation& relation(std::size_t id) const { return relations_.at(id); }

  std::optional<std::size_t> entity_by_surface(std::string_view s) const {
    auto it = entity_index_.find(std::string(s));
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> relation_by_surface(std::string_view s) const {
    auto it = relation_index_.find(std::string(s));
    if (it == relation_index_.end()) return std::nullopt;
    return it->second;
  }

  /// Tail reached from `head` via `relation` over chain facts only.
  std::optional<std::size_t> follow(std::size_t head, std::size_t relation) const {
    auto it = chain_edges_.find(key(head, relation));
    if (it == chain_edges_.end()) return std::nullopt;
    return facts_[it->second].tail;
  }

  /// Chain facts leaving `head`, ordered by relation id.
  std::vector<Fact> outgoing(std::size_t head) const {
    std::vector<Fact> out;
    for (std::size_t r = 0; r < relations_.size(); ++r)
      if (auto t = follow(head, r)) out.push_back(Fact{head, r, *t});
    return out;
  }

  Tokens render(const Fact& f) const {
    return {entities_[f.head].surface, relations_[f.relation].surface, entities_[f.tail].surface};
  }

  /// Corpus facts whose rendering contains `surface` as a token.
  std::vector<std::size_t> corpus_ids_mentioning(std::size_t entity) const {
    std::vector<std::size_t> out;
    for (std::size_t id = 0; id < corpus_size(); ++id) {
      const Fact& f = corpus_fact(id);
      if (f.head == entity || f.tail == entity) out.push_back(id);
    }
    return out;
  }

 private:
  static std::uint64_t key(std::size_t head, std::size_t relation) {
    return (static_cast<std::uint64_t>(head) << 32) | static_cast<std::uint64_t>(relation);
  }

  void index() {
    for (const auto& e : entities_) {
      if (!entity_index_.emplace(e.surface, e.id).second)
        throw GenerationError("duplicate entity surface: " + e.surface);
    }
    for (const auto& r : relations_) {
      if (!relation_index_.emplace(r.surface, r.id).second)
        throw GenerationError("duplicate relation surface: " + r.surface);
      if (entity_index_.count(r.surface)) throw GenerationError("relation surface collides with entity");
    }
    std::set<std::uint64_t> seen;
    for (std::size_t id = 0; id < corpus_size(); ++id) {
      const Fact& f = corpus_fact(id);
      if (f.head >= entities_.size() || f.tail >= entities_.size() || f.relation >= relations_.size())
        throw GenerationError("fact references unknown entity or relation");
      if (!seen.insert(key(f.head, f.relation)).second)
        throw GenerationError("fact base violates functional relations");
      if (id < facts_.size()) chain_edges_.emplace(key(f.head, f.relation), id);
    }
  }

  std::vector<Entity> entities_;
  std::vector<Relation> relations_;
  std::vector<Fact> facts_;
  std::vector<Fact> distractors_;
  std::uint64_t seed_ = 0;
  std::unordered_map<std::string, std::size_t> entity_index_;
  std::unordered_map<std::string, std::size_t> relation_index_;
  std::unordered_map<std::uint64_t, std::size_t> chain_edges_;
};

/// A templated multi-hop question. The gold answer is only reachable through
/// gold_answer(), which is counted by GoldAccessAudit.
class Question {
 public:
  Question() = default;
  Question(std::size_t id, Tokens tokens, std::vector<std::size_t> chain, std::size_t anchor,
           std::size_t answer)
      : id(id), tokens(std::move(tokens)), chain(std::move(chain)), anchor(anchor), answer_(answer) {}

  std::size_t id = 0;
  Tokens tokens;
  std::vector<std::size_t> chain;  // relation ids, first hop first
  std::size_t anchor = 0;

  int hops() const { return static_cast<int>(chain.size()); }

  std::size_t gold_answer() const {
    GoldAccessAudit::instance().record();
    return answer_;
  }

 private:
  std::size_t answer_ = 0;
};

/// "what is the r_h of the r_{h-1} of ... the r_1 of <anchor>"
inline Tokens render_question(std::string_view anchor, const std::vector<std::string>& relations_first_hop_first) {
  Tokens t{"what", "is"};
  for (auto it = relations_first_hop_first.rbegin(); it != relations_first_hop_first.rend(); ++it) {
    t.emplace_back("the");
    t.push_back(*it);
    t.emplace_back("of");
  }
  t.emplace_back(anchor);
  return t;
}

inline Tokens render_question(const KnowledgeBase& kb, std::size_t anchor, const std::vector<std::size_t>& chain) {
  std::vector<std::string> rels;
  for (auto r : chain) rels.push_back(kb.relation(r).surface);
  return render_question(kb.entity(anchor).surface, rels);
}

/// True when the surfaces differ by exactly one insertion, deletion or substitution.
inline bool lexically_similar(std::string_view a, std::string_view b) {
  if (a == b) return false;
  if (a.size() > b.size()) std::swap(a, b);
  if (b.size() - a.size() > 1) return false;
  std::size_t i = 0;
  while (i < a.size() && a[i] == b[i]) ++i;
  if (a.size() == b.size()) return a.substr(i + 1) == b.substr(i + 1);
  return a.substr(i) == b.substr(i + 1);
}

namespace detail {

inline const std::vector<std::string>& relation_names() {
  static const std::vector<std::string> names{
      "directed-by", "born-in",   "located-in", "member-of", "founded-by", "capital-of",
      "composed-by", "spouse-of", "part-of",    "county-of", "child-of",   "award-of"};
  return names;
}

inline std::string make_stem(Rng& rng) {
  static constexpr std::string_view kConsonants = "bdfgklmnprstvwz";
  static constexpr std::string_view kVowels = "aeiou";
  const std::size_t syllables = 2 + rng.index(2);
  std::string s;
  for (std::size_t i = 0; i < syllables; ++i) {
    s.push_back(kConsonants[rng.index(kConsonants.size())]);
    s.push_back(kVowels[rng.index(kVowels.size())]);
  }
  return s;
}

}  // namespace detail

/// Builds a deterministic world. Entities come in lexically similar pairs
/// (stem, stem + letter) so that near-miss retrievals exist.
inline KnowledgeBase generate_world(const WorldConfig& config) {
  config.validate();
  Rng rng(derive_seed({config.seed, 0x776f726cULL}));

  std::vector<Entity> entities;
  std::set<std::string> used;
  for (int i = 0; i < config.n_entities; ++i) {
    std::string surface;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw GenerationError("could not generate unique entity surfaces");
      if (i % 2 == 1 && attempt < 32) {
        static constexpr std::string_view kSuffix = "nrs";
        surface = entities.back().surface + kSuffix[rng.index(kSuffix.size())];
      } else {
        surface = detail::make_stem(rng);
      }
      if (!used.count(surface) && !is_template_word(surface)) break;
    }
    used.insert(surface);
    entities.push_back(Entity{static_cast<std::size_t>(i), surface, static_cast<EntityTag>(rng.index(4))});
  }

  std::vector<Relation> relations;
  const auto& names = detail::relation_names();
  for (int r = 0; r < config.n_relations; ++r) {
    std::string surface = static_cast<std::size_t>(r) < names.size() ? names[static_cast<std::size_t>(r)]
                                                                     : "relation-" + std::to_string(r);
    relations.push_back(Relation{static_cast<std::size_t>(r), surface});
  }

  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (int h = 0; h < config.n_entities; ++h)
    for (int r = 0; r < config.n_relations; ++r)
      slots.emplace_back(static_cast<std::size_t>(h), static_cast<std::size_t>(r));
  rng.shuffle(slots);

  std::vector<Fact> facts, distractors;
  const auto n_entities = static_cast<std::size_t>(config.n_entities);
  for (int i = 0; i < config.n_facts + config.n_distractors; ++i) {
    auto [head, rel] = slots[static_cast<std::size_t>(i)];
    std::size_t tail = rng.index(n_entities - 1);
    if (tail >= head) ++tail;
    (i < config.n_facts ? facts : distractors).push_back(Fact{head, rel, tail});
  }
  auto by_head = [](const Fact& a, const Fact& b) { return a < b; };
  std::sort(facts.begin(), facts.end(), by_head);
  std::sort(distractors.begin(), distractors.end(), by_head);

  return KnowledgeBase(std::move(entities), std::move(relations), std::move(facts), std::move(distractors),
                       config.seed);
}

struct Chain {
  std::size_t anchor = 0;
  std::vector<std::size_t> relations;
  std::vector<std::size_t> entities;  // anchor first, answer last
};

/// All chains of `hops` chain facts with pairwise distinct entities and relations.
inline std::vector<Chain> enumerate_chains(const KnowledgeBase& kb, int hops) {
  std::vector<Chain> out;
  Chain cur;
  auto dfs = [&](auto&& self, std::size_t at) -> void {
    if (static_cast<int>(cur.relations.size()) == hops) {
      out.push_back(cur);
      return;
    }
    for (const Fact& f : kb.outgoing(at)) {
      if (std::find(cur.relations.begin(), cur.relations.end(), f.relation) != cur.relations.end()) continue;
      if (std::find(cur.entities.begin(), cur.entities.end(), f.tail) != cur.entities.end()) continue;
      cur.relations.push_back(f.relation);
      cur.entities.push_back(f.tail);
      self(self, f.tail);
      cur.relations.pop_back();
      cur.entities.pop_back();
    }
  };
  for (const auto& e : kb.entities()) {
    cur = Chain{e.id, {}, {e.id}};
    dfs(dfs, e.id);
  }
  return out;
}

inline Question make_question(const KnowledgeBase& kb, std::size_t id, const Chain& chain) {
  return Question(id, render_question(kb, chain.anchor, chain.relations), chain.relations, chain.anchor,
                  chain.entities.back());
}

/// Samples `count` questions (distinct chains while they last) of
/// config.hops hops. `stream` separates independent draws from one world.
inline std::vector<Question> generate_questions(const KnowledgeBase& kb, const WorldConfig& config, int count,
                                                std::uint64_t stream = 0) {
  auto chains = enumerate_chains(kb, config.hops);
  if (chains.empty())
    throw GenerationError("no chain of " + std::to_string(config.hops) + " hops exists in the knowledge base");
  Rng rng(derive_seed({config.seed, 0x71756573ULL, stream}));
  rng.shuffle(chains);
  std::vector<Question> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(make_question(kb, static_cast<std::size_t>(i), chains[static_cast<std::size_t>(i) % chains.size()]));
  return out;
}

inline std::vector<Question> generate_questions(const KnowledgeBase& kb, const WorldConfig& config) {
  return generate_questions(kb, config, config.n_questions);
}

struct Snippet {
  std::size_t fact_id = 0;
  Fact fact;
  Tokens text;
  double score = 0.0;

  friend bool operator==(const Snippet&, const Snippet&) = default;
};

/// Number of query tokens (with multiplicity) that occur in the snippet text.
inline double overlap_score(const Tokens& query, const Tokens& text) {
  double s = 0;
  for (const auto& q : query)
    if (contains_token(text, q)) s += 1;
  return s;
}

inline Snippet make_snippet(const KnowledgeBase& kb, std::size_t fact_id, const Tokens& query) {
  const Fact& f = kb.corpus_fact(fact_id);
  Tokens text = kb.render(f);
  const double score = overlap_score(query, text);
  return Snippet{fact_id, f, std::move(text), score};
}

/// Top-k corpus snippets by token overlap; ties go to the lower fact id and
/// zero-score snippets are dropped.
inline std::vector<Snippet> retrieve(const KnowledgeBase& kb, const Tokens& query, int k,
                                     bool distractors_only = false) {
  if (k < 1) throw ContractError("retrieve: k must be at least 1");
  std::vector<Snippet> scored;
  for (std::size_t id = distractors_only ? kb.facts().size() : 0; id < kb.corpus_size(); ++id) {
    Snippet s = make_snippet(kb, id, query);
    if (s.score > 0) scored.push_back(std::move(s));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Snippet& a, const Snippet& b) { return a.score > b.score; });
  if (scored.size() > static_cast<std::size_t>(k)) scored.resize(static_cast<std::size_t>(k));
  return scored;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON persistence.
// ---------------------------------------------------------------------------
inline constexpr int kSchemaVersion = 1;

inline void write_kb_jsonl(std::ostream& os, const KnowledgeBase& kb) {
  using nlohmann::json;
  os << json{{"schema", "ccs.kb"}, {"version", kSchemaVersion}, {"seed", kb.seed()}}.dump() << '\n';
  for (const auto& e : kb.entities())
    os << json{{"kind", "entity"}, {"id", e.id}, {"surface", e.surface}, {"tag", std::string(tag_name(e.tag))}}.dump()
       << '\n';
  for (const auto& r : kb.relations())
    os << json{{"kind", "relation"}, {"id", r.id}, {"surface", r.surface}}.dump() << '\n';
  for (std::size_t id = 0; id < kb.corpus_size(); ++id) {
    const Fact& f = kb.corpus_fact(id);
    os << json{{"kind", "fact"},       {"id", id},        {"head", f.head}, {"relation", f.relation},
               {"tail", f.tail},       {"distractor", kb.is_distractor(id)}}
              .dump()
       << '\n';
  }
}

inline std::string kb_to_string(const KnowledgeBase& kb) {
  std::ostringstream os;
  write_kb_jsonl(os, kb);
  return os.str();
}

inline std::string world_hash(const KnowledgeBase& kb) { return hex64(fnv1a64(kb_to_string(kb))); }

inline nlohmann::json parse_json_line(const std::string& line, std::size_t line_no) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
  }
}

inline void expect_header(const nlohmann::json& j, std::string_view schema) {
  if (!j.is_object() || j.value("schema", "") != schema)
    throw ParseError("expected header for schema " + std::string(schema));
  if (j.value("version", 0) != kSchemaVersion)
    throw ParseError("unsupported " + std::string(schema) + " version " + std::to_string(j.value("version", 0)));
}

inline KnowledgeBase read_kb_jsonl(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw ParseError("empty knowledge base file");
  ++line_no;
  auto header = parse_json_line(line, line_no);
  expect_header(header, "ccs.kb");
  std::vector<Entity> entities;
  std::vector<Relation> relations;
  std::vector<Fact> facts, distractors;
  try {
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto j = parse_json_line(line, line_no);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "entity") {
        auto tag = parse_tag_name(j.at("tag").get<std::string>());
        if (!tag) throw ParseError("line " + std::to_string(line_no) + ": unknown tag");
        entities.push_back(Entity{j.at("id").get<std::size_t>(), j.at("surface").get<std::string>(), *tag});
      } else if (kind == "relation") {
        relations.push_back(Relation{j.at("id").get<std::size_t>(), j.at("surface").get<std::string>()});
      } else if (kind == "fact") {
        Fact f{j.at("head").get<std::size_t>(), j.at("relation").get<std::size_t>(), j.at("tail").get<std::size_t>()};
        (j.at("distractor").get<bool>() ? distractors : facts).push_back(f);
      } else {
        throw ParseError("line " + std::to_string(line_no) + ": unknown record kind " + kind);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
  }
  return KnowledgeBase(std::move(entities), std::move(relations), std::move(facts), std::move(distractors),
                       header.at("seed").get<std::uint64_t>());
}

inline nlohmann::json question_to_json(const Question& q) {
  return nlohmann::json{{"id", q.id},         {"tokens", q.tokens},          {"chain", q.chain},
                        {"anchor", q.anchor}, {"answer", q.gold_answer()},   {"hops", q.hops()}};
}

inline Question question_from_json(const nlohmann::json& j) {
  return Question(j.at("id").get<std::size_t>(), j.at("tokens").get<Tokens>(),
                  j.at("chain").get<std::vector<std::size_t>>(), j.at("anchor").get<std::size_t>(),
                  j.at("answer").get<std::size_t>());
}

/// Writes questions; `split` tags each record (e.g. "train" / "eval") when non-empty.
inline void write_questions_jsonl(std::ostream& os, const std::vector<Question>& qs, std::string_view split = {}) {
  for (const auto& q : qs) {
    auto j = question_to_json(q);
    if (!split.empty()) j["split"] = std::string(split);
    os << j.dump() << '\n';
  }
}

inline void write_questions_header(std::ostream& os) {
  os << nlohmann::json{{"schema", "ccs.questions"}, {"version", kSchemaVersion}}.dump() << '\n';
}

/// Reads a question file; returns records grouped by split ("" when untagged).
inline std::map<std::string, std::vector<Question>> read_questions_jsonl(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw ParseError("empty question file");
  ++line_no;
  expect_header(parse_json_line(line, line_no), "ccs.questions");
  std::map<std::string, std::vector<Question>> out;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto j = parse_json_line(line, line_no);
    try {
      out[j.value("split", "")].push_back(question_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ccs
