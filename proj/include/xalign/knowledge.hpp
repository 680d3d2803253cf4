#pragma once

// Local knowledge snapshots (ConceptNet / Wikidata / Hatebase stand-ins),
// gazetteer entity linking, per-source retrieval with a lookup cache, fact
// linearization and source-weighted cultural relatedness.
//
// Snapshot directory layout (UTF-8 TSV, '#' starts a comment line):
//   triples.tsv    source  head_id  head_label  relation  tail  snippet
//   gazetteer.tsv  surface  entity_id  [symbol_tag]
//   weights.tsv    source  weight        (optional; defaults 0.3/0.4/0.3)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xalign/errors.hpp"
#include "xalign/record.hpp"
#include "xalign/text.hpp"

namespace xalign {

enum class Source { conceptnet = 0, wikidata = 1, hatebase = 2 };

inline constexpr std::array<Source, 3> kAllSources = {Source::conceptnet, Source::wikidata,
                                                      Source::hatebase};

inline std::string_view source_name(Source s) {
  switch (s) {
    case Source::conceptnet: return "conceptnet";
    case Source::wikidata: return "wikidata";
    case Source::hatebase: return "hatebase";
  }
  return "unknown";
}

inline std::optional<Source> parse_source(std::string_view s) {
  for (Source src : kAllSources) {
    if (source_name(src) == s) return src;
  }
  return std::nullopt;
}

struct Triple {
  Source source = Source::conceptnet;
  std::string head;
  std::string head_label;
  std::string relation;
  std::string tail;
  std::string snippet;

  bool operator==(const Triple&) const = default;
};

struct GazetteerEntry {
  std::string entity_id;
  std::optional<std::string> symbol_tag;
};

struct SourceWeights {
  double conceptnet = 0.3;
  double wikidata = 0.4;
  double hatebase = 0.3;

  double of(Source s) const {
    switch (s) {
      case Source::conceptnet: return conceptnet;
      case Source::wikidata: return wikidata;
      case Source::hatebase: return hatebase;
    }
    return 0.0;
  }
};

inline constexpr std::size_t kMaxSnippetChars = 200;

namespace detail {

inline std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(
      s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Calls fn(line_number, fields) for every non-blank, non-comment line.
template <typename Fn>
void for_each_tsv_row(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty() && line.front() != '#') fn(line_no, split_tabs(line));
    if (end == text.size()) break;
    start = end + 1;
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint64_t fnv1a(std::uint64_t state, std::string_view bytes) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 0x100000001b3ULL;
  }
  return state;
}

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

}  // namespace detail

// Immutable after construction.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  // Parses the three snapshot tables. weights_tsv may be empty (defaults).
  static KnowledgeBase parse(std::string_view triples_tsv, std::string_view gazetteer_tsv,
                             std::string_view weights_tsv = {}) {
    KnowledgeBase kb;
    detail::for_each_tsv_row(triples_tsv, [&](std::size_t line, const std::vector<std::string>& f) {
      auto fail = [&](const std::string& why) {
        throw DataError("triples line " + std::to_string(line) + ": " + why);
      };
      if (f.size() != 6) fail("expected 6 tab-separated fields, got " + std::to_string(f.size()));
      const auto src = parse_source(f[0]);
      if (!src) fail("unknown source '" + f[0] + "'");
      if (f[1].empty()) fail("empty head id");
      if (f[3].empty()) fail("empty relation");
      if (f[5].empty()) fail("empty snippet");
      if (detail::utf8_length(f[5]) > kMaxSnippetChars) fail("snippet longer than 200 characters");
      Triple t{*src, f[1], f[2].empty() ? f[1] : f[2], f[3], f[4], f[5]};
      kb.by_head_[t.head].push_back(kb.triples_.size());
      kb.triples_.push_back(std::move(t));
    });
    detail::for_each_tsv_row(gazetteer_tsv, [&](std::size_t line, const std::vector<std::string>& f) {
      auto fail = [&](const std::string& why) {
        throw DataError("gazetteer line " + std::to_string(line) + ": " + why);
      };
      if (f.size() < 2 || f.size() > 3) fail("expected 2 or 3 tab-separated fields");
      auto key = split_whitespace(normalize_text(f[0]));
      if (key.empty()) fail("empty surface form");
      if (f[1].empty()) fail("empty entity id");
      GazetteerEntry entry{f[1], std::nullopt};
      if (f.size() == 3 && !f[2].empty()) entry.symbol_tag = f[2];
      kb.max_surface_tokens_ = std::max(kb.max_surface_tokens_, key.size());
      if (!kb.gazetteer_.emplace(std::move(key), std::move(entry)).second) {
        fail("duplicate surface '" + f[0] + "'");
      }
    });
    if (!weights_tsv.empty()) {
      std::array<std::optional<double>, 3> seen;
      detail::for_each_tsv_row(weights_tsv, [&](std::size_t line, const std::vector<std::string>& f) {
        auto fail = [&](const std::string& why) {
          throw DataError("weights line " + std::to_string(line) + ": " + why);
        };
        if (f.size() != 2) fail("expected 'source<TAB>weight'");
        const auto src = parse_source(f[0]);
        if (!src) fail("unknown source '" + f[0] + "'");
        double w = 0.0;
        try {
          std::size_t used = 0;
          w = std::stod(f[1], &used);
          if (used != f[1].size()) fail("bad weight '" + f[1] + "'");
        } catch (const std::logic_error&) {
          fail("bad weight '" + f[1] + "'");
        }
        if (!(w >= 0.0) || !std::isfinite(w)) fail("weight must be a nonnegative number");
        seen[static_cast<int>(*src)] = w;
      });
      for (Source s : kAllSources) {
        if (!seen[static_cast<int>(s)]) {
          throw DataError("weights: missing weight for " + std::string(source_name(s)));
        }
      }
      kb.weights_ = {*seen[0], *seen[1], *seen[2]};
    }
    const double total = kb.weights_.conceptnet + kb.weights_.wikidata + kb.weights_.hatebase;
    if (std::abs(total - 1.0) > 1e-9) {
      throw DataError("source weights must sum to 1, got " + std::to_string(total));
    }
    std::uint64_t h = detail::fnv1a(detail::kFnvOffset, triples_tsv);
    h = detail::fnv1a(h, "\x1f");
    h = detail::fnv1a(h, gazetteer_tsv);
    h = detail::fnv1a(h, "\x1f");
    kb.hash_ = detail::fnv1a(h, weights_tsv);
    return kb;
  }

  const std::vector<Triple>& triples() const { return triples_; }
  const Triple& triple(std::size_t id) const { return triples_.at(id); }

  // Triple ids with this head entity, ascending.
  std::span<const std::size_t> triples_of(const std::string& entity_id) const {
    const auto it = by_head_.find(entity_id);
    if (it == by_head_.end()) return {};
    return it->second;
  }

  bool has_source(const std::string& entity_id, Source s) const {
    const auto ids = triples_of(entity_id);
    return std::any_of(ids.begin(), ids.end(), [&](std::size_t id) { return triples_[id].source == s; });
  }

  const GazetteerEntry* lookup(const std::vector<std::string>& surface) const {
    const auto it = gazetteer_.find(surface);
    return it == gazetteer_.end() ? nullptr : &it->second;
  }

  bool is_gazetteer_entity(const std::string& entity_id) const {
    return std::any_of(gazetteer_.begin(), gazetteer_.end(),
                       [&](const auto& kv) { return kv.second.entity_id == entity_id; });
  }

  const std::map<std::vector<std::string>, GazetteerEntry>& gazetteer() const { return gazetteer_; }
  std::size_t max_surface_tokens() const { return max_surface_tokens_; }
  const SourceWeights& weights() const { return weights_; }
  std::uint64_t hash() const { return hash_; }

  std::size_t count(Source s) const {
    return static_cast<std::size_t>(
        std::count_if(triples_.begin(), triples_.end(), [&](const Triple& t) { return t.source == s; }));
  }

 private:
  std::vector<Triple> triples_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_head_;
  std::map<std::vector<std::string>, GazetteerEntry> gazetteer_;
  std::size_t max_surface_tokens_ = 0;
  SourceWeights weights_;
  std::uint64_t hash_ = 0;
};

inline KnowledgeBase load_kb(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("knowledge snapshot directory not found: " + dir.string());
  }
  const auto weights_path = dir / "weights.tsv";
  const std::string weights =
      std::filesystem::exists(weights_path) ? detail::read_file(weights_path) : std::string();
  return KnowledgeBase::parse(detail::read_file(dir / "triples.tsv"),
                              detail::read_file(dir / "gazetteer.tsv"), weights);
}

// ---------------------------------------------------------------------------
// Entity extraction

enum class Modality { text, image };

inline std::string_view modality_name(Modality m) { return m == Modality::text ? "text" : "image"; }

struct EntityLink {
  Modality modality = Modality::text;
  std::size_t start = 0;
  std::size_t length = 0;
  std::string entity_id;
  std::optional<std::string> symbol_tag;
  std::string surface;  // matched normalized tokens joined by ' '

  bool operator==(const EntityLink&) const = default;
};

inline std::vector<std::string> normalize_tokens(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(normalize_text(t));
  return out;
}

namespace detail {

// Greedy left-to-right longest match; earlier start wins, then longer span.
inline void match_sequence(const std::vector<std::string>& tokens, Modality modality,
                           const KnowledgeBase& kb, std::vector<EntityLink>& out) {
  std::size_t i = 0;
  while (i < tokens.size()) {
    const std::size_t max_len = std::min(kb.max_surface_tokens(), tokens.size() - i);
    bool matched = false;
    for (std::size_t len = max_len; len >= 1; --len) {
      std::vector<std::string> span(tokens.begin() + i, tokens.begin() + i + len);
      if (const auto* entry = kb.lookup(span)) {
        out.push_back({modality, i, len, entry->entity_id, entry->symbol_tag, join(span, " ")});
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
}

}  // namespace detail

// Text tokens and image tags are normalized (NFC + lower-case) before
// matching. Text links precede image links.
inline std::vector<EntityLink> extract_entities(const MemeRecord& record, const KnowledgeBase& kb) {
  std::vector<EntityLink> links;
  detail::match_sequence(normalize_tokens(record.text_tokens), Modality::text, kb, links);
  detail::match_sequence(normalize_tokens(record.image_tags), Modality::image, kb, links);
  return links;
}

// ---------------------------------------------------------------------------
// Retrieval

inline constexpr std::size_t kDefaultCapPerSource = 4;

// Per-entity triple ids grouped by source and capped, ordered by triple id.
using EntityFacts = std::array<std::vector<std::size_t>, 3>;

// In-memory lookup cache keyed by entity id, no eviction. Not thread-safe:
// confine one instance to one worker.
class KnowledgeCache {
 public:
  explicit KnowledgeCache(std::size_t cap_per_source = kDefaultCapPerSource)
      : cap_(cap_per_source) {}

  const EntityFacts& get(const std::string& entity_id, const KnowledgeBase& kb) {
    if (const auto it = entries_.find(entity_id); it != entries_.end()) {
      ++hits_;
      return it->second;
    }
    ++misses_;
    EntityFacts facts;
    for (std::size_t id : kb.triples_of(entity_id)) {
      auto& bucket = facts[static_cast<int>(kb.triple(id).source)];
      if (bucket.size() < cap_) bucket.push_back(id);
    }
    return entries_.emplace(entity_id, std::move(facts)).first->second;
  }

  std::size_t cap_per_source() const { return cap_; }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  void clear() {
    entries_.clear();
    hits_ = misses_ = 0;
  }

 private:
  std::size_t cap_;
  std::unordered_map<std::string, EntityFacts> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct Fact {
  std::size_t triple_id = 0;
  Triple triple;
  double weight = 0.0;
  std::size_t link_index = 0;  // first link that retrieved this fact

  bool operator==(const Fact&) const = default;
};

struct KnowledgeContext {
  std::vector<EntityLink> links;
  std::vector<Fact> facts;
  std::vector<std::string> linearized;

  bool operator==(const KnowledgeContext&) const = default;
};

inline std::string_view relation_phrase(std::string_view relation) {
  static const std::map<std::string_view, std::string_view> kPhrases = {
      {"associated_with", "is associated with"},
      {"is_a", "is a"},
      {"instance_of", "is an instance of"},
      {"symbol_of", "is a symbol of"},
      {"used_by", "is used by"},
      {"used_for", "is used for"},
      {"related_to", "is related to"},
      {"part_of", "is part of"},
      {"derived_from", "is derived from"},
      {"depicts", "depicts"},
      {"targets", "targets"},
      {"means", "means"},
      {"has_property", "has the property"},
      {"synonym_of", "is a synonym of"},
  };
  const auto it = kPhrases.find(relation);
  return it == kPhrases.end() ? relation : it->second;
}

// "<head label> <relation phrase> <tail>." normalized to lower case.
inline std::string linearize(const Triple& t) {
  std::string s = t.head_label;
  s += ' ';
  s += relation_phrase(t.relation);
  if (!t.tail.empty()) {
    s += ' ';
    s += t.tail;
  }
  s += '.';
  return normalize_text(s);
}

inline KnowledgeContext retrieve_and_aggregate(const std::vector<EntityLink>& links,
                                               const KnowledgeBase& kb, KnowledgeCache& cache) {
  KnowledgeContext ctx;
  ctx.links = links;
  std::set<std::size_t> seen;
  for (std::size_t li = 0; li < links.size(); ++li) {
    const EntityFacts& facts = cache.get(links[li].entity_id, kb);
    for (Source s : kAllSources) {
      for (std::size_t id : facts[static_cast<int>(s)]) {
        if (!seen.insert(id).second) continue;
        const Triple& t = kb.triple(id);
        ctx.facts.push_back({id, t, kb.weights().of(s), li});
        ctx.linearized.push_back(linearize(t));
      }
    }
  }
  return ctx;
}

inline KnowledgeContext retrieve_and_aggregate(const std::vector<EntityLink>& links,
                                               const KnowledgeBase& kb) {
  KnowledgeCache cache;
  return retrieve_and_aggregate(links, kb, cache);
}

// Source-weighted Jaccard over linked entity ids. An entity counts toward
// source s when it has at least one triple from s.
inline double cult_rel(const std::vector<EntityLink>& a, const std::vector<EntityLink>& b,
                       const KnowledgeBase& kb) {
  double total = 0.0;
  for (Source s : kAllSources) {
    std::set<std::string> sa;
    std::set<std::string> sb;
    for (const auto& l : a) {
      if (kb.has_source(l.entity_id, s)) sa.insert(l.entity_id);
    }
    for (const auto& l : b) {
      if (kb.has_source(l.entity_id, s)) sb.insert(l.entity_id);
    }
    if (sa.empty() && sb.empty()) continue;
    std::size_t inter = 0;
    for (const auto& id : sa) inter += sb.count(id);
    const std::size_t uni = sa.size() + sb.size() - inter;
    total += kb.weights().of(s) * static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total;
}

}  // namespace xalign
