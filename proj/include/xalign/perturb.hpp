#pragma once

// Robustness perturbations over records:
//   text_masking          replace ceil(0.2 n) seeded-random caption tokens with [MASK]
//   image_cropping        drop the last ceil(0.25 k) image tags (tags carry no geometry,
//                         so the tail of the list stands in for the periphery)
//   synonym_substitution  swap caption tokens outside gazetteer matches via the synonym table
//   symbol_substitution   swap gazetteer-matched image symbols via the benign-icon map

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "xalign/knowledge.hpp"
#include "xalign/numerics.hpp"
#include "xalign/record.hpp"

namespace xalign {

inline constexpr std::string_view kMaskToken = "[MASK]";

enum class PerturbationKind { text_masking, image_cropping, synonym_substitution, symbol_substitution };

inline std::string_view perturbation_name(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::text_masking: return "text_masking";
    case PerturbationKind::image_cropping: return "image_cropping";
    case PerturbationKind::synonym_substitution: return "synonym_substitution";
    case PerturbationKind::symbol_substitution: return "symbol_substitution";
  }
  return "unknown";
}

inline PerturbationKind parse_perturbation(std::string_view s) {
  for (auto k : {PerturbationKind::text_masking, PerturbationKind::image_cropping,
                 PerturbationKind::synonym_substitution, PerturbationKind::symbol_substitution}) {
    if (perturbation_name(k) == s) return k;
  }
  throw UsageError("unknown perturbation kind '" + std::string(s) + "'");
}

struct PerturbationResources {
  std::map<std::string, std::string> synonyms;    // normalized token -> synonym
  std::map<std::string, std::string> symbol_map;  // entity id -> benign icon tag
};

inline std::map<std::string, std::string> parse_two_column_tsv(std::string_view text,
                                                               std::string_view what) {
  std::map<std::string, std::string> out;
  detail::for_each_tsv_row(text, [&](std::size_t line, const std::vector<std::string>& f) {
    if (f.size() != 2 || f[0].empty() || f[1].empty()) {
      throw DataError(std::string(what) + " line " + std::to_string(line) + ": expected two fields");
    }
    if (!out.emplace(normalize_text(f[0]), f[1]).second) {
      throw DataError(std::string(what) + " line " + std::to_string(line) + ": duplicate key");
    }
  });
  return out;
}

// Reads synonyms.tsv and symbol_map.tsv from a knowledge snapshot directory.
inline PerturbationResources load_perturbation_resources(const std::filesystem::path& dir) {
  return {parse_two_column_tsv(detail::read_file(dir / "synonyms.tsv"), "synonyms"),
          parse_two_column_tsv(detail::read_file(dir / "symbol_map.tsv"), "symbol_map")};
}

inline std::size_t masked_token_count(std::size_t n) { return (n + 4) / 5; }   // ceil(0.2 n)
inline std::size_t cropped_tag_count(std::size_t k) { return (k + 3) / 4; }    // ceil(0.25 k)

// The label field is never touched; the id gets the kind appended.
inline MemeRecord perturb(const MemeRecord& record, PerturbationKind kind, std::uint64_t seed,
                          const KnowledgeBase& kb, const PerturbationResources& res) {
  MemeRecord out = record;
  out.id = record.id + "-" + std::string(perturbation_name(kind));
  switch (kind) {
    case PerturbationKind::text_masking: {
      // Stream depends on the seed and the record id only.
      Rng rng(derive_seed(seed, detail::fnv1a(detail::kFnvOffset, record.id)));
      const std::size_t n = out.text_tokens.size();
      std::vector<std::size_t> positions(n);
      for (std::size_t i = 0; i < n; ++i) positions[i] = i;
      const std::size_t k = masked_token_count(n);
      for (std::size_t i = 0; i < k; ++i) {
        std::swap(positions[i], positions[i + rng.below(n - i)]);
        out.text_tokens[positions[i]] = std::string(kMaskToken);
      }
      break;
    }
    case PerturbationKind::image_cropping: {
      std::size_t drop = cropped_tag_count(out.image_tags.size());
      // Never produce a record with neither text nor tags.
      if (out.text_tokens.empty() && drop == out.image_tags.size() && drop > 0) --drop;
      out.image_tags.resize(out.image_tags.size() - drop);
      break;
    }
    case PerturbationKind::synonym_substitution: {
      std::set<std::size_t> protected_positions;
      for (const auto& link : extract_entities(record, kb)) {
        if (link.modality != Modality::text) continue;
        for (std::size_t i = 0; i < link.length; ++i) protected_positions.insert(link.start + i);
      }
      for (std::size_t i = 0; i < out.text_tokens.size(); ++i) {
        if (protected_positions.count(i)) continue;
        const auto it = res.synonyms.find(normalize_text(out.text_tokens[i]));
        if (it != res.synonyms.end()) out.text_tokens[i] = it->second;
      }
      break;
    }
    case PerturbationKind::symbol_substitution: {
      std::vector<std::string> tags;
      std::size_t next = 0;
      for (const auto& link : extract_entities(record, kb)) {
        if (link.modality != Modality::image) continue;
        const auto it = res.symbol_map.find(link.entity_id);
        if (it == res.symbol_map.end()) continue;
        for (; next < link.start; ++next) tags.push_back(record.image_tags[next]);
        tags.push_back(it->second);
        next = link.start + link.length;
      }
      for (; next < record.image_tags.size(); ++next) tags.push_back(record.image_tags[next]);
      out.image_tags = std::move(tags);
      break;
    }
  }
  return out;
}

}  // namespace xalign
