#pragma once

// Evidence tuples from linked facts and cross-attention salience, top-m
// evidence scoring, and template-constrained explanation text. Everything
// here is read-only over the model outputs; it never changes a prediction.

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xalign/encoder.hpp"
#include "xalign/fusion.hpp"
#include "xalign/knowledge.hpp"
#include "xalign/numerics.hpp"
#include "xalign/record.hpp"

namespace xalign {

struct EvidenceTuple {
  EntityLink entity;
  std::optional<std::string> symbol;
  std::string relation;
  std::string snippet;
  Triple triple;
  std::size_t fact_index = 0;  // row of M_K
  double salience = 0.0;

  bool operator==(const EvidenceTuple&) const = default;
};

// Row positions of a link inside h_mm (text tokens first, then image tags).
inline std::pair<std::size_t, std::size_t> link_rows(const EntityLink& link, std::size_t n_text) {
  const std::size_t start = link.modality == Modality::text ? link.start : n_text + link.start;
  return {start, start + link.length};
}

// salience(k) = mean over heads and over the query rows inside the fact's
// entity span of attention[head](row, k). The NO_KNOWLEDGE row yields nothing.
inline std::vector<EvidenceTuple> build_evidence(const KnowledgeContext& ctx,
                                                 const FusionOutput& fusion, std::size_t n_text) {
  std::vector<EvidenceTuple> out;
  if (ctx.facts.empty()) return out;
  if (fusion.attention.empty()) throw NumericError("build_evidence: no attention weights");
  for (const auto& a : fusion.attention) {
    if (a.cols() != ctx.facts.size()) {
      throw NumericError("build_evidence: attention is " + a.shape() + " but context has " +
                         std::to_string(ctx.facts.size()) + " facts");
    }
  }
  const std::size_t L = fusion.attention.front().rows();
  for (std::size_t k = 0; k < ctx.facts.size(); ++k) {
    const Fact& fact = ctx.facts[k];
    const EntityLink& link = ctx.links.at(fact.link_index);
    const auto [begin, end] = link_rows(link, n_text);
    if (end > L) throw NumericError("build_evidence: entity span exceeds sequence length");
    double sum = 0.0;
    for (const auto& a : fusion.attention) {
      for (std::size_t r = begin; r < end; ++r) sum += a(r, k);
    }
    const double salience =
        sum / static_cast<double>(fusion.attention.size() * std::max<std::size_t>(1, end - begin));
    out.push_back({link, link.symbol_tag, fact.triple.relation, fact.triple.snippet, fact.triple, k,
                   salience});
  }
  return out;
}

// Mean of the raw embedding rows covered by the entity span.
inline Vector entity_embedding(const EntityLink& link, const MemeTokens& tokens,
                               const Matrix& embeddings) {
  const auto [begin, end] = link_rows(link, tokens.n_text);
  Vector out(embeddings.cols(), 0.0);
  for (std::size_t r = begin; r < end; ++r) {
    const auto e = embeddings.row(tokens.ids.at(r));
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += e[c];
  }
  for (double& x : out) x /= static_cast<double>(end - begin);
  return out;
}

struct ReasoningStep {
  EvidenceTuple evidence;
  double score = 0.0;

  bool operator==(const ReasoningStep&) const = default;
};

struct ReasoningChain {
  std::vector<ReasoningStep> steps;  // top-m, descending score
  Vector all_scores;                 // softmax over every candidate, input order

  bool operator==(const ReasoningChain&) const = default;
};

// logit_i = W_r . [pool(h~); e_i; k_i]; scores = softmax(logits / tau); keep
// the m best with ties broken by entity id, then fact row.
inline ReasoningChain score_and_select(const std::vector<EvidenceTuple>& evidence,
                                       std::span<const double> pooled_h_tilde,
                                       const std::vector<Vector>& entity_embeddings,
                                       const Matrix& m_k, const Matrix& w_r, std::size_t m,
                                       double tau) {
  ReasoningChain chain;
  if (evidence.empty()) return chain;
  const std::size_t d = pooled_h_tilde.size();
  if (w_r.rows() != 1 || w_r.cols() != 3 * d) {
    throw NumericError("score_and_select: W_r is " + w_r.shape() + ", expected 1x" +
                       std::to_string(3 * d));
  }
  if (entity_embeddings.size() != evidence.size()) {
    throw NumericError("score_and_select: one entity embedding per evidence tuple required");
  }
  const auto w = w_r.row(0);
  Vector logits;
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    logits.push_back(dot(w.first(d), pooled_h_tilde) + dot(w.subspan(d, d), entity_embeddings[i]) +
                     dot(w.subspan(2 * d), m_k.row(evidence[i].fact_index)));
  }
  chain.all_scores = softmax(logits, tau);
  std::vector<std::size_t> order(evidence.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (chain.all_scores[a] != chain.all_scores[b]) return chain.all_scores[a] > chain.all_scores[b];
    if (evidence[a].entity.entity_id != evidence[b].entity.entity_id) {
      return evidence[a].entity.entity_id < evidence[b].entity.entity_id;
    }
    return evidence[a].fact_index < evidence[b].fact_index;
  });
  for (std::size_t i = 0; i < std::min(m, order.size()); ++i) {
    chain.steps.push_back({evidence[order[i]], chain.all_scores[order[i]]});
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Templates

// Versioned template table, one "id<TAB>pattern" per line. Slots are {name}.
inline constexpr std::string_view kBuiltinTemplates =
    "# explanation templates v1\n"
    "abusive_symbol_text\tDetected {entity} symbol linked to {group}; text phrase '{surface}' amplifies {harm}\n"
    "abusive_symbol_image\tDetected {entity} symbol linked to {group}; image phrase '{surface}' amplifies {harm}\n"
    "abusive_fact_text\tKnowledge links {entity} to {group} ({relation}); text phrase '{surface}' amplifies {harm}\n"
    "abusive_fact_image\tKnowledge links {entity} to {group} ({relation}); image phrase '{surface}' amplifies {harm}\n"
    "abusive_no_evidence\tPredicted abusive without retrievable knowledge evidence\n"
    "benign\tNo culturally harmful symbol or phrase detected; knowledge context does not indicate abuse\n"
    "also_step\t; also {snippet}\n";

class TemplateTable {
 public:
  static TemplateTable parse(std::string_view text) {
    TemplateTable t;
    detail::for_each_tsv_row(text, [&](std::size_t line, const std::vector<std::string>& f) {
      if (f.size() != 2 || f[0].empty() || f[1].empty()) {
        throw DataError("templates line " + std::to_string(line) + ": expected 'id<TAB>pattern'");
      }
      if (!t.patterns_.emplace(f[0], f[1]).second) {
        throw DataError("templates line " + std::to_string(line) + ": duplicate id '" + f[0] + "'");
      }
    });
    for (const char* id : {"abusive_symbol_text", "abusive_symbol_image", "abusive_fact_text",
                           "abusive_fact_image", "abusive_no_evidence", "benign", "also_step"}) {
      if (!t.patterns_.count(id)) throw DataError(std::string("templates: missing '") + id + "'");
    }
    return t;
  }

  static const TemplateTable& builtin() {
    static const TemplateTable table = parse(kBuiltinTemplates);
    return table;
  }

  static TemplateTable load(const std::filesystem::path& path) {
    return parse(detail::read_file(path));
  }

  const std::string& pattern(const std::string& id) const { return patterns_.at(id); }

  bool uses_slot(const std::string& id, const std::string& name) const {
    return pattern(id).find("{" + name + "}") != std::string::npos;
  }

  // Fills every {slot}; an unknown slot name is an error.
  std::string render(const std::string& id,
                     const std::vector<std::pair<std::string, std::string>>& slots) const {
    const std::string& p = pattern(id);
    std::string out;
    std::size_t i = 0;
    while (i < p.size()) {
      if (p[i] != '{') {
        out += p[i++];
        continue;
      }
      const auto close = p.find('}', i);
      if (close == std::string::npos) throw DataError("template '" + id + "': unterminated slot");
      const std::string name = p.substr(i + 1, close - i - 1);
      const auto it = std::find_if(slots.begin(), slots.end(),
                                   [&](const auto& kv) { return kv.first == name; });
      if (it == slots.end()) throw DataError("template '" + id + "': unfilled slot {" + name + "}");
      out += it->second;
      i = close + 1;
    }
    return out;
  }

 private:
  std::map<std::string, std::string> patterns_;
};

inline std::string_view harm_category(std::optional<Task> task) {
  if (!task) return "abuse";
  switch (*task) {
    case Task::harmfulness: return "harm";
    case Task::hatefulness: return "exclusion";
    case Task::misogyny: return "misogyny";
    case Task::offensiveness: return "offense";
    case Task::sarcasm: return "mockery";
  }
  return "abuse";
}

struct Slot {
  std::string name;
  std::string value;
  std::size_t step = 0;  // chain step the value was taken from

  bool operator==(const Slot&) const = default;
};

struct Explanation {
  std::string text;
  std::string template_id;
  ReasoningChain chain;
  int label = 0;
  double p_hat = 0.0;
  bool flagged = false;  // abusive prediction without evidence
  std::vector<Slot> slots;
};

namespace detail {

inline std::string strip_final_period(std::string s) {
  while (!s.empty() && (s.back() == '.' || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace detail

inline Explanation generate_explanation(const ReasoningChain& chain, int label, double p_hat,
                                        std::optional<Task> task,
                                        const TemplateTable& templates = TemplateTable::builtin()) {
  Explanation e;
  e.chain = chain;
  e.label = label;
  e.p_hat = p_hat;
  if (label == 0) {
    e.template_id = "benign";
    e.text = templates.render(e.template_id, {}) + ".";
    return e;
  }
  if (chain.steps.empty()) {
    e.template_id = "abusive_no_evidence";
    e.flagged = true;
    e.text = templates.render(e.template_id, {}) + ".";
    return e;
  }
  const EvidenceTuple& top = chain.steps.front().evidence;
  const bool image = top.entity.modality == Modality::image;
  e.template_id = std::string(top.symbol ? "abusive_symbol_" : "abusive_fact_") +
                  (image ? "image" : "text");
  const std::vector<Slot> candidates = {{"entity", normalize_text(top.triple.head_label), 0},
                                        {"group", top.triple.tail, 0},
                                        {"relation", std::string(relation_phrase(top.relation)), 0},
                                        {"surface", top.entity.surface, 0},
                                        {"harm", std::string(harm_category(task)), 0}};
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& s : candidates) {
    if (!templates.uses_slot(e.template_id, s.name)) continue;
    e.slots.push_back(s);
    kv.emplace_back(s.name, s.value);
  }
  e.text = templates.render(e.template_id, kv);
  for (std::size_t i = 1; i < chain.steps.size(); ++i) {
    const std::string snippet = detail::strip_final_period(chain.steps[i].evidence.snippet);
    e.slots.push_back({"snippet", snippet, i});
    e.text += templates.render("also_step", {{"snippet", snippet}});
  }
  e.text += ".";
  return e;
}

// Checks that every evidence-derived slot value appears in the text and comes
// from the chain step it cites, and that no placeholder survived rendering.
inline bool audit_explanation(const Explanation& e, std::string* why = nullptr) {
  auto fail = [&](std::string msg) {
    if (why) *why = std::move(msg);
    return false;
  };
  if (e.text.empty()) return fail("empty text");
  if (e.text.find('{') != std::string::npos || e.text.find('}') != std::string::npos) {
    return fail("unfilled placeholder in: " + e.text);
  }
  for (const auto& s : e.slots) {
    if (e.text.find(s.value) == std::string::npos) return fail("slot value missing from text: " + s.value);
    if (s.name == "harm") continue;
    if (s.step >= e.chain.steps.size()) return fail("slot cites a missing chain step");
    const EvidenceTuple& ev = e.chain.steps[s.step].evidence;
    bool ok = false;
    if (s.name == "entity") ok = s.value == normalize_text(ev.triple.head_label);
    else if (s.name == "group") ok = s.value == ev.triple.tail;
    else if (s.name == "relation") ok = s.value == relation_phrase(ev.relation);
    else if (s.name == "surface") ok = s.value == ev.entity.surface;
    else if (s.name == "snippet") ok = ev.snippet.rfind(s.value, 0) == 0;
    if (!ok) return fail("slot '" + s.name + "' value '" + s.value + "' not backed by evidence");
  }
  return true;
}

}  // namespace xalign
