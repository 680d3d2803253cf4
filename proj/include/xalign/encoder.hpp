#pragma once

// Toy multimodal encoder: a shared embedding table, additive modality tag
// vectors and one LoRA-adapted multi-head self-attention layer with residual.
// There is no positional encoding; memes are treated as bags of tokens/tags.

#include <algorithm>
#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "xalign/attention.hpp"
#include "xalign/knowledge.hpp"
#include "xalign/lora.hpp"
#include "xalign/numerics.hpp"
#include "xalign/record.hpp"
#include "xalign/text.hpp"

namespace xalign {

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kNoKnowledge = 2;
  static constexpr std::array<std::string_view, 3> kSpecials = {"<pad>", "<unk>", "<no_knowledge>"};

  Vocab() : Vocab(std::vector<std::string>{}) {}

  // Specials first, then the given tokens sorted and deduplicated.
  explicit Vocab(std::vector<std::string> tokens) {
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (auto s : kSpecials) add(std::string(s));
    for (auto& t : tokens) {
      if (!index_.count(t)) add(std::move(t));
    }
  }

  // Restores a serialized vocabulary verbatim (indices preserved).
  static Vocab from_list(const std::vector<std::string>& tokens) {
    Vocab v(std::vector<std::string>{});
    if (tokens.size() < kSpecials.size() ||
        !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin())) {
      throw DataError("vocabulary does not start with the special tokens");
    }
    v.tokens_.clear();
    v.index_.clear();
    for (const auto& t : tokens) {
      if (v.index_.count(t)) throw DataError("duplicate vocabulary entry '" + t + "'");
      v.add(t);
    }
    return v;
  }

  // Expects an already normalized token.
  std::size_t index(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void add(std::string t) {
    index_.emplace(t, tokens_.size());
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Corpus tokens and tags plus the words of every linearized knowledge triple.
inline Vocab build_vocab(const std::vector<MemeRecord>& records, const KnowledgeBase& kb) {
  std::vector<std::string> tokens;
  for (const auto& r : records) {
    for (auto& t : normalize_tokens(r.text_tokens)) tokens.push_back(std::move(t));
    for (auto& t : normalize_tokens(r.image_tags)) tokens.push_back(std::move(t));
  }
  for (const auto& t : kb.triples()) {
    for (auto& w : word_tokens(linearize(t))) tokens.push_back(std::move(w));
  }
  return Vocab(std::move(tokens));
}

enum class TokenType { text = 0, image = 1, knowledge = 2 };

struct EncoderParams {
  Matrix embeddings;  // V x d
  Matrix type_tags;   // 3 x d, rows indexed by TokenType
  std::array<AdaptedMatrix, 4> self_attn;  // q, k, v, o
  std::size_t heads = 8;

  std::size_t dim() const { return embeddings.cols(); }

  Projections effective() const {
    return {self_attn[0].effective(), self_attn[1].effective(), self_attn[2].effective(),
            self_attn[3].effective()};
  }

  bool operator==(const EncoderParams&) const = default;
};

struct MemeTokens {
  std::vector<std::size_t> ids;
  std::size_t n_text = 0;  // the first n_text ids are text tokens, the rest image tags
};

inline MemeTokens tokenize_meme(const MemeRecord& record, const Vocab& vocab) {
  MemeTokens out;
  for (const auto& t : normalize_tokens(record.text_tokens)) out.ids.push_back(vocab.index(t));
  out.n_text = out.ids.size();
  for (const auto& t : normalize_tokens(record.image_tags)) out.ids.push_back(vocab.index(t));
  return out;
}

struct KnowledgeTokens {
  std::vector<std::vector<std::size_t>> fact_ids;
  std::vector<double> weights;
};

inline KnowledgeTokens tokenize_knowledge(const KnowledgeContext& ctx, const Vocab& vocab) {
  KnowledgeTokens out;
  for (std::size_t i = 0; i < ctx.facts.size(); ++i) {
    std::vector<std::size_t> ids;
    for (const auto& w : word_tokens(ctx.linearized[i])) ids.push_back(vocab.index(w));
    if (ids.empty()) ids.push_back(Vocab::kUnk);
    out.fact_ids.push_back(std::move(ids));
    out.weights.push_back(ctx.facts[i].weight);
  }
  return out;
}

inline Matrix embed_meme(const MemeTokens& tokens, const EncoderParams& p) {
  if (tokens.ids.empty()) throw DataError("encode_meme: record has no tokens or tags");
  const std::size_t d = p.dim();
  Matrix x(tokens.ids.size(), d);
  for (std::size_t l = 0; l < tokens.ids.size(); ++l) {
    const auto emb = p.embeddings.row(tokens.ids[l]);
    const auto tag = p.type_tags.row(l < tokens.n_text ? 0 : 1);
    auto row = x.row(l);
    for (std::size_t c = 0; c < d; ++c) row[c] = emb[c] + tag[c];
  }
  return x;
}

struct MemeTrace {
  Matrix x0;
  AttentionTrace attn;
};

// h_mm = X0 + SelfAttn(X0), L = #tokens + #tags.
inline Matrix encode_meme(const MemeTokens& tokens, const EncoderParams& p, const Projections& w,
                          MemeTrace* trace = nullptr) {
  Matrix x0 = embed_meme(tokens, p);
  AttentionTrace attn;
  Matrix h = multi_head_attention(x0, x0, w, p.heads, trace ? &attn : nullptr);
  add_scaled(h, x0);
  if (trace) {
    trace->x0 = std::move(x0);
    trace->attn = std::move(attn);
  }
  return h;
}

inline Matrix encode_meme(const MemeRecord& record, const Vocab& vocab, const EncoderParams& p) {
  return encode_meme(tokenize_meme(record, vocab), p, p.effective());
}

// One row per fact: weight * mean(token embeddings) + knowledge tag. An empty
// context yields the single NO_KNOWLEDGE row.
inline Matrix encode_knowledge(const KnowledgeTokens& k, const EncoderParams& p) {
  const std::size_t d = p.dim();
  const auto tag = p.type_tags.row(static_cast<std::size_t>(TokenType::knowledge));
  if (k.fact_ids.empty()) {
    Matrix m(1, d);
    const auto emb = p.embeddings.row(Vocab::kNoKnowledge);
    for (std::size_t c = 0; c < d; ++c) m(0, c) = emb[c] + tag[c];
    return m;
  }
  Matrix m(k.fact_ids.size(), d);
  for (std::size_t f = 0; f < k.fact_ids.size(); ++f) {
    auto row = m.row(f);
    const double scale = k.weights[f] / static_cast<double>(k.fact_ids[f].size());
    for (std::size_t id : k.fact_ids[f]) {
      const auto emb = p.embeddings.row(id);
      for (std::size_t c = 0; c < d; ++c) row[c] += scale * emb[c];
    }
    for (std::size_t c = 0; c < d; ++c) row[c] += tag[c];
  }
  return m;
}

inline Matrix encode_knowledge(const KnowledgeContext& ctx, const Vocab& vocab,
                               const EncoderParams& p) {
  return encode_knowledge(tokenize_knowledge(ctx, vocab), p);
}

inline Matrix zeros_like(const Matrix& m) { return Matrix(m.rows(), m.cols()); }

inline AdaptedMatrix zeros_like(const AdaptedMatrix& m) {
  return {zeros_like(m.base), {m.lora.target, zeros_like(m.lora.a), zeros_like(m.lora.b), m.lora.alpha}};
}

inline EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams g;
  g.embeddings = zeros_like(p.embeddings);
  g.type_tags = zeros_like(p.type_tags);
  for (std::size_t i = 0; i < 4; ++i) g.self_attn[i] = zeros_like(p.self_attn[i]);
  g.heads = p.heads;
  return g;
}

// Accumulates dL/dW' into the base slot only. The LoRA factor gradients are
// linear in dW', so they are derived once from the summed slot by
// lora_grads_from_base.
inline void accumulate_adapted(const Matrix& d_effective, AdaptedMatrix& grad) {
  add_scaled(grad.base, d_effective);
}

inline void accumulate_projections(const Projections& d, std::array<AdaptedMatrix, 4>& grads) {
  accumulate_adapted(d.q, grads[0]);
  accumulate_adapted(d.k, grads[1]);
  accumulate_adapted(d.v, grads[2]);
  accumulate_adapted(d.o, grads[3]);
}

// grad.lora += chain rule through W' = W + alpha B A, using grad.base as dL/dW'.
inline void lora_grads_from_base(const std::array<AdaptedMatrix, 4>& params,
                                 std::array<AdaptedMatrix, 4>& grads) {
  for (std::size_t i = 0; i < 4; ++i) {
    lora_backward(params[i].lora, grads[i].base, grads[i].lora.a, grads[i].lora.b);
  }
}

// Backward of encode_meme; d_h is dL/dh_mm.
inline void encode_meme_backward(const MemeTokens& tokens, const EncoderParams& p,
                                 const Projections& w, const MemeTrace& trace, const Matrix& d_h,
                                 EncoderParams& grad) {
  AttentionGrads ag = multi_head_attention_backward(trace.x0, trace.x0, w, p.heads, trace.attn, d_h);
  accumulate_projections(ag.d_w, grad.self_attn);
  Matrix d_x0 = d_h;
  add_scaled(d_x0, ag.d_queries);
  add_scaled(d_x0, ag.d_keys_values);
  for (std::size_t l = 0; l < tokens.ids.size(); ++l) {
    const auto dr = d_x0.row(l);
    auto de = grad.embeddings.row(tokens.ids[l]);
    auto dt = grad.type_tags.row(l < tokens.n_text ? 0 : 1);
    for (std::size_t c = 0; c < dr.size(); ++c) {
      de[c] += dr[c];
      dt[c] += dr[c];
    }
  }
}

inline void encode_knowledge_backward(const KnowledgeTokens& k, const Matrix& d_m,
                                      EncoderParams& grad) {
  auto dt = grad.type_tags.row(static_cast<std::size_t>(TokenType::knowledge));
  if (k.fact_ids.empty()) {
    auto de = grad.embeddings.row(Vocab::kNoKnowledge);
    for (std::size_t c = 0; c < dt.size(); ++c) {
      de[c] += d_m(0, c);
      dt[c] += d_m(0, c);
    }
    return;
  }
  for (std::size_t f = 0; f < k.fact_ids.size(); ++f) {
    const auto dr = d_m.row(f);
    const double scale = k.weights[f] / static_cast<double>(k.fact_ids[f].size());
    for (std::size_t id : k.fact_ids[f]) {
      auto de = grad.embeddings.row(id);
      for (std::size_t c = 0; c < dr.size(); ++c) de[c] += scale * dr[c];
    }
    for (std::size_t c = 0; c < dr.size(); ++c) dt[c] += dr[c];
  }
}

}  // namespace xalign
