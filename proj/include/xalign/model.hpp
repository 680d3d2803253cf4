#pragma once

// Full model: encoder -> gated knowledge fusion -> pooled sigmoid head, the
// combined objective L = L_cls + lambda * L_contrast with its hand-derived
// gradient, AdamW and the mini-batch training loop.

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "xalign/encoder.hpp"
#include "xalign/fusion.hpp"
#include "xalign/knowledge.hpp"
#include "xalign/lora.hpp"
#include "xalign/numerics.hpp"
#include "xalign/objectives.hpp"

namespace xalign {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 8;
  std::size_t rank = 16;
  double alpha = 32.0;

  bool operator==(const ModelConfig&) const = default;
};

enum class Ablation { none, stage1, stage2, stage3 };

inline std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::stage1: return "stage1";
    case Ablation::stage2: return "stage2";
    case Ablation::stage3: return "stage3";
  }
  return "none";
}

inline Ablation parse_ablation(std::string_view s) {
  for (Ablation a : {Ablation::none, Ablation::stage1, Ablation::stage2, Ablation::stage3}) {
    if (ablation_name(a) == s) return a;
  }
  throw UsageError("unknown ablation '" + std::string(s) + "' (expected stage1, stage2 or stage3)");
}

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  std::size_t epochs = 3;
  double margin = 0.2;     // delta
  double lambda = 0.5;     // contrastive weight in the total loss
  double lambda_s = 0.7;
  double lambda_c = 0.3;
  double tau = 0.07;       // evidence scoring temperature
  std::size_t top_m = 3;
  std::size_t batch_size = 8;
  std::size_t cap_per_source = kDefaultCapPerSource;
  std::uint64_t seed = 0;
  bool train_gate = false;
  bool train_embeddings = false;
  Ablation ablation = Ablation::none;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  ModelConfig model;

  void validate() const {
    if (std::abs(lambda_s + lambda_c - 1.0) > 1e-9) {
      throw UsageError("lambda_s + lambda_c must equal 1");
    }
    if (!(margin > 0.0)) throw UsageError("margin must be positive");
    if (!(lambda >= 0.0)) throw UsageError("lambda must be nonnegative");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw UsageError("lr and weight_decay must be >= 0");
    if (!(tau > 0.0)) throw UsageError("tau must be positive");
    if (batch_size == 0) throw UsageError("batch_size must be positive");
    if (model.rank == 0 || model.rank >= model.dim) throw UsageError("LoRA rank must satisfy 0 < r < d");
    if (model.heads == 0 || model.dim % model.heads != 0) {
      throw UsageError("dim " + std::to_string(model.dim) + " is not divisible by " +
                       std::to_string(model.heads) + " heads");
    }
  }

  // Contrastive weight after applying the Stage II ablation.
  double effective_lambda() const { return ablation == Ablation::stage2 ? 0.0 : lambda; }
  bool fusion_enabled() const { return ablation != Ablation::stage1; }

  bool operator==(const TrainConfig&) const = default;
};

struct ModelParams {
  EncoderParams encoder;
  FusionParams fusion;
  ClassifierHead head;
  Matrix reasoning;  // W_r, 1 x 3d

  std::size_t dim() const { return encoder.dim(); }

  bool operator==(const ModelParams&) const = default;
};

enum class ParamGroup { embedding, base, lora_a, lora_b, gate, head, reasoning };

namespace detail {

inline constexpr std::array<std::string_view, 4> kProjNames = {"q", "k", "v", "o"};

template <typename Params, typename Fn>
void for_each_adapted(Params& block, std::string_view prefix, Fn& fn) {
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string base = std::string(prefix) + "." + std::string(kProjNames[i]);
    fn(base + ".base", ParamGroup::base, block[i].base);
    fn(base + ".lora_a", ParamGroup::lora_a, block[i].lora.a);
    fn(base + ".lora_b", ParamGroup::lora_b, block[i].lora.b);
  }
}

}  // namespace detail

// Visits every tensor in a fixed order: fn(name, group, matrix). Works for
// const and mutable parameter sets; the order defines the checkpoint layout.
template <typename Params, typename Fn>
void for_each_param(Params& p, Fn&& fn) {
  fn(std::string("encoder.embeddings"), ParamGroup::embedding, p.encoder.embeddings);
  fn(std::string("encoder.type_tags"), ParamGroup::embedding, p.encoder.type_tags);
  detail::for_each_adapted(p.encoder.self_attn, "encoder.self_attn", fn);
  detail::for_each_adapted(p.fusion.cross_attn, "fusion.cross_attn", fn);
  fn(std::string("fusion.gate_weights"), ParamGroup::gate, p.fusion.gate_weights);
  fn(std::string("fusion.gate_bias"), ParamGroup::gate, p.fusion.gate_bias);
  fn(std::string("head.weights"), ParamGroup::head, p.head.weights);
  fn(std::string("head.bias"), ParamGroup::head, p.head.bias);
  fn(std::string("reasoning.weights"), ParamGroup::reasoning, p.reasoning);
}

inline std::vector<LoraAdapter> lora_adapters(const ModelParams& p) {
  std::vector<LoraAdapter> out;
  for (const auto& m : p.encoder.self_attn) out.push_back(m.lora);
  for (const auto& m : p.fusion.cross_attn) out.push_back(m.lora);
  return out;
}

inline std::size_t base_param_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_param(p, [&](const std::string&, ParamGroup g, const Matrix& m) {
    if (g != ParamGroup::lora_a && g != ParamGroup::lora_b) n += m.size();
  });
  return n;
}

// Embeddings and dense weights ~ U(-1/sqrt(d), 1/sqrt(d)); biases 0; LoRA B 0.
inline ModelParams init_model(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
  head_dim(cfg.dim, cfg.heads);
  const std::size_t d = cfg.dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(seed);
  ModelParams p;
  p.encoder.heads = p.fusion.heads = cfg.heads;
  p.encoder.embeddings = Matrix(vocab_size, d);
  rng.fill_uniform(p.encoder.embeddings, -bound, bound);
  p.encoder.type_tags = Matrix(3, d);
  rng.fill_uniform(p.encoder.type_tags, -bound, bound);
  for (auto* block : {&p.encoder.self_attn, &p.fusion.cross_attn}) {
    for (auto& m : *block) {
      m.base = Matrix(d, d);
      rng.fill_uniform(m.base, -bound, bound);
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    p.encoder.self_attn[i].lora =
        make_lora("encoder.self_attn." + std::string(detail::kProjNames[i]), d, cfg.rank, cfg.alpha, rng);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    p.fusion.cross_attn[i].lora =
        make_lora("fusion.cross_attn." + std::string(detail::kProjNames[i]), d, cfg.rank, cfg.alpha, rng);
  }
  p.fusion.gate_weights = Matrix(1, 2 * d);
  rng.fill_uniform(p.fusion.gate_weights, -bound, bound);
  p.fusion.gate_bias = Matrix(1, 1);
  p.head.weights = Matrix(1, d);
  rng.fill_uniform(p.head.weights, -bound, bound);
  p.head.bias = Matrix(1, 1);
  p.reasoning = Matrix(1, 3 * d);
  rng.fill_uniform(p.reasoning, -bound, bound);
  return p;
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams g;
  g.encoder = zeros_like(p.encoder);
  g.fusion = zeros_like(p.fusion);
  g.head = {zeros_like(p.head.weights), zeros_like(p.head.bias)};
  g.reasoning = zeros_like(p.reasoning);
  return g;
}

// a += b, tensor by tensor.
inline void add_params(ModelParams& a, const ModelParams& b) {
  std::vector<const Matrix*> src;
  for_each_param(b, [&](const std::string&, ParamGroup, const Matrix& m) { src.push_back(&m); });
  std::size_t i = 0;
  for_each_param(a, [&](const std::string&, ParamGroup, Matrix& m) { add_scaled(m, *src[i++]); });
}

// ---------------------------------------------------------------------------
// Prepared samples and forward pass

struct PreparedSample {
  std::string id;
  MemeTokens tokens;
  KnowledgeContext knowledge;
  KnowledgeTokens knowledge_tokens;
  int label = -1;  // -1 when unlabeled
};

inline PreparedSample prepare_sample(const MemeRecord& record, const Vocab& vocab,
                                     const KnowledgeBase& kb, KnowledgeCache& cache) {
  PreparedSample s;
  s.id = record.id;
  s.tokens = tokenize_meme(record, vocab);
  if (s.tokens.ids.empty()) throw DataError("record '" + record.id + "' has no tokens or tags");
  s.knowledge = retrieve_and_aggregate(extract_entities(record, kb), kb, cache);
  s.knowledge_tokens = tokenize_knowledge(s.knowledge, vocab);
  s.label = record.label.value_or(-1);
  return s;
}

inline std::vector<PreparedSample> prepare_samples(const std::vector<MemeRecord>& records,
                                                   const Vocab& vocab, const KnowledgeBase& kb,
                                                   KnowledgeCache& cache) {
  std::vector<PreparedSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(prepare_sample(r, vocab, kb, cache));
  return out;
}

struct EffectiveWeights {
  Projections self;
  Projections cross;
};

inline EffectiveWeights effective_weights(const ModelParams& p) {
  return {p.encoder.effective(), p.fusion.effective()};
}

struct SampleForward {
  MemeTrace meme;
  Matrix h_mm;
  Matrix m_k;
  FusionTrace fusion_trace;
  FusionOutput fusion;
  Vector z;  // mean_pool(h~)
  double logit = 0.0;
  double p_hat = 0.5;
};

inline SampleForward forward_sample(const PreparedSample& s, const ModelParams& p,
                                    const EffectiveWeights& w, bool fusion_enabled = true) {
  SampleForward f;
  f.h_mm = encode_meme(s.tokens, p.encoder, w.self, &f.meme);
  f.m_k = encode_knowledge(s.knowledge_tokens, p.encoder);
  f.fusion = fuse(f.h_mm, f.m_k, p.fusion, w.cross, &f.fusion_trace, fusion_enabled);
  f.z = mean_pool(f.fusion.h_tilde);
  f.logit = head_logit(f.z, p.head);
  f.p_hat = sigmoid(f.logit);
  if (!std::isfinite(f.logit)) throw NumericError("non-finite logit for sample '" + s.id + "'");
  return f;
}

struct LossBreakdown {
  double total = 0.0;
  double classification = 0.0;
  double contrastive = 0.0;
  std::vector<TripletIndex> triplets;
  std::vector<double> p_hat;
};

// L = BCE + lambda * triplet loss over one batch. Triplets are mined from the
// pooled h_mm with the hybrid similarity; the contrastive term uses pooled h~.
// When grad is non-null the full gradient (every tensor, frozen ones included)
// is accumulated into it.
inline LossBreakdown total_loss(const std::vector<const PreparedSample*>& batch,
                                const ModelParams& p, const KnowledgeBase& kb,
                                const TrainConfig& cfg, ModelParams* grad = nullptr) {
  if (batch.empty()) throw NumericError("total_loss: empty batch");
  const std::size_t n = batch.size();
  const EffectiveWeights w = effective_weights(p);
  const bool fusion_on = cfg.fusion_enabled();
  const double lambda = cfg.effective_lambda();

  std::vector<SampleForward> fwd;
  fwd.reserve(n);
  std::vector<int> labels;
  std::vector<Vector> pooled_hmm;
  std::vector<std::vector<EntityLink>> links;
  LossBreakdown out;
  for (const auto* s : batch) {
    if (s->label != 0 && s->label != 1) throw DataError("sample '" + s->id + "' has no label");
    fwd.push_back(forward_sample(*s, p, w, fusion_on));
    labels.push_back(s->label);
    pooled_hmm.push_back(mean_pool(fwd.back().h_mm));
    links.push_back(s->knowledge.links);
    out.p_hat.push_back(fwd.back().p_hat);
  }
  out.classification = bce_loss(out.p_hat, labels);

  std::vector<Vector> z;
  for (const auto& f : fwd) z.push_back(f.z);
  if (lambda > 0.0) {
    const Matrix sim =
        hybrid_similarity_matrix(pooled_hmm, links, kb, {cfg.lambda_s, cfg.lambda_c});
    out.triplets = mine_triplets(labels, sim);
    out.contrastive = triplet_loss(z, out.triplets, cfg.margin);
  }
  out.total = out.classification + lambda * out.contrastive;
  if (!std::isfinite(out.total)) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(out.p_hat[i]) || !all_finite(z[i])) {
        throw NumericError("non-finite loss at sample '" + batch[i]->id + "'");
      }
    }
    throw NumericError("non-finite loss in batch starting at sample '" + batch[0]->id + "'");
  }
  if (!grad) return out;

  ModelParams g = zeros_like(p);
  std::vector<Vector> dz(n, Vector(p.dim(), 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = out.p_hat[i];
    const bool clamped = pi < kProbClamp || pi > 1.0 - kProbClamp;
    const double dlogit = clamped ? 0.0 : (pi - labels[i]) / static_cast<double>(n);
    const auto hw = p.head.weights.row(0);
    auto ghw = g.head.weights.row(0);
    for (std::size_t c = 0; c < hw.size(); ++c) {
      dz[i][c] += dlogit * hw[c];
      ghw[c] += dlogit * z[i][c];
    }
    g.head.bias(0, 0) += dlogit;
  }
  if (lambda > 0.0) triplet_loss_backward(z, out.triplets, cfg.margin, lambda, dz);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = fwd[i];
    const std::size_t L = f.h_mm.rows();
    Matrix d_h_tilde(L, p.dim());
    const double inv = 1.0 / static_cast<double>(L);
    for (std::size_t l = 0; l < L; ++l) {
      auto row = d_h_tilde.row(l);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = dz[i][c] * inv;
    }
    Matrix d_h_mm(L, p.dim());
    if (fusion_on) {
      Matrix d_m_k = zeros_like(f.m_k);
      fuse_backward(f.h_mm, f.m_k, p.fusion, w.cross, f.fusion, f.fusion_trace, d_h_tilde,
                    g.fusion, d_h_mm, d_m_k);
      encode_knowledge_backward(batch[i]->knowledge_tokens, d_m_k, g.encoder);
    } else {
      d_h_mm = d_h_tilde;
    }
    encode_meme_backward(batch[i]->tokens, p.encoder, w.self, f.meme, d_h_mm, g.encoder);
  }
  lora_grads_from_base(p.encoder.self_attn, g.encoder.self_attn);
  lora_grads_from_base(p.fusion.cross_attn, g.fusion.cross_attn);
  add_params(*grad, g);
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

inline bool is_trainable(ParamGroup g, const TrainConfig& cfg) {
  switch (g) {
    case ParamGroup::lora_a:
    case ParamGroup::lora_b: return cfg.ablation != Ablation::stage2;
    case ParamGroup::head: return true;
    case ParamGroup::gate: return cfg.train_gate;
    case ParamGroup::embedding: return cfg.train_embeddings;
    case ParamGroup::base:
    case ParamGroup::reasoning: return false;
  }
  return false;
}

inline bool is_decayed(ParamGroup g) {
  return g == ParamGroup::lora_a || g == ParamGroup::lora_b || g == ParamGroup::head;
}

// Adam moments with decoupled weight decay: theta *= (1 - lr * wd) for LoRA
// and head tensors, then the bias-corrected Adam step.
class AdamW {
 public:
  AdamW(const ModelParams& shape, const TrainConfig& cfg)
      : cfg_(cfg), m_(zeros_like(shape)), v_(zeros_like(shape)) {}

  void step(ModelParams& params, const ModelParams& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<std::pair<ParamGroup, Matrix*>> ps;
    std::vector<const Matrix*> gs;
    std::vector<Matrix*> ms, vs;
    for_each_param(params, [&](const std::string&, ParamGroup g, Matrix& m) { ps.emplace_back(g, &m); });
    for_each_param(grads, [&](const std::string&, ParamGroup, const Matrix& m) { gs.push_back(&m); });
    for_each_param(m_, [&](const std::string&, ParamGroup, Matrix& m) { ms.push_back(&m); });
    for_each_param(v_, [&](const std::string&, ParamGroup, Matrix& m) { vs.push_back(&m); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const ParamGroup group = ps[i].first;
      if (!is_trainable(group, cfg_)) continue;
      auto theta = ps[i].second->values();
      const auto g = gs[i]->values();
      auto m = ms[i]->values();
      auto v = vs[i]->values();
      const double decay = is_decayed(group) ? 1.0 - cfg_.lr * cfg_.weight_decay : 1.0;
      for (std::size_t j = 0; j < theta.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.adam_eps);
        theta[j] = theta[j] * decay - cfg_.lr * update;
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  ModelParams m_;
  ModelParams v_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_classification = 0.0;
  double mean_contrastive = 0.0;
  double accuracy = 0.0;
  std::size_t triplets = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
};

// Mini-batch training; the shuffle stream is derived from cfg.seed so runs
// with the same seed and data are bit-identical.
inline TrainResult train(ModelParams& params, const std::vector<PreparedSample>& data,
                         const KnowledgeBase& kb, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  bool has0 = false, has1 = false;
  for (const auto& s : data) {
    if (s.label == 0) has0 = true;
    else if (s.label == 1) has1 = true;
    else throw DataError("training sample '" + s.id + "' has no label");
  }
  if (!has0 || !has1) throw DataError("training set must contain both labels");

  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  AdamW opt(params, cfg);
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochLog e;
    e.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const PreparedSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      ModelParams grads = zeros_like(params);
      const LossBreakdown loss = total_loss(batch, params, kb, cfg, &grads);
      const double weight = static_cast<double>(batch.size());
      e.mean_loss += loss.total * weight;
      e.mean_classification += loss.classification * weight;
      e.mean_contrastive += loss.contrastive * weight;
      e.triplets += loss.triplets.size();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (predicted_label(loss.p_hat[i]) == batch[i]->label) ++correct;
      }
      opt.step(params, grads);
    }
    const double total = static_cast<double>(data.size());
    e.mean_loss /= total;
    e.mean_classification /= total;
    e.mean_contrastive /= total;
    e.accuracy = static_cast<double>(correct) / total;
    if (log) {
      *log << "epoch " << e.epoch << ": loss " << e.mean_loss << " (cls " << e.mean_classification
           << ", contrast " << e.mean_contrastive << "), train acc " << e.accuracy << ", triplets "
           << e.triplets << "\n";
    }
    result.epochs.push_back(e);
  }
  result.steps = opt.steps();
  return result;
}

// Inference over prepared samples: p_hat per sample, in input order.
inline std::vector<double> predict_probabilities(const ModelParams& p,
                                                 const std::vector<PreparedSample>& data,
                                                 bool fusion_enabled = true) {
  const EffectiveWeights w = effective_weights(p);
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(forward_sample(s, p, w, fusion_enabled).p_hat);
  return out;
}

}  // namespace xalign
