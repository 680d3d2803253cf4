#pragma once

// End-to-end entry points over records: train a checkpoint, predict, explain.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "xalign/checkpoint.hpp"
#include "xalign/dataset.hpp"
#include "xalign/knowledge.hpp"
#include "xalign/model.hpp"
#include "xalign/reasoning.hpp"

namespace xalign {

// Parameter initialization and the shuffle stream use independent streams of cfg.seed.
inline Checkpoint train_checkpoint(const std::vector<MemeRecord>& records, const KnowledgeBase& kb,
                                   const TrainConfig& cfg, std::string kb_path = "",
                                   std::ostream* log = nullptr, TrainResult* result = nullptr) {
  cfg.validate();
  Checkpoint ck;
  ck.config = cfg;
  ck.vocab = build_vocab(records, kb);
  ck.kb_hash = kb.hash();
  ck.kb_path = std::move(kb_path);
  ck.params = init_model(cfg.model, ck.vocab.size(), derive_seed(cfg.seed, 0));
  KnowledgeCache cache(cfg.cap_per_source);
  const auto samples = prepare_samples(records, ck.vocab, kb, cache);
  TrainResult r = train(ck.params, samples, kb, cfg, log);
  if (result) *result = std::move(r);
  return ck;
}

inline std::vector<Prediction> predict_records(const Checkpoint& ck,
                                               const std::vector<MemeRecord>& records,
                                               const KnowledgeBase& kb) {
  KnowledgeCache cache(ck.config.cap_per_source);
  const auto samples = prepare_samples(records, ck.vocab, kb, cache);
  const auto probs = predict_probabilities(ck.params, samples, ck.config.fusion_enabled());
  std::vector<Prediction> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.push_back({records[i].id, probs[i], predicted_label(probs[i])});
  }
  return out;
}

struct ExplainedRecord {
  Prediction prediction;
  std::optional<Explanation> explanation;  // absent under the Stage III ablation
};

inline ExplainedRecord explain_sample(const Checkpoint& ck, const MemeRecord& record,
                                      const PreparedSample& s, const EffectiveWeights& w,
                                      const TemplateTable& templates) {
  const SampleForward f = forward_sample(s, ck.params, w, ck.config.fusion_enabled());
  ExplainedRecord out{{record.id, f.p_hat, predicted_label(f.p_hat)}, std::nullopt};
  if (ck.config.ablation == Ablation::stage3) return out;
  const auto evidence = build_evidence(s.knowledge, f.fusion, s.tokens.n_text);
  std::vector<Vector> entities;
  for (const auto& ev : evidence) {
    entities.push_back(entity_embedding(ev.entity, s.tokens, ck.params.encoder.embeddings));
  }
  const ReasoningChain chain = score_and_select(evidence, f.z, entities, f.m_k, ck.params.reasoning,
                                                ck.config.top_m, ck.config.tau);
  out.explanation =
      generate_explanation(chain, out.prediction.label, f.p_hat, record.task, templates);
  return out;
}

inline std::vector<ExplainedRecord> explain_records(const Checkpoint& ck,
                                                    const std::vector<MemeRecord>& records,
                                                    const KnowledgeBase& kb,
                                                    const TemplateTable& templates = TemplateTable::builtin()) {
  KnowledgeCache cache(ck.config.cap_per_source);
  const auto samples = prepare_samples(records, ck.vocab, kb, cache);
  const EffectiveWeights w = effective_weights(ck.params);
  std::vector<ExplainedRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.push_back(explain_sample(ck, records[i], samples[i], w, templates));
  }
  return out;
}

inline json explained_to_json(const ExplainedRecord& r) {
  json j;
  j["id"] = r.prediction.id;
  j["label"] = r.prediction.label;
  j["p_hat"] = r.prediction.p_hat;
  if (!r.explanation) {
    j["explanation"] = nullptr;
    j["chain"] = json::array();
    return j;
  }
  j["explanation"] = r.explanation->text;
  j["flagged"] = r.explanation->flagged;
  j["chain"] = json::array();
  for (const auto& step : r.explanation->chain.steps) {
    j["chain"].push_back({{"entity_id", step.evidence.entity.entity_id},
                          {"score", step.score},
                          {"salience", step.evidence.salience}});
  }
  return j;
}

}  // namespace xalign
