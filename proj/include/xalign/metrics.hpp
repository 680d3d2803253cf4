#pragma once

// Accuracy / macro-F1 reports and the explanation plausibility score.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xalign/dataset.hpp"
#include "xalign/errors.hpp"
#include "xalign/record.hpp"
#include "xalign/text.hpp"

namespace xalign {

struct ScoredPrediction {
  std::string id;
  int predicted = 0;
  int gold = 0;
  std::optional<Task> task;
};

// Class 1 (abusive) is the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(int predicted, int gold) {
    if (predicted == 1) (gold == 1 ? tp : fp)++;
    else (gold == 0 ? tn : fn)++;
  }
  std::size_t total() const { return tp + fp + tn + fn; }
};

struct GroupScores {
  std::string name;
  std::size_t count = 0;
  double accuracy = 0.0;  // percent
  double macro_f1 = 0.0;  // percent
  ConfusionMatrix confusion;
};

struct EvalReport {
  std::vector<GroupScores> per_task;  // in task order; "unspecified" last
  GroupScores pooled;                 // all predictions as one group
  double accuracy = 0.0;              // unweighted mean over task groups
  double macro_f1 = 0.0;
  std::size_t count = 0;
};

inline double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

inline GroupScores score_group(std::string name, const ConfusionMatrix& cm) {
  GroupScores g{std::move(name), cm.total(), 0.0, 0.0, cm};
  if (cm.total() == 0) return g;
  g.accuracy = 100.0 * static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  const double f1_pos = f1_score(cm.tp, cm.fp, cm.fn);
  const double f1_neg = f1_score(cm.tn, cm.fn, cm.fp);
  g.macro_f1 = 100.0 * (f1_pos + f1_neg) / 2.0;
  return g;
}

inline EvalReport evaluate(const std::vector<ScoredPrediction>& preds) {
  if (preds.empty()) throw DataError("evaluate: no predictions");
  std::map<int, ConfusionMatrix> groups;  // task index, 5 = unspecified
  ConfusionMatrix all;
  for (const auto& p : preds) {
    if ((p.gold != 0 && p.gold != 1) || (p.predicted != 0 && p.predicted != 1)) {
      throw DataError("evaluate: labels must be 0 or 1 (id '" + p.id + "')");
    }
    groups[p.task ? static_cast<int>(*p.task) : 5].add(p.predicted, p.gold);
    all.add(p.predicted, p.gold);
  }
  EvalReport r;
  r.count = preds.size();
  r.pooled = score_group("all", all);
  for (const auto& [key, cm] : groups) {
    r.per_task.push_back(
        score_group(key == 5 ? "unspecified" : std::string(task_name(static_cast<Task>(key))), cm));
    r.accuracy += r.per_task.back().accuracy;
    r.macro_f1 += r.per_task.back().macro_f1;
  }
  r.accuracy /= static_cast<double>(r.per_task.size());
  r.macro_f1 /= static_cast<double>(r.per_task.size());
  return r;
}

// Joins predictions with gold records by id. Every prediction needs a
// labelled record.
inline std::vector<ScoredPrediction> join_with_gold(const std::vector<Prediction>& preds,
                                                    const std::vector<MemeRecord>& gold) {
  std::map<std::string, const MemeRecord*> by_id;
  for (const auto& r : gold) by_id[r.id] = &r;
  std::vector<ScoredPrediction> out;
  for (const auto& p : preds) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end()) throw DataError("prediction for unknown id '" + p.id + "'");
    if (!it->second->label) throw DataError("record '" + p.id + "' has no gold label");
    out.push_back({p.id, p.label, *it->second->label, it->second->task});
  }
  return out;
}

inline json report_to_json(const EvalReport& r) {
  auto group = [](const GroupScores& g) {
    json j;
    j["name"] = g.name;
    j["count"] = g.count;
    j["accuracy"] = g.accuracy;
    j["macro_f1"] = g.macro_f1;
    j["confusion"] = {{"tp", g.confusion.tp}, {"fp", g.confusion.fp}, {"tn", g.confusion.tn},
                      {"fn", g.confusion.fn}};
    return j;
  };
  json j;
  j["count"] = r.count;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["pooled"] = group(r.pooled);
  j["per_task"] = json::array();
  for (const auto& g : r.per_task) j["per_task"].push_back(group(g));
  return j;
}

// Explanation plausibility: cosine similarity of token-count vectors
// (normalized, punctuation stripped). Nonnegative counts keep it in [0, 1].
inline double eps(std::string_view explanation, std::string_view gold_rationale) {
  const auto a = word_tokens(explanation);
  const auto b = word_tokens(gold_rationale);
  if (a.empty() || b.empty()) throw DataError("eps: empty string after normalization");
  std::map<std::string, std::pair<double, double>> counts;
  for (const auto& t : a) counts[t].first += 1.0;
  for (const auto& t : b) counts[t].second += 1.0;
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (const auto& [tok, c] : counts) {
    ab += c.first * c.second;
    aa += c.first * c.first;
    bb += c.second * c.second;
  }
  return std::min(1.0, ab / (std::sqrt(aa) * std::sqrt(bb)));
}

}  // namespace xalign
