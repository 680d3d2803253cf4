#pragma once

// Command-line front end: train / predict / explain / eval / perturb /
// retrieve-demos. run_cli is kept separate from main() so tests can drive it
// in-process.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xalign/xalign.hpp"

namespace xalign::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

struct TrainArgs {
  std::string data, kb, config, out, ablate;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, dim;
  std::optional<double> lr;
  bool train_gate = false, train_embeddings = false, quiet = false;
};

struct InferArgs {
  std::string ckpt, data, out, kb, dump, templates;
};

struct EvalArgs {
  std::string pred, data, out;
  bool per_task = false;
};

struct PerturbArgs {
  std::string data, kind, out, kb;
  std::uint64_t seed = 0;
};

struct DemoArgs {
  std::string ckpt, pool, query, out, kb;
  std::size_t k = 3;
};

namespace detail {

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

inline std::string to_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

// The KB directory stored in the checkpoint unless overridden.
inline KnowledgeBase kb_for(const Checkpoint& ck, const std::string& override_dir, std::ostream& err) {
  const std::string dir = override_dir.empty() ? ck.kb_path : override_dir;
  if (dir.empty()) throw UsageError("checkpoint records no knowledge base path; pass --kb");
  KnowledgeBase kb = load_kb(dir);
  if (kb.hash() != ck.kb_hash) {
    err << "warning: knowledge base at " << dir << " (hash " << xalign::detail::hex64(kb.hash())
        << ") differs from the checkpoint's snapshot (hash " << xalign::detail::hex64(ck.kb_hash)
        << ")\n";
  }
  return kb;
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline std::string format_table(const EvalReport& r, bool per_task) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << std::left << std::setw(16) << "group" << std::right << std::setw(8) << "count" << std::setw(10)
    << "acc" << std::setw(10) << "macro-F1" << "\n";
  auto line = [&](const std::string& name, std::size_t count, double acc, double f1) {
    s << std::left << std::setw(16) << name << std::right << std::setw(8) << count << std::setw(10)
      << acc << std::setw(10) << f1 << "\n";
  };
  if (per_task) {
    for (const auto& g : r.per_task) line(g.name, g.count, g.accuracy, g.macro_f1);
  }
  line("overall", r.count, r.accuracy, r.macro_f1);
  return s.str();
}

}  // namespace detail

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg;
  if (!a.config.empty()) apply_config_json(detail::read_json_file(a.config), cfg);
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.dim) cfg.model.dim = *a.dim;
  if (a.lr) cfg.lr = *a.lr;
  if (a.train_gate) cfg.train_gate = true;
  if (a.train_embeddings) cfg.train_embeddings = true;
  if (!a.ablate.empty()) cfg.ablation = parse_ablation(a.ablate);
  cfg.validate();
  const auto records = load_dataset(a.data);
  const KnowledgeBase kb = load_kb(a.kb);
  const std::string kb_path = std::filesystem::absolute(a.kb).lexically_normal().string();
  const Checkpoint ck = train_checkpoint(records, kb, cfg, kb_path, a.quiet ? nullptr : &out);
  save_checkpoint(a.out, ck);
  if (!a.quiet) out << "wrote " << a.out << "\n";
  return kExitOk;
}

inline int cmd_predict(const InferArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(a.ckpt, nullptr, nullptr);
  const KnowledgeBase kb = detail::kb_for(ck, a.kb, err);
  const auto records = load_dataset(a.data);
  std::vector<json> rows;
  for (const auto& p : predict_records(ck, records, kb)) rows.push_back(prediction_to_json(p));
  if (!a.dump.empty()) {
    // Debug dump of h_mm and h~ per record.
    KnowledgeCache cache(ck.config.cap_per_source);
    const auto samples = prepare_samples(records, ck.vocab, kb, cache);
    const EffectiveWeights w = effective_weights(ck.params);
    std::vector<json> dump;
    for (const auto& s : samples) {
      const SampleForward f = forward_sample(s, ck.params, w, ck.config.fusion_enabled());
      json j;
      j["id"] = s.id;
      j["h_mm"] = detail::matrix_to_json(f.h_mm);
      j["h_tilde"] = detail::matrix_to_json(f.fusion.h_tilde);
      dump.push_back(std::move(j));
    }
    write_file_atomic(a.dump, detail::to_jsonl(dump));
  }
  write_file_atomic(a.out, detail::to_jsonl(rows));
  out << "wrote " << rows.size() << " predictions to " << a.out << "\n";
  return kExitOk;
}

inline int cmd_explain(const InferArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(a.ckpt, nullptr, nullptr);
  const KnowledgeBase kb = detail::kb_for(ck, a.kb, err);
  const auto records = load_dataset(a.data);
  const TemplateTable templates =
      a.templates.empty() ? TemplateTable::builtin() : TemplateTable::load(a.templates);
  std::vector<json> rows;
  for (const auto& r : explain_records(ck, records, kb, templates)) rows.push_back(explained_to_json(r));
  write_file_atomic(a.out, detail::to_jsonl(rows));
  out << "wrote " << rows.size() << " explanations to " << a.out << "\n";
  return kExitOk;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto preds = load_predictions(a.pred);
  const auto gold = load_dataset(a.data);
  const EvalReport report = evaluate(join_with_gold(preds, gold));
  json j = report_to_json(report);
  if (!a.per_task) j.erase("per_task");
  if (!a.out.empty()) write_file_atomic(a.out, j.dump(2) + "\n");
  out << j.dump(2) << "\n" << detail::format_table(report, a.per_task);
  return kExitOk;
}

inline int cmd_perturb(const PerturbArgs& a, std::ostream& out) {
  const PerturbationKind kind = parse_perturbation(a.kind);
  const auto records = load_dataset(a.data);
  const KnowledgeBase kb = load_kb(a.kb);
  const PerturbationResources res = load_perturbation_resources(a.kb);
  std::vector<MemeRecord> perturbed;
  perturbed.reserve(records.size());
  for (const auto& r : records) perturbed.push_back(perturb(r, kind, a.seed, kb, res));
  write_file_atomic(a.out, dataset_to_jsonl(perturbed));
  out << "wrote " << perturbed.size() << " records to " << a.out << "\n";
  return kExitOk;
}

// Ranks pool records for each query by the hybrid similarity of pooled h_mm
// and cultural relatedness.
inline int cmd_retrieve_demos(const DemoArgs& a, std::ostream& out, std::ostream& err) {
  if (a.k == 0) throw UsageError("--k must be positive");
  const Checkpoint ck = load_checkpoint(a.ckpt, nullptr, nullptr);
  const KnowledgeBase kb = detail::kb_for(ck, a.kb, err);
  const auto pool = load_dataset(a.pool);
  const auto queries = load_dataset(a.query);
  KnowledgeCache cache(ck.config.cap_per_source);
  const auto pool_s = prepare_samples(pool, ck.vocab, kb, cache);
  const auto query_s = prepare_samples(queries, ck.vocab, kb, cache);
  const EffectiveWeights w = effective_weights(ck.params);
  auto pooled = [&](const PreparedSample& s) {
    return mean_pool(encode_meme(s.tokens, ck.params.encoder, w.self));
  };
  std::vector<Vector> pool_vecs;
  for (const auto& s : pool_s) pool_vecs.push_back(pooled(s));
  const SimilarityWeights sw{ck.config.lambda_s, ck.config.lambda_c};
  std::vector<json> rows;
  for (const auto& q : query_s) {
    const Vector qv = pooled(q);
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t j = 0; j < pool_s.size(); ++j) {
      const double s = sw.semantic * cosine_similarity_or_zero(qv, pool_vecs[j]) +
                       sw.cultural * cult_rel(q.knowledge.links, pool_s[j].knowledge.links, kb);
      scored.emplace_back(s, j);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    json demos = json::array();
    for (std::size_t i = 0; i < std::min(a.k, scored.size()); ++i) {
      demos.push_back({{"id", pool_s[scored[i].second].id}, {"score", scored[i].first}});
    }
    rows.push_back({{"id", q.id}, {"demos", demos}});
  }
  const std::string text = detail::to_jsonl(rows);
  if (a.out.empty()) out << text;
  else write_file_atomic(a.out, text);
  return kExitOk;
}

inline int run_cli(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"knowledge-grounded multimodal abuse classifier", "xalign"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train->add_option("--data", ta.data, "training JSONL")->required();
  train->add_option("--kb", ta.kb, "knowledge snapshot directory")->required();
  train->add_option("--config", ta.config, "flat JSON config");
  train->add_option("--out", ta.out, "checkpoint path")->required();
  train->add_option("--ablate", ta.ablate, "stage1 | stage2 | stage3");
  train->add_option("--seed", ta.seed);
  train->add_option("--epochs", ta.epochs);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--dim", ta.dim);
  train->add_option("--lr", ta.lr);
  train->add_flag("--train-gate", ta.train_gate);
  train->add_flag("--train-embeddings", ta.train_embeddings);
  train->add_flag("--quiet", ta.quiet);

  InferArgs pa;
  auto* predict = app.add_subcommand("predict", "write per-record probabilities and labels");
  predict->add_option("--ckpt", pa.ckpt)->required();
  predict->add_option("--data", pa.data)->required();
  predict->add_option("--out", pa.out)->required();
  predict->add_option("--kb", pa.kb, "override the checkpoint's knowledge directory");
  predict->add_option("--dump", pa.dump, "debug JSONL with h_mm and h_tilde per record");

  InferArgs xa;
  auto* explain = app.add_subcommand("explain", "write predictions with templated explanations");
  explain->add_option("--ckpt", xa.ckpt)->required();
  explain->add_option("--data", xa.data)->required();
  explain->add_option("--out", xa.out)->required();
  explain->add_option("--kb", xa.kb, "override the checkpoint's knowledge directory");
  explain->add_option("--templates", xa.templates, "template table file");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score predictions against gold labels");
  eval->add_option("--pred", ea.pred)->required();
  eval->add_option("--data", ea.data)->required();
  eval->add_option("--out", ea.out, "also write the JSON report here");
  eval->add_flag("--per-task", ea.per_task);

  PerturbArgs ra;
  auto* perturb_cmd = app.add_subcommand("perturb", "write a perturbed copy of a dataset");
  perturb_cmd->add_option("--data", ra.data)->required();
  perturb_cmd->add_option("--kind", ra.kind,
                          "text_masking | image_cropping | synonym_substitution | symbol_substitution")
      ->required();
  perturb_cmd->add_option("--seed", ra.seed);
  perturb_cmd->add_option("--out", ra.out)->required();
  perturb_cmd->add_option("--kb", ra.kb, "knowledge directory with synonyms.tsv and symbol_map.tsv")
      ->required();

  DemoArgs da;
  auto* demos = app.add_subcommand("retrieve-demos", "rank pool records by hybrid similarity (debug)");
  demos->add_option("--ckpt", da.ckpt)->required();
  demos->add_option("--pool", da.pool)->required();
  demos->add_option("--query", da.query)->required();
  demos->add_option("--k", da.k);
  demos->add_option("--out", da.out);
  demos->add_option("--kb", da.kb);

  std::vector<std::string> args(argv.rbegin(), argv.rend());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(ta, out);
    if (*predict) return cmd_predict(pa, out, err);
    if (*explain) return cmd_explain(xa, out, err);
    if (*eval) return cmd_eval(ea, out);
    if (*perturb_cmd) return cmd_perturb(ra, out);
    if (*demos) return cmd_retrieve_demos(da, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace xalign::cli
