#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   8 bytes   magic "XALIGNCK"
//   u32       format version (1)
//   u64       metadata length n, then n bytes of UTF-8 JSON:
//               {"config": {...}, "seed", "kb_hash" (hex), "kb_path", "vocab": [...]}
//   u32       tensor count
//   per tensor, in for_each_param order:
//     u32 name length, name bytes, u64 rows, u64 cols, rows*cols IEEE-754 doubles
//
// Serialization is canonical, so save(load(bytes)) == bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "xalign/dataset.hpp"
#include "xalign/encoder.hpp"
#include "xalign/model.hpp"

namespace xalign {

inline constexpr std::string_view kCheckpointMagic = "XALIGNCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Flat JSON config (also the --config file format)

inline json config_to_json(const TrainConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["epochs"] = c.epochs;
  j["margin"] = c.margin;
  j["lambda"] = c.lambda;
  j["lambda_s"] = c.lambda_s;
  j["lambda_c"] = c.lambda_c;
  j["tau"] = c.tau;
  j["top_m"] = c.top_m;
  j["batch_size"] = c.batch_size;
  j["cap_per_source"] = c.cap_per_source;
  j["seed"] = c.seed;
  j["train_gate"] = c.train_gate;
  j["train_embeddings"] = c.train_embeddings;
  j["ablation"] = std::string(ablation_name(c.ablation));
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["dim"] = c.model.dim;
  j["heads"] = c.model.heads;
  j["rank"] = c.model.rank;
  j["alpha"] = c.model.alpha;
  return j;
}

// Unknown keys are rejected so typos do not silently fall back to defaults.
inline void apply_config_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw UsageError("config must be a flat JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "lr") c.lr = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "margin") c.margin = v.get<double>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "lambda_s") c.lambda_s = v.get<double>();
      else if (key == "lambda_c") c.lambda_c = v.get<double>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "top_m") c.top_m = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "cap_per_source") c.cap_per_source = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "train_gate") c.train_gate = v.get<bool>();
      else if (key == "train_embeddings") c.train_embeddings = v.get<bool>();
      else if (key == "ablation") c.ablation = parse_ablation(v.get<std::string>());
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "dim") c.model.dim = v.get<std::size_t>();
      else if (key == "heads") c.model.heads = v.get<std::size_t>();
      else if (key == "rank") c.model.rank = v.get<std::size_t>();
      else if (key == "alpha") c.model.alpha = v.get<double>();
      else throw UsageError("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

inline TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  apply_config_json(j, c);
  return c;
}

// ---------------------------------------------------------------------------

struct Checkpoint {
  TrainConfig config;
  Vocab vocab;
  ModelParams params;
  std::uint64_t kb_hash = 0;
  std::string kb_path;

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  json meta;
  meta["config"] = config_to_json(ck.config);
  meta["seed"] = ck.config.seed;
  meta["kb_hash"] = detail::hex64(ck.kb_hash);
  meta["kb_path"] = ck.kb_path;
  meta["vocab"] = ck.vocab.tokens();
  const std::string meta_text = meta.dump();

  std::string out(kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  std::uint32_t count = 0;
  for_each_param(ck.params, [&](const std::string&, ParamGroup, const Matrix&) { ++count; });
  detail::put_le<std::uint32_t>(out, count);
  for_each_param(ck.params, [&](const std::string& name, ParamGroup, const Matrix& m) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint64_t>(out, m.rows());
    detail::put_le<std::uint64_t>(out, m.cols());
    for (double x : m.values()) detail::put_le<double>(out, x);
  });
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < kCheckpointMagic.size() || in.take(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto meta_len = in.get<std::uint64_t>();
  json meta;
  try {
    meta = json::parse(in.take(meta_len));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  Checkpoint ck;
  try {
    ck.config = config_from_json(meta.at("config"));
    ck.kb_hash = std::stoull(meta.at("kb_hash").get<std::string>(), nullptr, 16);
    ck.kb_path = meta.at("kb_path").get<std::string>();
    ck.vocab = Vocab::from_list(meta.at("vocab").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  // Structure (LoRA targets, alpha) comes from the config; values from the file.
  ck.params = init_model(ck.config.model, ck.vocab.size(), 0);
  const auto count = in.get<std::uint32_t>();
  std::uint32_t expected = 0;
  for_each_param(ck.params, [&](const std::string&, ParamGroup, Matrix&) { ++expected; });
  if (count != expected) {
    throw DataError("checkpoint has " + std::to_string(count) + " tensors, expected " +
                    std::to_string(expected));
  }
  for_each_param(ck.params, [&](const std::string& name, ParamGroup, Matrix& m) {
    const auto len = in.get<std::uint32_t>();
    const std::string found(in.take(len));
    if (found != name) throw DataError("checkpoint tensor '" + found + "' where '" + name + "' expected");
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    if (rows != m.rows() || cols != m.cols()) {
      throw DataError("checkpoint tensor '" + name + "' is " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected " + m.shape());
    }
    for (double& x : m.values()) x = in.get<double>();
  });
  if (!in.done()) throw DataError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

// Warns on `warn` when the checkpoint was trained against a different KB snapshot.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const KnowledgeBase* kb = nullptr,
                                  std::ostream* warn = &std::cerr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  Checkpoint ck;
  try {
    ck = deserialize_checkpoint(buf.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (kb && kb->hash() != ck.kb_hash && warn) {
    *warn << "warning: knowledge base hash " << detail::hex64(kb->hash())
          << " differs from the checkpoint's " << detail::hex64(ck.kb_hash) << "\n";
  }
  return ck;
}

}  // namespace xalign
