#pragma once

// JSONL dataset and prediction files.
//
//   dataset line:     {"id", "text_tokens": [...], "image_tags": [...],
//                      "label": 0|1, "task": "...", "gold_rationale": "..."}
//   prediction line:  {"id", "p_hat": real, "label": 0|1}

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xalign/errors.hpp"
#include "xalign/record.hpp"

namespace xalign {

using json = nlohmann::ordered_json;

inline MemeRecord record_from_json(const json& j, std::size_t line_no) {
  auto fail = [&](const std::string& why) -> DataError {
    return DataError("line " + std::to_string(line_no) + ": " + why);
  };
  if (!j.is_object()) throw fail("expected a JSON object");
  MemeRecord r;
  if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
    throw fail("missing or empty string field 'id'");
  }
  r.id = j["id"].get<std::string>();
  auto read_list = [&](const char* key, std::vector<std::string>& out) {
    if (!j.contains(key) || j[key].is_null()) return;
    if (!j[key].is_array()) throw fail(std::string("'") + key + "' must be an array of strings");
    for (const auto& v : j[key]) {
      if (!v.is_string()) throw fail(std::string("'") + key + "' must be an array of strings");
      out.push_back(v.get<std::string>());
    }
  };
  read_list("text_tokens", r.text_tokens);
  read_list("image_tags", r.image_tags);
  if (r.text_tokens.empty() && r.image_tags.empty()) {
    throw fail("record '" + r.id + "' has neither text_tokens nor image_tags");
  }
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number_integer()) throw fail("record '" + r.id + "': label must be 0 or 1");
    const int label = j["label"].get<int>();
    if (label != 0 && label != 1) throw fail("record '" + r.id + "': label must be 0 or 1");
    r.label = label;
  }
  if (j.contains("task") && !j["task"].is_null()) {
    if (!j["task"].is_string()) throw fail("record '" + r.id + "': task must be a string");
    try {
      r.task = parse_task(j["task"].get<std::string>());
    } catch (const DataError& e) {
      throw fail("record '" + r.id + "': " + e.what());
    }
  }
  if (j.contains("gold_rationale") && !j["gold_rationale"].is_null()) {
    if (!j["gold_rationale"].is_string()) throw fail("record '" + r.id + "': gold_rationale must be a string");
    r.gold_rationale = j["gold_rationale"].get<std::string>();
  }
  return r;
}

inline json record_to_json(const MemeRecord& r) {
  json j;
  j["id"] = r.id;
  j["text_tokens"] = r.text_tokens;
  j["image_tags"] = r.image_tags;
  if (r.label) j["label"] = *r.label;
  if (r.task) j["task"] = std::string(task_name(*r.task));
  if (r.gold_rationale) j["gold_rationale"] = *r.gold_rationale;
  return j;
}

// Calls fn(line_no, json) for every non-blank line.
template <typename Fn>
void for_each_jsonl(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": invalid JSON (" + e.what() + ")");
    }
    fn(line_no, j);
  }
}

inline std::vector<MemeRecord> parse_dataset(std::istream& in) {
  std::vector<MemeRecord> out;
  std::set<std::string> ids;
  for_each_jsonl(in, [&](std::size_t line_no, const json& j) {
    MemeRecord r = record_from_json(j, line_no);
    if (!ids.insert(r.id).second) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + r.id + "'");
    }
    out.push_back(std::move(r));
  });
  return out;
}

inline std::vector<MemeRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  try {
    return parse_dataset(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string dataset_to_jsonl(const std::vector<MemeRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

// Writes to a sibling temporary file and renames it into place, so readers
// never observe a partially written output.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw DataError("write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

struct Prediction {
  std::string id;
  double p_hat = 0.0;
  int label = 0;
};

inline json prediction_to_json(const Prediction& p) {
  json j;
  j["id"] = p.id;
  j["p_hat"] = p.p_hat;
  j["label"] = p.label;
  return j;
}

inline std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path.string());
  std::vector<Prediction> out;
  for_each_jsonl(in, [&](std::size_t line_no, const json& j) {
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("label") ||
        !j["label"].is_number_integer()) {
      throw DataError(path.string() + " line " + std::to_string(line_no) +
                      ": expected {\"id\", \"p_hat\", \"label\"}");
    }
    Prediction p{j["id"].get<std::string>(), j.value("p_hat", 0.0), j["label"].get<int>()};
    if (p.label != 0 && p.label != 1) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": label must be 0 or 1");
    }
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace xalign
