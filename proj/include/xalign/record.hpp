#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xalign/errors.hpp"

namespace xalign {

enum class Task { harmfulness, hatefulness, misogyny, offensiveness, sarcasm };

inline constexpr std::array<Task, 5> kAllTasks = {Task::harmfulness, Task::hatefulness,
                                                  Task::misogyny, Task::offensiveness,
                                                  Task::sarcasm};

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::harmfulness: return "harmfulness";
    case Task::hatefulness: return "hatefulness";
    case Task::misogyny: return "misogyny";
    case Task::offensiveness: return "offensiveness";
    case Task::sarcasm: return "sarcasm";
  }
  return "unknown";
}

inline Task parse_task(std::string_view s) {
  for (Task t : kAllTasks) {
    if (task_name(t) == s) return t;
  }
  throw DataError("unknown task '" + std::string(s) + "'");
}

// One meme. Images enter as pre-extracted tags; the caption/overlay text as
// tokens.
struct MemeRecord {
  std::string id;
  std::vector<std::string> text_tokens;
  std::vector<std::string> image_tags;
  std::optional<int> label;
  std::optional<Task> task;
  std::optional<std::string> gold_rationale;

  bool operator==(const MemeRecord&) const = default;
};

}  // namespace xalign
