#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace lightbot {

enum class BonusMode { PerPuzzleFixed, LengthLinear };

// One between-subjects experimental condition.
struct ConditionSpec {
  std::string id;
  int subprocesses_allowed = 0;  // 0 (flat) or 4 (hierarchy)
  bool counter_visible = false;
  bool efficiency_instructions = false;
  BonusMode bonus_mode = BonusMode::PerPuzzleFixed;

  bool hierarchical() const { return subprocesses_allowed > 0; }

  friend bool operator==(const ConditionSpec&, const ConditionSpec&) = default;
};

inline const std::array<ConditionSpec, 4>& bundled_conditions() {
  static const std::array<ConditionSpec, 4> kConditions = {{
      {"EfficientFlat", 0, false, true, BonusMode::LengthLinear},
      {"DefaultFlat", 0, false, false, BonusMode::PerPuzzleFixed},
      {"EfficientHierarchy", 4, true, true, BonusMode::LengthLinear},
      {"DefaultHierarchy", 4, false, false, BonusMode::PerPuzzleFixed},
  }};
  return kConditions;
}

inline std::optional<ConditionSpec> find_condition(std::string_view id) {
  for (const auto& c : bundled_conditions()) {
    if (c.id == id) return c;
  }
  return std::nullopt;
}

}  // namespace lightbot
