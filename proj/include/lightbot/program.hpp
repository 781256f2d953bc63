#pragma once

// Hierarchical programs: a main instruction list plus up to four stored
// subprocesses, each of which may call the others or itself.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lightbot/condition.hpp"
#include "lightbot/error.hpp"
#include "lightbot/world.hpp"
#include "json.hpp"

namespace lightbot {

inline constexpr int kMaxProcs = 4;

// A primitive action or a call to subprocess `proc` (1-based).
class Instruction {
 public:
  static constexpr Instruction primitive(Action a) { return Instruction(a, 0); }
  static constexpr Instruction call(int proc) { return Instruction(Action::Walk, proc); }

  constexpr bool is_call() const { return proc_ != 0; }
  constexpr Action action() const { return action_; }
  constexpr int proc() const { return proc_; }

  friend constexpr bool operator==(const Instruction&, const Instruction&) = default;
  friend constexpr auto operator<=>(const Instruction&, const Instruction&) = default;

 private:
  constexpr Instruction(Action a, int proc) : action_(a), proc_(proc) {}

  Action action_;
  int proc_;
};

using InstructionList = std::vector<Instruction>;

struct Program {
  InstructionList main;
  std::vector<InstructionList> procs;

  static Program flat(const std::vector<Action>& actions) {
    Program p;
    for (Action a : actions) p.main.push_back(Instruction::primitive(a));
    return p;
  }

  friend bool operator==(const Program&, const Program&) = default;
};

struct ExecutionLimits {
  int max_steps = 10'000;
  int max_depth = 1'000;
};

enum class ExecutionStatus { Completed, ProgramEnded, StepBudgetExhausted, DepthExceeded };

inline std::string_view to_string(ExecutionStatus s) {
  switch (s) {
    case ExecutionStatus::Completed: return "completed";
    case ExecutionStatus::ProgramEnded: return "program_ended";
    case ExecutionStatus::StepBudgetExhausted: return "step_budget_exhausted";
    case ExecutionStatus::DepthExceeded: return "depth_exceeded";
  }
  return "?";
}

struct ExecutionTrace {
  std::vector<Action> actions;
  std::vector<WorldState> states;  // states.size() == actions.size() + 1
  ExecutionStatus status = ExecutionStatus::ProgramEnded;

  bool completed() const { return status == ExecutionStatus::Completed; }
};

struct FlattenResult {
  std::vector<Action> actions;
  bool truncated = false;
};

class DepthExceededError : public ProgramError {
 public:
  using ProgramError::ProgramError;
};

inline std::size_t program_length(const Program& p) {
  std::size_t n = p.main.size();
  for (const auto& proc : p.procs) n += proc.size();
  return n;
}

// Throws ProgramError for a Call whose target is not a defined subprocess.
inline void check_references(const Program& p) {
  auto check = [&](const InstructionList& list, const std::string& where) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& ins = list[i];
      if (ins.is_call() && (ins.proc() < 1 || ins.proc() > static_cast<int>(p.procs.size()))) {
        throw ProgramError("dangling call" + std::to_string(ins.proc()) + " at " + where + "[" +
                           std::to_string(i) + "]");
      }
    }
  };
  check(p.main, "main");
  for (std::size_t k = 0; k < p.procs.size(); ++k) check(p.procs[k], "proc" + std::to_string(k + 1));
}

// Depth-first unrolling of a program into primitive actions. Calls in tail
// position replace the calling frame, so tail recursion runs in constant
// stack depth. A run of more than max_depth calls without an intervening
// primitive counts as exceeding the depth limit.
class Unroller {
 public:
  enum class Next { Action, Ended, DepthExceeded };

  Unroller(const Program& program, int max_depth) : program_(program), max_depth_(max_depth) {
    check_references(program);
    stack_.push_back({nullptr, 0});
  }

  Next next(Action& out) {
    int calls = 0;
    while (!stack_.empty()) {
      Frame& top = stack_.back();
      const InstructionList& body = top.body ? *top.body : program_.main;
      if (top.pc >= body.size()) {
        stack_.pop_back();
        continue;
      }
      const Instruction ins = body[top.pc++];
      if (!ins.is_call()) {
        out = ins.action();
        return Next::Action;
      }
      if (++calls > max_depth_) return Next::DepthExceeded;
      if (top.pc >= body.size()) stack_.pop_back();
      stack_.push_back({&program_.procs[static_cast<std::size_t>(ins.proc() - 1)], 0});
      if (static_cast<int>(stack_.size()) > max_depth_) return Next::DepthExceeded;
    }
    return Next::Ended;
  }

 private:
  struct Frame {
    const InstructionList* body;  // nullptr = main
    std::size_t pc;
  };

  const Program& program_;
  int max_depth_;
  std::vector<Frame> stack_;
};

// Puzzle-independent unrolling. Stops after limits.max_steps primitives and
// reports truncation when more would follow (or the depth limit is hit right
// at the budget).
inline FlattenResult flatten(const Program& p, const ExecutionLimits& limits = {}) {
  FlattenResult out;
  Unroller unroller(p, limits.max_depth);
  Action a{};
  while (true) {
    const auto next = unroller.next(a);
    if (next == Unroller::Next::Ended) return out;
    const bool at_budget = static_cast<int>(out.actions.size()) == limits.max_steps;
    if (next == Unroller::Next::DepthExceeded && !at_budget) {
      throw DepthExceededError("call depth exceeded " + std::to_string(limits.max_depth) +
                               " after " + std::to_string(out.actions.size()) + " actions");
    }
    if (at_budget) {
      out.truncated = true;
      return out;
    }
    out.actions.push_back(a);
  }
}

// Runs the program from the puzzle's start state, halting as soon as every
// light is on.
inline ExecutionTrace execute(const Puzzle& puzzle, const Program& p,
                              const ExecutionLimits& limits = {}) {
  ExecutionTrace trace;
  trace.states.push_back(puzzle.initial_state());
  if (is_complete(puzzle, trace.states.back())) {
    trace.status = ExecutionStatus::Completed;
    return trace;
  }
  Unroller unroller(p, limits.max_depth);
  Action a{};
  while (true) {
    const auto next = unroller.next(a);
    if (next == Unroller::Next::Ended) {
      trace.status = ExecutionStatus::ProgramEnded;
      return trace;
    }
    if (static_cast<int>(trace.actions.size()) == limits.max_steps) {
      trace.status = ExecutionStatus::StepBudgetExhausted;
      return trace;
    }
    if (next == Unroller::Next::DepthExceeded) {
      trace.status = ExecutionStatus::DepthExceeded;
      return trace;
    }
    trace.actions.push_back(a);
    trace.states.push_back(step(puzzle, trace.states.back(), a).state);
    if (is_complete(puzzle, trace.states.back())) {
      trace.status = ExecutionStatus::Completed;
      return trace;
    }
  }
}

// ---------------------------------------------------------------------------
// Validation against an experimental condition

struct InstructionPosition {
  int proc = 0;  // 0 = main, k = subprocess k
  int index = -1;  // -1 = the list as a whole

  friend bool operator==(const InstructionPosition&, const InstructionPosition&) = default;
};

struct Violation {
  InstructionPosition position;
  std::string message;
};

inline std::vector<Violation> validate_program(const Program& p, const ConditionSpec& condition) {
  std::vector<Violation> out;
  const int allowed = condition.subprocesses_allowed;
  const int defined = static_cast<int>(p.procs.size());

  if (allowed == 0) {
    for (int k = 0; k < defined; ++k) {
      if (!p.procs[static_cast<std::size_t>(k)].empty()) {
        out.push_back({{k + 1, -1}, "subprocess use not permitted"});
      }
    }
  } else if (defined > allowed) {
    for (int k = allowed; k < defined; ++k) {
      out.push_back({{k + 1, -1}, "only " + std::to_string(allowed) + " subprocesses permitted"});
    }
  }

  auto scan = [&](const InstructionList& list, int proc) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& ins = list[i];
      if (!ins.is_call()) continue;
      const InstructionPosition pos{proc, static_cast<int>(i)};
      if (allowed == 0) {
        out.push_back({pos, "subprocess use not permitted"});
      } else if (ins.proc() < 1 || ins.proc() > allowed) {
        out.push_back({pos, "call" + std::to_string(ins.proc()) + " exceeds the " +
                                std::to_string(allowed) + " permitted subprocesses"});
      } else if (ins.proc() > defined) {
        out.push_back({pos, "dangling reference to undefined subprocess " +
                                std::to_string(ins.proc())});
      }
    }
  };
  scan(p.main, 0);
  for (int k = 0; k < defined; ++k) scan(p.procs[static_cast<std::size_t>(k)], k + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Text formats
//
// Program: {"main":["walk","call1",...],"procs":[["jump",...],...]}
// Trace:   {"actions":[...],"frames":[{"x":0,"y":0,"dir":"E","lit_bits":"01"},...],
//           "status":"completed"}

inline std::string token(const Instruction& ins) {
  if (ins.is_call()) return "call" + std::to_string(ins.proc());
  return std::string(to_string(ins.action()));
}

inline std::optional<Instruction> instruction_from_token(std::string_view tok) {
  if (auto a = action_from_string(tok)) return Instruction::primitive(*a);
  if (tok.size() == 5 && tok.substr(0, 4) == "call" && tok[4] >= '1' && tok[4] <= '4') {
    return Instruction::call(tok[4] - '0');
  }
  return std::nullopt;
}

namespace detail {

inline InstructionList parse_instruction_list(const nlohmann::json& arr, const std::string& where) {
  if (!arr.is_array()) throw ProgramError("'" + where + "' must be an array of tokens");
  InstructionList out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& t = arr[i];
    auto ins = t.is_string() ? instruction_from_token(t.get<std::string>()) : std::nullopt;
    if (!ins) {
      throw ProgramError("unknown instruction " + t.dump() + " at " + where + "[" +
                         std::to_string(i) + "]");
    }
    out.push_back(*ins);
  }
  return out;
}

}  // namespace detail

inline Program program_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ProgramError("program must be a JSON object");
  Program p;
  auto main = doc.find("main");
  if (main == doc.end()) throw ProgramError("program is missing 'main'");
  p.main = detail::parse_instruction_list(*main, "main");
  if (auto procs = doc.find("procs"); procs != doc.end()) {
    if (!procs->is_array()) throw ProgramError("'procs' must be an array");
    for (std::size_t k = 0; k < procs->size(); ++k) {
      p.procs.push_back(detail::parse_instruction_list((*procs)[k], "proc" + std::to_string(k + 1)));
    }
  }
  return p;
}

inline Program parse_program(std::string_view text) {
  try {
    return program_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ProgramError(std::string("program is not valid JSON: ") + e.what());
  }
}

inline nlohmann::ordered_json program_to_json(const Program& p) {
  auto list = [](const InstructionList& l) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& ins : l) arr.push_back(token(ins));
    return arr;
  };
  nlohmann::ordered_json doc;
  doc["main"] = list(p.main);
  doc["procs"] = nlohmann::ordered_json::array();
  for (const auto& proc : p.procs) doc["procs"].push_back(list(proc));
  return doc;
}

inline std::string lit_bits(const Puzzle& puzzle, LightMask lit) {
  std::string s(static_cast<std::size_t>(puzzle.num_lights()), '0');
  for (int i = 0; i < puzzle.num_lights(); ++i) {
    if ((lit >> i) & 1U) s[static_cast<std::size_t>(i)] = '1';
  }
  return s;
}

inline nlohmann::ordered_json trace_to_json(const Puzzle& puzzle, const ExecutionTrace& trace) {
  nlohmann::ordered_json doc;
  doc["actions"] = nlohmann::ordered_json::array();
  for (Action a : trace.actions) doc["actions"].push_back(std::string(to_string(a)));
  doc["frames"] = nlohmann::ordered_json::array();
  for (const auto& s : trace.states) {
    nlohmann::ordered_json f;
    f["x"] = s.pose.x;
    f["y"] = s.pose.y;
    f["dir"] = std::string(1, heading_char(s.pose.heading));
    f["lit_bits"] = lit_bits(puzzle, s.lit);
    doc["frames"].push_back(std::move(f));
  }
  doc["status"] = std::string(to_string(trace.status));
  return doc;
}

}  // namespace lightbot
