#pragma once

// Greedy compression of a flat action sequence into a hierarchical program.
//
// Each round picks the repeated subsequence with the largest net saving in
// stored instructions, stores it as a new subprocess and replaces its
// occurrences in the working sequence with a call. Later rounds may pick
// subsequences that contain earlier calls, which yields nested programs.
// When the rounds are done, a main program of the form [call k] * n becomes a
// single call to k with k calling itself at its end.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lightbot/error.hpp"
#include "lightbot/program.hpp"

namespace lightbot {

struct CompressionConfig {
  int max_procs = kMaxProcs;
  int min_len = 2;
  int min_reps = 2;
};

struct Candidate {
  InstructionList subsequence;
  int occurrences = 0;
  int savings = 0;
  int first_position = 0;
};

// Exact non-negative fraction in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t n, std::int64_t d) {
    if (d == 0) throw Error("rational with zero denominator");
    if (d < 0) {
      n = -n;
      d = -d;
    }
    const std::int64_t g = std::gcd(n, d);
    return g == 0 ? Rational{0, 1} : Rational{n / g, d / g};
  }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }

  friend bool operator==(const Rational&, const Rational&) = default;
};

struct CompressionResult {
  Program program;
  std::size_t flat_length = 0;
  std::size_t compressed_length = 0;
  Rational compressibility;
  bool recursion_applied = false;
};

inline Rational compressibility(std::size_t flat_length, std::size_t compressed_length) {
  if (flat_length == 0) throw Error("compressibility of an empty sequence is undefined");
  if (compressed_length > flat_length) {
    throw Error("compressed length " + std::to_string(compressed_length) +
                " exceeds flat length " + std::to_string(flat_length));
  }
  return Rational::make(static_cast<std::int64_t>(flat_length - compressed_length),
                        static_cast<std::int64_t>(flat_length));
}

namespace detail {

// One byte per token so that substrings can be hashed as string_views.
inline std::string encode_tokens(const InstructionList& seq) {
  std::string s;
  s.reserve(seq.size());
  for (const auto& ins : seq) {
    s.push_back(ins.is_call() ? static_cast<char>(16 + ins.proc())
                              : static_cast<char>(ins.action()));
  }
  return s;
}

// Greedy left-to-right count of non-overlapping occurrences; `positions` are
// the ascending start offsets of every (possibly overlapping) match.
inline int count_non_overlapping(const std::vector<int>& positions, int len) {
  int count = 0;
  int next_free = 0;
  for (int p : positions) {
    if (p >= next_free) {
      ++count;
      next_free = p + len;
    }
  }
  return count;
}

}  // namespace detail

inline std::optional<Candidate> find_best_candidate(const InstructionList& seq,
                                                    const CompressionConfig& config = {}) {
  const std::string text = detail::encode_tokens(seq);
  const int n = static_cast<int>(text.size());
  const std::string_view view(text);

  std::optional<Candidate> best;
  std::unordered_map<std::string_view, std::vector<int>> groups;
  for (int len = config.min_len; len * config.min_reps <= n; ++len) {
    groups.clear();
    for (int start = 0; start + len <= n; ++start) {
      groups[view.substr(static_cast<std::size_t>(start), static_cast<std::size_t>(len))]
          .push_back(start);
    }
    bool any_repeat = false;
    for (const auto& [key, positions] : groups) {
      if (positions.size() < 2) continue;
      any_repeat = true;
      const int k = detail::count_non_overlapping(positions, len);
      if (k < config.min_reps) continue;
      const int savings = k * len - (k + len);
      const int first = positions.front();
      const bool better = !best || savings > best->savings ||
                          (savings == best->savings &&
                           (len > static_cast<int>(best->subsequence.size()) ||
                            (len == static_cast<int>(best->subsequence.size()) &&
                             first < best->first_position)));
      if (better) {
        best = Candidate{InstructionList(seq.begin() + first, seq.begin() + first + len), k,
                         savings, first};
      }
    }
    // A longer substring can only repeat if its prefix of this length does.
    if (!any_repeat) break;
  }
  return best;
}

// Replaces greedy non-overlapping occurrences of `pattern` with `replacement`.
inline InstructionList replace_occurrences(const InstructionList& seq, const InstructionList& pattern,
                                           Instruction replacement) {
  InstructionList out;
  out.reserve(seq.size());
  std::size_t i = 0;
  while (i < seq.size()) {
    if (i + pattern.size() <= seq.size() &&
        std::equal(pattern.begin(), pattern.end(), seq.begin() + static_cast<std::ptrdiff_t>(i))) {
      out.push_back(replacement);
      i += pattern.size();
    } else {
      out.push_back(seq[i++]);
    }
  }
  return out;
}

// The extraction rounds alone, without the recursion step.
inline Program extract_subprocesses(const std::vector<Action>& seq,
                                    const CompressionConfig& config = {}) {
  Program p = Program::flat(seq);
  while (static_cast<int>(p.procs.size()) < config.max_procs) {
    auto cand = find_best_candidate(p.main, config);
    if (!cand) break;
    const auto call = Instruction::call(static_cast<int>(p.procs.size()) + 1);
    p.main = replace_occurrences(p.main, cand->subsequence, call);
    p.procs.push_back(std::move(cand->subsequence));
  }
  return p;
}

// main = [call k] * n with n >= 2  ->  main = [call k], proc k += [call k].
inline Program recursion_pass(Program p) {
  if (p.main.size() < 2 || !p.main.front().is_call()) return p;
  const Instruction call = p.main.front();
  for (const auto& ins : p.main) {
    if (ins != call) return p;
  }
  p.procs[static_cast<std::size_t>(call.proc() - 1)].push_back(call);
  p.main = {call};
  return p;
}

inline CompressionResult compress(const std::vector<Action>& seq,
                                  const CompressionConfig& config = {}) {
  if (seq.empty()) throw Error("cannot compress an empty sequence");
  if (config.max_procs < 0 || config.min_len < 2 || config.min_reps < 2) {
    throw Error("invalid compression config: need max_procs >= 0, min_len >= 2, min_reps >= 2");
  }
  const Program extracted = extract_subprocesses(seq, config);

  CompressionResult r;
  r.program = recursion_pass(extracted);
  r.recursion_applied = r.program != extracted;
  r.flat_length = seq.size();
  r.compressed_length = program_length(r.program);
  r.compressibility = lightbot::compressibility(r.flat_length, r.compressed_length);
  return r;
}

}  // namespace lightbot
