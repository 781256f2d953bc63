#pragma once

// Exact shortest flat solutions.
//
// bfs_shortest searches the finite state space (pose x lit-mask) breadth
// first. enumerate_shortest is the brute-force cross-check: it walks the tree
// of action sequences without sharing work between branches.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lightbot/error.hpp"
#include "lightbot/world.hpp"

namespace lightbot {

inline constexpr int kMaxExactLights = 20;

namespace detail {

struct StateCodec {
  const Puzzle& puzzle;

  std::uint64_t size() const {
    return static_cast<std::uint64_t>(puzzle.width() * puzzle.height() * 4)
           << puzzle.num_lights();
  }
  std::uint64_t encode(const WorldState& s) const {
    const auto cell = static_cast<std::uint64_t>(
        (s.pose.y * puzzle.width() + s.pose.x) * 4 + static_cast<int>(s.pose.heading));
    return (cell << puzzle.num_lights()) | s.lit;
  }
  WorldState decode(std::uint64_t key) const {
    WorldState s;
    s.lit = key & puzzle.full_mask();
    const auto cell = static_cast<int>(key >> puzzle.num_lights());
    s.pose.heading = static_cast<Heading>(cell % 4);
    s.pose.x = (cell / 4) % puzzle.width();
    s.pose.y = (cell / 4) / puzzle.width();
    return s;
  }
};

}  // namespace detail

// Minimum-length completing action sequence, or nullopt when no sequence
// turns on every light. Successors are expanded in Action order through a
// FIFO queue, so the returned path is deterministic.
inline std::optional<std::vector<Action>> bfs_shortest(const Puzzle& puzzle) {
  if (puzzle.num_lights() > kMaxExactLights) {
    throw Error("exact search supports at most " + std::to_string(kMaxExactLights) +
                " lights, puzzle has " + std::to_string(puzzle.num_lights()));
  }
  const detail::StateCodec codec{puzzle};
  if (codec.size() > (std::uint64_t{1} << 28)) {
    throw Error("state space of " + std::to_string(codec.size()) + " states is too large for exact search");
  }
  const WorldState start = puzzle.initial_state();
  if (is_complete(puzzle, start)) return std::vector<Action>{};

  constexpr std::uint32_t kUnseen = 0xFFFFFFFFu;
  std::vector<std::uint32_t> parent(codec.size(), kUnseen);
  std::vector<std::uint8_t> via(codec.size(), 0);
  std::vector<std::uint32_t> queue;
  const auto root = static_cast<std::uint32_t>(codec.encode(start));
  parent[root] = root;
  queue.push_back(root);

  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::uint32_t key = queue[head];
    const WorldState s = codec.decode(key);
    for (Action a : kAllActions) {
      const WorldState next = step(puzzle, s, a).state;
      const auto nkey = static_cast<std::uint32_t>(codec.encode(next));
      if (parent[nkey] != kUnseen) continue;
      parent[nkey] = key;
      via[nkey] = static_cast<std::uint8_t>(a);
      if (is_complete(puzzle, next)) {
        std::vector<Action> path;
        for (std::uint32_t k = nkey; k != root; k = parent[k]) {
          path.push_back(static_cast<Action>(via[k]));
        }
        return std::vector<Action>(path.rbegin(), path.rend());
      }
      queue.push_back(nkey);
    }
  }
  return std::nullopt;
}

struct EnumerationResult {
  int length = 0;
  std::uint64_t count = 0;  // sequences of `length` that complete the puzzle

  friend bool operator==(const EnumerationResult&, const EnumerationResult&) = default;
};

namespace detail {

// Depth-first over every action sequence that never revisits a state on its
// own path. A minimal completing sequence cannot revisit a state (cutting the
// loop would shorten it), so the minimum and the number of minimal sequences
// are the same as over all 5^k sequences.
struct Enumerator {
  const Puzzle& puzzle;
  int best = -1;
  std::uint64_t count = 0;
  std::vector<WorldState> path;

  void visit(const WorldState& s, int depth, int max_len) {
    if (is_complete(puzzle, s)) {
      if (best < 0 || depth < best) {
        best = depth;
        count = 0;
      }
      if (depth == best) ++count;
      return;
    }
    if (depth == max_len || (best >= 0 && depth >= best)) return;
    path.push_back(s);
    for (Action a : kAllActions) {
      const WorldState next = step(puzzle, s, a).state;
      if (std::find(path.begin(), path.end(), next) != path.end()) continue;
      visit(next, depth + 1, max_len);
    }
    path.pop_back();
  }
};

}  // namespace detail

// Shortest completing length up to max_len found by exhaustive sequence
// enumeration, with the number of sequences of that length that complete.
inline std::optional<EnumerationResult> enumerate_shortest(const Puzzle& puzzle, int max_len) {
  detail::Enumerator e{puzzle, -1, 0, {}};
  e.visit(puzzle.initial_state(), 0, max_len);
  if (e.best < 0) return std::nullopt;
  return EnumerationResult{e.best, e.count};
}

}  // namespace lightbot
