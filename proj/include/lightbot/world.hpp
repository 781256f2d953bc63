#pragma once

// Deterministic Lightbot world: a grid of blocks with light tiles and a
// robot that walks, jumps, turns and switches lights on.
//
// Conventions: grid origin is the top-left tile, y grows southward, headings
// are ordered N, E, S, W. Lights latch: once on they stay on.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lightbot/error.hpp"
#include "json.hpp"

namespace lightbot {

enum class Heading : std::uint8_t { North = 0, East = 1, South = 2, West = 3 };

// Order matters: it fixes BFS expansion order and the policy output layout.
enum class Action : std::uint8_t { Walk = 0, Jump = 1, TurnLeft = 2, TurnRight = 3, Light = 4 };

inline constexpr std::array<Action, 5> kAllActions = {Action::Walk, Action::Jump, Action::TurnLeft,
                                                     Action::TurnRight, Action::Light};
inline constexpr int kNumActions = 5;
inline constexpr int kMaxLights = 64;

using LightMask = std::uint64_t;

struct Tile {
  int height = 0;
  bool is_light = false;

  friend bool operator==(const Tile&, const Tile&) = default;
};

struct Pose {
  int x = 0;
  int y = 0;
  Heading heading = Heading::North;

  friend bool operator==(const Pose&, const Pose&) = default;
};

struct WorldState {
  Pose pose;
  LightMask lit = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct StepEvent {
  bool moved = false;
  std::optional<int> light_turned_on;
};

struct StepResult {
  WorldState state;
  StepEvent event;
};

// ---------------------------------------------------------------------------
// Token names

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::Walk: return "walk";
    case Action::Jump: return "jump";
    case Action::TurnLeft: return "left";
    case Action::TurnRight: return "right";
    case Action::Light: return "light";
  }
  return "?";
}

inline std::optional<Action> action_from_string(std::string_view s) {
  for (Action a : kAllActions) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

inline char heading_char(Heading h) { return "NESW"[static_cast<int>(h)]; }

inline std::optional<Heading> heading_from_char(std::string_view s) {
  if (s == "N") return Heading::North;
  if (s == "E") return Heading::East;
  if (s == "S") return Heading::South;
  if (s == "W") return Heading::West;
  return std::nullopt;
}

inline Heading turn_left(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
inline Heading turn_right(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }

inline constexpr std::array<int, 4> kDx = {0, 1, 0, -1};
inline constexpr std::array<int, 4> kDy = {-1, 0, 1, 0};

// ---------------------------------------------------------------------------
// Puzzle

class Puzzle {
 public:
  Puzzle() = default;

  // Rows of tiles, all of equal width. Throws PuzzleError when the grid or
  // start pose is invalid.
  Puzzle(std::vector<std::vector<Tile>> rows, Pose start, std::string name = {})
      : name_(std::move(name)), start_(start) {
    if (rows.empty()) throw PuzzleError("grid has no rows");
    height_ = static_cast<int>(rows.size());
    width_ = static_cast<int>(rows.front().size());
    if (width_ == 0) throw PuzzleError("grid row 0 is empty");
    tiles_.reserve(static_cast<std::size_t>(width_ * height_));
    for (int y = 0; y < height_; ++y) {
      const auto& row = rows[static_cast<std::size_t>(y)];
      if (static_cast<int>(row.size()) != width_) {
        throw PuzzleError("ragged grid: row " + std::to_string(y) + " has " +
                          std::to_string(row.size()) + " tiles, expected " +
                          std::to_string(width_));
      }
      for (int x = 0; x < width_; ++x) {
        const Tile& t = row[static_cast<std::size_t>(x)];
        if (t.height < 0) {
          throw PuzzleError("negative height " + std::to_string(t.height) + " at tile (" +
                            std::to_string(x) + "," + std::to_string(y) + ")");
        }
        tiles_.push_back(t);
        max_height_ = std::max(max_height_, t.height);
        if (t.is_light) light_index_.push_back({x, y});
      }
    }
    if (!in_bounds(start.x, start.y)) {
      throw PuzzleError("start (" + std::to_string(start.x) + "," + std::to_string(start.y) +
                        ") is out of bounds for a " + std::to_string(width_) + "x" +
                        std::to_string(height_) + " grid");
    }
    if (light_index_.size() > static_cast<std::size_t>(kMaxLights)) {
      throw PuzzleError("too many light tiles: " + std::to_string(light_index_.size()) +
                        " (limit " + std::to_string(kMaxLights) + ")");
    }
    light_slot_.assign(tiles_.size(), -1);
    for (std::size_t i = 0; i < light_index_.size(); ++i) {
      light_slot_[index_of(light_index_[i].first, light_index_[i].second)] = static_cast<int>(i);
    }
  }

  // Like the constructor but additionally requires at least one light.
  static Puzzle playable(std::vector<std::vector<Tile>> rows, Pose start, std::string name = {}) {
    Puzzle p(std::move(rows), start, std::move(name));
    if (p.num_lights() == 0) throw PuzzleError("no light tiles");
    return p;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int max_height() const { return max_height_; }
  int num_lights() const { return static_cast<int>(light_index_.size()); }
  const std::string& name() const { return name_; }
  const Pose& start_pose() const { return start_; }
  const std::vector<std::pair<int, int>>& light_index() const { return light_index_; }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  const Tile& tile(int x, int y) const { return tiles_[index_of(x, y)]; }

  // Index into light_index() for the tile, or -1 for a plain tile.
  int light_at(int x, int y) const { return light_slot_[index_of(x, y)]; }

  LightMask full_mask() const {
    return num_lights() == kMaxLights ? ~LightMask{0} : (LightMask{1} << num_lights()) - 1;
  }

  WorldState initial_state() const { return WorldState{start_, 0}; }

  friend bool operator==(const Puzzle& a, const Puzzle& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.tiles_ == b.tiles_ &&
           a.start_ == b.start_ && a.name_ == b.name_;
  }

 private:
  std::size_t index_of(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  std::string name_;
  int width_ = 0;
  int height_ = 0;
  int max_height_ = 0;
  Pose start_;
  std::vector<Tile> tiles_;
  std::vector<std::pair<int, int>> light_index_;
  std::vector<int> light_slot_;
};

// ---------------------------------------------------------------------------
// Dynamics

// Deterministic, total transition. Blocked moves and useless lights leave the
// state unchanged.
inline StepResult step(const Puzzle& puzzle, const WorldState& state, Action action) {
  StepResult out{state, {}};
  Pose& pose = out.state.pose;
  switch (action) {
    case Action::TurnLeft:
      pose.heading = turn_left(pose.heading);
      break;
    case Action::TurnRight:
      pose.heading = turn_right(pose.heading);
      break;
    case Action::Walk:
    case Action::Jump: {
      const int h = static_cast<int>(pose.heading);
      const int nx = pose.x + kDx[static_cast<std::size_t>(h)];
      const int ny = pose.y + kDy[static_cast<std::size_t>(h)];
      if (!puzzle.in_bounds(nx, ny)) break;
      const int delta = puzzle.tile(nx, ny).height - puzzle.tile(pose.x, pose.y).height;
      const bool ok = action == Action::Walk ? delta == 0 : (delta == 1 || delta < 0);
      if (ok) {
        pose.x = nx;
        pose.y = ny;
        out.event.moved = true;
      }
      break;
    }
    case Action::Light: {
      const int slot = puzzle.light_at(pose.x, pose.y);
      if (slot < 0) break;
      const LightMask bit = LightMask{1} << slot;
      if ((out.state.lit & bit) == 0) {
        out.state.lit |= bit;
        out.event.light_turned_on = slot;
      }
      break;
    }
  }
  return out;
}

inline bool is_complete(const Puzzle& puzzle, const WorldState& state) {
  return (state.lit & puzzle.full_mask()) == puzzle.full_mask();
}

inline int lights_on(const WorldState& state) { return std::popcount(state.lit); }

// Binary feature layout: heading one-hot (4) | current height one-hot
// (max_height + 1) | x one-hot (W) | y one-hot (H) | light bits (L).
inline std::size_t encoding_size(const Puzzle& puzzle) {
  return static_cast<std::size_t>(4 + puzzle.max_height() + 1 + puzzle.width() +
                                  puzzle.height() + puzzle.num_lights());
}

inline std::vector<double> encode_state(const Puzzle& puzzle, const WorldState& state) {
  std::vector<double> f(encoding_size(puzzle), 0.0);
  std::size_t off = 0;
  f[off + static_cast<std::size_t>(state.pose.heading)] = 1.0;
  off += 4;
  f[off + static_cast<std::size_t>(puzzle.tile(state.pose.x, state.pose.y).height)] = 1.0;
  off += static_cast<std::size_t>(puzzle.max_height() + 1);
  f[off + static_cast<std::size_t>(state.pose.x)] = 1.0;
  off += static_cast<std::size_t>(puzzle.width());
  f[off + static_cast<std::size_t>(state.pose.y)] = 1.0;
  off += static_cast<std::size_t>(puzzle.height());
  for (int i = 0; i < puzzle.num_lights(); ++i) {
    f[off + static_cast<std::size_t>(i)] = (state.lit >> i) & 1U ? 1.0 : 0.0;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Puzzle file format
//
//   {"width":W,"height":H,"tiles":[[{"h":0,"light":false},...],...],
//    "start":{"x":0,"y":0,"dir":"E"},"name":"..."}
//
// Canonical form: keys in that order, tiles as one array per row, no
// whitespace, a single trailing LF. A flat row-major tile array is accepted
// on input.

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key,
                                     const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw PuzzleError("missing field '" + std::string(key) + "' in " + where);
  return *it;
}

inline int require_int(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_number_integer()) {
    throw PuzzleError("field '" + std::string(key) + "' in " + where + " must be an integer");
  }
  return v.get<int>();
}

inline Tile parse_tile(const nlohmann::json& j, int x, int y) {
  const std::string where = "tile (" + std::to_string(x) + "," + std::to_string(y) + ")";
  if (!j.is_object()) throw PuzzleError(where + " must be an object");
  Tile t;
  t.height = require_int(j, "h", where);
  const auto& light = require(j, "light", where);
  if (!light.is_boolean()) throw PuzzleError("field 'light' in " + where + " must be a boolean");
  t.is_light = light.get<bool>();
  return t;
}

}  // namespace detail

inline Puzzle puzzle_from_json(const nlohmann::json& doc) {
  using detail::require;
  using detail::require_int;
  if (!doc.is_object()) throw PuzzleError("puzzle document must be a JSON object");
  const int width = require_int(doc, "width", "puzzle");
  const int height = require_int(doc, "height", "puzzle");
  if (width < 1 || height < 1) {
    throw PuzzleError("grid dimensions must be at least 1x1, got " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  const auto& tiles = require(doc, "tiles", "puzzle");
  if (!tiles.is_array()) throw PuzzleError("field 'tiles' must be an array");

  std::vector<std::vector<Tile>> rows;
  const bool nested = !tiles.empty() && tiles.front().is_array();
  if (nested) {
    if (static_cast<int>(tiles.size()) != height) {
      throw PuzzleError("grid has " + std::to_string(tiles.size()) + " rows, expected " +
                        std::to_string(height));
    }
    for (int y = 0; y < height; ++y) {
      const auto& row = tiles[static_cast<std::size_t>(y)];
      if (!row.is_array() || static_cast<int>(row.size()) != width) {
        throw PuzzleError("ragged grid: row " + std::to_string(y) + " has " +
                          std::to_string(row.is_array() ? row.size() : 0) + " tiles, expected " +
                          std::to_string(width));
      }
      auto& out = rows.emplace_back();
      for (int x = 0; x < width; ++x) out.push_back(detail::parse_tile(row[static_cast<std::size_t>(x)], x, y));
    }
  } else {
    if (static_cast<int>(tiles.size()) != width * height) {
      throw PuzzleError("ragged grid: " + std::to_string(tiles.size()) + " tiles, expected " +
                        std::to_string(width * height));
    }
    for (int y = 0; y < height; ++y) {
      auto& out = rows.emplace_back();
      for (int x = 0; x < width; ++x) {
        out.push_back(detail::parse_tile(tiles[static_cast<std::size_t>(y * width + x)], x, y));
      }
    }
  }

  const auto& start = require(doc, "start", "puzzle");
  if (!start.is_object()) throw PuzzleError("field 'start' must be an object");
  Pose pose;
  pose.x = require_int(start, "x", "start");
  pose.y = require_int(start, "y", "start");
  const auto& dir = require(start, "dir", "start");
  auto heading = dir.is_string() ? heading_from_char(dir.get<std::string>()) : std::nullopt;
  if (!heading) throw PuzzleError("field 'dir' in start must be one of \"N\",\"E\",\"S\",\"W\"");
  pose.heading = *heading;

  std::string name;
  if (auto it = doc.find("name"); it != doc.end()) {
    if (!it->is_string()) throw PuzzleError("field 'name' must be a string");
    name = it->get<std::string>();
  }
  return Puzzle::playable(std::move(rows), pose, std::move(name));
}

inline Puzzle parse_puzzle(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw PuzzleError(std::string("puzzle is not valid JSON: ") + e.what());
  }
  return puzzle_from_json(doc);
}

inline nlohmann::ordered_json puzzle_to_json(const Puzzle& p) {
  nlohmann::ordered_json doc;
  doc["width"] = p.width();
  doc["height"] = p.height();
  auto rows = nlohmann::ordered_json::array();
  for (int y = 0; y < p.height(); ++y) {
    auto row = nlohmann::ordered_json::array();
    for (int x = 0; x < p.width(); ++x) {
      nlohmann::ordered_json t;
      t["h"] = p.tile(x, y).height;
      t["light"] = p.tile(x, y).is_light;
      row.push_back(std::move(t));
    }
    rows.push_back(std::move(row));
  }
  doc["tiles"] = std::move(rows);
  nlohmann::ordered_json start;
  start["x"] = p.start_pose().x;
  start["y"] = p.start_pose().y;
  start["dir"] = std::string(1, heading_char(p.start_pose().heading));
  doc["start"] = std::move(start);
  doc["name"] = p.name();
  return doc;
}

inline std::string serialize_puzzle(const Puzzle& p) { return puzzle_to_json(p).dump() + "\n"; }

}  // namespace lightbot
