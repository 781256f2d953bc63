#pragma once

// A directory of puzzle files plus manifest.json naming the session layout:
//
//   {"tutorials": ["T1", "T2", "T3"],
//    "blocks": [["P1", "P2", "P3"], ["P4", "P5", "P6"]]}
//
// Each id refers to <id>.json in the same directory. Tutorials run in the
// listed order; each block is shuffled per session.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lightbot/error.hpp"
#include "lightbot/world.hpp"

namespace lightbot {

struct PuzzleSet {
  std::map<std::string, Puzzle> puzzles;
  std::vector<std::string> tutorials;
  std::vector<std::vector<std::string>> blocks;

  const Puzzle& at(const std::string& id) const {
    const auto it = puzzles.find(id);
    if (it == puzzles.end()) throw Error("unknown puzzle '" + id + "'");
    return it->second;
  }

  bool is_tutorial(const std::string& id) const {
    return std::find(tutorials.begin(), tutorials.end(), id) != tutorials.end();
  }

  std::vector<std::string> test_puzzles() const {
    std::vector<std::string> out;
    for (const auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
    return out;
  }
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Puzzle load_puzzle_file(const std::filesystem::path& path) {
  try {
    return parse_puzzle(read_text_file(path));
  } catch (const PuzzleError& e) {
    throw PuzzleError(path.string() + ": " + e.what());
  }
}

inline PuzzleSet load_puzzle_set(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(manifest_path.string() + ": " + e.what());
  }
  PuzzleSet set;
  auto load = [&](const nlohmann::json& id) {
    if (!id.is_string()) throw Error(manifest_path.string() + ": puzzle ids must be strings");
    const auto name = id.get<std::string>();
    if (set.puzzles.count(name)) throw Error(manifest_path.string() + ": puzzle '" + name + "' listed twice");
    set.puzzles.emplace(name, load_puzzle_file(dir / (name + ".json")));
    return name;
  };
  for (const auto& id : manifest.value("tutorials", nlohmann::json::array())) set.tutorials.push_back(load(id));
  for (const auto& block : manifest.value("blocks", nlohmann::json::array())) {
    std::vector<std::string> ids;
    for (const auto& id : block) ids.push_back(load(id));
    if (ids.empty()) throw Error(manifest_path.string() + ": empty block");
    set.blocks.push_back(std::move(ids));
  }
  if (set.puzzles.empty()) throw Error(manifest_path.string() + ": no puzzles listed");
  return set;
}

}  // namespace lightbot
