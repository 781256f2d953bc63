#pragma once

// Experiment backend: sessions, server-side validation and execution, skip
// timing and the append-only event log.
//
// Each session is one JSONL file under <data_dir>/sessions/. Every line is an
// event
//
//   {"session":"s000001","seq":0,"ts":1700000000000,"kind":"session_start","payload":{...}}
//
// with ts in integer milliseconds, non-decreasing within a session. Kinds:
//   session_start         {condition, seed, order}
//   instruction_added     client-supplied payload
//   instruction_removed   client-supplied payload
//   instruction_reordered client-supplied payload
//   test_run              {puzzle, program, valid, completed, status, program_length, flat_length}
//   puzzle_complete       {puzzle, program, program_length, flat_length, duration_ms}
//   puzzle_skipped        {puzzle, elapsed_ms, client_elapsed_ms}
//   session_end           {}
// Session state is never stored separately; it is rebuilt by replaying the
// log, so the log alone is enough to recompute any analysis.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lightbot/condition.hpp"
#include "lightbot/error.hpp"
#include "lightbot/program.hpp"
#include "lightbot/puzzle_set.hpp"

namespace lightbot::service {

using Json = nlohmann::ordered_json;

class NotFound : public Error {
 public:
  using Error::Error;
};

// The request is well-formed but not allowed in the session's current state.
class Conflict : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

// Milliseconds since the Unix epoch.
using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline constexpr std::int64_t kSkipAfterMs = 360'000;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "data";
  std::filesystem::path puzzle_dir = "puzzles";
  std::filesystem::path static_dir;  // empty: no static files served
  // Base seed per condition; a session created without an explicit seed uses
  // base + the number of sessions already in that condition.
  std::map<std::string, std::uint64_t> condition_seeds;
  std::int64_t skip_after_ms = kSkipAfterMs;
  ExecutionLimits limits;
};

// Relative paths in the file are resolved against the file's directory.
inline ServiceConfig load_config(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  ServiceConfig c;
  try {
    c.host = doc.value("host", c.host);
    c.port = doc.value("port", c.port);
    if (doc.contains("data_dir")) c.data_dir = resolve(doc["data_dir"].get<std::string>());
    if (doc.contains("puzzle_dir")) c.puzzle_dir = resolve(doc["puzzle_dir"].get<std::string>());
    if (doc.contains("static_dir")) c.static_dir = resolve(doc["static_dir"].get<std::string>());
    const auto seeds = doc.value("condition_seeds", nlohmann::json::object());
    for (const auto& [cond, seed] : seeds.items()) {
      if (!find_condition(cond)) throw Error("condition_seeds: unknown condition '" + cond + "'");
      c.condition_seeds[cond] = seed.get<std::uint64_t>();
    }
    c.skip_after_ms = doc.value("skip_after_ms", c.skip_after_ms);
    c.limits.max_steps = doc.value("max_steps", c.limits.max_steps);
    c.limits.max_depth = doc.value("max_depth", c.limits.max_depth);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw Error(path.string() + ": port out of range");
  return c;
}

// Tutorials in order, then each block shuffled with a Fisher-Yates pass driven
// directly by mt19937_64 output, whose sequence is fixed by the standard.
inline std::vector<std::string> session_order(const PuzzleSet& set, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> order = set.tutorials;
  for (auto block : set.blocks) {
    for (std::size_t i = block.size(); i > 1; --i) {
      std::swap(block[i - 1], block[static_cast<std::size_t>(rng() % i)]);
    }
    order.insert(order.end(), block.begin(), block.end());
  }
  return order;
}

inline bool is_client_event(std::string_view kind) {
  return kind == "instruction_added" || kind == "instruction_removed" || kind == "instruction_reordered";
}

// ---------------------------------------------------------------------------
// Storage

namespace detail {

// Appends one complete line with a single write() on an O_APPEND descriptor,
// then fsyncs. A crash leaves either the whole line or a partial tail without
// a newline, which load_log_file discards.
inline void append_line(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw StorageError("open " + path.string() + ": " + std::strerror(errno));
  const std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw StorageError("write " + path.string() + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    const int err = errno;
    ::close(fd);
    throw StorageError("fsync " + path.string() + ": " + std::strerror(err));
  }
  ::close(fd);
}

// Complete lines of a log file. A trailing partial line is truncated away so
// that later appends start on a fresh line.
inline std::vector<std::string> load_log_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  const auto last_nl = text.rfind('\n');
  const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (complete < text.size()) std::filesystem::resize_file(path, complete);
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < complete) {
    const auto nl = text.find('\n', pos);
    if (nl > pos) lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sessions

enum class PuzzleOutcome { Pending, Completed, Skipped };

struct Session {
  std::string id;
  ConditionSpec condition;
  std::uint64_t seed = 0;
  std::vector<std::string> order;
  std::vector<PuzzleOutcome> outcomes;
  std::size_t cursor = 0;  // index into order of the active puzzle
  std::int64_t puzzle_start_ms = 0;
  std::int64_t last_ts = 0;
  std::int64_t next_seq = 0;
  std::vector<std::string> lines;  // the log, byte for byte
  std::mutex mutex;  // serializes operations on this session
  bool finished() const { return cursor >= order.size(); }
};

class Service {
 public:
  explicit Service(ServiceConfig config, Clock clock = system_clock_ms)
      : config_(std::move(config)), clock_(std::move(clock)), puzzles_(load_puzzle_set(config_.puzzle_dir)) {
    std::filesystem::create_directories(sessions_dir());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(sessions_dir())) {
      if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto lines = detail::load_log_file(f);
      if (lines.empty()) continue;
      auto s = replay(lines);
      if (s->id != f.stem().string()) throw Error(f.string() + ": log belongs to session " + s->id);
      sessions_.emplace(s->id, std::move(s));
    }
  }

  const ServiceConfig& config() const { return config_; }
  const PuzzleSet& puzzles() const { return puzzles_; }

  Json create_session(const std::string& condition_id, std::optional<std::uint64_t> seed = std::nullopt) {
    const auto spec = find_condition(condition_id);
    if (!spec) throw Error("unknown condition '" + condition_id + "'");
    std::unique_lock lock(registry_);
    if (!seed) {
      const auto base = config_.condition_seeds.count(condition_id) ? config_.condition_seeds.at(condition_id) : 0;
      std::uint64_t n = 0;
      for (const auto& [id, s] : sessions_) n += s->condition.id == condition_id;
      seed = base + n;
    }
    auto s = std::make_shared<Session>();
    s->id = next_session_id();
    s->condition = *spec;
    s->seed = *seed;
    s->order = session_order(puzzles_, *seed);
    s->outcomes.assign(s->order.size(), PuzzleOutcome::Pending);
    Json payload;
    payload["condition"] = spec->id;
    payload["seed"] = *seed;
    payload["order"] = s->order;
    const auto ts = append(*s, "session_start", std::move(payload));
    s->puzzle_start_ms = ts;
    sessions_.emplace(s->id, s);
    return session_view(*s);
  }

  Json get_session(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return session_view(*s);
  }

  // The active puzzle with the affordances the session's condition permits.
  Json get_puzzle(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    if (s->finished()) throw Conflict("session " + id + " is finished");
    const auto& pid = s->order[s->cursor];
    Json out;
    out["puzzle_id"] = pid;
    out["index"] = s->cursor;
    out["total"] = s->order.size();
    out["tutorial"] = puzzles_.is_tutorial(pid);
    out["puzzle"] = puzzle_to_json(puzzles_.at(pid));
    out["affordances"] = affordances(s->condition);
    out["skip_available_in_ms"] = std::max<std::int64_t>(0, config_.skip_after_ms - (now(*s) - s->puzzle_start_ms));
    return out;
  }

  // Validates and runs a program on the active puzzle. Completion advances
  // the session. Invalid programs are reported and logged without running.
  Json submit_program(const std::string& id, const std::string& puzzle_id, const nlohmann::json& program_doc) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    require_active(*s, puzzle_id);
    const Program program = program_from_json(program_doc);
    const Puzzle& puzzle = puzzles_.at(puzzle_id);
    const auto violations = validate_program(program, s->condition);
    const auto length = program_length(program);

    Json out;
    out["valid"] = violations.empty();
    Json log;
    log["puzzle"] = puzzle_id;
    log["program"] = program_to_json(program);
    log["valid"] = violations.empty();
    if (!violations.empty()) {
      Json list = Json::array();
      for (const auto& v : violations) {
        Json j;
        j["proc"] = v.position.proc;
        j["index"] = v.position.index;
        j["message"] = v.message;
        list.push_back(std::move(j));
      }
      out["violations"] = list;
      out["completed"] = false;
      log["violations"] = std::move(list);
      log["completed"] = false;
      log["program_length"] = length;
      append(*s, "test_run", std::move(log));
      out["counter_visible"] = s->condition.counter_visible;
      if (s->condition.counter_visible) out["program_length"] = length;
      return out;
    }

    const auto trace = execute(puzzle, program, config_.limits);
    const bool completed = trace.status == ExecutionStatus::Completed;
    out["trace"] = trace_to_json(puzzle, trace);
    out["completed"] = completed;
    out["counter_visible"] = s->condition.counter_visible;
    if (s->condition.counter_visible) out["program_length"] = length;

    log["completed"] = completed;
    log["status"] = std::string(to_string(trace.status));
    log["program_length"] = length;
    log["flat_length"] = trace.actions.size();
    const auto ts = append(*s, "test_run", std::move(log));

    if (completed) {
      Json done;
      done["puzzle"] = puzzle_id;
      done["program"] = program_to_json(program);
      done["program_length"] = length;
      done["flat_length"] = trace.actions.size();
      done["duration_ms"] = ts - s->puzzle_start_ms;
      append(*s, "puzzle_complete", std::move(done));
      advance(*s, PuzzleOutcome::Completed, ts);
    }
    out["session_finished"] = s->finished();
    if (!s->finished()) out["next_puzzle"] = s->order[s->cursor];
    return out;
  }

  // Skips the active puzzle once the server clock shows skip_after_ms since
  // it started. client_elapsed_ms is logged but never trusted.
  Json skip_puzzle(const std::string& id, const std::string& puzzle_id,
                   std::optional<std::int64_t> client_elapsed_ms = std::nullopt) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    require_active(*s, puzzle_id);
    const std::int64_t ts = now(*s);
    const std::int64_t elapsed = ts - s->puzzle_start_ms;
    Json out;
    if (elapsed < config_.skip_after_ms) {
      const std::int64_t remaining_ms = config_.skip_after_ms - elapsed;
      out["ok"] = false;
      out["remaining_ms"] = remaining_ms;
      out["remaining_seconds"] = (remaining_ms + 999) / 1000;
      return out;
    }
    Json payload;
    payload["puzzle"] = puzzle_id;
    payload["elapsed_ms"] = elapsed;
    payload["client_elapsed_ms"] = client_elapsed_ms ? Json(*client_elapsed_ms) : Json(nullptr);
    const auto logged = append(*s, "puzzle_skipped", std::move(payload));
    advance(*s, PuzzleOutcome::Skipped, logged);
    out["ok"] = true;
    out["session_finished"] = s->finished();
    if (!s->finished()) out["next_puzzle"] = s->order[s->cursor];
    return out;
  }

  // Editor events from the client. Returns the assigned sequence number.
  std::int64_t log_event(const std::string& id, const std::string& kind, const nlohmann::json& payload) {
    if (!is_client_event(kind)) throw Error("event kind '" + kind + "' cannot be logged by clients");
    if (!payload.is_object()) throw Error("event payload must be an object");
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    const auto seq = s->next_seq;
    append(*s, kind, Json(payload));
    return seq;
  }

  struct ExportFilter {
    std::optional<std::string> condition;
    std::optional<std::string> session;
  };

  // JSONL of every matching session, sessions in id order, each log verbatim.
  // All matching sessions are locked together so the export is one snapshot.
  std::string export_sessions(const ExportFilter& filter = {}) {
    std::shared_lock lock(registry_);
    std::vector<std::shared_ptr<Session>> chosen;
    for (const auto& [id, s] : sessions_) {
      if (filter.session && id != *filter.session) continue;
      if (filter.condition && s->condition.id != *filter.condition) continue;
      chosen.push_back(s);
    }
    std::vector<std::unique_lock<std::mutex>> held;
    for (const auto& s : chosen) held.emplace_back(s->mutex);
    std::string out;
    for (const auto& s : chosen) {
      for (const auto& line : s->lines) {
        out += line;
        out += '\n';
      }
    }
    return out;
  }

  // Loads exported JSONL. Every session must be new to this service and its
  // log must replay cleanly; nothing is written unless all of them do.
  std::vector<std::string> import_sessions(const std::string& jsonl) {
    std::map<std::string, std::vector<std::string>> by_session;
    std::vector<std::string> order;
    std::istringstream in(jsonl);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::string sid;
      try {
        sid = nlohmann::json::parse(line).at("session").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw Error("import line " + std::to_string(line_no) + ": " + e.what());
      }
      if (!by_session.count(sid)) order.push_back(sid);
      by_session[sid].push_back(line);
    }
    std::unique_lock lock(registry_);
    std::vector<std::shared_ptr<Session>> loaded;
    for (const auto& sid : order) {
      if (sessions_.count(sid)) throw Conflict("session " + sid + " already exists");
      loaded.push_back(replay(by_session[sid]));
    }
    for (const auto& s : loaded) {
      const auto path = log_path(s->id);
      if (std::filesystem::exists(path)) throw Conflict("log file for " + s->id + " already exists");
      std::string text;
      for (const auto& l : s->lines) text += l + "\n";
      detail::append_line(path, text.substr(0, text.size() - 1));
      sessions_.emplace(s->id, s);
    }
    return order;
  }

  std::vector<std::string> session_ids() {
    std::shared_lock lock(registry_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
  }

 private:
  std::filesystem::path sessions_dir() const { return config_.data_dir / "sessions"; }
  std::filesystem::path log_path(const std::string& id) const { return sessions_dir() / (id + ".jsonl"); }

  std::string next_session_id() const {
    int n = 0;
    for (const auto& [id, s] : sessions_) {
      if (id.size() == 7 && id[0] == 's') n = std::max(n, std::stoi(id.substr(1)));
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%06d", n + 1);
    return buf;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::shared_lock lock(registry_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("no session '" + id + "'");
    return it->second;
  }

  std::int64_t now(const Session& s) const { return std::max(clock_(), s.last_ts); }

  void require_active(const Session& s, const std::string& puzzle_id) const {
    if (s.finished()) throw Conflict("session " + s.id + " is finished");
    if (s.order[s.cursor] != puzzle_id) {
      throw Conflict("puzzle " + puzzle_id + " is not active in session " + s.id + " (active: " +
                     s.order[s.cursor] + ")");
    }
  }

  // Writes the event durably, then records it in memory. Returns its ts.
  std::int64_t append(Session& s, const std::string& kind, Json payload) {
    const std::int64_t ts = now(s);
    Json ev;
    ev["session"] = s.id;
    ev["seq"] = s.next_seq;
    ev["ts"] = ts;
    ev["kind"] = kind;
    ev["payload"] = std::move(payload);
    const std::string line = ev.dump();
    detail::append_line(log_path(s.id), line);
    s.lines.push_back(line);
    s.last_ts = ts;
    ++s.next_seq;
    return ts;
  }

  void advance(Session& s, PuzzleOutcome outcome, std::int64_t ts) {
    s.outcomes[s.cursor] = outcome;
    ++s.cursor;
    s.puzzle_start_ms = ts;
    if (s.finished()) append(s, "session_end", Json::object());
  }

  Json affordances(const ConditionSpec& c) const {
    Json a;
    a["condition"] = c.id;
    a["efficiency_instructions"] = c.efficiency_instructions;
    a["counter_visible"] = c.counter_visible;
    if (c.hierarchical()) a["subprocess_frames"] = c.subprocesses_allowed;
    return a;
  }

  Json session_view(const Session& s) const {
    Json v;
    v["session_id"] = s.id;
    v["affordances"] = affordances(s.condition);
    v["seed"] = s.seed;
    v["order"] = s.order;
    v["cursor"] = s.cursor;
    v["finished"] = s.finished();
    Json outcomes = Json::array();
    for (auto o : s.outcomes) {
      outcomes.push_back(o == PuzzleOutcome::Completed ? "completed" : o == PuzzleOutcome::Skipped ? "skipped" : "pending");
    }
    v["outcomes"] = std::move(outcomes);
    return v;
  }

  // Rebuilds a session from its log lines, checking sequence numbers,
  // timestamps and that every puzzle event refers to the active puzzle.
  std::shared_ptr<Session> replay(const std::vector<std::string>& lines) const {
    auto s = std::make_shared<Session>();
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto where = [&] { return "session log line " + std::to_string(i + 1) + ": "; };
      nlohmann::json ev;
      try {
        ev = nlohmann::json::parse(lines[i]);
        const auto sid = ev.at("session").get<std::string>();
        const auto seq = ev.at("seq").get<std::int64_t>();
        const auto ts = ev.at("ts").get<std::int64_t>();
        const auto kind = ev.at("kind").get<std::string>();
        const auto& payload = ev.at("payload");
        if (i == 0) {
          if (kind != "session_start") throw Error("log does not begin with session_start");
          const auto spec = find_condition(payload.at("condition").get<std::string>());
          if (!spec) throw Error("unknown condition");
          s->id = sid;
          s->condition = *spec;
          s->seed = payload.at("seed").get<std::uint64_t>();
          s->order = payload.at("order").get<std::vector<std::string>>();
          for (const auto& pid : s->order) puzzles_.at(pid);
          s->outcomes.assign(s->order.size(), PuzzleOutcome::Pending);
          s->puzzle_start_ms = ts;
        } else {
          if (sid != s->id) throw Error("event for session " + sid + " in log of " + s->id);
          if (ts < s->last_ts) throw Error("timestamp goes backwards");
          if (kind == "puzzle_complete" || kind == "puzzle_skipped") {
            if (s->finished() || payload.at("puzzle").get<std::string>() != s->order[s->cursor]) {
              throw Error(kind + " for a puzzle that is not active");
            }
            s->outcomes[s->cursor] = kind == "puzzle_complete" ? PuzzleOutcome::Completed : PuzzleOutcome::Skipped;
            ++s->cursor;
            s->puzzle_start_ms = ts;
          } else if (kind != "test_run" && kind != "session_end" && !is_client_event(kind)) {
            throw Error("unknown event kind '" + kind + "'");
          }
        }
        if (seq != static_cast<std::int64_t>(i)) throw Error("sequence number " + std::to_string(seq) + " out of order");
        s->last_ts = ts;
        s->next_seq = seq + 1;
        s->lines.push_back(lines[i]);
      } catch (const nlohmann::json::exception& e) {
        throw Error(where() + e.what());
      } catch (const Error& e) {
        throw Error(where() + e.what());
      }
    }
    return s;
  }

  ServiceConfig config_;
  Clock clock_;
  PuzzleSet puzzles_;
  std::shared_mutex registry_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// ---------------------------------------------------------------------------
// Replay check

struct ReplayReport {
  int test_runs = 0;
  int mismatches = 0;
  std::vector<std::string> details;
};

// Re-executes every logged test_run against its puzzle and compares the
// validity and completion flags with the logged ones.
inline ReplayReport verify_replay(std::istream& in, const PuzzleSet& set, const ExecutionLimits& limits = {}) {
  ReplayReport report;
  std::map<std::string, ConditionSpec> condition_of;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto ev = nlohmann::json::parse(line);
    const auto sid = ev.at("session").get<std::string>();
    const auto kind = ev.at("kind").get<std::string>();
    const auto& payload = ev.at("payload");
    if (kind == "session_start") {
      condition_of[sid] = *find_condition(payload.at("condition").get<std::string>());
      continue;
    }
    if (kind != "test_run") continue;
    ++report.test_runs;
    const auto pid = payload.at("puzzle").get<std::string>();
    const Program program = program_from_json(payload.at("program"));
    const bool valid = validate_program(program, condition_of.at(sid)).empty();
    const bool completed = valid && execute(set.at(pid), program, limits).status == ExecutionStatus::Completed;
    if (valid != payload.at("valid").get<bool>() || completed != payload.at("completed").get<bool>()) {
      ++report.mismatches;
      report.details.push_back(sid + " seq " + std::to_string(ev.at("seq").get<std::int64_t>()) + " on " + pid);
    }
  }
  return report;
}

}  // namespace lightbot::service
