#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "lightbot/analysis.hpp"
#include "lightbot/service.hpp"
#include "test_util.hpp"

namespace lightbot::service {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("lightbot_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct FakeClock {
  std::shared_ptr<std::atomic<std::int64_t>> now = std::make_shared<std::atomic<std::int64_t>>(1'700'000'000'000);
  Clock fn() const {
    auto n = now;
    return [n] { return n->load(); };
  }
  void advance_ms(std::int64_t ms) { *now += ms; }
};

ServiceConfig config_for(const TempDir& dir) {
  ServiceConfig c;
  c.data_dir = dir.path / "data";
  c.puzzle_dir = testing::source_path("puzzles");
  return c;
}

nlohmann::json program(const std::string& text) { return nlohmann::json::parse(text); }

std::string optimal_program(const Service& svc, const std::string& puzzle) {
  return program_to_json(Program::flat(*bfs_shortest(svc.puzzles().at(puzzle)))).dump();
}

// Completes the active puzzle with its optimal flat solution.
Json solve_active(Service& svc, const std::string& id) {
  const auto pid = svc.get_puzzle(id)["puzzle_id"].get<std::string>();
  return svc.submit_program(id, pid, program(optimal_program(svc, pid)));
}

TEST(Session, OrderFollowsBlockStructure) {
  TempDir dir;
  FakeClock clock;
  Service svc(config_for(dir), clock.fn());
  std::set<std::vector<std::string>> seen;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = svc.create_session("EfficientFlat", seed);
    const auto order = s["order"].get<std::vector<std::string>>();
    ASSERT_EQ(order.size(), 9U);
    EXPECT_EQ(std::vector<std::string>(order.begin(), order.begin() + 3),
              (std::vector<std::string>{"T1", "T2", "T3"}));
    EXPECT_EQ(std::set<std::string>(order.begin() + 3, order.begin() + 6),
              (std::set<std::string>{"P1", "P2", "P3"}));
    EXPECT_EQ(std::set<std::string>(order.begin() + 6, order.end()), (std::set<std::string>{"P4", "P5", "P6"}));
    EXPECT_EQ(order, session_order(svc.puzzles(), seed));
    seen.insert(order);
  }
  EXPECT_GT(seen.size(), 10U);  // shuffles actually vary with the seed
  const auto a = svc.create_session("DefaultFlat", 99);
  const auto b = svc.create_session("DefaultHierarchy", 99);
  EXPECT_EQ(a["order"], b["order"]);
  EXPECT_THROW(svc.create_session("Nope", 1), Error);
}

TEST(Session, DefaultSeedsComeFromConfig) {
  TempDir dir;
  auto cfg = config_for(dir);
  cfg.condition_seeds["DefaultFlat"] = 1000;
  Service svc(cfg);
  EXPECT_EQ(svc.create_session("DefaultFlat")["seed"], 1000);
  EXPECT_EQ(svc.create_session("DefaultFlat")["seed"], 1001);
  EXPECT_EQ(svc.create_session("EfficientFlat")["seed"], 0);
}

TEST(Submit, FlatConditionRejectsCalls) {
  TempDir dir;
  Service svc(config_for(dir));
  const auto id = svc.create_session("EfficientFlat", 1)["session_id"].get<std::string>();
  const auto r = svc.submit_program(id, "T1", program(R"({"main":["call1"],"procs":[["walk"]]})"));
  EXPECT_FALSE(r["valid"]);
  EXPECT_FALSE(r.contains("trace"));
  ASSERT_EQ(r["violations"].size(), 2U);
  EXPECT_EQ(r["violations"][0]["message"], "subprocess use not permitted");
  EXPECT_EQ(svc.get_session(id)["cursor"], 0);
}

TEST(Submit, CompletionAdvancesAndFailureReturnsTrace) {
  TempDir dir;
  Service svc(config_for(dir));
  const auto id = svc.create_session("DefaultHierarchy", 1)["session_id"].get<std::string>();
  auto r = svc.submit_program(id, "T1", program(R"({"main":["walk","light"]})"));
  EXPECT_TRUE(r["valid"]);
  EXPECT_FALSE(r["completed"]);
  EXPECT_EQ(r["trace"]["status"], "program_ended");
  EXPECT_EQ(r["trace"]["frames"].size(), 3U);
  EXPECT_EQ(svc.get_session(id)["cursor"], 0);

  r = svc.submit_program(id, "T1", program(R"({"main":["walk","walk","light"]})"));
  EXPECT_TRUE(r["completed"]);
  EXPECT_EQ(r["next_puzzle"], "T2");
  EXPECT_EQ(svc.get_session(id)["cursor"], 1);
  EXPECT_EQ(svc.get_session(id)["outcomes"][0], "completed");
  EXPECT_THROW(svc.submit_program(id, "T1", program(R"({"main":["walk"]})")), Conflict);
  EXPECT_THROW(svc.submit_program(id, "T2", program(R"({"main":["nope"]})")), ProgramError);
}

TEST(Submit, ConditionIsolation) {
  TempDir dir;
  Service svc(config_for(dir));
  std::mt19937_64 rng(31);
  for (const auto& spec : bundled_conditions()) {
    const auto s = svc.create_session(spec.id, 3);
    const auto id = s["session_id"].get<std::string>();
    for (const auto& view : {s, svc.get_puzzle(id), svc.get_session(id)}) {
      EXPECT_EQ(view.dump().find("subprocess_frames") != std::string::npos, spec.hierarchical()) << spec.id;
    }
    for (int i = 0; i < 20; ++i) {
      Program p;
      for (int k = 0; k < 1 + static_cast<int>(rng() % 5); ++k) {
        p.main.push_back(rng() % 4 == 0 ? Instruction::call(1) : Instruction::primitive(static_cast<Action>(rng() % 5)));
      }
      p.procs = {{Instruction::primitive(Action::Walk)}};
      const auto r = svc.submit_program(id, svc.get_puzzle(id)["puzzle_id"], program_to_json(p));
      EXPECT_EQ(r.contains("program_length"), spec.counter_visible) << spec.id;
      if (spec.counter_visible) {
        EXPECT_EQ(r["program_length"], program_length(p));
      }
      EXPECT_EQ(r["counter_visible"], spec.counter_visible);
      EXPECT_EQ(r.dump().find("subprocess_frames"), std::string::npos);
    }
  }
}

TEST(Skip, ServerClockDecides) {
  TempDir dir;
  FakeClock clock;
  Service svc(config_for(dir), clock.fn());
  const auto id = svc.create_session("DefaultFlat", 1)["session_id"].get<std::string>();
  clock.advance_ms(359'000);
  auto r = svc.skip_puzzle(id, "T1", 400'000);  // the client's claim is ignored
  EXPECT_FALSE(r["ok"]);
  EXPECT_EQ(r["remaining_seconds"], 1);
  EXPECT_EQ(svc.get_puzzle(id)["skip_available_in_ms"], 1000);
  clock.advance_ms(1'000);
  r = svc.skip_puzzle(id, "T1", 0);
  EXPECT_TRUE(r["ok"]);
  EXPECT_EQ(r["next_puzzle"], "T2");
  // The next puzzle's timer starts at the skip.
  EXPECT_FALSE(svc.skip_puzzle(id, "T2")["ok"]);

  std::istringstream log(svc.export_sessions());
  const auto loaded = analysis::load_records(log);
  EXPECT_EQ(loaded.skipped, 1);
  EXPECT_TRUE(loaded.records.empty());
}

TEST(Events, LoggedInOrderAndFilteredExport) {
  TempDir dir;
  FakeClock clock;
  Service svc(config_for(dir), clock.fn());
  const auto a = svc.create_session("EfficientFlat", 1)["session_id"].get<std::string>();
  const auto b = svc.create_session("DefaultFlat", 2)["session_id"].get<std::string>();
  EXPECT_EQ(svc.log_event(a, "instruction_added", {{"n", 1}}), 1);
  EXPECT_EQ(svc.log_event(a, "instruction_reordered", {{"n", 2}}), 2);
  EXPECT_EQ(svc.log_event(a, "instruction_removed", {{"n", 3}}), 3);
  EXPECT_THROW(svc.log_event(a, "puzzle_complete", nlohmann::json::object()), Error);
  EXPECT_THROW(svc.log_event("s999999", "instruction_added", nlohmann::json::object()), NotFound);

  const auto text = svc.export_sessions({std::string("EfficientFlat"), std::nullopt});
  std::istringstream in(text);
  std::vector<int> client;
  int lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const auto ev = nlohmann::json::parse(line);
    EXPECT_EQ(ev["session"], a);
    if (is_client_event(ev["kind"].get<std::string>())) client.push_back(ev["payload"]["n"]);
  }
  EXPECT_EQ(client, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(lines, 4);
  EXPECT_NE(svc.export_sessions({std::nullopt, b}).find("DefaultFlat"), std::string::npos);
}

TEST(Events, TimestampsNeverGoBackwards) {
  TempDir dir;
  FakeClock clock;
  Service svc(config_for(dir), clock.fn());
  const auto id = svc.create_session("EfficientFlat", 1)["session_id"].get<std::string>();
  clock.advance_ms(-5'000);
  svc.log_event(id, "instruction_added", nlohmann::json::object());
  std::istringstream in(svc.export_sessions());
  std::int64_t last = 0;
  for (std::string line; std::getline(in, line);) {
    const auto ts = nlohmann::json::parse(line)["ts"].get<std::int64_t>();
    EXPECT_GE(ts, last);
    last = ts;
  }
}

TEST(Persistence, RestartRebuildsStateAndDropsTornTail) {
  TempDir dir;
  FakeClock clock;
  std::string id;
  std::string before;
  {
    Service svc(config_for(dir), clock.fn());
    id = svc.create_session("EfficientHierarchy", 5)["session_id"].get<std::string>();
    solve_active(svc, id);
    solve_active(svc, id);
    svc.log_event(id, "instruction_added", {{"token", "walk"}});
    before = svc.export_sessions();
  }
  const auto log_file = dir.path / "data" / "sessions" / (id + ".jsonl");
  {
    std::ofstream out(log_file, std::ios::app | std::ios::binary);
    out << R"({"session":")" << id << R"(","seq":6,"ts":17)";  // crash mid-append
  }
  Service svc(config_for(dir), clock.fn());
  EXPECT_EQ(svc.export_sessions(), before);
  EXPECT_EQ(svc.get_session(id)["cursor"], 2);
  svc.log_event(id, "instruction_removed", nlohmann::json::object());
  const auto lines = testing::read_file(log_file.string());
  EXPECT_EQ(lines.substr(0, before.size()), before);
  EXPECT_EQ(nlohmann::json::parse(lines.substr(before.size()))["seq"], 6);
}

TEST(Persistence, ExportImportRoundTripsByteForByte) {
  TempDir src_dir, dst_dir;
  FakeClock clock;
  Service src(config_for(src_dir), clock.fn());
  for (const auto& spec : bundled_conditions()) {
    const auto id = src.create_session(spec.id, 11)["session_id"].get<std::string>();
    solve_active(src, id);
    clock.advance_ms(1234);
    src.log_event(id, "instruction_added", {{"token", "jump"}, {"note", "ünïcode"}});
    src.submit_program(id, src.get_puzzle(id)["puzzle_id"], program(R"({"main":["jump"]})"));
  }
  const auto exported = src.export_sessions();
  Service dst(config_for(dst_dir), clock.fn());
  EXPECT_EQ(dst.import_sessions(exported).size(), 4U);
  EXPECT_EQ(dst.export_sessions(), exported);
  EXPECT_THROW(dst.import_sessions(exported), Conflict);
  // A restarted service sees the imported logs unchanged.
  Service again(config_for(dst_dir), clock.fn());
  EXPECT_EQ(again.export_sessions(), exported);
  EXPECT_EQ(again.get_session("s000001")["cursor"], 1);
}

TEST(Persistence, ImportRejectsInconsistentLogs) {
  TempDir dir;
  Service svc(config_for(dir));
  const std::string start =
      R"({"session":"s000009","seq":0,"ts":5,"kind":"session_start","payload":{"condition":"DefaultFlat","seed":1,"order":["T1"]}})";
  EXPECT_THROW(svc.import_sessions(start + "\n" + R"({"session":"s000009","seq":2,"ts":6,"kind":"session_end","payload":{}})"),
               Error);
  EXPECT_THROW(svc.import_sessions(start + "\n" + R"({"session":"s000009","seq":1,"ts":4,"kind":"session_end","payload":{}})"),
               Error);
  EXPECT_THROW(svc.import_sessions(start + "\n" +
                                   R"({"session":"s000009","seq":1,"ts":6,"kind":"puzzle_skipped","payload":{"puzzle":"T2"}})"),
               Error);
  EXPECT_TRUE(svc.session_ids().empty());
}

TEST(Replay, LoggedCompletionFlagsAreReproduced) {
  TempDir dir;
  FakeClock clock;
  Service svc(config_for(dir), clock.fn());
  const auto id = svc.create_session("EfficientHierarchy", 2)["session_id"].get<std::string>();
  svc.submit_program(id, "T1", program(R"({"main":["walk"]})"));
  svc.submit_program(id, "T1", program(R"({"main":["call3"]})"));
  solve_active(svc, id);
  const auto text = svc.export_sessions();
  std::istringstream in(text);
  const auto report = verify_replay(in, svc.puzzles());
  EXPECT_EQ(report.test_runs, 3);
  EXPECT_EQ(report.mismatches, 0);

  // Flip one logged flag: the replay notices.
  auto tampered = text;
  const auto pos = tampered.find(R"("completed":true)");
  ASSERT_NE(pos, std::string::npos);
  tampered.replace(pos, 16, R"("completed":false)");
  std::istringstream bad(tampered);
  EXPECT_EQ(verify_replay(bad, svc.puzzles()).mismatches, 1);
}

TEST(Concurrency, ParallelSessionsKeepOrderedLogs) {
  TempDir dir;
  Service svc(config_for(dir));
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(svc.create_session("DefaultHierarchy", i)["session_id"]);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        const auto& id = ids[static_cast<std::size_t>((t + i) % 4)];
        if (i % 5 == 0) {
          try {
            solve_active(svc, id);
          } catch (const Conflict&) {
            // another thread finished this puzzle or the session first
          }
        } else {
          svc.log_event(id, "instruction_added", {{"thread", t}, {"i", i}});
        }
        if (t == 0 && i % 10 == 0) svc.export_sessions();
      }
    });
  }
  for (auto& th : threads) th.join();
  std::istringstream in(svc.export_sessions());
  std::map<std::string, std::int64_t> next;
  std::int64_t client = 0;
  for (std::string line; std::getline(in, line);) {
    const auto ev = nlohmann::json::parse(line);
    EXPECT_EQ(ev["seq"].get<std::int64_t>(), next[ev["session"]]++);
    client += ev["kind"] == "instruction_added";
  }
  EXPECT_EQ(client, 8 * 20);
  Service reloaded(config_for(dir));
  EXPECT_EQ(reloaded.export_sessions(), svc.export_sessions());
}

TEST(Config, LoadsAndResolvesRelativePaths) {
  TempDir dir;
  const auto path = dir.path / "service.json";
  std::ofstream(path) << R"({"port": 9090, "data_dir": "d", "puzzle_dir": "/abs/puzzles",
                            "condition_seeds": {"EfficientFlat": 7}})";
  const auto c = load_config(path);
  EXPECT_EQ(c.port, 9090);
  EXPECT_EQ(c.data_dir, dir.path / "d");
  EXPECT_EQ(c.puzzle_dir, fs::path("/abs/puzzles"));
  EXPECT_EQ(c.condition_seeds.at("EfficientFlat"), 7U);
  std::ofstream(path) << R"({"condition_seeds": {"Bogus": 1}})";
  EXPECT_THROW(load_config(path), Error);
}

}  // namespace
}  // namespace lightbot::service
