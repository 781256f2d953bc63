// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fail. Tolerances and budgets are fixed here.

#include <atomic>
#include <bit>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "../gradcheck.hpp"
#include "../puzzle_family.hpp"
#include "../test_util.hpp"
#include "lightbot/analysis.hpp"
#include "lightbot/compress.hpp"
#include "lightbot/ppo.hpp"
#include "lightbot/program.hpp"
#include "lightbot/puzzle_set.hpp"
#include "lightbot/service.hpp"
#include "lightbot/solver_exact.hpp"

namespace {

using namespace lightbot;
using Clock = std::chrono::steady_clock;

constexpr double kCompressBudgetS = 30.0;
constexpr double kFamilyBudgetS = 120.0;
constexpr double kPpoBudgetS = 600.0;  // per puzzle
constexpr int kPpoSeeds = 10;
constexpr int kPpoRequired = 8;
constexpr int kPpoRollouts = 100;
constexpr double kGradTolerance = 1e-4;
constexpr int kGradConfigs = 20;
constexpr double kWelchExpected = -2.83;
constexpr double kWelchTolerance = 0.01;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<Action> parse_actions(const std::string& letters) {
  std::vector<Action> out;
  for (char c : letters) {
    switch (c) {
      case 'W': out.push_back(Action::Walk); break;
      case 'J': out.push_back(Action::Jump); break;
      case 'L': out.push_back(Action::TurnLeft); break;
      case 'R': out.push_back(Action::TurnRight); break;
      case 'T': out.push_back(Action::Light); break;
    }
  }
  return out;
}

Outcome compression_reconstruction() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> len(2, 200), sym(0, kNumActions - 1);
  int exact = 0, prefix = 0, bad = 0;
  std::size_t max_procs = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<Action> s(static_cast<std::size_t>(len(rng)));
    // Half the sequences repeat a random motif so the extractor has work to do.
    if (i % 2 == 0) {
      std::vector<Action> motif(static_cast<std::size_t>(2 + rng() % 6));
      for (auto& a : motif) a = static_cast<Action>(sym(rng));
      for (std::size_t k = 0; k < s.size(); ++k) s[k] = rng() % 8 == 0 ? static_cast<Action>(sym(rng)) : motif[k % motif.size()];
    } else {
      for (auto& a : s) a = static_cast<Action>(sym(rng));
    }
    const auto r = compress(s);
    max_procs = std::max(max_procs, r.program.procs.size());
    const auto f = flatten(r.program, ExecutionLimits{static_cast<int>(s.size()) * 4, 1000});
    if (!r.recursion_applied) {
      if (f.actions == s && !f.truncated) {
        ++exact;
      } else {
        ++bad;
      }
    } else if (f.actions.size() >= s.size() && std::equal(s.begin(), s.end(), f.actions.begin())) {
      ++prefix;
    } else {
      ++bad;
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << exact << " exact, " << prefix << " recursive prefix, " << bad << " bad, max procs " << max_procs << ", "
    << secs << " s of " << kCompressBudgetS;
  return {bad == 0 && max_procs <= kMaxProcs && secs < kCompressBudgetS, d.str()};
}

Outcome compression_example() {
  const auto a = compress(parse_actions("WWTWWTWWT"));
  const auto b = compress(parse_actions("WTJL"));
  std::ostringstream d;
  d << "WWTx3 -> length " << a.compressed_length << ", " << a.compressibility.str() << ", recursion "
    << a.recursion_applied << "; WTJL -> " << b.compressibility.str();
  return {a.compressed_length == 5 && a.compressibility == Rational::make(4, 9) && a.recursion_applied &&
              b.compressibility == Rational{0, 1},
          d.str()};
}

Outcome demo_relation() {
  const Program prog = parse_program(testing::read_file(testing::source_path("programs/nested_demo.json")));
  const Puzzle puzzle = load_puzzle_file(testing::source_path("programs/nested_demo_puzzle.json"));
  const auto flat = flatten(prog);
  const auto run = execute(puzzle, prog);
  const auto c = compressibility(flat.actions.size(), program_length(prog));
  std::ostringstream d;
  d << "program length " << program_length(prog) << ", flattened " << flat.actions.size() << ", executes "
    << run.actions.size() << " (" << to_string(run.status) << "), compressibility " << c.str();
  return {program_length(prog) == 13 && flat.actions.size() == 38 && !flat.truncated && run.completed() &&
              run.actions.size() == 38 && c == Rational::make(25, 38),
          d.str()};
}

Outcome solver_optimality() {
  const auto t0 = Clock::now();
  long puzzles = 0, compared = 0, unsolvable = 0, mismatches = 0;
  testing::for_each_family_puzzle([&](const Puzzle& p) {
    ++puzzles;
    const auto bfs = bfs_shortest(p);
    const auto e = enumerate_shortest(p, 10);
    if (!bfs) ++unsolvable;
    if (!e) {
      // Enumeration found nothing within 10; BFS must agree there is nothing that short.
      if (bfs && bfs->size() <= 10) ++mismatches;
      return;
    }
    ++compared;
    if (!bfs || static_cast<int>(bfs->size()) != e->length) ++mismatches;
    if (bfs) {
      const auto t = execute(p, Program::flat(*bfs));
      if (!t.completed() || t.actions.size() != bfs->size()) ++mismatches;
    }
  });
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << puzzles << " puzzles, " << compared << " compared, " << unsolvable << " unsolvable, " << mismatches
    << " mismatches, " << secs << " s of " << kFamilyBudgetS;
  return {mismatches == 0 && compared > 0 && secs < kFamilyBudgetS, d.str()};
}

Outcome ppo_sanity(const std::string& file) {
  const auto t0 = Clock::now();
  const Puzzle p = load_puzzle_file(testing::source_path("puzzles/mini/" + file));
  const auto optimal = bfs_shortest(p)->size();
  int hits = 0;
  std::ostringstream lens;
  for (int seed = 0; seed < kPpoSeeds; ++seed) {
    ppo::Hyperparams h;
    h.seed = static_cast<std::uint64_t>(seed);
    std::size_t got = 0;
    try {
      const auto result = ppo::train(p, h);
      ppo::Rng rng(h.seed ^ 0x9e3779b97f4a7c15ULL);
      got = ppo::best_of_rollouts(result.net, p, kPpoRollouts, h.episode_cap, rng).size();
    } catch (const ppo::TrainingError&) {
      got = 0;
    }
    lens << (seed ? "," : "") << got;
    if (got == optimal) ++hits;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << file << ": optimal " << optimal << ", best-of-" << kPpoRollouts << " lengths [" << lens.str() << "], " << hits
    << "/" << kPpoSeeds << " optimal (need " << kPpoRequired << "), " << secs << " s of " << kPpoBudgetS;
  return {hits >= kPpoRequired && secs < kPpoBudgetS, d.str()};
}

Outcome gradient_checks() {
  ppo::Rng rng(77);
  std::uniform_int_distribution<int> in_size(3, 12), hid_size(2, 16), batch_size(1, 6);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < kGradConfigs; ++c) {
    const auto in = static_cast<std::size_t>(in_size(rng));
    const auto hid = static_cast<std::size_t>(hid_size(rng));
    nn::Mlp pnet(in, hid, kNumActions), vnet(in, hid, 1);
    for (auto& w : pnet.params()) w = 0.6 * normal(rng);
    for (auto& w : vnet.params()) w = 0.6 * normal(rng);
    std::vector<ppo::Sample> batch(static_cast<std::size_t>(batch_size(rng)));
    for (auto& s : batch) {
      s.features.resize(in);
      for (auto& v : s.features) v = unif(rng);
      s.action = static_cast<Action>(rng() % kNumActions);
      s.old_log_prob = ppo::log_prob(pnet, s.features, s.action) + 0.4 * normal(rng);
      s.advantage = normal(rng);
      s.target_return = normal(rng);
    }
    auto x = batch[0].features;
    const Action a = batch[0].action;
    worst = std::max(worst, testing::max_relative_error(x, [&] { return ppo::log_prob(pnet, x, a); },
                                                        ppo::log_prob_input_gradient(pnet, x, a)));
    worst = std::max(worst, testing::max_relative_error(pnet.params(), [&] { return ppo::log_prob(pnet, x, a); },
                                                        ppo::log_prob_param_gradient(pnet, x, a)));
    const double clip = 0.1 + 0.2 * (unif(rng) + 1.0) / 2.0;
    std::vector<double> g(pnet.params().size(), 0.0);
    ppo::policy_loss(pnet, batch, clip, 0.01, &g);
    worst = std::max(worst, testing::max_relative_error(
                                pnet.params(), [&] { return ppo::policy_loss(pnet, batch, clip, 0.01, nullptr).loss; }, g));
    std::vector<double> gv(vnet.params().size(), 0.0);
    ppo::value_loss(vnet, batch, &gv);
    worst = std::max(worst, testing::max_relative_error(vnet.params(),
                                                        [&] { return ppo::value_loss(vnet, batch, nullptr); }, gv));
  }
  std::ostringstream d;
  d << kGradConfigs << " configurations, max relative error " << worst << " (limit " << kGradTolerance << ")";
  return {worst <= kGradTolerance, d.str()};
}

Outcome interpreter_semantics() {
  // main: call1; proc1: light, walk, call1
  const Program prog{{Instruction::call(1)},
                     {{Instruction::primitive(Action::Light), Instruction::primitive(Action::Walk), Instruction::call(1)}}};
  const Puzzle open = testing::make_puzzle({{0, 0, 0, 0}}, {{0, 0}, {1, 0}, {2, 0}, {3, 0}}, {0, 0, Heading::East});
  const Puzzle blocked = testing::make_puzzle({{0, 0, 0, 2}}, {{0, 0}, {3, 0}}, {0, 0, Heading::East});

  // Oracle: walk the unrolled action stream by hand and stop at the first completing state.
  auto first_completion = [](const Puzzle& p, int budget) {
    WorldState s = p.initial_state();
    const std::vector<Action> cycle = {Action::Light, Action::Walk};
    for (int i = 0; i < budget; ++i) {
      s = step(p, s, cycle[static_cast<std::size_t>(i) % 2]).state;
      if (is_complete(p, s)) return i + 1;
    }
    return -1;
  };

  const auto done = execute(open, prog);
  const ExecutionLimits small{500, 1000};
  const auto stuck = execute(blocked, prog, small);
  const auto stuck_default = execute(blocked, prog);
  std::ostringstream d;
  d << "completes after " << done.actions.size() << " (oracle " << first_completion(open, 100) << "), uncompletable stops at "
    << stuck.actions.size() << "/" << small.max_steps << " and " << stuck_default.actions.size() << "/"
    << ExecutionLimits{}.max_steps << " with " << to_string(stuck.status);
  return {done.completed() && static_cast<int>(done.actions.size()) == first_completion(open, 100) &&
              stuck.status == ExecutionStatus::StepBudgetExhausted &&
              static_cast<int>(stuck.actions.size()) == small.max_steps &&
              stuck_default.status == ExecutionStatus::StepBudgetExhausted &&
              static_cast<int>(stuck_default.actions.size()) == ExecutionLimits{}.max_steps,
          d.str()};
}

struct ScriptedPolicy {
  const std::vector<Action>* script;
  mutable std::size_t calls = 0;
  ppo::PolicyOutput operator()(std::span<const double>) const {
    ppo::PolicyOutput out;
    out.probs[static_cast<std::size_t>((*script)[calls++ % script->size()])] = 1.0;
    return out;
  }
};

Outcome reward_accounting() {
  long traces = 0, bad = 0;
  ppo::Rng rng(5);
  testing::for_each_family_puzzle([&](const Puzzle& p) {
    const auto path = bfs_shortest(p);
    if (!path) return;
    // Full trace and, where possible, the trace cut one step short by the cap.
    for (std::size_t cut : {path->size(), path->size() - 1}) {
      if (cut == 0) continue;
      const std::vector<Action> actions(path->begin(), path->begin() + static_cast<std::ptrdiff_t>(cut));
      WorldState s = p.initial_state();
      for (Action a : actions) s = step(p, s, a).state;
      const double expected = -static_cast<double>(cut) + std::popcount(s.lit);
      const ScriptedPolicy policy{&actions};
      const auto r = ppo::collect_rollout(p, policy, static_cast<int>(cut), static_cast<int>(cut), rng);
      ++traces;
      if (r.episode_returns.size() != 1 || r.episode_returns[0] != expected) ++bad;
    }
  });
  std::ostringstream d;
  d << traces << " traces, " << bad << " with a wrong return";
  return {bad == 0 && traces > 0, d.str()};
}

Outcome analysis_endpoints() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  int extreme_errors = 0;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> pool(2 + rng() % 10);
    for (auto& v : pool) v = u(rng);
    const auto n = analysis::PuzzleNorms::of(pool);
    if (n.normalize(n.min) != 0.0 || n.normalize(n.max) != 1.0) ++extreme_errors;
  }
  const auto w = analysis::welch_t({1, 2, 3, 4, 5}, {3, 4, 5, 6, 7});
  const double b_best = analysis::bonus(10, 10, 20);
  const double b_mid = analysis::bonus(15, 10, 20);
  const double b_worst = analysis::bonus(20, 10, 20);
  const bool welch_ok = std::abs(w.t - kWelchExpected) <= kWelchTolerance;
  std::ostringstream d;
  d << "normalization extremes " << (extreme_errors == 0 ? "exact" : "wrong") << "; welch t " << w.t << " (expected "
    << kWelchExpected << " +/- " << kWelchTolerance << ", df " << w.df << ", p " << w.p << "); bonus " << b_best << "/"
    << b_mid << "/" << b_worst;
  return {extreme_errors == 0 && welch_ok && b_best == 0.5 && b_mid == 0.25 && b_worst == 0.0, d.str()};
}

Outcome replayability() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / ("lightbot_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  auto now = std::make_shared<std::atomic<std::int64_t>>(1'750'000'000'000);
  auto make = [&](const std::string& sub) {
    service::ServiceConfig c;
    c.data_dir = root / sub;
    c.puzzle_dir = testing::source_path("puzzles");
    return std::make_unique<service::Service>(c, [now] { return now->load(); });
  };
  auto src = make("a");
  std::mt19937_64 rng(3);
  const std::vector<std::string> conditions = {"EfficientFlat", "DefaultHierarchy", "EfficientHierarchy"};
  for (const auto& cond : conditions) {
    const std::string id = src->create_session(cond)["session_id"];
    while (!src->get_session(id)["finished"].get<bool>()) {
      const std::string pid = src->get_puzzle(id)["puzzle_id"];
      const Puzzle& p = src->puzzles().at(pid);
      *now += 5'000;
      src->log_event(id, "instruction_added", {{"token", "walk"}});
      // A random failed attempt, a violation in flat sessions, then either a
      // skip or the optimal solution.
      Program junk;
      for (int k = 0; k < 3; ++k) junk.main.push_back(Instruction::primitive(static_cast<Action>(rng() % kNumActions)));
      src->submit_program(id, pid, program_to_json(junk));
      if (cond == "EfficientFlat") src->submit_program(id, pid, nlohmann::json::parse(R"({"main":["call1"]})"));
      if (rng() % 4 == 0) {
        *now += 360'000;
        src->skip_puzzle(id, pid);
      } else {
        src->submit_program(id, pid, program_to_json(compress(*bfs_shortest(p)).program));
      }
    }
  }
  const auto exported = src->export_sessions();
  std::istringstream in(exported);
  const auto rep = service::verify_replay(in, src->puzzles());
  auto dst = make("b");
  dst->import_sessions(exported);
  const bool identical = dst->export_sessions() == exported;
  fs::remove_all(root);
  std::ostringstream d;
  d << "3 sessions, " << rep.test_runs << " test runs replayed, " << rep.mismatches << " mismatches; export/import "
    << (identical ? "byte-identical" : "differs") << " (" << exported.size() << " bytes)";
  return {rep.mismatches == 0 && rep.test_runs > 0 && identical, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::string(argv[1]) == "--skip-ppo";
  report("compression reconstruction", compression_reconstruction);
  report("compression worked example", compression_example);
  report("demo program relation 13/38", demo_relation);
  report("exact solver optimality", solver_optimality);
  if (!quick) {
    report("ppo sanity mini_1x2", [] { return ppo_sanity("mini_1x2.json"); });
    report("ppo sanity mini_2x2", [] { return ppo_sanity("mini_2x2.json"); });
  }
  report("gradient checks", gradient_checks);
  report("interpreter semantics", interpreter_semantics);
  report("reward accounting", reward_accounting);
  report("analysis endpoints", analysis_endpoints);
  report("replayability", replayability);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
