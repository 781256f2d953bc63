// lightbot: command-line front end.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lightbot/analysis.hpp"
#include "lightbot/compress.hpp"
#include "lightbot/http_api.hpp"
#include "lightbot/ppo.hpp"
#include "lightbot/service.hpp"
#include "lightbot/solver_exact.hpp"

namespace fs = std::filesystem;
using namespace lightbot;

namespace {

std::string read_input(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  return read_text_file(path);
}

// Actions as a JSON array or whitespace/comma separated tokens.
std::vector<Action> parse_actions(const std::string& text) {
  std::vector<std::string> tokens;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    tokens = nlohmann::json::parse(text).get<std::vector<std::string>>();
  } else {
    std::string t = text;
    std::replace(t.begin(), t.end(), ',', ' ');
    std::istringstream in(t);
    for (std::string tok; in >> tok;) tokens.push_back(tok);
  }
  std::vector<Action> out;
  for (const auto& tok : tokens) {
    const auto a = action_from_string(tok);
    if (!a) throw Error("'" + tok + "' is not a primitive action");
    out.push_back(*a);
  }
  return out;
}

std::string join_actions(const std::vector<Action>& actions) {
  std::string s;
  for (Action a : actions) {
    if (!s.empty()) s += ' ';
    s += to_string(a);
  }
  return s;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

int cmd_compress(const std::string& input, const CompressionConfig& cfg) {
  const auto seq = parse_actions(read_input(input));
  const auto r = compress(seq, cfg);
  nlohmann::ordered_json out;
  out["program"] = program_to_json(r.program);
  out["flat_length"] = r.flat_length;
  out["compressed_length"] = r.compressed_length;
  out["compressibility"] = r.compressibility.str();
  out["recursion_applied"] = r.recursion_applied;
  std::cout << out.dump() << '\n';
  return 0;
}

int cmd_solve_exact(const Puzzle& p) {
  const auto path = bfs_shortest(p);
  if (!path) {
    std::cout << "unsolvable\n";
    return 1;
  }
  std::cout << "length " << path->size() << '\n' << join_actions(*path) << '\n';
  return 0;
}

int cmd_solve_ppo(const Puzzle& p, ppo::Hyperparams h, const std::string& config, int rollouts, bool quiet) {
  if (!config.empty()) {
    const auto seed = h.seed;
    h = nlohmann::json::parse(read_text_file(config)).get<ppo::Hyperparams>();
    h.seed = seed;
  }
  const auto result = ppo::train(p, h);
  if (!quiet) {
    for (const auto& u : result.history) {
      std::cerr << "update " << u.update << " steps " << u.env_steps << " mean_return " << u.mean_return
                << " moving_avg " << u.moving_average << " kl " << u.diagnostics.approx_kl << '\n';
    }
  }
  ppo::Rng rng(h.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto best = ppo::best_of_rollouts(result.net, p, rollouts, h.episode_cap, rng);
  std::cout << "converged " << (result.converged ? "yes" : "no") << " after " << result.env_steps
            << " steps\nlength " << best.size() << '\n'
            << join_actions(best) << '\n';
  return 0;
}

int cmd_run(const Puzzle& p, const std::string& program_path, bool trace) {
  const Program prog = parse_program(read_input(program_path));
  const auto t = execute(p, prog);
  std::cout << "status " << to_string(t.status) << "\nprogram_length " << program_length(prog)
            << "\nflattened_length " << t.actions.size() << '\n';
  if (trace) std::cout << trace_to_json(p, t).dump() << '\n';
  return t.status == ExecutionStatus::Completed ? 0 : 1;
}

int cmd_inspect(const Puzzle& p, const std::string& program_path) {
  std::cout << "name " << p.name() << "\nsize " << p.width() << "x" << p.height() << "\nlights "
            << p.num_lights() << "\nmax_height " << p.max_height() << '\n';
  const auto path = bfs_shortest(p);
  if (!path) {
    std::cout << "optimal unsolvable\n";
  } else {
    const auto c = compress(*path);
    std::cout << "optimal_length " << path->size() << "\noptimal " << join_actions(*path)
              << "\noptimal_compressibility " << c.compressibility.str() << '\n';
  }
  if (!program_path.empty()) {
    const Program prog = parse_program(read_input(program_path));
    const auto t = execute(p, prog);
    std::cout << "program_status " << to_string(t.status) << "\nprogram_length " << program_length(prog)
              << "\nflattened_length " << t.actions.size() << '\n';
    if (!t.actions.empty()) {
      std::cout << "flattened_compressibility " << compress(t.actions).compressibility.str() << '\n';
    }
  }
  return 0;
}

int cmd_analyze(const std::string& logs, const std::string& puzzle_dir, const std::string& out_dir,
                bool within) {
  std::ifstream in(logs);
  if (!in) throw Error("cannot open " + logs);
  const auto loaded = analysis::load_records(in);
  const auto set = load_puzzle_set(puzzle_dir);
  const auto metrics = analysis::compute_metrics(
      loaded.records, set, within ? analysis::Pooling::WithinCondition : analysis::Pooling::AcrossConditions);
  const auto bonuses = analysis::compute_bonuses(metrics);
  std::cerr << loaded.sessions << " sessions, " << loaded.records.size() << " completed solutions, "
            << loaded.skipped << " skipped (excluded)\n";

  std::ostringstream puzzles, conditions, comparisons, bonus;
  analysis::write_puzzle_table(puzzles, metrics);
  analysis::write_condition_table(conditions, metrics);
  analysis::write_comparison_table(comparisons, metrics);
  analysis::write_bonus_table(bonus, bonuses);
  if (out_dir.empty()) {
    std::cout << "# per_puzzle\n" << puzzles.str() << "\n# per_condition\n" << conditions.str()
              << "\n# comparisons\n" << comparisons.str() << "\n# bonuses\n" << bonus.str();
  } else {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "per_puzzle.csv", puzzles.str());
    write_file(fs::path(out_dir) / "per_condition.csv", conditions.str());
    write_file(fs::path(out_dir) / "comparisons.csv", comparisons.str());
    write_file(fs::path(out_dir) / "bonuses.csv", bonus.str());
  }
  return 0;
}

int cmd_serve(const std::string& config_path) {
  const auto cfg = service::load_config(config_path);
  service::Service svc(cfg);
  httplib::Server server;
  service::register_routes(server, svc);
  std::cerr << "listening on " << cfg.host << ':' << cfg.port << '\n';
  if (!server.listen(cfg.host, cfg.port)) throw Error("cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
  return 0;
}

int cmd_export(const std::string& config_path, const std::string& condition, const std::string& session,
               const std::string& out, const std::string& bonus_path) {
  service::Service svc(service::load_config(config_path));
  service::Service::ExportFilter filter;
  if (!condition.empty()) filter.condition = condition;
  if (!session.empty()) filter.session = session;
  const auto text = svc.export_sessions(filter);
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  if (!bonus_path.empty()) {
    std::istringstream in(text);
    const auto loaded = analysis::load_records(in);
    const auto metrics =
        analysis::compute_metrics(loaded.records, svc.puzzles(), analysis::Pooling::AcrossConditions);
    std::ostringstream b;
    analysis::write_bonus_table(b, analysis::compute_bonuses(metrics));
    write_file(bonus_path, b.str());
  }
  return 0;
}

int cmd_import(const std::string& config_path, const std::string& input) {
  service::Service svc(service::load_config(config_path));
  const auto ids = svc.import_sessions(read_input(input));
  std::cout << "imported " << ids.size() << " sessions\n";
  return 0;
}

int cmd_replay(const std::string& logs, const std::string& puzzle_dir) {
  std::ifstream in(logs);
  if (!in) throw Error("cannot open " + logs);
  const auto report = service::verify_replay(in, load_puzzle_set(puzzle_dir));
  std::cout << report.test_runs << " test runs, " << report.mismatches << " mismatches\n";
  for (const auto& d : report.details) std::cout << "mismatch " << d << '\n';
  return report.mismatches == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lightbot puzzles, programs, solvers and experiment service"};
  app.require_subcommand(1);

  auto* c = app.add_subcommand("compress", "Compress a flat action sequence into a program");
  std::string c_input = "-";
  CompressionConfig c_cfg;
  c->add_option("input", c_input, "File with actions (JSON array or tokens), - for stdin");
  c->add_option("--max-procs", c_cfg.max_procs)->check(CLI::Range(0, kMaxProcs));
  c->add_option("--min-len", c_cfg.min_len)->check(CLI::PositiveNumber);
  c->add_option("--min-reps", c_cfg.min_reps)->check(CLI::Range(2, 1 << 20));

  auto* s = app.add_subcommand("solve", "Shortest flat solution of a puzzle");
  std::string s_puzzle, s_config;
  bool s_exact = false, s_ppo = false, s_quiet = false;
  int s_rollouts = 100;
  ppo::Hyperparams s_hyper;
  s->add_option("puzzle", s_puzzle)->required()->check(CLI::ExistingFile);
  auto* exact_flag = s->add_flag("--exact", s_exact, "Breadth-first search");
  auto* ppo_flag = s->add_flag("--ppo", s_ppo, "Train a PPO agent and take the best of its rollouts");
  exact_flag->excludes(ppo_flag);
  s->add_option("--seed", s_hyper.seed);
  s->add_option("--config", s_config, "PPO hyperparameters as JSON")->check(CLI::ExistingFile);
  s->add_option("--rollouts", s_rollouts)->check(CLI::PositiveNumber);
  s->add_flag("--quiet", s_quiet, "Do not print per-update training progress");

  auto* r = app.add_subcommand("run", "Execute a program on a puzzle");
  std::string r_puzzle, r_program;
  bool r_trace = false;
  r->add_option("puzzle", r_puzzle)->required()->check(CLI::ExistingFile);
  r->add_option("program", r_program)->required();
  r->add_flag("--trace", r_trace, "Print the trace as JSON");

  auto* in = app.add_subcommand("inspect", "Report a puzzle's optimal solution and, optionally, a program's lengths");
  std::string in_puzzle, in_program;
  in->add_option("puzzle", in_puzzle)->required()->check(CLI::ExistingFile);
  in->add_option("--program", in_program);

  auto* a = app.add_subcommand("analyze", "Per-puzzle and per-condition tables from session logs");
  std::string a_logs, a_puzzles, a_out;
  bool a_within = false;
  a->add_option("logs", a_logs)->required()->check(CLI::ExistingFile);
  a->add_option("--puzzles", a_puzzles)->required()->check(CLI::ExistingDirectory);
  a->add_option("--out-dir", a_out, "Write CSV files here instead of stdout");
  a->add_flag("--pool-within-condition", a_within, "Normalize within each condition instead of across all");

  auto* sv = app.add_subcommand("serve", "Run the experiment HTTP service");
  std::string sv_config;
  sv->add_option("--config", sv_config)->required()->check(CLI::ExistingFile);

  auto* ex = app.add_subcommand("export", "Write session logs as JSONL");
  std::string ex_config, ex_condition, ex_session, ex_out, ex_bonus;
  ex->add_option("--config", ex_config)->required()->check(CLI::ExistingFile);
  ex->add_option("--condition", ex_condition);
  ex->add_option("--session", ex_session);
  ex->add_option("--out", ex_out);
  ex->add_option("--bonuses", ex_bonus, "Also write per-participant bonuses as CSV");

  auto* im = app.add_subcommand("import", "Load exported session logs into the data directory");
  std::string im_config, im_input = "-";
  im->add_option("--config", im_config)->required()->check(CLI::ExistingFile);
  im->add_option("input", im_input);

  auto* rp = app.add_subcommand("replay", "Re-execute every logged test run and compare completion flags");
  std::string rp_logs, rp_puzzles;
  rp->add_option("logs", rp_logs)->required()->check(CLI::ExistingFile);
  rp->add_option("--puzzles", rp_puzzles)->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c->parsed()) return cmd_compress(c_input, c_cfg);
    if (s->parsed()) {
      const Puzzle p = load_puzzle_file(s_puzzle);
      if (s_ppo) return cmd_solve_ppo(p, s_hyper, s_config, s_rollouts, s_quiet);
      return cmd_solve_exact(p);
    }
    if (r->parsed()) return cmd_run(load_puzzle_file(r_puzzle), r_program, r_trace);
    if (in->parsed()) return cmd_inspect(load_puzzle_file(in_puzzle), in_program);
    if (a->parsed()) return cmd_analyze(a_logs, a_puzzles, a_out, a_within);
    if (sv->parsed()) return cmd_serve(sv_config);
    if (ex->parsed()) return cmd_export(ex_config, ex_condition, ex_session, ex_out, ex_bonus);
    if (im->parsed()) return cmd_import(im_config, im_input);
    if (rp->parsed()) return cmd_replay(rp_logs, rp_puzzles);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
