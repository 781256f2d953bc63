#pragma once

// Measurements over completed solutions: per-puzzle min-max normalization,
// flattened length, compressibility, Welch's t-test and the bonus schedule.
// Records come from exported session logs (see service.hpp for the event
// schema); skipped puzzles are dropped at load time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "lightbot/compress.hpp"
#include "lightbot/condition.hpp"
#include "lightbot/error.hpp"
#include "lightbot/program.hpp"
#include "lightbot/puzzle_set.hpp"
#include "lightbot/solver_exact.hpp"

namespace lightbot::analysis {

struct SolutionRecord {
  std::string participant;  // session id
  std::string condition;
  std::string puzzle;
  Program program;
  bool completed = false;
  std::int64_t duration_ms = 0;
};

// Min and max of a quantity over the analyzed pool for one puzzle.
struct PuzzleNorms {
  double min = 0.0;
  double max = 0.0;

  static PuzzleNorms of(const std::vector<double>& values) {
    if (values.empty()) throw Error("cannot normalize over an empty pool");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return {*lo, *hi};
  }

  bool degenerate() const { return max == min; }

  double normalize(double v) const {
    if (degenerate()) {
      throw Error("normalization undefined: every value in the pool equals " + std::to_string(min));
    }
    return (v - min) / (max - min);
  }
};

// Distance from optimal, min-max normalized over the pool's distances.
inline double normalized_distance(int length, int optimal_length, const PuzzleNorms& distance_norms) {
  return distance_norms.normalize(static_cast<double>(length - optimal_length));
}

// Actions the record's program generates, with completion halting execution.
inline std::vector<Action> flattened_actions(const Puzzle& puzzle, const SolutionRecord& record) {
  if (!record.completed) throw Error("record for " + record.puzzle + " is not a completed solution");
  auto trace = execute(puzzle, record.program);
  if (trace.status != ExecutionStatus::Completed) {
    throw Error("record for " + record.puzzle + " by " + record.participant +
                " is marked completed but its program ends with status " +
                std::string(to_string(trace.status)));
  }
  return std::move(trace.actions);
}

inline int flattened_length(const Puzzle& puzzle, const SolutionRecord& record) {
  return static_cast<int>(flattened_actions(puzzle, record).size());
}

inline Rational solution_compressibility(const Puzzle& puzzle, const SolutionRecord& record) {
  return compress(flattened_actions(puzzle, record)).compressibility;
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

inline WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error("welch_t needs at least two values per sample, got " + std::to_string(a.size()) +
                " and " + std::to_string(b.size()));
  }
  auto moments = [](const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double qa = va / na;
  const double qb = vb / nb;
  if (qa + qb == 0.0) throw Error("welch_t undefined: both samples have zero variance");

  WelchResult r;
  r.t = (ma - mb) / std::sqrt(qa + qb);
  r.df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

// Linear bonus: max_bonus at the best length, zero at the worst.
inline double bonus(int record_len, int best_len, int worst_len, double max_bonus = 0.50) {
  if (worst_len <= best_len) {
    throw Error("bonus undefined: pool worst " + std::to_string(worst_len) + " does not exceed best " +
                std::to_string(best_len));
  }
  if (record_len < best_len) {
    throw Error("record length " + std::to_string(record_len) + " is below the pool best " +
                std::to_string(best_len));
  }
  const double frac = static_cast<double>(record_len - best_len) / static_cast<double>(worst_len - best_len);
  return std::clamp(max_bonus * (1.0 - frac), 0.0, max_bonus);
}

// ---------------------------------------------------------------------------
// Log loading

struct LoadedLog {
  std::vector<SolutionRecord> records;  // completed only
  int skipped = 0;
  int sessions = 0;
};

// Reads exported JSONL events. Completed solutions come from puzzle_complete
// events; puzzle_skipped events are counted and dropped.
inline LoadedLog load_records(std::istream& in) {
  LoadedLog out;
  std::map<std::string, std::string> condition_of;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json ev;
    try {
      ev = nlohmann::json::parse(line);
      const auto session = ev.at("session").get<std::string>();
      const auto kind = ev.at("kind").get<std::string>();
      const auto& payload = ev.at("payload");
      if (kind == "session_start") {
        condition_of[session] = payload.at("condition").get<std::string>();
        ++out.sessions;
      } else if (kind == "puzzle_complete") {
        const auto it = condition_of.find(session);
        if (it == condition_of.end()) throw Error("puzzle_complete before session_start");
        SolutionRecord r;
        r.participant = session;
        r.condition = it->second;
        r.puzzle = payload.at("puzzle").get<std::string>();
        r.program = program_from_json(payload.at("program"));
        r.completed = true;
        r.duration_ms = payload.value("duration_ms", std::int64_t{0});
        out.records.push_back(std::move(r));
      } else if (kind == "puzzle_skipped") {
        ++out.skipped;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("log line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Pooling { AcrossConditions, WithinCondition };

struct RecordMetrics {
  SolutionRecord record;
  int optimal_length = 0;
  int flat_length = 0;
  int program_length = 0;
  Rational compressibility;
  std::optional<double> normalized_distance;
  std::optional<double> normalized_flattened_length;
  std::optional<double> normalized_compressibility;
};

// Computes per-record metrics for every record on a test puzzle of `set`.
// Normalizations are left empty where the pool is degenerate.
inline std::vector<RecordMetrics> compute_metrics(const std::vector<SolutionRecord>& records,
                                                  const PuzzleSet& set, Pooling pooling) {
  std::map<std::string, int> optimal;
  std::vector<RecordMetrics> out;
  for (const auto& r : records) {
    if (set.is_tutorial(r.puzzle)) continue;
    const Puzzle& puzzle = set.at(r.puzzle);
    if (!optimal.count(r.puzzle)) {
      const auto path = bfs_shortest(puzzle);
      if (!path) throw Error("puzzle " + r.puzzle + " has no solution");
      optimal[r.puzzle] = static_cast<int>(path->size());
    }
    RecordMetrics m;
    m.record = r;
    m.optimal_length = optimal[r.puzzle];
    const auto actions = flattened_actions(puzzle, r);
    m.flat_length = static_cast<int>(actions.size());
    m.program_length = static_cast<int>(program_length(r.program));
    m.compressibility = compress(actions).compressibility;
    out.push_back(std::move(m));
  }

  auto pool_key = [&](const RecordMetrics& m) {
    return pooling == Pooling::AcrossConditions ? m.record.puzzle : m.record.puzzle + "\n" + m.record.condition;
  };
  std::map<std::string, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < out.size(); ++i) pools[pool_key(out[i])].push_back(i);
  for (const auto& [key, idx] : pools) {
    std::vector<double> dist, len, comp;
    for (auto i : idx) {
      dist.push_back(out[i].flat_length - out[i].optimal_length);
      len.push_back(out[i].flat_length);
      comp.push_back(out[i].compressibility.value());
    }
    const auto nd = PuzzleNorms::of(dist);
    const auto nl = PuzzleNorms::of(len);
    const auto nc = PuzzleNorms::of(comp);
    for (auto i : idx) {
      auto& m = out[i];
      if (!nd.degenerate()) m.normalized_distance = normalized_distance(m.flat_length, m.optimal_length, nd);
      if (!nl.degenerate()) m.normalized_flattened_length = nl.normalize(m.flat_length);
      if (!nc.degenerate()) m.normalized_compressibility = nc.normalize(m.compressibility.value());
    }
  }
  return out;
}

struct ParticipantBonus {
  std::string participant;
  std::string condition;
  int completed_test_puzzles = 0;
  double bonus = 0.0;
};

// Bonuses per participant over completed test puzzles. Fixed-mode conditions
// pay max_bonus per puzzle. Length-linear conditions pay by the length the
// condition asks participants to minimize (flat length without subprocesses,
// stored program length with them), with best and worst taken over that
// condition's solutions to the puzzle. When every solution in such a pool has
// the same length, all of them are best and receive max_bonus.
inline std::vector<ParticipantBonus> compute_bonuses(const std::vector<RecordMetrics>& metrics,
                                                     double max_bonus = 0.50) {
  auto measured = [](const RecordMetrics& m) {
    const auto spec = find_condition(m.record.condition);
    if (!spec) throw Error("unknown condition '" + m.record.condition + "'");
    return spec->subprocesses_allowed > 0 ? m.program_length : m.flat_length;
  };
  std::map<std::pair<std::string, std::string>, std::pair<int, int>> range;  // (puzzle, condition)
  for (const auto& m : metrics) {
    const int len = measured(m);
    auto [it, fresh] = range.try_emplace({m.record.puzzle, m.record.condition}, len, len);
    if (!fresh) {
      it->second.first = std::min(it->second.first, len);
      it->second.second = std::max(it->second.second, len);
    }
  }
  std::map<std::string, ParticipantBonus> by_participant;
  for (const auto& m : metrics) {
    auto& b = by_participant[m.record.participant];
    b.participant = m.record.participant;
    b.condition = m.record.condition;
    ++b.completed_test_puzzles;
    const auto spec = find_condition(m.record.condition);
    if (spec->bonus_mode == BonusMode::PerPuzzleFixed) {
      b.bonus += max_bonus;
      continue;
    }
    const auto [best, worst] = range.at({m.record.puzzle, m.record.condition});
    b.bonus += worst == best ? max_bonus : bonus(measured(m), best, worst, max_bonus);
  }
  std::vector<ParticipantBonus> out;
  for (auto& [id, b] : by_participant) out.push_back(b);
  return out;
}

// ---------------------------------------------------------------------------
// CSV tables

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  std::string str() const { return n ? fmt(sum / n) : "NA"; }
};

struct GroupMeans {
  int n = 0;
  int optimal = 0;
  Mean flat_length, program_length, distance, flattened, compressibility, norm_compressibility;

  void add(const RecordMetrics& m) {
    ++n;
    optimal = m.optimal_length;
    flat_length.add(m.flat_length);
    program_length.add(m.program_length);
    distance.add(m.normalized_distance);
    flattened.add(m.normalized_flattened_length);
    compressibility.add(m.compressibility.value());
    norm_compressibility.add(m.normalized_compressibility);
  }

  void row(std::ostream& out) const {
    out << n << ',' << flat_length.str() << ',' << program_length.str() << ',' << distance.str() << ','
        << flattened.str() << ',' << compressibility.str() << ',' << norm_compressibility.str() << '\n';
  }
};

inline const char* kMeanColumns =
    "n,mean_flat_length,mean_program_length,mean_normalized_distance,"
    "mean_normalized_flattened_length,mean_compressibility,mean_normalized_compressibility";

}  // namespace detail

inline void write_puzzle_table(std::ostream& out, const std::vector<RecordMetrics>& metrics) {
  std::map<std::pair<std::string, std::string>, detail::GroupMeans> groups;
  for (const auto& m : metrics) groups[{m.record.puzzle, m.record.condition}].add(m);
  out << "puzzle,condition,optimal_length," << detail::kMeanColumns << '\n';
  for (const auto& [key, g] : groups) {
    out << key.first << ',' << key.second << ',' << g.optimal << ',';
    g.row(out);
  }
}

inline void write_condition_table(std::ostream& out, const std::vector<RecordMetrics>& metrics) {
  std::map<std::string, detail::GroupMeans> groups;
  for (const auto& m : metrics) groups[m.record.condition].add(m);
  out << "condition," << detail::kMeanColumns << '\n';
  for (const auto& [cond, g] : groups) {
    out << cond << ',';
    g.row(out);
  }
}

// Welch comparisons between every pair of conditions present, on each
// normalized metric and on stored program length. Pairs that cannot be
// tested get NA and the reason.
inline void write_comparison_table(std::ostream& out, const std::vector<RecordMetrics>& metrics) {
  using Getter = std::optional<double> (*)(const RecordMetrics&);
  const std::vector<std::pair<std::string, Getter>> measures = {
      {"normalized_distance", [](const RecordMetrics& m) { return m.normalized_distance; }},
      {"normalized_flattened_length", [](const RecordMetrics& m) { return m.normalized_flattened_length; }},
      {"program_length", [](const RecordMetrics& m) { return std::optional<double>(m.program_length); }},
      {"normalized_compressibility", [](const RecordMetrics& m) { return m.normalized_compressibility; }},
  };
  std::vector<std::string> conditions;
  for (const auto& spec : bundled_conditions()) {
    for (const auto& m : metrics) {
      if (m.record.condition == spec.id) {
        conditions.push_back(spec.id);
        break;
      }
    }
  }
  out << "metric,condition_a,condition_b,n_a,n_b,t,df,p,note\n";
  for (const auto& [name, get] : measures) {
    for (std::size_t i = 0; i < conditions.size(); ++i) {
      for (std::size_t j = i + 1; j < conditions.size(); ++j) {
        std::vector<double> a, b;
        for (const auto& m : metrics) {
          const auto v = get(m);
          if (!v) continue;
          if (m.record.condition == conditions[i]) a.push_back(*v);
          if (m.record.condition == conditions[j]) b.push_back(*v);
        }
        out << name << ',' << conditions[i] << ',' << conditions[j] << ',' << a.size() << ',' << b.size() << ',';
        try {
          const auto w = welch_t(a, b);
          out << detail::fmt(w.t) << ',' << detail::fmt(w.df) << ',' << detail::fmt(w.p) << ",\n";
        } catch (const Error& e) {
          out << "NA,NA,NA," << '"' << e.what() << '"' << '\n';
        }
      }
    }
  }
}

inline void write_bonus_table(std::ostream& out, const std::vector<ParticipantBonus>& bonuses) {
  out << "participant,condition,completed_test_puzzles,bonus\n";
  for (const auto& b : bonuses) {
    out << b.participant << ',' << b.condition << ',' << b.completed_test_puzzles << ',' << detail::fmt(b.bonus)
        << '\n';
  }
}

}  // namespace lightbot::analysis
