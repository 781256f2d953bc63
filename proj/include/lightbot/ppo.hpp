#pragma once

// Proximal policy optimization with a clipped surrogate objective for flat
// Lightbot solutions.
//
// The agent sees the binary state encoding, pays -1 per action and earns +1
// for each light it turns on. After training, the shortest completing
// rollout among a batch of stochastic rollouts is taken as the flat solution.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lightbot/error.hpp"
#include "lightbot/nn.hpp"
#include "lightbot/world.hpp"
#include "json.hpp"

namespace lightbot::ppo {

using Rng = std::mt19937_64;
using Distribution = std::array<double, kNumActions>;

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct Hyperparams {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  double learning_rate = 3e-4;
  int horizon = 2048;
  int epochs = 10;
  int minibatch = 64;
  double entropy_coef = 0.01;
  int episode_cap = 500;
  long max_env_steps = 300'000;
  int hidden = 64;
  double max_grad_norm = 0.5;
  int convergence_window = 20;     // episodes in the return moving average
  int convergence_patience = 50;   // updates
  double convergence_min_gain = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw Error("clip must lie in (0,1)");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("gamma must lie in (0,1]");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw Error("lambda must lie in (0,1]");
    if (horizon < 1 || epochs < 1 || minibatch < 1 || episode_cap < 1 || hidden < 1) {
      throw Error("horizon, epochs, minibatch, episode_cap and hidden must be positive");
    }
  }
};

inline void from_json(const nlohmann::json& j, Hyperparams& h) {
  auto get = [&](const char* key, auto& field) {
    if (auto it = j.find(key); it != j.end()) field = it->get<std::decay_t<decltype(field)>>();
  };
  get("clip", h.clip);
  get("gamma", h.gamma);
  get("lambda", h.lambda);
  get("learning_rate", h.learning_rate);
  get("horizon", h.horizon);
  get("epochs", h.epochs);
  get("minibatch", h.minibatch);
  get("entropy_coef", h.entropy_coef);
  get("episode_cap", h.episode_cap);
  get("max_env_steps", h.max_env_steps);
  get("hidden", h.hidden);
  get("max_grad_norm", h.max_grad_norm);
  get("convergence_window", h.convergence_window);
  get("convergence_patience", h.convergence_patience);
  get("convergence_min_gain", h.convergence_min_gain);
  get("seed", h.seed);
}

// ---------------------------------------------------------------------------
// Networks

struct PolicyOutput {
  Distribution probs{};
  double value = 0.0;
};

// Separate policy and value networks over the same input encoding.
class ActorCritic {
 public:
  ActorCritic() = default;
  ActorCritic(std::size_t inputs, std::size_t hidden, Rng& rng)
      : policy(inputs, hidden, kNumActions), value(inputs, hidden, 1) {
    policy.init_orthogonal(rng, std::sqrt(2.0), 0.01);
    value.init_orthogonal(rng, std::sqrt(2.0), 1.0);
  }

  Distribution policy_forward(std::span<const double> features) const {
    const auto c = policy.forward(features);
    const auto p = nn::softmax(c.output);
    Distribution d{};
    std::copy(p.begin(), p.end(), d.begin());
    return d;
  }

  double value_forward(std::span<const double> features) const {
    return value.forward(features).output[0];
  }

  PolicyOutput operator()(std::span<const double> features) const {
    return {policy_forward(features), value_forward(features)};
  }

  nn::Mlp policy;
  nn::Mlp value;
};

inline double log_prob(const nn::Mlp& policy, std::span<const double> features, Action a) {
  const auto c = policy.forward(features);
  return nn::log_softmax(c.output)[static_cast<std::size_t>(a)];
}

// d log pi(a | x) / d x
inline std::vector<double> log_prob_input_gradient(const nn::Mlp& policy,
                                                   std::span<const double> features, Action a) {
  const auto c = policy.forward(features);
  const auto p = nn::softmax(c.output);
  std::vector<double> dlogits(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    dlogits[k] = (k == static_cast<std::size_t>(a) ? 1.0 : 0.0) - p[k];
  }
  std::vector<double> scratch(policy.params().size(), 0.0);
  return policy.backward(features, c, dlogits, scratch, true);
}

// d log pi(a | x) / d params
inline std::vector<double> log_prob_param_gradient(const nn::Mlp& policy,
                                                   std::span<const double> features, Action a) {
  const auto c = policy.forward(features);
  const auto p = nn::softmax(c.output);
  std::vector<double> dlogits(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    dlogits[k] = (k == static_cast<std::size_t>(a) ? 1.0 : 0.0) - p[k];
  }
  std::vector<double> grad(policy.params().size(), 0.0);
  policy.backward(features, c, dlogits, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Rollouts

inline double step_reward(const StepEvent& e) { return -1.0 + (e.light_turned_on ? 1.0 : 0.0); }

struct RolloutStep {
  std::vector<double> features;
  Action action = Action::Walk;
  double reward = 0.0;
  double log_prob = 0.0;
  double value = 0.0;
  bool done = false;  // episode ended after this step (completion or cap)
  bool completed = false;
};

struct Rollout {
  std::vector<RolloutStep> steps;
  double bootstrap_value = 0.0;  // value of the state after the last step, if unfinished
  std::vector<double> episode_returns;
  std::vector<int> episode_lengths;
  int completed_episodes = 0;
};

inline Action sample_action(const Distribution& probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cum = 0.0;
  int last_nonzero = 0;
  for (int k = 0; k < kNumActions; ++k) {
    if (probs[static_cast<std::size_t>(k)] <= 0.0) continue;
    cum += probs[static_cast<std::size_t>(k)];
    last_nonzero = k;
    if (u < cum) return static_cast<Action>(k);
  }
  return static_cast<Action>(last_nonzero);
}

// `policy` maps an encoded state to a PolicyOutput. Episodes restart from the
// puzzle's start state on completion or after `episode_cap` steps; an episode
// still running at `horizon` is cut and bootstrapped from the value estimate.
template <class Policy>
Rollout collect_rollout(const Puzzle& puzzle, const Policy& policy, int horizon, int episode_cap,
                        Rng& rng) {
  Rollout r;
  r.steps.reserve(static_cast<std::size_t>(horizon));
  WorldState state = puzzle.initial_state();
  int ep_len = 0;
  double ep_return = 0.0;
  for (int t = 0; t < horizon; ++t) {
    RolloutStep s;
    s.features = encode_state(puzzle, state);
    const PolicyOutput out = policy(std::span<const double>(s.features));
    s.action = sample_action(out.probs, rng);
    s.log_prob = std::log(out.probs[static_cast<std::size_t>(s.action)]);
    s.value = out.value;
    const StepResult next = step(puzzle, state, s.action);
    s.reward = step_reward(next.event);
    state = next.state;
    ++ep_len;
    ep_return += s.reward;
    s.completed = is_complete(puzzle, state);
    s.done = s.completed || ep_len >= episode_cap;
    if (s.done) {
      r.episode_returns.push_back(ep_return);
      r.episode_lengths.push_back(ep_len);
      if (s.completed) ++r.completed_episodes;
      state = puzzle.initial_state();
      ep_len = 0;
      ep_return = 0.0;
    }
    r.steps.push_back(std::move(s));
  }
  if (!r.steps.empty() && !r.steps.back().done) {
    const auto f = encode_state(puzzle, state);
    r.bootstrap_value = policy(std::span<const double>(f)).value;
  }
  return r;
}

struct Advantages {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + value estimates
};

inline Advantages gae_advantages(const Rollout& r, double gamma, double lambda) {
  const std::size_t n = r.steps.size();
  Advantages out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double gae = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const auto& s = r.steps[i];
    const double next_value = i + 1 < n ? r.steps[i + 1].value : r.bootstrap_value;
    const double nonterminal = s.done ? 0.0 : 1.0;
    const double delta = s.reward + gamma * next_value * nonterminal - s.value;
    gae = delta + gamma * lambda * nonterminal * gae;
    out.advantages[i] = gae;
    out.returns[i] = gae + s.value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

struct Sample {
  std::vector<double> features;
  Action action = Action::Walk;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double target_return = 0.0;
};

struct PolicyLoss {
  double loss = 0.0;  // -(clipped surrogate) - entropy_coef * entropy, batch mean
  double surrogate = 0.0;
  double unclipped_surrogate = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// Batch-mean policy loss; adds its gradient to `grad` when non-null.
inline PolicyLoss policy_loss(const nn::Mlp& net, std::span<const Sample> batch, double clip,
                              double entropy_coef, std::vector<double>* grad) {
  PolicyLoss out;
  if (batch.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> dlogits(kNumActions);
  for (const Sample& s : batch) {
    const auto c = net.forward(s.features);
    const auto logp = nn::log_softmax(c.output);
    const std::size_t a = static_cast<std::size_t>(s.action);
    const double ratio = std::exp(logp[a] - s.old_log_prob);
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    const double surr1 = ratio * s.advantage;
    const double surr2 = clipped * s.advantage;
    double entropy = 0.0;
    for (double lp : logp) entropy -= std::exp(lp) * lp;

    out.surrogate += std::min(surr1, surr2) * inv_n;
    out.unclipped_surrogate += surr1 * inv_n;
    out.entropy += entropy * inv_n;
    out.approx_kl += (s.old_log_prob - logp[a]) * inv_n;
    if (std::abs(ratio - 1.0) > clip) out.clip_fraction += inv_n;

    if (grad) {
      // d(min(surr1, surr2))/d logp[a]: the unclipped branch contributes
      // ratio * A; a clipped branch with ratio outside the band contributes 0.
      const bool unclipped_active = surr1 <= surr2 || clipped == ratio;
      const double dsurr_dlogp = unclipped_active ? surr1 : 0.0;
      for (std::size_t k = 0; k < dlogits.size(); ++k) {
        const double p = std::exp(logp[k]);
        const double dlogp_dz = (k == a ? 1.0 : 0.0) - p;
        // dH/dz_k = -p_k (log p_k + H)
        const double dentropy_dz = -p * (logp[k] + entropy);
        dlogits[k] = inv_n * (-dsurr_dlogp * dlogp_dz - entropy_coef * dentropy_dz);
      }
      net.backward(s.features, c, dlogits, *grad);
    }
  }
  out.loss = -out.surrogate - entropy_coef * out.entropy;
  return out;
}

// Batch-mean of 0.5 * (V(x) - R)^2; adds its gradient to `grad` when non-null.
inline double value_loss(const nn::Mlp& net, std::span<const Sample> batch,
                         std::vector<double>* grad) {
  if (batch.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const Sample& s : batch) {
    const auto c = net.forward(s.features);
    const double err = c.output[0] - s.target_return;
    loss += 0.5 * err * err * inv_n;
    if (grad) {
      const double d = err * inv_n;
      net.backward(s.features, c, std::span<const double>(&d, 1), *grad);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Update

struct Optimizers {
  Optimizers(const ActorCritic& net, double lr)
      : policy(net.policy.params().size(), lr), value(net.value.params().size(), lr) {}
  nn::Adam policy;
  nn::Adam value;
};

struct UpdateDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

namespace detail {

inline void clip_grad_norm(std::vector<double>& g, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& v : g) v *= scale;
  }
}

}  // namespace detail

// Several epochs of minibatch gradient steps on the clipped surrogate (policy
// network) and squared value error (value network). Advantages are used as
// given. Throws TrainingError, leaving `net` unchanged for the offending
// minibatch, if a loss turns non-finite.
inline UpdateDiagnostics ppo_update(ActorCritic& net, Optimizers& opt, std::vector<Sample> batch,
                                    const Hyperparams& hyper, Rng& rng) {
  UpdateDiagnostics diag;
  int minibatches = 0;
  std::vector<double> gp(net.policy.params().size());
  std::vector<double> gv(net.value.params().size());
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(batch.begin(), batch.end(), rng);
    for (std::size_t start = 0; start < batch.size(); start += static_cast<std::size_t>(hyper.minibatch)) {
      const std::size_t len = std::min(static_cast<std::size_t>(hyper.minibatch), batch.size() - start);
      const std::span<const Sample> mb(batch.data() + start, len);
      std::fill(gp.begin(), gp.end(), 0.0);
      std::fill(gv.begin(), gv.end(), 0.0);
      const PolicyLoss pl = policy_loss(net.policy, mb, hyper.clip, hyper.entropy_coef, &gp);
      const double vl = value_loss(net.value, mb, &gv);
      if (!std::isfinite(pl.loss) || !std::isfinite(vl)) {
        throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) +
                            ": policy_loss=" + std::to_string(pl.loss) +
                            " value_loss=" + std::to_string(vl) +
                            " entropy=" + std::to_string(pl.entropy) +
                            " approx_kl=" + std::to_string(pl.approx_kl));
      }
      detail::clip_grad_norm(gp, hyper.max_grad_norm);
      detail::clip_grad_norm(gv, hyper.max_grad_norm);
      opt.policy.step(net.policy.params(), gp);
      opt.value.step(net.value.params(), gv);

      ++minibatches;
      diag.policy_loss += pl.loss;
      diag.value_loss += vl;
      diag.entropy += pl.entropy;
      diag.approx_kl += pl.approx_kl;
      diag.clip_fraction += pl.clip_fraction;
    }
  }
  if (minibatches > 0) {
    const double k = 1.0 / minibatches;
    diag.policy_loss *= k;
    diag.value_loss *= k;
    diag.entropy *= k;
    diag.approx_kl *= k;
    diag.clip_fraction *= k;
  }
  return diag;
}

// Builds a training batch from a rollout, normalizing advantages across it.
inline std::vector<Sample> make_batch(const Rollout& r, const Advantages& adv) {
  const std::size_t n = r.steps.size();
  double mean = 0.0;
  for (double a : adv.advantages) mean += a;
  mean /= static_cast<double>(std::max<std::size_t>(n, 1));
  double var = 0.0;
  for (double a : adv.advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(std::max<std::size_t>(n, 1)));
  std::vector<Sample> batch(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch[i].features = r.steps[i].features;
    batch[i].action = r.steps[i].action;
    batch[i].old_log_prob = r.steps[i].log_prob;
    batch[i].advantage = (adv.advantages[i] - mean) / (sd + 1e-8);
    batch[i].target_return = adv.returns[i];
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Training

struct UpdateRecord {
  int update = 0;
  long env_steps = 0;
  double mean_return = 0.0;     // over episodes finished in this rollout
  double moving_average = 0.0;  // over the last convergence_window episodes
  int completed_episodes = 0;
  UpdateDiagnostics diagnostics;
};

struct TrainResult {
  ActorCritic net;
  std::vector<UpdateRecord> history;
  bool converged = false;
  long env_steps = 0;
  int completed_episodes = 0;
};

// Alternates rollouts and updates until the moving-average episode return
// gains less than convergence_min_gain over convergence_patience updates, or
// until max_env_steps. Deterministic for a given seed.
inline TrainResult train(const Puzzle& puzzle, const Hyperparams& hyper) {
  hyper.validate();
  Rng rng(hyper.seed);
  TrainResult result;
  result.net = ActorCritic(encoding_size(puzzle), static_cast<std::size_t>(hyper.hidden), rng);
  Optimizers opt(result.net, hyper.learning_rate);

  std::deque<double> window;
  std::vector<double> averages;
  for (int update = 0; result.env_steps < hyper.max_env_steps; ++update) {
    const Rollout r = collect_rollout(puzzle, result.net, hyper.horizon, hyper.episode_cap, rng);
    result.env_steps += static_cast<long>(r.steps.size());
    result.completed_episodes += r.completed_episodes;
    const Advantages adv = gae_advantages(r, hyper.gamma, hyper.lambda);

    UpdateRecord rec;
    rec.update = update;
    rec.diagnostics = ppo_update(result.net, opt, make_batch(r, adv), hyper, rng);
    rec.env_steps = result.env_steps;
    rec.completed_episodes = r.completed_episodes;
    for (double ret : r.episode_returns) {
      rec.mean_return += ret / static_cast<double>(r.episode_returns.size());
      window.push_back(ret);
      if (static_cast<int>(window.size()) > hyper.convergence_window) window.pop_front();
    }
    if (!window.empty()) {
      rec.moving_average = std::accumulate(window.begin(), window.end(), 0.0) /
                           static_cast<double>(window.size());
    }
    averages.push_back(rec.moving_average);
    result.history.push_back(rec);

    const auto patience = static_cast<std::size_t>(hyper.convergence_patience);
    if (averages.size() > patience &&
        averages.back() - averages[averages.size() - 1 - patience] < hyper.convergence_min_gain) {
      result.converged = true;
      break;
    }
  }
  if (result.completed_episodes == 0) {
    throw TrainingError("no episode completed the puzzle within " +
                        std::to_string(result.env_steps) + " environment steps");
  }
  return result;
}

// Runs one episode, sampling (or taking the argmax when `greedy`) from the
// policy. Returns the actions taken and whether the puzzle was completed.
struct Episode {
  std::vector<Action> actions;
  bool completed = false;
};

inline Episode run_episode(const Puzzle& puzzle, const ActorCritic& net, int episode_cap, Rng& rng,
                           bool greedy) {
  Episode ep;
  WorldState state = puzzle.initial_state();
  for (int t = 0; t < episode_cap; ++t) {
    const auto f = encode_state(puzzle, state);
    const Distribution p = net.policy_forward(f);
    const Action a = greedy ? static_cast<Action>(std::max_element(p.begin(), p.end()) - p.begin())
                            : sample_action(p, rng);
    ep.actions.push_back(a);
    state = step(puzzle, state, a).state;
    if (is_complete(puzzle, state)) {
      ep.completed = true;
      break;
    }
  }
  return ep;
}

// Shortest completing sequence among `n` stochastic rollouts.
inline std::vector<Action> best_of_rollouts(const ActorCritic& net, const Puzzle& puzzle, int n,
                                            int episode_cap, Rng& rng) {
  std::vector<Action> best;
  bool found = false;
  for (int i = 0; i < n; ++i) {
    Episode ep = run_episode(puzzle, net, episode_cap, rng, false);
    if (ep.completed && (!found || ep.actions.size() < best.size())) {
      best = std::move(ep.actions);
      found = true;
    }
  }
  if (!found) {
    throw TrainingError("none of " + std::to_string(n) + " rollouts completed the puzzle");
  }
  return best;
}

}  // namespace lightbot::ppo
