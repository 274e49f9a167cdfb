#pragma once
// Fully observable expert: deterministic actor-critic on the true point-mass
// state (p, v), plus noise-free demo recording under the source theme.
//
// Information firewall: the expert never sees pixels, and nothing the learner
// receives (demo frames) carries expert actions or true states beyond what is
// rendered. Actions/states ARE stored in the episode files for auditing, but
// the learner-facing sampler (DemoSet::sample_pairs) exposes observations only.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <claifo/autodiff.hpp>
#include <claifo/check.hpp>
#include <claifo/checkpoint.hpp>
#include <claifo/env.hpp>
#include <claifo/nets.hpp>
#include <claifo/optim.hpp>
#include <claifo/replay.hpp>
#include <claifo/rng.hpp>

namespace claifo {

// Scripted proportional controller, the independent performance yardstick.
// Gains were tuned by hand long before any learned expert existed.
inline Vec2 oracle_action(const PointMassState& s, const Vec2& goal, double k = 8.0,
                          double kd = 4.0) {
  Vec2 a;
  for (int i = 0; i < 2; ++i) a[i] = std::clamp(k * (goal[i] - s.p[i]) - kd * s.v[i], -1.0, 1.0);
  return a;
}

inline Mat<float> state_row(const PointMassState& s) {
  Mat<float> x(1, 4);
  x(0, 0) = static_cast<float>(s.p[0]);
  x(0, 1) = static_cast<float>(s.p[1]);
  x(0, 2) = static_cast<float>(s.v[0]);
  x(0, 3) = static_cast<float>(s.v[1]);
  return x;
}

// Flat (s, a, r, s') ring buffer for true-state training. Pixel experience
// lives in AgentBuffer; this one is expert-only.
class StateBuffer {
 public:
  explicit StateBuffer(size_t capacity) : capacity_(capacity) {
    require(capacity_ >= 1, "state buffer capacity must be >= 1");
  }

  void push(const PointMassState& s, const Vec2& a, double r, const PointMassState& s2) {
    Record rec;
    rec.s = {float(s.p[0]), float(s.p[1]), float(s.v[0]), float(s.v[1])};
    rec.a = {float(a[0]), float(a[1])};
    rec.r = static_cast<float>(r);
    rec.s2 = {float(s2.p[0]), float(s2.p[1]), float(s2.v[0]), float(s2.v[1])};
    if (rows_.size() < capacity_) {
      rows_.push_back(rec);
    } else {
      rows_[next_] = rec;
    }
    next_ = (next_ + 1) % capacity_;
  }

  size_t size() const { return rows_.size(); }

  struct Batch {
    Mat<float> s;   // B x 4
    Mat<float> a;   // B x 2
    Mat<float> r;   // B x 1
    Mat<float> s2;  // B x 4
  };

  Batch sample(int batch, Rng& rng) const {
    require(batch >= 1, "batch must be >= 1");
    require(!rows_.empty(), "cannot sample from an empty state buffer");
    Batch b{Mat<float>(batch, 4), Mat<float>(batch, 2), Mat<float>(batch, 1),
            Mat<float>(batch, 4)};
    for (int i = 0; i < batch; ++i) {
      const Record& rec = rows_[rng.uniform_int(rows_.size())];
      for (int j = 0; j < 4; ++j) b.s(i, j) = rec.s[j];
      for (int j = 0; j < 2; ++j) b.a(i, j) = rec.a[j];
      b.r(i, 0) = rec.r;
      for (int j = 0; j < 4; ++j) b.s2(i, j) = rec.s2[j];
    }
    return b;
  }

 private:
  struct Record {
    std::array<float, 4> s;
    std::array<float, 2> a;
    float r;
    std::array<float, 4> s2;
  };
  size_t capacity_;
  size_t next_ = 0;
  std::vector<Record> rows_;
};

struct ExpertConfig {
  long steps = 6000;
  long warmup = 500;        // uniform-random actions before learning starts
  int batch = 64;
  double lr = 1e-3;
  double gamma = 0.99;
  double tau = 0.01;
  size_t buffer_capacity = 100000;
  NoiseSchedule noise{1.0, 0.1, 3000};
  int eval_episodes = 10;

  void validate() const {
    require(steps >= 1 && warmup >= 0 && warmup < steps, "bad step/warmup counts");
    require(batch >= 1 && lr > 0.0 && tau > 0.0 && tau <= 1.0, "bad optimizer settings");
    require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
    require(eval_episodes >= 1, "eval_episodes must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const ExpertConfig& c) {
  j = {{"steps", c.steps},   {"warmup", c.warmup},
       {"batch", c.batch},   {"lr", c.lr},
       {"gamma", c.gamma},   {"tau", c.tau},
       {"buffer_capacity", c.buffer_capacity},
       {"noise", c.noise},   {"eval_episodes", c.eval_episodes}};
}

inline void from_json(const nlohmann::json& j, ExpertConfig& c) {
  c = ExpertConfig{};
  if (j.contains("steps")) j.at("steps").get_to(c.steps);
  if (j.contains("warmup")) j.at("warmup").get_to(c.warmup);
  if (j.contains("batch")) j.at("batch").get_to(c.batch);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("gamma")) j.at("gamma").get_to(c.gamma);
  if (j.contains("tau")) j.at("tau").get_to(c.tau);
  if (j.contains("buffer_capacity")) j.at("buffer_capacity").get_to(c.buffer_capacity);
  if (j.contains("noise")) j.at("noise").get_to(c.noise);
  if (j.contains("eval_episodes")) j.at("eval_episodes").get_to(c.eval_episodes);
}

// Actor 4->256->256->2 (tanh), critic 6->256->256->1, plus Polyak targets.
struct Expert {
  Mlp<float> actor, critic, actor_target, critic_target;

  Expert() = default;
  explicit Expert(uint64_t seed) {
    Rng rng(derive_stream(seed, "expert-init"));
    actor = Mlp<float>("expert.actor", {4, 256, 256, 2}, OutputActivation::tanh, rng);
    critic = Mlp<float>("expert.critic", {6, 256, 256, 1}, OutputActivation::none, rng);
    actor_target = actor;
    critic_target = critic;
    for (auto* p : actor_target.params()) p->name += ".target";
    for (auto* p : critic_target.params()) p->name += ".target";
  }

  std::vector<Param<float>*> params() {
    std::vector<Param<float>*> ps;
    for (auto* p : actor.params()) ps.push_back(p);
    for (auto* p : critic.params()) ps.push_back(p);
    for (auto* p : actor_target.params()) ps.push_back(p);
    for (auto* p : critic_target.params()) ps.push_back(p);
    return ps;
  }

  Vec2 policy(const PointMassState& s) {
    Mat<float> a = actor.forward_value(state_row(s));
    return {std::clamp(double(a(0, 0)), -1.0, 1.0), std::clamp(double(a(0, 1)), -1.0, 1.0)};
  }
};

// Mean undiscounted return of `policy` over full episodes. The env's own
// stream drives the start states, so a fixed seed gives a fixed answer.
template <typename Policy>
double rollout_return(const EnvConfig& cfg, Policy&& policy, int episodes, uint64_t seed) {
  require(episodes >= 1, "episodes must be >= 1");
  EnvConfig c = cfg;
  c.seed = seed;
  PointMassEnv env(c);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    PointMassState s = env.reset();
    bool done = false;
    while (!done) {
      StepResult r = env.step(s, policy(s));
      total += r.reward;
      s = r.state;
      done = r.done;
    }
  }
  return total / episodes;
}

inline double oracle_return(const EnvConfig& cfg, int episodes, uint64_t seed) {
  return rollout_return(
      cfg, [&](const PointMassState& s) { return oracle_action(s, cfg.goal); }, episodes, seed);
}

inline double random_return(const EnvConfig& cfg, int episodes, uint64_t seed) {
  Rng rng(derive_stream(seed, "random-policy"));
  return rollout_return(
      cfg,
      [&](const PointMassState&) {
        return Vec2{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      },
      episodes, seed);
}

inline double expert_return(const EnvConfig& cfg, Expert& ex, int episodes, uint64_t seed) {
  return rollout_return(
      cfg, [&](const PointMassState& s) { return ex.policy(s); }, episodes, seed);
}

// Returns here are negative (dense reward is -distance), so raw ratios
// mislead; scores are reported on the random..reference scale instead:
// 0 = random policy, 1 = reference controller.
inline double normalized_score(double g, double g_random, double g_ref) {
  require(g_ref > g_random, "reference must beat the random policy");
  return (g - g_random) / (g_ref - g_random);
}

namespace detail {

template <typename T>
inline typename Tape<T>::Var mse(Tape<T>& t, typename Tape<T>::Var pred, const Mat<T>& target) {
  return t.mean(t.square(t.sub(pred, t.constant(target))));
}

}  // namespace detail

// Plain deterministic actor-critic on the true state. Dense reward only:
// the sparse mode starves exploration here, which is exactly the failure
// the pixel-side preference experiments lean on.
inline Expert train_expert(const EnvConfig& cfg, const ExpertConfig& tc, uint64_t seed) {
  require(cfg.reward_mode == RewardMode::dense, "expert training requires the dense reward mode");
  cfg.validate();
  tc.validate();

  EnvConfig ec = cfg;
  ec.seed = derive_stream(seed, "expert-env");
  PointMassEnv env(ec);

  Expert ex(seed);
  Adam<float> actor_opt(ex.actor.params(), static_cast<float>(tc.lr));
  Adam<float> critic_opt(ex.critic.params(), static_cast<float>(tc.lr));
  StateBuffer buf(tc.buffer_capacity);
  Rng noise_rng(derive_stream(seed, "expert-noise"));
  Rng batch_rng(derive_stream(seed, "expert-batch"));

  const float gamma = static_cast<float>(tc.gamma);
  PointMassState s = env.reset();
  for (long step = 1; step <= tc.steps; ++step) {
    Vec2 a;
    if (step <= tc.warmup) {
      a = {noise_rng.uniform(-1.0, 1.0), noise_rng.uniform(-1.0, 1.0)};
    } else {
      Mat<float> am =
          act(ex.actor, state_row(s), tc.noise.sigma(step), 0.0, noise_rng, ActMode::explore);
      a = {double(am(0, 0)), double(am(0, 1))};
    }
    StepResult res = env.step(s, a);
    buf.push(s, a, res.reward, res.state);
    s = res.done ? env.reset() : res.state;

    if (step <= tc.warmup) continue;
    StateBuffer::Batch b = buf.sample(tc.batch, batch_rng);

    // Episodes end only by time limit, so the target always bootstraps.
    Mat<float> a2 = ex.actor_target.forward_value(b.s2);
    Mat<float> q_in2(b.s2.rows(), 6);
    q_in2 << b.s2, a2;
    Mat<float> y = b.r + gamma * ex.critic_target.forward_value(q_in2);

    {
      Tape<float> t;
      auto q_in = t.constant([&] {
        Mat<float> m(b.s.rows(), 6);
        m << b.s, b.a;
        return m;
      }());
      auto loss = detail::mse(t, ex.critic.forward(t, q_in), y);
      ensure(std::isfinite(t.val(loss)(0, 0)), "critic loss diverged");
      critic_opt.zero_grad();
      t.backward(loss);
      critic_opt.step();
    }
    {
      Tape<float> t;
      auto pi = ex.actor.forward(t, t.constant(b.s));
      auto q_in = t.concat_cols(t.constant(b.s), pi);
      auto q = ex.critic.forward(t, q_in, /*trainable=*/false);
      auto loss = t.neg(t.mean(q));
      ensure(std::isfinite(t.val(loss)(0, 0)), "actor loss diverged");
      actor_opt.zero_grad();
      t.backward(loss);
      actor_opt.step();
    }
    {
      auto at = ex.actor_target.params();
      auto ao = ex.actor.params();
      auto ct = ex.critic_target.params();
      auto co = ex.critic.params();
      soft_update(at, ao, static_cast<float>(tc.tau));
      soft_update(ct, co, static_cast<float>(tc.tau));
    }
  }
  return ex;
}

// Noise-free rollouts rendered with the SOURCE theme and packed into the
// demo episode format. Record 0 is the reset observation (zero action and
// reward); the observation after the final step is dropped so every array
// keeps length T.
template <typename Policy>
DemoSet collect_demos_with(const EnvConfig& source_cfg, Policy&& policy, int n_episodes,
                           uint64_t seed) {
  require(n_episodes >= 1, "n_episodes must be >= 1");
  EnvConfig c = source_cfg;
  c.seed = seed;
  PointMassEnv env(c);
  DemoSet demos;
  for (int e = 0; e < n_episodes; ++e) {
    DemoEpisode ep;
    ep.height = c.image_size;
    ep.width = c.image_size;
    ep.reward_mode = c.reward_mode;
    const long T = c.episode_length;
    ep.actions = Mat<float>::Zero(T, 2);
    ep.states = Mat<float>(T, 4);
    ep.rewards.assign(T, 0.0f);

    PointMassState s = env.reset();
    ep.frames.push_back(frame_to_u8(env.render(s)));
    ep.states.row(0) = state_row(s).row(0);
    for (long t = 1; t <= T; ++t) {
      Vec2 a = policy(s);
      StepResult r = env.step(s, a);
      s = r.state;
      if (t == T) break;  // terminal frame dropped
      ep.frames.push_back(frame_to_u8(env.render(s)));
      ep.actions(t, 0) = static_cast<float>(a[0]);
      ep.actions(t, 1) = static_cast<float>(a[1]);
      ep.rewards[t] = static_cast<float>(r.reward);
      ep.states.row(t) = state_row(s).row(0);
    }
    demos.add(std::move(ep));
  }
  return demos;
}

inline DemoSet collect_demos(Expert& ex, const EnvConfig& source_cfg, int n_episodes,
                             uint64_t seed) {
  return collect_demos_with(
      source_cfg, [&](const PointMassState& s) { return ex.policy(s); }, n_episodes, seed);
}

// Per-episode sum of recorded rewards, averaged over the set. Misses the
// final step of each episode (its frame is dropped), which is well inside
// the 5% consistency band on this task.
inline double demo_mean_return(const DemoSet& demos) {
  require(demos.count() >= 1, "empty demo set");
  double total = 0.0;
  for (size_t i = 0; i < demos.count(); ++i) {
    const DemoEpisode& ep = demos.episode(i);
    for (float r : ep.rewards) total += r;
  }
  return total / static_cast<double>(demos.count());
}

inline void save_expert(const std::string& path, Expert& ex) {
  auto ps = ex.params();
  save_checkpoint(path, ps);
}

inline Expert load_expert(const std::string& path, uint64_t seed = 0) {
  Expert ex(seed);
  auto ps = ex.params();
  load_checkpoint(path, ps);
  return ex;
}

}  // namespace claifo
