#pragma once
// The C-LAIfO training loop and its ablation switches.
//
// Per iteration: one environment step in the target domain, then one gradient
// step each for encoder, discriminator, critic, and actor — in that order.
// Rewards are always computed from clean (non-augmented) latents; the critic
// and actor consume augmented latents; the discriminator sees clean latents
// and no gradient reaches the encoder through it.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <claifo/augment.hpp>
#include <claifo/autodiff.hpp>
#include <claifo/check.hpp>
#include <claifo/checkpoint.hpp>
#include <claifo/env.hpp>
#include <claifo/image.hpp>
#include <claifo/losses.hpp>
#include <claifo/nets.hpp>
#include <claifo/optim.hpp>
#include <claifo/replay.hpp>
#include <claifo/rng.hpp>

#include <nlohmann/json.hpp>

namespace claifo {

enum class Variant {
  claifo,
  byol_laifo,
  laifo,
  claifo_no_qbackprop,
  claifo_full_aug,
  claifo_no_aug,
  rl_claifo,
  rl_laifo,
  rl,  // sparse-reward-only baseline: no demos, no discriminator
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::claifo: return "claifo";
    case Variant::byol_laifo: return "byol-laifo";
    case Variant::laifo: return "laifo";
    case Variant::claifo_no_qbackprop: return "claifo-no-qbackprop";
    case Variant::claifo_full_aug: return "claifo-full-aug";
    case Variant::claifo_no_aug: return "claifo-no-aug";
    case Variant::rl_claifo: return "rl+claifo";
    case Variant::rl_laifo: return "rl+laifo";
    case Variant::rl: return "rl";
  }
  ensure(false, "unreachable variant");
  return {};
}

inline Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::claifo, Variant::byol_laifo, Variant::laifo,
                    Variant::claifo_no_qbackprop, Variant::claifo_full_aug, Variant::claifo_no_aug,
                    Variant::rl_claifo, Variant::rl_laifo, Variant::rl})
    if (to_string(v) == s) return v;
  throw input_error("unknown variant: " + s);
}

enum class ContrastiveKind { none, infonce, byol };

// laifo drops the auxiliary loss entirely; the byol ablation swaps InfoNCE
// for a predictor + EMA-target pair. The pure-RL baseline keeps the claifo
// representation machinery so the only difference is the reward.
inline ContrastiveKind variant_contrastive(Variant v) {
  switch (v) {
    case Variant::laifo:
    case Variant::rl_laifo: return ContrastiveKind::none;
    case Variant::byol_laifo: return ContrastiveKind::byol;
    default: return ContrastiveKind::infonce;
  }
}

inline bool variant_uses_imitation_reward(Variant v) { return v != Variant::rl; }

inline bool variant_uses_env_reward(Variant v) {
  return v == Variant::rl_claifo || v == Variant::rl_laifo || v == Variant::rl;
}

// Encoder gradient from the TD loss (on unless the no-qbackprop ablation).
inline bool variant_q_backprop(Variant v) { return v != Variant::claifo_no_qbackprop; }

// Ablations whose definition pins the augmentation preset.
inline std::optional<std::string> variant_forced_preset(Variant v) {
  switch (v) {
    case Variant::laifo:
    case Variant::rl_laifo:
    case Variant::claifo_no_aug: return "none";
    case Variant::claifo_full_aug: return "full";
    default: return std::nullopt;
  }
}

struct AlgoConfig {
  Variant variant = Variant::claifo;
  std::string preset = "light";  // augmentation preset, unless the variant pins it
  long steps = 30000;            // T_train
  long warmup = 1000;            // env steps before any update
  long eval_interval = 5000;
  int eval_episodes = 10;
  uint64_t seed = 1;
  Hyperparams hp;
  NetConfig net;                 // frame_stack / image_size are synced from hp
  NoiseSchedule noise;
  double byol_ema = 0.99;
  size_t buffer_capacity = 150000;

  void validate() const {
    require(steps >= 1, "steps must be >= 1");
    require(warmup >= 0 && warmup < steps, "warmup must lie in [0, steps)");
    require(warmup >= hp.batch + hp.d + 2, "warmup too short to fill a sample batch");
    require(eval_interval >= 1 && eval_episodes >= 1, "bad eval settings");
    require(byol_ema > 0.0 && byol_ema < 1.0, "byol_ema must lie in (0, 1)");
    require(buffer_capacity >= static_cast<size_t>(hp.batch) + 2, "buffer too small");
    hp.validate();
    if (auto forced = variant_forced_preset(variant))
      require(preset == *forced, "variant ", to_string(variant), " requires preset ", *forced,
              ", got ", preset);
    require(!(variant == Variant::claifo_no_qbackprop && preset == "full"),
            "claifo-no-qbackprop with the full preset is undefined; use light or none");
    make_pipeline(preset);  // throws on unknown preset names
  }
};

inline void to_json(nlohmann::json& j, const NetConfig& c) {
  j = {{"latent_dim", c.latent_dim},   {"conv_channels", c.conv_channels},
       {"mlp_width", c.mlp_width},     {"byol_hidden", c.byol_hidden},
       {"action_dim", c.action_dim},   {"frame_stack", c.frame_stack},
       {"image_size", c.image_size}};
}

inline void from_json(const nlohmann::json& j, NetConfig& c) {
  c = NetConfig{};
  if (j.contains("latent_dim")) j.at("latent_dim").get_to(c.latent_dim);
  if (j.contains("conv_channels")) j.at("conv_channels").get_to(c.conv_channels);
  if (j.contains("mlp_width")) j.at("mlp_width").get_to(c.mlp_width);
  if (j.contains("byol_hidden")) j.at("byol_hidden").get_to(c.byol_hidden);
  if (j.contains("action_dim")) j.at("action_dim").get_to(c.action_dim);
  if (j.contains("frame_stack")) j.at("frame_stack").get_to(c.frame_stack);
  if (j.contains("image_size")) j.at("image_size").get_to(c.image_size);
}

inline void to_json(nlohmann::json& j, const AlgoConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"preset", c.preset},
       {"steps", c.steps},
       {"warmup", c.warmup},
       {"eval_interval", c.eval_interval},
       {"eval_episodes", c.eval_episodes},
       {"seed", c.seed},
       {"hyperparams", c.hp},
       {"net", c.net},
       {"noise", c.noise},
       {"byol_ema", c.byol_ema},
       {"buffer_capacity", c.buffer_capacity}};
}

inline void from_json(const nlohmann::json& j, AlgoConfig& c) {
  c = AlgoConfig{};
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("preset")) j.at("preset").get_to(c.preset);
  if (j.contains("steps")) j.at("steps").get_to(c.steps);
  if (j.contains("warmup")) j.at("warmup").get_to(c.warmup);
  if (j.contains("eval_interval")) j.at("eval_interval").get_to(c.eval_interval);
  if (j.contains("eval_episodes")) j.at("eval_episodes").get_to(c.eval_episodes);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("hyperparams")) j.at("hyperparams").get_to(c.hp);
  if (j.contains("net")) j.at("net").get_to(c.net);
  if (j.contains("noise")) j.at("noise").get_to(c.noise);
  if (j.contains("byol_ema")) j.at("byol_ema").get_to(c.byol_ema);
  if (j.contains("buffer_capacity")) j.at("buffer_capacity").get_to(c.buffer_capacity);
}

// Ready-made experiment scales. "desk" fits a single core in a few minutes
// per run; "spec" is the full-size recipe (64×64 frames, batch 128, 150k
// steps) and wants a workstation.
inline AlgoConfig make_profile(const std::string& name) {
  AlgoConfig c;
  if (name == "spec") {
    c.steps = 150000;
    c.warmup = 4000;
    c.eval_interval = 10000;
    c.hp.image_size = 64;
    c.hp.batch = 128;
    c.noise = NoiseSchedule{1.0, 0.1, 50000};
    c.buffer_capacity = 150000;
  } else if (name == "desk") {
    c.steps = 8000;
    c.warmup = 500;
    c.eval_interval = 1000;
    c.hp.d = 2;
    c.hp.image_size = 20;
    c.hp.batch = 16;
    c.hp.alpha = 3e-4;
    c.hp.alpha_disc = 1.2e-3;
    c.net.latent_dim = 32;
    c.net.conv_channels = 8;
    c.net.mlp_width = 64;
    c.net.byol_hidden = 64;
    c.noise = NoiseSchedule{1.0, 0.1, 3000};
    c.buffer_capacity = 20000;
  } else {
    throw input_error("unknown profile: " + name);
  }
  return c;
}

// Matching environment scale; the theme is the caller's business.
inline EnvConfig make_profile_env(const std::string& name) {
  EnvConfig e;
  e.image_size = make_profile(name).hp.image_size;
  return e;
}

struct MetricsRow {
  long step = 0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double loss_disc = 0.0;
  double loss_critic = 0.0;
  double loss_contrastive = 0.0;
  double loss_actor = 0.0;
  double r_chi_mean = 0.0;
  double env_reward_mean = 0.0;
};

inline const char* metrics_csv_header() {
  return "step,eval_return_mean,eval_return_std,loss_disc,loss_critic,loss_contrastive,"
         "loss_actor,r_chi_mean,env_reward_mean";
}

inline std::string metrics_csv_line(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", r.step,
                r.eval_return_mean, r.eval_return_std, r.loss_disc, r.loss_critic,
                r.loss_contrastive, r.loss_actor, r.r_chi_mean, r.env_reward_mean);
  return buf;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "cannot open metrics file: ", path);
  f << metrics_csv_header() << "\n";
  for (const MetricsRow& r : rows) f << metrics_csv_line(r) << "\n";
  ensure(f.good(), "short write on metrics file");
}

struct EvalStats {
  double mean = 0.0;
  double stdev = 0.0;
  std::vector<double> returns;
};

// Fraction of evaluation episodes whose return clears `threshold`. With the
// sparse reward this reads "parked in the goal for at least `threshold` of
// the episode's steps".
inline double success_rate(const EvalStats& ev, double threshold = 50.0) {
  require(!ev.returns.empty(), "success_rate: no eval returns");
  double n = 0.0;
  for (double g : ev.returns) n += (g >= threshold) ? 1.0 : 0.0;
  return n / static_cast<double>(ev.returns.size());
}

namespace detail {

inline Frame row_to_stack(const Mat<float>& m, Eigen::Index row, int channels, int h, int w) {
  Frame f(channels, h, w);
  require(m.cols() == static_cast<Eigen::Index>(f.data.size()), "row/stack size mismatch");
  std::memcpy(f.data.data(), m.row(row).data(), f.data.size() * sizeof(float));
  return f;
}

inline void stack_to_row(const Frame& f, Mat<float>& m, Eigen::Index row) {
  require(m.cols() == static_cast<Eigen::Index>(f.data.size()), "row/stack size mismatch");
  std::memcpy(m.row(row).data(), f.data.data(), f.data.size() * sizeof(float));
}

}  // namespace detail

// One independent parameter draw per stack; all frames in a stack share it.
inline Mat<float> augment_rows(const AugmentPipeline& pipeline, const Mat<float>& batch,
                               int channels, int h, int w, Rng& rng) {
  if (pipeline.ops.empty()) return batch;
  Mat<float> out(batch.rows(), batch.cols());
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    const ParamDraw draw = sample_params(pipeline, rng);
    detail::stack_to_row(apply_stacked(draw, detail::row_to_stack(batch, r, channels, h, w)), out,
                         r);
  }
  return out;
}

// TrainState plus the five Algorithm-1 operations as methods. Everything is
// seed-derived: env, augmentation, action noise, and batch sampling each own
// an independent stream.
class Trainer {
 public:
  Trainer(AlgoConfig cfg, EnvConfig target_cfg, DemoSet demos)
      : cfg_(std::move(cfg)),
        env_cfg_(sync_env(target_cfg, cfg_)),
        env_(env_cfg_),
        demos_(std::move(demos)),
        aug_(make_pipeline(cfg_.preset)),
        init_rng_(derive_stream(cfg_.seed, "init")),
        encoder_("encoder", net_cfg(cfg_), init_rng_),
        actor_(make_actor<float>("actor", net_cfg(cfg_), init_rng_)),
        critics_("critic", net_cfg(cfg_), init_rng_),
        disc_(make_discriminator<float>("disc", net_cfg(cfg_), init_rng_)),
        buffer_(cfg_.buffer_capacity, cfg_.hp.image_size, cfg_.hp.image_size,
                net_cfg(cfg_).action_dim),
        rng_aug_(derive_stream(cfg_.seed, "augment")),
        rng_noise_(derive_stream(cfg_.seed, "noise")),
        rng_sample_(derive_stream(cfg_.seed, "sample")),
        opt_enc_(encoder_.params(), static_cast<float>(cfg_.hp.alpha)),
        opt_actor_(actor_.params(), static_cast<float>(cfg_.hp.alpha)),
        opt_critic_(critics_.online_params(), static_cast<float>(cfg_.hp.alpha)),
        opt_disc_(disc_.params(), static_cast<float>(cfg_.hp.alpha_disc)) {
    cfg_.validate();
    cfg_.net = net_cfg(cfg_);  // snapshot the effective net shape
    if (variant_uses_imitation_reward(cfg_.variant))
      require(demos_.count() >= 1, "variant ", to_string(cfg_.variant), " needs expert demos");
    if (variant_contrastive(cfg_.variant) == ContrastiveKind::byol) {
      byol_target_ = encoder_;
      for (auto* p : byol_target_.params()) p->name += ".byol-target";
      byol_pred_ = make_byol_predictor<float>("byol.pred", net_cfg(cfg_), init_rng_);
      opt_byol_ = Adam<float>(byol_pred_.params(), static_cast<float>(cfg_.hp.alpha));
    }
    begin_episode();
  }

  // Optimizers hold pointers into the parameter structs, so the object must
  // stay put.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // --- Algorithm-1 operations -----------------------------------------

  // Acts on the clean latent of the current stack (identity augmentation),
  // with unclipped exploration noise, and stores the outcome.
  void collect_step() {
    ++t_;
    const Mat<float> z = encoder_.forward_value(current_stack_row());
    const Mat<float> a =
        act(actor_, z, cfg_.noise.sigma(t_), cfg_.hp.clip_c, rng_noise_, ActMode::explore);
    const StepResult res = env_.step(s_, {double(a(0, 0)), double(a(0, 1))});
    const Frame fr = env_.render(res.state);
    buffer_.push(fr, a, res.done, static_cast<float>(res.reward));
    acc_env_r_ += res.reward;
    ++n_env_;
    if (res.done) {
      begin_episode();
    } else {
      s_ = res.state;
      push_stack(fr);
    }
  }

  // One step on the auxiliary representation loss; encoder (+ BYOL head)
  // only. No-op for the laifo family.
  void update_encoder() {
    const ContrastiveKind kind = variant_contrastive(cfg_.variant);
    if (kind == ContrastiveKind::none) return;
    const Mat<float> obs =
        buffer_.sample_transitions(cfg_.hp.batch, cfg_.hp.d, rng_sample_).obs;
    Mat<float> xi(obs.rows(), obs.cols()), xj(obs.rows(), obs.cols());
    const int ch = 3 * cfg_.hp.d, hw = cfg_.hp.image_size;
    for (Eigen::Index r = 0; r < obs.rows(); ++r) {
      auto [vi, vj] = positive_pair(aug_, detail::row_to_stack(obs, r, ch, hw, hw), rng_aug_);
      detail::stack_to_row(vi, xi, r);
      detail::stack_to_row(vj, xj, r);
    }
    Tape<float> t;
    const auto zi = encoder_.forward(t, t.constant(xi));
    const auto zj = encoder_.forward(t, t.constant(xj));
    typename Tape<float>::Var loss;
    if (kind == ContrastiveKind::infonce) {
      loss = infonce(t, zi, zj, static_cast<float>(cfg_.hp.eta));
    } else {
      const Mat<float> ti = byol_target_.forward_value(xi);
      const Mat<float> tj = byol_target_.forward_value(xj);
      loss = t.scale(
          t.add(byol_loss(t, byol_pred_, zi, tj), byol_loss(t, byol_pred_, zj, ti)), 0.5f);
    }
    ensure(std::isfinite(t.val(loss)(0, 0)), "contrastive loss diverged at step ", t_);
    opt_enc_.zero_grad();
    if (kind == ContrastiveKind::byol) opt_byol_->zero_grad();
    t.backward(loss);
    opt_enc_.step();
    if (kind == ContrastiveKind::byol) {
      opt_byol_->step();
      auto tp = byol_target_.params();
      auto op = encoder_.params();
      soft_update(tp, op, static_cast<float>(1.0 - cfg_.byol_ema));
    }
    acc_contr_ += t.val(loss)(0, 0);
    ++n_contr_;
  }

  // BCE on clean latents; only the discriminator moves, and the augmentation
  // stream is never touched here.
  void update_discriminator() {
    if (!variant_uses_imitation_reward(cfg_.variant)) return;
    const auto ex = demos_.sample_pairs(cfg_.hp.batch, cfg_.hp.d, rng_sample_);
    const auto ag = buffer_.sample_transitions(cfg_.hp.batch, cfg_.hp.d, rng_sample_);
    const Mat<float> ze = encoder_.forward_value(ex.obs);
    const Mat<float> ze2 = encoder_.forward_value(ex.next_obs);
    const Mat<float> za = encoder_.forward_value(ag.obs);
    const Mat<float> za2 = encoder_.forward_value(ag.next_obs);
    Mat<float> expert_pairs(ze.rows(), ze.cols() * 2), agent_pairs(za.rows(), za.cols() * 2);
    expert_pairs << ze, ze2;
    agent_pairs << za, za2;
    Tape<float> t;
    const auto loss =
        discriminator_bce(t, disc_, t.constant(expert_pairs), t.constant(agent_pairs));
    opt_disc_.zero_grad();
    t.backward(loss);
    opt_disc_.step();
    acc_disc_ += t.val(loss)(0, 0);
    ++n_disc_;
  }

  // TD step: reward from clean latents, Q inputs from augmented latents,
  // target action from the augmented next latent with clipped noise. The
  // encoder shares this step unless the no-qbackprop ablation is active.
  void update_critic() {
    const auto b = buffer_.sample_transitions(cfg_.hp.batch, cfg_.hp.d, rng_sample_);
    Mat<float> reward = Mat<float>::Zero(b.rewards.rows(), 1);
    if (variant_uses_imitation_reward(cfg_.variant)) {
      const Mat<float> z = encoder_.forward_value(b.obs);
      const Mat<float> z2 = encoder_.forward_value(b.next_obs);
      reward = imitation_reward(disc_, z, z2);
      acc_rchi_ += reward.mean();
      ++n_rchi_;
    }
    if (variant_uses_env_reward(cfg_.variant))
      for (Eigen::Index i = 0; i < reward.rows(); ++i)
        reward(i, 0) = combined_reward(b.rewards(i, 0), reward(i, 0));

    const int ch = 3 * cfg_.hp.d, hw = cfg_.hp.image_size;
    const Mat<float> xa = augment_rows(aug_, b.obs, ch, hw, hw, rng_aug_);
    const Mat<float> xa2 = augment_rows(aug_, b.next_obs, ch, hw, hw, rng_aug_);
    const Mat<float> z2a = encoder_.forward_value(xa2);
    const double sigma = cfg_.noise.sigma(t_);
    const Mat<float> y =
        td_target(critics_, actor_, z2a, reward, static_cast<float>(cfg_.hp.gamma), sigma,
                  cfg_.hp.clip_c, rng_noise_);

    const bool qbp = variant_q_backprop(cfg_.variant);
    Tape<float> t;
    const auto za = encoder_.forward(t, t.constant(xa), /*trainable=*/qbp);
    const auto loss = critic_td_loss(t, critics_, za, b.actions, y);
    ensure(std::isfinite(t.val(loss)(0, 0)), "critic loss diverged at step ", t_);
    opt_critic_.zero_grad();
    if (qbp) opt_enc_.zero_grad();
    t.backward(loss);
    opt_critic_.step();
    if (qbp) opt_enc_.step();
    critics_.polyak(static_cast<float>(cfg_.hp.tau));
    acc_critic_ += t.val(loss)(0, 0);
    ++n_critic_;
  }

  // DDPG actor step on augmented, detached latents; only θ moves.
  void update_actor() {
    const auto b = buffer_.sample_transitions(cfg_.hp.batch, cfg_.hp.d, rng_sample_);
    const int ch = 3 * cfg_.hp.d, hw = cfg_.hp.image_size;
    const Mat<float> xa = augment_rows(aug_, b.obs, ch, hw, hw, rng_aug_);
    const Mat<float> z = encoder_.forward_value(xa);
    Tape<float> t;
    const auto loss =
        actor_loss(t, actor_, critics_, z, cfg_.noise.sigma(t_), cfg_.hp.clip_c, rng_noise_);
    ensure(std::isfinite(t.val(loss)(0, 0)), "actor loss diverged at step ", t_);
    opt_actor_.zero_grad();
    t.backward(loss);
    opt_actor_.step();
    acc_actor_ += t.val(loss)(0, 0);
    ++n_actor_;
  }

  // 10 noiseless episodes in the target env; the eval stream is fixed per
  // run, so every round replays the same start states.
  EvalStats evaluate() {
    EnvConfig ec = env_cfg_;
    ec.seed = derive_stream(cfg_.seed, "eval-env");
    PointMassEnv eenv(ec);
    Rng unused(0);
    EvalStats ev;
    for (int e = 0; e < cfg_.eval_episodes; ++e) {
      PointMassState s = eenv.reset();
      std::vector<Frame> stack(cfg_.hp.d, eenv.render(s));
      double ret = 0.0;
      bool done = false;
      while (!done) {
        const Mat<float> z = encoder_.forward_value(stack_row(stack));
        const Mat<float> a = act(actor_, z, 0.0, 0.0, unused, ActMode::eval);
        const StepResult r = eenv.step(s, {double(a(0, 0)), double(a(0, 1))});
        ret += r.reward;
        s = r.state;
        stack.erase(stack.begin());
        stack.push_back(eenv.render(s));
        done = r.done;
      }
      ev.returns.push_back(ret);
    }
    double sum = 0.0, sq = 0.0;
    for (double g : ev.returns) sum += g;
    ev.mean = sum / ev.returns.size();
    for (double g : ev.returns) sq += (g - ev.mean) * (g - ev.mean);
    ev.stdev = std::sqrt(sq / ev.returns.size());
    return ev;
  }

  // Drains the loss accumulators into a metrics row for the current step.
  MetricsRow metrics_row(const EvalStats& ev) {
    MetricsRow r;
    r.step = t_;
    r.eval_return_mean = ev.mean;
    r.eval_return_std = ev.stdev;
    r.loss_disc = n_disc_ ? acc_disc_ / n_disc_ : 0.0;
    r.loss_critic = n_critic_ ? acc_critic_ / n_critic_ : 0.0;
    r.loss_contrastive = n_contr_ ? acc_contr_ / n_contr_ : 0.0;
    r.loss_actor = n_actor_ ? acc_actor_ / n_actor_ : 0.0;
    r.r_chi_mean = n_rchi_ ? acc_rchi_ / n_rchi_ : 0.0;
    r.env_reward_mean = n_env_ ? acc_env_r_ / n_env_ : 0.0;
    acc_disc_ = acc_critic_ = acc_contr_ = acc_actor_ = acc_rchi_ = acc_env_r_ = 0.0;
    n_disc_ = n_critic_ = n_contr_ = n_actor_ = n_rchi_ = n_env_ = 0;
    return r;
  }

  std::vector<Param<float>*> checkpoint_params() {
    std::vector<Param<float>*> ps;
    auto push_all = [&ps](std::vector<Param<float>*> v) {
      for (auto* p : v) ps.push_back(p);
    };
    push_all(encoder_.params());
    push_all(actor_.params());
    push_all(critics_.online_params());
    push_all(critics_.target_params());
    push_all(disc_.params());
    if (variant_contrastive(cfg_.variant) == ContrastiveKind::byol) {
      push_all(byol_target_.params());
      push_all(byol_pred_.params());
    }
    return ps;
  }

  const AlgoConfig& config() const { return cfg_; }
  const EnvConfig& env_config() const { return env_cfg_; }
  long step_count() const { return t_; }
  AgentBuffer& buffer() { return buffer_; }
  Encoder<float>& encoder() { return encoder_; }
  Mlp<float>& actor() { return actor_; }
  CriticPair<float>& critics() { return critics_; }
  Mlp<float>& discriminator() { return disc_; }
  Mlp<float>& byol_predictor() { return byol_pred_; }
  Encoder<float>& byol_target() { return byol_target_; }
  uint64_t aug_rng_calls() const { return rng_aug_.calls(); }

 private:
  static EnvConfig sync_env(EnvConfig ec, const AlgoConfig& ac) {
    require(ec.image_size == ac.hp.image_size, "env image_size (", ec.image_size,
            ") must match hyperparams (", ac.hp.image_size, ")");
    ec.seed = derive_stream(ac.seed, "train-env");
    return ec;
  }

  static NetConfig net_cfg(const AlgoConfig& ac) {
    NetConfig n = ac.net;
    n.frame_stack = ac.hp.d;
    n.image_size = ac.hp.image_size;
    return n;
  }

  void begin_episode() {
    s_ = env_.reset();
    const Frame f0 = env_.render(s_);
    buffer_.push(f0, Mat<float>::Zero(1, net_cfg(cfg_).action_dim), false, 0.0f);
    stack_.assign(cfg_.hp.d, f0);
  }

  void push_stack(const Frame& f) {
    stack_.erase(stack_.begin());
    stack_.push_back(f);
  }

  Mat<float> stack_row(const std::vector<Frame>& stack) const {
    const Frame st = stack_frames(stack);
    Mat<float> m(1, static_cast<Eigen::Index>(st.data.size()));
    std::memcpy(m.data(), st.data.data(), st.data.size() * sizeof(float));
    return m;
  }

  Mat<float> current_stack_row() const { return stack_row(stack_); }

  AlgoConfig cfg_;
  EnvConfig env_cfg_;
  PointMassEnv env_;
  DemoSet demos_;
  AugmentPipeline aug_;
  Rng init_rng_;
  Encoder<float> encoder_;
  Mlp<float> actor_;
  CriticPair<float> critics_;
  Mlp<float> disc_;
  Encoder<float> byol_target_;
  Mlp<float> byol_pred_;
  AgentBuffer buffer_;
  Rng rng_aug_, rng_noise_, rng_sample_;
  Adam<float> opt_enc_, opt_actor_, opt_critic_, opt_disc_;
  std::optional<Adam<float>> opt_byol_;
  long t_ = 0;
  PointMassState s_;
  std::vector<Frame> stack_;
  double acc_disc_ = 0, acc_critic_ = 0, acc_contr_ = 0, acc_actor_ = 0, acc_rchi_ = 0,
         acc_env_r_ = 0;
  long n_disc_ = 0, n_critic_ = 0, n_contr_ = 0, n_actor_ = 0, n_rchi_ = 0, n_env_ = 0;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  EvalStats final_eval;
};

// Full run: collect, then the four updates in Algorithm-1 order once past
// warmup; evaluate every eval_interval steps. When out_dir is non-empty the
// config, metrics CSV, and a final checkpoint land there.
inline TrainResult train(const AlgoConfig& cfg, const EnvConfig& target_cfg, DemoSet demos,
                         const std::string& out_dir = "") {
  cfg.validate();
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  Trainer tr(cfg, target_cfg, std::move(demos));
  TrainResult res;
  for (long t = 1; t <= cfg.steps; ++t) {
    tr.collect_step();
    if (t > cfg.warmup) {
      tr.update_encoder();
      tr.update_discriminator();
      tr.update_critic();
      tr.update_actor();
    }
    if (t % cfg.eval_interval == 0) {
      const EvalStats ev = tr.evaluate();
      res.metrics.push_back(tr.metrics_row(ev));
      res.final_eval = ev;
      if (!out_dir.empty())
        write_metrics_csv((std::filesystem::path(out_dir) / "metrics.csv").string(), res.metrics);
    }
  }
  if (res.metrics.empty() || res.metrics.back().step != cfg.steps) res.final_eval = tr.evaluate();
  if (!out_dir.empty()) {
    const std::filesystem::path dir(out_dir);
    std::ofstream cf(dir / "config.json", std::ios::trunc);
    cf << nlohmann::json(tr.config()).dump(2) << "\n";
    ensure(cf.good(), "short write on config.json");
    nlohmann::json ej = target_cfg;
    std::ofstream ef(dir / "env.json", std::ios::trunc);
    ef << ej.dump(2) << "\n";
    ensure(ef.good(), "short write on env.json");
    write_metrics_csv((dir / "metrics.csv").string(), res.metrics);
    auto ps = tr.checkpoint_params();
    save_checkpoint((dir / "checkpoint.bin").string(), ps);
  }
  return res;
}

}  // namespace claifo
