#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>

#include <json.hpp>

#include "claifo/check.hpp"
#include "claifo/image.hpp"
#include "claifo/rng.hpp"

namespace claifo {

using Vec2 = std::array<double, 2>;

inline double norm2(const Vec2& a, const Vec2& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return std::sqrt(dx * dx + dy * dy);
}

// True (hidden) environment state: a point mass on the unit square.
struct PointMassState {
  Vec2 p{0.0, 0.0};  // position, componentwise in [-1, 1]
  Vec2 v{0.0, 0.0};  // velocity, componentwise in [-0.2, 0.2]
  int t = 0;         // steps taken this episode
};

// Everything the renderer knows that the dynamics do not. Source and target
// domains share dynamics and differ only in this struct.
struct VisualTheme {
  double brightness = 1.0;
  std::array<double, 3> c_bg{0.10, 0.12, 0.16};
  std::array<double, 3> c_agent{0.85, 0.20, 0.15};
  std::array<double, 3> c_goal{0.15, 0.80, 0.25};
};

enum class RewardMode { dense, sparse };

inline std::string to_string(RewardMode m) { return m == RewardMode::dense ? "dense" : "sparse"; }

inline RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "dense") return RewardMode::dense;
  if (s == "sparse") return RewardMode::sparse;
  throw input_error("unknown reward_mode: " + s);
}

struct EnvConfig {
  int image_size = 64;
  int episode_length = 100;
  Vec2 goal{0.6, 0.6};
  double goal_radius = 0.15;
  RewardMode reward_mode = RewardMode::dense;
  double damping = 0.9;
  double force_gain = 0.03;
  VisualTheme theme;
  uint64_t seed = 0;

  void validate() const {
    require(image_size >= 16, "image_size must be >= 16, got ", image_size);
    require(episode_length > 0, "episode_length must be positive");
    require(std::abs(goal[0]) <= 1.0 && std::abs(goal[1]) <= 1.0, "goal must lie in [-1,1]^2");
    require(goal_radius > 0.0, "goal_radius must be positive");
    require(theme.brightness >= 0.0, "brightness must be >= 0");
  }
};

// --- JSON plumbing -----------------------------------------------------------

inline void to_json(nlohmann::json& j, const VisualTheme& t) {
  j = nlohmann::json{{"brightness", t.brightness},
                     {"c_bg", t.c_bg},
                     {"c_agent", t.c_agent},
                     {"c_goal", t.c_goal}};
}

inline void from_json(const nlohmann::json& j, VisualTheme& t) {
  t = VisualTheme{};
  if (j.contains("brightness")) j.at("brightness").get_to(t.brightness);
  if (j.contains("c_bg")) j.at("c_bg").get_to(t.c_bg);
  if (j.contains("c_agent")) j.at("c_agent").get_to(t.c_agent);
  if (j.contains("c_goal")) j.at("c_goal").get_to(t.c_goal);
}

inline void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"episode_length", c.episode_length},
                     {"goal", c.goal},
                     {"goal_radius", c.goal_radius},
                     {"reward_mode", to_string(c.reward_mode)},
                     {"damping", c.damping},
                     {"force_gain", c.force_gain},
                     {"theme", c.theme},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, EnvConfig& c) {
  c = EnvConfig{};
  if (j.contains("image_size")) j.at("image_size").get_to(c.image_size);
  if (j.contains("episode_length")) j.at("episode_length").get_to(c.episode_length);
  if (j.contains("goal")) j.at("goal").get_to(c.goal);
  if (j.contains("goal_radius")) j.at("goal_radius").get_to(c.goal_radius);
  if (j.contains("reward_mode"))
    c.reward_mode = reward_mode_from_string(j.at("reward_mode").get<std::string>());
  if (j.contains("damping")) j.at("damping").get_to(c.damping);
  if (j.contains("force_gain")) j.at("force_gain").get_to(c.force_gain);
  if (j.contains("theme")) j.at("theme").get_to(c.theme);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

// --- Rendering ---------------------------------------------------------------

constexpr double kGoalDiscRadius = 0.12;
constexpr double kAgentDiscRadius = 0.08;

// --- Environment -------------------------------------------------------------

struct StepResult {
  PointMassState state;
  double reward = 0.0;
  bool done = false;
};

class PointMassEnv {
 public:
  explicit PointMassEnv(EnvConfig config) : cfg_(std::move(config)) {
    cfg_.validate();
    rng_.reseed(derive_stream(cfg_.seed, "env"));
  }

  const EnvConfig& config() const { return cfg_; }

  // p0 ~ Uniform([-0.8,-0.4]^2), v0 = 0.
  PointMassState reset() {
    PointMassState s;
    s.p = {rng_.uniform(-0.8, -0.4), rng_.uniform(-0.8, -0.4)};
    s.v = {0.0, 0.0};
    s.t = 0;
    return s;
  }

  StepResult step(const PointMassState& s, const Vec2& a) const {
    require(std::abs(a[0]) <= 1.0 && std::abs(a[1]) <= 1.0,
            "action out of range: (", a[0], ", ", a[1], ")");
    PointMassState n = s;
    for (int i = 0; i < 2; ++i) {
      double vi = std::clamp(cfg_.damping * s.v[i] + cfg_.force_gain * a[i], -0.2, 0.2);
      double pi = s.p[i] + vi;
      if (pi > 1.0) {
        pi = 1.0;
        vi = 0.0;  // wall contact kills the normal velocity component
      } else if (pi < -1.0) {
        pi = -1.0;
        vi = 0.0;
      }
      n.v[i] = vi;
      n.p[i] = pi;
    }
    n.t = s.t + 1;
    const double dist = norm2(n.p, cfg_.goal);
    const double reward =
        cfg_.reward_mode == RewardMode::dense ? -dist : (dist <= cfg_.goal_radius ? 1.0 : 0.0);
    return {n, reward, n.t >= cfg_.episode_length};
  }

  Frame render(const PointMassState& s) const { return render_state(s, cfg_); }

  static Frame render_state(const PointMassState& s, const EnvConfig& cfg) {
    return render_state(s, cfg.theme, cfg.image_size, cfg.goal);
  }

  // Pure function of (state, theme): background, goal disc, agent disc on
  // top. A pixel belongs to a disc iff its center does — no anti-aliasing, so
  // output bytes are identical across platforms. World [-1,1]^2 maps to the
  // full image; row 0 is the top (world y = +1).
  static Frame render_state(const PointMassState& s, const VisualTheme& theme, int image_size,
                            const Vec2& goal) {
    require(image_size >= 16, "image_size must be >= 16");
    Frame f(3, image_size, image_size);
    const double b = theme.brightness;
    std::array<float, 3> bg, goal_col, agent_col;
    for (int c = 0; c < 3; ++c) {
      bg[c] = static_cast<float>(std::clamp(b * theme.c_bg[c], 0.0, 1.0));
      goal_col[c] = static_cast<float>(std::clamp(b * theme.c_goal[c], 0.0, 1.0));
      agent_col[c] = static_cast<float>(std::clamp(b * theme.c_agent[c], 0.0, 1.0));
    }
    const double scale = 2.0 / image_size;
    for (int iy = 0; iy < image_size; ++iy) {
      const double wy = 1.0 - (iy + 0.5) * scale;
      for (int ix = 0; ix < image_size; ++ix) {
        const double wx = -1.0 + (ix + 0.5) * scale;
        for (int c = 0; c < 3; ++c) f.at(c, iy, ix) = bg[c];
        const double dgx = wx - goal[0], dgy = wy - goal[1];
        if (dgx * dgx + dgy * dgy <= kGoalDiscRadius * kGoalDiscRadius)
          for (int c = 0; c < 3; ++c) f.at(c, iy, ix) = goal_col[c];
        const double dax = wx - s.p[0], day = wy - s.p[1];
        if (dax * dax + day * day <= kAgentDiscRadius * kAgentDiscRadius)
          for (int c = 0; c < 3; ++c) f.at(c, iy, ix) = agent_col[c];
      }
    }
    return f;
  }

 private:
  EnvConfig cfg_;
  Rng rng_;
};

// Source/target config pairs for the three mismatch experiments. Dynamics,
// goal and horizon are shared; only the theme differs.
inline std::pair<EnvConfig, EnvConfig> make_mismatch_pair(const std::string& kind,
                                                          const EnvConfig& base = {}) {
  EnvConfig source = base;
  source.theme = VisualTheme{};  // canonical source palette
  EnvConfig target = source;
  if (kind == "light") {
    target.theme.brightness = 0.45;
  } else if (kind == "color") {
    target.theme.c_bg = {0.18, 0.10, 0.12};
    target.theme.c_agent = {0.15, 0.85, 0.20};  // source palette rotated (r,g,b)->(b,r,g)
    target.theme.c_goal = {0.25, 0.15, 0.80};
  } else if (kind == "full") {
    target.theme.brightness = 0.45;
    target.theme.c_bg = {0.18, 0.10, 0.12};
    target.theme.c_agent = {0.15, 0.85, 0.20};
    target.theme.c_goal = {0.25, 0.15, 0.80};
  } else if (kind != "none") {
    throw input_error("unknown mismatch kind: " + kind);
  }
  return {source, target};
}

}  // namespace claifo
