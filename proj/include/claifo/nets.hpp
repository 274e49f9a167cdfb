#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "claifo/autodiff.hpp"
#include "claifo/check.hpp"
#include "claifo/rng.hpp"

#include <nlohmann/json.hpp>

namespace claifo {

// Orthogonal init (QR of a Gaussian, signs fixed by R's diagonal), zero
// biases. Deterministic given the rng stream, so seeds reproduce runs.
template <typename T>
Mat<T> orthogonal(Eigen::Index rows, Eigen::Index cols, Rng& rng, T gain = T(1)) {
  const Eigen::Index big = std::max(rows, cols), small = std::min(rows, cols);
  Mat<double> a(big, small);
  for (Eigen::Index i = 0; i < big; ++i)
    for (Eigen::Index j = 0; j < small; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat<double>> qr(a);
  Mat<double> q = qr.householderQ() * Mat<double>::Identity(big, small);
  const Mat<double> r = qr.matrixQR().topRows(small).template triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  Mat<double> w = rows >= cols ? q : Mat<double>(q.transpose());
  return (gain * w).template cast<T>();
}

// Architecture sizes. Defaults are the trained configuration; tests shrink
// them freely since every op is shape-generic.
struct NetConfig {
  int latent_dim = 64;      // m
  int conv_channels = 32;   // all four conv layers
  int mlp_width = 256;      // actor / critic / discriminator hidden width
  int byol_hidden = 128;    // predictor bottleneck
  int action_dim = 2;
  int frame_stack = 3;      // d
  int image_size = 64;
};

enum class OutputActivation { none, tanh, sigmoid };

// Plain fully-connected ReLU stack with an optional squashing output.
template <typename T>
struct Mlp {
  std::vector<Param<T>> ws, bs;
  OutputActivation out = OutputActivation::none;

  Mlp() = default;
  Mlp(const std::string& prefix, const std::vector<int>& dims, OutputActivation out_act,
      Rng& rng, T final_gain = T(1))
      : out(out_act) {
    require(dims.size() >= 2, "Mlp needs at least input and output dims");
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      const T gain = (i + 2 == dims.size()) ? final_gain : T(1);
      ws.emplace_back(prefix + ".l" + std::to_string(i) + ".w",
                      orthogonal<T>(dims[i + 1], dims[i], rng, gain));
      bs.emplace_back(prefix + ".l" + std::to_string(i) + ".b", Mat<T>::Zero(1, dims[i + 1]));
    }
  }

  // Pre-activation of the last layer (the discriminator's logit).
  typename Tape<T>::Var forward_logits(Tape<T>& t, typename Tape<T>::Var x,
                                       bool trainable = true) {
    auto h = x;
    for (size_t i = 0; i < ws.size(); ++i) {
      h = t.linear(h, t.param(ws[i], trainable), t.param(bs[i], trainable));
      if (i + 1 < ws.size()) h = t.relu(h);
    }
    return h;
  }

  typename Tape<T>::Var forward(Tape<T>& t, typename Tape<T>::Var x, bool trainable = true) {
    auto h = forward_logits(t, x, trainable);
    switch (out) {
      case OutputActivation::none: return h;
      case OutputActivation::tanh: return t.tanh_(h);
      case OutputActivation::sigmoid: return t.sigmoid(h);
    }
    return h;
  }

  Mat<T> forward_value(const Mat<T>& x) {
    Tape<T> t;
    return t.val(forward(t, t.constant(x), false));
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> ps;
    for (size_t i = 0; i < ws.size(); ++i) {
      ps.push_back(&ws[i]);
      ps.push_back(&bs[i]);
    }
    return ps;
  }
};

// Convolutional encoder φ: d stacked RGB frames → m-dim latent in (−1,1)^m.
// Four 3×3 conv layers (stride 2-1-1-1, ReLU), a linear head, layer norm,
// tanh.
template <typename T>
struct Encoder {
  NetConfig cfg;
  std::vector<Conv2dSpec> specs;
  std::vector<Param<T>> cw, cb;
  Param<T> fc_w, fc_b, ln_g, ln_b;

  Encoder() = default;
  Encoder(const std::string& prefix, const NetConfig& config, Rng& rng) : cfg(config) {
    const int in_c = 3 * cfg.frame_stack;
    const int ch = cfg.conv_channels;
    int h = cfg.image_size;
    const int strides[4] = {2, 1, 1, 1};
    int c_in = in_c;
    for (int i = 0; i < 4; ++i) {
      Conv2dSpec sp{c_in, h, h, ch, 3, strides[i]};
      sp.validate();
      specs.push_back(sp);
      cw.emplace_back(prefix + ".conv" + std::to_string(i) + ".w",
                      orthogonal<T>(ch, static_cast<Eigen::Index>(c_in) * 9, rng));
      cb.emplace_back(prefix + ".conv" + std::to_string(i) + ".b", Mat<T>::Zero(1, ch));
      h = sp.out_h();
      c_in = ch;
    }
    const Eigen::Index flat = static_cast<Eigen::Index>(ch) * h * h;
    fc_w = Param<T>(prefix + ".fc.w", orthogonal<T>(cfg.latent_dim, flat, rng));
    fc_b = Param<T>(prefix + ".fc.b", Mat<T>::Zero(1, cfg.latent_dim));
    ln_g = Param<T>(prefix + ".ln.gamma", Mat<T>::Ones(1, cfg.latent_dim));
    ln_b = Param<T>(prefix + ".ln.beta", Mat<T>::Zero(1, cfg.latent_dim));
  }

  // Input rows are flattened (3d × H × W) stacks, one per batch element.
  typename Tape<T>::Var forward(Tape<T>& t, typename Tape<T>::Var x, bool trainable = true) {
    require(t.val(x).cols() ==
                static_cast<Eigen::Index>(3 * cfg.frame_stack) * cfg.image_size * cfg.image_size,
            "encoder input has wrong stack shape: ", t.val(x).cols(), " cols");
    auto h = x;
    for (int i = 0; i < 4; ++i)
      h = t.relu(t.conv2d(h, t.param(cw[i], trainable), t.param(cb[i], trainable), specs[i]));
    h = t.linear(h, t.param(fc_w, trainable), t.param(fc_b, trainable));
    h = t.layer_norm(h, t.param(ln_g, trainable), t.param(ln_b, trainable));
    return t.tanh_(h);
  }

  Mat<T> forward_value(const Mat<T>& x) {
    Tape<T> t;
    return t.val(forward(t, t.constant(x), false));
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> ps;
    for (int i = 0; i < 4; ++i) {
      ps.push_back(&cw[i]);
      ps.push_back(&cb[i]);
    }
    ps.push_back(&fc_w);
    ps.push_back(&fc_b);
    ps.push_back(&ln_g);
    ps.push_back(&ln_b);
    return ps;
  }
};

template <typename T>
Mlp<T> make_actor(const std::string& prefix, const NetConfig& c, Rng& rng) {
  // Near-zero output layer keeps the tanh unsaturated until the critic has
  // learned something; a gain-1 init pins actions to ±1 where the gradient
  // underflows to exactly zero and the policy can never move again.
  return Mlp<T>(prefix, {c.latent_dim, c.mlp_width, c.mlp_width, c.action_dim},
                OutputActivation::tanh, rng, T(1e-2));
}

template <typename T>
Mlp<T> make_critic(const std::string& prefix, const NetConfig& c, Rng& rng) {
  return Mlp<T>(prefix, {c.latent_dim + c.action_dim, c.mlp_width, c.mlp_width, 1},
                OutputActivation::none, rng);
}

template <typename T>
Mlp<T> make_discriminator(const std::string& prefix, const NetConfig& c, Rng& rng) {
  return Mlp<T>(prefix, {2 * c.latent_dim, c.mlp_width, c.mlp_width, 1},
                OutputActivation::sigmoid, rng);
}

template <typename T>
Mlp<T> make_byol_predictor(const std::string& prefix, const NetConfig& c, Rng& rng) {
  return Mlp<T>(prefix, {c.latent_dim, c.byol_hidden, c.latent_dim}, OutputActivation::none,
                rng);
}

// Twin critics plus their Polyak targets; targets start as exact copies.
template <typename T>
struct CriticPair {
  Mlp<T> q1, q2, q1_target, q2_target;

  CriticPair() = default;
  CriticPair(const std::string& prefix, const NetConfig& c, Rng& rng)
      : q1(make_critic<T>(prefix + ".q1", c, rng)),
        q2(make_critic<T>(prefix + ".q2", c, rng)),
        q1_target(q1),
        q2_target(q2) {
    for (auto& p : q1_target.params()) p->name += ".target";
    for (auto& p : q2_target.params()) p->name += ".target";
  }

  std::vector<Param<T>*> online_params() {
    auto ps = q1.params();
    for (auto* p : q2.params()) ps.push_back(p);
    return ps;
  }
  std::vector<Param<T>*> target_params() {
    auto ps = q1_target.params();
    for (auto* p : q2_target.params()) ps.push_back(p);
    return ps;
  }

  void polyak(T tau) {
    auto t = target_params();
    soft_update_impl(t, online_params(), tau);
  }

 private:
  static void soft_update_impl(std::vector<Param<T>*>& tgt, const std::vector<Param<T>*>& src,
                               T tau) {
    for (size_t i = 0; i < tgt.size(); ++i)
      tgt[i]->value = (T(1) - tau) * tgt[i]->value + tau * src[i]->value;
  }
};

// σ(t): linear decay over the first `horizon` steps, constant after.
struct NoiseSchedule {
  double start = 1.0;
  double end = 0.1;
  long horizon = 100000;

  double sigma(long t) const {
    require(start >= end && end > 0.0 && horizon > 0, "noise schedule must be non-increasing");
    if (t >= horizon) return end;
    return start + (end - start) * static_cast<double>(t) / static_cast<double>(horizon);
  }
};

inline void to_json(nlohmann::json& j, const NoiseSchedule& n) {
  j = {{"start", n.start}, {"end", n.end}, {"horizon", n.horizon}};
}

inline void from_json(const nlohmann::json& j, NoiseSchedule& n) {
  n = NoiseSchedule{};
  if (j.contains("start")) j.at("start").get_to(n.start);
  if (j.contains("end")) j.at("end").get_to(n.end);
  if (j.contains("horizon")) j.at("horizon").get_to(n.horizon);
}

enum class ActMode { explore, target, eval };

// Action selection: π(z) plus mode-dependent noise, clamped to [−1,1].
// Collection noise is *unclipped*; target-policy smoothing noise is clipped
// to ±c; evaluation is noiseless.
template <typename T>
Mat<T> act(Mlp<T>& actor, const Mat<T>& latent, double sigma, double clip_c, Rng& rng,
           ActMode mode) {
  Mat<T> a = actor.forward_value(latent);
  if (mode != ActMode::eval) {
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        double eps = rng.normal(0.0, sigma);
        if (mode == ActMode::target) eps = std::clamp(eps, -clip_c, clip_c);
        a(i, j) += static_cast<T>(eps);
      }
  }
  return a.cwiseMax(T(-1)).cwiseMin(T(1));
}

}  // namespace claifo
