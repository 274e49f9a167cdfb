#pragma once

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "claifo/autodiff.hpp"
#include "claifo/check.hpp"
#include "claifo/nets.hpp"

namespace claifo {

// Training hyperparameters. Defaults are the reference values; the desk-scale
// profile overrides sizes, never semantics.
struct Hyperparams {
  int d = 3;               // frames per stack
  double gamma = 0.99;
  int image_size = 64;
  int batch = 256;         // B
  double alpha = 1e-4;     // learning rate (all nets but D)
  double alpha_disc = 4e-4;
  double tau = 0.01;       // target update rate
  double clip_c = 0.3;     // target-noise clip
  double eta = 1.0;        // InfoNCE temperature

  void validate() const {
    require(gamma >= 0.0 && gamma < 1.0, "gamma must be in [0,1)");
    require(eta > 0.0, "eta must be positive");
    require(batch >= 2 && batch % 2 == 0, "batch must be even and >= 2");
    require(d >= 1, "frame stack must be >= 1");
    require(alpha > 0.0 && alpha_disc > 0.0 && tau > 0.0 && tau <= 1.0, "bad optimizer params");
  }
};

inline void to_json(nlohmann::json& j, const Hyperparams& h) {
  j = nlohmann::json{{"d", h.d},           {"gamma", h.gamma},
                     {"image_size", h.image_size}, {"batch", h.batch},
                     {"alpha", h.alpha},   {"alpha_disc", h.alpha_disc},
                     {"tau", h.tau},       {"clip_c", h.clip_c},
                     {"eta", h.eta}};
}

inline void from_json(const nlohmann::json& j, Hyperparams& h) {
  Hyperparams def;
  h.d = j.value("d", def.d);
  h.gamma = j.value("gamma", def.gamma);
  h.image_size = j.value("image_size", def.image_size);
  h.batch = j.value("batch", def.batch);
  h.alpha = j.value("alpha", def.alpha);
  h.alpha_disc = j.value("alpha_disc", def.alpha_disc);
  h.tau = j.value("tau", def.tau);
  h.clip_c = j.value("clip_c", def.clip_c);
  h.eta = j.value("eta", def.eta);
}

namespace detail {

template <typename T>
void require_nonzero_rows(const Mat<T>& m, const char* what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    require(m.row(r).norm() > T(0), what, ": zero-norm vector at row ", r,
            " (cosine similarity undefined)");
}

}  // namespace detail

// NT-Xent over the union of both views (2N points). For anchor k the positive
// is its paired view; the diagonal is masked out of the denominator so the
// remaining 2(N−1) points act as implicit negatives. Cosine similarity,
// temperature eta, mean over all 2N anchors.
template <typename T>
typename Tape<T>::Var infonce(Tape<T>& t, typename Tape<T>::Var zi, typename Tape<T>::Var zj,
                              T eta) {
  require(eta > T(0), "infonce: eta must be positive");
  const Eigen::Index n = t.val(zi).rows();
  require(n >= 1 && t.val(zj).rows() == n, "infonce: views must align");
  require(t.val(zi).cols() == t.val(zj).cols(), "infonce: latent dims differ");
  detail::require_nonzero_rows(t.val(zi), "infonce view i");
  detail::require_nonzero_rows(t.val(zj), "infonce view j");

  const auto z = t.row_l2_normalize(t.concat_rows(zi, zj));      // (2N × m), unit rows
  const auto sim = t.scale(t.matmul_nt(z, z), T(1) / eta);       // (2N × 2N)

  Mat<T> self_mask = Mat<T>::Zero(2 * n, 2 * n);
  self_mask.diagonal().setConstant(T(-1e9));
  Mat<T> pos_mask = Mat<T>::Zero(2 * n, 2 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    pos_mask(k, k + n) = T(1);
    pos_mask(k + n, k) = T(1);
  }

  const auto lse = t.row_logsumexp(t.add_constmat(sim, self_mask));
  const auto pos = t.row_sum(t.mul_constmat(sim, pos_mask));
  return t.mean(t.sub(lse, pos));
}

// BYOL regression term, one direction: 2 − 2·cos(pred(online), target).
// Targets come from the EMA encoder and enter as plain values, so no gradient
// can reach them; the symmetric form is the average of both directions.
template <typename T>
typename Tape<T>::Var byol_loss(Tape<T>& t, Mlp<T>& predictor, typename Tape<T>::Var online,
                                const Mat<T>& target) {
  require(t.val(online).rows() == target.rows() && t.val(online).cols() == target.cols(),
          "byol_loss: batch shapes differ");
  detail::require_nonzero_rows(target, "byol target");
  Mat<T> tn(target.rows(), target.cols());
  for (Eigen::Index r = 0; r < target.rows(); ++r) tn.row(r) = target.row(r) / target.row(r).norm();

  const auto pred = predictor.forward(t, online);
  detail::require_nonzero_rows(t.val(pred), "byol prediction");
  const auto pn = t.row_l2_normalize(pred);
  const auto cos = t.row_sum(t.mul_constmat(pn, tn));
  return t.add_scalar(t.scale(t.mean(cos), T(-2)), T(2));
}

// Discriminator BCE on logits (expert labeled 1):
//   −E[log D(expert)] − E[log(1 − D(agent))]
// computed as softplus(−logit_E) + softplus(logit_A) for stability.
template <typename T>
typename Tape<T>::Var bce_from_logits(Tape<T>& t, typename Tape<T>::Var expert_logits,
                                      typename Tape<T>::Var agent_logits) {
  const auto le = t.mean(t.softplus(t.neg(expert_logits)));
  const auto la = t.mean(t.softplus(agent_logits));
  return t.add(le, la);
}

// Full op: latent pairs in, scalar loss out. Pairs are concatenated (z ‖ z′).
template <typename T>
typename Tape<T>::Var discriminator_bce(Tape<T>& t, Mlp<T>& disc,
                                        typename Tape<T>::Var expert_pairs,
                                        typename Tape<T>::Var agent_pairs) {
  const auto le = disc.forward_logits(t, expert_pairs);
  const auto la = disc.forward_logits(t, agent_pairs);
  ensure(t.val(le).allFinite() && t.val(la).allFinite(), "discriminator produced non-finite logits");
  return bce_from_logits(t, le, la);
}

// Imitation reward r = −log(1 − D(z, z′)) with D clamped away from {0,1}.
// Latents must come from clean (non-augmented) stacks; no gradient flows.
template <typename T>
Mat<T> imitation_reward(Mlp<T>& disc, const Mat<T>& z, const Mat<T>& z_next) {
  require(z.rows() == z_next.rows(), "imitation_reward: batch mismatch");
  Mat<T> zz(z.rows(), z.cols() + z_next.cols());
  zz << z, z_next;
  Mat<T> d = disc.forward_value(zz);
  Mat<T> r(d.rows(), 1);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const T clamped = std::clamp(d(i, 0), T(1e-6), T(1) - T(1e-6));
    r(i, 0) = -std::log(T(1) - clamped);
  }
  return r;
}

// R_tot = environment reward + imitation reward.
template <typename T>
T combined_reward(T env_reward, T r_chi) {
  require(std::isfinite(env_reward) && std::isfinite(r_chi), "combined_reward: non-finite input");
  return env_reward + r_chi;
}

// TD target y = r + γ·min_k Q̄_k(z̃′, a′), a′ = π(z̃′) + clip(N(0,σ²), ±c).
// Everything here is numeric: y must carry no gradient.
template <typename T>
Mat<T> td_target(CriticPair<T>& critics, Mlp<T>& actor, const Mat<T>& znext_aug,
                 const Mat<T>& reward, T gamma, double sigma, double clip_c, Rng& rng) {
  require(reward.rows() == znext_aug.rows() && reward.cols() == 1, "td_target: reward shape");
  Mat<T> a = actor.forward_value(znext_aug);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double eps = std::clamp(rng.normal(0.0, sigma), -clip_c, clip_c);
      a(i, j) = std::clamp(a(i, j) + static_cast<T>(eps), T(-1), T(1));
    }
  Mat<T> za(znext_aug.rows(), znext_aug.cols() + a.cols());
  za << znext_aug, a;
  const Mat<T> q1 = critics.q1_target.forward_value(za);
  const Mat<T> q2 = critics.q2_target.forward_value(za);
  Mat<T> y = reward + gamma * q1.cwiseMin(q2);
  ensure(y.allFinite(), "td_target: non-finite target");
  return y;
}

// Σ_k mean[(Q_k(z̃, a) − y)²]. z_aug is a live tape var: the gradient reaches
// both critic parameter sets and, through z̃, the encoder.
template <typename T>
typename Tape<T>::Var critic_td_loss(Tape<T>& t, CriticPair<T>& critics,
                                     typename Tape<T>::Var z_aug, const Mat<T>& actions,
                                     const Mat<T>& y) {
  require(y.rows() == t.val(z_aug).rows() && y.cols() == 1, "critic_td_loss: target shape");
  require(actions.rows() == y.rows(), "critic_td_loss: action batch mismatch");
  const auto za = t.concat_cols(z_aug, t.constant(actions));
  const auto q1 = critics.q1.forward(t, za);
  const auto q2 = critics.q2.forward(t, za);
  const auto yv = t.constant(y);
  return t.add(t.mean(t.square(t.sub(q1, yv))), t.mean(t.square(t.sub(q2, yv))));
}

// Clamp composed from min/max so actions stay differentiable inside bounds.
template <typename T>
typename Tape<T>::Var clamp_var(Tape<T>& t, typename Tape<T>::Var a, T lo, T hi) {
  const Eigen::Index r = t.val(a).rows(), c = t.val(a).cols();
  const auto upper = t.min_elem(a, t.constant(Mat<T>::Constant(r, c, hi)));
  return t.neg(t.min_elem(t.neg(upper), t.constant(Mat<T>::Constant(r, c, -lo))));
}

// DDPG actor objective −E[Q₁(z̃, π(z̃)+ε)]. Latents are plain values (the
// actor never updates the encoder) and the critic is bound frozen, so the
// only trainable leaves are θ.
template <typename T>
typename Tape<T>::Var actor_loss(Tape<T>& t, Mlp<T>& actor, CriticPair<T>& critics,
                                 const Mat<T>& z_detached, double sigma, double clip_c,
                                 Rng& rng) {
  const auto z = t.constant(z_detached);
  const auto pi = actor.forward(t, z);
  Mat<T> eps(z_detached.rows(), t.val(pi).cols());
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index j = 0; j < eps.cols(); ++j)
      eps(i, j) = static_cast<T>(std::clamp(rng.normal(0.0, sigma), -clip_c, clip_c));
  const auto a = clamp_var(t, t.add_constmat(pi, eps), T(-1), T(1));
  const auto q = critics.q1.forward(t, t.concat_cols(z, a), /*trainable=*/false);
  return t.neg(t.mean(q));
}

}  // namespace claifo
