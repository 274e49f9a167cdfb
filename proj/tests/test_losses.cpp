#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "claifo/losses.hpp"
#include "claifo/optim.hpp"

using namespace claifo;
using D = double;

// Closed-form oracle values, frozen independently of the implementation.
namespace oracle {
constexpr double ln3 = 1.0986122886681098;           // InfoNCE, all identical, N=2
constexpr double ln_1p2e = 0.5514447139320511;       // InfoNCE, orthogonal pairs: ln(1+2/e)
constexpr double two_ln2 = 1.3862943611198906;       // BCE at D ≡ 1/2
constexpr double ln2 = 0.6931471805599453;           // reward at D = 1/2
constexpr double six_ln10 = 13.815510557964274;      // reward at the clamp ceiling
constexpr double one_plus_ln2 = 1.6931471805599453;  // combined reward example
}  // namespace oracle

namespace {

NetConfig tiny() {
  NetConfig c;
  c.latent_dim = 6;
  c.conv_channels = 4;
  c.mlp_width = 10;
  c.byol_hidden = 5;
  c.image_size = 16;
  return c;
}

Mat<D> randn_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double s = 1.0) {
  Mat<D> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  return m;
}

// Force an MLP to a constant output: zero everything, set the last bias.
void make_constant_mlp(Mlp<D>& m, double out) {
  for (auto* p : m.params()) p->value.setZero();
  m.bs.back().value.setConstant(out);
}

// FD audit over a parameter set against saved analytic grads.
void fd_audit(std::vector<Param<D>*> ps, const std::function<D()>& run, int samples_per_param = 4,
              double h = 1e-5, double tol = 1e-6) {
  for (auto* p : ps) p->zero_grad();
  run();
  std::map<std::string, Mat<D>> analytic;
  for (auto* p : ps) analytic[p->name] = p->grad;
  Rng pick(derive_stream(777, "fd-audit"));
  for (auto* p : ps)
    for (int s = 0; s < samples_per_param; ++s) {
      const Eigen::Index i = static_cast<Eigen::Index>(pick.uniform_int(p->value.rows()));
      const Eigen::Index j = static_cast<Eigen::Index>(pick.uniform_int(p->value.cols()));
      const double orig = p->value(i, j);
      p->value(i, j) = orig + h;
      const double lp = run();
      p->value(i, j) = orig - h;
      const double lm = run();
      p->value(i, j) = orig;
      const double fd = (lp - lm) / (2 * h);
      const double an = analytic[p->name](i, j);
      INFO(p->name << "(" << i << "," << j << ") fd=" << fd << " an=" << an);
      REQUIRE(std::abs(an - fd) <= tol * std::max(1.0, std::abs(fd)));
    }
}

}  // namespace

TEST_CASE("hyperparameter defaults and validation") {
  Hyperparams h;
  REQUIRE(h.d == 3);
  REQUIRE(h.gamma == 0.99);
  REQUIRE(h.image_size == 64);
  REQUIRE(h.batch == 256);
  REQUIRE(h.alpha == 1e-4);
  REQUIRE(h.alpha_disc == 4e-4);
  REQUIRE(h.tau == 0.01);
  REQUIRE(h.clip_c == 0.3);
  REQUIRE(h.eta == 1.0);
  h.validate();

  Hyperparams bad = h;
  bad.gamma = 1.0;
  REQUIRE_THROWS_AS(bad.validate(), input_error);
  bad = h;
  bad.batch = 3;
  REQUIRE_THROWS_AS(bad.validate(), input_error);
  bad = h;
  bad.eta = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), input_error);
}

TEST_CASE("InfoNCE closed forms") {
  SECTION("N=2, all four embeddings identical -> ln 3") {
    Tape<D> t;
    Mat<D> z(2, 4);
    z << 0.3, -0.2, 0.5, 0.1, 0.3, -0.2, 0.5, 0.1;
    const auto loss = infonce(t, t.constant(z), t.constant(z), 1.0);
    REQUIRE(t.scalar(loss) == Catch::Approx(oracle::ln3).epsilon(1e-9));
  }

  SECTION("all identical for general N -> ln(2N-1)") {
    for (int n : {1, 3, 5}) {
      Tape<D> t;
      Mat<D> z = Mat<D>::Ones(n, 4);
      const auto loss = infonce(t, t.constant(z), t.constant(z), 1.0);
      REQUIRE(t.scalar(loss) == Catch::Approx(std::log(2.0 * n - 1.0)).epsilon(1e-9));
    }
  }

  SECTION("N=2 orthogonal pairs -> ln(1 + 2/e)") {
    Tape<D> t;
    Mat<D> zi = Mat<D>::Zero(2, 4), zj = Mat<D>::Zero(2, 4);
    zi(0, 0) = zj(0, 0) = 1.0;  // pair 0 along e1
    zi(1, 1) = zj(1, 1) = 1.0;  // pair 1 along e2
    const auto loss = infonce(t, t.constant(zi), t.constant(zj), 1.0);
    REQUIRE(t.scalar(loss) == Catch::Approx(oracle::ln_1p2e).epsilon(1e-9));
  }

  SECTION("invariant to a common rotation and to swapping the views") {
    Rng rng(derive_stream(51, "nce-rot"));
    const Mat<D> zi = randn_mat(5, 6, rng), zj = randn_mat(5, 6, rng);
    const Mat<D> q = orthogonal<D>(6, 6, rng);
    Tape<D> t;
    const double base = t.scalar(infonce(t, t.constant(zi), t.constant(zj), 0.7));
    const double rotated =
        t.scalar(infonce(t, t.constant(Mat<D>(zi * q)), t.constant(Mat<D>(zj * q)), 0.7));
    const double swapped = t.scalar(infonce(t, t.constant(zj), t.constant(zi), 0.7));
    REQUIRE(rotated == Catch::Approx(base).margin(1e-6));
    REQUIRE(swapped == Catch::Approx(base).margin(1e-12));
  }

  SECTION("zero-norm embedding is rejected") {
    Tape<D> t;
    Mat<D> zi = Mat<D>::Ones(2, 3), zj = Mat<D>::Ones(2, 3);
    zj.row(1).setZero();
    REQUIRE_THROWS_AS(infonce(t, t.constant(zi), t.constant(zj), 1.0), input_error);
  }

  SECTION("gradient matches finite differences") {
    Rng rng(derive_stream(52, "nce-fd"));
    Param<D> zi("zi", randn_mat(4, 5, rng)), zj("zj", randn_mat(4, 5, rng));
    fd_audit({&zi, &zj}, [&] {
      Tape<D> t;
      const auto l = infonce(t, t.param(zi), t.param(zj), 0.8);
      t.backward(l);
      return t.scalar(l);
    });
  }
}

TEST_CASE("BYOL loss") {
  auto cfg = tiny();
  Rng rng(derive_stream(53, "byol"));
  auto pred = make_byol_predictor<D>("byol.pred", cfg, rng);
  const Mat<D> z = randn_mat(3, cfg.latent_dim, rng);
  const Mat<D> p = pred.forward_value(z);

  SECTION("prediction equal to target -> 0; orthogonal -> 2") {
    Tape<D> t;
    const auto zero = byol_loss(t, pred, t.constant(z), p);
    REQUIRE(t.scalar(zero) == Catch::Approx(0.0).margin(1e-9));

    // Build targets orthogonal to each prediction row.
    Mat<D> orth = Mat<D>::Zero(3, cfg.latent_dim);
    for (int r = 0; r < 3; ++r) {
      Mat<D> v = randn_mat(1, cfg.latent_dim, rng);
      v -= (v.row(0).dot(p.row(r)) / p.row(r).squaredNorm()) * p.row(r);
      orth.row(r) = v.row(0);
    }
    Tape<D> t2;
    const auto two = byol_loss(t2, pred, t2.constant(z), orth);
    REQUIRE(t2.scalar(two) == Catch::Approx(2.0).margin(1e-9));
  }

  SECTION("gradient reaches the predictor and the online branch only") {
    Param<D> online("online", randn_mat(3, cfg.latent_dim, rng));
    auto ps = pred.params();
    ps.push_back(&online);
    fd_audit(ps, [&] {
      Tape<D> t;
      const auto l = byol_loss(t, pred, t.param(online), z);
      t.backward(l);
      return t.scalar(l);
    });
  }
}

TEST_CASE("discriminator BCE") {
  auto cfg = tiny();
  Rng rng(derive_stream(54, "bce"));

  SECTION("D == 1/2 on both batches -> 2 ln 2") {
    auto disc = make_discriminator<D>("disc", cfg, rng);
    make_constant_mlp(disc, 0.0);  // zero logits -> D = 1/2
    Tape<D> t;
    const auto e = t.constant(randn_mat(4, 2 * cfg.latent_dim, rng));
    const auto a = t.constant(randn_mat(4, 2 * cfg.latent_dim, rng));
    const auto loss = discriminator_bce(t, disc, e, a);
    REQUIRE(t.scalar(loss) == Catch::Approx(oracle::two_ln2).epsilon(1e-12));
  }

  SECTION("a perfect discriminator drives the loss toward 0") {
    Tape<D> t;
    const auto le = t.constant(Mat<D>::Constant(3, 1, 25.0));
    const auto la = t.constant(Mat<D>::Constant(3, 1, -25.0));
    REQUIRE(t.scalar(bce_from_logits(t, le, la)) < 1e-9);
  }

  SECTION("permutation within a batch leaves the loss unchanged") {
    auto disc = make_discriminator<D>("disc", cfg, rng);
    Mat<D> e = randn_mat(4, 2 * cfg.latent_dim, rng);
    Mat<D> a = randn_mat(4, 2 * cfg.latent_dim, rng);
    Tape<D> t;
    const double base = t.scalar(discriminator_bce(t, disc, t.constant(e), t.constant(a)));
    Mat<D> e2 = e;
    e2.row(0).swap(e2.row(3));
    Mat<D> a2 = a;
    a2.row(1).swap(a2.row(2));
    const double perm = t.scalar(discriminator_bce(t, disc, t.constant(e2), t.constant(a2)));
    REQUIRE(perm == Catch::Approx(base).margin(1e-12));
  }

  SECTION("gradient w.r.t. discriminator weights matches finite differences") {
    auto disc = make_discriminator<D>("disc", cfg, rng);
    const Mat<D> e = randn_mat(4, 2 * cfg.latent_dim, rng);
    const Mat<D> a = randn_mat(4, 2 * cfg.latent_dim, rng);
    fd_audit(disc.params(), [&] {
      Tape<D> t;
      const auto l = discriminator_bce(t, disc, t.constant(e), t.constant(a));
      t.backward(l);
      return t.scalar(l);
    });
  }
}

TEST_CASE("imitation reward") {
  auto cfg = tiny();
  Rng rng(derive_stream(55, "rchi"));
  const Mat<D> z = randn_mat(3, cfg.latent_dim, rng);
  const Mat<D> zn = randn_mat(3, cfg.latent_dim, rng);

  SECTION("D = 1/2 -> ln 2") {
    auto disc = make_discriminator<D>("disc", cfg, rng);
    make_constant_mlp(disc, 0.0);
    const Mat<D> r = imitation_reward(disc, z, zn);
    for (int i = 0; i < 3; ++i) REQUIRE(r(i, 0) == Catch::Approx(oracle::ln2).epsilon(1e-12));
  }

  SECTION("clamp ceiling -> 6 ln 10; clamp floor -> ~1e-6") {
    auto disc = make_discriminator<D>("disc", cfg, rng);
    make_constant_mlp(disc, 50.0);  // sigmoid ~ 1
    REQUIRE(imitation_reward(disc, z, zn)(0, 0) ==
            Catch::Approx(oracle::six_ln10).epsilon(1e-10));
    make_constant_mlp(disc, -50.0);  // sigmoid ~ 0
    REQUIRE(imitation_reward(disc, z, zn)(0, 0) == Catch::Approx(1e-6).margin(1e-11));
  }

  SECTION("monotonically increasing in D") {
    double prev = -1.0;
    for (double logit : {-3.0, -1.0, 0.0, 1.0, 3.0}) {
      auto disc = make_discriminator<D>("disc", cfg, rng);
      make_constant_mlp(disc, logit);
      const double r = imitation_reward(disc, z, zn)(0, 0);
      REQUIRE(r > prev);
      prev = r;
    }
  }
}

TEST_CASE("combined reward") {
  REQUIRE(combined_reward(0.0, 0.5914) == Catch::Approx(0.5914));
  REQUIRE(combined_reward(1.0, oracle::ln2) == Catch::Approx(oracle::one_plus_ln2).epsilon(1e-12));
  REQUIRE_THROWS_AS(combined_reward(std::nan(""), 1.0), input_error);
}

TEST_CASE("TD target") {
  auto cfg = tiny();
  Rng rng(derive_stream(56, "td"));
  CriticPair<D> critics("critic", cfg, rng);
  auto actor = make_actor<D>("actor", cfg, rng);
  const Mat<D> zn = randn_mat(4, cfg.latent_dim, rng);
  const Mat<D> r = randn_mat(4, 1, rng);

  SECTION("gamma = 0 -> y equals the reward exactly") {
    Rng noise(1);
    const Mat<D> y = td_target(critics, actor, zn, r, 0.0, 0.4, 0.3, noise);
    REQUIRE((y - r).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("twin-min selects the smaller target") {
    make_constant_mlp(critics.q1_target, 2.0);
    make_constant_mlp(critics.q2_target, 1.0);
    Rng noise(1);
    const Mat<D> y = td_target(critics, actor, zn, r, 0.5, 0.4, 0.3, noise);
    for (int i = 0; i < 4; ++i) REQUIRE(y(i, 0) == Catch::Approx(r(i, 0) + 0.5 * 1.0));
  }
}

TEST_CASE("critic TD loss") {
  auto cfg = tiny();
  Rng rng(derive_stream(57, "critic"));

  SECTION("exact least squares: zero when both critics output y") {
    CriticPair<D> critics("critic", cfg, rng);
    make_constant_mlp(critics.q1, 0.7);
    make_constant_mlp(critics.q2, 0.7);
    Tape<D> t;
    const auto z = t.constant(randn_mat(3, cfg.latent_dim, rng));
    const Mat<D> y07 = Mat<D>::Constant(3, 1, 0.7);
    const auto loss = critic_td_loss(t, critics, z, randn_mat(3, cfg.action_dim, rng), y07);
    REQUIRE(t.scalar(loss) == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("gradient flows to both critics and through z; y is inert") {
    CriticPair<D> critics("critic", cfg, rng);
    Param<D> z("z", randn_mat(3, cfg.latent_dim, rng));
    const Mat<D> a = randn_mat(3, cfg.action_dim, rng);
    const Mat<D> y = randn_mat(3, 1, rng);
    auto ps = critics.online_params();
    ps.push_back(&z);
    // FD with y held fixed must match the analytic gradient: if y secretly
    // depended on any parameter, this audit would fail.
    fd_audit(ps, [&] {
      Tape<D> t;
      const auto l = critic_td_loss(t, critics, t.param(z), a, y);
      t.backward(l);
      return t.scalar(l);
    });
    // Targets never receive gradient.
    for (auto* p : critics.target_params()) REQUIRE(p->grad.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("actor loss") {
  auto cfg = tiny();
  Rng rng(derive_stream(58, "actor"));
  CriticPair<D> critics("critic", cfg, rng);
  auto actor = make_actor<D>("actor", cfg, rng);
  const Mat<D> z = randn_mat(4, cfg.latent_dim, rng);

  SECTION("critic parameters receive no gradient; actor params FD-match") {
    for (auto* p : critics.online_params()) p->zero_grad();
    // Noise draws must be identical across FD evaluations: reseed inside.
    fd_audit(actor.params(), [&] {
      Rng noise(derive_stream(58, "actor-noise"));
      Tape<D> t;
      const auto l = actor_loss(t, actor, critics, z, 0.2, 0.3, noise);
      t.backward(l);
      return t.scalar(l);
    });
    for (auto* p : critics.online_params()) REQUIRE(p->grad.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("loss is -mean Q1 at sigma=0") {
    Rng noise(3);
    Tape<D> t;
    const auto l = actor_loss(t, actor, critics, z, 0.0, 0.3, noise);
    const Mat<D> a = actor.forward_value(z);
    Mat<D> za(4, cfg.latent_dim + cfg.action_dim);
    za << z, a;
    const double expect = -critics.q1.forward_value(za).mean();
    REQUIRE(t.scalar(l) == Catch::Approx(expect).epsilon(1e-12));
  }
}
