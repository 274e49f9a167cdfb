#include <catch2/catch_amalgamated.hpp>

#include <claifo/theory.hpp>

#include <cmath>
#include <vector>

using namespace claifo;

namespace {

Mat<double> rows2(double a, double b, double c, double d) {
  Mat<double> m(2, 2);
  m << a, b, c, d;
  return m;
}

// Brute-force P(s_t | x̄-history, actions) by summing the joint law over
// every state sequence and every distractor sequence. Exponential, test-only.
Eigen::VectorXd enum_filter(const TabularPOMDP& m, ObsDomain dom, const HistoryPolicy& pol,
                            const std::vector<int>& bar, const std::vector<int>& act,
                            Mat<double>* pair_out = nullptr) {
  const int L = static_cast<int>(bar.size());
  const Mat<double>& ehat = m.e_hat(dom);
  Eigen::VectorXd num = Eigen::VectorXd::Zero(m.n);
  Mat<double> pair = Mat<double>::Zero(m.n, m.n);

  std::vector<int> s(L), xh(L);
  auto sweep = [&](auto&& self, int i) -> void {
    if (i == L) {
      double w = m.rho0(s[0]) * m.e_bar(s[0], bar[0]) * ehat(s[0], xh[0]);
      for (int t = 0; t + 1 < L; ++t) {
        const std::vector<int> bh(bar.begin(), bar.begin() + t + 1);
        const std::vector<int> ah(act.begin(), act.begin() + t);
        w *= pol.prob(act[t], bh, ah, xh[t]) * m.trans[act[t]](s[t], s[t + 1]) *
             m.e_bar(s[t + 1], bar[t + 1]) * ehat(s[t + 1], xh[t + 1]);
      }
      num(s[L - 1]) += w;
      if (L >= 2) pair(s[L - 2], s[L - 1]) += w;
      return;
    }
    for (s[i] = 0; s[i] < m.n; ++s[i])
      for (xh[i] = 0; xh[i] < m.n_hat; ++xh[i]) self(self, i + 1);
  };
  sweep(sweep, 0);

  REQUIRE(num.sum() > 0.0);
  if (pair_out) *pair_out = pair / pair.sum();
  return num / num.sum();
}

TabularPOMDP crafted_control() {
  // x̄ carries no information; the source distractor reveals the state while
  // the target one is uniform. Only an x̂-peeking policy tells them apart.
  TabularPOMDP m;
  m.n = 2;
  m.k = 2;
  m.n_bar = 1;
  m.n_hat = 2;
  m.trans = {rows2(0.9, 0.1, 0.1, 0.9), rows2(0.1, 0.9, 0.9, 0.1)};
  m.e_bar = Mat<double>::Ones(2, 1);
  m.e_hat_src = rows2(0.999, 0.001, 0.001, 0.999);
  m.e_hat_tgt = rows2(0.5, 0.5, 0.5, 0.5);
  m.reward = Mat<double>::Zero(2, 2);
  m.rho0 = Eigen::VectorXd::Constant(2, 0.5);
  m.gamma = 0.9;
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("filter recursion handles the closed-form corner cases") {
  SECTION("deterministic emission pins the posterior after one symbol") {
    Rng rng(3);
    TabularPOMDP m = random_pomdp(rng, 3, 2, 3, 2);
    m.e_bar = Mat<double>::Identity(3, 3);  // x̄ names the state
    Eigen::VectorXd b = filter_recursion(m, {1}, {});
    REQUIRE(b(1) == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(b(0) == 0.0);

    HistoryPolicy pol = random_history_policy(rng, 4, 2);
    Eigen::VectorXd f = exact_filter(m, ObsDomain::source, pol, {1}, {});
    REQUIRE((b - f).cwiseAbs().maxCoeff() < 1e-15);
  }
  SECTION("uniform model keeps the posterior uniform at every step") {
    TabularPOMDP m;
    m.n = 3;
    m.k = 2;
    m.n_bar = 2;
    m.n_hat = 2;
    m.trans = {Mat<double>::Constant(3, 3, 1.0 / 3), Mat<double>::Constant(3, 3, 1.0 / 3)};
    m.e_bar = Mat<double>::Constant(3, 2, 0.5);
    m.e_hat_src = Mat<double>::Constant(3, 2, 0.5);
    m.e_hat_tgt = Mat<double>::Constant(3, 2, 0.5);
    m.reward = Mat<double>::Zero(3, 2);
    m.rho0 = Eigen::VectorXd::Constant(3, 1.0 / 3);
    m.validate();
    std::vector<int> bar = {0}, act;
    Rng rng(4);
    for (int t = 0; t < 5; ++t) {
      Eigen::VectorXd b = filter_recursion(m, bar, act);
      REQUIRE((b.array() - 1.0 / 3).abs().maxCoeff() < 1e-14);
      REQUIRE(b.sum() == Catch::Approx(1.0).margin(1e-12));
      act.push_back(static_cast<int>(rng.next() % 2));
      bar.push_back(static_cast<int>(rng.next() % 2));
    }
  }
  SECTION("zero-probability history is flagged, not renormalized") {
    Rng rng(5);
    TabularPOMDP m = random_pomdp(rng, 3, 2, 3, 2);
    m.e_bar = Mat<double>::Identity(3, 3);
    m.rho0 << 1.0, 0.0, 0.0;
    // Symbol 1 cannot be emitted from the only initial state.
    REQUIRE_THROWS_AS(filter_recursion(m, {1}, {}), input_error);
    HistoryPolicy pol = random_history_policy(rng, 2, 2);
    REQUIRE_THROWS_AS(exact_filter(m, ObsDomain::target, pol, {1}, {}), input_error);
  }
}

TEST_CASE("filters match exhaustive enumeration of the joint law") {
  // Oracle: sum the joint probability over every state and distractor
  // sequence. Checked for both a valid policy and an x̂-peeking one, in both
  // domains, on random histories of up to 6 observations.
  Rng rng(11);
  TabularPOMDP m = random_pomdp(rng, 3, 2, 2, 2);
  const std::vector<HistoryPolicy> pols = {
      random_history_policy(rng, 4, 2, PolicyKeying::history),
      random_history_policy(rng, 4, 2, PolicyKeying::history_and_hat)};

  for (int trial = 0; trial < 4; ++trial) {
    std::vector<int> bar = {static_cast<int>(rng.next() % 2)};
    std::vector<int> act;
    for (int t = 1; t < 6; ++t) {
      act.push_back(static_cast<int>(rng.next() % 2));
      bar.push_back(static_cast<int>(rng.next() % 2));
    }
    for (ObsDomain dom : {ObsDomain::source, ObsDomain::target})
      for (const auto& pol : pols) {
        Mat<double> pair_oracle;
        Eigen::VectorXd oracle = enum_filter(m, dom, pol, bar, act, &pair_oracle);
        Eigen::VectorXd got = exact_filter(m, dom, pol, bar, act);
        REQUIRE((got - oracle).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(got.sum() == Catch::Approx(1.0).margin(1e-12));

        const std::vector<int> bh(bar.begin(), bar.end() - 1);
        const std::vector<int> ah(act.begin(), act.end() - 1);
        Mat<double> pair = exact_pair_filter(m, dom, pol, bh, ah, act.back(), bar.back());
        REQUIRE((pair - pair_oracle).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(pair.sum() == Catch::Approx(1.0).margin(1e-12));

        if (pol.keying == PolicyKeying::history) {
          // The proposition: valid policies reduce to the plain recursion.
          REQUIRE((got - filter_recursion(m, bar, act)).cwiseAbs().maxCoeff() < 1e-12);
          REQUIRE((pair - pair_recursion(m, bh, ah, act.back(), bar.back()))
                      .cwiseAbs()
                      .maxCoeff() < 1e-12);
        }
      }
  }
}

TEST_CASE("posterior invariance holds for z-measurable policies") {
  SECTION("identical distractor emissions are trivially invariant") {
    Rng rng(21);
    TabularPOMDP m = random_pomdp(rng, 3, 2, 2, 3);
    m.e_hat_tgt = m.e_hat_src;
    std::vector<HistoryPolicy> pols = {random_history_policy(rng, 3, 2),
                                       random_history_policy(rng, 5, 2)};
    Prop1Result r = check_prop1(m, pols, 4);
    REQUIRE(r.max_deviation <= 1e-12);
    REQUIRE(r.histories > 0);
  }
  SECTION("wildly different distractors still leave the posterior invariant") {
    for (uint64_t seed : {31, 32, 33, 34, 35}) {
      Rng rng(seed);
      TabularPOMDP m = random_pomdp(rng, 4, 2, 3, 3);
      std::vector<HistoryPolicy> pols = {random_history_policy(rng, 3, 2),
                                         random_history_policy(rng, 4, 2),
                                         random_history_policy(rng, 6, 2)};
      Prop1Result r = check_prop1(m, pols, 5);
      INFO("seed " << seed << " deviation " << r.max_deviation);
      REQUIRE(r.max_deviation <= 1e-10);
    }
  }
  SECTION("an x̂-peeking policy breaks invariance by a wide margin") {
    TabularPOMDP m = crafted_control();
    HistoryPolicy peek{rows2(0.95, 0.05, 0.05, 0.95), PolicyKeying::hat_only};
    Prop1Result r = check_prop1(m, {peek}, 3);
    REQUIRE(r.max_deviation > 0.1);

    // Same instance, same action laws, x̂ ignored: invariance returns.
    HistoryPolicy blind{rows2(0.95, 0.05, 0.05, 0.95), PolicyKeying::history};
    REQUIRE(check_prop1(m, {blind}, 3).max_deviation <= 1e-10);
  }
  SECTION("history explosion trips the guard") {
    Rng rng(41);
    TabularPOMDP m = random_pomdp(rng, 2, 2, 3, 2);
    std::vector<HistoryPolicy> pols = {random_history_policy(rng, 2, 2)};
    REQUIRE_THROWS_AS(check_prop1(m, pols, 12, 2000), input_error);
  }
}

TEST_CASE("visitation solves the discounted occupancy exactly") {
  SECTION("single-state chain") {
    TabularPOMDP m;
    m.n = 1;
    m.k = 1;
    m.n_bar = 1;
    m.n_hat = 1;
    m.trans = {Mat<double>::Ones(1, 1)};
    m.e_bar = Mat<double>::Ones(1, 1);
    m.e_hat_src = m.e_hat_tgt = Mat<double>::Ones(1, 1);
    m.reward = Mat<double>::Constant(1, 1, 0.7);
    m.rho0 = Eigen::VectorXd::Ones(1);
    m.gamma = 0.9;
    TabularPolicy pol{Mat<double>::Ones(1, 1)};
    Visitation v = visitation(m, pol);
    REQUIRE(v.d(0) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(v.J == Catch::Approx(0.7 / 0.1).margin(1e-12));
  }
  SECTION("occupancies normalize and the two J computations agree") {
    Rng rng(51);
    for (int i = 0; i < 20; ++i) {
      TabularPOMDP m = random_pomdp(rng, 5, 3, 2, 2);
      TabularPolicy pol = random_tabular_policy(rng, 5, 3);
      Visitation v = visitation(m, pol);
      REQUIRE(v.d.sum() == Catch::Approx(1.0).margin(1e-12));
      REQUIRE((v.d.array() >= -1e-15).all());
      REQUIRE(v.rho.sum() == Catch::Approx(1.0).margin(1e-12));
      double j_d = 0.0;  // (1/(1−γ))·Σ_s d(s)·Σ_a π(a|s)R(s,a)
      for (int s = 0; s < 5; ++s)
        for (int a = 0; a < 3; ++a) j_d += v.d(s) * pol.pi(s, a) * m.reward(s, a);
      j_d /= 1.0 - m.gamma;
      REQUIRE(v.J == Catch::Approx(j_d).margin(1e-10));
    }
  }
  SECTION("J matches a Monte-Carlo rollout estimate") {
    Rng rng(61);
    TabularPOMDP m = random_pomdp(rng, 3, 2, 2, 2);
    TabularPolicy pol = random_tabular_policy(rng, 3, 2);
    const double exact = visitation(m, pol).J;

    auto draw = [&](const Eigen::RowVectorXd& p) {
      double u = rng.uniform(), acc = 0.0;
      for (int i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) return i;
      }
      return static_cast<int>(p.size()) - 1;
    };
    const int rollouts = 1000000, T = 120;
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < rollouts; ++r) {
      int s = draw(m.rho0.transpose());
      double g = 0.0, disc = 1.0;
      for (int t = 0; t < T; ++t) {
        const int a = draw(pol.pi.row(s));
        g += disc * m.reward(s, a);
        disc *= m.gamma;
        s = draw(m.trans[a].row(s));
      }
      sum += g;
      sumsq += g * g;
    }
    const double mean = sum / rollouts;
    const double se = std::sqrt((sumsq / rollouts - mean * mean) / rollouts);
    REQUIRE(std::abs(mean - exact) < 3.0 * se);
  }
}

TEST_CASE("the value-gap bound holds with exact visitations") {
  SECTION("equal policies give gap = bound = 0") {
    Rng rng(71);
    TabularPOMDP m = random_pomdp(rng, 5, 3, 2, 2);
    TabularPolicy pol = random_tabular_policy(rng, 5, 3);
    Prop2Report r = check_prop2(m, pol, pol);
    REQUIRE(r.gap <= 1e-12);
    REQUIRE(r.dtv <= 1e-12);
    REQUIRE(r.c <= 1e-12);
    REQUIRE(r.bound <= 1e-12);
    REQUIRE(r.holds);

    Mat<double> r_ss(5, 5);
    for (Eigen::Index i = 0; i < r_ss.size(); ++i) r_ss.data()[i] = rng.uniform(-1.0, 1.0);
    Prop2Report rp = check_prop2_pairs(m, pol, pol, r_ss);
    REQUIRE(rp.gap <= 1e-12);
    REQUIRE(rp.bound <= 1e-12);
    REQUIRE(rp.c == 0.0);
    REQUIRE(rp.holds);
  }
  SECTION("random policy pairs never violate either form") {
    Rng rng(81);
    for (int i = 0; i < 100; ++i) {
      TabularPOMDP m = random_pomdp(rng, 5, 3, 2, 2);
      TabularPolicy pe = random_tabular_policy(rng, 5, 3);
      TabularPolicy pt = random_tabular_policy(rng, 5, 3);

      Prop2Report r = check_prop2(m, pe, pt);
      REQUIRE(r.holds);
      REQUIRE(r.dtv >= 0.0);
      REQUIRE(r.dtv <= 1.0);
      const double cmax = 2.0 * m.reward.cwiseAbs().maxCoeff() / (1.0 - m.gamma);
      REQUIRE(r.c >= 0.0);
      REQUIRE(r.c <= cmax + 1e-12);

      Mat<double> r_ss(5, 5);
      for (Eigen::Index j = 0; j < r_ss.size(); ++j) r_ss.data()[j] = rng.uniform(-1.0, 1.0);
      Prop2Report rp = check_prop2_pairs(m, pe, pt, r_ss);
      REQUIRE(rp.holds);
      REQUIRE(rp.c == 0.0);
    }
  }
}

TEST_CASE("tabular model validation rejects malformed inputs") {
  Rng rng(91);
  TabularPOMDP m = random_pomdp(rng, 3, 2, 2, 2);
  SECTION("non-stochastic transition row") {
    m.trans[0](0, 0) += 0.1;
    REQUIRE_THROWS_AS(m.validate(), input_error);
  }
  SECTION("gamma out of range") {
    m.gamma = 1.0;
    REQUIRE_THROWS_AS(m.validate(), input_error);
  }
  SECTION("policies must be stochastic and strictly positive") {
    TabularPolicy pol = random_tabular_policy(rng, 3, 2);
    pol.pi(1, 0) = -0.1;
    REQUIRE_THROWS_AS(pol.validate(3, 2), input_error);
    HistoryPolicy hp = random_history_policy(rng, 2, 2);
    hp.rows(0, 0) = 0.0;
    hp.rows(0, 1) = 1.0;
    REQUIRE_THROWS_AS(hp.validate(2), input_error);
  }
}
