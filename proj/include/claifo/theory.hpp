#pragma once
// Exact tabular oracles for the two appendix results: invariance of the
// filtering posteriors when the latent depends only on the invariant
// observation channel, and the total-variation visitation bound on the
// value gap. Everything here is closed-form linear algebra; no sampling.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <claifo/autodiff.hpp>  // Mat alias
#include <claifo/check.hpp>
#include <claifo/rng.hpp>

namespace claifo {

enum class ObsDomain { source, target };

// Finite decision process with factored observations: an invariant symbol
// x̄ drawn from e_bar and a distractor symbol x̂ whose emission differs
// between the source and target domains. Rewards live on (s, a).
struct TabularPOMDP {
  int n = 0;      // states
  int k = 0;      // actions
  int n_bar = 0;  // invariant observation symbols
  int n_hat = 0;  // distractor symbols
  std::vector<Mat<double>> trans;  // k matrices, trans[a](s, s') row-stochastic
  Mat<double> e_bar;               // n × n_bar, shared between domains
  Mat<double> e_hat_src;           // n × n_hat
  Mat<double> e_hat_tgt;           // n × n_hat
  Mat<double> reward;              // n × k
  Eigen::VectorXd rho0;            // n
  double gamma = 0.9;

  const Mat<double>& e_hat(ObsDomain d) const {
    return d == ObsDomain::source ? e_hat_src : e_hat_tgt;
  }

  void validate() const {
    require(n >= 1 && k >= 1 && n_bar >= 1 && n_hat >= 1, "tabular pomdp: empty dimension");
    require(gamma >= 0.0 && gamma < 1.0, "tabular pomdp: gamma must be in [0,1), got ", gamma);
    require(static_cast<int>(trans.size()) == k, "tabular pomdp: need one transition per action");
    auto stochastic = [&](const Mat<double>& m, Eigen::Index rows, Eigen::Index cols,
                          const char* what) {
      require(m.rows() == rows && m.cols() == cols, "tabular pomdp: bad shape for ", what);
      require((m.array() >= 0.0).all(), "tabular pomdp: negative entry in ", what);
      for (Eigen::Index r = 0; r < rows; ++r)
        require(std::abs(m.row(r).sum() - 1.0) <= 1e-12, "tabular pomdp: row ", r, " of ", what,
                " does not sum to 1");
    };
    for (int a = 0; a < k; ++a) stochastic(trans[a], n, n, "transition");
    stochastic(e_bar, n, n_bar, "e_bar");
    stochastic(e_hat_src, n, n_hat, "e_hat_src");
    stochastic(e_hat_tgt, n, n_hat, "e_hat_tgt");
    require(reward.rows() == n && reward.cols() == k, "tabular pomdp: bad reward shape");
    require(rho0.size() == n && (rho0.array() >= 0.0).all() &&
                std::abs(rho0.sum() - 1.0) <= 1e-12,
            "tabular pomdp: rho0 is not a distribution");
  }
};

// Memoryless state policy π(a|s) for the fully observable visitation math.
struct TabularPolicy {
  Mat<double> pi;  // n × k, row-stochastic

  void validate(int n, int k) const {
    require(pi.rows() == n && pi.cols() == k, "tabular policy: bad shape");
    require((pi.array() >= 0.0).all(), "tabular policy: negative probability");
    for (Eigen::Index r = 0; r < pi.rows(); ++r)
      require(std::abs(pi.row(r).sum() - 1.0) <= 1e-12, "tabular policy: row ", r,
              " does not sum to 1");
  }
};

// What a history policy is allowed to look at. `history` is the valid
// construction (z-measurable: the x̄/a history only); the other two peek at
// the current distractor symbol and exist as negative controls.
enum class PolicyKeying { history, history_and_hat, hat_only };

// History-statistic policy: a deterministic key of the visible past selects
// one of `rows.rows()` action laws. Rows must be strictly positive so every
// visible history stays reachable under every policy.
struct HistoryPolicy {
  Mat<double> rows;  // r × k
  PolicyKeying keying = PolicyKeying::history;

  void validate(int k) const {
    require(rows.rows() >= 1 && rows.cols() == k, "history policy: bad row shape");
    require((rows.array() > 0.0).all(), "history policy: rows must be strictly positive");
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
      require(std::abs(rows.row(r).sum() - 1.0) <= 1e-12, "history policy: row ", r,
              " does not sum to 1");
  }

  int pick(const std::vector<int>& bar_hist, const std::vector<int>& act_hist, int hat) const {
    if (keying == PolicyKeying::hat_only)
      return hat % static_cast<int>(rows.rows());
    uint64_t h = 1469598103934665603ull;
    auto fold = [&h](uint64_t v) {
      h ^= v + 1;
      h *= 1099511628211ull;
    };
    for (int b : bar_hist) fold(static_cast<uint64_t>(b));
    fold(0xb5);  // separator between the two channels
    for (int a : act_hist) fold(static_cast<uint64_t>(a));
    if (keying == PolicyKeying::history_and_hat) fold(0x9e + static_cast<uint64_t>(hat));
    return static_cast<int>(h % static_cast<uint64_t>(rows.rows()));
  }

  double prob(int a, const std::vector<int>& bar_hist, const std::vector<int>& act_hist,
              int hat) const {
    return rows(pick(bar_hist, act_hist, hat), a);
  }
};

namespace detail {

// Unnormalized forward vector over states after conditioning on
// (x̄_{0:t}, a_{0:t−1}) in the given domain under the given policy. The
// policy enters through the per-step weight Σ_x̂ Ĥ(s,x̂)·π(a|·,x̂): for
// z-measurable policies that weight is constant in s and cancels on
// normalization, which is exactly the invariance claim under test.
inline Eigen::VectorXd forward_alpha(const TabularPOMDP& m, ObsDomain dom,
                                     const HistoryPolicy& pol, const std::vector<int>& bar,
                                     const std::vector<int>& act) {
  require(!bar.empty() && act.size() + 1 == bar.size(),
          "filter: need one more observation than actions");
  const Mat<double>& ehat = m.e_hat(dom);
  Eigen::VectorXd alpha = m.rho0.array() * m.e_bar.col(bar[0]).array();
  std::vector<int> bh = {bar[0]}, ah;
  for (size_t t = 0; t < act.size(); ++t) {
    const int a = act[t];
    require(a >= 0 && a < m.k && bar[t + 1] >= 0 && bar[t + 1] < m.n_bar,
            "filter: symbol out of range");
    Eigen::VectorXd w(m.n);
    for (int s = 0; s < m.n; ++s) {
      double ws = 0.0;
      for (int x = 0; x < m.n_hat; ++x) ws += ehat(s, x) * pol.prob(a, bh, ah, x);
      w(s) = ws;
    }
    alpha = (m.trans[a].transpose() * (alpha.array() * w.array()).matrix()).eval();
    alpha.array() *= m.e_bar.col(bar[t + 1]).array();
    bh.push_back(bar[t + 1]);
    ah.push_back(a);
  }
  return alpha;
}

inline Eigen::VectorXd normalized(Eigen::VectorXd v, const char* what) {
  const double z = v.sum();
  require(z > 0.0, what, ": zero-probability history");
  return v / z;
}

}  // namespace detail

// Exact filtering posterior P(s_t | x̄_{0:t}, a_{0:t−1}) in the given domain
// under the given policy, by full marginalization of the joint law.
inline Eigen::VectorXd exact_filter(const TabularPOMDP& m, ObsDomain dom,
                                    const HistoryPolicy& pol, const std::vector<int>& bar,
                                    const std::vector<int>& act) {
  return detail::normalized(detail::forward_alpha(m, dom, pol, bar, act), "exact_filter");
}

// The proof's recursion: b_t ∝ Ē(·, x̄_t) ⊙ T_{a_{t−1}}ᵀ b_{t−1}. No policy,
// no domain — the proposition says exact_filter must coincide with this for
// every z-measurable policy in either domain.
inline Eigen::VectorXd filter_recursion(const TabularPOMDP& m, const std::vector<int>& bar,
                                        const std::vector<int>& act) {
  require(!bar.empty() && act.size() + 1 == bar.size(),
          "filter: need one more observation than actions");
  Eigen::VectorXd b =
      detail::normalized(m.rho0.array() * m.e_bar.col(bar[0]).array(), "filter_recursion");
  for (size_t t = 0; t < act.size(); ++t) {
    b = (m.trans[act[t]].transpose() * b).eval();
    b.array() *= m.e_bar.col(bar[t + 1]).array();
    b = detail::normalized(b, "filter_recursion");
  }
  return b;
}

// Pairwise posterior P(s_{t+1}, s_t | z_{t+1}, z_t) for the history that
// appends (a, x̄′); entry (s, s′) is the probability of being in s then s′.
inline Mat<double> exact_pair_filter(const TabularPOMDP& m, ObsDomain dom,
                                     const HistoryPolicy& pol, const std::vector<int>& bar,
                                     const std::vector<int>& act, int a, int bar_next) {
  Eigen::VectorXd alpha = detail::forward_alpha(m, dom, pol, bar, act);
  const Mat<double>& ehat = m.e_hat(dom);
  Eigen::VectorXd w(m.n);
  for (int s = 0; s < m.n; ++s) {
    double ws = 0.0;
    for (int x = 0; x < m.n_hat; ++x) ws += ehat(s, x) * pol.prob(a, bar, act, x);
    w(s) = ws;
  }
  Mat<double> pair(m.n, m.n);
  for (int s = 0; s < m.n; ++s)
    for (int s2 = 0; s2 < m.n; ++s2)
      pair(s, s2) = alpha(s) * w(s) * m.trans[a](s, s2) * m.e_bar(s2, bar_next);
  const double z = pair.sum();
  require(z > 0.0, "exact_pair_filter: zero-probability history");
  return pair / z;
}

// The proof's second recursion for the same pairwise posterior:
// P(s, s′|·) ∝ b_t(s)·T_a(s, s′)·Ē(s′, x̄′).
inline Mat<double> pair_recursion(const TabularPOMDP& m, const std::vector<int>& bar,
                                  const std::vector<int>& act, int a, int bar_next) {
  const Eigen::VectorXd b = filter_recursion(m, bar, act);
  Mat<double> pair(m.n, m.n);
  for (int s = 0; s < m.n; ++s)
    for (int s2 = 0; s2 < m.n; ++s2)
      pair(s, s2) = b(s) * m.trans[a](s, s2) * m.e_bar(s2, bar_next);
  const double z = pair.sum();
  require(z > 0.0, "pair_recursion: zero-probability history");
  return pair / z;
}

struct Prop1Result {
  double max_deviation = 0.0;  // over histories, domain/policy pairs, both posteriors
  long histories = 0;
};

// Enumerate every feasible (x̄, a) history up to `horizon` observations and
// compare the filtering and pairwise posteriors across
// {source, target} × policies (recursion included as reference).
inline Prop1Result check_prop1(const TabularPOMDP& m, const std::vector<HistoryPolicy>& policies,
                               int horizon, long max_histories = 1000000) {
  m.validate();
  require(horizon >= 1, "check_prop1: horizon must be >= 1");
  require(!policies.empty(), "check_prop1: need at least one policy");
  for (const auto& p : policies) p.validate(m.k);

  struct Variant {
    ObsDomain dom;
    const HistoryPolicy* pol;
  };
  std::vector<Variant> variants;
  for (ObsDomain d : {ObsDomain::source, ObsDomain::target})
    for (const auto& p : policies) variants.push_back({d, &p});

  Prop1Result res;
  std::vector<int> bar, act;

  auto spread = [](const std::vector<Eigen::VectorXd>& ps) {
    double dev = 0.0;
    for (size_t i = 0; i < ps.size(); ++i)
      for (size_t j = i + 1; j < ps.size(); ++j)
        dev = std::max(dev, (ps[i] - ps[j]).cwiseAbs().maxCoeff());
    return dev;
  };

  // DFS over feasible histories; feasibility judged by the recursion,
  // which every strictly positive policy dominates up to normalization.
  auto visit = [&](auto&& self, const Eigen::VectorXd& b_rec) -> void {
    require(++res.histories <= max_histories, "check_prop1: more than ", max_histories,
            " histories; lower the horizon");
    std::vector<Eigen::VectorXd> posts;
    posts.push_back(b_rec / b_rec.sum());
    for (const auto& v : variants) posts.push_back(exact_filter(m, v.dom, *v.pol, bar, act));
    res.max_deviation = std::max(res.max_deviation, spread(posts));

    if (static_cast<int>(bar.size()) >= horizon) return;
    for (int a = 0; a < m.k; ++a) {
      for (int x = 0; x < m.n_bar; ++x) {
        Eigen::VectorXd next = (m.trans[a].transpose() * b_rec).eval();
        next.array() *= m.e_bar.col(x).array();
        if (next.sum() <= 0.0) continue;  // infeasible branch

        std::vector<Eigen::VectorXd> pairs;
        Mat<double> pr = pair_recursion(m, bar, act, a, x);
        pairs.emplace_back(Eigen::Map<Eigen::VectorXd>(pr.data(), m.n * m.n));
        for (const auto& v : variants) {
          Mat<double> p = exact_pair_filter(m, v.dom, *v.pol, bar, act, a, x);
          pairs.emplace_back(Eigen::Map<Eigen::VectorXd>(p.data(), m.n * m.n));
        }
        res.max_deviation = std::max(res.max_deviation, spread(pairs));

        act.push_back(a);
        bar.push_back(x);
        self(self, next);
        bar.pop_back();
        act.pop_back();
      }
    }
  };

  for (int x = 0; x < m.n_bar; ++x) {
    Eigen::VectorXd b0 = m.rho0.array() * m.e_bar.col(x).array();
    if (b0.sum() <= 0.0) continue;
    bar.assign(1, x);
    act.clear();
    visit(visit, b0);
  }
  return res;
}

struct Visitation {
  Eigen::VectorXd d;  // normalized discounted state visitation
  Mat<double> rho;    // ρ_π(s, s') = d(s)·Σ_a π(a|s)·T_a(s, s')
  double J = 0.0;     // exact discounted return
};

// Fully observable reduction (z = s): d solves d = (1−γ)ρ₀ + γP_πᵀd and J
// comes from the exact value function, both by direct linear solves.
inline Visitation visitation(const TabularPOMDP& m, const TabularPolicy& pol) {
  m.validate();
  pol.validate(m.n, m.k);
  Mat<double> p = Mat<double>::Zero(m.n, m.n);
  Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(m.n);
  for (int a = 0; a < m.k; ++a) {
    p += pol.pi.col(a).asDiagonal() * m.trans[a];
    r_pi += (pol.pi.col(a).array() * m.reward.col(a).array()).matrix();
  }

  Visitation out;
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(m.n, m.n) - m.gamma * p.transpose();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
  out.d = lu.solve((1.0 - m.gamma) * m.rho0);
  ensure((lhs * out.d - (1.0 - m.gamma) * m.rho0).cwiseAbs().maxCoeff() <= 1e-9,
         "visitation: singular system");
  out.rho = out.d.asDiagonal() * p;

  Eigen::MatrixXd lhs_v = Eigen::MatrixXd::Identity(m.n, m.n) - m.gamma * p;
  const Eigen::VectorXd v = Eigen::PartialPivLU<Eigen::MatrixXd>(lhs_v).solve(r_pi);
  out.J = m.rho0.dot(v);
  return out;
}

struct Prop2Report {
  double gap = 0.0;    // |J(π_E) − J(π_θ)|
  double dtv = 0.0;    // D_TV(ρ_πθ(s,s'), ρ_πE(s,s'))
  double c = 0.0;      // correction term (zero when rewards live on pairs)
  double bound = 0.0;  // (2R_max/(1−γ))·D_TV + C
  bool holds = false;
};

namespace detail {

// P_π(a | s, s') by Bayes over the tabular model. Returns false when the
// pair is unreachable under π (caller decides how to treat it).
inline bool action_law(const TabularPOMDP& m, const TabularPolicy& pol, int s, int s2,
                       Eigen::VectorXd& out) {
  out.resize(m.k);
  for (int a = 0; a < m.k; ++a) out(a) = pol.pi(s, a) * m.trans[a](s, s2);
  const double z = out.sum();
  if (z <= 0.0) return false;
  out /= z;
  return true;
}

}  // namespace detail

// Value-gap bound with rewards on (s, a): includes the action-law
// correction C. A ρ_πθ-reachable pair the expert cannot produce gets the
// maximal per-pair total variation of 1, which only loosens the bound.
inline Prop2Report check_prop2(const TabularPOMDP& m, const TabularPolicy& pi_e,
                               const TabularPolicy& pi_theta) {
  const Visitation ve = visitation(m, pi_e);
  const Visitation vt = visitation(m, pi_theta);
  const double rmax = m.reward.cwiseAbs().maxCoeff();
  const double scale = 2.0 * rmax / (1.0 - m.gamma);

  Prop2Report rep;
  rep.gap = std::abs(ve.J - vt.J);
  rep.dtv = 0.5 * (vt.rho - ve.rho).cwiseAbs().sum();
  Eigen::VectorXd le, lt;
  for (int s = 0; s < m.n; ++s)
    for (int s2 = 0; s2 < m.n; ++s2) {
      if (vt.rho(s, s2) <= 0.0) continue;
      ensure(detail::action_law(m, pi_theta, s, s2, lt), "check_prop2: inconsistent visitation");
      const double tv =
          detail::action_law(m, pi_e, s, s2, le) ? 0.5 * (lt - le).cwiseAbs().sum() : 1.0;
      rep.c += scale * vt.rho(s, s2) * tv;
    }
  rep.bound = scale * rep.dtv + rep.c;
  rep.holds = rep.gap <= rep.bound + 1e-12;
  return rep;
}

// Second form of the bound: rewards on (s, s') need no correction term.
inline Prop2Report check_prop2_pairs(const TabularPOMDP& m, const TabularPolicy& pi_e,
                                     const TabularPolicy& pi_theta, const Mat<double>& r_ss) {
  require(r_ss.rows() == m.n && r_ss.cols() == m.n, "check_prop2_pairs: bad reward shape");
  const Visitation ve = visitation(m, pi_e);
  const Visitation vt = visitation(m, pi_theta);
  const double rmax = r_ss.cwiseAbs().maxCoeff();

  Prop2Report rep;
  // J under pair rewards: (1/(1−γ))·Σ ρ(s,s')·R(s,s').
  const double je = (ve.rho.array() * r_ss.array()).sum() / (1.0 - m.gamma);
  const double jt = (vt.rho.array() * r_ss.array()).sum() / (1.0 - m.gamma);
  rep.gap = std::abs(je - jt);
  rep.dtv = 0.5 * (vt.rho - ve.rho).cwiseAbs().sum();
  rep.bound = 2.0 * rmax / (1.0 - m.gamma) * rep.dtv;
  rep.holds = rep.gap <= rep.bound + 1e-12;
  return rep;
}

// Random dense instances for the oracle sweeps. Rows get a +0.05 floor so
// nothing in the reachable set degenerates.
inline Mat<double> random_stochastic(Rng& rng, int rows, int cols) {
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() + 0.05;
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).sum();
  return m;
}

inline TabularPOMDP random_pomdp(Rng& rng, int n, int k, int n_bar, int n_hat,
                                 double gamma = 0.9) {
  TabularPOMDP m;
  m.n = n;
  m.k = k;
  m.n_bar = n_bar;
  m.n_hat = n_hat;
  m.gamma = gamma;
  for (int a = 0; a < k; ++a) m.trans.push_back(random_stochastic(rng, n, n));
  m.e_bar = random_stochastic(rng, n, n_bar);
  m.e_hat_src = random_stochastic(rng, n, n_hat);
  m.e_hat_tgt = random_stochastic(rng, n, n_hat);
  m.reward = Mat<double>(n, k);
  for (Eigen::Index i = 0; i < m.reward.size(); ++i)
    m.reward.data()[i] = rng.uniform(-1.0, 1.0);
  m.rho0 = random_stochastic(rng, 1, n).row(0).transpose();
  m.validate();
  return m;
}

inline TabularPolicy random_tabular_policy(Rng& rng, int n, int k) {
  return TabularPolicy{random_stochastic(rng, n, k)};
}

inline HistoryPolicy random_history_policy(Rng& rng, int rows, int k,
                                           PolicyKeying keying = PolicyKeying::history) {
  return HistoryPolicy{random_stochastic(rng, rows, k), keying};
}

}  // namespace claifo
