#pragma once
// Latent-space diagnostics: encode rollouts from both domains under an
// optimal and a uniform-random policy, project with PCA, and quantify how
// well the two optimal-policy clouds coincide.
//
// The overlap ratio is this artifact's own operationalization of the
// qualitative clustering claim; the reference figures show but do not
// measure it. Lower is better: 0 means the source- and target-optimal
// clouds share a centroid.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include <claifo/check.hpp>
#include <claifo/env.hpp>
#include <claifo/image.hpp>
#include <claifo/nets.hpp>
#include <claifo/rng.hpp>

#include <nlohmann/json.hpp>

namespace claifo {

enum class CorpusGroup { source_optimal = 0, source_random = 1, target_optimal = 2,
                         target_random = 3 };

inline const char* to_string(CorpusGroup g) {
  switch (g) {
    case CorpusGroup::source_optimal: return "source-optimal";
    case CorpusGroup::source_random: return "source-random";
    case CorpusGroup::target_optimal: return "target-optimal";
    case CorpusGroup::target_random: return "target-random";
  }
  ensure(false, "unreachable corpus group");
  return {};
}

constexpr std::array<CorpusGroup, 4> kCorpusGroups = {
    CorpusGroup::source_optimal, CorpusGroup::source_random, CorpusGroup::target_optimal,
    CorpusGroup::target_random};

// Four labeled latent sets from one fixed encoder: rows are per-frame
// latents, episode-major (episode e, step t at row e*steps + t).
struct LatentCorpus {
  int latent_dim = 0;
  int episodes = 0;
  int steps = 0;  // latents per episode
  std::array<Mat<float>, 4> groups;

  const Mat<float>& group(CorpusGroup g) const { return groups[static_cast<size_t>(g)]; }
};

namespace detail {

template <typename Policy>
Mat<float> encode_rollouts(Encoder<float>& enc, const EnvConfig& cfg, Policy&& policy,
                           int episodes, int d, uint64_t seed) {
  EnvConfig c = cfg;
  c.seed = seed;
  PointMassEnv env(c);
  const int T = c.episode_length;
  Mat<float> out(static_cast<Eigen::Index>(episodes) * T, enc.cfg.latent_dim);
  for (int e = 0; e < episodes; ++e) {
    PointMassState s = env.reset();
    std::vector<Frame> stack(d, env.render(s));
    for (int t = 0; t < T; ++t) {
      const Frame st = stack_frames(stack);
      Mat<float> row(1, static_cast<Eigen::Index>(st.data.size()));
      std::copy(st.data.begin(), st.data.end(), row.data());
      out.row(static_cast<Eigen::Index>(e) * T + t) = enc.forward_value(row).row(0);
      const StepResult r = env.step(s, policy(s));
      s = r.state;
      stack.erase(stack.begin());
      stack.push_back(env.render(s));
    }
  }
  return out;
}

}  // namespace detail

// Rollouts in both domains under the given optimal policy and a fresh
// uniform-random policy, encoded framewise with the d-stack convention.
template <typename Policy>
LatentCorpus build_corpus(Encoder<float>& enc, Policy&& optimal, const EnvConfig& source,
                          const EnvConfig& target, int episodes, int d, uint64_t seed) {
  require(episodes >= 1 && d >= 1, "build_corpus: bad episodes/d");
  require(source.episode_length == target.episode_length,
          "build_corpus: source/target episode length mismatch");
  LatentCorpus corpus;
  corpus.latent_dim = enc.cfg.latent_dim;
  corpus.episodes = episodes;
  corpus.steps = source.episode_length;

  auto random_policy = [](Rng& rng) {
    return [&rng](const PointMassState&) {
      return Vec2{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    };
  };
  Rng rs(derive_stream(seed, "corpus-random-source"));
  Rng rt(derive_stream(seed, "corpus-random-target"));

  corpus.groups[0] = detail::encode_rollouts(enc, source, optimal, episodes, d,
                                             derive_stream(seed, "corpus-src-opt"));
  corpus.groups[1] = detail::encode_rollouts(enc, source, random_policy(rs), episodes, d,
                                             derive_stream(seed, "corpus-src-rnd"));
  corpus.groups[2] = detail::encode_rollouts(enc, target, optimal, episodes, d,
                                             derive_stream(seed, "corpus-tgt-opt"));
  corpus.groups[3] = detail::encode_rollouts(enc, target, random_policy(rt), episodes, d,
                                             derive_stream(seed, "corpus-tgt-rnd"));
  return corpus;
}

struct PcaResult {
  Mat<double> components;          // k × m, k ≤ 2, sign-fixed
  std::vector<double> explained;   // per-component variance ratio
  std::array<Mat<double>, 4> points;  // group → n × k projections

  const Mat<double>& group(CorpusGroup g) const { return points[static_cast<size_t>(g)]; }
};

// Center the pooled latents, take the top-2 right singular directions, and
// project every group. Signs are fixed so each component's largest-magnitude
// coordinate is positive; near-zero directions are dropped.
inline PcaResult pca_project(const LatentCorpus& corpus) {
  Eigen::Index n = 0;
  for (const auto& g : corpus.groups) {
    require(g.cols() == corpus.latent_dim, "corpus group has wrong latent dim");
    n += g.rows();
  }
  require(n >= 3, "pca_project needs at least 3 latents");

  Mat<double> pooled(n, corpus.latent_dim);
  Eigen::Index at = 0;
  for (const auto& g : corpus.groups) {
    pooled.middleRows(at, g.rows()) = g.cast<double>();
    at += g.rows();
  }
  const Eigen::RowVectorXd mean = pooled.colwise().mean();
  pooled.rowwise() -= mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(pooled, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double total = sv.array().square().sum();

  int k = 0;
  for (int i = 0; i < 2 && i < sv.size(); ++i)
    if (sv(i) > 0.0 && (sv(0) == 0.0 || sv(i) > 1e-12 * sv(0))) ++k;

  PcaResult res;
  res.components = Mat<double>(k, corpus.latent_dim);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd v = svd.matrixV().col(i);
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0.0) v = -v;
    res.components.row(i) = v.transpose();
    res.explained.push_back(total > 0.0 ? sv(i) * sv(i) / total : 0.0);
  }
  for (size_t g = 0; g < corpus.groups.size(); ++g) {
    Mat<double> cg = corpus.groups[g].cast<double>();
    cg.rowwise() -= mean;
    res.points[g] = cg * res.components.transpose();
  }
  return res;
}

// ‖centroid(src-opt) − centroid(tgt-opt)‖ over the mean matched-domain
// optimal↔random centroid distance.
inline double overlap_ratio(const std::array<Mat<double>, 4>& points) {
  std::array<Eigen::RowVectorXd, 4> c;
  for (size_t g = 0; g < points.size(); ++g) {
    require(points[g].rows() > 0, "overlap_ratio: empty group");
    c[g] = points[g].colwise().mean();
  }
  const double num = (c[0] - c[2]).norm();
  const double den = 0.5 * ((c[0] - c[1]).norm() + (c[2] - c[3]).norm());
  require(den > 0.0, "overlap_ratio: degenerate optimal/random separation");
  return num / den;
}

inline double overlap_ratio(const PcaResult& pca) { return overlap_ratio(pca.points); }

// Largest principal angle between the row spans of two bases (radians).
inline double subspace_angle(const Mat<double>& a, const Mat<double>& b) {
  require(a.rows() >= 1 && b.rows() >= 1 && a.cols() == b.cols(), "subspace_angle: bad bases");
  require(a.rows() == b.rows(), "subspace_angle: rank mismatch");
  auto orthonormal = [](const Mat<double>& m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m.transpose());
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m.cols(), m.rows());
    return q;  // cols(m.rows()) orthonormal columns spanning rowspace(m)
  };
  const Eigen::MatrixXd qa = orthonormal(a), qb = orthonormal(b);
  const Eigen::MatrixXd m = qa.transpose() * qb;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  const double c = svd.singularValues().minCoeff();  // cos of the angle
  if (c * c < 0.5) return std::acos(std::clamp(c, 0.0, 1.0));
  // Near-aligned spans: the sine form stays accurate where acos cannot.
  Eigen::BDCSVD<Eigen::MatrixXd> ssvd(qb - qa * m);
  const double s = ssvd.singularValues().maxCoeff();
  return std::asin(std::clamp(s, 0.0, 1.0));
}

// 2D points as label,episode,t,pc1,pc2 rows (gnuplot-friendly).
inline void write_corpus_csv(const std::string& path, const LatentCorpus& corpus,
                             const PcaResult& pca) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "cannot open corpus csv: ", path);
  f << "label,episode,t,pc1,pc2\n";
  char buf[256];
  for (CorpusGroup g : kCorpusGroups) {
    const Mat<double>& pts = pca.group(g);
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      const double pc1 = pts.cols() > 0 ? pts(r, 0) : 0.0;
      const double pc2 = pts.cols() > 1 ? pts(r, 1) : 0.0;
      std::snprintf(buf, sizeof(buf), "%s,%ld,%ld,%.10g,%.10g", to_string(g),
                    static_cast<long>(r / corpus.steps), static_cast<long>(r % corpus.steps), pc1,
                    pc2);
      f << buf << "\n";
    }
  }
  ensure(f.good(), "short write on corpus csv");
}

inline void write_analysis_summary(const std::string& path, const PcaResult& pca, double ratio) {
  nlohmann::json j = {{"explained_variance", pca.explained},
                      {"components", pca.components.rows()},
                      {"overlap_ratio", ratio}};
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "cannot open summary json: ", path);
  f << j.dump(2) << "\n";
  ensure(f.good(), "short write on summary json");
}

}  // namespace claifo
