#include <catch2/catch_amalgamated.hpp>

#include <claifo/analysis.hpp>
#include <claifo/expert.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace claifo;

namespace {

LatentCorpus manual_corpus(int m, std::array<Mat<float>, 4> groups) {
  LatentCorpus c;
  c.latent_dim = m;
  c.episodes = 1;
  c.steps = static_cast<int>(groups[0].rows());
  c.groups = std::move(groups);
  return c;
}

Mat<float> gaussian_rows(int n, int m, Rng& rng, float scale = 1.0f) {
  Mat<float> x(n, m);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    x.data()[i] = scale * static_cast<float>(rng.normal());
  return x;
}

// Symmetric pair cloud around a 2-D centre: centroid is exactly the centre.
Mat<double> pair_cloud(double cx, double cy) {
  Mat<double> p(4, 2);
  p << cx + 0.1, cy - 0.2, cx - 0.1, cy + 0.2, cx + 0.05, cy + 0.3, cx - 0.05, cy - 0.3;
  return p;
}

}  // namespace

TEST_CASE("pca recovers axis-aligned structure exactly") {
  // Only coords 2 (variance-dominant) and 5 vary; everything else is 0.
  const int m = 6;
  std::array<Mat<float>, 4> groups;
  for (auto& g : groups) {
    g = Mat<float>::Zero(4, m);
    g(0, 2) = 2.0f;
    g(1, 2) = -2.0f;
    g(2, 5) = 1.0f;
    g(3, 5) = -1.0f;
  }
  LatentCorpus corpus = manual_corpus(m, groups);
  PcaResult pca = pca_project(corpus);

  REQUIRE(pca.components.rows() == 2);
  Mat<double> want(2, m);
  want.setZero();
  want(0, 2) = 1.0;  // sign fix: largest coordinate positive
  want(1, 5) = 1.0;
  REQUIRE((pca.components - want).cwiseAbs().maxCoeff() < 1e-12);

  // 8 rows at +-2 on coord 2, 8 at +-1 on coord 5: ratios 32/40 and 8/40.
  REQUIRE(pca.explained.size() == 2);
  REQUIRE(pca.explained[0] == Catch::Approx(0.8).margin(1e-12));
  REQUIRE(pca.explained[1] == Catch::Approx(0.2).margin(1e-12));

  const Mat<double>& p0 = pca.group(CorpusGroup::source_optimal);
  REQUIRE(p0(0, 0) == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(p0(0, 1) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(p0(2, 1) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("pca matches a dense covariance eigendecomposition") {
  // Oracle: eigenvectors of the pooled covariance matrix, computed with a
  // different factorization than the SVD used by pca_project.
  const int m = 8;
  Rng rng(1234);
  std::array<Mat<float>, 4> groups = {gaussian_rows(13, m, rng), gaussian_rows(12, m, rng),
                                      gaussian_rows(13, m, rng), gaussian_rows(12, m, rng)};
  // Anisotropy so the top-2 subspace is well separated.
  for (auto& g : groups) {
    g.col(1) *= 5.0f;
    g.col(4) *= 3.0f;
  }
  LatentCorpus corpus = manual_corpus(m, groups);
  PcaResult pca = pca_project(corpus);

  Eigen::MatrixXd pooled(50, m);
  Eigen::Index at = 0;
  for (const auto& g : corpus.groups) {
    pooled.middleRows(at, g.rows()) = g.cast<double>();
    at += g.rows();
  }
  pooled.rowwise() -= pooled.colwise().mean().eval();
  const Eigen::MatrixXd cov = pooled.transpose() * pooled / double(pooled.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Mat<double> oracle(2, m);
  oracle.row(0) = eig.eigenvectors().col(m - 1).transpose();  // eigenvalues ascend
  oracle.row(1) = eig.eigenvectors().col(m - 2).transpose();

  REQUIRE(subspace_angle(pca.components, oracle) < 1e-8);

  const double total = eig.eigenvalues().sum();
  REQUIRE(pca.explained[0] == Catch::Approx(eig.eigenvalues()(m - 1) / total).margin(1e-9));
  REQUIRE(pca.explained[1] == Catch::Approx(eig.eigenvalues()(m - 2) / total).margin(1e-9));

  REQUIRE(pca.explained[0] >= pca.explained[1]);
  REQUIRE(pca.explained[0] + pca.explained[1] <= 1.0 + 1e-12);
  for (int i = 0; i < 2; ++i) {
    Eigen::Index imax = 0;
    pca.components.row(i).cwiseAbs().maxCoeff(&imax);
    REQUIRE(pca.components(i, imax) > 0.0);
  }

  // Deterministic: identical input, identical output.
  PcaResult again = pca_project(corpus);
  REQUIRE(((pca.components.array() == again.components.array()).all()));
  REQUIRE(((pca.points[0].array() == again.points[0].array()).all()));
}

TEST_CASE("pca drops near-zero directions instead of inventing them") {
  const int m = 5;
  std::array<Mat<float>, 4> groups;
  for (auto& g : groups) g = Mat<float>::Zero(3, m);

  SECTION("constant corpus has no components") {
    for (auto& g : groups) g.setConstant(0.7f);
    PcaResult pca = pca_project(manual_corpus(m, groups));
    REQUIRE(pca.components.rows() == 0);
    REQUIRE(pca.explained.empty());
    REQUIRE(pca.points[0].cols() == 0);
  }
  SECTION("rank-1 corpus keeps a single component") {
    float v = 0.0f;
    for (auto& g : groups)
      for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, 3) = (v += 1.0f);
    PcaResult pca = pca_project(manual_corpus(m, groups));
    REQUIRE(pca.components.rows() == 1);
    REQUIRE(pca.components(0, 3) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(pca.explained[0] == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("overlap ratio has the promised closed-form geometry") {
  SECTION("identical optimal clouds give exactly zero") {
    std::array<Mat<double>, 4> pts = {pair_cloud(0.3, -0.1), pair_cloud(2.0, 2.0),
                                      pair_cloud(0.3, -0.1), pair_cloud(-2.0, 1.0)};
    REQUIRE(overlap_ratio(pts) == 0.0);
  }
  SECTION("four clouds at unit-square corners give exactly one") {
    // Optimal pair on the bottom edge, random pair directly above: the
    // centroid separation equals both matched-domain distances.
    std::array<Mat<double>, 4> pts = {pair_cloud(0.0, 0.0), pair_cloud(0.0, 1.0),
                                      pair_cloud(1.0, 0.0), pair_cloud(1.0, 1.0)};
    REQUIRE(overlap_ratio(pts) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("noisy square corners stay near one") {
    Rng rng(99);
    std::array<Mat<double>, 4> pts;
    const double cx[4] = {0.0, 0.0, 1.0, 1.0};
    const double cy[4] = {0.0, 1.0, 0.0, 1.0};
    for (int g = 0; g < 4; ++g) {
      pts[g] = Mat<double>(200, 2);
      for (Eigen::Index r = 0; r < 200; ++r) {
        pts[g](r, 0) = cx[g] + 0.05 * rng.normal();
        pts[g](r, 1) = cy[g] + 0.05 * rng.normal();
      }
    }
    REQUIRE(overlap_ratio(pts) == Catch::Approx(1.0).margin(0.05));
  }
  SECTION("invariant under rigid transforms and common scaling") {
    std::array<Mat<double>, 4> pts = {pair_cloud(0.1, 0.4), pair_cloud(1.3, -0.7),
                                      pair_cloud(-0.6, 0.9), pair_cloud(2.2, 1.8)};
    const double base = overlap_ratio(pts);

    const double th = 0.7;
    Mat<double> rot(2, 2);
    rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    std::array<Mat<double>, 4> moved = pts;
    for (auto& p : moved) {
      p = (p * rot.transpose()).eval();
      p.col(0).array() += 3.0;
      p.col(1).array() -= 2.0;
    }
    REQUIRE(overlap_ratio(moved) == Catch::Approx(base).margin(1e-12));

    std::array<Mat<double>, 4> scaled = pts;
    for (auto& p : scaled) p *= 7.3;
    REQUIRE(overlap_ratio(scaled) == Catch::Approx(base).margin(1e-12));
  }
  SECTION("degenerate separation is an error") {
    std::array<Mat<double>, 4> pts = {pair_cloud(0, 0), pair_cloud(0, 0), pair_cloud(1, 1),
                                      pair_cloud(1, 1)};
    REQUIRE_THROWS_AS(overlap_ratio(pts), input_error);
    pts[0] = Mat<double>(0, 2);
    REQUIRE_THROWS_AS(overlap_ratio(pts), input_error);
  }
}

TEST_CASE("subspace angle separates equal, rotated and orthogonal spans") {
  Mat<double> a = Mat<double>::Zero(2, 4);
  a(0, 0) = 1.0;
  a(1, 1) = 1.0;

  REQUIRE(subspace_angle(a, a) < 1e-12);

  // Same span, rotated basis.
  Mat<double> rot(2, 4);
  rot.setZero();
  rot(0, 0) = std::cos(0.3);
  rot(0, 1) = std::sin(0.3);
  rot(1, 0) = -std::sin(0.3);
  rot(1, 1) = std::cos(0.3);
  REQUIRE(subspace_angle(a, rot) < 1e-12);

  // Shares e0 but swaps e1 for e2: largest principal angle is pi/2.
  Mat<double> b = Mat<double>::Zero(2, 4);
  b(0, 0) = 1.0;
  b(1, 2) = 1.0;
  REQUIRE(subspace_angle(a, b) == Catch::Approx(M_PI / 2).margin(1e-12));
}

TEST_CASE("build_corpus encodes both domains deterministically") {
  EnvConfig base;
  base.image_size = 20;
  base.episode_length = 25;
  auto [source, target] = make_mismatch_pair("light", base);

  NetConfig nc;
  nc.image_size = 20;
  nc.frame_stack = 2;
  nc.latent_dim = 16;
  nc.conv_channels = 8;
  nc.mlp_width = 32;
  Rng init(derive_stream(11, "init"));
  Encoder<float> enc("encoder", nc, init);

  auto oracle = [&](const PointMassState& s) { return oracle_action(s, base.goal); };
  LatentCorpus corpus = build_corpus(enc, oracle, source, target, 2, 2, 42);

  REQUIRE(corpus.latent_dim == 16);
  REQUIRE(corpus.episodes == 2);
  REQUIRE(corpus.steps == 25);
  for (const auto& g : corpus.groups) {
    REQUIRE(g.rows() == 50);
    REQUIRE(g.cols() == 16);
    REQUIRE(g.allFinite());
  }
  // Different themes and policies must leave a visible trace in the latents.
  REQUIRE((corpus.groups[0] - corpus.groups[2]).cwiseAbs().maxCoeff() > 0.0f);
  REQUIRE((corpus.groups[0] - corpus.groups[1]).cwiseAbs().maxCoeff() > 0.0f);

  LatentCorpus again = build_corpus(enc, oracle, source, target, 2, 2, 42);
  for (int g = 0; g < 4; ++g)
    REQUIRE(((corpus.groups[g].array() == again.groups[g].array()).all()));

  LatentCorpus other = build_corpus(enc, oracle, source, target, 2, 2, 43);
  REQUIRE((corpus.groups[0] - other.groups[0]).cwiseAbs().maxCoeff() > 0.0f);

  EnvConfig longer = target;
  longer.episode_length = 30;
  REQUIRE_THROWS_AS(build_corpus(enc, oracle, source, longer, 2, 2, 42), input_error);
}

TEST_CASE("analysis artifacts round-trip through csv and json") {
  const int m = 4;
  Rng rng(5);
  std::array<Mat<float>, 4> groups = {gaussian_rows(6, m, rng), gaussian_rows(6, m, rng),
                                      gaussian_rows(6, m, rng), gaussian_rows(6, m, rng)};
  LatentCorpus corpus = manual_corpus(m, groups);
  corpus.episodes = 2;
  corpus.steps = 3;
  PcaResult pca = pca_project(corpus);
  const double ratio = overlap_ratio(pca);

  const auto dir = std::filesystem::temp_directory_path() / "claifo-analysis-test";
  std::filesystem::create_directories(dir);
  const auto csv = (dir / "latents.csv").string();
  const auto js = (dir / "summary.json").string();
  write_corpus_csv(csv, corpus, pca);
  write_analysis_summary(js, pca, ratio);

  std::ifstream f(csv);
  std::string line;
  REQUIRE(std::getline(f, line));
  REQUIRE(line == "label,episode,t,pc1,pc2");
  int rows = 0;
  std::string first;
  while (std::getline(f, line)) {
    if (rows == 0) first = line;
    ++rows;
  }
  REQUIRE(rows == 24);
  REQUIRE(first.rfind("source-optimal,0,0,", 0) == 0);

  std::ifstream jf(js);
  nlohmann::json j = nlohmann::json::parse(jf);
  REQUIRE(j.at("overlap_ratio").get<double>() == Catch::Approx(ratio).margin(1e-12));
  REQUIRE(j.at("explained_variance").size() == 2);
  REQUIRE(j.at("components").get<int>() == 2);
  std::filesystem::remove_all(dir);
}
