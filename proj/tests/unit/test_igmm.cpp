#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "igmmdiar/autodiff.hpp"
#include "igmmdiar/errors.hpp"
#include "igmmdiar/igmm.hpp"
#include "igmmdiar/losses.hpp"
#include "igmmdiar/rng.hpp"
#include "oracles.hpp"

using namespace igmmdiar;

namespace {

Matrix<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix<double> m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

Matrix<double> random_resp(Rng& rng, std::size_t n, std::size_t k) {
  Matrix<double> r(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (double& v : r.row(i)) total += (v = rng.uniform() + 1e-3);
    for (double& v : r.row(i)) v /= total;
  }
  return r;
}

IgmmHyper hyper_for(int k, int dim, double alpha = 1.0, int iters = 10) {
  IgmmHyper h;
  h.alpha = alpha;
  h.truncation = k;
  h.dim = dim;
  h.em_iters = iters;
  return h;
}

VariationalParams<double> random_params(Rng& rng, std::size_t k, std::size_t dim) {
  VariationalParams<double> p;
  for (std::size_t i = 0; i < k; ++i) {
    p.gamma1.push_back(1.0 + 5.0 * rng.uniform());
    p.gamma2.push_back(0.5 + 5.0 * rng.uniform());
    p.a.push_back(1.0 + 10.0 * rng.uniform());
    p.b.push_back(1.0 + 10.0 * rng.uniform());
  }
  p.theta = random_matrix(rng, k, dim);
  return p;
}

oracle::VbParams to_oracle(const VariationalParams<double>& p) {
  return {p.gamma1, p.gamma2, p.a, p.b, p.theta};
}

}  // namespace

TEST(Hyper, Validation) {
  EXPECT_NO_THROW(IgmmHyper{}.validate());
  EXPECT_THROW(hyper_for(0, 4).validate(), ValidationError);
  EXPECT_THROW(hyper_for(3, 0).validate(), ValidationError);
  EXPECT_THROW(hyper_for(3, 4, 0.0).validate(), ValidationError);
  EXPECT_THROW(hyper_for(3, 4, 1.0, -1).validate(), ValidationError);
}

TEST(SampleGenerative, EmptySample) {
  const auto s = sample_generative(hyper_for(10, 2), 0, 1);
  EXPECT_EQ(s.embeddings.rows(), 0u);
  EXPECT_TRUE(s.assignments.empty());
}

TEST(SampleGenerative, TinyAlphaUsesOneStick) {
  const auto s = sample_generative(hyper_for(10, 2, 1e-6), 50, 3);
  EXPECT_GE(s.weights[0], 1.0 - 1e-3);
  for (int v : s.assignments) EXPECT_EQ(v, s.assignments[0]);
}

TEST(SampleGenerative, StickWeightsAndDeterminism) {
  const auto a = sample_generative(hyper_for(10, 16), 200, 7);
  const auto b = sample_generative(hyper_for(10, 16), 200, 7);
  EXPECT_EQ(a.embeddings, b.embeddings);
  EXPECT_EQ(a.assignments, b.assignments);
  double rest = 1.0, total = 0.0;
  for (std::size_t k = 0; k < a.weights.size(); ++k) {
    EXPECT_NEAR(a.weights[k], a.stick_proportions[k] * rest, 1e-15);
    rest *= 1.0 - a.stick_proportions[k];
    total += a.weights[k];
  }
  EXPECT_LE(total, 1.0 + 1e-12);
}

// Mean number of distinct clusters among N=200 draws, compared with an
// independent stick-breaking simulator over 1000 seeds.
TEST(SampleGenerative, ClusterCountMatchesStickBreakingSimulator) {
  const int seeds = 1000;
  const IgmmHyper h = hyper_for(10, 16);
  auto mean_var = [](const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return std::pair{m, v / static_cast<double>(xs.size() - 1)};
  };
  std::vector<double> ours, theirs;
  std::mt19937_64 eng(12345);
  for (int s = 0; s < seeds; ++s) {
    const auto sample = sample_generative(h, 200, static_cast<std::uint64_t>(s));
    ours.push_back(static_cast<double>(std::set<int>(sample.assignments.begin(), sample.assignments.end()).size()));

    std::gamma_distribution<double> g1(1.0, 1.0), ga(h.alpha, 1.0);
    std::vector<double> w;
    double rest = 1.0;
    for (int k = 0; k < h.truncation; ++k) {
      const double x = g1(eng), y = ga(eng);
      const double eta = x / (x + y);
      w.push_back(eta * rest);
      rest *= 1.0 - eta;
    }
    std::discrete_distribution<int> pick(w.begin(), w.end());
    std::set<int> used;
    for (int i = 0; i < 200; ++i) used.insert(pick(eng));
    theirs.push_back(static_cast<double>(used.size()));
  }
  const auto [m1, v1] = mean_var(ours);
  const auto [m2, v2] = mean_var(theirs);
  const double sigma = std::sqrt(v1 / seeds + v2 / seeds);
  EXPECT_LT(std::abs(m1 - m2), 3.0 * sigma) << m1 << " vs " << m2;
}

TEST(Init, UniformIsFlat) {
  Rng rng(1);
  const auto e = random_matrix(rng, 7, 3);
  InitOptions opt;
  opt.method = InitMethod::kUniform;
  const auto r = init_responsibilities(e, 4, opt);
  for (double v : r.data()) EXPECT_EQ(v, 0.25);
}

TEST(Init, SoftKmeansSharpLimitIsPermutation) {
  Matrix<double> e(4, 2, 0.0);
  e(1, 0) = 10.0;
  e(2, 1) = 10.0;
  e(3, 0) = -10.0;
  InitOptions opt;
  opt.tau = 1e-6;
  const auto r = init_responsibilities(e, 4, opt);
  std::set<std::size_t> cols;
  for (std::size_t n = 0; n < 4; ++n) {
    const auto row = r.row(n);
    const auto it = std::max_element(row.begin(), row.end());
    EXPECT_GT(*it, 1.0 - 1e-6);
    cols.insert(static_cast<std::size_t>(it - row.begin()));
  }
  EXPECT_EQ(cols.size(), 4u);
}

TEST(Init, SoftKmeansRowsAndRepeat) {
  Rng rng(5);
  const auto e = random_matrix(rng, 30, 8);
  const auto r1 = init_responsibilities(e, 10, {});
  const auto r2 = init_responsibilities(e, 10, {});
  EXPECT_EQ(r1, r2);
  EXPECT_NO_THROW(validate_responsibilities(r1, 1e-12));
}

TEST(Init, ExternalIsValidated) {
  Rng rng(5);
  const auto e = random_matrix(rng, 3, 2);
  InitOptions opt;
  opt.method = InitMethod::kExternal;
  opt.external = [](const Matrix<double>& m, int k) {
    return Matrix<double>(m.rows(), static_cast<std::size_t>(k), 0.7);
  };
  EXPECT_THROW(init_responsibilities(e, 2, opt), ValidationError);
  opt.external = [](const Matrix<double>& m, int k) {
    return Matrix<double>(m.rows(), static_cast<std::size_t>(k), 0.5);
  };
  EXPECT_NO_THROW(init_responsibilities(e, 2, opt));
  opt.external = nullptr;
  EXPECT_THROW(init_responsibilities(e, 2, opt), ValidationError);
}

TEST(FarthestPoint, FirstSeedIsFarthestFromMean) {
  Matrix<double> e(3, 1, 0.0);
  e(0, 0) = 1.0;
  e(1, 0) = 2.0;
  e(2, 0) = 9.0;
  const auto seeds = farthest_point_seeds(e, 2);
  ASSERT_EQ(seeds.size(), 2u);
  EXPECT_EQ(seeds[0], 2u);
  EXPECT_EQ(seeds[1], 0u);
}

TEST(MStep, EmptyClusterFixedPoint) {
  Rng rng(2);
  const auto e = random_matrix(rng, 5, 3);
  Matrix<double> r(5, 2, 0.0);
  for (std::size_t n = 0; n < 5; ++n) r(n, 0) = 1.0;
  const auto p = vb_m_step(r, e, initial_params(hyper_for(2, 3, 0.7)), hyper_for(2, 3, 0.7));
  EXPECT_EQ(p.gamma1[1], 1.0);
  EXPECT_EQ(p.gamma2[1], 0.7);
  EXPECT_EQ(p.a[1], 1.0);
  EXPECT_EQ(p.b[1], 1.0);
  for (double v : p.theta.row(1)) EXPECT_EQ(v, 0.0);
}

TEST(MStep, SinglePointPlugIn) {
  const int c = 4;
  const Matrix<double> e(1, c, 0.0);
  const Matrix<double> r(1, 1, 1.0);
  const auto h = hyper_for(1, c);
  const auto p = vb_m_step(r, e, initial_params(h), h);
  EXPECT_EQ(p.gamma1[0], 2.0);
  EXPECT_EQ(p.a[0], 1.0 + c / 2.0);
  for (double v : p.theta.row(0)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p.b[0], 1.0 + c / 2.0);
}

TEST(MStep, MatchesStraightLineOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto e = random_matrix(rng, 20, 4, 3.0);
    const auto r = random_resp(rng, 20, 6);
    const auto prev = random_params(rng, 6, 4);
    const double alpha = 0.1 + 2.0 * rng.uniform();
    const auto got = vb_m_step(r, e, prev, hyper_for(6, 4, alpha));
    const auto want = oracle::m_step(r, e, to_oracle(prev), alpha);
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_NEAR(got.gamma1[k], want.g1[k], 1e-12);
      EXPECT_NEAR(got.gamma2[k], want.g2[k], 1e-12);
      EXPECT_NEAR(got.a[k], want.a[k], 1e-12);
      EXPECT_NEAR(got.b[k], want.b[k], 1e-12 * want.b[k]);
      for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(got.theta(k, d), want.theta(k, d), 1e-12);
    }
  }
}

TEST(MStep, InvariantsOnRandomInputs) {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    const auto e = random_matrix(rng, 15, 3, 4.0);
    const auto r = random_resp(rng, 15, 5);
    const double alpha = 0.05 + 3.0 * rng.uniform();
    const auto p = vb_m_step(r, e, random_params(rng, 5, 3), hyper_for(5, 3, alpha));
    double max_norm = 0.0;
    for (std::size_t n = 0; n < 15; ++n) max_norm = std::max(max_norm, std::sqrt(squared_norm(e.row(n))));
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_GE(p.gamma1[k], 1.0);
      EXPECT_GE(p.gamma2[k], alpha);
      EXPECT_GE(p.a[k], 1.0);
      EXPECT_GE(p.b[k], 1.0);
      // theta is a shrunk weighted mean of the embeddings.
      EXPECT_LE(std::sqrt(squared_norm(p.theta.row(k))), max_norm + 1e-12);
    }
  }
}

TEST(EStep, SingleClusterIsCertain) {
  Rng rng(3);
  const auto e = random_matrix(rng, 6, 2);
  const auto r = vb_e_step(random_params(rng, 1, 2), e, hyper_for(1, 2));
  for (double v : r.data()) EXPECT_EQ(v, 1.0);
}

TEST(EStep, EqualEmbeddingsGiveEqualRows) {
  Rng rng(3);
  auto e = random_matrix(rng, 3, 2);
  e(2, 0) = e(0, 0);
  e(2, 1) = e(0, 1);
  const auto r = vb_e_step(random_params(rng, 4, 2), e, hyper_for(4, 2));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(r(0, k), r(2, k));
}

TEST(EStep, MatchesStraightLineOracle) {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto e = random_matrix(rng, 20, 4, 2.0);
    const auto p = random_params(rng, 6, 4);
    const auto got = vb_e_step(p, e, hyper_for(6, 4));
    const auto want = oracle::e_step(to_oracle(p), e);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
    EXPECT_NO_THROW(validate_responsibilities(got));
  }
}

TEST(Unfolded, ZeroIterationsReturnsInit) {
  Rng rng(4);
  const auto e = random_matrix(rng, 8, 3);
  const auto init = random_resp(rng, 8, 5);
  const auto run = run_unfolded(e, hyper_for(5, 3, 1.0, 0), init);
  EXPECT_EQ(run.responsibilities, init);
  EXPECT_TRUE(run.max_change.empty());
}

TEST(Unfolded, RecordedRunIsBitwiseEqual) {
  Rng rng(6);
  const auto e = random_matrix(rng, 12, 4, 3.0);
  const auto h = hyper_for(5, 4, 1.0, 5);
  const auto init = init_responsibilities(e, 5, {});
  const auto plain = run_unfolded(e, h, init);
  Tape tape;
  const auto recorded = run_unfolded(variables_of(tape, e), h, init);
  EXPECT_EQ(values_of(recorded.responsibilities), plain.responsibilities);
  EXPECT_EQ(recorded.max_change, plain.max_change);
  EXPECT_GT(tape.node_count(), e.size());
}

TEST(Unfolded, PermutingRowsPermutesOutput) {
  Rng rng(7);
  const auto e = random_matrix(rng, 10, 3, 3.0);
  const auto h = hyper_for(4, 3, 1.0, 6);
  const Matrix<double> init(10, 4, 0.25);
  std::vector<std::size_t> perm{3, 0, 9, 1, 8, 2, 7, 4, 6, 5};
  Matrix<double> ep(10, 3);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t d = 0; d < 3; ++d) ep(i, d) = e(perm[i], d);
  const auto r = run_unfolded(e, h, init).responsibilities;
  const auto rp = run_unfolded(ep, h, init).responsibilities;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(rp(i, k), r(perm[i], k), 1e-12);
}

TEST(Unfolded, RowsStayStochastic) {
  Rng rng(8);
  const auto e = random_matrix(rng, 25, 6, 5.0);
  const auto run = run_unfolded(e, hyper_for(10, 6), init_responsibilities(e, 10, {}));
  EXPECT_NO_THROW(validate_responsibilities(run.responsibilities));
  EXPECT_EQ(run.max_change.size(), 10u);
}

TEST(Unfolded, RecoversPlantedClusters) {
  const auto s = sample_planted(simplex_means(4, 16, 10.0), 1.0, 60, 1);
  const auto run = run_unfolded(s.embeddings, hyper_for(10, 16), init_responsibilities(s.embeddings, 10, {}));
  EXPECT_GE(exact_ari(hard_assign(run.responsibilities), s.assignments), 0.95);
  EXPECT_EQ(effective_cluster_count(run.responsibilities, 0.5), 4);
  EXPECT_LT(run.max_change.back(), 1e-3);
}

TEST(HardAssign, ArgmaxWithLowTieBreak) {
  Matrix<double> r(2, 3, 0.0);
  r(0, 0) = 0.2;
  r(0, 1) = 0.7;
  r(0, 2) = 0.1;
  r(1, 0) = 0.5;
  r(1, 1) = 0.5;
  EXPECT_EQ(hard_assign(r), (std::vector<int>{1, 0}));
  Rng rng(9);
  const auto big = random_resp(rng, 40, 7);
  const auto labels = hard_assign(big);
  for (std::size_t n = 0; n < 40; ++n) {
    int best = 0;
    for (int k = 1; k < 7; ++k)
      if (big(n, static_cast<std::size_t>(k)) > big(n, static_cast<std::size_t>(best))) best = k;
    EXPECT_EQ(labels[n], best);
  }
}

TEST(EffectiveClusters, Counts) {
  Matrix<double> onehot(6, 5, 0.0);
  for (std::size_t n = 0; n < 6; ++n) onehot(n, n % 3) = 1.0;
  EXPECT_EQ(effective_cluster_count(onehot, 0.5), 3);
  EXPECT_EQ(effective_cluster_count(Matrix<double>(10, 10, 0.1), 1.5), 0);
  EXPECT_THROW(effective_cluster_count(onehot, 0.0), ValidationError);
}

TEST(EmbeddingSet, Validation) {
  EmbeddingSet set;
  set.values = Matrix<double>(2, 2, 1.0);
  set.slots = {{0, 0}, {0, 1}};
  EXPECT_NO_THROW(validate(set));
  set.slots[1] = {0, 0};
  EXPECT_THROW(validate(set), ValidationError);
  set.slots.pop_back();
  EXPECT_THROW(validate(set), ValidationError);
}
