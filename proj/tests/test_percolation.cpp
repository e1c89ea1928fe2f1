#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "depin/percolation.hpp"
#include "oracles.hpp"

using namespace depin;

namespace {

template <int Dim>
SiteField<Dim> random_sites(int side, int cap, double p, std::mt19937_64& rng) {
  auto s = SiteField<Dim>::closed(side, cap);
  std::bernoulli_distribution coin(p);
  for (long c = 0; c < s.column_count(); ++c)
    for (int j = 1; j <= cap; ++j) s.set_open(c, j, coin(rng));
  return s;
}

Window<1> window1(double x0, double x1, double y0, double y1) {
  Window<1> w;
  w.lo = {x0};
  w.hi = {x1};
  w.y_lo = y0;
  w.y_hi = y1;
  return w;
}

BoxGeometry<1> geo1(double l, double d, double h, double r1, int K, int cap) {
  BoxGeometry<1> g;
  g.l = l;
  g.d = d;
  g.h = h;
  g.r1 = r1;
  g.columns = K;
  g.height_cap = cap;
  return g;
}

}  // namespace

TEST(Surface, AllOpenIsFlat) {
  auto s = SiteField<1>::closed(7, 4);
  std::fill(s.open.begin(), s.open.end(), 1);
  auto r = minimal_lipschitz_surface(s);
  ASSERT_TRUE(r.ok);
  for (int h : r.surface.height) EXPECT_EQ(h, 1);
}

TEST(Surface, SingleClosedSite) {
  auto s = SiteField<1>::closed(5, 3);
  std::fill(s.open.begin(), s.open.end(), 1);
  s.set_open(0, 1, false);
  auto r = minimal_lipschitz_surface(s);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.surface.at(0), 2);
  for (long c = 1; c < 5; ++c) EXPECT_EQ(r.surface.at(c), 1);
  auto bf = oracle::brute_force_surface(s);
  ASSERT_TRUE(bf.has_value());
  EXPECT_EQ(*bf, r.surface.height);
}

TEST(Surface, AllClosedFails) {
  auto s = SiteField<2>::closed(4, 5);
  auto r = minimal_lipschitz_surface(s);
  EXPECT_FALSE(r.ok);
  EXPECT_GE(r.failed_column, 0);
}

TEST(Surface, MatchesBruteForceOneDimension) {
  std::mt19937_64 rng(1);
  int checked = 0;
  for (int t = 0; t < 300; ++t) {
    const int side = 2 + t % 5;  // 2..6
    const int cap = 2 + t % 3;   // 2..4
    auto s = random_sites<1>(side, cap, 0.55 + 0.4 * ((t * 37) % 10) / 10.0, rng);
    auto r = minimal_lipschitz_surface(s);
    auto bf = oracle::brute_force_surface(s);
    ASSERT_EQ(r.ok, bf.has_value()) << "trial " << t;
    if (r.ok) {
      EXPECT_EQ(r.surface.height, *bf) << "trial " << t;
      EXPECT_TRUE(is_open_lipschitz(s, r.surface.height));
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Surface, MatchesBruteForceTwoDimensions) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 60; ++t) {
    const int side = 2 + t % 2;
    const int cap = 3 + t % 2;
    auto s = random_sites<2>(side, cap, 0.7, rng);
    auto r = minimal_lipschitz_surface(s);
    auto bf = oracle::brute_force_surface(s);
    ASSERT_EQ(r.ok, bf.has_value());
    if (r.ok) {
      EXPECT_EQ(r.surface.height, *bf);
    }
  }
}

TEST(Surface, SweepOrderIndependent) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    auto s = random_sites<2>(8, 12, 0.8, rng);
    auto ref = minimal_lipschitz_surface(s);
    std::vector<long> order(static_cast<std::size_t>(s.column_count()));
    for (long i = 0; i < s.column_count(); ++i) order[static_cast<std::size_t>(i)] = i;
    for (int k = 0; k < 3; ++k) {
      std::shuffle(order.begin(), order.end(), rng);
      auto r = minimal_lipschitz_surface_sweeps(s, order);
      ASSERT_EQ(r.ok, ref.ok);
      if (r.ok) {
        EXPECT_EQ(r.surface.height, ref.surface.height);
      }
    }
  }
}

TEST(Surface, ExportFormat) {
  auto s = SiteField<2>::closed(2, 2);
  std::fill(s.open.begin(), s.open.end(), 1);
  auto r = minimal_lipschitz_surface(s);
  std::ostringstream os;
  write_surface(os, r.surface);
  EXPECT_EQ(os.str(), "0 0 1\n0 1 1\n1 0 1\n1 1 1\n");
}

TEST(Openness, EmptyFieldAllClosed) {
  ObstacleShape shape(1, 0.25, 0.4);
  ObstacleField<1> f(shape, StrengthDistribution::constant(1), 1.0, 0, window1(0, 20, 0.4, 20), true, {});
  auto s = openness_from_field(f, geo1(3, 2, 1, 0.4, 4, 10), 1.0);
  for (auto v : s.open) EXPECT_EQ(v, 0);
}

TEST(Openness, SingleObstacleOpensOneSite) {
  ObstacleShape shape(1, 0.25, 0.4);
  // column 0 reduced box [0.4, 2.6], slab 3 = [2.4, 3.4]
  std::vector<Obstacle<1>> obs{{{1.0}, 2.9, 2.0}};
  ObstacleField<1> f(shape, StrengthDistribution::constant(2), 1.0, 0, window1(0, 20, 0.4, 20), true, obs);
  auto s = openness_from_field(f, geo1(3, 2, 1, 0.4, 4, 10), 1.5);
  for (int j = 1; j <= 10; ++j) EXPECT_EQ(s.is_open(0, j), j == 3);
  auto weak = openness_from_field(f, geo1(3, 2, 1, 0.4, 4, 10), 2.5);
  EXPECT_FALSE(weak.is_open(0, 3));
}

TEST(Openness, MarginalMatchesVoidProbability) {
  // |A| = (l - 2 r1) h = 1, tail = 1, lambda chosen so 1 - exp(-lambda |A|) = 0.95
  const double lambda = -std::log(0.05);
  ObstacleShape shape(1, 0.25, 0.4);
  auto g = geo1(1.8, 1.0, 1.0, 0.4, 100, 100);
  auto f = sample_field<1>(window1(0, g.side(), 0.4, 101.0), lambda, StrengthDistribution::constant(1), shape, 77,
                           {true, 1.0, 1});
  auto s = openness_from_field(f, g, 1.0);
  EXPECT_NEAR(s.theoretical_marginal, 0.95, 1e-12);
  EXPECT_NEAR(s.empirical_open_fraction, 0.95, 0.01);
}

TEST(Openness, RejectsSmallWindow) {
  ObstacleShape shape(1, 0.25, 0.4);
  ObstacleField<1> f(shape, StrengthDistribution::constant(1), 1.0, 0, window1(0, 10, 0.4, 5), true, {});
  EXPECT_THROW(openness_from_field(f, geo1(3, 2, 1, 0.4, 4, 10), 1.0), DepinError);
  EXPECT_THROW(openness_from_field(f, geo1(0.7, 2, 1, 0.4, 2, 2), 1.0), DepinError);
}

TEST(Tail, FullOpennessNeverSurvives) {
  auto st = tail_statistics<1>(1.0, 200, 5, {8, 0, 20, 1});
  EXPECT_EQ(st.curve[1].survivors, 0);
  EXPECT_EQ(st.curve[0].survivors, 200);  // L(0) >= 1 always
}

TEST(Tail, GeometricDecayBelowNu) {
  TailOptions opt;
  opt.height_cap = 12;
  auto st = tail_statistics<1>(0.95, 20000, 11, opt);
  EXPECT_NEAR(st.nu, 0.2, 1e-12);
  EXPECT_TRUE(st.supercritical);
  EXPECT_TRUE(st.envelope_ok);
  EXPECT_LE(st.fitted_ratio_lo, st.nu);
  EXPECT_TRUE(st.pass);
  for (std::size_t k = 1; k < st.curve.size(); ++k) EXPECT_LE(st.curve[k].survivors, st.curve[k - 1].survivors);
}

TEST(Tail, HigherDensityDominates) {
  TailOptions opt;
  opt.height_cap = 10;
  auto a = tail_statistics<1>(0.99, 5000, 4, opt);
  auto b = tail_statistics<1>(0.95, 5000, 4, opt);
  for (std::size_t k = 0; k < a.curve.size(); ++k) EXPECT_LE(a.curve[k].survivors, b.curve[k].survivors);
}

TEST(Tail, SubcriticalIsInformational) {
  auto st = tail_statistics<1>(0.9, 500, 1, {8, 0, 20, 1});
  EXPECT_FALSE(st.supercritical);
  EXPECT_FALSE(st.pass);
  EXPECT_NE(st.note.find("p <= p_c"), std::string::npos);
}

TEST(Tail, IndependentOfThreads) {
  TailOptions one, many;
  one.height_cap = many.height_cap = 8;
  many.threads = 8;
  auto a = tail_statistics<2>(0.985, 300, 9, one);
  auto b = tail_statistics<2>(0.985, 300, 9, many);
  std::ostringstream sa, sb;
  write_survival_csv(sa, a);
  write_survival_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str().substr(0, 36), "k,survivors,trials,p_hat,ci_lo,ci_hi");
}

TEST(Tail, WilsonInterval) {
  auto [lo, hi] = wilson_interval(50, 100);
  EXPECT_NEAR(lo, 0.4038, 1e-3);
  EXPECT_NEAR(hi, 0.5962, 1e-3);
  auto [z0, z1] = wilson_interval(0, 1000);
  EXPECT_EQ(z0, 0.0);
  EXPECT_GT(z1, 0.0);
  EXPECT_LT(z1, 0.005);
}

TEST(Tail, CriticalProbability) {
  EXPECT_DOUBLE_EQ(critical_probability(1), 1.0 - 1.0 / 16.0);
  EXPECT_DOUBLE_EQ(critical_probability(2), 1.0 - 1.0 / 36.0);
}

TEST(Select, LowestObstacleWins) {
  ObstacleShape shape(1, 0.25, 0.4);
  auto g = geo1(3.0, 2.0, 2.0, 0.4, 2, 4);
  // both in column 0, slab 1 = [0.4, 2.4]
  std::vector<Obstacle<1>> obs{{{1.5}, 2.0, 5.0}, {{1.0}, 1.2, 5.0}, {{6.0}, 1.0, 5.0}};
  ObstacleField<1> f(shape, StrengthDistribution::constant(5), 1.0, 0, window1(0, 10, 0.4, 10), true, obs);
  auto sites = openness_from_field(f, g, 5.0);
  auto surf = minimal_lipschitz_surface(sites);
  ASSERT_TRUE(surf.ok);
  auto sel = select_obstacles(f, sites, surf.surface, g, 5.0);
  EXPECT_EQ(sel.obstacle[0].y, 1.2);
  EXPECT_EQ(sel.obstacle[1].x[0], 6.0);

  std::vector<Obstacle<1>> rev(obs.rbegin(), obs.rend());
  ObstacleField<1> f2(shape, StrengthDistribution::constant(5), 1.0, 0, window1(0, 10, 0.4, 10), true, rev);
  auto sel2 = select_obstacles(f2, sites, surf.surface, g, 5.0);
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(sel.obstacle[c].x[0], sel2.obstacle[c].x[0]);
    EXPECT_EQ(sel.obstacle[c].y, sel2.obstacle[c].y);
  }
}

TEST(Select, TiesBrokenByPosition) {
  ObstacleShape shape(1, 0.25, 0.4);
  auto g = geo1(3.0, 2.0, 2.0, 0.4, 1, 2);
  std::vector<Obstacle<1>> obs{{{2.0}, 1.0, 5.0}, {{1.0}, 1.0, 5.0}};
  ObstacleField<1> f(shape, StrengthDistribution::constant(5), 1.0, 0, window1(0, 5, 0.4, 6), true, obs);
  auto sites = openness_from_field(f, g, 5.0);
  auto surf = minimal_lipschitz_surface(sites);
  auto sel = select_obstacles(f, sites, surf.surface, g, 5.0);
  EXPECT_EQ(sel.obstacle[0].x[0], 1.0);
}

TEST(Select, InconsistentSitesAreAHardFailure) {
  ObstacleShape shape(1, 0.25, 0.4);
  auto g = geo1(3.0, 2.0, 2.0, 0.4, 1, 2);
  ObstacleField<1> f(shape, StrengthDistribution::constant(5), 1.0, 0, window1(0, 5, 0.4, 6), true, {});
  auto sites = SiteField<1>::closed(1, 2);
  sites.set_open(0, 1, true);
  auto surf = minimal_lipschitz_surface(sites);
  EXPECT_THROW(select_obstacles(f, sites, surf.surface, g, 5.0), DepinError);
}
