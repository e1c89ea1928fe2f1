#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <sstream>

#include "depin/obstacle_field.hpp"

using namespace depin;

namespace {

ObstacleShape shape1() { return ObstacleShape(1, 0.25, 0.4); }

Window<1> window1(double x0, double x1, double y0, double y1) {
  Window<1> w;
  w.lo = {x0};
  w.hi = {x1};
  w.y_lo = y0;
  w.y_hi = y1;
  return w;
}

}  // namespace

TEST(Shape, VanishesOutsideSupport) {
  auto s = shape1();
  EXPECT_EQ(s.eval<1>({2 * s.r1()}, 0.0), 0.0);
  EXPECT_EQ(s.eval<1>({0.3}, 0.3), 0.0);  // norm 0.424 > r1
  EXPECT_EQ(s.eval_dist(s.r1()), 0.0);
}

TEST(Shape, CoreAtMostMinusOne) {
  auto s = shape1();
  EXPECT_LE(s.eval<1>({0.0}, 0.0), -1.0);
  // corners of the inf-ball are where the radial bump is least negative
  EXPECT_LE(s.eval<1>({0.25}, 0.25), -1.0 + 1e-12);
  EXPECT_LE(s.eval<1>({-0.25}, 0.25), -1.0 + 1e-12);
}

TEST(Shape, CornerExampleWithWiderSupport) {
  const double r1 = 0.5 * std::sqrt(2.0) + 0.01;
  ObstacleShape s(1, 0.25, r1);
  EXPECT_LE(s.eval<1>({0.25}, 0.25), -1.0);
}

TEST(Shape, CoreConditionInTwoDimensions) {
  ObstacleShape s(2, 0.2, 0.36);
  for (double a : {-0.2, 0.2})
    for (double b : {-0.2, 0.2})
      for (double c : {-0.2, 0.2}) EXPECT_LE((s.eval<2>({a, b}, c)), -1.0 + 1e-12);
}

TEST(Shape, NonPositiveEverywhere) {
  auto s = shape1();
  for (int i = 0; i < 2000; ++i) {
    const double x = -0.5 + i * 0.0005, y = 0.3 - i * 0.0003;
    EXPECT_LE(s.eval<1>({x}, y), 0.0);
  }
}

TEST(Shape, RejectsSupportTooSmall) {
  EXPECT_THROW(ObstacleShape(1, 0.25, std::sqrt(2.0) * 0.25), DepinError);
  EXPECT_THROW(ObstacleShape(2, 0.25, std::sqrt(3.0) * 0.25), DepinError);
  EXPECT_NO_THROW(ObstacleShape(1, 0.25, std::sqrt(2.0) * 0.25 + 1e-6));
}

TEST(Shape, DerivativeMatchesFiniteDifference) {
  auto s = shape1();
  const double h = 1e-6;
  for (double x : {0.0, 0.05, 0.13})
    for (double y : {-0.3, -0.1, 0.02, 0.2}) {
      const double fd = (s.eval<1>({x}, y + h) - s.eval<1>({x}, y - h)) / (2 * h);
      EXPECT_NEAR(s.eval_dy<1>({x}, y), fd, 1e-6);
    }
}

TEST(Shape, SlopeBoundDominatesSamples) {
  auto s = shape1();
  double m = 0.0;
  for (int i = 0; i < 4000; ++i) m = std::max(m, std::abs(s.slope_dist(s.r1() * i / 4000.0)));
  EXPECT_GE(s.max_abs_dy(), m);
  EXPECT_LE(s.max_abs_dy(), 1.05 * m);
}

TEST(Strength, TailsAndThresholds) {
  auto c = StrengthDistribution::constant(10);
  EXPECT_EQ(c.tail(10), 1.0);
  EXPECT_EQ(c.tail(10.0001), 0.0);
  EXPECT_EQ(c.threshold_for_tail(0.5), 10.0);
  auto u = StrengthDistribution::uniform(1, 3);
  EXPECT_DOUBLE_EQ(u.tail(2.5), 0.25);
  EXPECT_DOUBLE_EQ(u.threshold_for_tail(0.5), 2.0);
  auto e = StrengthDistribution::exponential(2.0);
  EXPECT_NEAR(e.tail(e.threshold_for_tail(0.3)), 0.3, 1e-14);
  EXPECT_NEAR(e.quantile(1.0 - std::exp(-1.0)), 0.5, 1e-14);
}

TEST(Strength, ParseRoundTrip) {
  for (std::string s : {"constant:10", "uniform:0.5:2", "exponential:3"}) {
    auto d = StrengthDistribution::parse(s);
    auto d2 = StrengthDistribution::parse(d.to_string());
    EXPECT_EQ(d.to_string(), d2.to_string());
  }
  EXPECT_THROW(StrengthDistribution::parse("gamma:2"), DepinError);
  EXPECT_THROW(StrengthDistribution::parse("uniform:2:1"), DepinError);
}

TEST(Strength, ScaledDoublesStrengths) {
  auto u = StrengthDistribution::uniform(1, 3);
  auto v = u.scaled(2.0);
  for (double q : {0.1, 0.5, 0.9}) EXPECT_DOUBLE_EQ(v.quantile(q), 2.0 * u.quantile(q));
}

TEST(Sampling, PoissonMoments) {
  // volume 2 x 5 = 10, lambda = 2 -> Poisson(20)
  const auto w = window1(0.0, 2.0, 1.0, 6.0);
  double sum = 0, sum2 = 0;
  const int seeds = 1000;
  for (int s = 0; s < seeds; ++s) {
    auto f = sample_field<1>(w, 2.0, StrengthDistribution::constant(1), shape1(), static_cast<std::uint64_t>(s));
    const double k = static_cast<double>(f.obstacles().size());
    sum += k;
    sum2 += k * k;
  }
  const double mean = sum / seeds;
  const double var = (sum2 - seeds * mean * mean) / (seeds - 1);
  EXPECT_NEAR(mean, 20.0, 1.5);
  EXPECT_NEAR(var, 20.0, 4.0);
}

TEST(Sampling, VanishingIntensityGivesEmptyFields) {
  const auto w = window1(0.0, 1.0, 1.0, 2.0);
  int nonempty = 0;
  for (int s = 0; s < 200; ++s)
    nonempty += !sample_field<1>(w, 1e-9, StrengthDistribution::constant(1), shape1(), static_cast<std::uint64_t>(s))
                     .obstacles()
                     .empty();
  EXPECT_EQ(nonempty, 0);
}

TEST(Sampling, OverlappingWindowsAgree) {
  auto a = sample_field<1>(window1(0.0, 7.5, 0.5, 6.0), 3.0, StrengthDistribution::uniform(1, 2), shape1(), 42);
  auto b = sample_field<1>(window1(3.2, 12.0, 2.0, 9.0), 3.0, StrengthDistribution::uniform(1, 2), shape1(), 42);
  const auto inter = window1(3.2, 7.5, 2.0, 6.0);
  std::map<std::pair<double, double>, double> ma, mb;
  for (const auto& o : a.obstacles())
    if (inter.contains(o.x, o.y)) ma[{o.x[0], o.y}] = o.strength;
  for (const auto& o : b.obstacles())
    if (inter.contains(o.x, o.y)) mb[{o.x[0], o.y}] = o.strength;
  EXPECT_FALSE(ma.empty());
  EXPECT_EQ(ma, mb);
}

TEST(Sampling, IndependentOfThreadCount) {
  Window<2> w;
  w.lo = {0.0, 0.0};
  w.hi = {6.0, 5.0};
  w.y_lo = 0.5;
  w.y_hi = 4.0;
  ObstacleShape s(2, 0.2, 0.36);
  SamplingOptions one, eight;
  eight.threads = 8;
  auto a = sample_field<2>(w, 2.0, StrengthDistribution::exponential(1), s, 7, one);
  auto b = sample_field<2>(w, 2.0, StrengthDistribution::exponential(1), s, 7, eight);
  std::ostringstream sa, sb;
  write_field(sa, a);
  write_field(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(Sampling, RejectsWindowBelowSupportRadius) {
  EXPECT_THROW(sample_field<1>(window1(0, 1, 0.1, 2), 1.0, StrengthDistribution::constant(1), shape1(), 1),
               DepinError);
}

TEST(Sampling, ChiSquarePerUnitCell) {
  // 100 x 100 unit cells aligned with the RNG lattice
  const double lambda = 1.3;
  auto f = sample_field<1>(window1(0.0, 100.0, 1.0, 101.0), lambda, StrengthDistribution::constant(1), shape1(), 2024);
  std::vector<long> count(100 * 100, 0);
  for (const auto& o : f.obstacles()) {
    const long i = static_cast<long>(std::floor(o.x[0]));
    const long j = static_cast<long>(std::floor(o.y - 1.0));
    ++count[static_cast<std::size_t>(i * 100 + j)];
  }
  const int bins = 6;  // 0..4 and >= 5
  std::vector<double> obs(bins, 0.0), expct(bins, 0.0);
  for (long c : count) obs[static_cast<std::size_t>(std::min<long>(c, bins - 1))] += 1.0;
  double p = std::exp(-lambda), cum = 0.0;
  for (int k = 0; k < bins - 1; ++k) {
    expct[static_cast<std::size_t>(k)] = p * 1e4;
    cum += p;
    p *= lambda / (k + 1);
  }
  expct[bins - 1] = (1.0 - cum) * 1e4;
  double chi2 = 0.0;
  for (int k = 0; k < bins; ++k) chi2 += std::pow(obs[k] - expct[k], 2) / expct[k];
  boost::math::chi_squared dist(bins - 1);
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.99));
}

TEST(Eval, EmptyFieldIsZero) {
  ObstacleField<1> f(shape1(), StrengthDistribution::constant(1), 1.0, 0, window1(0, 4, 0.4, 4), false, {});
  EXPECT_EQ(f.eval({1.0}, 1.0), 0.0);
}

TEST(Eval, SingleObstacleAtCenter) {
  std::vector<Obstacle<1>> obs{{{2.0}, 1.5, 3.0}};
  ObstacleField<1> f(shape1(), StrengthDistribution::constant(3), 1.0, 0, window1(0, 4, 0.4, 4), false, obs);
  EXPECT_LE(f.eval({2.0}, 1.5), -3.0);
  EXPECT_DOUBLE_EQ(f.eval({2.0}, 1.5), 3.0 * shape1().eval<1>({0.0}, 0.0));
}

TEST(Eval, ZeroBelowTheAxisAndNonPositive) {
  auto f = sample_field<1>(window1(0, 20, 0.4, 10), 2.0, StrengthDistribution::exponential(0.5), shape1(), 3,
                           {true, 1.0, 1});
  for (int i = 0; i < 500; ++i) {
    const double x = 0.04 * i;
    EXPECT_EQ(f.eval({x}, -0.01 * i), 0.0);
    EXPECT_LE(f.eval({x}, 0.02 * i), 0.0);
  }
}

TEST(Eval, SupportLocality) {
  auto f = sample_field<1>(window1(0, 10, 0.4, 6), 3.0, StrengthDistribution::uniform(1, 2), shape1(), 9);
  const Vec<1> x{4.3};
  const double y = 2.7;
  std::vector<Obstacle<1>> near;
  for (const auto& o : f.obstacles())
    if (std::hypot(o.x[0] - x[0], o.y - y) <= shape1().r1()) near.push_back(o);
  ObstacleField<1> g(shape1(), f.distribution(), 3.0, 9, f.window(), false, near);
  EXPECT_DOUBLE_EQ(f.eval(x, y), g.eval(x, y));
}

TEST(Eval, PeriodicWrap) {
  std::vector<Obstacle<1>> obs{{{0.1}, 1.0, 1.0}};
  ObstacleField<1> f(shape1(), StrengthDistribution::constant(1), 1.0, 0, window1(0, 5, 0.4, 3), true, obs);
  EXPECT_DOUBLE_EQ(f.eval({4.95}, 1.0), shape1().eval<1>({-0.15}, 0.0));
}

TEST(Eval, CompletenessFlag) {
  ObstacleField<1> f(shape1(), StrengthDistribution::constant(1), 1.0, 0, window1(0, 5, 0.4, 3), false, {});
  EXPECT_TRUE(f.eval_checked({2.5}, 1.5).complete);
  EXPECT_FALSE(f.eval_checked({0.1}, 1.5).complete);
  EXPECT_FALSE(f.eval_checked({2.5}, 2.9).complete);
  EXPECT_TRUE(f.eval_checked({0.1}, -1.0).complete);
}

TEST(MaxLocalSum, Bounds) {
  auto region = window1(0, 4, 0, 4);
  ObstacleField<1> empty(shape1(), StrengthDistribution::constant(1), 1.0, 0, window1(0, 4, 0.4, 4), false, {});
  EXPECT_EQ(eval_f_max_local_sum(empty, region, 0.01), 0.0);

  std::vector<Obstacle<1>> one{{{2.0}, 2.0, 1.0}};
  ObstacleField<1> f1(shape1(), StrengthDistribution::constant(1), 1.0, 0, window1(0, 4, 0.4, 4), false, one);
  const double m1 = eval_f_max_local_sum(f1, region, 0.01);
  EXPECT_LE(m1, shape1().max_abs() + 1e-12);
  EXPECT_GE(m1, 1.0);

  std::vector<Obstacle<1>> two{{{2.0}, 2.0, 1.0}, {{2.0}, 2.0, 2.0}};
  ObstacleField<1> f2(shape1(), StrengthDistribution::constant(1), 1.0, 0, window1(0, 4, 0.4, 4), false, two);
  // brute-force grid maximization oracle
  double oracle = 0.0;
  for (int i = 0; i <= 400; ++i)
    for (int j = 0; j <= 400; ++j) oracle = std::max(oracle, std::abs(f2.eval({0.01 * i}, 0.01 * j)));
  EXPECT_NEAR(eval_f_max_local_sum(f2, region, 0.01), oracle, 1e-12);
  EXPECT_NEAR(oracle, 3.0 * shape1().max_abs(), 1e-9);
}

TEST(Lattice, FourSites) {
  ObstacleShape s(1, 0.2, 0.3);
  // sites at x in {0, 1}, y in {0.5, 1.5}
  auto f = sample_lattice_field<1>(1.0, StrengthDistribution::uniform(1, 2), s, 5, window1(-0.5, 1.5, 0.3, 2.0));
  EXPECT_EQ(f.obstacles().size(), 4u);
  auto g = sample_lattice_field<1>(1.0, StrengthDistribution::uniform(1, 2), s, 5, window1(-0.5, 1.5, 0.3, 2.0));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(f.obstacles()[i].strength, g.obstacles()[i].strength);
  auto c = sample_lattice_field<1>(1.0, StrengthDistribution::constant(2.5), s, 5, window1(-0.5, 1.5, 0.3, 2.0));
  for (const auto& o : c.obstacles()) EXPECT_EQ(o.strength, 2.5);
  EXPECT_THROW(sample_lattice_field<1>(0.6, StrengthDistribution::constant(1), s, 5, window1(0, 2, 0.3, 2)),
               DepinError);
}

TEST(Serialization, RoundTrip) {
  auto f = sample_field<1>(window1(0, 6, 0.4, 5), 2.0, StrengthDistribution::exponential(0.7), shape1(), 11,
                           {true, 1.0, 1});
  std::stringstream ss;
  write_field(ss, f);
  auto g = read_field<1>(ss);
  std::ostringstream a, b;
  write_field(a, f);
  write_field(b, g);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_TRUE(g.periodic());
}
