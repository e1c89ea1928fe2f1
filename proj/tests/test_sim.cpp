#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "depin/obstacle_field.hpp"
#include "depin/sim.hpp"
#include "oracles.hpp"

using namespace depin;

namespace {

Window<1> torus1(double side, double y_lo, double y_hi) {
  Window<1> w;
  w.lo = {0.0};
  w.hi = {side};
  w.y_lo = y_lo;
  w.y_hi = y_hi;
  return w;
}

std::shared_ptr<const ObstacleField<1>> random_field1(double side, std::uint64_t seed, double lambda = 1.0,
                                                     double y_hi = 12.0) {
  ObstacleShape shape(1, 0.25, 0.4);
  return std::make_shared<const ObstacleField<1>>(sample_field<1>(
      torus1(side, 0.4, y_hi), lambda, StrengthDistribution::constant(3.0), shape, seed, {true, 1.0, 1}));
}

template <int Dim>
double amplitude_of_mode(const Simulator<Dim>& sim, double k) {
  // projection on sin(k x) for n = 1, sin(k x0) for n = 2
  double s = 0.0;
  for (long i = 0; i < sim.grid().size(); ++i) s += sim.u()[static_cast<std::size_t>(i)] * std::sin(k * sim.grid().position(i)[0]);
  return 2.0 * s / static_cast<double>(sim.grid().size());
}

}  // namespace

TEST(Sim, EquilibriumUnchanged) {
  for (auto m : {Model::qew, Model::mcf}) {
    SimConfig c;
    c.model = m;
    Simulator<1> s1(Grid<1>(64, 10.0), nullptr, c);
    std::fill(s1.u().begin(), s1.u().end(), 2.5);
    for (int k = 0; k < 50; ++k) s1.step();
    for (double v : s1.u()) EXPECT_EQ(v, 2.5);
    Simulator<2> s2(Grid<2>(16, 10.0), nullptr, c);
    std::fill(s2.u().begin(), s2.u().end(), -1.0);
    for (int k = 0; k < 20; ++k) s2.step();
    for (double v : s2.u()) EXPECT_EQ(v, -1.0);
  }
}

TEST(Sim, UniformGrowth) {
  for (auto m : {Model::qew, Model::mcf}) {
    SimConfig c;
    c.model = m;
    c.F = 1.0;
    Simulator<2> s(Grid<2>(16, 4.0), nullptr, c);
    double expect = 0.0;
    for (int k = 0; k < 30; ++k) {
      const auto info = s.step();
      expect += info.dt;
      for (double v : s.u()) EXPECT_EQ(v, expect);
    }
  }
}

TEST(Sim, HeatModeDecay) {
  const int N = 128;
  const double L = 10.0, k = 2.0 * M_PI / L;
  SimConfig c;
  Simulator<1> s(Grid<1>(N, L), nullptr, c);
  for (long i = 0; i < N; ++i) s.u()[static_cast<std::size_t>(i)] = std::sin(k * s.grid().position(i)[0]);
  const double dt = s.stable_dt();
  double factor = 1.0;
  for (int step = 0; step < 2000; ++step) {
    s.step(dt);
    factor *= oracle::heat_step_factor(1, N, s.grid().dx(), dt);
  }
  const double a = amplitude_of_mode(s, k);
  EXPECT_NEAR(a, factor, 1e-12);
  EXPECT_NEAR(a / std::exp(-k * k * s.time()), 1.0, 0.01);
}

TEST(Sim, McfLinearizedDecay) {
  const double L = 10.0, k = 2.0 * M_PI / L;
  {
    SimConfig c;
    c.model = Model::mcf;
    Simulator<1> s(Grid<1>(128, L), nullptr, c);
    for (long i = 0; i < 128; ++i) s.u()[static_cast<std::size_t>(i)] = 1e-3 * std::sin(k * s.grid().position(i)[0]);
    StopSpec sp;
    sp.T_max = 2.0;
    sp.v_tol = 1e-30;
    s.run_until(sp);
    EXPECT_NEAR(amplitude_of_mode(s, k) / 1e-3 / std::exp(-k * k * s.time()), 1.0, 0.05);
  }
  {
    // kappa carries a 1/n: the n = 2 linearization is u_t = Lap u / 2
    SimConfig c;
    c.model = Model::mcf;
    Simulator<2> s(Grid<2>(32, L), nullptr, c);
    for (long i = 0; i < s.grid().size(); ++i)
      s.u()[static_cast<std::size_t>(i)] = 1e-3 * std::sin(k * s.grid().position(i)[0]);
    StopSpec sp;
    sp.T_max = 2.0;
    sp.v_tol = 1e-30;
    s.run_until(sp);
    EXPECT_NEAR(amplitude_of_mode(s, k) / 1e-3 / std::exp(-0.5 * k * k * s.time()), 1.0, 0.05);
  }
}

TEST(Sim, RejectsUnstableStep) {
  SimConfig c;
  Simulator<1> s(Grid<1>(100, 10.0), nullptr, c);
  EXPECT_THROW(s.step(2.0 * s.stable_dt()), DepinError);
  auto field = random_field1(20.0, 3);
  Simulator<1> sf(Grid<1>(200, 20.0), field, c);
  EXPECT_LT(sf.stable_dt(), 0.9 / (2.0 / (0.1 * 0.1)));
  EXPECT_THROW(Simulator<1>(Grid<1>(200, 19.0), field, c), DepinError);
}

TEST(Sim, LocalStrengthBoundCoversEveryPoint) {
  auto field = random_field1(20.0, 11, 3.0);
  const double bound = field->max_local_strength_sum();
  const double r1 = field->shape().r1();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> X(0.0, 20.0), Y(0.0, 12.0);
  double seen = 0.0;
  for (int t = 0; t < 20000; ++t) {
    const double x = X(rng), y = Y(rng);
    double s = 0.0;
    for (const auto& ob : field->obstacles()) {
      const double dx = field->offset(Vec<1>{x}, ob)[0], dy = y - ob.y;
      if (dx * dx + dy * dy < r1 * r1) s += ob.strength;
    }
    seen = std::max(seen, s);
  }
  EXPECT_GE(bound, seen);
  EXPECT_GT(seen, 0.0);
}

TEST(Run, FreeEscape) {
  SimConfig c;
  c.F = 0.5;
  Simulator<1> s(Grid<1>(64, 8.0), nullptr, c);
  StopSpec sp;
  sp.H_esc = 1.0;
  auto r = s.run_until(sp);
  EXPECT_EQ(r.outcome, Outcome::Escaped);
  EXPECT_NEAR(r.t_end, 2.0, 2.0 * r.dt_last);
}

TEST(Run, ZeroForceFromZeroIsPinned) {
  auto field = random_field1(16.0, 5);
  SimConfig c;
  Simulator<1> s(Grid<1>(256, 16.0), field, c);
  auto r = s.run_until({});
  EXPECT_EQ(r.outcome, Outcome::Pinned);
  EXPECT_EQ(r.steps, 1);
}

TEST(Run, EscapeAboveFieldBound) {
  auto field = random_field1(16.0, 6);
  Window<1> region = torus1(16.0, 0.0, 12.0);
  const double M = eval_f_max_local_sum(*field, region, 0.01);
  SimConfig c;
  c.F = M + 1.0;
  Simulator<1> s(Grid<1>(256, 16.0), field, c);
  auto r = s.run_until({});
  EXPECT_EQ(r.outcome, Outcome::Escaped);
  EXPECT_GE(s.mean() / r.t_end, (c.F - M) * 0.95);
}

TEST(Run, McfGradientCapAborts) {
  SimConfig c;
  c.model = Model::mcf;
  c.gradient_cap = 1.0;
  Simulator<1> s(Grid<1>(64, 8.0), nullptr, c);
  for (long i = 0; i < 64; ++i) s.u()[static_cast<std::size_t>(i)] = 2.0 * std::sin(2 * M_PI * i / 64.0);
  auto r = s.run_until({});
  EXPECT_EQ(r.outcome, Outcome::Aborted);
  EXPECT_NE(r.note.find("gradient"), std::string::npos);
}

TEST(Run, TraceAndSnapshotFormat) {
  SimConfig c;
  c.F = 1.0;
  Simulator<1> s(Grid<1>(4, 1.0), nullptr, c);
  StopSpec sp;
  sp.T_max = 0.5;
  auto r = s.run_until(sp);
  EXPECT_EQ(r.outcome, Outcome::Timeout);
  EXPECT_NEAR(r.t_end, 0.5, 1e-12);
  std::ostringstream os;
  write_trace_csv(os, r.trace);
  EXPECT_EQ(os.str().substr(0, 45), "t,mean_u,max_u,min_u,max_step_update,max_grad");
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_GT(r.trace[i].t, r.trace[i - 1].t);
  std::ostringstream ss;
  write_snapshot(ss, s);
  const std::string snap = ss.str();
  EXPECT_EQ(std::count(snap.begin(), snap.end(), '\n'), 5);
}

TEST(Comparison, RandomOrderedPairsFreeAndField) {
  // Rough data for QEW; smooth data for MCF, whose central-difference scheme is
  // monotone only while dx |u_xx| |u_x| stays below 1 + |u_x|^2.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto field = random_field1(16.0, 7, 1.5);
  for (int t = 0; t < 40; ++t) {
    SimConfig c;
    const bool mcf = t % 2 == 1;
    c.model = mcf ? Model::mcf : Model::qew;
    c.F = 0.5 * U(rng);
    Simulator<1> lo(Grid<1>(128, 16.0), t % 4 < 2 ? nullptr : field, c);
    Simulator<1> hi(Grid<1>(128, 16.0), t % 4 < 2 ? nullptr : field, c);
    std::array<double, 6> a{}, ph{};
    for (int m = 0; m < 6; ++m) {
      a[static_cast<std::size_t>(m)] = 0.15 * U(rng);
      ph[static_cast<std::size_t>(m)] = 2 * M_PI * U(rng);
    }
    for (std::size_t i = 0; i < 128; ++i) {
      const double x = 2 * M_PI * static_cast<double>(i) / 128.0;
      if (mcf) {
        lo.u()[i] = 0.3 + a[0] * std::sin(x + ph[0]) + a[1] * std::sin(2 * x + ph[1]) + a[2] * std::sin(3 * x + ph[2]);
        hi.u()[i] = lo.u()[i] + 0.2 + 0.5 * a[3] * std::sin(x + ph[3]) + 0.5 * a[4] * std::sin(2 * x + ph[4]);
      } else {
        lo.u()[i] = 0.5 * U(rng);
        hi.u()[i] = lo.u()[i] + 0.3 * U(rng);
      }
    }
    auto r = comparison_check(lo, hi, 200);
    EXPECT_TRUE(r.preserved) << "trial " << t << " gap " << r.worst_gap;
  }
}

TEST(Comparison, IdenticalStates) {
  SimConfig c;
  Simulator<1> a(Grid<1>(32, 4.0), nullptr, c), b(Grid<1>(32, 4.0), nullptr, c);
  EXPECT_TRUE(comparison_check(a, b, 10).preserved);
  b.u()[3] = -1e-9;
  EXPECT_FALSE(comparison_check(a, b, 1).preserved);
}

TEST(Monotone, FreeAndFieldRuns) {
  SimConfig c;
  c.F = 0.3;
  Simulator<1> s(Grid<1>(64, 8.0), nullptr, c);
  StopSpec sp;
  sp.T_max = 1.0;
  EXPECT_TRUE(monotone_check(s.run_until(sp), 0.0));

  auto field = random_field1(16.0, 8);
  c.F = 0.5;
  Simulator<1> f(Grid<1>(256, 16.0), field, c);
  sp.T_max = 5.0;
  EXPECT_TRUE(monotone_check(f.run_until(sp), 1e-12));
}

TEST(Monotone, ObstacleBelowZeroIsANegativeControl) {
  ObstacleShape shape(1, 0.25, 0.4);
  std::vector<Obstacle<1>> obs{{{4.0}, -0.1, 5.0}};
  auto field = std::make_shared<const ObstacleField<1>>(shape, StrengthDistribution::constant(5.0), 1.0, 0,
                                                         torus1(8.0, -1.0, 4.0), true, obs);
  SimConfig c;
  c.F = 0.1;
  Simulator<1> s(Grid<1>(128, 8.0), field, c);
  StopSpec sp;
  sp.T_max = 1.0;
  EXPECT_FALSE(monotone_check(s.run_until(sp), 1e-12));
}

TEST(Clamp, OneSidedUpdates) {
  SimConfig c;
  c.F = -1.0;
  c.clamp = Clamp::nonnegative;
  Simulator<1> s(Grid<1>(32, 4.0), nullptr, c);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(s.step().max_update, 0.0);
  c.F = 1.0;
  c.clamp = Clamp::nonpositive;
  Simulator<1> t(Grid<1>(32, 4.0), nullptr, c);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(t.step().max_update, 0.0);
}

TEST(Periodization, TranslationInvariance) {
  const int N = 256;
  const double L = 16.0, dx = L / N;
  const int shift = 37;
  auto field = random_field1(L, 12);
  std::vector<Obstacle<1>> moved = field->obstacles();
  for (auto& o : moved) o.x[0] = wrap(o.x[0] + shift * dx, L);
  auto field2 = std::make_shared<const ObstacleField<1>>(field->shape(), field->distribution(), field->lambda(),
                                                          field->seed(), field->window(), true, moved);
  // a full period shift gives back the same field
  std::vector<Obstacle<1>> full = field->obstacles();
  for (auto& o : full) o.x[0] += L;
  auto field3 = std::make_shared<const ObstacleField<1>>(field->shape(), field->distribution(), field->lambda(),
                                                          field->seed(), field->window(), true, full);
  SimConfig c;
  c.F = 0.4;
  Simulator<1> a(Grid<1>(N, L), field, c), b(Grid<1>(N, L), field2, c), p(Grid<1>(N, L), field3, c);
  for (long i = 0; i < N; ++i) {
    const double u0 = 0.1 * std::sin(2 * M_PI * i / N) + 0.05;
    a.u()[static_cast<std::size_t>(i)] = u0;
    p.u()[static_cast<std::size_t>(i)] = u0;
    b.u()[static_cast<std::size_t>(floor_mod(i + shift, N))] = u0;
  }
  const double dt = std::min(a.stable_dt(), b.stable_dt());
  for (int k = 0; k < 3000; ++k) {
    a.step(dt);
    b.step(dt);
    p.step(dt);
  }
  for (long i = 0; i < N; ++i) {
    EXPECT_NEAR(b.u()[static_cast<std::size_t>(floor_mod(i + shift, N))], a.u()[static_cast<std::size_t>(i)], 1e-10);
    EXPECT_NEAR(p.u()[static_cast<std::size_t>(i)], a.u()[static_cast<std::size_t>(i)], 1e-10);
  }
}

TEST(Convergence, SecondOrderInSpace) {
  // Nonlinear flow from smooth data; the mean is not conserved.
  const double L = 4.0;
  auto run = [&](int N) {
    SimConfig c;
    c.model = Model::mcf;
    c.F = 0.5;
    c.cfl = 0.5;
    Simulator<1> s(Grid<1>(N, L), nullptr, c);
    for (long i = 0; i < N; ++i) s.u()[static_cast<std::size_t>(i)] = 0.4 * std::sin(2 * M_PI * s.grid().position(i)[0] / L);
    StopSpec sp;
    sp.T_max = 0.2;
    sp.v_tol = 1e-30;
    s.run_until(sp);
    return s.mean();
  };
  const double m1 = run(32), m2 = run(64), m3 = run(128);
  const double slope = std::log2(std::abs(m1 - m2) / std::abs(m2 - m3));
  EXPECT_GE(slope, 1.8) << m1 << " " << m2 << " " << m3;
}
