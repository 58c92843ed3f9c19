#include "gaitforge/assistant.hpp"
#include "test_models.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace gaitforge;

namespace {

SimOptions floating() {
  SimOptions opt;
  opt.gravity.setZero();
  opt.ground = false;
  return opt;
}

SimState at(const CharacterModel& m, double x, double vx) {
  SimState s;
  s.q = Eigen::VectorXd::Zero(m.dof_count());
  s.qd = Eigen::VectorXd::Zero(m.dof_count());
  s.q[0] = x;
  s.qd[0] = vx;
  return s;
}

enum class Controller { kSpd, kExplicit };

// Runs the test mass laterally under the balance controller. Returns the
// largest |x| seen after the start and the final |x|; diverged = true if the
// simulation blew up.
struct Outcome {
  double peak = 0.0;
  double final = 0.0;
  bool diverged = false;
};

Outcome run_lateral(double kp, int steps, Controller c) {
  const CharacterModel m = gftest::free_body(50.0);
  const SimOptions opt = floating();
  const double dt = 0.002;
  SimState s = at(m, 1.0, 0.0);
  Outcome out;
  try {
    for (int i = 0; i < steps; ++i) {
      ExternalForce f;
      if (c == Controller::kSpd) {
        f = spd_assist_force(m, s, {kp, 0.0}, 0.0, dt).force;
      } else {
        f.link = 0;
        f.force = Eigen::Vector3d(-kp * s.q[0] - kBalanceDampingRatio * kp * s.qd[0], 0.0, 0.0);
      }
      s = step(m, s, Eigen::VectorXd::Zero(6), {f}, dt, opt);
      out.peak = std::max(out.peak, std::abs(s.q[0]));
    }
  } catch (const NumericalError&) {
    out.diverged = true;
  }
  out.final = std::abs(s.q[0]);
  if (!std::isfinite(out.final) || out.final > 1e3) out.diverged = true;
  return out;
}

}  // namespace

TEST_CASE("origin of curriculum space gives zero force") {
  const CharacterModel m = load_character(builtin_biped9());
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 20; ++i) {
    SimState s;
    s.q = m.reference_q;
    s.qd = Eigen::VectorXd::Zero(m.dof_count());
    for (int d = 0; d < m.dof_count(); ++d) {
      s.q[d] += u(rng);
      s.qd[d] = u(rng);
    }
    CHECK(spd_assist_force(m, s, {0.0, 0.0}, 1.0, 0.002).force.force == Eigen::Vector3d::Zero());
  }
}

TEST_CASE("on-target state gives exactly zero force") {
  const CharacterModel m = load_character(builtin_biped9());
  SimState s;
  s.q = m.reference_q;
  s.qd = Eigen::VectorXd::Zero(m.dof_count());
  s.qd[2] = 1.0;  // forward speed equal to the target
  const auto r = spd_assist_force(m, s, {2000.0, 2000.0}, 1.0, 0.002);
  CHECK(r.force.force == Eigen::Vector3d::Zero());
  CHECK(r.force.link == m.assist_link);
}

TEST_CASE("force has no vertical component and pushes toward the targets") {
  const CharacterModel m = load_character(builtin_biped9());
  SimState s;
  s.q = m.reference_q;
  s.qd = Eigen::VectorXd::Zero(m.dof_count());
  s.q[0] = 0.05;
  s.qd[1] = -0.7;
  const auto r = spd_assist_force(m, s, {2000.0, 2000.0}, 1.0, 0.002);
  CHECK(r.force.force.y() == 0.0);
  CHECK(r.force.force.x() < 0.0);
  CHECK(r.force.force.z() > 0.0);
}

TEST_CASE("1-DOF SPD force matches the direct implicit solve") {
  const CharacterModel m = gftest::free_body(50.0);
  const double kp = 2000.0, kd = kBalanceDampingRatio * kp, dt = 0.002, mass = 50.0;
  for (double v : {0.0, 0.4, -1.3}) {
    const SimState s = at(m, 0.1, v);
    const double f = spd_assist_force(m, s, {kp, 0.0}, 0.0, dt).force.force.x();
    // Scalar oracle: f = -kp (x + dt v) - kd (v + dt f / m), solved for f.
    const double oracle = (-kp * (0.1 + dt * v) - kd * v) / (1.0 + dt * kd / mass);
    CHECK(std::abs(f - oracle) < 1e-6);
  }
}

TEST_CASE("SPD converges at the nominal gains") {
  const Outcome spd = run_lateral(2000.0, 10000, Controller::kSpd);
  CHECK_FALSE(spd.diverged);
  CHECK(spd.peak <= 1.0);
  CHECK(spd.final < 1e-3);
}

TEST_CASE("SPD stays stable at gains where explicit PD diverges") {
  const double kp = 2e6;
  const Outcome spd = run_lateral(kp, 10000, Controller::kSpd);
  const Outcome pd = run_lateral(kp, 10000, Controller::kExplicit);
  CHECK_FALSE(spd.diverged);
  CHECK(spd.peak <= 1.0);
  CHECK(spd.final < 1e-3);
  CHECK(pd.diverged);
}

TEST_CASE("propulsion acts along the forward axis toward the target speed") {
  const CharacterModel m = gftest::free_body(50.0);
  SimState s = at(m, 0.0, 0.0);
  const auto r = spd_assist_force(m, s, {0.0, 500.0}, 1.0, 0.002);
  const double oracle = 50.0 * 500.0 * 1.0 / (50.0 + 0.002 * 500.0);
  CHECK(r.force.force.z() == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(r.force.force.x() == 0.0);
}

TEST_CASE("assist force magnitude is clamped") {
  const CharacterModel m = gftest::free_body(50.0);
  const auto r = spd_assist_force(m, at(m, 100.0, 0.0), {1e9, 0.0}, 0.0, 0.002);
  CHECK(r.clamped);
  CHECK(r.force.force.norm() == doctest::Approx(kMaxAssistForce));
}

TEST_CASE("milestone schedule") {
  const LessonRange range = LessonRange::milestones({2000.0, 2000.0}, 25.0);
  CHECK(range.end == Lesson{125.0, 125.0});
  CHECK(milestone_strength(range, 1.0, 25.0, 3.0) == Lesson{2000.0, 2000.0});
  CHECK(milestone_strength(range, 4.0, 25.0, 3.0) == Lesson{500.0, 500.0});
  CHECK(milestone_strength(range, 7.0, 25.0, 3.0) == Lesson{125.0, 125.0});
  CHECK(milestone_strength(range, 100.0, 25.0, 3.0) == range.end);
  CHECK(milestone_strength(range, 3.0, 25.0, 3.0) == Lesson{500.0, 500.0});
  CHECK_THROWS(milestone_strength(range, -0.1, 25.0, 3.0));

  SUBCASE("non-increasing with breakpoints at multiples of p") {
    Lesson prev = milestone_strength(range, 0.0, 25.0, 3.0);
    for (int i = 1; i <= 1200; ++i) {
      const double t = i * 0.01;
      const Lesson x = milestone_strength(range, t, 25.0, 3.0);
      REQUIRE(x.kp <= prev.kp);
      const bool at_break = (i % 300 == 0) && i <= 600;
      REQUIRE((x.kp < prev.kp) == at_break);
      prev = x;
    }
  }
  SUBCASE("overlap: second milestone equals the next begin") {
    const Lesson next_begin = range.begin.scaled(0.25);
    CHECK(milestone_strength(range, 3.0, 25.0, 3.0) == next_begin);
  }
  SUBCASE("constant range never decays") {
    const LessonRange c = LessonRange::constant({300.0, 40.0});
    CHECK(milestone_strength(c, 8.0, 25.0, 3.0) == Lesson{300.0, 40.0});
  }
}
