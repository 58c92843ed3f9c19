#include "gaitforge/dynamics.hpp"
#include "test_models.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace gaitforge;

namespace {

const CharacterModel& biped() {
  static const CharacterModel m = load_character(builtin_biped9());
  return m;
}

Eigen::VectorXd uniform(int n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

SimState random_state(const CharacterModel& m, std::mt19937_64& rng) {
  SimState s;
  s.q = uniform(m.dof_count(), -0.8, 0.8, rng);
  s.qd = uniform(m.dof_count(), -2.0, 2.0, rng);
  if (m.floating_base()) s.q[1] += 1.5;
  return s;
}

SimState rest_state(const CharacterModel& m) {
  SimState s;
  s.q = m.reference_q;
  s.qd = Eigen::VectorXd::Zero(m.dof_count());
  return s;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace

TEST_CASE("mass matrix: free body translational block is m*I") {
  const CharacterModel m = gftest::free_body(3.5);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    const Eigen::MatrixXd M = mass_matrix(m, uniform(6, -2.0, 2.0, rng));
    CHECK((M.topLeftCorner(3, 3) - 3.5 * Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("mass matrix: symmetric, positive definite, and equal to RNEA unit columns") {
  const CharacterModel& m = biped();
  std::mt19937_64 rng(2);
  const int n = m.dof_count();
  for (int trial = 0; trial < 20; ++trial) {
    const SimState s = random_state(m, rng);
    const Eigen::MatrixXd M = mass_matrix(m, s.q);
    CHECK((M - M.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(Eigen::LLT<Eigen::MatrixXd>(M).info() == Eigen::Success);

    // Oracle: column j of M = ID(q, 0, e_j) - ID(q, 0, 0) with gravity removed.
    const Eigen::Vector3d no_gravity = Eigen::Vector3d::Zero();
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
      const Eigen::VectorXd col =
          inverse_dynamics(m, s.q, zero, Eigen::VectorXd::Unit(n, j), {}, no_gravity);
      REQUIRE(rel_err(M.col(j), col) < 1e-8);
    }
  }
  CHECK((root_translational_inertia(m) - mass_matrix(m, m.reference_q).topLeftCorner(3, 3)).norm() < 1e-10);
}

TEST_CASE("forward/inverse dynamics round trip on 100 random states") {
  const CharacterModel& m = biped();
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const SimState s = random_state(m, rng);
    Eigen::VectorXd tau = Eigen::VectorXd::Zero(m.dof_count());
    for (int d : m.actuated_dofs()) tau[d] = uniform(1, -50.0, 50.0, rng)[0];
    std::vector<ExternalForce> ext{{0, Eigen::Vector3d(0.01, 0.05, -0.02), uniform(3, -100.0, 100.0, rng)}};
    const Eigen::VectorXd qdd = forward_dynamics(m, s, tau, ext);
    // RNEA with the same external forces returns the applied joint torques.
    const Eigen::VectorXd back = inverse_dynamics(m, s.q, s.qd, qdd, ext);
    worst = std::max(worst, rel_err(back, tau));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("free fall under zero torque") {
  const CharacterModel m = gftest::free_body();
  SimState s = rest_state(m);
  s.q[1] = 3.0;
  s.qd.tail<3>() = Eigen::Vector3d(0.3, -0.2, 0.5);
  const Eigen::VectorXd qdd = forward_dynamics(m, s, Eigen::VectorXd::Zero(6));
  // The root origin is the body COM, so linear acceleration is pure gravity.
  CHECK((qdd.head<3>() - Eigen::Vector3d(0.0, -9.81, 0.0)).norm() < 1e-12);
}

TEST_CASE("pendulum gravity compensation gives zero acceleration") {
  const CharacterModel m = gftest::pendulum2();
  SimState s = rest_state(m);
  s.q << 0.4, -0.3, 0.2;
  const Eigen::VectorXd g = inverse_dynamics(m, s.q, s.qd, Eigen::VectorXd::Zero(3));
  CHECK(forward_dynamics(m, s, g).norm() < 1e-12);
}

TEST_CASE("uniform straight-line motion without gravity") {
  const CharacterModel m = gftest::free_body();
  SimOptions opt;
  opt.gravity.setZero();
  opt.ground = false;
  SimState s = rest_state(m);
  s.q[1] = 5.0;
  s.qd.head<3>() = Eigen::Vector3d(0.7, -0.1, 1.3);
  const Eigen::Vector3d x0 = s.q.head<3>();
  for (int i = 1; i <= 100; ++i) {
    s = step(m, s, Eigen::VectorXd::Zero(6), {}, 0.002, opt);
    const Eigen::Vector3d expect = x0 + 0.002 * i * Eigen::Vector3d(0.7, -0.1, 1.3);
    REQUIRE((s.q.head<3>() - expect).norm() < 1e-12 * i);
  }
}

TEST_CASE("time advances by exactly dt") {
  const CharacterModel m = gftest::free_body();
  SimState s = rest_state(m);
  s.q[1] = 1.0;
  const SimState next = step(m, s, Eigen::VectorXd::Zero(6), {}, 0.002);
  CHECK(next.t == 0.002);
}

TEST_CASE("energy audit: rest at height and speed at the bottom") {
  SUBCASE("point-like free body") {
    const CharacterModel m = gftest::free_body(2.0);
    SimState s = rest_state(m);
    s.q[1] = 1.5;
    CHECK(total_energy(m, s) == doctest::Approx(2.0 * 9.81 * 1.5).epsilon(1e-12));
    s.q[1] = 0.0;
    s.qd[2] = 3.0;
    CHECK(total_energy(m, s) == doctest::Approx(0.5 * 2.0 * 9.0).epsilon(1e-12));
  }
}

TEST_CASE("passive pendulum energy drift below 2% over 10 s at dt=1e-4") {
  const CharacterModel m = gftest::pendulum2();
  SimOptions opt;
  opt.ground = false;
  opt.joint_limits = false;
  SimState s = rest_state(m);
  s.q << 1.2, -0.6, 0.4;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  // Measure relative to the lowest configuration so |E(0)| is a meaningful scale.
  SimState bottom = rest_state(m);
  const double e_ref = total_energy(m, bottom);
  const double e0 = total_energy(m, s) - e_ref;
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    s = step(m, s, zero, {}, 1e-4, opt);
    if (i % 100 == 0) worst = std::max(worst, std::abs(total_energy(m, s) - e_ref - e0) / std::abs(e0));
  }
  CHECK(worst < 0.02);
}

TEST_CASE("sphere dropped from 0.5 m comes to rest with shallow penetration") {
  const CharacterModel m = gftest::free_body();
  SimState s = rest_state(m);
  s.q[1] = 0.5 + 0.1;  // sphere bottom at 0.5 m
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(6);
  // Analytic impact time for the bottom to reach the plane.
  const double t_impact = std::sqrt(2.0 * 0.5 / 9.81);
  double max_pen = 0.0;
  bool touched_before = false;
  for (int i = 0; i < 1500; ++i) {
    StepInfo info;
    s = step(m, s, zero, {}, 0.002, {}, &info);
    for (const auto& c : info.contacts) {
      REQUIRE(c.normal >= 0.0);
      REQUIRE(c.tangent.norm() <= 1.0 * c.normal + 1e-12);
    }
    if (s.contacts[0] && s.t < t_impact - 0.01) touched_before = true;
    max_pen = std::max(max_pen, 0.1 - s.q[1]);
  }
  CHECK_FALSE(touched_before);
  CHECK(s.contacts[0] == 1);
  CHECK(max_pen < 0.01);
  CHECK(std::abs(s.qd[1]) < 1e-3);
  CHECK(s.q[1] > 0.09);
}

TEST_CASE("friction cone on a sliding, spinning body") {
  const CharacterModel m = gftest::free_body();
  SimState s = rest_state(m);
  s.q[1] = 0.1;
  s.qd.head<3>() = Eigen::Vector3d(2.0, 0.0, -3.0);
  s.qd.tail<3>() = Eigen::Vector3d(5.0, 1.0, -4.0);
  int contact_steps = 0;
  for (int i = 0; i < 500; ++i) {
    StepInfo info;
    s = step(m, s, Eigen::VectorXd::Zero(6), {}, 0.002, {}, &info);
    for (const auto& c : info.contacts) {
      ++contact_steps;
      REQUIRE(c.normal >= 0.0);
      REQUIRE(c.tangent.norm() <= 1.0 * c.normal * (1.0 + 1e-12));
    }
  }
  CHECK(contact_steps > 100);
  // Friction decelerates the slide.
  CHECK(s.qd.head<3>().norm() < 2.0);
}

TEST_CASE("contact flags") {
  const CharacterModel& m = biped();
  SUBCASE("hovering") {
    SimState s = rest_state(m);
    s.q[1] += 1.1;
    CHECK(detect_contacts(m, s).flags == std::vector<int>{0, 0});
  }
  SUBCASE("standing") {
    CHECK(detect_contacts(m, rest_state(m)).flags == std::vector<int>{1, 1});
  }
  SUBCASE("single support against a geometric oracle") {
    SimState s = rest_state(m);
    s.q[m.actuated_dofs()[m.left_leg_dofs[0]]] = -0.5;  // lift the left leg
    const Kinematics kin = forward_kinematics(m, s.q);
    const auto flags = detect_contacts(m, s).flags;
    for (std::size_t e = 0; e < m.end_effectors.size(); ++e) {
      const int link = m.end_effectors[e];
      double low = 1e9;
      for (const Shape& sh : m.links[link].shapes) {
        for (const Eigen::Vector3d& p : {sh.from, sh.to}) {
          low = std::min(low, (kin.origin[link] + kin.rotation[link] * p).y() - sh.radius);
        }
      }
      CHECK(flags[e] == (low <= 1e-4 ? 1 : 0));
    }
    CHECK(flags[0] + flags[1] == 1);
  }
}

TEST_CASE("COM of simple layouts") {
  const CharacterModel m = gftest::free_body();
  SimState s = rest_state(m);
  s.q.head<3>() = Eigen::Vector3d(0.3, 1.0, -2.0);
  CHECK((com(m, s) - Eigen::Vector3d(0.3, 1.0, -2.0)).norm() < 1e-15);

  const CharacterModel two = load_character(R"({
    "links": [{"mass": 1.0, "inertia": [1, 1, 1, 0, 0, 0]},
              {"mass": 1.0, "inertia": [1, 1, 1, 0, 0, 0]}],
    "joints": [{"kind": "fixed", "parent_link": -1, "child_link": 0},
               {"kind": "revolute1", "parent_link": 0, "child_link": 1, "origin": [2, 0, 0],
                "axes": [[0, 1, 0]], "torque_limit": [1]}]
  })");
  SimState t = rest_state(two);
  CHECK(com(two, t).x() == doctest::Approx(1.0));
}

TEST_CASE("COM velocity matches a finite difference") {
  const CharacterModel& m = biped();
  std::mt19937_64 rng(5);
  SimOptions opt;
  opt.ground = false;
  opt.joint_limits = false;
  for (int trial = 0; trial < 10; ++trial) {
    SimState s = random_state(m, rng);
    s.q[1] += 3.0;
    const double h = 1e-6;
    const Eigen::VectorXd q1 = integrate_positions(m, s.q, s.qd, h);
    const Eigen::Vector3d fd = (com(m, SimState{q1, s.qd, 0.0, {}}) - com(m, s)) / h;
    const Eigen::Vector3d v = com_velocity(m, s);
    CHECK((fd - v).norm() / std::max(1e-3, v.norm()) < 1e-4);
  }
}

TEST_CASE("step is deterministic and throws on divergence") {
  const CharacterModel& m = biped();
  std::mt19937_64 rng(6);
  const SimState s = random_state(m, rng);
  Eigen::VectorXd tau = Eigen::VectorXd::Zero(m.dof_count());
  for (int d : m.actuated_dofs()) tau[d] = 10.0;
  const SimState a = step(m, s, tau, {}, 0.002);
  const SimState b = step(m, s, tau, {}, 0.002);
  CHECK(a.q == b.q);
  CHECK(a.qd == b.qd);

  SimState bad = rest_state(m);
  bad.qd[8] = 1e7;
  CHECK_THROWS_AS(step(m, bad, tau, {}, 0.002), NumericalError);
  bad.qd[8] = std::nan("");
  CHECK_THROWS_AS(step(m, bad, tau, {}, 0.002), NumericalError);
  CHECK_THROWS_AS(step(m, s, Eigen::VectorXd::Zero(2), {}, 0.002), DimensionMismatch);
}

TEST_CASE("joint limits hold after projection") {
  const CharacterModel& m = biped();
  SimState s = rest_state(m);
  s.q[1] += 0.5;
  Eigen::VectorXd tau = Eigen::VectorXd::Zero(m.dof_count());
  for (int i = 0; i < static_cast<int>(m.actuated_dofs().size()); ++i) {
    tau[m.actuated_dofs()[i]] = m.torque_limits()[i];
  }
  for (int i = 0; i < 200; ++i) {
    s = step(m, s, tau, {}, 0.002);
    for (int d : m.actuated_dofs()) {
      REQUIRE(s.q[d] <= m.upper_limits()[d]);
      REQUIRE(s.q[d] >= m.lower_limits()[d]);
    }
  }
}

TEST_CASE("biped stands on the ground without sinking") {
  const CharacterModel& m = biped();
  SimState s = rest_state(m);
  // Hold the reference pose with stiff joint PD so only contact matters.
  for (int i = 0; i < 500; ++i) {
    Eigen::VectorXd tau = Eigen::VectorXd::Zero(m.dof_count());
    for (int d : m.actuated_dofs()) tau[d] = -200.0 * (s.q[d] - m.reference_q[d]) - 2.0 * s.qd[d];
    StepInfo info;
    s = step(m, s, tau, {}, 0.002, {}, &info);
    for (const auto& c : info.contacts) REQUIRE(c.tangent.norm() <= c.normal * (1.0 + 1e-12));
  }
  CHECK(std::abs(s.q[1] - m.reference_q[1]) < 0.02);
}
