#pragma once

#include "gaitforge/charmodel.hpp"
#include "gaitforge/spatial.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

namespace gaitforge {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Generalized state. For a free root, q = (x, y, z, rotation vector, joints...)
/// and qd = (world linear velocity of the root origin, world angular velocity,
/// joint rates...), so qd is not the time derivative of the rotation vector.
struct SimState {
  Eigen::VectorXd q;
  Eigen::VectorXd qd;
  double t = 0.0;
  std::vector<int> contacts;  // one flag per end-effector
};

struct ExternalForce {
  int link = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();  // link frame, m
  Eigen::Vector3d force = Eigen::Vector3d::Zero();  // world frame, N
};

struct SimOptions {
  Eigen::Vector3d gravity{0.0, -9.81, 0.0};
  bool ground = true;
  bool joint_limits = true;
  double friction = 1.0;
  double restitution = 0.0;
  double restitution_threshold = 0.5;  // m/s, approach speed below which e = 0
  double baumgarte = 0.2;              // fraction of penetration removed per step
  double max_correction_speed = 1.0;   // m/s (rad/s for joint limits)
  double penetration_slop = 1e-3;      // m
  double contact_margin = 0.02;        // speculative contact distance, m
  double contact_tolerance = 1e-4;     // flag threshold on y, m
  int pgs_iterations = 30;
  double divergence_limit = 1e6;
};

/// World-frame kinematic quantities of every link.
struct Kinematics {
  std::vector<Eigen::Matrix3d> rotation;     // link frame -> world
  std::vector<Eigen::Vector3d> origin;       // link frame origin, world
  std::vector<Eigen::Vector3d> com;          // link COM, world
  std::vector<Matrix6d> inertia;             // spatial inertia, world
  Eigen::Matrix<double, 6, Eigen::Dynamic> motion;  // per-DOF motion subspace columns
  std::vector<Vector6d> velocity;            // filled when qd is supplied
};

Kinematics forward_kinematics(const CharacterModel& model, const Eigen::VectorXd& q);
Kinematics forward_kinematics(const CharacterModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd);

/// Joint-space inertia matrix via the composite-rigid-body algorithm.
Eigen::MatrixXd mass_matrix(const CharacterModel& model, const Eigen::VectorXd& q);

/// Recursive Newton-Euler inverse dynamics: generalized forces needed to
/// realize qdd under gravity and the given external forces.
Eigen::VectorXd inverse_dynamics(const CharacterModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                 const Eigen::VectorXd& qdd, const std::vector<ExternalForce>& ext = {},
                                 const Eigen::Vector3d& gravity = Eigen::Vector3d(0.0, -9.81, 0.0));

/// Solves M(q) qdd = tau + J_ext^T f_ext - C(q, qd). Contacts are not included.
Eigen::VectorXd forward_dynamics(const CharacterModel& model, const SimState& state, const Eigen::VectorXd& tau,
                                 const std::vector<ExternalForce>& ext = {}, const SimOptions& options = {});

struct ContactPoint {
  int link = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();  // world, on the ground-facing surface
  double gap = 0.0;                                  // signed distance to the plane, m
};

struct ContactImpulse {
  int link = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  double normal = 0.0;
  Eigen::Vector2d tangent = Eigen::Vector2d::Zero();  // along world X and Z
};

struct StepInfo {
  std::vector<ContactImpulse> contacts;
  int limit_rows = 0;
};

struct ContactSet {
  std::vector<ContactPoint> points;  // every shape sphere within `margin` of the plane
  std::vector<int> flags;            // per end-effector
};

ContactSet detect_contacts(const CharacterModel& model, const SimState& state, const SimOptions& options = {},
                           double margin = 0.0);
std::vector<int> contact_flags(const CharacterModel& model, const Kinematics& kin, const SimOptions& options);

/// Semi-implicit Euler step with velocity-level contact and joint-limit
/// impulses. Throws NumericalError on a failed factorization or divergence.
SimState step(const CharacterModel& model, const SimState& state, const Eigen::VectorXd& tau,
              const std::vector<ExternalForce>& ext, double dt, const SimOptions& options = {},
              StepInfo* info = nullptr);

Eigen::Vector3d com(const CharacterModel& model, const SimState& state);
Eigen::Vector3d com_velocity(const CharacterModel& model, const SimState& state);
Eigen::Vector3d com(const CharacterModel& model, const Kinematics& kin);
Eigen::Vector3d com_velocity(const CharacterModel& model, const Kinematics& kin);

double total_energy(const CharacterModel& model, const SimState& state,
                    const Eigen::Vector3d& gravity = Eigen::Vector3d(0.0, -9.81, 0.0));

/// Translational block of M(q) for the root DOFs. With world-frame root
/// velocities this is total_mass * I for every q.
Eigen::Matrix3d root_translational_inertia(const CharacterModel& model);

/// Integrates positions by qd over dt, updating the root rotation on SO(3).
Eigen::VectorXd integrate_positions(const CharacterModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                    double dt);

}  // namespace gaitforge
