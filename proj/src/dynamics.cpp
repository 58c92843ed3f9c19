#include "gaitforge/dynamics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace gaitforge {

namespace {

int parent_of(const CharacterModel& model, int link) { return model.joints[link].parent_link; }

Vector6d unit_motion(int k, const Eigen::Vector3d& w, const Eigen::Vector3d& o, bool angular) {
  Vector6d s = Vector6d::Zero();
  if (angular) {
    s.head<3>() = w;
    s.tail<3>() = o.cross(w);
  } else {
    s.tail<3>()[k] = 1.0;
  }
  return s;
}

void fill_velocities(const CharacterModel& model, Kinematics& kin, const Eigen::VectorXd& qd) {
  const auto nl = model.links.size();
  kin.velocity.assign(nl, Vector6d::Zero());
  for (std::size_t i = 0; i < nl; ++i) {
    const Joint& joint = model.joints[i];
    Vector6d v = joint.parent_link >= 0 ? kin.velocity[joint.parent_link] : Vector6d::Zero();
    for (int k = 0; k < joint.dof_count(); ++k) {
      const int d = joint.dof_offset + k;
      v += kin.motion.col(d) * qd[d];
    }
    kin.velocity[i] = v;
  }
}

/// RNEA over precomputed kinematics; `gravity` enters as a base acceleration.
Eigen::VectorXd rnea(const CharacterModel& model, const Kinematics& kin, const Eigen::VectorXd& qd,
                     const Eigen::VectorXd* qdd, const std::vector<ExternalForce>& ext,
                     const Eigen::Vector3d& gravity) {
  const auto nl = model.links.size();
  std::vector<Vector6d> vel(nl), acc(nl), force(nl);
  Vector6d base_acc = Vector6d::Zero();
  base_acc.tail<3>() = -gravity;

  for (std::size_t i = 0; i < nl; ++i) {
    const Joint& joint = model.joints[i];
    Vector6d v = joint.parent_link >= 0 ? vel[joint.parent_link] : Vector6d::Zero();
    Vector6d a = joint.parent_link >= 0 ? acc[joint.parent_link] : base_acc;
    if (joint.kind == JointKind::kFree6) {
      const int o = joint.dof_offset;
      for (int k = 0; k < 6; ++k) {
        v += kin.motion.col(o + k) * qd[o + k];
        if (qdd) a += kin.motion.col(o + k) * (*qdd)[o + k];
      }
      const Eigen::Vector3d lin = qd.segment<3>(o), ang = qd.segment<3>(o + 3);
      a.tail<3>() += lin.cross(ang);
    } else {
      for (int k = 0; k < joint.dof_count(); ++k) {
        const int d = joint.dof_offset + k;
        const auto s = kin.motion.col(d);
        a += cross_motion(v, s) * qd[d];
        if (qdd) a += s * (*qdd)[d];
        v += s * qd[d];
      }
    }
    vel[i] = v;
    acc[i] = a;
    const Vector6d h = kin.inertia[i] * v;
    force[i] = kin.inertia[i] * a + cross_force(v, h);
  }

  for (const auto& e : ext) {
    if (e.link < 0 || e.link >= static_cast<int>(nl)) throw std::out_of_range("external force link out of range");
    const Eigen::Vector3d x = kin.origin[e.link] + kin.rotation[e.link] * e.point;
    Vector6d f;
    f.head<3>() = x.cross(e.force);
    f.tail<3>() = e.force;
    force[e.link] -= f;
  }

  Eigen::VectorXd tau = Eigen::VectorXd::Zero(model.dof_count());
  for (int i = static_cast<int>(nl) - 1; i >= 0; --i) {
    const Joint& joint = model.joints[i];
    for (int k = 0; k < joint.dof_count(); ++k) {
      const int d = joint.dof_offset + k;
      tau[d] = kin.motion.col(d).dot(force[i]);
    }
    if (joint.parent_link >= 0) force[joint.parent_link] += force[i];
  }
  return tau;
}

Eigen::MatrixXd crba(const CharacterModel& model, const Kinematics& kin) {
  const int nl = static_cast<int>(model.links.size());
  std::vector<Matrix6d> composite = kin.inertia;
  for (int i = nl - 1; i > 0; --i) {
    const int p = parent_of(model, i);
    if (p >= 0) composite[p] += composite[i];
  }
  const int n = model.dof_count();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < nl; ++i) {
    const Joint& joint = model.joints[i];
    for (int k = 0; k < joint.dof_count(); ++k) {
      const int dk = joint.dof_offset + k;
      const Vector6d f = composite[i] * kin.motion.col(dk);
      for (int l = 0; l <= k; ++l) {
        const int dl = joint.dof_offset + l;
        m(dl, dk) = m(dk, dl) = kin.motion.col(dl).dot(f);
      }
      for (int j = joint.parent_link; j >= 0; j = parent_of(model, j)) {
        const Joint& anc = model.joints[j];
        for (int l = 0; l < anc.dof_count(); ++l) {
          const int dl = anc.dof_offset + l;
          m(dl, dk) = m(dk, dl) = kin.motion.col(dl).dot(f);
        }
      }
    }
  }
  return m;
}

/// World-frame point Jacobian (3 x n) of a point fixed to `link`.
Eigen::Matrix<double, 3, Eigen::Dynamic> point_jacobian(const CharacterModel& model, const Kinematics& kin, int link,
                                                        const Eigen::Vector3d& x) {
  Eigen::Matrix<double, 3, Eigen::Dynamic> jac = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, model.dof_count());
  for (int j = link; j >= 0; j = parent_of(model, j)) {
    const Joint& joint = model.joints[j];
    for (int k = 0; k < joint.dof_count(); ++k) {
      const int d = joint.dof_offset + k;
      const auto s = kin.motion.col(d);
      jac.col(d) = s.tail<3>() + s.head<3>().cross(x);
    }
  }
  return jac;
}

template <typename Fn>
void for_each_shape_sphere(const CharacterModel& model, const Kinematics& kin, Fn&& fn) {
  for (std::size_t i = 0; i < model.links.size(); ++i) {
    for (const Shape& s : model.links[i].shapes) {
      const Eigen::Vector3d a = kin.origin[i] + kin.rotation[i] * s.from;
      fn(static_cast<int>(i), a, s.radius);
      if (s.type == Shape::Type::kCapsule && s.from != s.to) {
        const Eigen::Vector3d b = kin.origin[i] + kin.rotation[i] * s.to;
        fn(static_cast<int>(i), b, s.radius);
      }
    }
  }
}

std::vector<ContactPoint> collect_contact_points(const CharacterModel& model, const Kinematics& kin, double margin) {
  std::vector<ContactPoint> out;
  for_each_shape_sphere(model, kin, [&](int link, const Eigen::Vector3d& c, double r) {
    const double gap = c.y() - r;
    if (gap < margin) out.push_back({link, Eigen::Vector3d(c.x(), c.y() - r, c.z()), gap});
  });
  return out;
}

struct ConstraintBlock {
  bool contact = false;
  int row = 0;
  Eigen::Vector3d key = Eigen::Vector3d::Zero();
  int seq = 0;
};

Eigen::VectorXd project_gauss_seidel(const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                                     const Eigen::VectorXd& target, const std::vector<ConstraintBlock>& blocks,
                                     const std::vector<int>& order, double mu, int iterations) {
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(b.size());
  auto velocity = [&](int r) { return b[r] + w.col(r).dot(lambda); };
  for (int it = 0; it < iterations; ++it) {
    for (int idx : order) {
      const ConstraintBlock& blk = blocks[idx];
      const int r = blk.row;
      if (w(r, r) <= 1e-12) continue;
      lambda[r] = std::max(0.0, lambda[r] + (target[r] - velocity(r)) / w(r, r));
      if (!blk.contact) continue;
      const double t1 = w(r + 1, r + 1) > 1e-12 ? lambda[r + 1] - velocity(r + 1) / w(r + 1, r + 1) : 0.0;
      const double t2 = w(r + 2, r + 2) > 1e-12 ? lambda[r + 2] - velocity(r + 2) / w(r + 2, r + 2) : 0.0;
      const double bound = mu * lambda[r];
      const double mag = std::hypot(t1, t2);
      const double scale = mag > bound && mag > 0.0 ? bound / mag : 1.0;
      lambda[r + 1] = t1 * scale;
      lambda[r + 2] = t2 * scale;
    }
  }
  return lambda;
}

}  // namespace

Kinematics forward_kinematics(const CharacterModel& model, const Eigen::VectorXd& q) {
  const auto nl = model.links.size();
  if (q.size() != model.dof_count()) {
    throw DimensionMismatch("q has " + std::to_string(q.size()) + " entries, model has " +
                            std::to_string(model.dof_count()) + " DOFs");
  }
  Kinematics kin;
  kin.rotation.resize(nl);
  kin.origin.resize(nl);
  kin.com.resize(nl);
  kin.inertia.resize(nl);
  kin.motion.setZero(6, model.dof_count());

  for (std::size_t i = 0; i < nl; ++i) {
    const Joint& joint = model.joints[i];
    const int off = joint.dof_offset;
    Eigen::Matrix3d rot;
    Eigen::Vector3d o;
    switch (joint.kind) {
      case JointKind::kFree6:
        o = q.segment<3>(off);
        rot = exp_so3(q.segment<3>(off + 3));
        for (int k = 0; k < 3; ++k) {
          kin.motion.col(off + k) = unit_motion(k, Eigen::Vector3d::Zero(), o, false);
          kin.motion.col(off + 3 + k) = unit_motion(k, Eigen::Vector3d::Unit(k), o, true);
        }
        break;
      case JointKind::kFixed:
        o = joint.origin;
        rot.setIdentity();
        break;
      default: {
        const int p = joint.parent_link;
        rot = kin.rotation[p];
        o = kin.origin[p] + kin.rotation[p] * joint.origin;
        for (int k = 0; k < joint.dof_count(); ++k) {
          const Eigen::Vector3d w = rot * joint.axes[k];
          kin.motion.col(off + k) = unit_motion(k, w, o, true);
          rot = rot * Eigen::AngleAxisd(q[off + k], joint.axes[k]).toRotationMatrix();
        }
      }
    }
    const Link& link = model.links[i];
    kin.rotation[i] = rot;
    kin.origin[i] = o;
    kin.com[i] = o + rot * link.com_offset;
    kin.inertia[i] = spatial_inertia(link.mass, kin.com[i], rot * link.inertia * rot.transpose());
  }
  return kin;
}

Kinematics forward_kinematics(const CharacterModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd) {
  if (qd.size() != model.dof_count()) throw DimensionMismatch("qd size does not match the model DOF count");
  Kinematics kin = forward_kinematics(model, q);
  fill_velocities(model, kin, qd);
  return kin;
}

Eigen::MatrixXd mass_matrix(const CharacterModel& model, const Eigen::VectorXd& q) {
  return crba(model, forward_kinematics(model, q));
}

Eigen::VectorXd inverse_dynamics(const CharacterModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                 const Eigen::VectorXd& qdd, const std::vector<ExternalForce>& ext,
                                 const Eigen::Vector3d& gravity) {
  const Kinematics kin = forward_kinematics(model, q);
  if (qd.size() != model.dof_count() || qdd.size() != model.dof_count()) {
    throw DimensionMismatch("inverse_dynamics: qd/qdd size mismatch");
  }
  return rnea(model, kin, qd, &qdd, ext, gravity);
}

Eigen::VectorXd forward_dynamics(const CharacterModel& model, const SimState& state, const Eigen::VectorXd& tau,
                                 const std::vector<ExternalForce>& ext, const SimOptions& options) {
  const Kinematics kin = forward_kinematics(model, state.q);
  if (tau.size() != model.dof_count()) throw DimensionMismatch("tau size does not match the model DOF count");
  const Eigen::VectorXd bias = rnea(model, kin, state.qd, nullptr, ext, options.gravity);
  const Eigen::LLT<Eigen::MatrixXd> llt(crba(model, kin));
  if (llt.info() != Eigen::Success) throw NumericalError("mass matrix factorization failed");
  return llt.solve(tau - bias);
}

std::vector<int> contact_flags(const CharacterModel& model, const Kinematics& kin, const SimOptions& options) {
  std::vector<int> flags(model.end_effectors.size(), 0);
  for (std::size_t e = 0; e < model.end_effectors.size(); ++e) {
    const int link = model.end_effectors[e];
    for (const Shape& s : model.links[link].shapes) {
      double low = (kin.origin[link] + kin.rotation[link] * s.from).y();
      if (s.type == Shape::Type::kCapsule) low = std::min(low, (kin.origin[link] + kin.rotation[link] * s.to).y());
      if (low - s.radius <= options.contact_tolerance) flags[e] = 1;
    }
  }
  return flags;
}

ContactSet detect_contacts(const CharacterModel& model, const SimState& state, const SimOptions& options,
                           double margin) {
  const Kinematics kin = forward_kinematics(model, state.q);
  ContactSet set;
  set.points = collect_contact_points(model, kin, std::max(margin, options.contact_tolerance));
  set.flags = contact_flags(model, kin, options);
  return set;
}

Eigen::VectorXd integrate_positions(const CharacterModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                    double dt) {
  Eigen::VectorXd out = q + dt * qd;
  if (model.floating_base()) {
    const int o = model.joints.front().dof_offset;
    const Eigen::Matrix3d rot = exp_so3(qd.segment<3>(o + 3) * dt) * exp_so3(q.segment<3>(o + 3));
    out.segment<3>(o + 3) = log_so3(rot);
  }
  return out;
}

SimState step(const CharacterModel& model, const SimState& state, const Eigen::VectorXd& tau,
              const std::vector<ExternalForce>& ext, double dt, const SimOptions& options, StepInfo* info) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  const int n = model.dof_count();
  if (tau.size() != n) throw DimensionMismatch("tau size does not match the model DOF count");

  const Kinematics kin = forward_kinematics(model, state.q);
  const Eigen::LLT<Eigen::MatrixXd> llt(crba(model, kin));
  if (llt.info() != Eigen::Success) throw NumericalError("mass matrix factorization failed");
  const Eigen::VectorXd bias = rnea(model, kin, state.qd, nullptr, ext, options.gravity);
  Eigen::VectorXd qd = state.qd + dt * llt.solve(tau - bias);

  // Constraint rows: contacts (normal, tangent X, tangent Z), then joint limits.
  std::vector<ConstraintBlock> blocks;
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> targets;
  std::vector<ContactPoint> points;
  if (options.ground) points = collect_contact_points(model, kin, options.contact_margin);
  for (const ContactPoint& cp : points) {
    const auto jac = point_jacobian(model, kin, cp.link, cp.point);
    const double approach = jac.row(1).dot(state.qd);
    double target;
    if (cp.gap > 0.0) {
      target = -cp.gap / dt;
    } else {
      target = std::min(options.baumgarte * std::max(-cp.gap - options.penetration_slop, 0.0) / dt,
                        options.max_correction_speed);
    }
    if (options.restitution > 0.0 && approach < -options.restitution_threshold) {
      target = std::max(target, -options.restitution * approach);
    }
    blocks.push_back({true, static_cast<int>(rows.size()), cp.point, static_cast<int>(blocks.size())});
    rows.push_back(jac.row(1));
    rows.push_back(jac.row(0));
    rows.push_back(jac.row(2));
    targets.insert(targets.end(), {target, 0.0, 0.0});
  }
  if (options.joint_limits) {
    const auto& lower = model.lower_limits();
    const auto& upper = model.upper_limits();
    for (int d = 0; d < n; ++d) {
      const int joint = model.dof_joint()[d];
      for (int side = 0; side < 2; ++side) {
        const double bound = side == 0 ? upper[d] : lower[d];
        if (!std::isfinite(bound)) continue;
        const double sgn = side == 0 ? -1.0 : 1.0;  // row velocity = sgn * qd[d]
        const double gap = sgn * (state.q[d] - bound);
        if (gap + dt * sgn * qd[d] >= 0.0 && gap >= 0.0) continue;
        const double target = gap > 0.0 ? -gap / dt
                                         : std::min(options.baumgarte * -gap / dt, options.max_correction_speed);
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
        row[d] = sgn;
        blocks.push_back({false, static_cast<int>(rows.size()), kin.origin[joint], static_cast<int>(blocks.size())});
        rows.push_back(row);
        targets.push_back(target);
      }
    }
  }

  if (info) {
    info->contacts.clear();
    info->limit_rows = 0;
  }
  if (!rows.empty()) {
    const int m = static_cast<int>(rows.size());
    Eigen::MatrixXd jac(m, n);
    for (int r = 0; r < m; ++r) jac.row(r) = rows[r];
    const Eigen::MatrixXd minv_jt = llt.solve(jac.transpose());
    const Eigen::MatrixXd w = jac * minv_jt;
    const Eigen::VectorXd b = jac * qd;
    const Eigen::VectorXd target = Eigen::Map<const Eigen::VectorXd>(targets.data(), m);

    // Sweep in world-X order and in reverse, then average. Mirrored states
    // see the reversed order, so the averaged impulses are mirror symmetric.
    std::vector<int> order(blocks.size());
    std::iota(order.begin(), order.end(), 0);
    // Keys are quantized to 1 um so that ulp-level differences between a state
    // and its mirror image cannot reorder the sweep. Within equal x the
    // secondary keys flip sign with the side, so the reversed sweep of the
    // mirrored state visits contacts in the mirrored order.
    std::vector<std::array<long long, 3>> keys(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const Eigen::Vector3d& k = blocks[i].key;
      const long long qx = std::llround(k.x() * 1e6);
      const long long side = qx > 0 ? 1 : (qx < 0 ? -1 : 0);
      keys[i] = {qx, side * std::llround(k.y() * 1e6), side * std::llround(k.z() * 1e6)};
    }
    std::sort(order.begin(), order.end(), [&](int a, int b2) {
      if (keys[a] != keys[b2]) return keys[a] < keys[b2];
      return blocks[a].seq < blocks[b2].seq;
    });
    const Eigen::VectorXd forward =
        project_gauss_seidel(w, b, target, blocks, order, options.friction, options.pgs_iterations);
    std::reverse(order.begin(), order.end());
    const Eigen::VectorXd backward =
        project_gauss_seidel(w, b, target, blocks, order, options.friction, options.pgs_iterations);
    const Eigen::VectorXd lambda = 0.5 * (forward + backward);
    qd += minv_jt * lambda;

    if (info) {
      for (const ConstraintBlock& blk : blocks) {
        if (!blk.contact) {
          ++info->limit_rows;
          continue;
        }
        const ContactPoint& cp = points[blk.seq];
        info->contacts.push_back(
            {cp.link, cp.point, lambda[blk.row], Eigen::Vector2d(lambda[blk.row + 1], lambda[blk.row + 2])});
      }
    }
  }

  if (!qd.allFinite() || qd.cwiseAbs().maxCoeff() > options.divergence_limit) {
    throw NumericalError("simulation diverged at t=" + std::to_string(state.t));
  }

  SimState next;
  next.q = integrate_positions(model, state.q, qd, dt);
  if (options.joint_limits) {
    const auto& lower = model.lower_limits();
    const auto& upper = model.upper_limits();
    for (int d : model.actuated_dofs()) {
      if (next.q[d] > upper[d]) {
        next.q[d] = upper[d];
        qd[d] = std::min(qd[d], 0.0);
      } else if (next.q[d] < lower[d]) {
        next.q[d] = lower[d];
        qd[d] = std::max(qd[d], 0.0);
      }
    }
  }
  next.qd = std::move(qd);
  next.t = state.t + dt;
  next.contacts = contact_flags(model, forward_kinematics(model, next.q), options);
  return next;
}

Eigen::Vector3d com(const CharacterModel& model, const Kinematics& kin) {
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < model.links.size(); ++i) acc += model.links[i].mass * kin.com[i];
  return acc / model.total_mass();
}

Eigen::Vector3d com_velocity(const CharacterModel& model, const Kinematics& kin) {
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < model.links.size(); ++i) {
    acc += model.links[i].mass * point_velocity(kin.velocity[i], kin.com[i]);
  }
  return acc / model.total_mass();
}

Eigen::Vector3d com(const CharacterModel& model, const SimState& state) {
  return com(model, forward_kinematics(model, state.q));
}

Eigen::Vector3d com_velocity(const CharacterModel& model, const SimState& state) {
  return com_velocity(model, forward_kinematics(model, state.q, state.qd));
}

double total_energy(const CharacterModel& model, const SimState& state, const Eigen::Vector3d& gravity) {
  const Kinematics kin = forward_kinematics(model, state.q);
  const double kinetic = 0.5 * state.qd.dot(crba(model, kin) * state.qd);
  double potential = 0.0;
  for (std::size_t i = 0; i < model.links.size(); ++i) potential -= model.links[i].mass * gravity.dot(kin.com[i]);
  return kinetic + potential;
}

Eigen::Matrix3d root_translational_inertia(const CharacterModel& model) {
  return model.total_mass() * Eigen::Matrix3d::Identity();
}

}  // namespace gaitforge
