#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gaitforge {

/// Axis convention used everywhere: +X frontal (character's left), +Y up,
/// +Z sagittal (forward). The ground is the plane y = 0.

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  enum class Type { kSphere, kCapsule };
  Type type = Type::kSphere;
  Eigen::Vector3d from = Eigen::Vector3d::Zero();  // sphere center / capsule end
  Eigen::Vector3d to = Eigen::Vector3d::Zero();    // capsule end (== from for spheres)
  double radius = 0.0;
};

struct Link {
  std::string name;
  double mass = 0.0;
  Eigen::Matrix3d inertia = Eigen::Matrix3d::Identity();  // about the COM, link frame
  Eigen::Vector3d com_offset = Eigen::Vector3d::Zero();
  std::vector<Shape> shapes;
};

/// kFixed is a 0-DOF root used by test rigs (pendulums); characters use kFree6.
enum class JointKind { kFixed, kFree6, kBall3, kUniversal2, kRevolute1 };

std::string_view to_string(JointKind kind);

/// Multi-DOF joints are chains of rotations about `axes`, applied in order and
/// expressed in the parent-side joint frame. The free root stores translation
/// (x, y, z) followed by an exponential-map rotation vector.
struct Joint {
  std::string name;
  JointKind kind = JointKind::kRevolute1;
  int parent_link = -1;
  int child_link = 0;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();  // in the parent link frame
  std::vector<Eigen::Vector3d> axes;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> torque_limit;
  int dof_offset = 0;

  int dof_count() const;
  bool actuated() const { return kind != JointKind::kFree6 && kind != JointKind::kFixed; }
};

/// out[i] = sign[i] * in[target_index[i]].
class SignedPermutation {
 public:
  SignedPermutation() = default;
  SignedPermutation(std::vector<int> target_index, std::vector<int> sign);

  static SignedPermutation identity(int n);

  int size() const { return static_cast<int>(target_.size()); }
  const std::vector<int>& target_index() const { return target_; }
  const std::vector<int>& sign() const { return sign_; }

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  /// Applies the map to every column of `m`.
  Eigen::MatrixXd apply_columns(const Eigen::Ref<const Eigen::MatrixXd>& m) const;
  /// Dense matrix P with apply(v) == P * v.
  Eigen::MatrixXd matrix() const;

  bool is_permutation() const;
  bool is_involution() const;

 private:
  std::vector<int> target_;
  std::vector<int> sign_;
};

struct CharacterModel {
  std::string name;
  std::vector<Link> links;
  std::vector<Joint> joints;  // joints[i].child_link == i, parent index < i
  std::vector<int> end_effectors;
  int torso_link = 0;
  int assist_link = 0;
  Eigen::VectorXd reference_q;
  SignedPermutation mirror_obs;
  SignedPermutation mirror_act;
  std::vector<int> left_leg_dofs;   // action indices
  std::vector<int> right_leg_dofs;  // action indices

  int dof_count() const { return dofs_; }
  int action_dim() const { return static_cast<int>(actuated_dofs_.size()); }
  int observation_dim() const;
  bool floating_base() const { return !joints.empty() && joints.front().kind == JointKind::kFree6; }
  /// Index into q of each action component.
  const std::vector<int>& actuated_dofs() const { return actuated_dofs_; }
  const Eigen::VectorXd& torque_limits() const { return torque_limits_; }
  /// Per-DOF position limits (root DOFs are unbounded).
  const Eigen::VectorXd& lower_limits() const { return lower_; }
  const Eigen::VectorXd& upper_limits() const { return upper_; }
  /// Joint owning each DOF.
  const std::vector<int>& dof_joint() const { return dof_joint_; }
  double total_mass() const;

  /// Recomputes the derived tables above from links/joints. Called by the loader.
  void finalize();

 private:
  int dofs_ = 0;
  std::vector<int> actuated_dofs_;
  std::vector<int> dof_joint_;
  Eigen::VectorXd torque_limits_;
  Eigen::VectorXd lower_;
  Eigen::VectorXd upper_;
};

/// Parses and validates a character document (JSON syntax).
/// Throws ParseError for malformed documents and ValidationError naming the
/// violated invariant otherwise.
CharacterModel load_character(std::string_view document);
CharacterModel load_character_file(const std::filesystem::path& path);

/// Checks every CharacterModel invariant; throws ValidationError.
void validate(const CharacterModel& model);

Eigen::VectorXd mirror_observation(const Eigen::Ref<const Eigen::VectorXd>& obs,
                                   const CharacterModel& model);
Eigen::VectorXd mirror_action(const Eigen::Ref<const Eigen::VectorXd>& act,
                              const CharacterModel& model);

/// Text of the shipped simplified biped (9 links, 21 DOFs), embedded at build time.
std::string_view builtin_biped9();

}  // namespace gaitforge
