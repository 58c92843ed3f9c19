#include "gaitforge/charmodel.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace gaitforge {

using json = nlohmann::json;

std::string_view to_string(JointKind kind) {
  switch (kind) {
    case JointKind::kFixed: return "fixed";
    case JointKind::kFree6: return "free6";
    case JointKind::kBall3: return "ball3";
    case JointKind::kUniversal2: return "universal2";
    case JointKind::kRevolute1: return "revolute1";
  }
  return "unknown";
}

int Joint::dof_count() const {
  switch (kind) {
    case JointKind::kFixed: return 0;
    case JointKind::kFree6: return 6;
    case JointKind::kBall3: return 3;
    case JointKind::kUniversal2: return 2;
    case JointKind::kRevolute1: return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// SignedPermutation

SignedPermutation::SignedPermutation(std::vector<int> target_index, std::vector<int> sign)
    : target_(std::move(target_index)), sign_(std::move(sign)) {
  if (target_.size() != sign_.size()) {
    throw DimensionMismatch("signed permutation: target_index and sign lengths differ");
  }
}

SignedPermutation SignedPermutation::identity(int n) {
  std::vector<int> target(n);
  std::iota(target.begin(), target.end(), 0);
  return SignedPermutation(std::move(target), std::vector<int>(n, 1));
}

Eigen::VectorXd SignedPermutation::apply(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (v.size() != size()) {
    throw DimensionMismatch("signed permutation of size " + std::to_string(size()) +
                            " applied to vector of size " + std::to_string(v.size()));
  }
  Eigen::VectorXd out(v.size());
  for (int i = 0; i < size(); ++i) out[i] = sign_[i] > 0 ? v[target_[i]] : -v[target_[i]];
  return out;
}

Eigen::MatrixXd SignedPermutation::apply_columns(const Eigen::Ref<const Eigen::MatrixXd>& m) const {
  if (m.rows() != size()) {
    throw DimensionMismatch("signed permutation of size " + std::to_string(size()) +
                            " applied to matrix with " + std::to_string(m.rows()) + " rows");
  }
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (int i = 0; i < size(); ++i) {
    if (sign_[i] > 0) {
      out.row(i) = m.row(target_[i]);
    } else {
      out.row(i) = -m.row(target_[i]);
    }
  }
  return out;
}

Eigen::MatrixXd SignedPermutation::matrix() const {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(size(), size());
  for (int i = 0; i < size(); ++i) p(i, target_[i]) = sign_[i];
  return p;
}

bool SignedPermutation::is_permutation() const {
  std::vector<bool> seen(target_.size(), false);
  for (std::size_t i = 0; i < target_.size(); ++i) {
    const int t = target_[i];
    if (t < 0 || t >= size() || seen[t]) return false;
    seen[t] = true;
    if (sign_[i] != 1 && sign_[i] != -1) return false;
  }
  return true;
}

bool SignedPermutation::is_involution() const {
  if (!is_permutation()) return false;
  for (int i = 0; i < size(); ++i) {
    const int t = target_[i];
    if (target_[t] != i || sign_[i] * sign_[t] != 1) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// CharacterModel

int CharacterModel::observation_dim() const {
  const int q_entries = floating_base() ? dofs_ - 1 : dofs_;
  return q_entries + dofs_ + static_cast<int>(end_effectors.size()) + 1;
}

double CharacterModel::total_mass() const {
  double m = 0.0;
  for (const auto& link : links) m += link.mass;
  return m;
}

void CharacterModel::finalize() {
  dofs_ = 0;
  actuated_dofs_.clear();
  dof_joint_.clear();
  std::vector<double> limits, lower, upper;
  for (std::size_t j = 0; j < joints.size(); ++j) {
    Joint& joint = joints[j];
    joint.dof_offset = dofs_;
    for (int k = 0; k < joint.dof_count(); ++k) {
      dof_joint_.push_back(static_cast<int>(j));
      if (joint.actuated()) {
        actuated_dofs_.push_back(dofs_ + k);
        limits.push_back(k < static_cast<int>(joint.torque_limit.size()) ? joint.torque_limit[k] : 0.0);
        lower.push_back(k < static_cast<int>(joint.lower.size()) ? joint.lower[k]
                                                                  : -std::numeric_limits<double>::infinity());
        upper.push_back(k < static_cast<int>(joint.upper.size()) ? joint.upper[k]
                                                                  : std::numeric_limits<double>::infinity());
      } else {
        lower.push_back(-std::numeric_limits<double>::infinity());
        upper.push_back(std::numeric_limits<double>::infinity());
      }
    }
    dofs_ += joint.dof_count();
  }
  torque_limits_ = Eigen::Map<Eigen::VectorXd>(limits.data(), static_cast<Eigen::Index>(limits.size()));
  lower_ = Eigen::Map<Eigen::VectorXd>(lower.data(), static_cast<Eigen::Index>(lower.size()));
  upper_ = Eigen::Map<Eigen::VectorXd>(upper.data(), static_cast<Eigen::Index>(upper.size()));
  if (reference_q.size() == 0) reference_q = Eigen::VectorXd::Zero(dofs_);
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

bool finite(const Eigen::Vector3d& v) { return v.allFinite(); }

}  // namespace

void validate(const CharacterModel& model) {
  const int nlinks = static_cast<int>(model.links.size());
  require(nlinks > 0, "model has no links");
  require(model.joints.size() == model.links.size(),
          "joint count must equal link count (one joint per link)");

  for (int i = 0; i < nlinks; ++i) {
    const Link& link = model.links[i];
    const std::string tag = "link " + std::to_string(i) + " (" + link.name + ")";
    require(std::isfinite(link.mass) && link.mass > 0.0, tag + ": mass must be > 0");
    require(link.inertia.allFinite() && (link.inertia - link.inertia.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
            tag + ": inertia not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(link.inertia, Eigen::EigenvaluesOnly);
    require(eig.eigenvalues().minCoeff() > 0.0, tag + ": inertia not positive definite");
    require(finite(link.com_offset), tag + ": com_offset not finite");
    for (const Shape& s : link.shapes) {
      require(std::isfinite(s.radius) && s.radius > 0.0, tag + ": shape radius must be > 0");
      require(finite(s.from) && finite(s.to), tag + ": shape coordinates not finite");
    }
  }

  for (int i = 0; i < nlinks; ++i) {
    const Joint& joint = model.joints[i];
    const std::string tag = "joint " + std::to_string(i) + " (" + joint.name + ")";
    require(joint.child_link == i, tag + ": child_link must equal the joint index");
    if (i == 0) {
      require(joint.parent_link == -1, "first joint must be the root (parent_link -1)");
      require(joint.kind == JointKind::kFree6 || joint.kind == JointKind::kFixed,
              "first joint must be a free6 root");
    } else {
      require(joint.kind != JointKind::kFree6 && joint.kind != JointKind::kFixed,
              tag + ": only the root may be free6/fixed");
      require(joint.parent_link >= 0 && joint.parent_link < i,
              tag + ": parent index must be < child index (tree order)");
      const auto n = static_cast<std::size_t>(joint.dof_count());
      require(joint.axes.size() == n, tag + ": expected " + std::to_string(n) + " axes");
      require(joint.lower.size() == n && joint.upper.size() == n, tag + ": limits size mismatch");
      require(joint.torque_limit.size() == n, tag + ": torque_limit size mismatch");
      for (std::size_t k = 0; k < n; ++k) {
        require(finite(joint.axes[k]) && std::abs(joint.axes[k].norm() - 1.0) < 1e-9,
                tag + ": axes must be unit length");
        require(!std::isnan(joint.lower[k]) && !std::isnan(joint.upper[k]) && joint.lower[k] <= joint.upper[k],
                tag + ": lower limit must be <= upper limit");
        require(std::isfinite(joint.torque_limit[k]) && joint.torque_limit[k] > 0.0,
                tag + ": torque limit must be finite and positive");
      }
      require(finite(joint.origin), tag + ": origin not finite");
    }
  }

  require(model.dof_count() == static_cast<int>(model.dof_joint().size()), "model not finalized");
  require(model.reference_q.size() == model.dof_count(), "reference_q length must equal DOF count");
  require(model.reference_q.allFinite(), "reference_q not finite");

  for (int ee : model.end_effectors) {
    require(ee >= 0 && ee < nlinks, "end_effectors index out of range");
  }
  require(model.torso_link >= 0 && model.torso_link < nlinks, "torso_link out of range");
  require(model.assist_link >= 0 && model.assist_link < nlinks, "assist_link out of range");

  require(model.mirror_obs.size() == model.observation_dim(),
          "mirror_obs size " + std::to_string(model.mirror_obs.size()) + " != observation dimension " +
              std::to_string(model.observation_dim()));
  require(model.mirror_obs.is_permutation(), "mirror_obs not a permutation");
  require(model.mirror_obs.is_involution(), "mirror_obs not an involution");
  require(model.mirror_act.size() == model.action_dim(),
          "mirror_act size " + std::to_string(model.mirror_act.size()) + " != action dimension " +
              std::to_string(model.action_dim()));
  require(model.mirror_act.is_permutation(), "mirror_act not a permutation");
  require(model.mirror_act.is_involution(), "mirror_act not an involution");

  const auto& left = model.left_leg_dofs;
  const auto& right = model.right_leg_dofs;
  require(left.size() == right.size(), "left_leg_dofs and right_leg_dofs differ in size");
  std::set<int> ls(left.begin(), left.end()), rs(right.begin(), right.end());
  require(ls.size() == left.size() && rs.size() == right.size(), "leg DOF lists contain duplicates");
  for (int d : left) {
    require(d >= 0 && d < model.action_dim(), "left_leg_dofs index out of range");
    require(!rs.count(d), "left_leg_dofs and right_leg_dofs overlap");
  }
  for (int d : right) require(d >= 0 && d < model.action_dim(), "right_leg_dofs index out of range");
  std::set<int> image;
  for (int d : left) image.insert(model.mirror_act.target_index()[d]);
  require(image == rs, "mirror_act does not map left_leg_dofs onto right_leg_dofs");
}

// ---------------------------------------------------------------------------
// Loading

namespace {

Eigen::Vector3d vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ParseError(std::string(what) + ": expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::vector<double> number_list(const json& j, const char* what) {
  if (!j.is_array()) throw ParseError(std::string(what) + ": expected an array");
  std::vector<double> out;
  for (const auto& v : j) {
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf" || s == "+inf") out.push_back(std::numeric_limits<double>::infinity());
      else if (s == "-inf") out.push_back(-std::numeric_limits<double>::infinity());
      else throw ParseError(std::string(what) + ": unexpected string '" + s + "'");
    } else {
      out.push_back(v.get<double>());
    }
  }
  return out;
}

std::vector<int> index_list(const json& j, const char* what) {
  if (!j.is_array()) throw ParseError(std::string(what) + ": expected an array");
  std::vector<int> out;
  for (const auto& v : j) out.push_back(v.get<int>());
  return out;
}

JointKind parse_kind(const std::string& s) {
  if (s == "free6") return JointKind::kFree6;
  if (s == "ball3") return JointKind::kBall3;
  if (s == "universal2") return JointKind::kUniversal2;
  if (s == "revolute1") return JointKind::kRevolute1;
  if (s == "fixed") return JointKind::kFixed;
  throw ParseError("unknown joint kind '" + s + "'");
}

Eigen::Matrix3d parse_inertia(const json& j) {
  Eigen::Matrix3d m;
  if (j.is_array() && j.size() == 6) {
    // [ixx, iyy, izz, ixy, ixz, iyz]
    const double ixx = j[0].get<double>(), iyy = j[1].get<double>(), izz = j[2].get<double>();
    const double ixy = j[3].get<double>(), ixz = j[4].get<double>(), iyz = j[5].get<double>();
    m << ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz;
    return m;
  }
  if (j.is_array() && j.size() == 3 && j[0].is_array()) {
    for (int r = 0; r < 3; ++r) m.row(r) = vec3(j[r], "inertia row").transpose();
    return m;
  }
  throw ParseError("inertia: expected [ixx,iyy,izz,ixy,ixz,iyz] or a 3x3 array");
}

SignedPermutation parse_perm(const json& j, const char* what) {
  if (!j.is_object()) throw ParseError(std::string(what) + ": expected an object");
  auto target = index_list(j.at("target_index"), what);
  auto sign = index_list(j.at("sign"), what);
  if (target.size() != sign.size()) {
    throw ValidationError(std::string(what) + ": target_index and sign lengths differ");
  }
  return SignedPermutation(std::move(target), std::move(sign));
}

CharacterModel parse_model(const json& doc) {
  if (!doc.is_object()) throw ParseError("character document must be an object");
  CharacterModel model;
  model.name = doc.value("name", std::string("character"));

  for (const auto& jl : doc.at("links")) {
    Link link;
    link.name = jl.value("name", std::string());
    link.mass = jl.at("mass").get<double>();
    link.inertia = parse_inertia(jl.at("inertia"));
    if (jl.contains("com_offset")) link.com_offset = vec3(jl["com_offset"], "com_offset");
    if (jl.contains("shapes")) {
      for (const auto& js : jl["shapes"]) {
        Shape s;
        const auto type = js.at("type").get<std::string>();
        s.radius = js.at("radius").get<double>();
        if (type == "sphere") {
          s.type = Shape::Type::kSphere;
          s.from = s.to = vec3(js.at("center"), "sphere center");
        } else if (type == "capsule") {
          s.type = Shape::Type::kCapsule;
          s.from = vec3(js.at("from"), "capsule from");
          s.to = vec3(js.at("to"), "capsule to");
        } else {
          throw ParseError("unknown shape type '" + type + "'");
        }
        link.shapes.push_back(s);
      }
    }
    model.links.push_back(std::move(link));
  }

  for (const auto& jj : doc.at("joints")) {
    Joint joint;
    joint.name = jj.value("name", std::string());
    joint.kind = parse_kind(jj.at("kind").get<std::string>());
    joint.parent_link = jj.at("parent_link").get<int>();
    joint.child_link = jj.at("child_link").get<int>();
    if (jj.contains("origin")) joint.origin = vec3(jj["origin"], "joint origin");
    if (jj.contains("axes")) {
      for (const auto& ja : jj["axes"]) joint.axes.push_back(vec3(ja, "joint axis"));
    }
    if (jj.contains("lower")) joint.lower = number_list(jj["lower"], "lower");
    if (jj.contains("upper")) joint.upper = number_list(jj["upper"], "upper");
    if (jj.contains("torque_limit")) joint.torque_limit = number_list(jj["torque_limit"], "torque_limit");
    if (joint.actuated()) {
      const auto n = static_cast<std::size_t>(joint.dof_count());
      if (joint.lower.empty()) joint.lower.assign(n, -std::numeric_limits<double>::infinity());
      if (joint.upper.empty()) joint.upper.assign(n, std::numeric_limits<double>::infinity());
    }
    model.joints.push_back(std::move(joint));
  }

  if (doc.contains("end_effectors")) model.end_effectors = index_list(doc["end_effectors"], "end_effectors");
  model.torso_link = doc.value("torso_link", 0);
  model.assist_link = doc.value("assist_link", 0);

  // Joint tables must be finalized before the derived dimensions are known.
  for (std::size_t i = 0; i < model.joints.size(); ++i) {
    const int child = model.joints[i].child_link;
    if (child < 0 || child >= static_cast<int>(model.links.size())) {
      throw ValidationError("joint " + std::to_string(i) + ": child_link out of range");
    }
  }
  model.finalize();

  if (doc.contains("reference_q")) {
    const auto q = number_list(doc["reference_q"], "reference_q");
    model.reference_q = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
  }

  model.mirror_obs = doc.contains("mirror_obs") ? parse_perm(doc["mirror_obs"], "mirror_obs")
                                                : SignedPermutation::identity(model.observation_dim());
  model.mirror_act = doc.contains("mirror_act") ? parse_perm(doc["mirror_act"], "mirror_act")
                                                : SignedPermutation::identity(model.action_dim());
  if (doc.contains("left_leg_dofs")) model.left_leg_dofs = index_list(doc["left_leg_dofs"], "left_leg_dofs");
  if (doc.contains("right_leg_dofs")) model.right_leg_dofs = index_list(doc["right_leg_dofs"], "right_leg_dofs");
  return model;
}

}  // namespace

CharacterModel load_character(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("character document: ") + e.what());
  }
  CharacterModel model;
  try {
    model = parse_model(doc);
  } catch (const json::exception& e) {
    throw ParseError(std::string("character document: ") + e.what());
  }
  validate(model);
  return model;
}

CharacterModel load_character_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open character file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_character(ss.str());
}

Eigen::VectorXd mirror_observation(const Eigen::Ref<const Eigen::VectorXd>& obs, const CharacterModel& model) {
  if (obs.size() != model.observation_dim()) {
    throw DimensionMismatch("observation has " + std::to_string(obs.size()) + " entries, model expects " +
                            std::to_string(model.observation_dim()));
  }
  return model.mirror_obs.apply(obs);
}

Eigen::VectorXd mirror_action(const Eigen::Ref<const Eigen::VectorXd>& act, const CharacterModel& model) {
  if (act.size() != model.action_dim()) {
    throw DimensionMismatch("action has " + std::to_string(act.size()) + " entries, model expects " +
                            std::to_string(model.action_dim()));
  }
  return model.mirror_act.apply(act);
}

}  // namespace gaitforge
