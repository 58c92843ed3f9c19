#!/usr/bin/env python3
"""Generates data/biped9.model, the simplified 9-link / 21-DOF biped.

Masses and torque limits are heuristic (50 kg total, 1.65 m tall). The left
side is authored once and the right side is produced by reflecting it across
the sagittal (Y-Z) plane, so the model is exactly mirror symmetric.

Axis convention: +X frontal (character's left), +Y up, +Z forward.
"""
import json
import sys

FOOT_H = 0.08
SHIN_L = 0.42
THIGH_L = 0.42
HIP_Y = FOOT_H + SHIN_L + THIGH_L
HIP_X = 0.09


def cyl_inertia(m, r, length):
    """Solid cylinder along Y."""
    perp = m * (3 * r * r + length * length) / 12.0
    return [perp, 0.5 * m * r * r, perp, 0.0, 0.0, 0.0]


def box_inertia(m, w, h, d):
    """Box with extents w (x), h (y), d (z)."""
    return [m * (h * h + d * d) / 12.0, m * (w * w + d * d) / 12.0,
            m * (w * w + h * h) / 12.0, 0.0, 0.0, 0.0]


def mirror_vec(v):
    return [-v[0], v[1], v[2]]


def mirror_inertia(i):
    ixx, iyy, izz, ixy, ixz, iyz = i
    return [ixx, iyy, izz, -ixy, -ixz, iyz]


def mirror_shape(s):
    out = dict(s)
    for key in ("center", "from", "to"):
        if key in out:
            out[key] = mirror_vec(out[key])
    return out


links = [
    {"name": "pelvis", "mass": 8.0, "inertia": box_inertia(8.0, 0.30, 0.20, 0.20),
     "com_offset": [0.0, 0.05, 0.0],
     "shapes": [{"type": "sphere", "center": [0.0, 0.05, 0.0], "radius": 0.12}]},
    {"name": "abdomen", "mass": 5.0, "inertia": cyl_inertia(5.0, 0.10, 0.20),
     "com_offset": [0.0, 0.10, 0.0],
     "shapes": [{"type": "capsule", "from": [0.0, 0.0, 0.0], "to": [0.0, 0.20, 0.0], "radius": 0.10}]},
    {"name": "torso", "mass": 15.0, "inertia": box_inertia(15.0, 0.35, 0.41, 0.20),
     "com_offset": [0.0, 0.20, 0.0],
     "shapes": [{"type": "capsule", "from": [0.0, 0.05, 0.0], "to": [0.0, 0.29, 0.0], "radius": 0.12}]},
]

left_leg_links = [
    {"name": "l_thigh", "mass": 6.5, "inertia": cyl_inertia(6.5, 0.06, THIGH_L),
     "com_offset": [0.0, -0.21, 0.0],
     "shapes": [{"type": "capsule", "from": [0.0, -0.04, 0.0], "to": [0.0, -0.38, 0.0], "radius": 0.06}]},
    {"name": "l_shin", "mass": 3.5, "inertia": cyl_inertia(3.5, 0.05, SHIN_L),
     "com_offset": [0.0, -0.20, 0.0],
     "shapes": [{"type": "capsule", "from": [0.0, -0.04, 0.0], "to": [0.0, -0.38, 0.0], "radius": 0.05}]},
    {"name": "l_foot", "mass": 1.0, "inertia": box_inertia(1.0, 0.10, 0.06, 0.24),
     "com_offset": [0.0, -0.04, 0.04],
     "shapes": [{"type": "capsule", "from": [0.035, -0.05, -0.05], "to": [0.035, -0.05, 0.15], "radius": 0.03},
                {"type": "capsule", "from": [-0.035, -0.05, -0.05], "to": [-0.035, -0.05, 0.15], "radius": 0.03}]},
]

X = [1.0, 0.0, 0.0]
Y = [0.0, 1.0, 0.0]
Z = [0.0, 0.0, 1.0]

# Mirror sign of a rotation coordinate about each axis under x -> -x reflection.
AXIS_SIGN = {0: 1, 1: -1, 2: -1}

joints = [
    {"name": "root", "kind": "free6", "parent_link": -1, "child_link": 0},
    {"name": "abdomen", "kind": "revolute1", "parent_link": 0, "child_link": 1,
     "origin": [0.0, 0.12, 0.0], "axes": [X], "lower": [-0.6], "upper": [0.9],
     "torque_limit": [120.0]},
    {"name": "chest", "kind": "universal2", "parent_link": 1, "child_link": 2,
     "origin": [0.0, 0.20, 0.0], "axes": [Z, Y], "lower": [-0.5, -0.6], "upper": [0.5, 0.6],
     "torque_limit": [100.0, 80.0]},
]

left_leg_joints = [
    {"name": "l_hip", "kind": "ball3", "parent": "pelvis",
     "origin": [HIP_X, 0.0, 0.0], "axes": [X, Y, Z],
     "lower": [-1.8, -0.6, -0.5], "upper": [0.6, 0.6, 0.8],
     "torque_limit": [150.0, 80.0, 100.0]},
    {"name": "l_knee", "kind": "revolute1", "parent": "l_thigh",
     "origin": [0.0, -THIGH_L, 0.0], "axes": [X],
     "lower": [-0.05], "upper": [2.5], "torque_limit": [150.0]},
    {"name": "l_ankle", "kind": "universal2", "parent": "l_shin",
     "origin": [0.0, -SHIN_L, 0.0], "axes": [X, Z],
     "lower": [-0.8, -0.4], "upper": [0.8, 0.4], "torque_limit": [80.0, 40.0]},
]


def axis_index(a):
    return a.index(1.0)


def mirror_joint(j):
    out = dict(j)
    out["name"] = "r_" + j["name"][2:]
    out["origin"] = mirror_vec(j["origin"])
    lower, upper = [], []
    for a, lo, hi in zip(j["axes"], j["lower"], j["upper"]):
        if AXIS_SIGN[axis_index(a)] > 0:
            lower.append(lo)
            upper.append(hi)
        else:
            lower.append(-hi)
            upper.append(-lo)
    out["lower"], out["upper"] = lower, upper
    return out


def mirror_link(link):
    out = dict(link)
    out["name"] = "r_" + link["name"][2:]
    out["com_offset"] = mirror_vec(link["com_offset"])
    out["inertia"] = mirror_inertia(link["inertia"])
    out["shapes"] = [mirror_shape(s) for s in link["shapes"]]
    return out


right_leg_links = [mirror_link(l) for l in left_leg_links]
right_leg_joints = [mirror_joint(j) for j in left_leg_joints]

links += left_leg_links + right_leg_links
names = [l["name"] for l in links]


def attach(leg_joints, first_link):
    for k, j in enumerate(leg_joints):
        j = dict(j)
        parent = j.pop("parent")
        if parent.startswith("l_") and leg_joints is right_leg_joints:
            parent = "r_" + parent[2:]
        j["parent_link"] = names.index(parent)
        j["child_link"] = first_link + k
        joints.append(j)


attach(left_leg_joints, 3)
attach(right_leg_joints, 6)

# Actuated DOF bookkeeping.
act_sign = []      # mirror sign per action index
act_joint = []     # joint index per action index
for ji, j in enumerate(joints):
    if j["kind"] == "free6":
        continue
    for a in j["axes"]:
        act_sign.append(AXIS_SIGN[axis_index(a)])
        act_joint.append(ji)
A = len(act_sign)
joint_partner = {}
for ji, j in enumerate(joints):
    n = j["name"]
    if n.startswith("l_"):
        joint_partner[ji] = [k for k, jj in enumerate(joints) if jj["name"] == "r_" + n[2:]][0]
    elif n.startswith("r_"):
        joint_partner[ji] = [k for k, jj in enumerate(joints) if jj["name"] == "l_" + n[2:]][0]
    else:
        joint_partner[ji] = ji
first_act = {}
for i, ji in enumerate(act_joint):
    first_act.setdefault(ji, i)
act_target = []
for i, ji in enumerate(act_joint):
    local = i - first_act[ji]
    act_target.append(first_act[joint_partner[ji]] + local)

left_leg = [i for i, ji in enumerate(act_joint) if joints[ji]["name"].startswith("l_")]
right_leg = [act_target[i] for i in left_leg]

# Observation: q without root z (index 2), qd, contacts (2), target velocity.
ndof = 6 + A
q_keep = [0, 1] + list(range(3, ndof))
root_q_sign = {0: -1, 1: 1, 2: 1, 3: 1, 4: -1, 5: -1}
root_qd_sign = {0: -1, 1: 1, 2: 1, 3: 1, 4: -1, 5: -1}


def dof_mirror(d, root_sign):
    if d < 6:
        return d, root_sign[d]
    i = d - 6
    return 6 + act_target[i], act_sign[i]


obs_target, obs_sign = [], []
q_pos = {d: k for k, d in enumerate(q_keep)}
for d in q_keep:
    t, s = dof_mirror(d, root_q_sign)
    obs_target.append(q_pos[t])
    obs_sign.append(s)
off = len(q_keep)
for d in range(ndof):
    t, s = dof_mirror(d, root_qd_sign)
    obs_target.append(off + t)
    obs_sign.append(s)
off += ndof
obs_target += [off + 1, off]
obs_sign += [1, 1]
off += 2
obs_target.append(off)
obs_sign.append(1)

reference_q = [0.0, HIP_Y, 0.0, 0.0, 0.0, 0.0] + [0.0] * A

model = {
    "name": "biped9",
    "links": links,
    "joints": joints,
    "end_effectors": [names.index("l_foot"), names.index("r_foot")],
    "torso_link": names.index("torso"),
    "assist_link": names.index("pelvis"),
    "reference_q": reference_q,
    "mirror_obs": {"target_index": obs_target, "sign": obs_sign},
    "mirror_act": {"target_index": act_target, "sign": act_sign},
    "left_leg_dofs": left_leg,
    "right_leg_dofs": right_leg,
}

out = sys.argv[1] if len(sys.argv) > 1 else "data/biped9.model"
with open(out, "w") as f:
    json.dump(model, f, indent=1)
    f.write("\n")
print("wrote", out, "links", len(links), "dofs", ndof, "mass",
      sum(l["mass"] for l in links))
