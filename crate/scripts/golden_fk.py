"""Writes configs/gen3_like.json with the home effector pose computed independently of the
Rust kinematics (numpy + scipy rotations)."""

import json
import pathlib

import numpy as np
from scipy.spatial.transform import Rotation

OFFSETS = [0.1564, 0.1284, 0.2104, 0.2104, 0.2084, 0.1059, 0.1059]
AXES = ["z", "y", "z", "y", "z", "y", "z"]
LIMITS = [6.28, 2.41, 6.28, 2.66, 6.28, 2.23, 6.28]
TOOL = 0.18
HOME = [0.0, 0.5, 0.1, 1.5, -0.1, 1.1416, 0.0]
UNIT = {"x": [1.0, 0.0, 0.0], "y": [0.0, 1.0, 0.0], "z": [0.0, 0.0, 1.0]}


def homogeneous(rot, trans):
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = trans
    return m


def pose(rot, trans):
    return {"rotation": [float(v) for v in np.asarray(rot).reshape(9)], "translation": [float(v) for v in trans]}


def main():
    m = np.eye(4)
    for off, axis, q in zip(OFFSETS, AXES, HOME):
        m = m @ homogeneous(np.eye(3), [0.0, 0.0, off])
        m = m @ homogeneous(Rotation.from_rotvec(np.array(UNIT[axis]) * q).as_matrix(), [0.0, 0.0, 0.0])
    m = m @ homogeneous(np.eye(3), [0.0, 0.0, TOOL])
    desc = {
        "name": "gen3-like 7-dof (approximate dimensions)",
        "joints": [
            {"transform": pose(np.eye(3), [0.0, 0.0, off]), "axis": UNIT[axis], "limits": [-lim, lim]}
            for off, axis, lim in zip(OFFSETS, AXES, LIMITS)
        ],
        "base_frame": pose(np.eye(3), [0.0, 0.0, 0.0]),
        "flange_to_effector": pose(np.eye(3), [0.0, 0.0, TOOL]),
        "joint_velocity_limit": 1.2,
        "home": HOME,
        "home_effector": pose(m[:3, :3], m[:3, 3]),
    }
    out = pathlib.Path(__file__).resolve().parent.parent / "configs" / "gen3_like.json"
    out.write_text(json.dumps(desc, indent=2) + "\n")
    print(m[:3, 3], m[:3, :3] @ [0, 0, 1])


if __name__ == "__main__":
    main()
