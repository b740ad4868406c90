"""Layout of the 20-dimensional generalized coordinate vector.

The ordering is fixed across the whole package:

    q = [x, y, z, roll, pitch, yaw,                      # pelvis pose (6)
         q1L, q2L, q3L, q4L, q7L, q1R, q2R, q3R, q4R, q7R,   # motors (10)
         q5L, q6L, q5R, q6R]                             # passive springs (4)

Pelvis orientation is roll-pitch-yaw about world axes, composed as
R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
"""

from __future__ import annotations

import numpy as np

NQ = 20

PELVIS = slice(0, 6)
MOTORS = slice(6, 16)
SPRINGS = slice(16, 20)

PELVIS_POS = slice(0, 3)
PELVIS_RPY = slice(3, 6)

# Named indices into q.
X, Y, Z, ROLL, PITCH, YAW = range(6)

LEFT_MOTORS = slice(6, 11)    # q1L q2L q3L q4L q7L
RIGHT_MOTORS = slice(11, 16)  # q1R q2R q3R q4R q7R

Q1_L, Q2_L, Q3_L, Q4_L, Q7_L = 6, 7, 8, 9, 10
Q1_R, Q2_R, Q3_R, Q4_R, Q7_R = 11, 12, 13, 14, 15
Q5_L, Q6_L, Q5_R, Q6_R = 16, 17, 18, 19

MOTOR_NAMES = (
    "hip_roll_L", "hip_yaw_L", "hip_pitch_L", "knee_L", "toe_L",
    "hip_roll_R", "hip_yaw_R", "hip_pitch_R", "knee_R", "toe_R",
)
SPRING_NAMES = ("shin_spring_L", "tarsus_L", "shin_spring_R", "tarsus_R")

# Tarsus coupling: with the leaf springs uncompressed the tarsus tracks the
# knee so that q6 + q4 equals this constant (radians).
TARSUS_COUPLING = np.deg2rad(13.0)

# Sign flips applied when mirroring a configuration left<->right through the
# sagittal plane.  Lateral translation, roll, yaw, hip roll and hip yaw flip;
# pitch-axis joints do not.
_PELVIS_MIRROR_SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
_LEG_MIRROR_SIGNS = np.array([-1.0, -1.0, 1.0, 1.0, 1.0])  # q1 q2 q3 q4 q7


def mirror_matrix() -> np.ndarray:
    """Signed permutation S with (S q) = the left/right mirrored configuration.

    Swaps the two legs (motors and springs) with hip roll/yaw sign flips and
    mirrors the pelvis coordinates through the x-z plane.
    """
    S = np.zeros((NQ, NQ))
    S[range(6), range(6)] = _PELVIS_MIRROR_SIGNS
    for i in range(5):
        S[6 + i, 11 + i] = _LEG_MIRROR_SIGNS[i]
        S[11 + i, 6 + i] = _LEG_MIRROR_SIGNS[i]
    # springs: q5L<->q5R, q6L<->q6R, pitch-axis joints, no sign flip
    S[16, 18] = S[18, 16] = 1.0
    S[17, 19] = S[19, 17] = 1.0
    return S


def motor_mirror_matrix() -> np.ndarray:
    """10x10 block of :func:`mirror_matrix` acting on the motor sub-vector."""
    return mirror_matrix()[MOTORS, MOTORS]


def check_q(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != NQ:
        raise ValueError(f"configuration must have {NQ} entries, got {q.shape[-1]}")
    return q
