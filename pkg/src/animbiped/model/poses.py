"""Reference poses derived from the model geometry."""

from __future__ import annotations

import numpy as np

from . import layout
from .kinematics import body_frames, knee_of_leg_length, virtual_leg
from .spec import RobotModel


def hip_stack_height(model: RobotModel) -> float:
    """Vertical distance from the pelvis origin down to the hip pitch pivots."""
    R, p = body_frames(model, np.zeros(layout.NQ))
    return float(-p[model.hip_pivot_body["left"], 2])


def blade_drop(model: RobotModel) -> float:
    """Height of the ankle pivot above the contact blade."""
    return float(model.feet["left"].pivot[2] - model.feet["left"].endpoints[0, 2])


def standing_pose(model: RobotModel, height: float = 0.9) -> np.ndarray:
    """Symmetric standing configuration with level feet on the ground.

    Legs vertical under the hips, spring constraints satisfied exactly,
    pelvis at the requested height.
    """
    q = np.zeros(layout.NQ)
    ll_target = height - hip_stack_height(model) - blade_drop(model)
    q4 = knee_of_leg_length(model, ll_target)
    probe = np.zeros(layout.NQ)
    for i4, i6 in ((layout.Q4_L, layout.Q6_L), (layout.Q4_R, layout.Q6_R)):
        probe[i4] = q4
        probe[i6] = layout.TARSUS_COUPLING - q4
    _, la = virtual_leg(model, probe)
    q3 = -float(la["left"])
    for i3, i4, i7, i6 in ((layout.Q3_L, layout.Q4_L, layout.Q7_L, layout.Q6_L),
                           (layout.Q3_R, layout.Q4_R, layout.Q7_R, layout.Q6_R)):
        q[i3] = q3
        q[i4] = q4
        q[i7] = -q3
        q[i6] = layout.TARSUS_COUPLING - q4
    q[layout.Z] = height
    return q
