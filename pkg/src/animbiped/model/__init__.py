from . import layout
from .dynamics import (
    bias_forces,
    contact_bias_acceleration,
    contact_jacobian,
    contact_point_acceleration,
    coriolis_matrix,
    dynamics_terms,
    gravity_forces,
    inverse_dynamics,
    mass_matrix,
    point_accelerations,
    total_energy,
)
from .kinematics import (
    KinematicsResult,
    body_frames,
    com_jacobian,
    com_position,
    foot_points,
    forward_kinematics,
    knee_of_leg_length,
    leg_length_knee_gradient,
    leg_length_of_knee,
    point_bias_acceleration,
    point_jacobian,
    point_velocity,
    virtual_leg,
)
from .poses import blade_drop, hip_stack_height, standing_pose
from .spec import (
    FootSpec,
    JointSpec,
    LinkSpec,
    ModelError,
    RobotModel,
    default_model_path,
    load_model,
)

__all__ = [n for n in dir() if not n.startswith("_")]
