"""Planar floating-base articulated dynamics with penalty contact."""

from .model import (
    ActuatorModel,
    ContactModel,
    Joint,
    Link,
    RobotModel,
    Terrain,
    default_biped,
    double_pendulum,
    load_model,
    model_from_dict,
    model_to_dict,
    single_pendulum,
)
from .sim import (
    DT,
    BatchSim,
    ContactState,
    SimState,
    base_velocity_in_base_frame,
    bias_forces,
    contact_forces,
    contact_jacobian,
    foot_position,
    forward_dynamics,
    initial_state,
    inverse_dynamics,
    kinetic_energy,
    mass_matrix,
    pd_torque,
    point_jacobian,
    point_position,
    potential_energy,
    projected_gravity,
    standing_height,
    step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
