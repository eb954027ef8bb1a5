"""Fixed-timestep rigid-body engine for box-shaped bodies."""

from .world import (
    GRAVITY,
    Contact,
    ContactSet,
    UnknownBody,
    World,
    apply_external,
    bodies_by_role,
    box_corners,
    box_inertia,
    detect_contacts,
    integrate,
    kinetic_energy,
    quat_from_axis_angle,
    quat_to_matrix,
    resolve_contacts,
    step,
)

__all__ = [
    "GRAVITY", "Contact", "ContactSet", "UnknownBody", "World", "apply_external",
    "bodies_by_role", "box_corners", "box_inertia", "detect_contacts", "integrate",
    "kinetic_energy", "quat_from_axis_angle", "quat_to_matrix", "resolve_contacts", "step",
]
