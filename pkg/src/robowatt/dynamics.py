"""
Inverse rigid-body dynamics with the recursive Newton-Euler algorithm.

Spatial vectors are 6-vectors with the angular part first. The torque returned is purely
inertial and gravitational: joint friction is not modeled.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

import robowatt.config as cfg
from robowatt.errors import InputError, NumericalError
from robowatt.robot_model import RobotModel, body_transforms, joint_vector, kinematic_tree, skew

log = logging.getLogger("robowatt.dynamics")

# torque (N·m) or force (N) per DOF
TorqueVector = np.ndarray


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("q", "qd", "qdd"):
            array = np.array(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(array)):
                raise InputError(f"joint state {name} has non-finite entries")
            array.flags.writeable = False
            arrays[name] = array
        lengths = {array.shape[0] for array in arrays.values()}
        if len(lengths) != 1:
            raise InputError(
                "joint state vectors differ in length: "
                + ", ".join(f"{name}={array.shape[0]}" for name, array in arrays.items())
            )
        for name, array in arrays.items():
            object.__setattr__(self, name, array)

    @property
    def dof(self) -> int:
        return self.q.shape[0]

    @classmethod
    def at_rest(cls, q) -> "JointState":
        q = np.asarray(q, dtype=float)
        return cls(q=q, qd=np.zeros_like(q), qdd=np.zeros_like(q))


def _crm(v: np.ndarray) -> np.ndarray:
    """Spatial cross product operator for motion vectors."""
    crm = np.zeros((6, 6))
    crm[:3, :3] = skew(v[:3])
    crm[3:, :3] = skew(v[3:])
    crm[3:, 3:] = crm[:3, :3]
    return crm


def _crf(v: np.ndarray) -> np.ndarray:
    """Spatial cross product operator for force vectors."""
    return -_crm(v).T


def _parent_to_child(body, position: float) -> np.ndarray:
    """Plücker transform taking motion vectors from the parent frame to the body frame."""
    rotation = body.origin_rotation
    translation = body.origin_translation
    if body.dof_index is not None:
        if body.joint.is_prismatic:
            translation = translation + rotation @ (body.axis * position)
        else:
            rotation = rotation @ Rotation.from_rotvec(body.axis * position).as_matrix()
    transposed = rotation.T
    transform = np.zeros((6, 6))
    transform[:3, :3] = transposed
    transform[3:, 3:] = transposed
    transform[3:, :3] = -transposed @ skew(translation)
    return transform


def _motion_subspace(body) -> np.ndarray:
    subspace = np.zeros(6)
    if body.joint.is_prismatic:
        subspace[3:] = body.axis
    else:
        subspace[:3] = body.axis
    return subspace


def _rnea(model: RobotModel, q, qd, qdd, gravity) -> TorqueVector:
    tree = kinematic_tree(model)
    bodies = tree.bodies
    n_bodies = len(bodies)

    transforms = [None] * n_bodies
    subspaces = [None] * n_bodies
    velocities = [None] * n_bodies
    accelerations = [None] * n_bodies
    forces = [None] * n_bodies

    for i, body in enumerate(bodies):
        if body.parent < 0:
            velocities[i] = np.zeros(6)
            # a fictitious base acceleration opposite to gravity accounts for the gravity load
            accelerations[i] = np.concatenate([np.zeros(3), -np.asarray(gravity, dtype=float)])
            forces[i] = np.zeros(6)
            continue

        position = 0.0 if body.dof_index is None else q[body.dof_index]
        transform = _parent_to_child(body, position)
        velocity = transform @ velocities[body.parent]
        acceleration = transform @ accelerations[body.parent]
        if body.dof_index is not None:
            subspace = _motion_subspace(body)
            joint_velocity = subspace * qd[body.dof_index]
            velocity = velocity + joint_velocity
            joint_acceleration = subspace * qdd[body.dof_index]
            acceleration = acceleration + joint_acceleration + _crm(velocity) @ joint_velocity
            subspaces[i] = subspace

        inertia = body.spatial_inertia
        transforms[i] = transform
        velocities[i] = velocity
        accelerations[i] = acceleration
        forces[i] = inertia @ acceleration + _crf(velocity) @ (inertia @ velocity)

    tau = np.zeros(tree.dof)
    for i in range(n_bodies - 1, 0, -1):
        body = bodies[i]
        if body.dof_index is not None:
            tau[body.dof_index] = subspaces[i] @ forces[i]
        forces[body.parent] = forces[body.parent] + transforms[i].T @ forces[i]
    return tau


def _check_state(model: RobotModel, state: JointState):
    if state.dof != model.dof:
        raise InputError(
            f"joint state has {state.dof} entries, model '{model.name}' has {model.dof} dof"
        )


def rnea(model: RobotModel, state: JointState, gravity=None) -> TorqueVector:
    """
    Joint torques τ = M(q)q̈ + C(q, q̇) + G(q) for the given state.

    gravity overrides the model's gravity vector when given.
    """
    _check_state(model, state)
    gravity = model.gravity if gravity is None else gravity
    tau = _rnea(model, state.q, state.qd, state.qdd, gravity)
    if not np.all(np.isfinite(tau)):
        raise NumericalError(f"non-finite torque for model '{model.name}'")
    return tau


def inverse_dynamics(model: RobotModel, q, qd, qdd) -> TorqueVector:
    """Convenience wrapper of rnea taking the three joint vectors directly."""
    return rnea(model, JointState(q=q, qd=qd, qdd=qdd))


def gravity_torque(model: RobotModel, q) -> TorqueVector:
    """G(q): the torque holding pose q against gravity."""
    q = joint_vector(model, q)
    return rnea(model, JointState.at_rest(q))


def coriolis_torque(model: RobotModel, q, qd) -> TorqueVector:
    q = joint_vector(model, q)
    qd = joint_vector(model, qd, "qd")
    with_velocity = rnea(model, JointState(q=q, qd=qd, qdd=np.zeros_like(q)))
    return with_velocity - gravity_torque(model, q)


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Joint-space inertia M(q), one RNEA call per column."""
    q = joint_vector(model, q)
    n = model.dof
    zeros = np.zeros(n)
    no_gravity = (0.0, 0.0, 0.0)
    matrix = np.zeros((n, n))
    for j in range(n):
        unit = np.zeros(n)
        unit[j] = 1.0
        matrix[:, j] = _rnea(model, q, zeros, unit, no_gravity)

    scale = float(np.max(np.abs(matrix))) if n else 0.0
    asymmetry = float(np.max(np.abs(matrix - matrix.T))) if n else 0.0
    if scale > 0 and asymmetry > cfg.MASS_MATRIX_SYMMETRY_TOLERANCE * scale:
        log.error("mass matrix asymmetry %.3g exceeds tolerance (scale %.3g)", asymmetry, scale)
        raise NumericalError(
            f"mass matrix is not symmetric: relative asymmetry {asymmetry / scale:.3g}"
        )
    return 0.5 * (matrix + matrix.T)


def kinetic_energy(model: RobotModel, q, qd) -> float:
    qd = joint_vector(model, qd, "qd")
    return float(0.5 * qd @ mass_matrix(model, q) @ qd)


def potential_energy(model: RobotModel, q, gravity: Optional[tuple] = None) -> float:
    """Gravitational potential energy relative to the base frame origin."""
    gravity = np.asarray(model.gravity if gravity is None else gravity, dtype=float)
    tree = kinematic_tree(model)
    energy = 0.0
    for body, transform in zip(tree.bodies, body_transforms(model, q)):
        if body.mass == 0:
            continue
        com_world = transform[:3, :3] @ body.com + transform[:3, 3]
        energy -= body.mass * float(gravity @ com_world)
    return energy
