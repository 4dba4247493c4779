"""
Robot description: URDF subset ingestion, kinematic tree, forward kinematics.

The DOF index of each non-fixed joint in a joint vector ``q`` is its position in a
depth-first traversal of the tree from the base link, children visited in document order.
"""

import functools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from lxml import etree
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.transform import Rotation

from robowatt.config import DEFAULT_GRAVITY
from robowatt.errors import InputError, ParseError

log = logging.getLogger("robowatt.robot_model")

JointKind = Literal["revolute", "continuous", "prismatic", "fixed"]
Vector3 = tuple[float, float, float]
Matrix3 = tuple[Vector3, Vector3, Vector3]

SUPPORTED_JOINT_KINDS = ("revolute", "continuous", "prismatic", "fixed")

_ZERO3 = (0.0, 0.0, 0.0)
_ZERO33 = (_ZERO3, _ZERO3, _ZERO3)


class Diagnostic(BaseModel):
    model_config = ConfigDict(frozen=True)

    severity: Literal["error", "warning"]
    element: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.element}: {self.message}"


class JointSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: JointKind
    parent: str
    child: str
    axis: Vector3 = (1.0, 0.0, 0.0)
    origin_xyz: Vector3 = _ZERO3
    origin_rpy: Vector3 = _ZERO3
    velocity_limit: Optional[float] = None
    effort_limit: Optional[float] = None

    @property
    def is_fixed(self) -> bool:
        return self.kind == "fixed"

    @property
    def is_prismatic(self) -> bool:
        return self.kind == "prismatic"

    def origin_rotation(self) -> np.ndarray:
        # URDF rpy is fixed-axis roll about x, then pitch about y, then yaw about z
        return Rotation.from_euler("xyz", self.origin_rpy).as_matrix()

    def origin_transform(self) -> np.ndarray:
        transform = np.eye(4)
        transform[:3, :3] = self.origin_rotation()
        transform[:3, 3] = self.origin_xyz
        return transform

    def motion_transform(self, position: float) -> np.ndarray:
        """Transform contributed by the joint's own motion at the given position."""
        transform = np.eye(4)
        if self.is_fixed:
            return transform
        axis = np.asarray(self.axis)
        if self.is_prismatic:
            transform[:3, 3] = axis * position
        else:
            transform[:3, :3] = Rotation.from_rotvec(axis * position).as_matrix()
        return transform


class LinkInertia(BaseModel):
    model_config = ConfigDict(frozen=True)

    mass: float = 0.0
    com: Vector3 = _ZERO3
    # rotational inertia about the center of mass, expressed in the link frame
    inertia: Matrix3 = _ZERO33

    def inertia_matrix(self) -> np.ndarray:
        return np.array(self.inertia, dtype=float)

    def spatial_inertia(self) -> np.ndarray:
        """6x6 spatial inertia about the link frame origin, angular rows first."""
        mass = self.mass
        com_cross = skew(np.asarray(self.com, dtype=float))
        spatial = np.zeros((6, 6))
        spatial[:3, :3] = self.inertia_matrix() + mass * com_cross @ com_cross.T
        spatial[:3, 3:] = mass * com_cross
        spatial[3:, :3] = mass * com_cross.T
        spatial[3:, 3:] = mass * np.eye(3)
        return spatial


class Link(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    inertial: LinkInertia = Field(default_factory=LinkInertia)


class RobotModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "robot"
    links: tuple[Link, ...]
    joints: tuple[JointSpec, ...] = ()
    gravity: Vector3 = DEFAULT_GRAVITY
    # findings made while parsing, e.g. axes normalized from non-unit input
    notes: tuple[Diagnostic, ...] = ()

    @model_validator(mode="after")
    def _check_tree(self) -> Self:
        problems = tree_problems(self.links, self.joints)
        if problems:
            raise ValueError("invalid kinematic tree: " + "; ".join(problems))
        return self

    @property
    def dof(self) -> int:
        return sum(1 for joint in self.joints if not joint.is_fixed)

    @property
    def dof_joint_names(self) -> list[str]:
        """Names of the non-fixed joints in DOF index order."""
        return list(kinematic_tree(self).dof_joint_names)

    def link(self, name: str) -> Link:
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(name)

    def with_gravity(self, gravity) -> Self:
        return self.model_copy(update={"gravity": tuple(float(g) for g in gravity)})

    def with_scaled_masses(self, factor: float) -> Self:
        """Copy of the model with every link mass and inertia multiplied by factor."""
        links = tuple(
            link.model_copy(
                update={
                    "inertial": LinkInertia(
                        mass=link.inertial.mass * factor,
                        com=link.inertial.com,
                        inertia=tuple(
                            tuple(value * factor for value in row) for row in link.inertial.inertia
                        ),
                    )
                }
            )
            for link in self.links
        )
        return self.model_copy(update={"links": links})


@dataclass(frozen=True, eq=False)
class Body:
    """A link as seen by the recursive algorithms, with its parent joint pre-evaluated."""

    link_index: int
    parent: int  # index into KinematicTree.bodies, -1 for the base
    joint: Optional[JointSpec]
    dof_index: Optional[int]
    origin_rotation: np.ndarray
    origin_translation: np.ndarray
    axis: np.ndarray
    spatial_inertia: np.ndarray
    mass: float
    com: np.ndarray


@dataclass(frozen=True, eq=False)
class KinematicTree:
    bodies: tuple[Body, ...]
    dof_joint_names: tuple[str, ...]

    @property
    def dof(self) -> int:
        return len(self.dof_joint_names)


def skew(vector: np.ndarray) -> np.ndarray:
    x, y, z = vector
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def tree_problems(links, joints) -> list[str]:
    """Structural problems of a link/joint set; empty when it forms a single rooted tree."""
    problems = []
    link_names = [link.name for link in links]
    if not link_names:
        return ["robot has no links"]

    seen = set()
    for name in link_names:
        if name in seen:
            problems.append(f"duplicate link '{name}'")
        seen.add(name)
    joint_names = set()
    for joint in joints:
        if joint.name in joint_names:
            problems.append(f"duplicate joint '{joint.name}'")
        joint_names.add(joint.name)

    parent_of = {}
    for joint in joints:
        for end in (joint.parent, joint.child):
            if end not in seen:
                problems.append(f"joint '{joint.name}' references unknown link '{end}'")
        if joint.child in parent_of:
            problems.append(
                f"link '{joint.child}' is the child of both '{parent_of[joint.child]}' "
                f"and '{joint.name}'"
            )
        parent_of.setdefault(joint.child, joint.name)
    if problems:
        return problems

    roots = [name for name in link_names if name not in parent_of]
    if not roots:
        return ["no base link found, joints form a cycle"]
    if len(roots) > 1:
        return [f"disconnected tree, multiple base links: {roots}"]

    reachable = {link: [] for link in link_names}
    for joint in joints:
        reachable[joint.parent].append(joint.child)
    visited = set()
    stack = [roots[0]]
    while stack:
        name = stack.pop()
        if name in visited:
            continue
        visited.add(name)
        stack.extend(reachable[name])
    unreachable = [name for name in link_names if name not in visited]
    if unreachable:
        problems.append(f"links not connected to base '{roots[0]}' (cycle): {unreachable}")
    return problems


@functools.lru_cache(maxsize=32)
def kinematic_tree(model: RobotModel) -> KinematicTree:
    index_of = {link.name: i for i, link in enumerate(model.links)}
    children = {link.name: [] for link in model.links}
    parent_of = {}
    for joint in model.joints:
        children[joint.parent].append(joint)
        parent_of[joint.child] = joint
    root = next(link.name for link in model.links if link.name not in parent_of)

    bodies = []
    dof_names = []

    def _add(link_name: str, parent: int, joint: Optional[JointSpec]):
        inertial = model.links[index_of[link_name]].inertial
        dof_index = None
        if joint is None:
            rotation, translation, axis = np.eye(3), np.zeros(3), np.zeros(3)
        else:
            rotation = joint.origin_rotation()
            translation = np.asarray(joint.origin_xyz, dtype=float)
            axis = np.asarray(joint.axis, dtype=float)
            if not joint.is_fixed:
                dof_index = len(dof_names)
                dof_names.append(joint.name)
        bodies.append(
            Body(
                link_index=index_of[link_name],
                parent=parent,
                joint=joint,
                dof_index=dof_index,
                origin_rotation=rotation,
                origin_translation=translation,
                axis=axis,
                spatial_inertia=inertial.spatial_inertia(),
                mass=inertial.mass,
                com=np.asarray(inertial.com, dtype=float),
            )
        )
        body_index = len(bodies) - 1
        for child_joint in children[link_name]:
            _add(child_joint.child, body_index, child_joint)

    _add(root, -1, None)
    log.debug(
        "built kinematic tree for '%s': %d bodies, %d dof", model.name, len(bodies), len(dof_names)
    )
    return KinematicTree(bodies=tuple(bodies), dof_joint_names=tuple(dof_names))


def joint_vector(model: RobotModel, values, name: str = "q") -> np.ndarray:
    vector = np.asarray(values, dtype=float).reshape(-1)
    if vector.shape[0] != model.dof:
        raise InputError(
            f"{name} has length {vector.shape[0]}, model '{model.name}' has {model.dof} dof"
        )
    return vector


def body_transforms(model: RobotModel, q) -> list[np.ndarray]:
    """World transforms of every body, in kinematic tree order."""
    q = joint_vector(model, q)
    tree = kinematic_tree(model)
    transforms = []
    for body in tree.bodies:
        if body.parent < 0:
            transforms.append(np.eye(4))
            continue
        position = 0.0 if body.dof_index is None else q[body.dof_index]
        local = body.joint.origin_transform() @ body.joint.motion_transform(position)
        transforms.append(transforms[body.parent] @ local)
    return transforms


def forward_kinematics(model: RobotModel, q) -> list[np.ndarray]:
    """World-frame 4x4 transform of every link, in the order of ``model.links``."""
    tree = kinematic_tree(model)
    transforms = [None] * len(model.links)
    for body, transform in zip(tree.bodies, body_transforms(model, q)):
        transforms[body.link_index] = transform
    return transforms


def validate_model(model: RobotModel) -> list[Diagnostic]:
    diagnostics = list(model.notes)
    for problem in tree_problems(model.links, model.joints):
        diagnostics.append(Diagnostic(severity="error", element=model.name, message=problem))

    for joint in model.joints:
        norm = float(np.linalg.norm(joint.axis))
        if not joint.is_fixed and abs(norm - 1.0) > 1e-9:
            diagnostics.append(
                Diagnostic(
                    severity="error",
                    element=f"joint '{joint.name}'",
                    message=f"axis norm is {norm:.12g}, expected 1",
                )
            )

    parents = {joint.parent for joint in model.joints}
    children = {joint.child for joint in model.joints}
    for link in model.links:
        element = f"link '{link.name}'"
        inertial = link.inertial
        inertia = inertial.inertia_matrix()
        if inertial.mass < 0:
            diagnostics.append(
                Diagnostic(
                    severity="error", element=element, message=f"negative mass {inertial.mass}"
                )
            )
        asymmetry = float(np.max(np.abs(inertia - inertia.T)))
        if asymmetry > 1e-12:
            diagnostics.append(
                Diagnostic(
                    severity="error",
                    element=element,
                    message=f"inertia is not symmetric (max |I - I^T| = {asymmetry:.3g})",
                )
            )
            continue
        moments = np.linalg.eigvalsh(inertia)
        if moments[0] < -1e-12:
            diagnostics.append(
                Diagnostic(
                    severity="error",
                    element=element,
                    message=f"inertia has negative principal moment {moments[0]:.6g}",
                )
            )
        elif inertial.mass > 0:
            a, b, c = moments
            if a + b < c - 1e-9:
                diagnostics.append(
                    Diagnostic(
                        severity="error",
                        element=element,
                        message="principal moments violate the triangle inequality",
                    )
                )
        if inertial.mass == 0 and link.name in parents and link.name in children:
            diagnostics.append(
                Diagnostic(
                    severity="warning", element=element, message="intermediate link has zero mass"
                )
            )

    if not np.all(np.isfinite(model.gravity)):
        diagnostics.append(
            Diagnostic(severity="error", element=model.name, message="gravity is not finite")
        )

    for diagnostic in diagnostics:
        log.debug("model '%s' diagnostic: %s", model.name, diagnostic)
    return diagnostics


def _float_attr(
    element, attr: str, default: Optional[float], source: Optional[str]
) -> Optional[float]:
    raw = element.get(attr)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ParseError(
            f"<{element.tag}> attribute {attr}='{raw}' is not a number", source, element.sourceline
        )


def _triple_attr(element, attr: str, default: Vector3, source: Optional[str]) -> Vector3:
    if element is None or element.get(attr) is None:
        return default
    raw = element.get(attr)
    try:
        values = tuple(float(value) for value in raw.split())
    except ValueError:
        values = ()
    if len(values) != 3:
        raise ParseError(
            f"<{element.tag}> attribute {attr}='{raw}' is not a 3-vector",
            source,
            element.sourceline,
        )
    return values


def _required_attr(element, attr: str, source: Optional[str]) -> str:
    value = element.get(attr)
    if not value:
        raise ParseError(
            f"<{element.tag}> is missing attribute '{attr}'", source, element.sourceline
        )
    return value


def _parse_inertial(element, source: Optional[str]) -> LinkInertia:
    origin = element.find("origin")
    com = _triple_attr(origin, "xyz", _ZERO3, source)
    rpy = _triple_attr(origin, "rpy", _ZERO3, source)

    mass_el = element.find("mass")
    mass = 0.0 if mass_el is None else _float_attr(mass_el, "value", 0.0, source)
    if mass < 0:
        raise ParseError(f"negative mass {mass}", source, element.sourceline)

    inertia_el = element.find("inertia")
    inertia = np.zeros((3, 3))
    if inertia_el is not None:
        values = {
            key: _float_attr(inertia_el, key, 0.0, source)
            for key in ("ixx", "ixy", "ixz", "iyy", "iyz", "izz")
        }
        inertia = np.array(
            [
                [values["ixx"], values["ixy"], values["ixz"]],
                [values["ixy"], values["iyy"], values["iyz"]],
                [values["ixz"], values["iyz"], values["izz"]],
            ]
        )
    if any(rpy):
        rotation = Rotation.from_euler("xyz", rpy).as_matrix()
        inertia = rotation @ inertia @ rotation.T
        # rotation leaves tiny asymmetry behind
        inertia = 0.5 * (inertia + inertia.T)

    rows = tuple(tuple(float(v) for v in row) for row in inertia)
    return LinkInertia(mass=mass, com=com, inertia=rows)


def _parse_joint(element, source: Optional[str], notes: list[Diagnostic]) -> JointSpec:
    name = _required_attr(element, "name", source)
    kind = _required_attr(element, "type", source)
    if kind not in SUPPORTED_JOINT_KINDS:
        raise ParseError(
            f"joint '{name}' has unsupported kind '{kind}', "
            f"expected one of {SUPPORTED_JOINT_KINDS}",
            source,
            element.sourceline,
        )
    parent_el = element.find("parent")
    child_el = element.find("child")
    if parent_el is None or child_el is None:
        raise ParseError(f"joint '{name}' needs <parent> and <child>", source, element.sourceline)

    origin = element.find("origin")
    axis = np.asarray(_triple_attr(element.find("axis"), "xyz", (1.0, 0.0, 0.0), source))
    norm = float(np.linalg.norm(axis))
    if kind != "fixed":
        if norm < 1e-12:
            raise ParseError(f"joint '{name}' has a zero axis", source, element.sourceline)
        if abs(norm - 1.0) > 1e-9:
            log.warning("joint '%s' axis has norm %.6g, normalizing", name, norm)
            notes.append(
                Diagnostic(
                    severity="warning",
                    element=f"joint '{name}'",
                    message=f"axis norm was {norm:.6g}, normalized when parsing",
                )
            )
        axis = axis / norm
    elif norm > 1e-12:
        axis = axis / norm

    limit = element.find("limit")
    velocity_limit = effort_limit = None
    if limit is not None:
        velocity_limit = _float_attr(limit, "velocity", None, source)
        effort_limit = _float_attr(limit, "effort", None, source)

    return JointSpec(
        name=name,
        kind=kind,
        parent=_required_attr(parent_el, "link", source),
        child=_required_attr(child_el, "link", source),
        axis=tuple(float(a) for a in axis),
        origin_xyz=_triple_attr(origin, "xyz", _ZERO3, source),
        origin_rpy=_triple_attr(origin, "rpy", _ZERO3, source),
        velocity_limit=velocity_limit,
        effort_limit=effort_limit,
    )


def parse_urdf(
    text: str | bytes, source: Optional[str] = None, gravity: Vector3 = DEFAULT_GRAVITY
) -> RobotModel:
    """
    Parse a URDF document into a RobotModel.

    Only <link>/<inertial> and <joint> elements are read; visual, collision, transmission and
    any other elements are ignored.
    """
    data = text.encode("utf-8") if isinstance(text, str) else text
    try:
        root = etree.fromstring(data)
    except etree.XMLSyntaxError as err:
        raise ParseError(f"malformed XML: {err.msg}", source, err.lineno) from err

    if root.tag != "robot":
        raise ParseError(f"root element is <{root.tag}>, expected <robot>", source, root.sourceline)

    links = []
    has_inertial = {}
    link_lines = {}
    for element in root.findall("link"):
        name = _required_attr(element, "name", source)
        inertial_el = element.find("inertial")
        has_inertial[name] = inertial_el is not None
        link_lines[name] = element.sourceline
        inertial = LinkInertia() if inertial_el is None else _parse_inertial(inertial_el, source)
        links.append(Link(name=name, inertial=inertial))

    notes = []
    joints = [_parse_joint(element, source, notes) for element in root.findall("joint")]

    problems = tree_problems(links, joints)
    if problems:
        raise ParseError("; ".join(problems), source, root.sourceline)

    children = {joint.child for joint in joints}
    parents = {joint.parent for joint in joints}
    for link in links:
        # the base link never moves, so it may omit inertia
        if link.name in parents and link.name in children and not has_inertial[link.name]:
            raise ParseError(
                f"link '{link.name}' has child joints but no <inertial> block",
                source,
                link_lines[link.name],
            )

    model = RobotModel(
        name=root.get("name") or "robot",
        links=tuple(links),
        joints=tuple(joints),
        gravity=gravity,
        notes=tuple(notes),
    )
    log.debug(
        "parsed urdf '%s': %d links, %d joints, %d dof",
        model.name,
        len(links),
        len(joints),
        model.dof,
    )
    return model


def load_urdf(path: str | Path, gravity: Vector3 = DEFAULT_GRAVITY) -> RobotModel:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as err:
        raise InputError(f"{path}: cannot read robot description: {err}") from err
    return parse_urdf(data, source=str(path), gravity=gravity)


def model_to_json(model: RobotModel) -> str:
    """Canonical serialization of a RobotModel."""
    return model.model_dump_json(indent=2)


def model_from_json(text: str) -> RobotModel:
    return RobotModel.model_validate_json(text)
