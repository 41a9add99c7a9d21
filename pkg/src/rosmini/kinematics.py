"""Transform frame tree, URDF robot model parsing, and forward kinematics."""

from __future__ import annotations

import math
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable

QUAT_NORM_TOL = 1e-9


class KinematicsError(Exception):
    pass


class UnknownFrame(KinematicsError):
    pass


class FramesDisconnected(KinematicsError):
    pass


class CycleRejected(KinematicsError):
    def __init__(self, child: str, parent: str):
        super().__init__(f"edge {child} -> {parent} would close a cycle")
        self.child = child
        self.parent = parent


class UrdfError(KinematicsError):
    pass


class XmlSyntaxError(UrdfError):
    pass


class MultipleRoots(UrdfError):
    pass


class JointGraphNotTree(UrdfError):
    pass


@dataclass(frozen=True)
class Transform:
    """Rigid transform: translation in meters plus a unit quaternion (x, y, z, w)."""

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    @staticmethod
    def from_xyzw(tx, ty, tz, qx, qy, qz, qw) -> "Transform":
        return Transform((tx, ty, tz), _normalize((qx, qy, qz, qw)))

    @staticmethod
    def from_rpy(x: float, y: float, z: float, roll: float, pitch: float, yaw: float) -> "Transform":
        """URDF convention: fixed-axis rotations, R = Rz(yaw) Ry(pitch) Rx(roll)."""
        q = _quat_multiply(
            _quat_about((0.0, 0.0, 1.0), yaw),
            _quat_multiply(_quat_about((0.0, 1.0, 0.0), pitch), _quat_about((1.0, 0.0, 0.0), roll)),
        )
        return Transform((x, y, z), _normalize(q))

    def compose(self, other: "Transform") -> "Transform":
        """self ∘ other: apply other first, then self."""
        t = _rotate(self.rotation, other.translation)
        translation = (
            self.translation[0] + t[0],
            self.translation[1] + t[1],
            self.translation[2] + t[2],
        )
        rotation = _normalize(_quat_multiply(self.rotation, other.rotation))
        return Transform(translation, rotation)

    def inverse(self) -> "Transform":
        qi = _quat_conjugate(self.rotation)
        t = _rotate(qi, self.translation)
        return Transform((-t[0], -t[1], -t[2]), qi)

    def apply(self, point: tuple[float, float, float]) -> tuple[float, float, float]:
        r = _rotate(self.rotation, point)
        return (
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        )


def _normalize(q: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n == 0.0:
        raise KinematicsError("zero-norm quaternion")
    if abs(n - 1.0) <= QUAT_NORM_TOL:
        return q
    return (q[0] / n, q[1] / n, q[2] / n, q[3] / n)


def _quat_multiply(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return (
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    )


def _quat_conjugate(q):
    return (-q[0], -q[1], -q[2], q[3])


def _quat_about(axis, angle):
    half = angle / 2.0
    s = math.sin(half)
    return (axis[0] * s, axis[1] * s, axis[2] * s, math.cos(half))


def _rotate(q, v):
    # v' = q * (v, 0) * q+ expanded
    qx, qy, qz, qw = q
    vx, vy, vz = v
    tx = 2.0 * (qy * vz - qz * vy)
    ty = 2.0 * (qz * vx - qx * vz)
    tz = 2.0 * (qx * vy - qy * vx)
    return (
        vx + qw * tx + qy * tz - qz * ty,
        vy + qw * ty + qz * tx - qx * tz,
        vz + qw * tz + qx * ty - qy * tx,
    )


# ------------------------------------------------------------------ TF tree


@dataclass
class _Edge:
    parent: str
    transform: Transform
    stamp: float
    static: bool


class FrameTree:
    """Latest-value transform tree fed by tf messages.

    One writer, concurrent readers; reads snapshot the needed chains under a
    short lock. Child frames have exactly one parent; inserting an edge that
    would close a cycle is rejected and counted.
    """

    def __init__(self):
        self._edges: dict[str, _Edge] = {}
        self._lock = threading.Lock()
        self.cycles_rejected = 0

    def set_transform(
        self, child: str, parent: str, transform: Transform, stamp: float = 0.0, static: bool = False
    ) -> None:
        if child == parent:
            raise CycleRejected(child, parent)
        with self._lock:
            node = parent
            while node is not None:
                if node == child:
                    self.cycles_rejected += 1
                    raise CycleRejected(child, parent)
                edge = self._edges.get(node)
                node = edge.parent if edge else None
            self._edges[child] = _Edge(parent, transform, stamp, static)

    def ingest(self, tf_message: dict, static: bool = False) -> int:
        """Upsert every stamped transform of a tf2_msgs/TFMessage value."""
        accepted = 0
        for stamped in tf_message.get("transforms", []):
            try:
                child = stamped["child_frame_id"]
                parent = stamped["header"]["frame_id"]
                tr = stamped["transform"]
                t = tr["translation"]
                r = tr["rotation"]
                stamp = stamped["header"]["stamp"]
                stamp_s = stamp.sec + stamp.nsec * 1e-9 if hasattr(stamp, "sec") else 0.0
                transform = Transform.from_xyzw(
                    t["x"], t["y"], t["z"], r["x"], r["y"], r["z"], r["w"]
                )
                self.set_transform(child, parent, transform, stamp_s, static)
                accepted += 1
            except (CycleRejected, KinematicsError, KeyError, TypeError):
                continue
        return accepted

    def frames(self) -> list[str]:
        with self._lock:
            names = set(self._edges)
            names.update(e.parent for e in self._edges.values())
        return sorted(names)

    def _chain_to_root(self, frame: str) -> list[tuple[str, Transform]]:
        chain = []
        node = frame
        while True:
            edge = self._edges.get(node)
            if edge is None:
                break
            chain.append((node, edge.transform))
            node = edge.parent
        chain.append((node, None))
        return chain

    def lookup(self, target: str, source: str) -> Transform:
        """Transform mapping points in source coordinates into target coordinates."""
        with self._lock:
            known = set(self._edges)
            known.update(e.parent for e in self._edges.values())
            if target not in known:
                raise UnknownFrame(target)
            if source not in known:
                raise UnknownFrame(source)
            source_chain = self._chain_to_root(source)
            target_chain = self._chain_to_root(target)
        target_index = {name: i for i, (name, _) in enumerate(target_chain)}
        lca = None
        for i, (name, _) in enumerate(source_chain):
            if name in target_index:
                lca = name
                source_upto = source_chain[:i]
                target_upto = target_chain[: target_index[name]]
                break
        if lca is None:
            raise FramesDisconnected(f"{target} and {source} share no ancestor")
        up_from_source = Transform.identity()
        for _, transform in reversed(source_upto):
            up_from_source = up_from_source.compose(transform)
        up_from_target = Transform.identity()
        for _, transform in reversed(target_upto):
            up_from_target = up_from_target.compose(transform)
        return up_from_target.inverse().compose(up_from_source)


# --------------------------------------------------------------------- URDF


@dataclass(frozen=True)
class Box:
    size: tuple[float, float, float]


@dataclass(frozen=True)
class Cylinder:
    radius: float
    length: float


@dataclass(frozen=True)
class Sphere:
    radius: float


@dataclass(frozen=True)
class MeshRef:
    uri: str
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)


Geometry = Box | Cylinder | Sphere | MeshRef


@dataclass(frozen=True)
class Visual:
    geometry: Geometry
    origin: Transform
    color: tuple[float, float, float, float] | None = None


@dataclass(frozen=True)
class Link:
    name: str
    visuals: tuple[Visual, ...] = ()


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str  # fixed | revolute | continuous | prismatic
    parent: str
    child: str
    origin: Transform
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    lower: float | None = None
    upper: float | None = None


@dataclass
class RobotModel:
    name: str
    links: dict[str, Link]
    joints: dict[str, Joint]
    root: str
    warnings: list[str] = field(default_factory=list)

    def children_of(self, link: str) -> list[Joint]:
        return [j for j in self.joints.values() if j.parent == link]


def _parse_floats(text: str | None, count: int, default: tuple) -> tuple:
    if text is None:
        return default
    parts = text.split()
    if len(parts) != count:
        raise UrdfError(f"expected {count} numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise UrdfError(f"bad number in {text!r}") from None


def _parse_origin(element) -> Transform:
    if element is None:
        return Transform.identity()
    xyz = _parse_floats(element.get("xyz"), 3, (0.0, 0.0, 0.0))
    rpy = _parse_floats(element.get("rpy"), 3, (0.0, 0.0, 0.0))
    return Transform.from_rpy(*xyz, *rpy)


def _parse_geometry(element) -> Geometry | None:
    if element is None:
        return None
    box = element.find("box")
    if box is not None:
        return Box(_parse_floats(box.get("size"), 3, (0.0, 0.0, 0.0)))
    cyl = element.find("cylinder")
    if cyl is not None:
        return Cylinder(float(cyl.get("radius", 0.0)), float(cyl.get("length", 0.0)))
    sphere = element.find("sphere")
    if sphere is not None:
        return Sphere(float(sphere.get("radius", 0.0)))
    mesh = element.find("mesh")
    if mesh is not None:
        scale = _parse_floats(mesh.get("scale"), 3, (1.0, 1.0, 1.0))
        return MeshRef(mesh.get("filename", ""), scale)
    return None


def parse_urdf(xml_text: str) -> RobotModel:
    """Parse a URDF robot description: visuals and the joint tree."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as e:
        raise XmlSyntaxError(str(e)) from None
    if root.tag != "robot":
        raise UrdfError(f"top-level element is <{root.tag}>, not <robot>")
    warnings: list[str] = []
    materials: dict[str, tuple[float, float, float, float]] = {}
    for material in root.findall("material"):
        color = material.find("color")
        name = material.get("name")
        if name and color is not None:
            materials[name] = _parse_floats(color.get("rgba"), 4, (1.0, 1.0, 1.0, 1.0))

    links: dict[str, Link] = {}
    for link_el in root.findall("link"):
        name = link_el.get("name")
        if not name:
            raise UrdfError("link without a name")
        visuals = []
        for visual_el in link_el.findall("visual"):
            geometry = _parse_geometry(visual_el.find("geometry"))
            if geometry is None:
                warnings.append(f"link {name}: visual without geometry ignored")
                continue
            origin = _parse_origin(visual_el.find("origin"))
            color = None
            material = visual_el.find("material")
            if material is not None:
                color_el = material.find("color")
                if color_el is not None:
                    color = _parse_floats(color_el.get("rgba"), 4, (1.0, 1.0, 1.0, 1.0))
                elif material.get("name") in materials:
                    color = materials[material.get("name")]
            visuals.append(Visual(geometry, origin, color))
        if name in links:
            raise UrdfError(f"duplicate link {name!r}")
        links[name] = Link(name, tuple(visuals))

    joints: dict[str, Joint] = {}
    for joint_el in root.findall("joint"):
        name = joint_el.get("name")
        kind = joint_el.get("type", "")
        if not name:
            raise UrdfError("joint without a name")
        parent_el = joint_el.find("parent")
        child_el = joint_el.find("child")
        if parent_el is None or child_el is None:
            raise UrdfError(f"joint {name}: missing parent or child")
        parent = parent_el.get("link", "")
        child = child_el.get("link", "")
        if parent not in links or child not in links:
            raise JointGraphNotTree(f"joint {name}: unknown link {parent!r} or {child!r}")
        if kind in ("planar", "floating"):
            warnings.append(f"joint {name}: unsupported type {kind!r} treated as fixed")
            kind = "fixed"
        if kind not in ("fixed", "revolute", "continuous", "prismatic"):
            raise UrdfError(f"joint {name}: unknown type {kind!r}")
        axis_el = joint_el.find("axis")
        axis = _parse_floats(axis_el.get("xyz") if axis_el is not None else None, 3, (1.0, 0.0, 0.0))
        norm = math.sqrt(sum(a * a for a in axis))
        if norm == 0.0:
            raise UrdfError(f"joint {name}: zero axis")
        axis = (axis[0] / norm, axis[1] / norm, axis[2] / norm)
        lower = upper = None
        limit_el = joint_el.find("limit")
        if limit_el is not None and kind in ("revolute", "prismatic"):
            if limit_el.get("lower") is not None:
                lower = float(limit_el.get("lower"))
            if limit_el.get("upper") is not None:
                upper = float(limit_el.get("upper"))
        if name in joints:
            raise UrdfError(f"duplicate joint {name!r}")
        joints[name] = Joint(name, kind, parent, child, _parse_origin(joint_el.find("origin")), axis, lower, upper)

    children = [j.child for j in joints.values()]
    if len(set(children)) != len(children):
        raise JointGraphNotTree("a link is the child of more than one joint")
    roots = [name for name in links if name not in children]
    if not links:
        raise UrdfError("robot has no links")
    if len(roots) != 1:
        raise MultipleRoots(f"root candidates: {sorted(roots)}")
    model = RobotModel(root.get("name", ""), links, joints, roots[0], warnings)
    _check_tree(model)
    return model


def _check_tree(model: RobotModel) -> None:
    seen = {model.root}
    frontier = [model.root]
    while frontier:
        link = frontier.pop()
        for joint in model.children_of(link):
            if joint.child in seen:
                raise JointGraphNotTree(f"link {joint.child} reachable twice")
            seen.add(joint.child)
            frontier.append(joint.child)
    if seen != set(model.links):
        raise JointGraphNotTree(f"links not reachable from root: {sorted(set(model.links) - seen)}")


# ------------------------------------------------------------------------ FK


@dataclass
class FkStats:
    clamped: int = 0
    unknown_joints: int = 0


def joint_motion(joint: Joint, value: float, stats: FkStats | None = None) -> Transform:
    if joint.kind == "fixed":
        return Transform.identity()
    if joint.kind in ("revolute", "prismatic") and joint.lower is not None and joint.upper is not None:
        clamped = min(max(value, joint.lower), joint.upper)
        if clamped != value and stats is not None:
            stats.clamped += 1
        value = clamped
    if joint.kind in ("revolute", "continuous"):
        return Transform((0.0, 0.0, 0.0), _quat_about(joint.axis, value))
    if joint.kind == "prismatic":
        return Transform(
            (joint.axis[0] * value, joint.axis[1] * value, joint.axis[2] * value)
        )
    return Transform.identity()


def forward_kinematics(
    model: RobotModel,
    configuration: dict[str, float],
    stats: FkStats | None = None,
) -> dict[str, Transform]:
    """Root-relative pose of every link for the given joint positions.

    Missing movable joints default to zero; configuration entries naming
    unknown joints are ignored (and counted in stats when provided).
    """
    if stats is not None:
        stats.unknown_joints += sum(1 for name in configuration if name not in model.joints)
    poses = {model.root: Transform.identity()}
    frontier = [model.root]
    while frontier:
        link = frontier.pop()
        base = poses[link]
        for joint in model.children_of(link):
            value = configuration.get(joint.name, 0.0)
            pose = base.compose(joint.origin).compose(joint_motion(joint, value, stats))
            poses[joint.child] = pose
            frontier.append(joint.child)
    return poses


def joint_state_apply(model: RobotModel, joint_state: dict) -> dict[str, float]:
    """Pair name[i] with position[i] from a sensor_msgs/JointState value."""
    names = joint_state.get("name")
    positions = joint_state.get("position")
    if not isinstance(names, list) or not isinstance(positions, list):
        raise KinematicsError("value is not JointState-shaped (name/position arrays)")
    config: dict[str, float] = {}
    for name, position in zip(names, positions):
        if name in model.joints:
            config[name] = float(position)
    return config
