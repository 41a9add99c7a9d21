import math
import random

import numpy as np
import pytest

from rosmini.kinematics import (
    Box,
    CycleRejected,
    FkStats,
    FrameTree,
    FramesDisconnected,
    JointGraphNotTree,
    MeshRef,
    MultipleRoots,
    Transform,
    UnknownFrame,
    XmlSyntaxError,
    forward_kinematics,
    joint_state_apply,
    parse_urdf,
)
from rosmini.wire import RosTime

# ------------------------------------------------- independent matrix oracle


def quat_to_matrix(q):
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def to_homogeneous(t: Transform) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(t.rotation)
    m[:3, 3] = t.translation
    return m


def rot_about(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    one = 1 - c
    m = np.eye(4)
    m[:3, :3] = np.array([
        [c + x * x * one, x * y * one - z * s, x * z * one + y * s],
        [y * x * one + z * s, c + y * y * one, y * z * one - x * s],
        [z * x * one - y * s, z * y * one + x * s, c + z * z * one],
    ])
    return m


def random_transform(rng: random.Random) -> Transform:
    axis = [rng.uniform(-1, 1) for _ in range(3)]
    n = math.sqrt(sum(a * a for a in axis)) or 1.0
    axis = [a / n for a in axis]
    angle = rng.uniform(-math.pi, math.pi)
    s = math.sin(angle / 2)
    q = (axis[0] * s, axis[1] * s, axis[2] * s, math.cos(angle / 2))
    t = tuple(rng.uniform(-5, 5) for _ in range(3))
    return Transform(t, q)


def assert_close(t: Transform, m: np.ndarray, tol=1e-9):
    ours = to_homogeneous(t)
    assert np.abs(ours - m).max() <= tol


# ------------------------------------------------------------ transforms


def test_identity_compose():
    t = Transform.identity()
    assert t.compose(t) == t


def test_compose_matches_matrix_product():
    rng = random.Random(42)
    for _ in range(200):
        a, b = random_transform(rng), random_transform(rng)
        assert_close(a.compose(b), to_homogeneous(a) @ to_homogeneous(b), tol=1e-9)


def test_inverse_matches_matrix_inverse():
    rng = random.Random(43)
    for _ in range(200):
        a = random_transform(rng)
        assert_close(a.inverse(), np.linalg.inv(to_homogeneous(a)), tol=1e-9)


def test_quaternion_norm_preserved_over_long_chains():
    rng = random.Random(44)
    t = Transform.identity()
    for _ in range(10000):
        t = t.compose(random_transform(rng))
        q = t.rotation
        assert abs(math.sqrt(sum(c * c for c in q)) - 1.0) <= 1e-9


def test_rpy_quarter_turns():
    # extrinsic X-Y-Z: R = Rz(yaw) Ry(pitch) Rx(roll)
    t = Transform.from_rpy(0, 0, 0, 0, 0, math.pi / 2)
    assert np.abs(to_homogeneous(t) - rot_about((0, 0, 1), math.pi / 2)).max() < 1e-12
    t = Transform.from_rpy(0, 0, 0, math.pi / 2, 0, 0)
    assert np.abs(to_homogeneous(t) - rot_about((1, 0, 0), math.pi / 2)).max() < 1e-12
    combined = Transform.from_rpy(0, 0, 0, 0.3, 0.5, 0.7)
    expected = rot_about((0, 0, 1), 0.7) @ rot_about((0, 1, 0), 0.5) @ rot_about((1, 0, 0), 0.3)
    assert np.abs(to_homogeneous(combined) - expected).max() < 1e-12


# --------------------------------------------------------------------- tf


def test_tree_ingest_and_simple_chain():
    tree = FrameTree()
    tree.set_transform("base", "map", Transform((1, 0, 0), (0, 0, 0, 1)))
    tree.set_transform("laser", "base", Transform((0, 2, 0), (0, 0, 0, 1)))
    assert tree.frames() == ["base", "laser", "map"]
    t = tree.lookup("map", "laser")
    assert t.translation == (1.0, 2.0, 0.0)


def test_lookup_same_frame_is_identity():
    tree = FrameTree()
    tree.set_transform("a", "root", Transform((1, 2, 3), (0, 0, 0, 1)))
    t = tree.lookup("a", "a")
    assert t == Transform.identity()


def test_reparenting_replaces_edge():
    tree = FrameTree()
    tree.set_transform("c", "a", Transform((5, 0, 0), (0, 0, 0, 1)))  # keeps 'a' known
    tree.set_transform("x", "a", Transform((1, 0, 0), (0, 0, 0, 1)))
    tree.set_transform("x", "b", Transform((2, 0, 0), (0, 0, 0, 1)))
    assert tree.lookup("b", "x").translation == (2.0, 0.0, 0.0)
    with pytest.raises(FramesDisconnected):
        tree.lookup("a", "x")


def test_cycle_rejected():
    tree = FrameTree()
    tree.set_transform("base", "map", Transform())
    with pytest.raises(CycleRejected):
        tree.set_transform("map", "base", Transform())
    assert tree.cycles_rejected == 1


def test_unknown_frame():
    tree = FrameTree()
    tree.set_transform("a", "b", Transform())
    with pytest.raises(UnknownFrame):
        tree.lookup("a", "ghost")


def test_lookup_inverse_property():
    rng = random.Random(7)
    tree = FrameTree()
    frames = ["root"]
    for i in range(10):
        parent = rng.choice(frames)
        child = f"f{i}"
        tree.set_transform(child, parent, random_transform(rng))
        frames.append(child)
    for _ in range(50):
        a, b = rng.choice(frames), rng.choice(frames)
        ab = to_homogeneous(tree.lookup(a, b))
        ba = to_homogeneous(tree.lookup(b, a))
        assert np.abs(ab @ ba - np.eye(4)).max() <= 1e-9


def test_lookup_matches_matrix_oracle():
    rng = random.Random(8)
    for _ in range(30):
        tree = FrameTree()
        frames = {"root": np.eye(4)}
        for i in range(10):
            parent = rng.choice(list(frames))
            child = f"f{i}"
            t = random_transform(rng)
            tree.set_transform(child, parent, t)
            frames[child] = frames[parent] @ to_homogeneous(t)
        names = list(frames)
        a, b = rng.choice(names), rng.choice(names)
        expected = np.linalg.inv(frames[a]) @ frames[b]
        assert np.abs(to_homogeneous(tree.lookup(a, b)) - expected).max() <= 1e-9


def test_ingest_tf_message_value():
    tree = FrameTree()
    msg = {
        "transforms": [
            {
                "header": {"seq": 0, "stamp": RosTime(10, 0), "frame_id": "map"},
                "child_frame_id": "base",
                "transform": {
                    "translation": {"x": 1.0, "y": 0.0, "z": 0.0},
                    "rotation": {"x": 0.0, "y": 0.0, "z": 0.0, "w": 1.0},
                },
            }
        ]
    }
    assert tree.ingest(msg) == 1
    assert tree.lookup("map", "base").translation == (1.0, 0.0, 0.0)


# -------------------------------------------------------------------- urdf

MINI_URDF = """
<robot name="mini">
  <material name="red"><color rgba="1 0 0 1"/></material>
  <link name="base">
    <visual>
      <geometry><box size="0.2 0.2 0.1"/></geometry>
      <material name="red"/>
    </visual>
  </link>
  <link name="arm">
    <visual>
      <origin xyz="0 0 0.5" rpy="0 0 0"/>
      <geometry><mesh filename="package://demo/meshes/arm.stl" scale="1 1 2"/></geometry>
    </visual>
  </link>
  <joint name="swivel" type="revolute">
    <parent link="base"/>
    <child link="arm"/>
    <origin xyz="0 0 1"/>
    <axis xyz="0 0 1"/>
    <limit lower="-1.5" upper="1.5" effort="10" velocity="1"/>
  </joint>
</robot>
"""


def test_parse_minimal_one_link_robot():
    model = parse_urdf('<robot name="dot"><link name="only"/></robot>')
    assert model.root == "only"
    assert model.joints == {}
    assert len(model.links) == 1


def test_parse_two_link_revolute():
    model = parse_urdf(MINI_URDF)
    assert model.root == "base"
    joint = model.joints["swivel"]
    assert joint.kind == "revolute"
    assert joint.origin.translation == (0.0, 0.0, 1.0)
    assert joint.lower == -1.5 and joint.upper == 1.5
    assert model.links["base"].visuals[0].color == (1.0, 0.0, 0.0, 1.0)
    mesh = model.links["arm"].visuals[0].geometry
    assert isinstance(mesh, MeshRef)
    assert mesh.uri == "package://demo/meshes/arm.stl"
    assert mesh.scale == (1.0, 1.0, 2.0)


def test_planar_joint_becomes_fixed_with_warning():
    xml = """
    <robot name="r"><link name="a"/><link name="b"/>
      <joint name="j" type="planar"><parent link="a"/><child link="b"/></joint>
    </robot>"""
    model = parse_urdf(xml)
    assert model.joints["j"].kind == "fixed"
    assert any("planar" in w for w in model.warnings)


def test_multiple_roots_rejected():
    xml = '<robot name="r"><link name="a"/><link name="b"/></robot>'
    with pytest.raises(MultipleRoots):
        parse_urdf(xml)


def test_duplicate_child_rejected():
    xml = """
    <robot name="r"><link name="a"/><link name="b"/><link name="c"/>
      <joint name="j1" type="fixed"><parent link="a"/><child link="c"/></joint>
      <joint name="j2" type="fixed"><parent link="b"/><child link="c"/></joint>
    </robot>"""
    with pytest.raises(JointGraphNotTree):
        parse_urdf(xml)


def test_bad_xml_raises_syntax_error():
    with pytest.raises(XmlSyntaxError):
        parse_urdf("<robot><link")


def test_missing_axis_defaults_to_x():
    xml = """
    <robot name="r"><link name="a"/><link name="b"/>
      <joint name="j" type="continuous"><parent link="a"/><child link="b"/></joint>
    </robot>"""
    assert parse_urdf(xml).joints["j"].axis == (1.0, 0.0, 0.0)


# ---------------------------------------------------------------------- fk


def test_zero_configuration_composes_origins():
    model = parse_urdf(MINI_URDF)
    poses = forward_kinematics(model, {})
    assert poses["base"] == Transform.identity()
    assert poses["arm"].translation == (0.0, 0.0, 1.0)


def test_quarter_turn_revolute():
    xml = """
    <robot name="r"><link name="a"/><link name="b"/>
      <joint name="j" type="revolute">
        <parent link="a"/><child link="b"/>
        <origin xyz="1 0 0"/><axis xyz="0 0 1"/>
        <limit lower="-3.2" upper="3.2"/>
      </joint>
    </robot>"""
    model = parse_urdf(xml)
    poses = forward_kinematics(model, {"j": math.pi / 2})
    # joint at (1,0,0); a point at (1,0,0) in b maps to joint + quarter-turned x
    p = poses["b"].apply((1.0, 0.0, 0.0))
    assert abs(p[0] - 1.0) < 1e-12 and abs(p[1] - 1.0) < 1e-12 and abs(p[2]) < 1e-12


def test_prismatic_translates_along_axis():
    xml = """
    <robot name="r"><link name="a"/><link name="b"/>
      <joint name="lift" type="prismatic">
        <parent link="a"/><child link="b"/><axis xyz="0 0 1"/>
        <limit lower="0" upper="2"/>
      </joint>
    </robot>"""
    model = parse_urdf(xml)
    assert forward_kinematics(model, {"lift": 0.7})["b"].translation == (0.0, 0.0, 0.7)


def test_limits_clamp_and_count():
    xml = """
    <robot name="r"><link name="a"/><link name="b"/>
      <joint name="j" type="revolute">
        <parent link="a"/><child link="b"/><axis xyz="0 0 1"/>
        <limit lower="-0.5" upper="0.5"/>
      </joint>
    </robot>"""
    model = parse_urdf(xml)
    stats = FkStats()
    poses = forward_kinematics(model, {"j": 2.0}, stats)
    assert stats.clamped == 1
    capped = forward_kinematics(model, {"j": 0.5})
    assert poses["b"] == capped["b"]


def test_unknown_joint_names_ignored_with_counter():
    model = parse_urdf(MINI_URDF)
    stats = FkStats()
    forward_kinematics(model, {"swivel": 0.2, "phantom": 1.0}, stats)
    assert stats.unknown_joints == 1


def _random_chain_urdf(rng: random.Random, n_joints: int):
    kinds = ["revolute", "continuous", "prismatic", "fixed"]
    parts = ['<robot name="chain">', '<link name="link0"/>']
    joints = []
    for i in range(n_joints):
        kind = rng.choice(kinds)
        xyz = " ".join(f"{rng.uniform(-2, 2):.9f}" for _ in range(3))
        rpy = " ".join(f"{rng.uniform(-3, 3):.9f}" for _ in range(3))
        axis_raw = [rng.uniform(-1, 1) for _ in range(3)]
        while all(abs(a) < 1e-3 for a in axis_raw):
            axis_raw = [rng.uniform(-1, 1) for _ in range(3)]
        axis = " ".join(f"{a:.9f}" for a in axis_raw)
        parts.append(f'<link name="link{i + 1}"/>')
        limit = '<limit lower="-10" upper="10"/>' if kind in ("revolute", "prismatic") else ""
        parts.append(
            f'<joint name="j{i}" type="{kind}">'
            f'<parent link="link{i}"/><child link="link{i + 1}"/>'
            f'<origin xyz="{xyz}" rpy="{rpy}"/><axis xyz="{axis}"/>{limit}</joint>'
        )
        joints.append((f"j{i}", kind, axis_raw))
    parts.append("</robot>")
    return "\n".join(parts), joints


def test_fk_matches_matrix_oracle_on_random_chains():
    rng = random.Random(2024)
    for _ in range(100):
        n = rng.randrange(1, 11)
        xml, joints = _random_chain_urdf(rng, n)
        model = parse_urdf(xml)
        config = {name: rng.uniform(-3, 3) for name, kind, _ in joints if kind != "fixed"}
        poses = forward_kinematics(model, config)

        expected = np.eye(4)
        link = "link0"
        for i, (name, kind, axis_raw) in enumerate(joints):
            joint = model.joints[name]
            expected = expected @ to_homogeneous(joint.origin)
            value = config.get(name, 0.0)
            if kind in ("revolute", "continuous"):
                expected = expected @ rot_about(joint.axis, value)
            elif kind == "prismatic":
                motion = np.eye(4)
                motion[:3, 3] = np.asarray(joint.axis) * value
                expected = expected @ motion
            link = f"link{i + 1}"
            assert np.abs(to_homogeneous(poses[link]) - expected).max() <= 1e-9


def test_joint_state_apply():
    model = parse_urdf(MINI_URDF)
    assert joint_state_apply(model, {"name": ["swivel"], "position": [0.5]}) == {"swivel": 0.5}
    assert joint_state_apply(model, {"name": [], "position": []}) == {}
    # shorter sequence governs; unknown names ignored
    assert joint_state_apply(
        model, {"name": ["swivel", "ghost"], "position": [0.25]}
    ) == {"swivel": 0.25}
    with pytest.raises(Exception):
        joint_state_apply(model, {"data": 5})
