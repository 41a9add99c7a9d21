import importlib
import random
import sys

import pytest

from rosmini import wire
from rosmini.msgs import SchemaRegistry, compute_md5, compute_srv_md5, parse_msg
from rosmini.msgs.codegen import emit_source, generate_tree

from support.values import random_value


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    registry = SchemaRegistry()
    out = tmp_path_factory.mktemp("gen")
    names = registry.known_names() + registry.known_srv_names()
    generate_tree(names, out, registry)
    sys.path.insert(0, str(out))
    importlib.invalidate_caches()
    yield registry, out
    sys.path.remove(str(out))
    for mod in [m for m in sys.modules if m.split(".")[0] in
                {"std_msgs", "geometry_msgs", "sensor_msgs", "nav_msgs", "tf2_msgs",
                 "std_srvs", "loader_msgs"}]:
        del sys.modules[mod]


def load_class(full_name: str):
    pkg, _, name = full_name.partition("/")
    module = importlib.import_module(f"{pkg}._{name}")
    return getattr(module, name)


def test_generated_md5_matches_dynamic(generated):
    registry, _ = generated
    for name in registry.known_names():
        cls = load_class(name)
        assert cls.MD5_SUM == compute_md5(registry.get(name), registry), name
        assert cls.FULL_TYPE_NAME == name


def test_generated_definition_matches_dependency_text(generated):
    registry, _ = generated
    from rosmini.msgs import dependency_text

    for name in ("std_msgs/Header", "nav_msgs/Odometry"):
        cls = load_class(name)
        assert cls.DEFINITION == dependency_text(registry.get(name), registry)


def test_emit_source_deterministic(generated):
    registry, _ = generated
    spec = registry.get("sensor_msgs/Imu")
    assert emit_source(spec, registry) == emit_source(spec, registry)


def test_generated_and_dynamic_serialization_identical(generated):
    registry, _ = generated
    rng = random.Random(777)
    for name in registry.known_names():
        spec = registry.get(name)
        cls = load_class(name)
        for _ in range(8):
            value = random_value(spec, registry, rng)
            expected = wire.serialize(spec, value, registry)
            container = cls.from_value(value)
            assert container.serialize() == expected, name
            back = cls.deserialize(expected)
            assert back.serialize() == expected, name
            assert wire.serialize(spec, back.to_value(), registry) == expected, name


def test_fixed_array_container_has_no_length_prefix(generated):
    registry, _ = generated
    cls = load_class("geometry_msgs/PoseWithCovariance")
    container = cls()
    assert len(container.covariance) == 36
    data = container.serialize()
    # pose (7 doubles) + 36 doubles, no prefixes anywhere
    assert len(data) == 7 * 8 + 36 * 8
    with pytest.raises(ValueError):
        cls(covariance=[0.0]).serialize()


def test_constants_exposed_with_parsed_values(tmp_path):
    registry = SchemaRegistry(include_corpus=False)
    spec = parse_msg(
        "uint8 DEBUG=1\nuint8 FATAL=16\nstring NAME=box bot\nfloat32 RATE=2.5\nint32 level",
        "demo", "Level",
    )
    registry.add(spec)
    source = emit_source(spec, registry)
    namespace: dict = {}
    exec(compile(source, "<generated>", "exec"), namespace)
    cls = namespace["Level"]
    assert cls.DEBUG == 1
    assert cls.FATAL == 16
    assert cls.NAME == "box bot"
    assert cls.RATE == 2.5
    assert cls(level=3).serialize() == b"\x03\x00\x00\x00"


def test_generated_service_classes(generated):
    registry, _ = generated
    import std_srvs

    srv = registry.get_srv("std_srvs/SetBool")
    expected = compute_srv_md5(srv, registry)
    assert std_srvs.SetBool.MD5_SUM == expected
    assert std_srvs.SetBool.Request is std_srvs.SetBoolRequest
    request = std_srvs.SetBoolRequest(data=True)
    assert request.serialize() == b"\x01"
    response = std_srvs.SetBoolResponse.deserialize(b"\x01\x02\x00\x00\x00ok")
    assert response.success is True
    assert response.message == "ok"


def test_generated_trailing_bytes_rejected(generated):
    cls = load_class("std_msgs/Int32")
    with pytest.raises(ValueError):
        cls.deserialize(b"\x01\x00\x00\x00\xff")


def test_generated_truncation_rejected(generated):
    cls = load_class("sensor_msgs/LaserScan")
    with pytest.raises(ValueError):
        cls.deserialize(b"\x01\x00")


def test_generated_declared_length_guard(generated):
    cls = load_class("std_msgs/String")
    with pytest.raises(ValueError):
        cls.deserialize(b"\xff\xff\xff\x7fabc")


def test_python_keyword_field_names_survive(tmp_path):
    registry = SchemaRegistry(include_corpus=False)
    spec = parse_msg("int32 from\nint32 import\nint32 plain", "demo", "Tricky")
    registry.add(spec)
    source = emit_source(spec, registry)
    namespace: dict = {}
    exec(compile(source, "<generated>", "exec"), namespace)
    cls = namespace["Tricky"]
    obj = cls(from_=1, import_=2, plain=3)
    data = obj.serialize()
    assert data == b"\x01\x00\x00\x00\x02\x00\x00\x00\x03\x00\x00\x00"
    assert cls.FIELD_NAMES == ("from", "import", "plain")
    assert cls.from_value({"from": 7, "import": 8, "plain": 9}).to_value() == {
        "from": 7, "import": 8, "plain": 9,
    }
