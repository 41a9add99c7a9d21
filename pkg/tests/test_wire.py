import random

import pytest

from rosmini import wire
from rosmini.msgs import SchemaRegistry, parse_msg
from rosmini.wire import (
    LengthOverrun,
    RosTime,
    SchemaMismatch,
    TrailingBytes,
    Truncated,
    default_value,
    deserialize,
    serialize,
    serialized_size,
)

from support.values import random_value


def test_int32_little_endian(registry):
    spec = registry.get("std_msgs/Int32")
    assert serialize(spec, {"data": 7}, registry) == bytes([7, 0, 0, 0])
    assert deserialize(spec, bytes([7, 0, 0, 0]), registry) == {"data": 7}


def test_string_length_prefix(registry):
    spec = registry.get("std_msgs/String")
    assert serialize(spec, {"data": "ab"}, registry) == b"\x02\x00\x00\x00ab"
    assert serialized_size(spec, {"data": ""}, registry) == 4


def test_int32_size(registry):
    spec = registry.get("std_msgs/Int32")
    assert serialized_size(spec, {"data": 0}, registry) == 4


def test_bool_single_octet(registry):
    spec = registry.get("std_msgs/Bool")
    assert serialize(spec, {"data": True}, registry) == b"\x01"
    assert serialize(spec, {"data": False}, registry) == b"\x00"


def test_fixed_array_no_prefix():
    reg = SchemaRegistry(include_corpus=False)
    spec = parse_msg("float64[3] v", "demo", "Vec")
    data = serialize(spec, {"v": [1.0, 2.0, 3.0]}, reg)
    assert len(data) == 24
    assert deserialize(spec, data, reg) == {"v": [1.0, 2.0, 3.0]}


def test_var_array_prefix():
    reg = SchemaRegistry(include_corpus=False)
    spec = parse_msg("int16[] v", "demo", "Shorts")
    data = serialize(spec, {"v": [1, -2]}, reg)
    assert data == b"\x02\x00\x00\x00\x01\x00\xfe\xff"


def test_uint8_array_is_bytes(registry):
    spec = registry.get("sensor_msgs/Image")
    v = default_value(spec, registry)
    v["data"] = b"\x00\x01\x02"
    out = serialize(spec, v, registry)
    back = deserialize(spec, out, registry)
    assert back["data"] == b"\x00\x01\x02"
    assert isinstance(back["data"], bytes)


def test_time_duration_fields(registry):
    spec = registry.get("std_msgs/Header")
    v = {"seq": 5, "stamp": RosTime(10, 20), "frame_id": "map"}
    back = deserialize(spec, serialize(spec, v, registry), registry)
    assert back["stamp"] == RosTime(10, 20)


def test_nested_message_inline(registry):
    spec = registry.get("geometry_msgs/Twist")
    v = default_value(spec, registry)
    v["linear"]["x"] = 0.5
    data = serialize(spec, v, registry)
    assert len(data) == 48
    assert deserialize(spec, data, registry)["linear"]["x"] == 0.5


def test_laser_scan_size_matches_field_sum(registry):
    spec = registry.get("sensor_msgs/LaserScan")
    v = default_value(spec, registry)
    v["ranges"] = [1.0] * 360
    # independent summation: header(4+8+4+0) + 7 float32 + 2 var arrays
    expected = (4 + 8 + 4) + 7 * 4 + (4 + 360 * 4) + 4
    assert serialized_size(spec, v, registry) == expected
    assert len(serialize(spec, v, registry)) == expected


def test_missing_field_rejected(registry):
    spec = registry.get("std_msgs/Int32")
    with pytest.raises(SchemaMismatch):
        serialize(spec, {}, registry)


def test_unknown_field_rejected(registry):
    spec = registry.get("std_msgs/Int32")
    with pytest.raises(SchemaMismatch):
        serialize(spec, {"data": 1, "bogus": 2}, registry)


def test_mismatch_reports_field_path(registry):
    spec = registry.get("geometry_msgs/Twist")
    v = default_value(spec, registry)
    v["angular"]["z"] = "oops"
    with pytest.raises(SchemaMismatch) as ei:
        serialize(spec, v, registry)
    assert ei.value.path == "angular.z"


def test_wrong_fixed_length_rejected():
    reg = SchemaRegistry(include_corpus=False)
    spec = parse_msg("float64[3] v", "demo", "Vec")
    with pytest.raises(SchemaMismatch):
        serialize(spec, {"v": [1.0]}, reg)


def test_trailing_bytes_error(registry):
    spec = registry.get("std_msgs/Int32")
    with pytest.raises(TrailingBytes):
        deserialize(spec, b"\x07\x00\x00\x00\xff", registry)


def test_truncated_scalar(registry):
    spec = registry.get("std_msgs/Int32")
    with pytest.raises(Truncated):
        deserialize(spec, b"\x07\x00", registry)


def test_declared_length_guard(registry):
    spec = registry.get("std_msgs/String")
    # declares 100 MB string in a 10-byte buffer: must fail before allocating
    with pytest.raises(LengthOverrun):
        deserialize(spec, b"\x00\x00\x00\x40abcdef", registry)


def test_invalid_utf8_is_typed_error(registry):
    spec = registry.get("std_msgs/String")
    with pytest.raises(wire.InvalidUtf8):
        deserialize(spec, b"\x02\x00\x00\x00\xff\xfe", registry)


def test_default_value_round_trips_every_corpus_type(registry):
    for name in registry.known_names():
        spec = registry.get(name)
        v = default_value(spec, registry)
        data = serialize(spec, v, registry)
        assert len(data) == serialized_size(spec, v, registry)
        assert deserialize(spec, data, registry) == v


def test_random_round_trip_all_corpus_types(registry):
    rng = random.Random(20260810)
    for name in registry.known_names():
        spec = registry.get(name)
        for _ in range(10):
            v = random_value(spec, registry, rng)
            data = serialize(spec, v, registry)
            assert len(data) == serialized_size(spec, v, registry)
            assert deserialize(spec, data, registry) == v


def test_fuzz_deserialize_never_crashes(registry):
    rng = random.Random(99)
    specs = [registry.get(n) for n in ("sensor_msgs/Imu", "nav_msgs/Odometry", "std_msgs/String")]
    for _ in range(2000):
        blob = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 80)))
        for spec in specs:
            try:
                deserialize(spec, blob, registry)
            except wire.WireError:
                pass
