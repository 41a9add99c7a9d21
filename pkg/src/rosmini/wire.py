"""ROS 1 binary wire format for schema-driven message values.

Message values are plain Python trees: records are dicts in field order,
variable/fixed arrays are lists (uint8 arrays are bytes), time and duration
are (sec, nsec) named tuples. Everything is little-endian, strings are
length-prefixed UTF-8 with no terminator, fixed arrays carry no prefix.
"""

from __future__ import annotations

import struct
import sys
from array import array
from typing import Iterator, NamedTuple

from .msgs.registry import SchemaRegistry
from .msgs.types import FieldSpec, MsgSpec


class RosTime(NamedTuple):
    sec: int
    nsec: int


class RosDuration(NamedTuple):
    sec: int
    nsec: int


class WireError(Exception):
    """Base class for serialization problems."""


class SchemaMismatch(WireError):
    def __init__(self, path: str, expected: str, found: str):
        super().__init__(f"{path or '<root>'}: expected {expected}, found {found}")
        self.path = path
        self.expected = expected
        self.found = found


class Truncated(WireError):
    def __init__(self, at_offset: int):
        super().__init__(f"buffer truncated at offset {at_offset}")
        self.at_offset = at_offset


class TrailingBytes(WireError):
    def __init__(self, count: int):
        super().__init__(f"{count} trailing bytes after message body")
        self.count = count


class LengthOverrun(WireError):
    def __init__(self, path: str, declared: int, remaining: int):
        super().__init__(f"{path}: declared length {declared} exceeds {remaining} remaining bytes")
        self.path = path


class InvalidUtf8(WireError):
    def __init__(self, path: str):
        super().__init__(f"{path}: invalid UTF-8 in string")
        self.path = path


_SCALAR_FMT = {
    "bool": "?",
    "int8": "b",
    "uint8": "B",
    "int16": "h",
    "uint16": "H",
    "int32": "i",
    "uint32": "I",
    "int64": "q",
    "uint64": "Q",
    "float32": "f",
    "float64": "d",
}
_SCALAR_SIZE = {k: struct.calcsize(v) for k, v in _SCALAR_FMT.items()}
_INT_NAMES = {"int8", "uint8", "int16", "uint16", "int32", "uint32", "int64", "uint64"}

# Bulk numeric arrays move through array() when the platform layout matches
# the wire layout exactly; struct remains the portable fallback.
_ARRAY_CODE = {}
if sys.byteorder == "little":
    for _name, _code in _SCALAR_FMT.items():
        if _name == "bool":
            continue
        try:
            if array(_code).itemsize == _SCALAR_SIZE[_name]:
                _ARRAY_CODE[_name] = _code
        except ValueError:
            pass


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def default_value(spec: MsgSpec, registry: SchemaRegistry):
    """Zero-valued message conforming to spec (empty var arrays, zeroed scalars)."""
    out = {}
    for f in spec.fields:
        out[f.name] = default_field(f, registry)
    return out


def default_field(f: FieldSpec, registry: SchemaRegistry):
    """Zero value for a single field (empty var array, zeroed scalar)."""
    t = f.type.name
    if f.is_array:
        n = f.array_len or 0
        if t == "uint8":
            return bytes(n)
        return [_default_scalar(f, registry) for _ in range(n)]
    return _default_scalar(f, registry)


def _default_scalar(f: FieldSpec, registry: SchemaRegistry):
    t = f.type.name
    if not f.type.is_builtin:
        return default_value(registry.get(f.type.full_name), registry)
    if t == "bool":
        return False
    if t in _INT_NAMES:
        return 0
    if t in ("float32", "float64"):
        return 0.0
    if t == "string":
        return ""
    if t == "time":
        return RosTime(0, 0)
    return RosDuration(0, 0)


def serialize(spec: MsgSpec, value, registry: SchemaRegistry) -> bytes:
    """Encode a conforming value tree to wire bytes."""
    out = bytearray()
    _write_record(out, spec, value, registry, "")
    return bytes(out)


def _write_record(out: bytearray, spec: MsgSpec, value, registry: SchemaRegistry, path: str) -> None:
    if not isinstance(value, dict):
        raise SchemaMismatch(path, spec.full_name, type(value).__name__)
    extra = set(value) - {f.name for f in spec.fields}
    if extra:
        raise SchemaMismatch(_join(path, sorted(extra)[0]), "declared field", "unknown field")
    for f in spec.fields:
        fpath = _join(path, f.name)
        if f.name not in value:
            raise SchemaMismatch(fpath, f.type.full_name, "missing field")
        _write_field(out, f, value[f.name], registry, fpath)


def _write_field(out: bytearray, f: FieldSpec, value, registry: SchemaRegistry, path: str) -> None:
    if f.is_array:
        _write_array(out, f, value, registry, path)
    else:
        _write_scalar(out, f, value, registry, path)


def _write_array(out: bytearray, f: FieldSpec, value, registry: SchemaRegistry, path: str) -> None:
    t = f.type.name
    if t == "uint8":
        if isinstance(value, (bytes, bytearray, memoryview)):
            data = bytes(value)
        elif isinstance(value, list):
            try:
                data = bytes(value)
            except (ValueError, TypeError):
                raise SchemaMismatch(path, "uint8 array", "values outside 0..255") from None
        else:
            raise SchemaMismatch(path, "bytes or list", type(value).__name__)
        if f.array_len is not None and len(data) != f.array_len:
            raise SchemaMismatch(path, f"array of length {f.array_len}", f"length {len(data)}")
        if f.array_len is None:
            out += struct.pack("<I", len(data))
        out += data
        return
    if not isinstance(value, (list, tuple)):
        raise SchemaMismatch(path, "list", type(value).__name__)
    if f.array_len is not None and len(value) != f.array_len:
        raise SchemaMismatch(path, f"array of length {f.array_len}", f"length {len(value)}")
    if f.array_len is None:
        out += struct.pack("<I", len(value))
    fmt = _SCALAR_FMT.get(t) if f.type.is_builtin else None
    if fmt and t != "bool":
        try:
            code = _ARRAY_CODE.get(t)
            if code is not None and len(value) > 64:
                out += array(code, value).tobytes()
            else:
                out += struct.pack(f"<{len(value)}{fmt}", *value)
        except struct.error as e:
            raise SchemaMismatch(path, t, str(e)) from None
        except (TypeError, OverflowError, ValueError) as e:
            raise SchemaMismatch(path, t, f"bad element ({e})") from None
        return
    scalar = FieldSpec(f.name, f.type)
    for i, item in enumerate(value):
        _write_scalar(out, scalar, item, registry, f"{path}[{i}]")


def _write_scalar(out: bytearray, f: FieldSpec, value, registry: SchemaRegistry, path: str) -> None:
    t = f.type.name
    if not f.type.is_builtin:
        _write_record(out, registry.get(f.type.full_name), value, registry, path)
        return
    try:
        if t == "bool":
            if not isinstance(value, (bool, int)) or value not in (0, 1, True, False):
                raise SchemaMismatch(path, "bool", repr(value))
            out += b"\x01" if value else b"\x00"
        elif t in _INT_NAMES:
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaMismatch(path, t, type(value).__name__)
            out += struct.pack("<" + _SCALAR_FMT[t], value)
        elif t in ("float32", "float64"):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaMismatch(path, t, type(value).__name__)
            out += struct.pack("<" + _SCALAR_FMT[t], value)
        elif t == "string":
            if not isinstance(value, str):
                raise SchemaMismatch(path, "str", type(value).__name__)
            data = value.encode("utf-8")
            out += struct.pack("<I", len(data))
            out += data
        elif t == "time":
            sec, nsec = _split_stamp(value, path)
            out += struct.pack("<II", sec, nsec)
        elif t == "duration":
            sec, nsec = _split_stamp(value, path)
            out += struct.pack("<ii", sec, nsec)
        else:  # pragma: no cover - parser admits only the names above
            raise SchemaMismatch(path, "builtin type", t)
    except struct.error as e:
        raise SchemaMismatch(path, t, f"{value!r} ({e})") from None


def _split_stamp(value, path: str) -> tuple[int, int]:
    if isinstance(value, (RosTime, RosDuration)):
        return value.sec, value.nsec
    if isinstance(value, (tuple, list)) and len(value) == 2:
        return int(value[0]), int(value[1])
    if isinstance(value, dict) and set(value) == {"sec", "nsec"}:
        return int(value["sec"]), int(value["nsec"])
    raise SchemaMismatch(path, "(sec, nsec)", repr(value))


def serialized_size(spec: MsgSpec, value, registry: SchemaRegistry) -> int:
    """Exact wire size of a conforming value, computed without encoding."""
    return _record_size(spec, value, registry, "")


def _record_size(spec: MsgSpec, value, registry: SchemaRegistry, path: str) -> int:
    if not isinstance(value, dict):
        raise SchemaMismatch(path, spec.full_name, type(value).__name__)
    total = 0
    for f in spec.fields:
        fpath = _join(path, f.name)
        if f.name not in value:
            raise SchemaMismatch(fpath, f.type.full_name, "missing field")
        total += _field_size(f, value[f.name], registry, fpath)
    return total


def _field_size(f: FieldSpec, value, registry: SchemaRegistry, path: str) -> int:
    t = f.type.name
    if f.is_array:
        prefix = 0 if f.array_len is not None else 4
        count = len(value)
        if f.array_len is not None and count != f.array_len:
            raise SchemaMismatch(path, f"array of length {f.array_len}", f"length {count}")
        if t in _SCALAR_SIZE:
            return prefix + count * _SCALAR_SIZE[t]
        scalar = FieldSpec(f.name, f.type)
        return prefix + sum(
            _scalar_size(scalar, item, registry, f"{path}[{i}]") for i, item in enumerate(value)
        )
    return _scalar_size(f, value, registry, path)


def _scalar_size(f: FieldSpec, value, registry: SchemaRegistry, path: str) -> int:
    t = f.type.name
    if not f.type.is_builtin:
        return _record_size(registry.get(f.type.full_name), value, registry, path)
    if t in _SCALAR_SIZE:
        return _SCALAR_SIZE[t]
    if t == "string":
        if not isinstance(value, str):
            raise SchemaMismatch(path, "str", type(value).__name__)
        return 4 + len(value.encode("utf-8"))
    return 8  # time, duration


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, path: str) -> bytes:
        """Read n declared bytes; fails before allocating when n overruns."""
        if n > len(self.data) - self.pos:
            raise LengthOverrun(path, n, len(self.data) - self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def fixed(self, n: int) -> bytes:
        """Read n bytes of fixed-size payload; short buffer means truncation."""
        if self.pos + n > len(self.data):
            raise Truncated(self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, path: str) -> int:
        if self.pos + 4 > len(self.data):
            raise Truncated(self.pos)
        (v,) = struct.unpack_from("<I", self.data, self.pos)
        self.pos += 4
        return v


def deserialize(spec: MsgSpec, data: bytes, registry: SchemaRegistry):
    """Decode one message body; trailing unconsumed bytes are an error."""
    reader = _Reader(bytes(data))
    value = _read_record(reader, spec, registry, "")
    if reader.pos != len(reader.data):
        raise TrailingBytes(len(reader.data) - reader.pos)
    return value


def _read_record(r: _Reader, spec: MsgSpec, registry: SchemaRegistry, path: str) -> dict:
    out = {}
    for f in spec.fields:
        out[f.name] = _read_field(r, f, registry, _join(path, f.name))
    return out


def _read_field(r: _Reader, f: FieldSpec, registry: SchemaRegistry, path: str):
    if f.is_array:
        count = f.array_len if f.array_len is not None else r.u32(path)
        t = f.type.name
        if t == "uint8":
            return r.take(count, path)
        if f.type.is_builtin and t in _SCALAR_FMT and t != "bool":
            size = _SCALAR_SIZE[t]
            chunk = r.take(count * size, path)
            code = _ARRAY_CODE.get(t)
            if code is not None and count > 64:
                return memoryview(chunk).cast(code).tolist()
            return list(struct.unpack(f"<{count}{_SCALAR_FMT[t]}", chunk))
        scalar = FieldSpec(f.name, f.type)
        return [_read_scalar(r, scalar, registry, f"{path}[{i}]") for i in range(count)]
    return _read_scalar(r, f, registry, path)


def _read_scalar(r: _Reader, f: FieldSpec, registry: SchemaRegistry, path: str):
    t = f.type.name
    if not f.type.is_builtin:
        return _read_record(r, registry.get(f.type.full_name), registry, path)
    if t == "bool":
        return r.fixed(1) != b"\x00"
    if t in _SCALAR_FMT:
        chunk = r.fixed(_SCALAR_SIZE[t])
        return struct.unpack("<" + _SCALAR_FMT[t], chunk)[0]
    if t == "string":
        n = r.u32(path)
        raw = r.take(n, path)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise InvalidUtf8(path) from None
    if t == "time":
        sec, nsec = struct.unpack("<II", r.fixed(8))
        return RosTime(sec, nsec)
    sec, nsec = struct.unpack("<ii", r.fixed(8))
    return RosDuration(sec, nsec)


def iter_leaf_paths(spec: MsgSpec, registry: SchemaRegistry, prefix: str = "") -> Iterator[str]:
    """Dotted paths of every leaf field; mainly for diagnostics and tests."""
    for f in spec.fields:
        fpath = _join(prefix, f.name)
        if f.type.is_builtin:
            yield fpath
        else:
            yield from iter_leaf_paths(registry.get(f.type.full_name), registry, fpath)
