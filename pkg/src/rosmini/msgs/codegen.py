"""Build-time source generation: one self-contained Python module per message
or service type, with md5 and dependency text baked in as constants and
struct-based serializers equivalent to the dynamic wire path.
"""

from __future__ import annotations

import keyword
from pathlib import Path

from .registry import SchemaRegistry, compute_md5, compute_srv_md5, dependency_text
from .types import FieldSpec, MsgSpec, SrvSpec

_STRUCT_CODE = {
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
_SIZE = {"b": 1, "B": 1, "?": 1, "h": 2, "H": 2, "i": 4, "I": 4, "q": 8, "Q": 8, "f": 4, "d": 8}
_PY_TYPE = {
    "bool": "bool",
    "int8": "int", "uint8": "int", "int16": "int", "uint16": "int",
    "int32": "int", "uint32": "int", "int64": "int", "uint64": "int",
    "float32": "float", "float64": "float",
    "string": "str",
}

HEADER_COMMENT = "# Generated by rosmini msg gen. Do not edit by hand.\n"


def attr_name(field_name: str) -> str:
    return field_name + "_" if keyword.iskeyword(field_name) else field_name


def module_name(type_name: str) -> str:
    return "_" + type_name


class _Emitter:
    def __init__(self):
        self.lines: list[str] = []
        self.indent = 0

    def emit(self, text: str = "") -> None:
        self.lines.append(("    " * self.indent + text) if text else "")

    def block(self):
        emitter = self

        class _Block:
            def __enter__(self):
                emitter.indent += 1

            def __exit__(self, *exc):
                emitter.indent -= 1

        return _Block()

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _default_expr(f: FieldSpec) -> str:
    t = f.type.name
    if f.is_array:
        if t == "uint8":
            return f"field(default_factory=lambda: bytes({f.array_len or 0}))"
        if f.array_len is None:
            return "field(default_factory=list)"
        if f.type.is_builtin:
            zero = {"bool": "False", "string": "''"}.get(t, "0.0" if t.startswith("float") else "0")
            if t in ("time",):
                zero = "RosTime(0, 0)"
            elif t == "duration":
                zero = "RosDuration(0, 0)"
            return f"field(default_factory=lambda: [{zero}] * {f.array_len})"
        return f"field(default_factory=lambda: [{f.type.name}() for _ in range({f.array_len})])"
    if not f.type.is_builtin:
        return f"field(default_factory={f.type.name})"
    if t == "bool":
        return "False"
    if t == "string":
        return "''"
    if t == "time":
        return "field(default_factory=lambda: RosTime(0, 0))"
    if t == "duration":
        return "field(default_factory=lambda: RosDuration(0, 0))"
    return "0.0" if t.startswith("float") else "0"


def _annotation(f: FieldSpec) -> str:
    t = f.type.name
    if f.is_array:
        if t == "uint8":
            return "bytes"
        inner = _PY_TYPE.get(t) or ("RosTime" if t == "time" else "RosDuration" if t == "duration" else t)
        return f"list[{inner}]"
    if f.type.is_builtin:
        if t == "time":
            return "RosTime"
        if t == "duration":
            return "RosDuration"
        return _PY_TYPE[t]
    return f.type.name


def _scalar_runs(fields: list[FieldSpec]):
    """Group consecutive fixed-size scalar fields into struct format runs."""
    runs: list[list | FieldSpec] = []
    current: list | None = None
    for f in fields:
        code = _STRUCT_CODE.get(f.type.name) if f.type.is_builtin else None
        packable = (not f.is_array and (code or f.type.name in ("time", "duration"))) or (
            f.is_array and f.array_len is not None and code and f.type.name != "uint8"
        )
        if packable:
            if current is None:
                current = []
                runs.append(current)
            current.append(f)
        else:
            current = None
            runs.append(f)
    return runs


def _run_format(run: list[FieldSpec]) -> tuple[str, list[str], list[str]]:
    """(struct format, pack expressions, unpack target names per slot)."""
    fmt = "<"
    pack: list[str] = []
    slots: list[str] = []
    for f in run:
        name = attr_name(f.name)
        t = f.type.name
        if f.is_array:
            fmt += f"{f.array_len}{_STRUCT_CODE[t]}"
            pack.append(f"*self.{name}")
            slots.append(f"arr:{name}:{f.array_len}")
        elif t == "time" or t == "duration":
            fmt += "II" if t == "time" else "ii"
            pack.append(f"self.{name}.sec, self.{name}.nsec")
            slots.append(f"{'time' if t == 'time' else 'dur'}:{name}")
        else:
            fmt += _STRUCT_CODE[t]
            pack.append(f"self.{name}")
            slots.append(f"one:{name}")
    return fmt, pack, slots


def _emit_write_field(e: _Emitter, f: FieldSpec) -> None:
    name = attr_name(f.name)
    t = f.type.name
    if not f.is_array:
        if f.type.is_builtin and t == "string":
            e.emit(f"_b = self.{name}.encode('utf-8')")
            e.emit("out += struct.pack('<I', len(_b))")
            e.emit("out += _b")
        else:  # named type
            e.emit(f"self.{name}._write(out)")
        return
    if t == "uint8":
        e.emit(f"_b = bytes(self.{name})")
        if f.array_len is not None:
            e.emit(f"if len(_b) != {f.array_len}:")
            with e.block():
                e.emit(f"raise ValueError('{f.name} must hold exactly {f.array_len} bytes')")
        else:
            e.emit("out += struct.pack('<I', len(_b))")
        e.emit("out += _b")
        return
    if f.array_len is None and f.type.is_builtin and t in _STRUCT_CODE:
        e.emit(f"out += struct.pack('<I', len(self.{name}))")
        e.emit(f"out += struct.pack(f'<{{len(self.{name})}}{_STRUCT_CODE[t]}', *self.{name})")
        return
    # string/time/duration arrays and named-type arrays loop item by item
    if f.array_len is None:
        e.emit(f"out += struct.pack('<I', len(self.{name}))")
    else:
        e.emit(f"if len(self.{name}) != {f.array_len}:")
        with e.block():
            e.emit(f"raise ValueError('{f.name} must hold exactly {f.array_len} elements')")
    e.emit(f"for _item in self.{name}:")
    with e.block():
        if not f.type.is_builtin:
            e.emit("_item._write(out)")
        elif t == "string":
            e.emit("_b = _item.encode('utf-8')")
            e.emit("out += struct.pack('<I', len(_b))")
            e.emit("out += _b")
        elif t == "time":
            e.emit("out += struct.pack('<II', _item.sec, _item.nsec)")
        else:  # duration
            e.emit("out += struct.pack('<ii', _item.sec, _item.nsec)")


def _emit_read_field(e: _Emitter, f: FieldSpec, target: str) -> None:
    t = f.type.name
    if not f.is_array:
        if f.type.is_builtin and t == "string":
            e.emit(f"{target}, pos = _read_string(data, pos)")
        else:
            e.emit(f"{target}, pos = {f.type.name}._read(data, pos)")
        return
    if t == "uint8":
        if f.array_len is None:
            e.emit(f"{target}, pos = _read_bytes(data, pos)")
        else:
            e.emit(f"{target}, pos = _take(data, pos, {f.array_len})")
        return
    if f.type.is_builtin and t in _STRUCT_CODE:
        code = _STRUCT_CODE[t]
        if f.array_len is None:
            e.emit(f"{target}, pos = _read_scalar_array(data, pos, '{code}', {_SIZE[code]})")
        else:
            e.emit(
                f"{target} = list(struct.unpack_from('<{f.array_len}{code}', data, _bound(data, pos, {f.array_len * _SIZE[code]})))"
            )
            e.emit(f"pos += {f.array_len * _SIZE[code]}")
        return
    counter = "_n"
    if f.array_len is None:
        e.emit(f"{counter}, pos = _read_count(data, pos)")
    else:
        e.emit(f"{counter} = {f.array_len}")
    e.emit(f"{target} = []")
    e.emit(f"for _ in range({counter}):")
    with e.block():
        if not f.type.is_builtin:
            e.emit(f"_item, pos = {f.type.name}._read(data, pos)")
        elif t == "string":
            e.emit("_item, pos = _read_string(data, pos)")
        elif t == "time":
            e.emit("_item = RosTime(*struct.unpack_from('<II', data, _bound(data, pos, 8))); pos += 8")
        else:
            e.emit("_item = RosDuration(*struct.unpack_from('<ii', data, _bound(data, pos, 8))); pos += 8")
        e.emit(f"{target}.append(_item)")


_RUNTIME_HELPERS = '''
def _bound(data, pos, need):
    if pos + need > len(data):
        raise ValueError(f'truncated at offset {pos}')
    return pos


def _take(data, pos, need):
    _bound(data, pos, need)
    return data[pos:pos + need], pos + need


def _read_count(data, pos):
    _bound(data, pos, 4)
    (n,) = struct.unpack_from('<I', data, pos)
    if n > len(data) - pos - 4:
        raise ValueError(f'declared length {n} overruns buffer')
    return n, pos + 4


def _read_bytes(data, pos):
    n, pos = _read_count(data, pos)
    return data[pos:pos + n], pos + n


def _read_string(data, pos):
    raw, pos = _read_bytes(data, pos)
    return raw.decode('utf-8'), pos


def _read_scalar_array(data, pos, code, size):
    n, pos = _read_count(data, pos)
    _bound(data, pos, n * size)
    return list(struct.unpack_from(f'<{n}{code}', data, pos)), pos + n * size
'''


def _value_expr_to(f: FieldSpec) -> str:
    """Expression converting attribute `self.<attr>` to a dynamic-path value."""
    name = attr_name(f.name)
    t = f.type.name
    if f.is_array:
        if t == "uint8":
            return f"bytes(self.{name})"
        if not f.type.is_builtin:
            return f"[_x.to_value() for _x in self.{name}]"
        return f"list(self.{name})"
    if not f.type.is_builtin:
        return f"self.{name}.to_value()"
    return f"self.{name}"


def _value_expr_from(f: FieldSpec, src: str) -> str:
    t = f.type.name
    if f.is_array:
        if t == "uint8":
            return f"bytes({src})"
        if not f.type.is_builtin:
            return f"[{f.type.name}.from_value(_x) for _x in {src}]"
        if t == "time":
            return f"[RosTime(*_x) for _x in {src}]"
        if t == "duration":
            return f"[RosDuration(*_x) for _x in {src}]"
        return f"list({src})"
    if not f.type.is_builtin:
        return f"{f.type.name}.from_value({src})"
    if t == "time":
        return f"RosTime(*{src})"
    if t == "duration":
        return f"RosDuration(*{src})"
    return src


def _needs_time(spec: MsgSpec) -> tuple[bool, bool]:
    has_time = any(f.type.name == "time" for f in spec.fields)
    has_duration = any(f.type.name == "duration" for f in spec.fields)
    return has_time, has_duration


def _emit_class(e: _Emitter, spec: MsgSpec, registry: SchemaRegistry, *, class_name: str | None = None,
                type_constant: str | None = None, md5_constant: str | None = None,
                definition: str | None = None) -> None:
    name = class_name or spec.name
    e.emit("@dataclass")
    e.emit(f"class {name}:")
    with e.block():
        e.emit(f"FULL_TYPE_NAME = {(type_constant or spec.full_name)!r}")
        e.emit(f"MD5_SUM = {(md5_constant or compute_md5(spec, registry))!r}")
        e.emit(f"DEFINITION = {definition!r}" if definition is not None
               else f"DEFINITION = {dependency_text(spec, registry)!r}")
        e.emit(f"FIELD_NAMES = ({', '.join(repr(f.name) for f in spec.fields)}{',' if spec.fields else ''})")
        for c in spec.constants:
            e.emit(f"{attr_name(c.name)} = {c.value!r}")
        if spec.constants or spec.fields:
            e.emit()
        for f in spec.fields:
            default = _default_expr(f)
            e.emit(f"{attr_name(f.name)}: {_annotation(f)} = {default}")
        e.emit()
        e.emit("def serialize(self) -> bytes:")
        with e.block():
            e.emit("out = bytearray()")
            e.emit("try:")
            with e.block():
                e.emit("self._write(out)")
            e.emit("except struct.error as e:")
            with e.block():
                e.emit("raise ValueError(str(e)) from None")
            e.emit("return bytes(out)")
        e.emit()
        e.emit("def _write(self, out: bytearray) -> None:")
        with e.block():
            wrote = False
            for part in _scalar_runs(list(spec.fields)):
                wrote = True
                if isinstance(part, list):
                    fmt, pack, _ = _run_format(part)
                    e.emit(f"out += struct.pack({fmt!r}, {', '.join(pack)})")
                else:
                    _emit_write_field(e, part)
            if not wrote:
                e.emit("pass")
        e.emit()
        e.emit("@classmethod")
        e.emit("def deserialize(cls, data: bytes):")
        with e.block():
            e.emit("obj, pos = cls._read(data, 0)")
            e.emit("if pos != len(data):")
            with e.block():
                e.emit("raise ValueError(f'{len(data) - pos} trailing bytes')")
            e.emit("return obj")
        e.emit()
        e.emit("@classmethod")
        e.emit("def _read(cls, data: bytes, pos: int):")
        with e.block():
            if not spec.fields:
                e.emit("return cls(), pos")
            else:
                names: list[str] = []
                for part in _scalar_runs(list(spec.fields)):
                    if isinstance(part, list):
                        fmt, _, slots = _run_format(part)
                        size = sum(
                            (f.array_len or 1) * _SIZE[_STRUCT_CODE[f.type.name]]
                            if f.type.name in _STRUCT_CODE
                            else 8
                            for f in part
                        )
                        e.emit(f"_v = struct.unpack_from({fmt!r}, data, _bound(data, pos, {size}))")
                        e.emit(f"pos += {size}")
                        cursor = 0
                        for slot in slots:
                            kind, _, rest = slot.partition(":")
                            if kind == "one":
                                e.emit(f"_f_{rest} = _v[{cursor}]")
                                names.append(f"_f_{rest}")
                                cursor += 1
                            elif kind in ("time", "dur"):
                                cls_name = "RosTime" if kind == "time" else "RosDuration"
                                e.emit(f"_f_{rest} = {cls_name}(_v[{cursor}], _v[{cursor + 1}])")
                                names.append(f"_f_{rest}")
                                cursor += 2
                            else:  # arr:name:len
                                field_name, _, count = rest.partition(":")
                                e.emit(f"_f_{field_name} = list(_v[{cursor}:{cursor + int(count)}])")
                                names.append(f"_f_{field_name}")
                                cursor += int(count)
                    else:
                        target = f"_f_{attr_name(part.name)}"
                        _emit_read_field(e, part, target)
                        names.append(target)
                e.emit(f"return cls({', '.join(names)}), pos")
        e.emit()
        e.emit("def to_value(self) -> dict:")
        with e.block():
            if not spec.fields:
                e.emit("return {}")
            else:
                e.emit("return {")
                with e.block():
                    for f in spec.fields:
                        e.emit(f"{f.name!r}: {_value_expr_to(f)},")
                e.emit("}")
        e.emit()
        e.emit("@classmethod")
        e.emit("def from_value(cls, value: dict):")
        with e.block():
            if not spec.fields:
                e.emit("return cls()")
            else:
                e.emit("return cls(")
                with e.block():
                    for f in spec.fields:
                        e.emit(f"{_value_expr_from(f, f'value[{f.name!r}]')},")
                e.emit(")")


def _collect_imports(spec: MsgSpec) -> tuple[set[tuple[str, str]], bool, bool]:
    deps = set()
    has_time = has_duration = False
    for f in spec.fields:
        if f.type.is_builtin:
            if f.type.name == "time":
                has_time = True
            elif f.type.name == "duration":
                has_duration = True
        else:
            deps.add((f.type.package, f.type.name))
    return deps, has_time, has_duration


def emit_source(spec: MsgSpec | SrvSpec, registry: SchemaRegistry) -> str:
    """Deterministic Python module text for one message or service type."""
    e = _Emitter()
    e.emit(HEADER_COMMENT.rstrip("\n"))
    e.emit("from __future__ import annotations")
    e.emit()
    e.emit("import struct")
    e.emit("from dataclasses import dataclass, field")
    if isinstance(spec, SrvSpec):
        halves = [spec.request, spec.response]
    else:
        halves = [spec]
    deps: set[tuple[str, str]] = set()
    has_time = has_duration = False
    for half in halves:
        d, t, u = _collect_imports(half)
        deps |= d
        has_time = has_time or t
        has_duration = has_duration or u
    runtime_imports = []
    if has_time:
        runtime_imports.append("RosTime")
    if has_duration:
        runtime_imports.append("RosDuration")
    if runtime_imports:
        e.emit()
        e.emit(f"from rosmini.wire import {', '.join(sorted(runtime_imports))}")
    own_names = {h.name for h in halves} | ({spec.name} if isinstance(spec, SrvSpec) else set())
    external = sorted(d for d in deps if d[1] not in own_names)
    if external:
        e.emit()
        for pkg, name in external:
            e.emit(f"from {pkg}.{module_name(name)} import {name}")
    e.emit()
    e.emit(_RUNTIME_HELPERS.strip("\n"))
    e.emit()
    e.emit()
    if isinstance(spec, SrvSpec):
        md5 = compute_srv_md5(spec, registry)
        e.emit(f"SRV_TYPE_NAME = {spec.full_name!r}")
        e.emit(f"SRV_MD5_SUM = {md5!r}")
        e.emit()
        e.emit()
        _emit_class(e, spec.request, registry, class_name=spec.name + "Request",
                    type_constant=f"{spec.full_name}Request", md5_constant=md5,
                    definition=spec.request.source_text)
        e.emit()
        e.emit()
        _emit_class(e, spec.response, registry, class_name=spec.name + "Response",
                    type_constant=f"{spec.full_name}Response", md5_constant=md5,
                    definition=spec.response.source_text)
        e.emit()
        e.emit()
        e.emit(f"class {spec.name}:")
        with e.block():
            e.emit(f"FULL_TYPE_NAME = {spec.full_name!r}")
            e.emit(f"MD5_SUM = {md5!r}")
            e.emit(f"Request = {spec.name}Request")
            e.emit(f"Response = {spec.name}Response")
    else:
        _emit_class(e, spec, registry)
    return e.text()


def generate_tree(
    type_names: list[str],
    out_dir: str | Path,
    registry: SchemaRegistry,
    *,
    include_deps: bool = True,
) -> list[Path]:
    """Write generated modules (plus transitive deps) under out_dir.

    Layout: <out>/<package>/_<Name>.py with __init__ re-exports; sibling
    packages import each other absolutely, so out_dir must be on sys.path
    when the generated code is used.
    """
    out = Path(out_dir)
    todo: list[str] = []
    seen: set[str] = set()
    srvs: list[SrvSpec] = []
    for name in type_names:
        try:
            srv = registry.get_srv(name)
        except Exception:
            srv = None
        if srv is not None:
            srvs.append(srv)
            for half in (srv.request, srv.response):
                for f in half.fields:
                    if not f.type.is_builtin and f.type.full_name not in seen:
                        seen.add(f.type.full_name)
                        todo.append(f.type.full_name)
            continue
        if name not in seen:
            seen.add(name)
            todo.append(name)
    ordered: list[str] = []
    while todo:
        name = todo.pop(0)
        ordered.append(name)
        if include_deps:
            for f in registry.get(name).fields:
                if not f.type.is_builtin and f.type.full_name not in seen:
                    seen.add(f.type.full_name)
                    todo.append(f.type.full_name)
    written: list[Path] = []
    exports: dict[str, list[str]] = {}
    for name in ordered:
        spec = registry.get(name)
        pkg_dir = out / spec.package
        pkg_dir.mkdir(parents=True, exist_ok=True)
        path = pkg_dir / f"{module_name(spec.name)}.py"
        path.write_text(emit_source(spec, registry))
        written.append(path)
        exports.setdefault(spec.package, []).append(spec.name)
    for srv in srvs:
        pkg_dir = out / srv.package
        pkg_dir.mkdir(parents=True, exist_ok=True)
        path = pkg_dir / f"{module_name(srv.name)}.py"
        path.write_text(emit_source(srv, registry))
        written.append(path)
        exports.setdefault(srv.package, []).extend(
            [srv.name, srv.name + "Request", srv.name + "Response"]
        )
    for pkg, names in exports.items():
        init = out / pkg / "__init__.py"
        existing: list[str] = []
        if init.exists():
            existing = [
                line for line in init.read_text().splitlines() if line.startswith("from .")
            ]
        lines = set(existing)
        for name in names:
            base = name.removesuffix("Request").removesuffix("Response")
            lines.add(f"from .{module_name(base)} import {name}")
        body = HEADER_COMMENT + "\n".join(sorted(lines)) + "\n"
        init.write_text(body)
        written.append(init)
    return sorted(set(written))
