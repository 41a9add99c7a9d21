"""Parser for `.msg` and `.srv` definition text."""

from __future__ import annotations

from .types import (
    BUILTIN_TYPES,
    IDENTIFIER_RE,
    INT_RANGES,
    TYPE_ALIASES,
    ConstantRangeError,
    ConstantSpec,
    DefinitionSyntaxError,
    FieldSpec,
    MsgSpec,
    SrvSpec,
    TypeRef,
)

BUNDLE_SEPARATOR = "=" * 80

_CONST_TYPES = BUILTIN_TYPES - {"time", "duration"}


def _strip_comment(line: str) -> str:
    idx = line.find("#")
    return line if idx < 0 else line[:idx]


def _parse_type(token: str, package: str, lineno: int) -> tuple[TypeRef, bool, int | None]:
    """Split a type token into (ref, is_array, array_len)."""
    base = token
    is_array = False
    array_len: int | None = None
    if "[" in token:
        base, _, rest = token.partition("[")
        if not rest.endswith("]"):
            raise DefinitionSyntaxError(lineno, f"malformed array suffix in {token!r}")
        inner = rest[:-1]
        is_array = True
        if inner:
            if not inner.isdigit() or int(inner) < 1:
                raise DefinitionSyntaxError(lineno, f"bad fixed-array length in {token!r}")
            array_len = int(inner)
    base = TYPE_ALIASES.get(base, base)
    if base in BUILTIN_TYPES:
        return TypeRef(base), is_array, array_len
    if base == "Header":
        return TypeRef("Header", "std_msgs"), is_array, array_len
    if "/" in base:
        pkg, _, name = base.partition("/")
    else:
        pkg, name = package, base
    if not IDENTIFIER_RE.match(pkg) or not IDENTIFIER_RE.match(name):
        raise DefinitionSyntaxError(lineno, f"invalid type name {token!r}")
    return TypeRef(name, pkg), is_array, array_len


def _parse_constant(orig: str, clean: str, lineno: int) -> ConstantSpec:
    head = clean.split("=", 1)[0]
    parts = head.split()
    if len(parts) != 2:
        raise DefinitionSyntaxError(lineno, f"malformed constant declaration: {orig.strip()!r}")
    type_token, name = parts
    base = TYPE_ALIASES.get(type_token, type_token)
    if base not in _CONST_TYPES:
        raise DefinitionSyntaxError(lineno, f"{type_token!r} is not a legal constant type")
    if not IDENTIFIER_RE.match(name):
        raise DefinitionSyntaxError(lineno, f"invalid constant name {name!r}")
    if base == "string":
        # String constants take everything after '=' to end of line, trimmed;
        # '#' is part of the value, not a comment.
        raw = orig.split("=", 1)[1]
        text = raw.strip()
        return ConstantSpec(name, TypeRef(base), text, text)
    raw = clean.split("=", 1)[1]
    text = raw.strip()
    if not text:
        raise DefinitionSyntaxError(lineno, "constant has no value")
    try:
        if base == "bool":
            lowered = text.lower()
            if lowered in ("true", "1"):
                value: bool | int | float = True
            elif lowered in ("false", "0"):
                value = False
            else:
                raise ValueError(text)
        elif base in ("float32", "float64"):
            value = float(text)
        else:
            value = int(text)
    except ValueError:
        raise DefinitionSyntaxError(lineno, f"cannot parse {text!r} as {base}") from None
    if base in INT_RANGES:
        lo, hi = INT_RANGES[base]
        if not lo <= value <= hi:
            raise ConstantRangeError(f"line {lineno}: {name}={text} out of range for {base}")
    return ConstantSpec(name, TypeRef(base), text, value)


def parse_msg(text: str, package: str, name: str) -> MsgSpec:
    """Parse one message definition into a MsgSpec.

    source_text keeps the input verbatim; comments and blank lines are
    ignored for fields and constants.
    """
    fields: list[FieldSpec] = []
    constants: list[ConstantSpec] = []
    seen_fields: set[str] = set()
    seen_constants: set[str] = set()
    for lineno, orig in enumerate(text.splitlines(), start=1):
        clean = _strip_comment(orig).strip()
        if not clean:
            continue
        if "=" in clean:
            const = _parse_constant(orig, clean, lineno)
            if const.name in seen_constants:
                raise DefinitionSyntaxError(lineno, f"duplicate constant {const.name!r}")
            seen_constants.add(const.name)
            constants.append(const)
            continue
        parts = clean.split()
        if len(parts) != 2:
            raise DefinitionSyntaxError(lineno, f"expected 'type name', got {clean!r}")
        type_token, field_name = parts
        if not IDENTIFIER_RE.match(field_name):
            raise DefinitionSyntaxError(lineno, f"invalid field name {field_name!r}")
        ref, is_array, array_len = _parse_type(type_token, package, lineno)
        if field_name in seen_fields:
            raise DefinitionSyntaxError(lineno, f"duplicate field {field_name!r}")
        seen_fields.add(field_name)
        fields.append(FieldSpec(field_name, ref, is_array, array_len))
    return MsgSpec(package, name, tuple(fields), tuple(constants), text)


def parse_srv(text: str, package: str, name: str) -> SrvSpec:
    """Parse a service definition; `---` separates request from response."""
    request_lines: list[str] = []
    response_lines: list[str] = []
    target = request_lines
    found = False
    for line in text.splitlines():
        if not found and line.strip() == "---":
            found = True
            target = response_lines
            continue
        target.append(line)
    if not found:
        raise DefinitionSyntaxError(1, "service definition has no '---' separator")
    request = parse_msg("\n".join(request_lines), package, name + "Request")
    response = parse_msg("\n".join(response_lines), package, name + "Response")
    return SrvSpec(package, name, request, response)


def parse_definition_bundle(text: str, root_name: str) -> dict[str, MsgSpec]:
    """Parse concatenated definition text (root + `MSG:` dependency blocks).

    This is the inverse of dependency_text and what a publisher sends as
    message_definition in the handshake. Returns full name -> MsgSpec for
    the root and every embedded dependency.
    """
    if "/" not in root_name:
        raise DefinitionSyntaxError(1, f"root name {root_name!r} must be package/Name")
    segments: list[list[str]] = [[]]
    for line in text.splitlines():
        if line.rstrip() == BUNDLE_SEPARATOR:
            segments.append([])
        else:
            segments[-1].append(line)
    root_pkg, _, root_base = root_name.partition("/")
    specs: dict[str, MsgSpec] = {
        root_name: parse_msg("\n".join(segments[0]), root_pkg, root_base)
    }
    for idx, seg in enumerate(segments[1:], start=1):
        body = list(seg)
        while body and not body[0].strip():
            body.pop(0)
        if not body or not body[0].startswith("MSG:"):
            raise DefinitionSyntaxError(1, f"dependency block {idx} missing 'MSG:' line")
        dep_name = body[0][len("MSG:"):].strip()
        if "/" not in dep_name:
            raise DefinitionSyntaxError(1, f"bad dependency name {dep_name!r}")
        pkg, _, base = dep_name.partition("/")
        spec = parse_msg("\n".join(body[1:]), pkg, base)
        specs.setdefault(dep_name, spec)
    return specs
