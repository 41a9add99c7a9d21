"""Typed schemas for ROS 1 message and service definitions."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

BUILTIN_TYPES = frozenset({
    "bool", "int8", "uint8", "int16", "uint16", "int32", "uint32",
    "int64", "uint64", "float32", "float64", "string", "time", "duration",
})

# Legacy spellings normalized at parse time.
TYPE_ALIASES = {"byte": "int8", "char": "uint8"}

INT_RANGES = {
    "int8": (-(2**7), 2**7 - 1),
    "uint8": (0, 2**8 - 1),
    "int16": (-(2**15), 2**15 - 1),
    "uint16": (0, 2**16 - 1),
    "int32": (-(2**31), 2**31 - 1),
    "uint32": (0, 2**32 - 1),
    "int64": (-(2**63), 2**63 - 1),
    "uint64": (0, 2**64 - 1),
}

IDENTIFIER_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")


class DefinitionError(Exception):
    """Base class for message-definition problems."""


class DefinitionSyntaxError(DefinitionError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ConstantRangeError(DefinitionError):
    """Numeric constant does not fit its declared type."""


class UnresolvedTypeError(DefinitionError):
    def __init__(self, full_name: str):
        super().__init__(f"unresolved message type {full_name!r}")
        self.full_name = full_name


class CyclicDependencyError(DefinitionError):
    def __init__(self, path: list[str]):
        super().__init__("cyclic message dependency: " + " -> ".join(path))
        self.path = path


@dataclass(frozen=True)
class TypeRef:
    """A field type: builtin (package is None) or a named message type."""

    name: str
    package: str | None = None

    @property
    def is_builtin(self) -> bool:
        return self.package is None

    @property
    def full_name(self) -> str:
        return self.name if self.package is None else f"{self.package}/{self.name}"


@dataclass(frozen=True)
class FieldSpec:
    """One declared field. array_len is None for variable arrays."""

    name: str
    type: TypeRef
    is_array: bool = False
    array_len: int | None = None

    @property
    def type_suffix(self) -> str:
        if not self.is_array:
            return ""
        return "[]" if self.array_len is None else f"[{self.array_len}]"


@dataclass(frozen=True)
class ConstantSpec:
    name: str
    type: TypeRef
    value_text: str
    value: bool | int | float | str


@dataclass(frozen=True)
class MsgSpec:
    package: str
    name: str
    fields: tuple[FieldSpec, ...] = ()
    constants: tuple[ConstantSpec, ...] = ()
    source_text: str = ""

    @property
    def full_name(self) -> str:
        return f"{self.package}/{self.name}"

    def field_map(self) -> dict[str, FieldSpec]:
        return {f.name: f for f in self.fields}


@dataclass(frozen=True)
class SrvSpec:
    package: str
    name: str
    request: MsgSpec = field(default=None)  # type: ignore[assignment]
    response: MsgSpec = field(default=None)  # type: ignore[assignment]

    @property
    def full_name(self) -> str:
        return f"{self.package}/{self.name}"
