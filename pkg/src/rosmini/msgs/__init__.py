"""Message definition parsing, md5 checksums, dependency text, and codegen."""

from .parser import BUNDLE_SEPARATOR, parse_definition_bundle, parse_msg, parse_srv
from .registry import (
    CORPUS_DIR,
    SchemaRegistry,
    compute_md5,
    compute_srv_md5,
    dependency_text,
)
from .types import (
    BUILTIN_TYPES,
    ConstantRangeError,
    ConstantSpec,
    CyclicDependencyError,
    DefinitionError,
    DefinitionSyntaxError,
    FieldSpec,
    MsgSpec,
    SrvSpec,
    TypeRef,
    UnresolvedTypeError,
)

__all__ = [
    "BUILTIN_TYPES",
    "BUNDLE_SEPARATOR",
    "CORPUS_DIR",
    "ConstantRangeError",
    "ConstantSpec",
    "CyclicDependencyError",
    "DefinitionError",
    "DefinitionSyntaxError",
    "FieldSpec",
    "MsgSpec",
    "SchemaRegistry",
    "SrvSpec",
    "TypeRef",
    "UnresolvedTypeError",
    "compute_md5",
    "compute_srv_md5",
    "dependency_text",
    "parse_definition_bundle",
    "parse_msg",
    "parse_srv",
]
