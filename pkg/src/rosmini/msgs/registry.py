"""Schema registry, conformant md5 checksums, and concatenated dependency text."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable

from .parser import BUNDLE_SEPARATOR, parse_msg, parse_srv
from .types import CyclicDependencyError, MsgSpec, SrvSpec, UnresolvedTypeError

CORPUS_DIR = Path(__file__).resolve().parent / "corpus"


class SchemaRegistry:
    """Resolves full type names to specs.

    Lookup order: explicitly added specs, then `<root>/<pkg>/msg/<Name>.msg`
    for each resolution root in order. Once a name is bound it never changes,
    which keeps the md5 cache sound.
    """

    def __init__(self, roots: Iterable[str | Path] = (), include_corpus: bool = True):
        self.roots = [Path(r) for r in roots]
        if include_corpus:
            self.roots.append(CORPUS_DIR)
        self._specs: dict[str, MsgSpec] = {}
        self._srvs: dict[str, SrvSpec] = {}
        self._md5: dict[str, str] = {}

    def add(self, spec: MsgSpec) -> MsgSpec:
        existing = self._specs.get(spec.full_name)
        if existing is not None:
            if existing.fields != spec.fields or existing.constants != spec.constants:
                raise ValueError(f"{spec.full_name} already registered with a different definition")
            return existing
        self._specs[spec.full_name] = spec
        return spec

    def add_all(self, specs: Iterable[MsgSpec]) -> None:
        for spec in specs:
            self.add(spec)

    def get(self, full_name: str) -> MsgSpec:
        spec = self._specs.get(full_name)
        if spec is not None:
            return spec
        if "/" in full_name:
            pkg, _, base = full_name.partition("/")
            for root in self.roots:
                path = root / pkg / "msg" / (base + ".msg")
                if path.is_file():
                    spec = parse_msg(path.read_text(), pkg, base)
                    self._specs[full_name] = spec
                    return spec
        raise UnresolvedTypeError(full_name)

    def get_srv(self, full_name: str) -> SrvSpec:
        srv = self._srvs.get(full_name)
        if srv is not None:
            return srv
        if "/" in full_name:
            pkg, _, base = full_name.partition("/")
            for root in self.roots:
                path = root / pkg / "srv" / (base + ".srv")
                if path.is_file():
                    srv = parse_srv(path.read_text(), pkg, base)
                    self._srvs[full_name] = srv
                    return srv
        raise UnresolvedTypeError(full_name)

    def known_names(self) -> list[str]:
        """Names of every definition reachable through cache and roots."""
        names = set(self._specs)
        for root in self.roots:
            if not root.is_dir():
                continue
            for path in root.glob("*/msg/*.msg"):
                names.add(f"{path.parent.parent.name}/{path.stem}")
        return sorted(names)

    def known_srv_names(self) -> list[str]:
        names = set(self._srvs)
        for root in self.roots:
            if not root.is_dir():
                continue
            for path in root.glob("*/srv/*.srv"):
                names.add(f"{path.parent.parent.name}/{path.stem}")
        return sorted(names)


def _md5_text(spec: MsgSpec, registry: SchemaRegistry, in_progress: list[str]) -> str:
    if spec.full_name in in_progress:
        raise CyclicDependencyError(in_progress + [spec.full_name])
    in_progress.append(spec.full_name)
    try:
        lines = [f"{c.type.name} {c.name}={c.value_text}" for c in spec.constants]
        for f in spec.fields:
            if f.type.is_builtin:
                lines.append(f"{f.type.name}{f.type_suffix} {f.name}")
            else:
                dep_md5 = _compute_md5(registry.get(f.type.full_name), registry, in_progress)
                lines.append(f"{dep_md5} {f.name}")
        return "\n".join(lines)
    finally:
        in_progress.pop()


def _compute_md5(spec: MsgSpec, registry: SchemaRegistry, in_progress: list[str]) -> str:
    cached = registry._md5.get(spec.full_name)
    if cached is not None:
        return cached
    digest = hashlib.md5(_md5_text(spec, registry, in_progress).encode()).hexdigest()
    # Cache only specs the registry itself resolves, so foreign specs with
    # the same name cannot poison it.
    if registry._specs.get(spec.full_name) is spec:
        registry._md5[spec.full_name] = digest
    return digest


def compute_md5(spec: MsgSpec, registry: SchemaRegistry) -> str:
    """Conformant md5 of a message type, recursive over dependencies."""
    return _compute_md5(spec, registry, [])


def compute_srv_md5(spec: SrvSpec, registry: SchemaRegistry) -> str:
    """Service md5: hash of request md5 text concatenated with response md5 text."""
    text = _md5_text(spec.request, registry, []) + _md5_text(spec.response, registry, [])
    return hashlib.md5(text.encode()).hexdigest()


def _collect_deps(spec: MsgSpec, registry: SchemaRegistry, seen: list[str], path: list[str]) -> None:
    if spec.full_name in path:
        raise CyclicDependencyError(path + [spec.full_name])
    path.append(spec.full_name)
    try:
        for f in spec.fields:
            if f.type.is_builtin:
                continue
            dep = registry.get(f.type.full_name)
            if dep.full_name in path:
                raise CyclicDependencyError(path + [dep.full_name])
            if dep.full_name not in seen:
                seen.append(dep.full_name)
                _collect_deps(dep, registry, seen, path)
    finally:
        path.pop()


def dependency_text(spec: MsgSpec, registry: SchemaRegistry) -> str:
    """Root source text plus every transitive dependency, separator-framed.

    This is the message_definition value a publisher sends in the TCPROS
    handshake. Dependencies appear once each, in first-encounter depth-first
    order.
    """
    seen: list[str] = []
    _collect_deps(spec, registry, seen, [])
    parts = [spec.source_text.rstrip("\n")]
    for dep_name in seen:
        dep = registry.get(dep_name)
        parts.append(BUNDLE_SEPARATOR)
        parts.append(f"MSG: {dep_name}")
        parts.append(dep.source_text.rstrip("\n"))
    return "\n".join(parts)
