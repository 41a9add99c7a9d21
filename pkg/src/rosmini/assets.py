"""Asset loader: resolves mesh URIs on the machine holding the files, parses
STL/OBJ into normalized triangle meshes, serves them over a ROS service, and
caches results on the client side.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable
from urllib.parse import unquote, urlsplit

from . import wire
from .msgs import SchemaRegistry

SERVICE_NAME = "/iviz/get_model"
SERVICE_TYPE = "loader_msgs/GetModel"
MESH_TYPE = "loader_msgs/Mesh"
MAX_RESPONSE = 64 * 1024 * 1024
_STL_RECORD = struct.Struct("<12fH")


class AssetError(Exception):
    pass


class UnknownScheme(AssetError):
    pass


class NotFound(AssetError):
    pass


class PathEscapesRoot(AssetError):
    pass


class MalformedFile(AssetError):
    def __init__(self, where: int | str, reason: str):
        super().__init__(f"{where}: {reason}")
        self.where = where
        self.reason = reason


class EmptyMesh(AssetError):
    pass


@dataclass
class NormalizedMesh:
    """Flat float triples for vertices and unit normals, uint32 index triples."""

    vertices: list[float] = field(default_factory=list)
    normals: list[float] = field(default_factory=list)
    triangles: list[int] = field(default_factory=list)
    diffuse_color: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    degenerate_dropped: int = 0

    @property
    def vertex_count(self) -> int:
        return len(self.vertices) // 3

    @property
    def triangle_count(self) -> int:
        return len(self.triangles) // 3

    def to_value(self) -> dict:
        r, g, b, a = self.diffuse_color
        return {
            "vertices": list(self.vertices),
            "normals": list(self.normals),
            "triangles": list(self.triangles),
            "diffuse_color": {"r": r, "g": g, "b": b, "a": a},
        }

    @staticmethod
    def from_value(value: dict) -> "NormalizedMesh":
        c = value["diffuse_color"]
        return NormalizedMesh(
            vertices=list(value["vertices"]),
            normals=list(value["normals"]),
            triangles=list(value["triangles"]),
            diffuse_color=(c["r"], c["g"], c["b"], c["a"]),
        )


# -------------------------------------------------------------- uri handling


def resolve_uri(uri: str, package_roots: Iterable[str | Path]) -> Path:
    """Map package:// and file:// URIs to a real path inside a configured root."""
    roots = [Path(r).resolve() for r in package_roots]
    parts = urlsplit(uri)
    if parts.scheme == "file":
        candidate = Path(unquote(parts.path))
        resolved = candidate.resolve()
        if not any(resolved.is_relative_to(root) for root in roots):
            raise PathEscapesRoot(f"{uri} resolves outside every configured root")
        if not resolved.is_file():
            raise NotFound(uri)
        return resolved
    if parts.scheme == "package":
        pkg = parts.netloc
        rel = unquote(parts.path).lstrip("/")
        if not pkg:
            raise MalformedFile(uri, "package uri lacks a package name")
        for root in roots:
            candidate = (root / pkg / rel).resolve()
            if not candidate.is_relative_to(root):
                raise PathEscapesRoot(f"{uri} escapes {root}")
            if candidate.is_file():
                return candidate
        raise NotFound(uri)
    raise UnknownScheme(f"unsupported uri scheme {parts.scheme!r} in {uri}")


# ------------------------------------------------------------- mesh building


class _MeshBuilder:
    """Deduplicates vertices and accumulates area-weighted normals."""

    def __init__(self):
        self.positions: list[float] = []
        self.index_of: dict[tuple, int] = {}
        self.triangles: list[int] = []
        self.normal_acc: list[float] = []
        self.explicit_normals: list[float] | None = None
        self.degenerate = 0

    def vertex(self, p: tuple[float, float, float], key_extra=None) -> int:
        key = (p, key_extra)
        idx = self.index_of.get(key)
        if idx is None:
            idx = len(self.positions) // 3
            self.index_of[key] = idx
            self.positions.extend(p)
            self.normal_acc.extend((0.0, 0.0, 0.0))
        return idx

    def triangle(self, a: int, b: int, c: int) -> bool:
        pa = self.positions[3 * a:3 * a + 3]
        pb = self.positions[3 * b:3 * b + 3]
        pc = self.positions[3 * c:3 * c + 3]
        ux, uy, uz = pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]
        vx, vy, vz = pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]
        nx, ny, nz = uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx
        norm = math.sqrt(nx * nx + ny * ny + nz * nz)
        if norm < 1e-20 or a == b or b == c or a == c:
            self.degenerate += 1
            return False
        self.triangles.extend((a, b, c))
        # cross product magnitude is twice the area: natural weighting
        for idx in (a, b, c):
            self.normal_acc[3 * idx] += nx
            self.normal_acc[3 * idx + 1] += ny
            self.normal_acc[3 * idx + 2] += nz
        return True

    def build(self, color=(1.0, 1.0, 1.0, 1.0)) -> NormalizedMesh:
        if not self.triangles:
            raise EmptyMesh("no valid triangles")
        if self.explicit_normals is not None:
            normals = self.explicit_normals
        else:
            normals = []
            for i in range(0, len(self.normal_acc), 3):
                nx, ny, nz = self.normal_acc[i:i + 3]
                norm = math.sqrt(nx * nx + ny * ny + nz * nz)
                if norm < 1e-20:
                    normals.extend((0.0, 0.0, 1.0))
                else:
                    normals.extend((nx / norm, ny / norm, nz / norm))
        return NormalizedMesh(
            vertices=self.positions,
            normals=normals,
            triangles=self.triangles,
            diffuse_color=color,
            degenerate_dropped=self.degenerate,
        )


# --------------------------------------------------------------------- STL


def parse_stl(data: bytes) -> NormalizedMesh:
    """Binary and ASCII STL, auto-detected; normals recomputed from geometry."""
    if _looks_binary_stl(data):
        return _parse_stl_binary(data)
    if data[:5].lower() == b"solid":
        return _parse_stl_ascii(data)
    return _parse_stl_binary(data)


def _looks_binary_stl(data: bytes) -> bool:
    if len(data) < 84:
        return False
    if data[:5].lower() == b"solid":
        # "solid" header does not guarantee ASCII; trust the record arithmetic
        (count,) = struct.unpack_from("<I", data, 80)
        return 84 + 50 * count == len(data)
    return True


def _parse_stl_binary(data: bytes) -> NormalizedMesh:
    if len(data) < 84:
        raise MalformedFile(len(data), "binary STL shorter than its 84-byte preamble")
    (count,) = struct.unpack_from("<I", data, 80)
    if 84 + 50 * count > len(data):
        raise MalformedFile(80, f"triangle count {count} overruns file of {len(data)} bytes")
    builder = _MeshBuilder()
    offset = 84
    for _ in range(count):
        record = _STL_RECORD.unpack_from(data, offset)
        offset += 50
        coords = record[3:12]  # stored facet normal in 0:3 is ignored
        idx = [builder.vertex(tuple(coords[i:i + 3])) for i in (0, 3, 6)]
        builder.triangle(*idx)
    return builder.build()


def _parse_stl_ascii(data: bytes) -> NormalizedMesh:
    try:
        text = data.decode("utf-8", errors="replace")
    except Exception:  # pragma: no cover - replace never raises
        raise MalformedFile(0, "undecodable ASCII STL") from None
    builder = _MeshBuilder()
    pending: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        word = parts[0].lower()
        if word == "vertex":
            if len(parts) != 4:
                raise MalformedFile(lineno, f"vertex needs 3 coordinates: {raw.strip()!r}")
            try:
                p = (float(parts[1]), float(parts[2]), float(parts[3]))
            except ValueError:
                raise MalformedFile(lineno, f"bad vertex number in {raw.strip()!r}") from None
            pending.append(builder.vertex(p))
        elif word == "endfacet":
            if len(pending) != 3:
                raise MalformedFile(lineno, f"facet has {len(pending)} vertices, wanted 3")
            builder.triangle(*pending)
            pending = []
        elif word in ("solid", "facet", "outer", "endloop", "endsolid"):
            continue
        else:
            raise MalformedFile(lineno, f"unexpected token {parts[0]!r}")
    if pending:
        raise MalformedFile("eof", "dangling facet vertices")
    return builder.build()


# --------------------------------------------------------------------- OBJ


def parse_obj(text: str) -> NormalizedMesh:
    """Wavefront OBJ: v, vn, f with polygon fan-triangulation.

    Provided vertex normals are used when every face corner references one;
    otherwise normals are recomputed from the faces.
    """
    positions: list[tuple[float, float, float]] = []
    normals: list[tuple[float, float, float]] = []
    faces: list[list[tuple[int, int | None]]] = []
    all_corners_have_normals = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MalformedFile(lineno, "v needs 3 coordinates")
            try:
                positions.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise MalformedFile(lineno, f"bad vertex in {line!r}") from None
        elif tag == "vn":
            if len(parts) < 4:
                raise MalformedFile(lineno, "vn needs 3 components")
            try:
                normals.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise MalformedFile(lineno, f"bad normal in {line!r}") from None
        elif tag == "f":
            if len(parts) < 4:
                raise MalformedFile(lineno, "face needs at least 3 corners")
            corners = []
            for corner in parts[1:]:
                fields = corner.split("/")
                try:
                    vi = int(fields[0])
                except (ValueError, IndexError):
                    raise MalformedFile(lineno, f"bad face corner {corner!r}") from None
                ni = None
                if len(fields) >= 3 and fields[2]:
                    try:
                        ni = int(fields[2])
                    except ValueError:
                        raise MalformedFile(lineno, f"bad normal index {corner!r}") from None
                vi = vi if vi > 0 else len(positions) + 1 + vi
                if not 1 <= vi <= len(positions):
                    raise MalformedFile(lineno, f"vertex index {corner!r} out of range")
                if ni is not None:
                    ni = ni if ni > 0 else len(normals) + 1 + ni
                    if not 1 <= ni <= len(normals):
                        raise MalformedFile(lineno, f"normal index {corner!r} out of range")
                else:
                    all_corners_have_normals = False
                corners.append((vi - 1, None if ni is None else ni - 1))
            faces.append(corners)
        # other tags (vt, o, g, s, usemtl, mtllib) carry no geometry
    builder = _MeshBuilder()
    use_explicit = all_corners_have_normals and normals and faces
    for corners in faces:
        idx = [
            builder.vertex(positions[vi], key_extra=ni if use_explicit else None)
            for vi, ni in corners
        ]
        for k in range(1, len(corners) - 1):  # fan triangulation
            builder.triangle(idx[0], idx[k], idx[k + 1])
    if use_explicit:
        explicit: list[float] = []
        for (p, ni), _ in sorted(builder.index_of.items(), key=lambda kv: kv[1]):
            n = normals[ni]
            norm = math.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
            if norm < 1e-20:
                explicit.extend((0.0, 0.0, 1.0))
            else:
                explicit.extend((n[0] / norm, n[1] / norm, n[2] / norm))
        builder.explicit_normals = explicit
    return builder.build()


# -------------------------------------------------------------------- cache


class AssetCache:
    """Directory-backed (uri, checksum) -> payload map with atomic writes."""

    MAGIC = b"RMASSET1\n"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _prefix(self, uri: str) -> str:
        return hashlib.md5(uri.encode()).hexdigest()

    def _path(self, uri: str, checksum: str) -> Path:
        return self.directory / f"{self._prefix(uri)}-{checksum}.mesh"

    def get(self, uri: str, checksum: str | None = None) -> bytes | None:
        """Payload for uri; with a checksum, only a matching entry counts."""
        try:
            if checksum is not None:
                candidates = [self._path(uri, checksum)]
            else:
                candidates = sorted(self.directory.glob(f"{self._prefix(uri)}-*.mesh"))
            for path in candidates:
                payload = self._read_verified(path)
                if payload is not None:
                    return payload
                path.unlink(missing_ok=True)  # corrupted entries behave as misses
            return None
        except OSError:
            return None

    def _read_verified(self, path: Path) -> bytes | None:
        try:
            blob = path.read_bytes()
        except OSError:
            return None
        head = len(self.MAGIC)
        if not blob.startswith(self.MAGIC) or len(blob) < head + 33:
            return None
        digest = blob[head:head + 32]
        payload = blob[head + 33:]
        if hashlib.md5(payload).hexdigest().encode() != digest:
            return None
        return payload

    def put(self, uri: str, checksum: str, payload: bytes) -> None:
        """Store and evict other checksums of the same uri. Never raises."""
        try:
            for stale in self.directory.glob(f"{self._prefix(uri)}-*.mesh"):
                if stale.name != self._path(uri, checksum).name:
                    stale.unlink(missing_ok=True)
            blob = self.MAGIC + hashlib.md5(payload).hexdigest().encode() + b"\n" + payload
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as f:
                    f.write(blob)
                os.replace(tmp, self._path(uri, checksum))
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
        except OSError:
            pass  # cache degrades to pass-through


# ------------------------------------------------------------------ service


FORMAT_BY_SUFFIX = {".stl": "stl", ".obj": "obj"}


def load_mesh(path: Path) -> NormalizedMesh:
    suffix = path.suffix.lower()
    kind = FORMAT_BY_SUFFIX.get(suffix)
    if kind == "stl":
        return parse_stl(path.read_bytes())
    if kind == "obj":
        return parse_obj(path.read_text(errors="replace"))
    raise MalformedFile(str(path), f"no parser for {suffix!r}; request raw bytes instead")


def run_loader_service(node, package_roots, service_name: str = SERVICE_NAME):
    """Advertise the asset service on a node. Returns the service host."""
    roots = [Path(r) for r in package_roots]
    registry: SchemaRegistry = node.registry
    mesh_spec = registry.get(MESH_TYPE)

    def empty_mesh() -> dict:
        return wire.default_value(mesh_spec, registry)

    def failure(message: str) -> dict:
        return {
            "success": False,
            "message": message,
            "format": "",
            "checksum": "",
            "mesh": empty_mesh(),
            "raw": b"",
        }

    def handler(request: dict) -> dict:
        uri = request["uri"]
        want_raw = request["want_raw"]
        try:
            path = resolve_uri(uri, roots)
        except NotFound:
            return failure(f"asset not found: {uri}")
        except AssetError as e:
            return failure(str(e))
        try:
            raw = path.read_bytes()
        except OSError as e:
            return failure(f"cannot read {uri}: {e}")
        checksum = hashlib.md5(raw).hexdigest()
        fmt = FORMAT_BY_SUFFIX.get(path.suffix.lower(), path.suffix.lstrip(".").lower())
        if want_raw:
            if len(raw) > MAX_RESPONSE:
                return failure(f"asset of {len(raw)} bytes exceeds the response limit")
            return {
                "success": True,
                "message": "",
                "format": fmt,
                "checksum": checksum,
                "mesh": empty_mesh(),
                "raw": raw,
            }
        try:
            mesh = load_mesh(path)
        except AssetError as e:
            return failure(f"cannot parse {uri}: {e}")
        value = mesh.to_value()
        size = wire.serialized_size(mesh_spec, value, registry)
        if size > MAX_RESPONSE:
            return failure(f"mesh of {size} serialized bytes exceeds the response limit")
        return {
            "success": True,
            "message": "",
            "format": fmt,
            "checksum": checksum,
            "mesh": value,
            "raw": b"",
        }

    return node.advertise_service(service_name, SERVICE_TYPE, handler)


class AssetClient:
    """Fetches meshes through the loader service with a local cache."""

    def __init__(self, node, cache: AssetCache | None = None, service_name: str = SERVICE_NAME):
        self.node = node
        self.cache = cache
        self.service_name = service_name
        self.service_calls = 0
        self._mesh_spec = node.registry.get(MESH_TYPE)
        self._lock = threading.Lock()

    def fetch(self, uri: str, timeout: float | None = 30.0) -> NormalizedMesh:
        with self._lock:
            if self.cache is not None:
                payload = self.cache.get(uri)
                if payload is not None:
                    value = wire.deserialize(self._mesh_spec, payload, self.node.registry)
                    return NormalizedMesh.from_value(value)
            self.service_calls += 1
            reply = self.node.call_service(
                self.service_name, {"uri": uri, "want_raw": False}, SERVICE_TYPE, timeout=timeout
            )
            if not reply["success"]:
                raise AssetError(reply["message"])
            payload = wire.serialize(self._mesh_spec, reply["mesh"], self.node.registry)
            if self.cache is not None:
                self.cache.put(uri, reply["checksum"], payload)
            return NormalizedMesh.from_value(reply["mesh"])
