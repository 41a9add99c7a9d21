import math
import random
import struct
from pathlib import Path

import pytest

from rosmini.assets import (
    AssetCache,
    AssetError,
    EmptyMesh,
    MalformedFile,
    NotFound,
    PathEscapesRoot,
    UnknownScheme,
    parse_obj,
    parse_stl,
    resolve_uri,
)

ASSETS = Path(__file__).parent / "assets"


# -------------------------------------------------------------- resolve_uri


def test_file_uri_inside_root(tmp_path):
    target = tmp_path / "a.stl"
    target.write_bytes(b"x")
    assert resolve_uri(f"file://{target}", [tmp_path]) == target.resolve()


def test_file_uri_outside_root_rejected(tmp_path):
    outside = tmp_path.parent / "escape.stl"
    with pytest.raises(PathEscapesRoot):
        resolve_uri(f"file://{outside}", [tmp_path])


def test_package_uri_resolution(tmp_path):
    mesh = tmp_path / "demo" / "meshes" / "x.obj"
    mesh.parent.mkdir(parents=True)
    mesh.write_text("v 0 0 0")
    assert resolve_uri("package://demo/meshes/x.obj", [tmp_path]) == mesh.resolve()


def test_package_uri_first_root_wins(tmp_path):
    first = tmp_path / "r1"
    second = tmp_path / "r2"
    for root in (first, second):
        p = root / "demo" / "m.stl"
        p.parent.mkdir(parents=True)
        p.write_bytes(root.name.encode())
    resolved = resolve_uri("package://demo/m.stl", [first, second])
    assert resolved.read_bytes() == b"r1"


def test_path_traversal_rejected(tmp_path):
    (tmp_path / "demo").mkdir()
    with pytest.raises(PathEscapesRoot):
        resolve_uri("package://demo/../../etc/passwd", [tmp_path])


def test_unknown_scheme(tmp_path):
    with pytest.raises(UnknownScheme):
        resolve_uri("http://example.com/a.stl", [tmp_path])


def test_missing_package_file(tmp_path):
    with pytest.raises(NotFound):
        resolve_uri("package://demo/missing.stl", [tmp_path])


# --------------------------------------------------------------------- stl


def test_single_triangle_binary_stl():
    blob = b"\0" * 80 + struct.pack("<I", 1)
    blob += struct.pack("<12fH", 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0)
    mesh = parse_stl(blob)
    assert mesh.vertex_count == 3
    assert mesh.triangle_count == 1
    assert mesh.normals[0:3] == pytest.approx([0.0, 0.0, 1.0])


def test_cube_binary_and_ascii_agree():
    binary = parse_stl((ASSETS / "cube.stl").read_bytes())
    ascii_ = parse_stl((ASSETS / "cube_ascii.stl").read_bytes())
    assert binary.triangle_count == 12
    assert ascii_.triangle_count == 12
    assert binary.vertex_count == 8
    assert ascii_.vertex_count == 8


def test_stl_normals_unit_and_indices_in_range():
    mesh = parse_stl((ASSETS / "cube.stl").read_bytes())
    for i in range(0, len(mesh.normals), 3):
        n = mesh.normals[i:i + 3]
        assert abs(math.sqrt(sum(c * c for c in n)) - 1.0) <= 1e-4
    assert all(0 <= i < mesh.vertex_count for i in mesh.triangles)


def test_degenerate_triangles_dropped():
    blob = b"\0" * 80 + struct.pack("<I", 2)
    blob += struct.pack("<12fH", 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0)  # good
    blob += struct.pack("<12fH", 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0)  # zero area
    mesh = parse_stl(blob)
    assert mesh.triangle_count == 1
    assert mesh.degenerate_dropped == 1


def test_stl_count_overrun_is_malformed():
    blob = b"\0" * 80 + struct.pack("<I", 100) + b"\0" * 10
    with pytest.raises(MalformedFile):
        parse_stl(blob)


def test_solid_prefixed_binary_detected():
    # starts with "solid" but has exact binary record arithmetic
    blob = b"solid but binary".ljust(80, b"\0") + struct.pack("<I", 1)
    blob += struct.pack("<12fH", 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0)
    assert parse_stl(blob).triangle_count == 1


def test_all_degenerate_is_empty_mesh():
    blob = b"\0" * 80 + struct.pack("<I", 1)
    blob += struct.pack("<12fH", 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)
    with pytest.raises(EmptyMesh):
        parse_stl(blob)


# --------------------------------------------------------------------- obj


def test_house_obj_counts_match_construction():
    # independent oracle: 9 distinct vertices; 5 quads fan into 10 triangles
    # plus 4 roof triangles = 14
    mesh = parse_obj((ASSETS / "house.obj").read_text())
    assert mesh.vertex_count == 9
    assert mesh.triangle_count == 14
    for i in range(0, len(mesh.normals), 3):
        n = mesh.normals[i:i + 3]
        assert abs(math.sqrt(sum(c * c for c in n)) - 1.0) <= 1e-4
    assert all(0 <= i < mesh.vertex_count for i in mesh.triangles)


def test_obj_explicit_normals_used():
    mesh = parse_obj((ASSETS / "quad_vn.obj").read_text())
    assert mesh.triangle_count == 2
    assert mesh.vertex_count == 4
    for i in range(0, len(mesh.normals), 3):
        assert mesh.normals[i:i + 3] == pytest.approx([0.0, 0.0, 1.0])


def test_obj_out_of_range_index():
    with pytest.raises(MalformedFile):
        parse_obj("v 0 0 0\nf 1 2 3\n")


def test_obj_empty_is_empty_mesh():
    with pytest.raises((EmptyMesh, MalformedFile)):
        parse_obj("# nothing here\n")


# ------------------------------------------------------------------- fuzz


def test_mesh_parsers_survive_fuzz():
    rng = random.Random(17)
    words = [b"solid", b"facet", b"vertex", b"endfacet", b"\x00\x01", b"1.5", b"nan", b" "]
    for _ in range(1500):
        blob = b"".join(rng.choice(words) for _ in range(rng.randrange(0, 30)))
        try:
            parse_stl(blob)
        except AssetError:
            pass
        try:
            parse_obj(blob.decode("latin-1"))
        except AssetError:
            pass
    for _ in range(500):
        blob = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 400)))
        try:
            parse_stl(blob)
        except AssetError:
            pass


# ------------------------------------------------------------------- cache


def test_cache_put_get_byte_identical(tmp_path):
    cache = AssetCache(tmp_path / "cache")
    cache.put("package://demo/a.stl", "abc123", b"payload-bytes")
    assert cache.get("package://demo/a.stl") == b"payload-bytes"
    assert cache.get("package://demo/a.stl", "abc123") == b"payload-bytes"


def test_cache_new_checksum_evicts_old(tmp_path):
    cache = AssetCache(tmp_path / "cache")
    cache.put("u", "c1", b"one")
    cache.put("u", "c2", b"two")
    assert cache.get("u", "c1") is None
    assert cache.get("u") == b"two"
    assert len(list((tmp_path / "cache").glob("*.mesh"))) == 1


def test_corrupted_cache_file_is_miss(tmp_path):
    cache = AssetCache(tmp_path / "cache")
    cache.put("u", "c1", b"precious")
    victim = next((tmp_path / "cache").glob("*.mesh"))
    blob = bytearray(victim.read_bytes())
    blob[-1] ^= 0xFF
    victim.write_bytes(bytes(blob))
    assert cache.get("u") is None
    # corrupted entry got removed
    assert not list((tmp_path / "cache").glob("*.mesh"))


def test_cache_miss_on_unknown_uri(tmp_path):
    cache = AssetCache(tmp_path / "cache")
    assert cache.get("never-stored") is None
