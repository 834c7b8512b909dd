import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from miscible_fem.fe import FeFunction, build_space
from miscible_fem.mesh import (Mesh, MeshError, euler_characteristic, generate_disk_mesh,
                               generate_square_mesh, mesh_stats, read_mesh, write_mesh)


def edge_use_counts(mesh):
    tri = mesh.triangles
    e = np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def check_invariants(mesh):
    assert np.all(mesh.signed_areas > 0)
    counts = edge_use_counts(mesh)
    assert set(np.unique(counts)) <= {1, 2}
    assert np.sum(counts == 1) == len(mesh.boundary_edges)
    n = mesh.boundary_normals
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-14)
    mid = mesh.vertices[mesh.boundary_edges].mean(axis=1)
    inward = mesh.centroids[mesh.boundary_triangles] - mid
    assert np.all(np.sum(inward * n, axis=1) < 0)
    assert euler_characteristic(mesh) == 1


def test_square_smallest():
    m = generate_square_mesh(1)
    assert (m.n_vertices, m.n_triangles) == (4, 2)
    assert mesh_stats(m).total_area == pytest.approx(1.0, abs=1e-14)


def test_square_counts_m16():
    m = generate_square_mesh(16)
    assert (m.n_vertices, m.n_triangles) == (289, 512)
    assert mesh_stats(m).h_max == pytest.approx(math.sqrt(2) / 16, abs=1e-14)


def test_square_rejects_zero():
    with pytest.raises(MeshError):
        generate_square_mesh(0)


def test_square_nesting():
    coarse = {tuple(p) for p in generate_square_mesh(16).vertices}
    fine = {tuple(p) for p in generate_square_mesh(32).vertices}
    assert coarse <= fine


def test_square_diagonal_direction():
    m = generate_square_mesh(1)
    # both triangles contain the lower-left and upper-right corners
    for tri in m.triangles:
        pts = {tuple(m.vertices[i]) for i in tri}
        assert {(0.0, 0.0), (1.0, 1.0)} <= pts


@pytest.mark.parametrize("degree", [1, 2])
def test_square_spaces_nested(degree):
    coarse = build_space(generate_square_mesh(4), degree)
    fine = build_space(generate_square_mesh(8), degree)
    rng = np.random.default_rng(3)
    f = FeFunction(coarse, rng.standard_normal(coarse.n_dofs))
    # interpolating a coarse FE function on the fine space reproduces it exactly
    g = FeFunction(fine, np.array([f.evaluate(p)[0] for p in fine.dof_coords]))
    for p in rng.random((30, 2)):
        assert abs(g.evaluate(p)[0] - f.evaluate(p)[0]) < 1e-13


def test_disk_m8_boundary_on_circle():
    m = generate_disk_mesh(8)
    bverts = np.unique(m.boundary_edges)
    assert len(bverts) == 8
    r = np.linalg.norm(m.vertices[bverts] - 0.5, axis=1)
    np.testing.assert_allclose(r, 0.5, atol=1e-12)


def test_disk_rejects_small():
    with pytest.raises(MeshError):
        generate_disk_mesh(7)


def test_disk_m64_calibrated_quality():
    # frozen after one calibration run: quality 0.320, h_max/h_min 1.683
    s = mesh_stats(generate_disk_mesh(64))
    assert s.quality >= 0.3
    assert s.h_max / s.h_min <= 4
    assert s.quality == pytest.approx(0.3203, abs=5e-4)
    assert s.h_max / s.h_min == pytest.approx(1.683, abs=5e-3)


def test_disk_m64_area_is_inscribed_polygon():
    s = mesh_stats(generate_disk_mesh(64))
    polygon = 64 / 2 * 0.25 * math.sin(2 * math.pi / 64)
    assert s.total_area == pytest.approx(polygon, abs=1e-10)
    assert s.total_area < math.pi * 0.25


@pytest.mark.parametrize("M", [8, 13, 16, 32, 64])
def test_disk_invariants(M):
    m = generate_disk_mesh(M)
    check_invariants(m)
    assert len(m.boundary_edges) == M


@pytest.mark.parametrize("M", [1, 2, 7, 16])
def test_square_invariants(M):
    check_invariants(generate_square_mesh(M))


def test_disk_deterministic():
    a, b = generate_disk_mesh(32), generate_disk_mesh(32)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_mesh_round_trip(tmp_path):
    m = generate_disk_mesh(24)
    path = tmp_path / "disk.mesh"
    write_mesh(m, path)
    header = path.read_text().splitlines()[0]
    assert header == f"vertices {m.n_vertices} triangles {m.n_triangles} boundary 24"
    r = read_mesh(path)
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.boundary_normals, m.boundary_normals)
    assert np.array_equal(r.boundary_edges, m.boundary_edges)


def test_mesh_rejects_bad_index():
    with pytest.raises(MeshError):
        Mesh(np.zeros((3, 2)), np.array([[0, 1, 3]]))


def test_validate_catches_clockwise():
    m = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 2, 1]]))
    with pytest.raises(MeshError):
        m.validate()


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=8, max_value=90))
def test_disk_generator_properties(M):
    m = generate_disk_mesh(M)
    check_invariants(m)
    s = mesh_stats(m)
    assert 0 < s.quality <= 1
    assert s.h_min <= s.h_max
    assert s.total_area == pytest.approx(M / 2 * 0.25 * math.sin(2 * math.pi / M), abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=1, max_value=24))
def test_square_generator_properties(M):
    m = generate_square_mesh(M)
    assert (m.n_vertices, m.n_triangles) == ((M + 1) ** 2, 2 * M * M)
    assert mesh_stats(m).total_area == pytest.approx(1.0, abs=1e-13)
