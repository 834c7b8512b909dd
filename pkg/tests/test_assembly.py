import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from miscible_fem.assembly import (AssemblyError, SourceTerms, apply_Ah, assemble_boundary_load,
                                   assemble_convection, assemble_flux_load, assemble_load,
                                   assemble_mass, assemble_stiffness, integrate, l2_project,
                                   lumped_mass, ritz_operator, ritz_project)
from miscible_fem.dispersion import DispersionParams, example51_coefficient
from miscible_fem.fe import FeFunction, build_space, interpolate, quadrature_rule
from miscible_fem.mesh import Mesh, generate_disk_mesh, generate_square_mesh

SQUARE8 = generate_square_mesh(8)
DISK8 = generate_disk_mesh(8)


def mesh_area(mesh):
    p = mesh.vertices[mesh.triangles]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return float(np.sum(0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])))


def outward_normals(mesh):
    """Edge normals oriented away from the adjacent triangle's centroid."""
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    b = mesh.vertices[mesh.boundary_edges[:, 1]]
    d = b - a
    n = np.stack([d[:, 1], -d[:, 0]], axis=1) / np.linalg.norm(d, axis=1)[:, None]
    cen = mesh.vertices[mesh.triangles[mesh.boundary_triangles]].mean(axis=1)
    flip = np.einsum("ij,ij->i", n, 0.5 * (a + b) - cen) < 0
    n[flip] *= -1
    return a, b, n


def boundary_integral(mesh, integrand, n_gauss=6):
    """sum over boundary edges of int integrand(x, y, nx, ny, s) ds (s in [0, 1] along the edge)."""
    s, w = np.polynomial.legendre.leggauss(n_gauss)
    s, w = 0.5 * (s + 1), 0.5 * w
    a, b, n = outward_normals(mesh)
    length = np.linalg.norm(b - a, axis=1)
    x = a[:, None, :] * (1 - s)[None, :, None] + b[:, None, :] * s[None, :, None]
    vals = integrand(x[..., 0], x[..., 1], n[:, None, 0], n[:, None, 1], s[None, :])
    return float(np.sum(vals * w[None, :] * length[:, None]))


@pytest.mark.parametrize("mesh", [SQUARE8, DISK8], ids=["square", "disk"])
@pytest.mark.parametrize("degree", [1, 2])
def test_mass_entries_sum_to_area(mesh, degree):
    M = assemble_mass(build_space(mesh, degree))
    assert abs(M.data.sum() - mesh_area(mesh)) <= 1e-12


def test_single_triangle_local_mass():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    M = assemble_mass(build_space(mesh, 1)).toarray()
    expected = (0.5 / 12) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
    np.testing.assert_allclose(M, expected, atol=1e-15)


def test_mass_is_linear_in_weight():
    space = build_space(SQUARE8, 2)
    np.testing.assert_allclose(assemble_mass(space, 0.5).data, 0.5 * assemble_mass(space).data,
                               atol=1e-16)


def test_mass_rejects_nonpositive_weight():
    with pytest.raises(AssemblyError):
        assemble_mass(build_space(SQUARE8, 1), lambda x, y, t: x - 0.5)


@pytest.mark.parametrize("degree", [1, 2])
def test_mass_positive_definite(degree):
    for M in (4, 8, 16):
        A = assemble_mass(build_space(generate_square_mesh(M), degree)).toarray()
        assert scipy.linalg.eigvalsh(A)[0] > 0


def test_lumped_mass_preserves_row_sums():
    space = build_space(DISK8, 1)
    M, L = assemble_mass(space), lumped_mass(space)
    np.testing.assert_allclose(L @ np.ones(space.n_dofs), M @ np.ones(space.n_dofs), atol=1e-15)


@pytest.mark.parametrize("mesh", [SQUARE8, DISK8], ids=["square", "disk"])
@pytest.mark.parametrize("degree", [1, 2])
def test_stiffness_annihilates_constants(mesh, degree):
    space = build_space(mesh, degree)
    for tensor in (1.0, lambda x, y, t: 2.0 + np.sin(x * y), DispersionParams(0.5, 2.0, 1.0, 0.1)):
        vel = (lambda x, y, t: (1.0 + y, x)) if isinstance(tensor, DispersionParams) else None
        K = assemble_stiffness(space, tensor, velocity=vel)
        assert np.max(np.abs(K @ np.ones(space.n_dofs))) <= 1e-12


def test_stiffness_symmetric_for_tensor_coefficient():
    space = build_space(DISK8, 2)
    K = assemble_stiffness(space, DispersionParams(0.5, 2.0, 1.0, 0.1),
                           velocity=lambda x, y, t: (x - y, 1.0 + x)).toarray()
    assert np.max(np.abs(K - K.T)) <= 1e-12


def test_isotropic_tensor_collapses_to_scaled_laplacian():
    space = build_space(SQUARE8, 1)
    vel = lambda x, y, t: (1.0 + 0 * x, 0 * x)
    K = assemble_stiffness(space, DispersionParams.isotropic(1.0, 0.1), velocity=vel)
    np.testing.assert_allclose(K.data, 1.1 * assemble_stiffness(space).data, atol=1e-10)


def test_stiffness_reports_ellipticity_violation():
    with pytest.raises(AssemblyError, match="quadrature point"):
        assemble_stiffness(build_space(SQUARE8, 1), lambda x, y, t: x - 0.5)


def test_stiffness_p1_local_matrix():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    K = assemble_stiffness(build_space(mesh, 1)).toarray()
    expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    np.testing.assert_allclose(K, expected, atol=1e-15)


def test_convection_zero_velocity():
    C = assemble_convection(build_space(SQUARE8, 1), lambda x, y, t: (0 * x, 0 * y))
    assert np.all(C.data == 0.0)


@pytest.mark.parametrize("degree", [1, 2])
def test_convection_kills_constants(degree):
    space = build_space(DISK8, degree)
    C = assemble_convection(space, lambda x, y, t: (np.cos(y), x * y))
    assert np.max(np.abs(C @ np.ones(space.n_dofs))) <= 1e-12


@pytest.mark.parametrize("mesh", [generate_square_mesh(16), generate_disk_mesh(16)],
                         ids=["square", "disk"])
def test_convection_skew_identity(mesh):
    space = build_space(mesh, 1)
    vel = lambda x, y, t: (y + 0.3, -x + 0.1)
    C = assemble_convection(space, vel)
    rng = np.random.default_rng(11)
    c = rng.standard_normal(space.n_dofs)
    ea, eb = outward_normals(mesh)[:2]
    lookup = {tuple(p): i for i, p in enumerate(mesh.vertices)}
    ia = np.array([lookup[tuple(p)] for p in ea])
    ib = np.array([lookup[tuple(p)] for p in eb])

    def integrand(x, y, nx, ny, s):
        cv = (1 - s) * c[ia][:, None] + s * c[ib][:, None]
        ux, uy = vel(x, y, 0.0)
        return 0.5 * (ux * nx + uy * ny) * cv ** 2

    assert abs(c @ (C @ c) - boundary_integral(mesh, integrand)) <= 1e-8


def test_load_sums():
    space = build_space(DISK8, 2)
    assert abs(assemble_load(space, 1.0).sum() - mesh_area(DISK8)) <= 1e-12
    assert np.all(assemble_load(space, lambda x, y, t: 0 * x) == 0.0)


@pytest.mark.parametrize("degree", [1, 2])
def test_boundary_load_perimeter(degree):
    space = build_space(generate_disk_mesh(64), degree)
    b = assemble_boundary_load(space, lambda x, y, t, nx, ny: 1.0 + 0 * x)
    assert abs(b.sum() - 64 * 2 * 0.5 * math.sin(math.pi / 64)) <= 1e-10


@pytest.mark.parametrize("mesh", [SQUARE8, DISK8], ids=["square", "disk"])
def test_integration_by_parts(mesh):
    space = build_space(mesh, 2)
    v = interpolate(space, lambda x, y, t: 1 + x * y - 2 * y * y + x).coeffs
    w = lambda x, y, t: (2 * x + y + 1, x - 3 * y)
    div_w = lambda x, y, t: -1.0 + 0 * x
    wn = lambda x, y, t, nx, ny: (2 * x + y + 1) * nx + (x - 3 * y) * ny
    total = (assemble_load(space, div_w) @ v + assemble_flux_load(space, w) @ v
             - assemble_boundary_load(space, wn) @ v)
    assert abs(total) <= 1e-10


def test_source_compatibility():
    space = build_space(SQUARE8, 1)
    SourceTerms(lambda x, y, t: x, lambda x, y, t: y).check_compatibility(space, 0.0)
    with pytest.raises(AssemblyError, match="compatibility"):
        SourceTerms(1.0, 0.5).check_compatibility(space, 0.0)
    assert integrate(space, lambda x, y, t: x * y) == pytest.approx(0.25, abs=1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_l2_projection_reproduces_members(degree):
    space = build_space(DISK8, degree)
    f = FeFunction(space, np.random.default_rng(0).standard_normal(space.n_dofs))
    np.testing.assert_allclose(l2_project(space, _as_field(f)).coeffs, f.coeffs, atol=1e-10)


def _as_field(f: FeFunction):
    """Wrap an FE function as a pointwise field on its own quadrature points."""
    space = f.space
    rule = quadrature_rule(6)
    vals = f.values_at(rule.points)
    xq = space.physical_points(rule.points)

    def field(x, y, t):
        assert x.shape == xq.shape[:-1]
        return vals
    return field


def test_l2_projection_of_affine_is_interpolant():
    space = build_space(SQUARE8, 1)
    np.testing.assert_allclose(l2_project(space, lambda x, y, t: x).coeffs, space.dof_coords[:, 0],
                               atol=1e-10)


def test_ritz_reproduces_members():
    space = build_space(SQUARE8, 2)
    poly = lambda x, y, t: x * x - x * y + 2 * y
    grad = lambda x, y, t: (2 * x - y, -x + 2.0)
    A = lambda x, y, t: 2.0 + x
    R = ritz_project(space, poly, grad, A)
    np.testing.assert_allclose(R.coeffs, interpolate(space, poly).coeffs, atol=1e-9)


def _cos_field():
    phi = lambda x, y, t: np.cos(np.pi * x) * np.cos(np.pi * y)
    grad = lambda x, y, t: (-np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
                            -np.pi * np.cos(np.pi * x) * np.sin(np.pi * y))
    return phi, grad


def l2_error(f, exact):
    rule, xq, wq = f.space.quadrature(6)
    d = f.values_at(rule.points) - exact(xq[..., 0], xq[..., 1], 0.0)
    return math.sqrt(np.sum(wq * d * d))


def test_ritz_l2_rate():
    phi, grad = _cos_field()
    errs = [l2_error(ritz_project(build_space(generate_square_mesh(M), 1), phi, grad, 1.0), phi)
            for M in (8, 16, 32)]
    for a, b in zip(errs, errs[1:]):
        assert 3.5 <= a / b <= 4.5


def test_ritz_galerkin_orthogonality():
    phi, grad = _cos_field()
    space = build_space(SQUARE8, 1)
    A = lambda x, y, t: example51_coefficient(x, y, t)
    R = ritz_project(space, phi, grad, A, t=0.37)
    # residual <A grad(phi - R), grad psi_i> + <phi - R, psi_i>, analytic part by order-6 quadrature
    rule, xq, wq = space.quadrature(6)
    phi_vals, grads = space.tabulate(rule.points)
    a = A(xq[..., 0], xq[..., 1], 0.37)
    gx, gy = grad(xq[..., 0], xq[..., 1], 0.37)
    gR = R.gradients_at(rule.points)
    ex = (a * (gx - gR[..., 0]))[..., None] * grads[..., 0] + (a * (gy - gR[..., 1]))[..., None] * grads[..., 1]
    val = (phi(xq[..., 0], xq[..., 1], 0.37) - R.values_at(rule.points))[..., None] * phi_vals[None]
    local = np.sum(wq[..., None] * (ex + val), axis=1)
    res = np.bincount(space.element_dofs.ravel(), weights=local.ravel(), minlength=space.n_dofs)
    assert np.max(np.abs(res)) <= 1e-8


def test_ritz_coefficient_perturbation_bounded():
    phi, grad = _cos_field()
    space = build_space(generate_square_mesh(16), 1)
    A51 = lambda x, y, t: example51_coefficient(x, y, t)
    R1 = ritz_project(space, phi, grad, A51, t=0.37)
    R2 = ritz_project(space, phi, grad, 3.0, t=0.37)
    K = ritz_operator(space, 3.0, 0.37)
    e1, e2 = math.sqrt(R1.coeffs @ (K @ R1.coeffs)), math.sqrt(R2.coeffs @ (K @ R2.coeffs))
    assert abs(e1 - e2) / e2 < 0.5


def test_apply_Ah_on_constants_and_linearity():
    space = build_space(DISK8, 1)
    A = lambda x, y, t: 2.0 + x * y
    ones = FeFunction(space, np.ones(space.n_dofs))
    np.testing.assert_allclose(apply_Ah(ones, A).coeffs, 1.0, atol=1e-9)
    f = FeFunction(space, np.random.default_rng(1).standard_normal(space.n_dofs))
    np.testing.assert_allclose(apply_Ah(FeFunction(space, 2 * f.coeffs), A).coeffs,
                               2 * apply_Ah(f, A).coeffs, atol=1e-10)


def test_apply_Ah_quadratic_form():
    space = build_space(generate_square_mesh(32), 1)
    f = interpolate(space, lambda x, y, t: np.sin(np.pi * x) * np.sin(np.pi * y))
    Af = apply_Ah(f, 1.0)
    M = assemble_mass(space, order=6)
    lhs = Af.coeffs @ (M @ f.coeffs)
    rule, _, wq = space.quadrature(6)
    g = f.gradients_at(rule.points)
    v = f.values_at(rule.points)
    rhs = np.sum(wq * (g[..., 0] ** 2 + g[..., 1] ** 2 + v ** 2))
    assert abs(lhs - rhs) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.sampled_from(["square", "disk"]), st.sampled_from([1, 2]))
def test_mass_symmetric_and_conserving(M, domain, degree):
    mesh = generate_square_mesh(M) if domain == "square" else generate_disk_mesh(M + 7)
    A = assemble_mass(build_space(mesh, degree)).toarray()
    assert np.max(np.abs(A - A.T)) <= 1e-15
    assert abs(A.sum() - mesh_area(mesh)) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_stiffness_energy_of_affine(a, b, c):
    # (K v, v) = |grad v|^2 * area for affine v
    space = build_space(DISK8, 1)
    v = interpolate(space, lambda x, y, t: a * x + b * y + c).coeffs
    K = assemble_stiffness(space)
    assert abs(v @ (K @ v) - (a * a + b * b) * mesh_area(DISK8)) <= 1e-11
