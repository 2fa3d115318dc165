import numpy as np
import pytest

from fem.analysis import cosine_2d_case, function_lp_norm
from fem.assembly import (
    ProblemSpec, assemble_a_jacobian, assemble_a_residual, assemble_mass, assemble_neumann_rhs,
    assemble_saddle_system, assemble_source_rhs, assemble_stiffness, ds_eps, prepare_saddle,
    s_eps, saddle_residual,
)
from fem.errors import InvalidArgumentError
from fem.mesh import criss_cross_mesh, unit_interval_mesh
from fem.space import FeFunction, build_space, interpolate, zero_function


def _spec(p=2.0, g=lambda x: 0.0, dg=None, f=None, epsilon=0.0):
    dg = dg or (lambda x: np.zeros_like(x))
    return ProblemSpec(p=p, g_value=g, g_gradient=dg, g_laplacian=lambda x: 0.0, source_f=f, epsilon=epsilon)


def _random_function(space, seed=1):
    return FeFunction(space, np.random.default_rng(seed).normal(size=space.dof_count))


def test_problem_spec_validation():
    with pytest.raises(InvalidArgumentError):
        _spec(p=1.5)
    with pytest.raises(InvalidArgumentError):
        _spec(p=float("inf"))
    with pytest.raises(InvalidArgumentError):
        _spec(epsilon=-1e-3)
    assert _spec(p=4.0).q == pytest.approx(4.0 / 3.0)


def test_nonlinearity():
    w = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(s_eps(w, 2.0, 0.0), w)
    np.testing.assert_allclose(s_eps(w, 1.5, 0.0), [-np.sqrt(2.0), 0.0, np.sqrt(3.0)])
    np.testing.assert_allclose(ds_eps(w, 1.5, 1e-1)[1], 0.1 ** -0.5)
    x = np.linspace(-1, 1, 7)
    step = 1e-6
    fd = (s_eps(x + step, 1.2, 0.05) - s_eps(x - step, 1.2, 0.05)) / (2 * step)
    np.testing.assert_allclose(ds_eps(x, 1.2, 0.05), fd, rtol=1e-6)


def test_stiffness_1d_stencil():
    n = 8
    h = 1.0 / n
    B = assemble_stiffness(build_space(unit_interval_mesh(n), 1)).toarray()
    np.testing.assert_allclose(B[3, 2:5], [-1 / h, 2 / h, -1 / h], rtol=1e-13)
    assert B[0, 0] == pytest.approx(1 / h)
    np.testing.assert_allclose(B.sum(axis=1), 0.0, atol=1e-11)


@pytest.mark.parametrize("k", [1, 2])
def test_stiffness_symmetric_with_zero_row_sums(k):
    B = assemble_stiffness(build_space(criss_cross_mesh(3, 2), k))
    assert (B - B.T).count_nonzero() == 0
    np.testing.assert_allclose(np.asarray(B.sum(axis=1)).ravel(), 0.0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2])
def test_mass_integrates_to_measure(k):
    mesh = criss_cross_mesh(2, 3, (0, 0, 2, 1))
    M = assemble_mass(build_space(mesh, k))
    assert M.sum() == pytest.approx(2.0, rel=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_quadratic_case_residual_is_mass_product(k):
    space = build_space(criss_cross_mesh(2, 2), k)
    w = _random_function(space)
    np.testing.assert_allclose(assemble_a_residual(w, _spec()), assemble_mass(space) @ w.coeffs, atol=1e-13)


def test_zero_w_has_zero_residual():
    space = build_space(criss_cross_mesh(2, 2), 2)
    r = assemble_a_residual(zero_function(space), _spec(p=5.0))
    np.testing.assert_array_equal(r, 0.0)


def test_constant_w_on_single_element():
    space = build_space(unit_interval_mesh(1, 0.0, 2.0), 1)
    c, p = 3.0, 4.0
    q = p / (p - 1)
    r = assemble_a_residual(FeFunction(space, [c, c]), _spec(p=p))
    np.testing.assert_allclose(r, [c ** (q - 1), c ** (q - 1)], rtol=1e-13)


def test_energy_identity():
    space = build_space(criss_cross_mesh(3, 3), 2)
    w = _random_function(space, seed=5)
    spec = _spec(p=6.0)
    energy = assemble_a_residual(w, spec) @ w.coeffs
    assert energy == pytest.approx(function_lp_norm(w, spec.q) ** spec.q, rel=1e-12)


def _fd_mismatch(w, v, spec, step):
    J = assemble_a_jacobian(w, spec)
    base = assemble_a_residual(w, spec)
    shifted = assemble_a_residual(FeFunction(w.space, w.coeffs + step * v), spec)
    jv = J @ v
    return np.max(np.abs((shifted - base) / step - jv)) / np.max(np.abs(jv))


@pytest.mark.parametrize("p", [3.0, 4.0, 10.0])
def test_jacobian_matches_finite_differences(p):
    space = build_space(criss_cross_mesh(2, 2), 2)
    w = _random_function(space, seed=2)
    v = np.random.default_rng(3).normal(size=space.dof_count)
    spec = _spec(p=p, epsilon=0.1)
    coarse = _fd_mismatch(w, v, spec, 1e-4)
    fine = _fd_mismatch(w, v, spec, 1e-6)
    assert fine < coarse
    assert fine <= 1e-3


def test_jacobian_symmetric_positive_semidefinite():
    space = build_space(criss_cross_mesh(1, 1), 2)
    J = assemble_a_jacobian(_random_function(space, seed=4), _spec(p=3.0, epsilon=1e-2)).toarray()
    np.testing.assert_array_equal(J, J.T)
    assert np.linalg.eigvalsh(J).min() >= -1e-12


def test_neumann_rhs_1d_point_values():
    space = build_space(unit_interval_mesh(4), 1)
    F = assemble_neumann_rhs(space, _spec(g=lambda x: x[:, 0], dg=lambda x: np.ones_like(x)))
    np.testing.assert_allclose(F, [-1.0, 0.0, 0.0, 0.0, 1.0])


@pytest.mark.parametrize("k", [1, 2])
def test_neumann_rhs_of_linear_datum_sums_to_zero(k):
    space = build_space(criss_cross_mesh(3, 2, (-1, 0, 1, 2)), k)
    spec = _spec(g=lambda x: 2 * x[:, 0] - x[:, 1], dg=lambda x: np.tile([2.0, -1.0], (len(x), 1)))
    F = assemble_neumann_rhs(space, spec)
    assert F.sum() == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_array_equal(F[space.interior_dofs], 0.0)


def test_neumann_rhs_of_linear_datum_on_unit_square():
    # g = x: flux +1 on the right edge, -1 on the left edge
    space = build_space(criss_cross_mesh(2, 2), 1)
    F = assemble_neumann_rhs(space, _spec(g=lambda x: x[:, 0], dg=lambda x: np.tile([1.0, 0.0], (len(x), 1))))
    x = space.dof_coords[:, 0]
    assert F[np.isclose(x, 1.0)].sum() == pytest.approx(1.0, rel=1e-13)
    assert F[np.isclose(x, 0.0)].sum() == pytest.approx(-1.0, rel=1e-13)


def test_neumann_rhs_vanishes_for_cosine_datum():
    space = build_space(criss_cross_mesh(4, 4, (-1, -1, 1, 1)), 2)
    F = assemble_neumann_rhs(space, cosine_2d_case(2))
    np.testing.assert_allclose(F, 0.0, atol=1e-14)


def test_source_rhs():
    n = 4
    space = build_space(unit_interval_mesh(n), 1)
    S = assemble_source_rhs(space, _spec(f=lambda x: 1.0))
    np.testing.assert_allclose(S, [-0.125, -0.25, -0.25, -0.25, -0.125], rtol=1e-13)

    space = build_space(criss_cross_mesh(2, 2, (-1, -1, 1, 1)), 2)
    assert assemble_source_rhs(space, _spec(f=lambda x: 1.0)).sum() == pytest.approx(-4.0, rel=1e-13)
    np.testing.assert_array_equal(assemble_source_rhs(space, _spec()), 0.0)


def test_saddle_dimensions():
    space = build_space(criss_cross_mesh(2, 2), 2)
    spec = _spec(p=3.0)
    ops = prepare_saddle(space, spec)
    u, w = zero_function(space), zero_function(space)
    A, rhs = assemble_saddle_system(u, w, spec, space, ops)
    n = space.dof_count + len(space.interior_dofs)
    assert ops.size == n
    assert A.shape == (n, n)
    assert rhs.shape == (n,)


def test_quadratic_saddle_matches_dense_blocks():
    space = build_space(criss_cross_mesh(2, 2), 1)
    N, I = space.dof_count, space.interior_dofs
    spec = _spec(f=lambda x: np.sin(x[:, 0]))
    u = interpolate(space, lambda x: x[:, 0] * x[:, 1])
    w = _random_function(space, seed=7)
    A, rhs = assemble_saddle_system(u, w, spec, space)
    A = A.toarray()

    M = assemble_mass(space).toarray()
    B = assemble_stiffness(space).toarray()
    np.testing.assert_allclose(A[:N, :N], M, atol=1e-14)
    np.testing.assert_allclose(A[:N, N:], B[:, I], atol=1e-14)
    np.testing.assert_allclose(A[N:, :N], B[I, :], atol=1e-14)
    np.testing.assert_array_equal(A[N:, N:], 0.0)

    S = assemble_source_rhs(space, spec)
    expected = np.concatenate([M @ w.coeffs + B @ u.coeffs, B[I] @ w.coeffs - S[I]])
    np.testing.assert_allclose(-rhs, expected, atol=1e-13)


def test_saddle_rejects_foreign_functions():
    space = build_space(unit_interval_mesh(3), 1)
    other = build_space(unit_interval_mesh(3), 1)
    spec = _spec()
    with pytest.raises(InvalidArgumentError):
        saddle_residual(zero_function(other), zero_function(space), spec, prepare_saddle(space, spec))
