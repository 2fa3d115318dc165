import math
from dataclasses import replace

import numpy as np
import pytest

from fem.analysis import (
    EOC_COLUMNS, ManufacturedCase, breakpoint_diagnostics_1d, callback_lp_norm, check_source_consistency,
    cosine_2d_case, cubic_1d_case, eoc, eoc_table, error_w_lq, function_lp_norm, gradient_lp_norm, holder_gap,
    laplacian_mode_report, limit_diagnostics, lp_norm, manufactured_sine, predicted_rates,
    recovered_laplacian, stability_margin,
)
from fem.assembly import nonlinear_rule
from fem.errors import DiagnosticError, InvalidArgumentError, PreconditionError
from fem.mesh import criss_cross_mesh, unit_interval_mesh
from fem.space import FeFunction, build_space, interpolate, zero_function

PI = math.pi


def _pt(x, y=None):
    return np.array([[x]] if y is None else [[x, y]], dtype=float)


# ---------------------------
# Model problems
# ---------------------------

def test_manufactured_source_values():
    assert manufactured_sine(2.0).spec.source_f(_pt(0.5, 0.5))[0] == pytest.approx(4 * PI ** 4, rel=1e-12)
    # at s = 1 the gradient vanishes
    assert manufactured_sine(4.0).spec.source_f(_pt(0.5, 0.5))[0] == pytest.approx(3 * (2 * PI ** 2) ** 4, rel=1e-12)


def test_manufactured_solution_vanishes_on_boundary():
    case = manufactured_sine(3.0)
    edge = np.column_stack([np.linspace(-1, 1, 9), np.ones(9)])
    np.testing.assert_allclose(case.exact_u(edge), 0.0, atol=1e-15)
    np.testing.assert_allclose(case.spec.g_value(edge), 0.0, atol=1e-15)


def test_manufactured_rejects_small_exponent():
    with pytest.raises(InvalidArgumentError):
        manufactured_sine(1.5)


@pytest.mark.parametrize("p", [2.0, 4.0, 6.0])
def test_source_consistency(p):
    assert check_source_consistency(manufactured_sine(p)) <= 1e-5


def test_source_consistency_detects_wrong_source():
    case = manufactured_sine(2.0)
    f = case.spec.source_f
    broken = replace(case, spec=replace(case.spec, source_f=lambda x: 2.0 * f(x)))
    assert isinstance(broken, ManufacturedCase)
    with pytest.raises(DiagnosticError):
        check_source_consistency(broken)


def test_cubic_datum():
    spec = cubic_1d_case()
    roots = np.array([[0.25], [0.5], [0.75]])
    np.testing.assert_allclose(spec.g_value(roots), 0.0, atol=1e-15)
    assert spec.g_value(_pt(0.0))[0] == pytest.approx(-0.025)
    assert spec.g_gradient(roots).shape == (3, 1)
    assert not spec.has_source

    x = np.linspace(0.1, 0.9, 5)[:, None]
    h = 1e-4
    fd = (spec.g_value(x + h) - 2 * spec.g_value(x) + spec.g_value(x - h)) / h ** 2
    np.testing.assert_allclose(spec.g_laplacian(x), fd, atol=1e-6)
    fd1 = (spec.g_value(x + h) - spec.g_value(x - h)) / (2 * h)
    np.testing.assert_allclose(spec.g_gradient(x)[:, 0], fd1, atol=1e-8)


@pytest.mark.parametrize("m", [1, 3])
def test_cosine_datum(m):
    spec = cosine_2d_case(m, p=4.0)
    assert spec.name == f"cosine_2d_m{m}"
    assert spec.g_value(_pt(0.0, 0.0))[0] == pytest.approx(1 / (20 * m))

    t = np.linspace(-1, 1, 11)
    for edge, normal in ((np.column_stack([np.ones(11), t]), 0), (np.column_stack([t, -np.ones(11)]), 1)):
        np.testing.assert_allclose(spec.g_gradient(edge)[:, normal], 0.0, atol=1e-15)

    x = np.array([[0.1, 0.3], [-0.4, 0.7]])
    h = 1e-4
    fd = sum(
        spec.g_value(x + h * e) - 2 * spec.g_value(x) + spec.g_value(x - h * e)
        for e in (np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    ) / h ** 2
    np.testing.assert_allclose(spec.g_laplacian(x), fd, atol=1e-5)


def test_cosine_rejects_bad_frequency():
    with pytest.raises(InvalidArgumentError):
        cosine_2d_case(0)


# ---------------------------
# Norms and convergence tables
# ---------------------------

def test_lp_norm_variants():
    v = np.array([2.0, -2.0])
    w = np.array([0.5, 0.5])
    assert lp_norm(v, w, 2.0) == pytest.approx(2.0)
    assert lp_norm(v, w, 100.0) == pytest.approx(2.0)
    assert lp_norm(np.array([1.0, -3.0]), w, np.inf) == 3.0
    assert lp_norm(np.zeros(2), w, 200.0) == 0.0


def test_sine_l2_norm():
    space = build_space(unit_interval_mesh(16), 2)
    assert callback_lp_norm(space, lambda x: np.sin(PI * x[:, 0]), 2.0) == pytest.approx(1 / math.sqrt(2), rel=1e-10)
    fh = interpolate(space, lambda x: np.sin(PI * x[:, 0]))
    assert function_lp_norm(fh, 2.0) == pytest.approx(1 / math.sqrt(2), rel=1e-3)


def test_gradient_norm_of_linear_function():
    space = build_space(criss_cross_mesh(2, 2, (0, 0, 2, 1)), 1)
    fh = interpolate(space, lambda x: 3 * x[:, 0] + 4 * x[:, 1])
    assert gradient_lp_norm(fh, 3.0) == pytest.approx(5 * 2 ** (1 / 3), rel=1e-12)


def test_interior_box_of_sine_domain():
    assert manufactured_sine(2.0).interior_box() == pytest.approx((-0.5, -0.5, 0.5, 0.5))
    assert manufactured_sine(2.0).interior_box(1.0) == pytest.approx((-1.0, -1.0, 1.0, 1.0))


def test_error_restricted_to_interior_box():
    w0 = zero_function(build_space(criss_cross_mesh(4, 4, (-1.0, -1.0, 1.0, 1.0)), 1))
    box = manufactured_sine(2.0).interior_box()
    assert error_w_lq(w0, lambda x: 1.0, 2.0) == pytest.approx(2.0, rel=1e-12)
    assert error_w_lq(w0, lambda x: 1.0, 2.0, region=box) == pytest.approx(1.0, rel=1e-12)


def test_interior_error_needs_2d():
    w0 = zero_function(build_space(unit_interval_mesh(4), 1))
    with pytest.raises(InvalidArgumentError):
        error_w_lq(w0, lambda x: 1.0, 2.0, region=(0.0, 0.0, 1.0, 1.0))


def test_eoc_known_values():
    np.testing.assert_allclose(eoc([1.0, 0.25, 0.0625], [1.0, 0.5, 0.25]), [2.0, 2.0])
    np.testing.assert_allclose(eoc([1.0, 0.5], [0.2, 0.1]), [1.0])
    assert eoc([1.0, 0.0], [0.5, 0.25])[0] == np.inf


@pytest.mark.parametrize("errors, hs", [
    ([1.0], [1.0]),
    ([1.0, 0.5], [1.0, 0.5, 0.25]),
    ([1.0, 0.5], [0.5, 1.0]),
])
def test_eoc_rejects_bad_input(errors, hs):
    with pytest.raises(InvalidArgumentError):
        eoc(errors, hs)


def test_predicted_rates():
    assert predicted_rates(2.0, 1) == pytest.approx((2.0, 1.0))
    assert predicted_rates(4.0, 2) == pytest.approx((2.0, 1.0))
    assert predicted_rates(3.0, 1) == pytest.approx((1.5, 1.0))


def test_eoc_table():
    df = eoc_table(2.0, 1, [0.5, 0.25, 0.125], [9, 25, 81], [0.4, 0.1, 0.025], [1.0, 0.5, 0.25])
    assert list(df.columns) == EOC_COLUMNS
    assert len(df) == 3
    assert np.isnan(df.loc[0, "eoc_w"]) and np.isnan(df.loc[0, "eoc_u"])
    np.testing.assert_allclose(df["eoc_w"].iloc[1:], [2.0, 2.0])
    np.testing.assert_allclose(df["eoc_u"].iloc[1:], [1.0, 1.0])
    assert (df["rate_w_predicted"] == 2.0).all()
    assert df["eoc_w_interior"].isna().all()


def test_eoc_table_interior_rates():
    df = eoc_table(2.0, 2, [0.5, 0.25, 0.125], [25, 81, 289], [0.4, 0.2, 0.1], [1.0, 0.25, 0.0625],
                   err_w_interior=[0.8, 0.1, 0.0125])
    np.testing.assert_allclose(df["eoc_w"].iloc[1:], [1.0, 1.0])
    np.testing.assert_allclose(df["eoc_w_interior"].iloc[1:], [3.0, 3.0])
    assert df.loc[2, "err_w_Lq_interior"] == 0.0125


# ---------------------------
# Recovered Laplacian
# ---------------------------

def test_recovered_laplacian_inverts_power_map():
    space = build_space(unit_interval_mesh(2), 1)
    w = FeFunction(space, [-8.0, 0.0, 27.0])
    p = 4.0
    s = recovered_laplacian(w, p / (p - 1)).at_dofs()
    np.testing.assert_allclose(s, [-2.0, 0.0, 3.0], rtol=1e-14)
    np.testing.assert_allclose(np.sign(s) * np.abs(s) ** (p - 1), w.coeffs, rtol=1e-13)
    assert recovered_laplacian(w, p / (p - 1))(1, [1.0]) == pytest.approx(3.0)


def test_recovered_laplacian_quadratic_case_is_identity():
    space = build_space(criss_cross_mesh(2, 2), 2)
    w = FeFunction(space, np.random.default_rng(0).normal(size=space.dof_count))
    np.testing.assert_array_equal(recovered_laplacian(w, 2.0).at_dofs(), w.coeffs)


def test_sample_1d_is_ordered():
    space = build_space(unit_interval_mesh(10), 2)
    w = interpolate(space, lambda x: x[:, 0] - 0.5)
    x, s = recovered_laplacian(w, 2.0).sample_1d(per_cell=4)
    assert len(x) == 40
    assert np.all(np.diff(x) > 0)
    np.testing.assert_allclose(s, x - 0.5, atol=1e-14)


def test_sample_1d_needs_interval():
    w = zero_function(build_space(criss_cross_mesh(1, 1), 1))
    with pytest.raises(InvalidArgumentError):
        recovered_laplacian(w, 2.0).sample_1d()


# ---------------------------
# Breakpoint diagnostics
# ---------------------------

def _step_samples(break_at=0.4, n=401, noise=0.0):
    x = np.linspace(0.0, 1.0, n)
    s = np.where(x < break_at, 1.0, -1.0)
    s = s + noise * np.random.default_rng(2).normal(size=n)
    return x, s


def test_single_breakpoint():
    diag = breakpoint_diagnostics_1d(_step_samples(noise=0.01))
    assert diag.num_sign_changes == 1
    assert diag.break_location == pytest.approx(0.4, abs=0.005)
    assert diag.plateau_means[0] == pytest.approx(1.0, abs=0.01)
    assert diag.plateau_means[1] == pytest.approx(-1.0, abs=0.01)
    assert diag.plateau_relative_stddev < 0.05


def test_gibbs_wiggles_count_once():
    x, s = _step_samples()
    i = int(np.searchsorted(x, 0.4))
    s[i - 2] *= -1
    s[i + 1] *= -1
    diag = breakpoint_diagnostics_1d((x, s))
    assert diag.num_sign_changes == 1
    assert diag.plateau_relative_stddev == pytest.approx(0.0, abs=1e-12)


def test_isolated_spike_is_not_a_sign_change():
    x = np.linspace(0.0, 1.0, 201)
    s = np.full_like(x, 2.0)
    s[100] = -2.0
    diag = breakpoint_diagnostics_1d(list(zip(x, s)))
    assert diag.num_sign_changes == 0
    assert math.isnan(diag.break_location)


def test_two_breakpoints():
    x = np.linspace(0.0, 1.0, 401)
    s = np.where((x > 0.3) & (x < 0.7), -1.0, 1.0)
    assert breakpoint_diagnostics_1d((x, s)).num_sign_changes == 2


def test_guard_bands_drop_boundary_oscillations():
    x, s = _step_samples()
    s[:2] = -5.0
    s[-2:] = 5.0
    diag = breakpoint_diagnostics_1d((x, s))
    assert diag.num_sign_changes == 1
    assert diag.plateau_relative_stddev == pytest.approx(0.0, abs=1e-12)


def test_too_few_samples():
    x = np.arange(12.0)
    with pytest.raises(DiagnosticError):
        breakpoint_diagnostics_1d((x, np.ones(12)))


def test_breakpoint_row():
    row = breakpoint_diagnostics_1d(_step_samples()).as_row()
    assert set(row) == {"num_sign_changes", "plateau_mean_left", "plateau_mean_right",
                        "plateau_relative_stddev", "break_location"}


def test_mode_report_of_two_valued_field():
    space = build_space(unit_interval_mesh(100), 1)
    w = interpolate(space, lambda x: np.where(x[:, 0] <= 0.5, 1.0, -1.0))
    report = laplacian_mode_report(w, 2.0)
    assert report["mode_2"] == pytest.approx(1.0, abs=0.05)
    assert report["mode_fraction"] >= 0.95


# ---------------------------
# Stability and limit quantities
# ---------------------------

def test_stability_margin_zero_data():
    space = build_space(criss_cross_mesh(2, 2), 1)
    spec = cosine_2d_case(1, p=4.0)
    zero = replace(spec, g_laplacian=lambda x: 0.0)
    assert stability_margin(zero_function(space), zero) == 0.0


def test_stability_margin_needs_homogeneous_problem():
    space = build_space(criss_cross_mesh(2, 2, (-1, -1, 1, 1)), 1)
    with pytest.raises(PreconditionError):
        stability_margin(zero_function(space), manufactured_sine(2.0).spec)


def test_holder_gap_nonpositive():
    space = build_space(unit_interval_mesh(8, 0.0, 3.0), 2)
    w = FeFunction(space, np.random.default_rng(4).normal(size=space.dof_count))
    assert holder_gap(w, 5.0) <= 1e-12


def test_limit_diagnostics_keys():
    space = build_space(unit_interval_mesh(8), 2)
    spec = cubic_1d_case(4.0)
    u = interpolate(space, spec.g_value)
    w = FeFunction(space, np.linspace(-1, 1, space.dof_count))
    row = limit_diagnostics(u, w, spec)
    assert set(row) == {"p", "q", "s_linf_proxy", "s_lp", "laplacian_bound", "grad_u_lp", "grad_g_lp",
                        "holder_gap", "stability_margin"}
    assert 0.78 <= row["laplacian_bound"] <= 0.8
    assert row["holder_gap"] <= 1e-12


def test_eoc_of_constant_errors_is_zero():
    np.testing.assert_allclose(eoc([0.3, 0.3, 0.3], [0.4, 0.2, 0.1]), [0.0, 0.0])


@pytest.mark.parametrize("p", [3.0, 12.0, 42.0])
def test_conjugate_norm_duality(p):
    q = p / (p - 1)
    space = build_space(criss_cross_mesh(3, 3), 2)
    v = FeFunction(space, np.random.default_rng(6).normal(size=space.dof_count))
    rule = nonlinear_rule(space)
    values, weights = v.values_at(rule), space.quadrature_weights(rule)
    lhs = lp_norm(np.abs(values) ** (p - 1), weights, q)
    assert lhs == pytest.approx(lp_norm(values, weights, p) ** (p - 1), rel=1e-10)


def test_constant_field_has_no_sign_change():
    x = np.linspace(0.0, 1.0, 101)
    diag = breakpoint_diagnostics_1d((x, np.full_like(x, 0.7)))
    assert diag.num_sign_changes == 0
    assert diag.plateau_means == (pytest.approx(0.7), pytest.approx(0.7))
    assert diag.plateau_relative_stddev == pytest.approx(0.0, abs=1e-12)


def test_recovered_laplacian_of_constant():
    space = build_space(unit_interval_mesh(3), 2)
    w = FeFunction(space, np.full(space.dof_count, -5.0))
    q = 1.25
    np.testing.assert_allclose(recovered_laplacian(w, q).at_dofs(), -(5.0 ** (q - 1)))
