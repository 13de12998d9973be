import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roacert.bernstein import BernsteinPoly, basis, basis_derivative, fit, uniform_error
from roacert.converse import ConverseParams, ValueGrid, bernstein_nodes
from roacert.errors import DimensionMismatch, ExtrapolationWarning, FormatError
from roacert.ode import IntegratorConfig
from roacert.systems import Box

from conftest import fitted_system, gradient_fd_error

UNIT1 = Box([0.0], [1.0])
UNIT2 = Box([0.0, 0.0], [1.0, 1.0])


def sample_poly(func, box: Box, d: int) -> BernsteinPoly:
    """Bernstein operator applied to ``func`` (vectorised over rows)."""
    nodes = bernstein_nodes(box, d)
    return BernsteinPoly(func(nodes).reshape((d + 1,) * box.dim), box)


def binomial_basis(u, d):
    """Textbook basis with exact binomials, feasible for small degrees."""
    u = np.asarray(u, dtype=float)
    return np.stack([math.comb(d, k) * u**k * (1 - u) ** (d - k) for k in range(d + 1)], axis=-1)


def sincos(x):
    return np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])


def sincos_grad(x):
    return np.stack(
        [
            np.pi * np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]),
            -np.pi * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
        ],
        axis=1,
    )


def test_basis_matches_binomial_form():
    u = np.linspace(0, 1, 17)
    for d in (0, 1, 2, 7, 20):
        assert np.allclose(basis(u, d), binomial_basis(u, d), atol=1e-14)


def test_basis_is_finite_at_high_degree():
    b = basis(np.linspace(0, 1, 101), 75)
    assert np.all(np.isfinite(b)) and np.all(b >= 0)


# fit and evaluation examples


def test_constant_grid_gives_constant_polynomial():
    poly = BernsteinPoly(np.full((6, 6), 0.37), Box([-2, -1], [3, 4]))
    x = Box([-2, -1], [3, 4]).sample(np.random.default_rng(0), 50)
    assert np.allclose(poly.value(x), 0.37, atol=1e-14)
    assert np.allclose(poly.grad(x), 0.0, atol=1e-13)


def test_degree_one_interpolant_is_identity():
    poly = BernsteinPoly([0.0, 1.0], UNIT1)
    x = np.linspace(0, 1, 11)[:, None]
    assert np.allclose(poly.value(x), x[:, 0], atol=1e-15)


def test_affine_reproduction_degree_three():
    poly = sample_poly(lambda x: x[:, 0], UNIT1, 3)
    assert abs(poly.value([0.37]) - 0.37) <= 1e-12
    assert np.allclose(poly.grad(np.linspace(0, 1, 9)[:, None]), 1.0, atol=1e-10)


def test_quadratic_basis_at_midpoint():
    assert BernsteinPoly([0.0, 0.0, 1.0], UNIT1).value([0.5]) == pytest.approx(0.25, abs=1e-15)


def test_fit_copies_value_grid():
    box = Box([-1, -2], [1, 2])
    values = np.random.default_rng(1).random((4, 4))
    grid = ValueGrid(3, box, ConverseParams(1.0), values, values, np.zeros((4, 4), np.int8), IntegratorConfig())
    poly = fit(grid)
    assert np.array_equal(poly.coeffs, values) and poly.box == box and poly.degree == 3
    # at a corner node the polynomial interpolates
    assert poly.value([1.0, 2.0]) == pytest.approx(values[-1, -1], abs=1e-15)


def test_dimension_mismatch():
    poly = BernsteinPoly(np.zeros((3, 3)), UNIT2)
    with pytest.raises(DimensionMismatch):
        poly.value(np.zeros((2, 3)))
    with pytest.raises(DimensionMismatch):
        poly.grad([0.5])
    with pytest.raises(DimensionMismatch):
        BernsteinPoly(np.zeros((3, 4)), UNIT2)
    with pytest.raises(DimensionMismatch):
        BernsteinPoly(np.zeros(3), UNIT2)


def test_evaluation_outside_the_box_warns():
    poly = BernsteinPoly([0.0, 1.0, 4.0], Box([0.0], [2.0]))
    with pytest.warns(ExtrapolationWarning):
        poly.value([2.5])
    with pytest.warns(ExtrapolationWarning):
        poly.grad([-0.1])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        poly.value([[0.0], [2.0]])


# uniform error


def test_uniform_error_of_affine_fit():
    box = Box([-1, 0], [2, 3])
    affine = lambda x: 0.5 - 2.0 * x[:, 0] + 0.25 * x[:, 1]
    poly = sample_poly(affine, box, 4)
    pts = box.sample(np.random.default_rng(2), 200)
    assert uniform_error(poly, affine, pts) <= 1e-10


def test_uniform_error_decreases_for_sine():
    f = lambda x: np.sin(np.pi * x[:, 0])
    pts = np.linspace(0, 1, 201)[:, None]
    e10 = uniform_error(sample_poly(f, UNIT1, 10), f, pts)
    e40 = uniform_error(sample_poly(f, UNIT1, 40), f, pts)
    assert e40 < e10


def test_uniform_error_against_off_node_samples_is_finite():
    f = lambda x: np.exp(-(x[:, 0] ** 2))
    poly = sample_poly(f, Box([-2.0], [2.0]), 8)
    mids = (bernstein_nodes(Box([-2.0], [2.0]), 8)[:-1] + bernstein_nodes(Box([-2.0], [2.0]), 8)[1:]) / 2
    assert np.isfinite(uniform_error(poly, f, mids))


# properties


@settings(max_examples=60)
@given(st.integers(0, 100), st.floats(0, 1))
def test_partition_of_unity(d, u):
    assert abs(basis([u], d).sum() - 1.0) <= 1e-12


def test_partition_of_unity_dense():
    u = np.linspace(0, 1, 1001)
    for d in (1, 10, 50, 75, 100):
        assert np.max(np.abs(basis(u, d).sum(axis=1) - 1.0)) <= 1e-12
        assert np.max(np.abs(basis_derivative(u, d).sum(axis=1))) <= 1e-9


@settings(max_examples=40)
@given(
    st.integers(1, 6),
    st.lists(st.floats(-10, 10), min_size=8, max_size=8),
    st.lists(st.floats(0, 1), min_size=2, max_size=2),
)
def test_range_within_coefficient_bounds(d, raw, u):
    coeffs = np.resize(np.array(raw), (d + 1, d + 1))
    box = Box([-1, -3], [2, 5])
    poly = BernsteinPoly(coeffs, box)
    v = poly.value(box.from_unit(u))
    assert coeffs.min() - 1e-12 <= v <= coeffs.max() + 1e-12


@settings(max_examples=40)
@given(
    st.integers(1, 30),
    st.floats(-5, 5),
    st.floats(-5, 5),
    st.floats(-5, 5),
)
def test_affine_reproduction_any_degree(d, c0, c1, c2):
    box = Box([-1, -2], [3, 2])
    affine = lambda x: c0 + c1 * x[:, 0] + c2 * x[:, 1]
    poly = sample_poly(affine, box, d)
    pts = box.sample(np.random.default_rng(d), 50)
    assert uniform_error(poly, affine, pts) <= 1e-10
    assert np.allclose(poly.grad(pts), [c1, c2], atol=1e-9)


def _convergence_errors():
    g = np.linspace(0, 1, 50)
    uu, vv = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    errs, gerrs = [], []
    for d in (5, 10, 20, 40):
        poly = sample_poly(sincos, UNIT2, d)
        errs.append(uniform_error(poly, sincos, pts))
        gerrs.append(float(np.max(np.abs(poly.grad(pts) - sincos_grad(pts)))))
    return errs, gerrs


def test_uniform_convergence_in_degree():
    errs, _ = _convergence_errors()
    assert all(a > b for a, b in zip(errs, errs[1:])), errs


def test_derivative_convergence_in_degree():
    _, gerrs = _convergence_errors()
    assert all(a > b for a, b in zip(gerrs, gerrs[1:])), gerrs


def test_grid_evaluation_matches_pointwise():
    box = Box([-1, -2, 0], [1, 2, 3])
    coeffs = np.random.default_rng(4).random((5, 5, 5))
    poly = BernsteinPoly(coeffs, box)
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(box.lower, box.upper, (4, 3, 5))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    assert np.allclose(poly.value_grid(axes).ravel(), poly.value(pts), atol=1e-14)
    for j, gj in enumerate(poly.grad_grid(axes)):
        assert np.allclose(gj.ravel(), poly.grad(pts)[:, j], atol=1e-12)


# fitted polynomials of the benchmark systems


def _fit_cases():
    # the four-state systems are fitted at degree 8 to stay at desk scale
    return [("vdp", None), ("smib", None), ("tmib", 8), ("three_machine", 8)]


@pytest.mark.slow
@pytest.mark.parametrize("name, degree", _fit_cases())
def test_fitted_gradient_matches_central_differences(name, degree):
    _, _, V1, _ = fitted_system(name, degree)
    rel = gradient_fd_error(V1)
    assert rel <= 1e-4, rel


# storage


def test_save_load_is_bit_exact(tmp_path):
    box = Box([-0.75 * math.pi, -30], [math.pi, 30])
    coeffs = np.random.default_rng(9).random((8, 8)) * 1e-3 + np.finfo(float).tiny
    poly = BernsteinPoly(coeffs, box)
    path = tmp_path / "poly.roa"
    poly.save(path)
    back = BernsteinPoly.load(path)
    assert back.box == box and back.degree == 7
    assert back.coeffs.tobytes() == poly.coeffs.tobytes()
    x = box.sample(np.random.default_rng(1), 20)
    assert np.array_equal(back.value(x), poly.value(x))


def test_load_rejects_other_files(tmp_path):
    path = tmp_path / "junk.roa"
    path.write_bytes(b"not a polynomial")
    with pytest.raises(FormatError):
        BernsteinPoly.load(path)
