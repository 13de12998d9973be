"""Shared fixtures: full-degree fits of the planar benchmarks, built once per session."""

from __future__ import annotations

import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roacert.bernstein import BernsteinPoly, fit
from roacert.certify import CertConfig, certify_union, monte_carlo_roa
from roacert.converse import ConverseParams, build_value_grid
from roacert.ode import IntegratorConfig, VectorField
from roacert.systems import builtin

settings.register_profile("roacert", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("roacert")


@functools.lru_cache(maxsize=None)
def fitted_system(name: str, degree=None):
    """Bundle, value grid, fitted V1 and certificate for a builtin system."""
    bundle = builtin(name)
    lam, beta, d = bundle.recommended_fit
    d = degree or d
    integ = IntegratorConfig.for_box(bundle.box, t_max=bundle.t_max)
    grid = build_value_grid(
        bundle.field, bundle.box, d, ConverseParams(lam, beta), integ, max_undetermined=bundle.max_undetermined
    )
    V1 = fit(grid)
    cert = certify_union(V1, bundle.default_v2(), bundle.field, bundle.box, CertConfig())
    return bundle, grid, V1, cert


@functools.lru_cache(maxsize=None)
def mc_samples(name: str, samples: int = 10_000, seed: int = 0):
    """Seeded Monte Carlo classification of a builtin system's box."""
    bundle = builtin(name)
    integ = IntegratorConfig.for_box(bundle.box, t_max=bundle.t_max)
    return monte_carlo_roa(bundle.field, bundle.box, CertConfig(seed=seed, mc_samples=samples), integ)


@pytest.fixture(scope="session")
def vdp_fit():
    return fitted_system("vdp")


@pytest.fixture(scope="session")
def smib_fit():
    return fitted_system("smib")


def decay_field(n: int = 1, rate: float = 1.0) -> VectorField:
    return VectorField(n, lambda x: -rate * x, name=f"decay{n}")


@pytest.fixture
def decay2():
    return decay_field(2)


def assert_close(a, b, tol):
    assert np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))) <= tol


def gradient_fd_error(V1, n: int = 100, seed: int = 17, h: float = 1e-5) -> float:
    """Worst relative error of ``V1.grad`` against central differences at random interior points."""
    rng = np.random.default_rng(seed)
    box = V1.box
    # interior points, kept one step away from the faces for the stencil
    pts = box.from_unit(0.01 + 0.98 * rng.random((n, box.dim)))
    g = V1.grad(pts)
    # Where V1 saturates at 1 its gradient is tiny and differencing values
    # near 1 loses every significant digit. By partition of unity
    # 1 - V1 is the Bernstein polynomial with coefficients 1 - c, which is
    # evaluated to full relative precision there; sign flips the gradient.
    complement = BernsteinPoly(1.0 - V1.coeffs, box)
    rel = []
    for x, gx in zip(pts, g):
        P, sign = (complement, -1.0) if V1.value(x) > 0.5 else (V1, 1.0)
        fd = np.empty(box.dim)
        for j in range(box.dim):
            e = np.zeros(box.dim)
            e[j] = h
            fd[j] = sign * (P.value(x + e) - P.value(x - e)) / (2 * h)
        rel.append(np.linalg.norm(gx - fd) / np.linalg.norm(gx))
    return float(max(rel))
