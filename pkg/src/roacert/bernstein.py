"""Tensor-product Bernstein polynomials on a box.

Coefficients are the sampled values of the approximated function on the
uniform node grid, so fitting is a copy; evaluation maps a point affinely
into the unit cube and contracts the coefficient tensor with the 1-D
Bernstein bases, one axis at a time.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from .artifacts import read_artifact, write_artifact
from .errors import DimensionMismatch, ExtrapolationWarning
from .systems import Box, ScalarField

__all__ = ["basis", "basis_derivative", "BernsteinPoly", "fit", "uniform_error"]

_CHUNK = 1 << 22


def basis(u, d: int) -> np.ndarray:
    """Degree-``d`` Bernstein basis at points ``u``, shape ``(len(u), d + 1)``.

    Built by the triangular recurrence ``b^r_k = (1 - u) b^{r-1}_k +
    u b^{r-1}_{k-1}``, which never forms binomial coefficients.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if d < 0:
        raise ValueError("degree must be nonnegative")
    b = np.zeros((u.size, d + 1))
    b[:, 0] = 1.0
    u = u[:, None]
    v = 1.0 - u
    for r in range(1, d + 1):
        prev = b[:, :r].copy()
        b[:, : r] = v * prev
        b[:, 1 : r + 1] += u * prev
    return b


def basis_derivative(u, d: int) -> np.ndarray:
    """Derivatives of the degree-``d`` basis: ``d (b^{d-1}_{k-1} - b^{d-1}_k)``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    out = np.zeros((u.size, d + 1))
    if d == 0:
        return out
    low = basis(u, d - 1)
    out[:, 1:] += d * low
    out[:, :-1] -= d * low
    return out


class BernsteinPoly(ScalarField):
    """Degree-``d`` tensor-product Bernstein polynomial on ``box``.

    ``coeffs`` has shape ``(d + 1,) * n`` in row-major multi-index order.
    """

    kind = "bernstein"

    def __init__(self, coeffs, box: Box):
        coeffs = np.array(coeffs, dtype=float)
        n = coeffs.ndim
        if n != box.dim:
            raise DimensionMismatch(f"coefficient tensor has {n} axes, box has dimension {box.dim}")
        if len(set(coeffs.shape)) != 1 or coeffs.shape[0] < 1:
            raise DimensionMismatch(f"coefficient tensor must be (d+1)^n, got {coeffs.shape}")
        self.coeffs = coeffs
        self.coeffs.setflags(write=False)
        self.box = box
        self.dim = n
        self.degree = coeffs.shape[0] - 1

    # pointwise

    def _unit(self, x):
        u = self.box.to_unit(x)
        if np.any((u < -1e-12) | (u > 1 + 1e-12)):
            warnings.warn("evaluating a Bernstein polynomial outside its box", ExtrapolationWarning, stacklevel=4)
        return u

    def _contract(self, tensor: np.ndarray, bases: Sequence[np.ndarray]) -> np.ndarray:
        m = bases[0].shape[0]
        out = np.empty(m)
        inner = tensor[0].size if tensor.ndim > 1 else 1
        step = max(1, _CHUNK // max(inner, 1))
        for s in range(0, m, step):
            sl = slice(s, s + step)
            res = np.tensordot(bases[0][sl], tensor, axes=(1, 0))
            for b in bases[1:]:
                res = np.einsum("mk,mk...->m...", b[sl], res)
            out[sl] = res
        return out

    def _value(self, x):
        u = self._unit(x)
        bases = [basis(u[:, j], self.degree) for j in range(self.dim)]
        return self._contract(self.coeffs, bases)

    def _grad(self, x):
        u = self._unit(x)
        d = self.degree
        bases = [basis(u[:, j], d) for j in range(self.dim)]
        g = np.zeros_like(u)
        if d == 0:
            return g
        for j in range(self.dim):
            diff = d * np.diff(self.coeffs, axis=j)
            bj = list(bases)
            bj[j] = basis(u[:, j], d - 1)
            g[:, j] = self._contract(diff, bj) / self.box.width[j]
        return g

    # tensor grids

    def _grid_contract(self, tensor: np.ndarray, bases: Sequence[np.ndarray]) -> np.ndarray:
        res = tensor
        for b in bases:
            # contracting axis 0 appends the new grid axis last, so n passes
            # restore the original axis order
            res = np.tensordot(res, b, axes=(0, 1))
        return res

    def _unit_axes(self, axes):
        if len(axes) != self.dim:
            raise DimensionMismatch(f"need {self.dim} grid axes, got {len(axes)}")
        return [(np.asarray(a, dtype=float) - lo) / w for a, lo, w in zip(axes, self.box.lower, self.box.width)]

    def value_grid(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        """Values on the tensor grid spanned by ``axes`` (``indexing='ij'``)."""
        us = self._unit_axes(axes)
        return self._grid_contract(self.coeffs, [basis(u, self.degree) for u in us])

    def grad_grid(self, axes: Sequence[np.ndarray]) -> list:
        """Partial derivatives on the tensor grid, one array per dimension."""
        us = self._unit_axes(axes)
        d = self.degree
        full = [basis(u, d) for u in us]
        out = []
        for j in range(self.dim):
            if d == 0:
                out.append(np.zeros(tuple(len(u) for u in us)))
                continue
            bj = list(full)
            bj[j] = basis(us[j], d - 1)
            diff = d * np.diff(self.coeffs, axis=j)
            out.append(self._grid_contract(diff, bj) / self.box.width[j])
        return out

    def describe(self):
        return {"kind": self.kind, "degree": self.degree, "dim": self.dim, "box": self.box.as_dict()}

    # storage

    def save(self, path) -> None:
        """Write a versioned file; :meth:`load` restores it bit for bit."""
        meta = {"dim": self.dim, "degree": self.degree, "box": self.box.as_dict()}
        write_artifact(path, "bernstein_poly", meta, {"coeffs": self.coeffs})

    @classmethod
    def load(cls, path) -> "BernsteinPoly":
        meta, arrays = read_artifact(path, "bernstein_poly")
        box = Box(meta["box"]["lower"], meta["box"]["upper"])
        poly = cls(arrays["coeffs"], box)
        if poly.degree != meta["degree"] or poly.dim != meta["dim"]:
            raise DimensionMismatch(f"{path}: header does not match the coefficient tensor")
        return poly


def fit(grid) -> BernsteinPoly:
    """Bernstein operator: the node samples become the coefficients."""
    return BernsteinPoly(grid.values, grid.box)


def uniform_error(poly: ScalarField, reference, points) -> float:
    """``max |poly - reference|`` over ``points`` (shape ``(m, n)``).

    ``reference`` is a :class:`ScalarField` or any callable on ``(m, n)``
    arrays.
    """
    points = np.asarray(points, dtype=float)
    approx = poly.value(points)
    exact = reference.value(points) if isinstance(reference, ScalarField) else np.asarray(reference(points))
    return float(np.max(np.abs(approx - exact)))
