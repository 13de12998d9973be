"""Plot-ready CSV exports: sampled fields on a plane and level-set polylines.

Both exports work on a 2-D plane of the state space. For ``n = 2`` the
plane is the box itself; for larger ``n`` it is the slice through two
chosen coordinates with every other coordinate held fixed (zero by
default, which for the four-state power systems means zero speeds).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .artifacts import atomic_write_text
from .errors import ConfigError, DimensionMismatch
from .ode import VectorField
from .systems import Box, ScalarField

__all__ = ["Plane", "default_plane", "export_grid_csv", "ContourSet", "marching_squares", "export_contours"]

GRID_HEADER = "x1,x2,V1,V2,lieV1"
CONTOUR_HEADER = "segment_id,x1,x2"


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


@dataclass(frozen=True)
class Plane:
    """Two free coordinates ``axes`` of an ``n``-D box; the rest are fixed.

    ``fixed`` holds the full state used for the frozen coordinates; its
    entries at ``axes`` are ignored.
    """

    box: Box
    axes: Tuple[int, int] = (0, 1)
    fixed: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        n = self.box.dim
        i, j = self.axes
        if n < 2 or not (0 <= i < n and 0 <= j < n) or i == j:
            raise ConfigError(f"plane axes {self.axes} are invalid for dimension {n}")
        if self.fixed is not None and len(self.fixed) != n:
            raise DimensionMismatch(f"fixed state has length {len(self.fixed)}, expected {n}")

    @property
    def lower(self) -> np.ndarray:
        return self.box.lower[list(self.axes)]

    @property
    def upper(self) -> np.ndarray:
        return self.box.upper[list(self.axes)]

    def grid_axes(self, resolution) -> List[np.ndarray]:
        if isinstance(resolution, int):
            resolution = (resolution, resolution)
        if min(resolution) < 2:
            raise ConfigError("plane resolution must be at least 2 per axis")
        return [np.linspace(lo, hi, r) for lo, hi, r in zip(self.lower, self.upper, resolution)]

    def lift(self, uv: np.ndarray) -> np.ndarray:
        """Map plane coordinates of shape ``(m, 2)`` to full states."""
        uv = np.atleast_2d(uv)
        base = np.zeros(self.box.dim) if self.fixed is None else np.asarray(self.fixed, dtype=float)
        x = np.tile(base, (len(uv), 1))
        x[:, self.axes[0]] = uv[:, 0]
        x[:, self.axes[1]] = uv[:, 1]
        return x


def default_plane(box: Box) -> Plane:
    """The box itself for ``n = 2``; otherwise the ``(x1, x3)`` slice at zero speeds."""
    if box.dim == 2:
        return Plane(box)
    if box.dim >= 4:
        return Plane(box, (0, 2))
    return Plane(box, (0, 1))


def _tensor_axes(plane: Plane, ax) -> list:
    base = np.zeros(plane.box.dim) if plane.fixed is None else np.asarray(plane.fixed, dtype=float)
    axes = [np.array([v]) for v in base]
    axes[plane.axes[0]] = ax[0]
    axes[plane.axes[1]] = ax[1]
    return axes


def _to_plane(arr: np.ndarray, plane: Plane) -> np.ndarray:
    # drop the singleton axes of the frozen coordinates
    i, j = plane.axes
    out = np.squeeze(arr, axis=tuple(k for k in range(arr.ndim) if k not in (i, j)))
    return out if i < j else out.T


def _plane_values(V: ScalarField, plane: Plane, ax, x: np.ndarray, with_grad: bool):
    """Values (and gradients) of ``V`` on the plane grid, flattened row-major."""
    if hasattr(V, "value_grid"):
        axes = _tensor_axes(plane, ax)
        vals = _to_plane(V.value_grid(axes), plane).reshape(-1)
        if not with_grad:
            return vals, None
        grads = np.stack([_to_plane(g, plane).reshape(-1) for g in V.grad_grid(axes)], axis=1)
        return vals, grads
    return V.value(x), (V.grad(x) if with_grad else None)


def _plane_points(plane: Plane, resolution):
    ax = plane.grid_axes(resolution)
    uu, vv = np.meshgrid(ax[0], ax[1], indexing="ij")
    uv = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
    return ax, uv, plane.lift(uv)


def export_grid_csv(
    path,
    plane: Plane,
    resolution,
    V1: Optional[ScalarField],
    V2: Optional[ScalarField],
    field: VectorField,
) -> int:
    """Write ``x1,x2,V1,V2,lieV1`` for every node of a plane grid.

    Rows run over the first plane axis slowest (row-major). ``x1`` and
    ``x2`` are the two plane coordinates. Missing functions are written as
    ``nan``. Values carry 9 significant digits. Returns the row count.
    """
    ax, uv, x = _plane_points(plane, resolution)
    nan = np.full(len(x), np.nan)
    if V1 is not None:
        v1, g1 = _plane_values(V1, plane, ax, x, True)
        lie = np.sum(g1 * field(x), axis=1)
    else:
        v1 = lie = nan
    v2 = _plane_values(V2, plane, ax, x, False)[0] if V2 is not None else nan
    lines = [GRID_HEADER]
    for row in zip(uv[:, 0], uv[:, 1], v1, v2, lie):
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return len(uv)


@dataclass
class ContourSet:
    """Polylines of one level set; ``empty`` flags a level that misses the plane."""

    level: float
    polylines: List[np.ndarray]

    @property
    def empty(self) -> bool:
        return len(self.polylines) == 0

    def closed(self, tol: float = 1e-12) -> List[bool]:
        return [len(p) > 2 and bool(np.all(np.abs(p[0] - p[-1]) <= tol)) for p in self.polylines]


# Edge ids inside a cell: 0 = bottom (i, j)-(i+1, j), 1 = right (i+1, j)-(i+1, j+1),
# 2 = top (i, j+1)-(i+1, j+1), 3 = left (i, j)-(i, j+1); corners are numbered
# 0 = (i, j), 1 = (i+1, j), 2 = (i+1, j+1), 3 = (i, j+1) and bit k of the case
# index is set when corner k lies above the level.
_SEGMENTS = {
    0: (),
    1: ((3, 0),),
    2: ((0, 1),),
    3: ((3, 1),),
    4: ((1, 2),),
    6: ((0, 2),),
    7: ((3, 2),),
    8: ((2, 3),),
    9: ((2, 0),),
    11: ((2, 1),),
    12: ((1, 3),),
    13: ((1, 0),),
    14: ((0, 3),),
    15: (),
}
# saddles: the pairing depends on whether the cell centre is above the level
_SADDLE = {
    5: {True: ((3, 2), (1, 0)), False: ((3, 0), (1, 2))},
    10: {True: ((0, 3), (2, 1)), False: ((0, 1), (2, 3))},
}


def _edge_key(i: int, j: int, e: int) -> tuple:
    # globally unique ids shared by neighbouring cells
    if e == 0:
        return ("h", i, j)
    if e == 2:
        return ("h", i, j + 1)
    if e == 3:
        return ("v", i, j)
    return ("v", i + 1, j)


def marching_squares(
    values: np.ndarray, xs: np.ndarray, ys: np.ndarray, level: float, centre: Optional[np.ndarray] = None
) -> ContourSet:
    """Extract the ``level`` set of node ``values`` (shape ``(len(xs), len(ys))``).

    Crossing points are linear interpolants along cell edges. Saddle cells
    are resolved with ``centre`` (values at the cell centres, shape
    ``(len(xs) - 1, len(ys) - 1)``), defaulting to the mean of the corners.
    Segments are chained into ordered polylines; closed curves repeat their
    first point at the end.
    """
    values = np.asarray(values, dtype=float)
    nx, ny = values.shape
    if (nx, ny) != (len(xs), len(ys)):
        raise DimensionMismatch("values shape does not match the grid axes")
    above = values > level
    code = (
        above[:-1, :-1].astype(np.int8)
        | (above[1:, :-1].astype(np.int8) << 1)
        | (above[1:, 1:].astype(np.int8) << 2)
        | (above[:-1, 1:].astype(np.int8) << 3)
    )
    if centre is None:
        centre = 0.25 * (values[:-1, :-1] + values[1:, :-1] + values[1:, 1:] + values[:-1, 1:])

    points: Dict[tuple, np.ndarray] = {}

    def crossing(i, j, e):
        key = _edge_key(i, j, e)
        if key not in points:
            if key[0] == "h":
                _, a, b = key
                p0, p1 = (a, b), (a + 1, b)
            else:
                _, a, b = key
                p0, p1 = (a, b), (a, b + 1)
            v0, v1 = values[p0], values[p1]
            t = 0.5 if v1 == v0 else (level - v0) / (v1 - v0)
            t = min(1.0, max(0.0, t))
            x0 = np.array([xs[p0[0]], ys[p0[1]]])
            x1 = np.array([xs[p1[0]], ys[p1[1]]])
            points[key] = x0 + t * (x1 - x0)
        return key

    adjacency: Dict[tuple, List[tuple]] = {}
    segments = []
    for i, j in zip(*np.nonzero((code != 0) & (code != 15))):
        c = int(code[i, j])
        pairs = _SADDLE[c][bool(centre[i, j] > level)] if c in _SADDLE else _SEGMENTS[c]
        for ea, eb in pairs:
            a, b = crossing(i, j, ea), crossing(i, j, eb)
            sid = len(segments)
            segments.append((a, b))
            adjacency.setdefault(a, []).append(sid)
            adjacency.setdefault(b, []).append(sid)

    used = np.zeros(len(segments), dtype=bool)
    polylines = []

    def walk(start_key, sid):
        chain = [start_key]
        key = start_key
        while sid is not None:
            used[sid] = True
            a, b = segments[sid]
            key = b if a == key else a
            chain.append(key)
            sid = next((s for s in adjacency[key] if not used[s]), None)
        return chain

    # open curves start at endpoints of degree one, closed ones anywhere
    order = sorted(adjacency, key=lambda k: (len(adjacency[k]) != 1, k))
    for key in order:
        for sid in adjacency[key]:
            if not used[sid]:
                chain = walk(key, sid)
                polylines.append(np.array([points[k] for k in chain]))
    return ContourSet(level=float(level), polylines=polylines)


def export_contours(path, V: ScalarField, level: float, plane: Plane, resolution) -> ContourSet:
    """Write the ``level`` set of ``V`` on ``plane`` as ``segment_id,x1,x2`` rows.

    An empty level set writes the header only; check ``ContourSet.empty``.
    """
    ax, _, x = _plane_points(plane, resolution)
    vals = _plane_values(V, plane, ax, x, False)[0].reshape(len(ax[0]), len(ax[1]))
    cx = 0.5 * (ax[0][:-1] + ax[0][1:])
    cy = 0.5 * (ax[1][:-1] + ax[1][1:])
    cu, cv = np.meshgrid(cx, cy, indexing="ij")
    cpts = plane.lift(np.stack([cu.reshape(-1), cv.reshape(-1)], axis=1))
    centre = _plane_values(V, plane, [cx, cy], cpts, False)[0].reshape(cu.shape)
    cs = marching_squares(vals, ax[0], ax[1], level, centre)
    lines = [CONTOUR_HEADER]
    for sid, poly in enumerate(cs.polylines):
        for p in poly:
            lines.append(f"{sid},{_fmt(p[0])},{_fmt(p[1])}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return cs


def read_csv_columns(path) -> Tuple[List[str], np.ndarray]:
    """Header names and the numeric table of an exported CSV file."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data
