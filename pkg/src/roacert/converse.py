"""Trajectory data and samples of the Zubov-type converse Lyapunov function.

For an initial state ``x`` the converse function is
``1 - exp(-lam * W(x))`` with ``W(x)`` the integral of
``||phi(x, t)||^(2 beta)``, approximated by a left-endpoint rectangle rule on
the output grid, and equal to 1 when the trajectory does not converge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .artifacts import digest, read_artifact, write_artifact
from .errors import ConfigError, GridTooLarge, TooManyUndetermined
from .ode import ConvergenceStatus, IntegratorConfig, Status, VectorField, solve_batch
from .systems import Box, norm_weights

log = logging.getLogger(__name__)

__all__ = [
    "ConverseParams",
    "TrajectoryDataset",
    "ValueGrid",
    "node_axes",
    "bernstein_nodes",
    "generate_dataset",
    "w_value",
    "w_values",
    "converse_value",
    "build_value_grid",
    "grid_key",
]

GRID_CAP = 10**7


@dataclass(frozen=True)
class ConverseParams:
    lam: float
    beta: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if int(self.beta) != self.beta or self.beta < 1:
            raise ConfigError(f"beta must be a positive integer, got {self.beta}")
        object.__setattr__(self, "beta", int(self.beta))


@dataclass
class TrajectoryDataset:
    """Norm samples ``norms[i, j] = ||phi(points[i], j * dt)||``.

    Rows of converged trajectories are zero-padded after convergence; rows
    that escaped are padded with ``inf``.
    """

    points: np.ndarray
    norms: np.ndarray
    dt: float
    statuses: np.ndarray
    event_times: np.ndarray

    def status(self, i: int) -> ConvergenceStatus:
        t = self.event_times[i]
        return ConvergenceStatus(Status(int(self.statuses[i])), None if np.isnan(t) else float(t))

    def counts(self) -> dict:
        return {s.name.lower(): int(np.sum(self.statuses == s)) for s in Status}


@dataclass
class ValueGrid:
    """Converse function samples on the Bernstein node grid of ``box``."""

    degree: int
    box: Box
    params: ConverseParams
    values: np.ndarray
    w: np.ndarray
    statuses: np.ndarray
    cfg: IntegratorConfig
    field_name: str = ""
    norm_scaling: str = "box"
    undetermined: str = "one"

    @property
    def dims(self) -> int:
        return self.box.dim

    def key(self) -> str:
        return grid_key(
            self.field_name, self.box, self.degree, self.params, self.cfg, self.norm_scaling, self.undetermined
        )

    def save(self, path) -> None:
        meta = {
            "field": self.field_name,
            "degree": self.degree,
            "box": self.box.as_dict(),
            "lam": self.params.lam,
            "beta": self.params.beta,
            "integrator": self.cfg.as_dict(),
            "norm_scaling": self.norm_scaling,
            "undetermined": self.undetermined,
            "key": self.key(),
        }
        write_artifact(path, "value_grid", meta, {"values": self.values, "w": self.w, "statuses": self.statuses})

    @classmethod
    def load(cls, path) -> "ValueGrid":
        meta, arrays = read_artifact(path, "value_grid")
        return cls(
            degree=int(meta["degree"]),
            box=Box(meta["box"]["lower"], meta["box"]["upper"]),
            params=ConverseParams(meta["lam"], meta["beta"]),
            values=arrays["values"],
            w=arrays["w"],
            statuses=arrays["statuses"],
            cfg=IntegratorConfig(**meta["integrator"]),
            field_name=meta["field"],
            norm_scaling=meta["norm_scaling"],
            undetermined=meta["undetermined"],
        )


def grid_key(
    field_name: str,
    box: Box,
    degree: int,
    params: ConverseParams,
    cfg: IntegratorConfig,
    norm_scaling: str = "box",
    undetermined: str = "one",
) -> str:
    return digest(
        {
            "field": field_name,
            "box": box.as_dict(),
            "degree": int(degree),
            "lam": float(params.lam),
            "beta": int(params.beta),
            "integrator": cfg.as_dict(),
            "norm_scaling": norm_scaling,
            "undetermined": undetermined,
        }
    )


def node_axes(box: Box, d: int) -> List[np.ndarray]:
    """Per-dimension node coordinates ``a_j + (k / d)(b_j - a_j)``."""
    if d < 1:
        raise ValueError("degree must be >= 1")
    k = np.arange(d + 1) / d
    axes = [lo + k * w for lo, w in zip(box.lower, box.width)]
    for a, hi in zip(axes, box.upper):
        a[-1] = hi
    return axes


def bernstein_nodes(box: Box, d: int, cap: int = GRID_CAP) -> np.ndarray:
    """All ``(d + 1)^n`` nodes as rows, in row-major multi-index order."""
    if d < 1:
        raise ValueError("degree must be >= 1")
    count = (d + 1) ** box.dim
    if count > cap:
        raise GridTooLarge(f"(d+1)^n = {count} nodes exceeds the cap of {cap}")
    axes = node_axes(box, d)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def generate_dataset(field: VectorField, points, cfg: IntegratorConfig, norm_weights=None) -> TrajectoryDataset:
    """Simulate every point and record trajectory norms on the output grid.

    ``norm_weights`` scales each coordinate before taking norms (see
    :func:`build_value_grid`).
    """
    points = np.array(points, dtype=float, ndmin=2)
    sol = solve_batch(field, points, cfg, norm_weights=norm_weights)
    statuses = sol.status.copy()
    norms = sol.norms
    # rows whose integration failed are reported undetermined with no data tail
    statuses[sol.failed] = Status.UNDETERMINED
    return TrajectoryDataset(points=points, norms=norms, dt=cfg.dt_out, statuses=statuses, event_times=sol.event_time)


def w_values(norms: np.ndarray, beta: int, dt: float, statuses=None) -> np.ndarray:
    """Vectorised :func:`w_value` over dataset rows."""
    norms = np.atleast_2d(np.asarray(norms, dtype=float))
    with np.errstate(invalid="ignore", over="ignore"):
        w = np.sum(norms ** (2 * beta), axis=1) * dt
    if statuses is not None:
        w = np.where(np.asarray(statuses) == Status.ESCAPED, np.inf, w)
    return w


def w_value(row, beta: int, dt: float, status=None) -> float:
    """Left-endpoint rectangle rule ``sum_j D_j^(2 beta) dt``; ``inf`` if escaped."""
    row = np.asarray(row, dtype=float).reshape(-1)
    if row.size == 0:
        raise ValueError("empty trajectory row")
    kind = status.kind if isinstance(status, ConvergenceStatus) else status
    if kind is not None and Status(int(kind)) is Status.ESCAPED:
        return float("inf")
    return float(np.sum(row ** (2 * beta)) * dt)


def converse_value(w, lam: float):
    """``1 - exp(-lam * W)``, mapping ``W = inf`` to 1."""
    w = np.asarray(w, dtype=float)
    out = np.where(np.isinf(w), 1.0, -np.expm1(-lam * np.where(np.isinf(w), 0.0, w)))
    return float(out) if out.ndim == 0 else out


def build_value_grid(
    field: VectorField,
    box: Box,
    d: int,
    params: ConverseParams,
    cfg: IntegratorConfig,
    *,
    max_undetermined: float = 0.01,
    undetermined: str = "one",
    norm_scaling: str = "box",
    batch_size: int = 4096,
    cap: int = GRID_CAP,
) -> ValueGrid:
    """Sample the converse function on the Bernstein nodes of ``box``.

    Nodes whose trajectories neither converge nor escape within ``t_max`` get
    the value 1 (``undetermined="one"``) or keep their truncated integral
    (``"truncated"``). ``norm_scaling`` selects the norm inside ``W``: with
    ``"box"`` each coordinate is divided by the box width, so coordinates of
    very different magnitude contribute comparably.

    Raises
    ------
    TooManyUndetermined
        If the undetermined fraction exceeds ``max_undetermined``.
    """
    if undetermined not in ("one", "truncated"):
        raise ConfigError(f"undetermined must be 'one' or 'truncated', got {undetermined!r}")
    weights = norm_weights(box, norm_scaling)
    nodes = bernstein_nodes(box, d, cap=cap)
    w = np.empty(len(nodes))
    statuses = np.empty(len(nodes), dtype=np.int8)
    for start in range(0, len(nodes), batch_size):
        chunk = nodes[start : start + batch_size]
        ds = generate_dataset(field, chunk, cfg, norm_weights=weights)
        w[start : start + len(chunk)] = w_values(ds.norms, params.beta, ds.dt, ds.statuses)
        statuses[start : start + len(chunk)] = ds.statuses
        log.debug("simulated %d/%d nodes", start + len(chunk), len(nodes))
    undetermined_mask = statuses == Status.UNDETERMINED
    frac = float(np.mean(undetermined_mask))
    if frac > max_undetermined:
        raise TooManyUndetermined(
            f"{undetermined_mask.sum()} of {len(nodes)} nodes ({100 * frac:.2f}%) neither converged nor escaped "
            f"within t_max={cfg.t_max}"
        )
    if undetermined_mask.any():
        log.info("%d undetermined nodes (%s)", int(undetermined_mask.sum()), undetermined)
    if undetermined == "one":
        w = np.where(undetermined_mask, np.inf, w)
    shape = (d + 1,) * box.dim
    return ValueGrid(
        degree=d,
        box=box,
        params=params,
        values=converse_value(w, params.lam).reshape(shape),
        w=w.reshape(shape),
        statuses=statuses.reshape(shape),
        cfg=cfg,
        field_name=field.name,
        norm_scaling=norm_scaling,
        undetermined=undetermined,
    )
