"""Solution map of autonomous ODEs.

The integrator is a Dormand-Prince 5(4) pair whose step sizes are
controlled per trajectory, vectorised over a batch of initial conditions.
Solutions are reported on a uniform output grid using cubic Hermite
interpolation between accepted steps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonFiniteState, StepUnderflow

__all__ = [
    "VectorField",
    "Status",
    "ConvergenceStatus",
    "IntegratorConfig",
    "Trajectory",
    "BatchSolution",
    "solve_batch",
    "integrate",
    "flow",
    "flow_batch",
    "classify",
]


class VectorField:
    """Autonomous vector field ``f: R^n -> R^n``.

    ``func`` must accept an array of shape ``(m, n)`` and return an array of
    the same shape; single states of shape ``(n,)`` are handled here.
    """

    def __init__(self, dim: int, func: Callable[[np.ndarray], np.ndarray], name: str = "field"):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = int(dim)
        self.func = func
        self.name = name

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(
                f"{self.name} expects states of dimension {self.dim}, got {x.shape[-1]}"
            )
        if x.ndim == 1:
            return np.asarray(self.func(x[None, :]), dtype=float)[0]
        flat = x.reshape(-1, self.dim)
        return np.asarray(self.func(flat), dtype=float).reshape(x.shape)

    def __repr__(self):
        return f"VectorField(dim={self.dim}, name={self.name!r})"


class Status(enum.IntEnum):
    UNDETERMINED = 0
    CONVERGED = 1
    ESCAPED = 2


@dataclass(frozen=True)
class ConvergenceStatus:
    kind: Status
    time: Optional[float] = None

    @property
    def converged(self) -> bool:
        return self.kind is Status.CONVERGED

    @property
    def escaped(self) -> bool:
        return self.kind is Status.ESCAPED


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances, output grid and termination thresholds.

    ``r_esc`` is the escape radius; :meth:`for_box` sets it to ten times the
    diameter of a domain box.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    dt_out: float = 0.01
    t_max: float = 30.0
    eps_conv: float = 1e-4
    r_esc: float = 1e3

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "dt_out", "t_max", "eps_conv", "r_esc"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be a positive finite number, got {value!r}")
        if self.eps_conv >= self.r_esc:
            raise ConfigError("eps_conv must be smaller than r_esc")

    @classmethod
    def for_box(cls, box, **overrides) -> "IntegratorConfig":
        overrides.setdefault("r_esc", 10.0 * box.diameter)
        return cls(**overrides)

    @property
    def n_steps(self) -> int:
        """Number K of output intervals, so the grid has K + 1 samples."""
        return max(1, int(round(self.t_max / self.dt_out)))

    def output_times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt_out

    def replace(self, **changes) -> "IntegratorConfig":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return IntegratorConfig(**values)

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


@dataclass
class Trajectory:
    x0: np.ndarray
    dt: float
    states: np.ndarray
    status: ConvergenceStatus

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


@dataclass
class BatchSolution:
    """Raw output of :func:`solve_batch`.

    ``norms[i, j]`` is the Euclidean norm at output time ``j * dt`` for
    ``j <= last[i]``; later entries are zero for converged rows and ``inf``
    for rows that escaped or failed. ``states`` is only populated when
    requested.
    """

    times: np.ndarray
    norms: np.ndarray
    status: np.ndarray
    event_time: np.ndarray
    last: np.ndarray
    failed: np.ndarray
    final: np.ndarray
    states: Optional[np.ndarray] = dc_field(default=None)
    nonfinite: Optional[np.ndarray] = dc_field(default=None)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B - _B_LOW

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _rms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(a * a, axis=1))


def _hermite(y0, f0, y1, f1, h, theta):
    th = theta[:, None]
    th2 = th * th
    th3 = th2 * th
    hh = h[:, None]
    return (
        (2 * th3 - 3 * th2 + 1) * y0
        + (th3 - 2 * th2 + th) * hh * f0
        + (-2 * th3 + 3 * th2) * y1
        + (th3 - th2) * hh * f1
    )


def solve_batch(
    field: VectorField,
    x0,
    cfg: IntegratorConfig,
    *,
    t_out: Optional[np.ndarray] = None,
    terminate: bool = True,
    record_states: bool = False,
    norm_weights=None,
) -> BatchSolution:
    """Integrate many initial conditions at once.

    Parameters
    ----------
    field : VectorField
    x0 : array_like, shape (m, n)
    cfg : IntegratorConfig
    t_out : ndarray, optional
        Increasing output times starting at 0. Defaults to the uniform grid
        of ``cfg``.
    terminate : bool
        Stop a row as soon as it converges (output norm <= ``eps_conv``) or
        escapes (norm >= ``r_esc`` or non-finite state).
    record_states : bool
        Keep the full state history (memory ``m * len(t_out) * n``).
    norm_weights : array_like, optional
        Per-coordinate weights ``w``; the recorded norms are then
        ``||w * x||``. Termination always uses the plain Euclidean norm.
    """
    x0 = np.array(x0, dtype=float, ndmin=2)
    m, n = x0.shape
    if n != field.dim:
        raise DimensionMismatch(f"initial states have dimension {n}, field has {field.dim}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial states must be finite")
    times = cfg.output_times() if t_out is None else np.asarray(t_out, dtype=float)
    n_out = len(times)
    t_end = float(times[-1])
    h_min = 1e-14 * max(cfg.t_max, t_end)

    wts = None if norm_weights is None else np.asarray(norm_weights, dtype=float).reshape(n)
    norms = np.zeros((m, n_out))
    norms[:, 0] = np.linalg.norm(x0 if wts is None else x0 * wts, axis=1)
    states = None
    if record_states:
        states = np.zeros((m, n_out, n))
        states[:, 0] = x0
    status = np.full(m, int(Status.UNDETERMINED), dtype=np.int8)
    event_time = np.full(m, np.nan)
    last = np.zeros(m, dtype=np.int64)
    failed = np.zeros(m, dtype=bool)
    nonfinite = np.zeros(m, dtype=bool)
    final = x0.copy()

    if terminate:
        esc0 = np.linalg.norm(x0, axis=1) >= cfg.r_esc
        status[esc0] = Status.ESCAPED
        event_time[esc0] = 0.0

    active = np.flatnonzero(status == Status.UNDETERMINED) if n_out > 1 else np.array([], int)
    y = x0[active].copy()
    f = field(y) if len(active) else np.zeros((0, n))
    t = np.zeros(len(active))
    nxt = np.ones(len(active), dtype=np.int64)

    # initial step (Hairer & Wanner heuristic, first stage only)
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        d0 = _rms(y / scale) if len(active) else np.zeros(0)
        d1 = _rms(f / scale) if len(active) else np.zeros(0)
        h = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
    h = np.minimum(h, min(cfg.dt_out, t_end))

    while len(active):
        h = np.minimum(h, t_end - t)
        snap = t + h >= t_end * (1 - 1e-13)
        h = np.where(snap, t_end - t, h)

        hh = h[:, None]
        k = [f]
        for s in range(1, 7):
            ys = y.copy()
            for j, a in enumerate(_A[s]):
                if a != 0.0:
                    ys += hh * a * k[j]
            with np.errstate(all="ignore"):
                k.append(field(ys))
        with np.errstate(all="ignore"):
            y_new = y.copy()
            err = np.zeros_like(y)
            for s in range(7):
                if _B[s] != 0.0:
                    y_new += hh * _B[s] * k[s]
                if _E[s] != 0.0:
                    err += hh * _E[s] * k[s]
            f_new = k[6]
            sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = _rms(err / sc)

        finite = np.all(np.isfinite(y_new), axis=1) & np.all(np.isfinite(f_new), axis=1)
        finite &= np.isfinite(err_norm)
        accept = finite & (err_norm <= 1.0)
        done = np.zeros(len(active), dtype=bool)
        # a non-finite trial step is retried smaller; it only counts as an
        # escape once the step size collapses (handled below)

        t_new = t + h
        acc_idx = np.flatnonzero(accept)
        if len(acc_idx):
            # dense output on every grid time inside (t, t_new]
            pend = acc_idx[times[np.minimum(nxt[acc_idx], n_out - 1)] <= t_new[acc_idx] * (1 + 1e-13) + 1e-300]
            pend = pend[nxt[pend] < n_out]
            while len(pend):
                j = nxt[pend]
                theta = (times[j] - t[pend]) / h[pend]
                theta = np.clip(theta, 0.0, 1.0)
                yo = _hermite(y[pend], f[pend], y_new[pend], f_new[pend], h[pend], theta)
                rows = active[pend]
                nrm = np.linalg.norm(yo, axis=1)
                norms[rows, j] = nrm if wts is None else np.linalg.norm(yo * wts, axis=1)
                if record_states:
                    states[rows, j] = yo
                last[rows] = j
                nxt[pend] = j + 1
                if terminate:
                    conv = (nrm <= cfg.eps_conv) & ~done[pend]
                    esc = (nrm >= cfg.r_esc) & ~done[pend]
                    status[rows[conv]] = Status.CONVERGED
                    event_time[rows[conv]] = times[j[conv]]
                    status[rows[esc]] = Status.ESCAPED
                    event_time[rows[esc]] = times[j[esc]]
                    final[rows[conv | esc]] = yo[conv | esc]
                    done[pend[conv | esc]] = True
                keep = (~done[pend]) & (nxt[pend] < n_out)
                pend = pend[keep]
                if len(pend):
                    pend = pend[times[nxt[pend]] <= t_new[pend] * (1 + 1e-13) + 1e-300]

            if terminate:
                live = acc_idx[~done[acc_idx]]
                esc = np.linalg.norm(y_new[live], axis=1) >= cfg.r_esc
                status[active[live[esc]]] = Status.ESCAPED
                event_time[active[live[esc]]] = t_new[live[esc]]
                final[active[live[esc]]] = y_new[live[esc]]
                done[live[esc]] = True

            y[acc_idx] = y_new[acc_idx]
            f[acc_idx] = f_new[acc_idx]
            t[acc_idx] = t_new[acc_idx]
            reached = acc_idx[(nxt[acc_idx] >= n_out) & ~done[acc_idx]]
            final[active[reached]] = y[reached]
            done[reached] = True

        # step size update
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = _SAFETY * np.where(err_norm > 0, err_norm, 1e-10) ** -0.2
        factor = np.clip(np.nan_to_num(factor, nan=_MIN_FACTOR), _MIN_FACTOR, _MAX_FACTOR)
        factor = np.where(accept, factor, np.minimum(factor, 1.0))
        factor = np.where(finite, factor, 0.25)
        h = h * factor

        tiny = (~done) & (h < h_min)
        if np.any(tiny):
            rows = active[tiny]
            huge = np.linalg.norm(y, axis=1) >= cfg.r_esc
            nonfinite[active[tiny & (~finite | huge)]] = True
            if terminate:
                # step collapse on a blow-up is an escape at the last finite time
                blowing = tiny & ~finite
                status[active[blowing]] = Status.ESCAPED
                event_time[active[blowing]] = t[blowing]
                final[active[blowing]] = y[blowing]
                rows = active[tiny & finite]
            failed[rows] = True
            final[rows] = y[np.isin(active, rows)]
            done |= tiny

        if np.any(done):
            stop = np.flatnonzero(done)
            for r, i in zip(active[stop], stop):
                if nxt[i] < n_out:
                    fill = 0.0 if status[r] == Status.CONVERGED else np.inf
                    norms[r, nxt[i]:] = fill
                    if record_states:
                        states[r, nxt[i]:] = 0.0 if fill == 0.0 else np.nan
            keep = ~done
            active, y, f, t, h, nxt = active[keep], y[keep], f[keep], t[keep], h[keep], nxt[keep]

    return BatchSolution(
        times=times,
        norms=norms,
        status=status,
        event_time=event_time,
        last=last,
        failed=failed,
        final=final,
        states=states,
        nonfinite=nonfinite,
    )


def integrate(field: VectorField, x0, cfg: IntegratorConfig) -> Trajectory:
    """Integrate one initial condition on the uniform output grid.

    Integration halts at the first output time where the norm is at most
    ``eps_conv`` (converged) or at least ``r_esc`` (escaped).

    Raises
    ------
    StepUnderflow
        If the adaptive step collapses without the state blowing up.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    sol = solve_batch(field, x0[None, :], cfg, record_states=True)
    if sol.failed[0]:
        raise StepUnderflow(f"step size underflow integrating {field.name} from {x0}")
    kind = Status(int(sol.status[0]))
    t_ev = None if np.isnan(sol.event_time[0]) else float(sol.event_time[0])
    states = sol.states[0, : sol.last[0] + 1].copy()
    return Trajectory(x0=x0, dt=cfg.dt_out, states=states, status=ConvergenceStatus(kind, t_ev))


def flow_batch(field: VectorField, x0, t: float, cfg: IntegratorConfig) -> np.ndarray:
    """Evaluate the solution map at time ``t`` for every row of ``x0``.

    Raises
    ------
    NonFiniteState
        If a solution blows up before ``t``.
    StepUnderflow
        If the adaptive step collapses for any other reason.
    """
    x0 = np.array(x0, dtype=float, ndmin=2)
    if t < 0:
        raise ValueError("flow time must be nonnegative")
    if t == 0:
        return x0.copy()
    sol = solve_batch(field, x0, cfg, t_out=np.array([0.0, float(t)]), terminate=False)
    if np.any(sol.nonfinite):
        raise NonFiniteState(f"the solution of {field.name} blew up before t={t}")
    if np.any(sol.failed):
        raise StepUnderflow(f"step size underflow in flow of {field.name}")
    return sol.final


def flow(field: VectorField, x0, t: float, cfg: IntegratorConfig) -> np.ndarray:
    """Single-state solution map ``phi(x0, t)``; ``flow(f, x0, 0) == x0``."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    return flow_batch(field, x0[None, :], t, cfg)[0]


def classify(traj: Trajectory, cfg: IntegratorConfig) -> ConvergenceStatus:
    """Classify a recorded trajectory by its norms alone."""
    norms = traj.norms
    if len(norms) == 0:
        raise ValueError("empty trajectory")
    over = np.flatnonzero(~(norms < cfg.r_esc))
    if len(over):
        return ConvergenceStatus(Status.ESCAPED, float(over[0] * traj.dt))
    if norms[-1] <= cfg.eps_conv:
        return ConvergenceStatus(Status.CONVERGED, float((len(norms) - 1) * traj.dt))
    return ConvergenceStatus(Status.UNDETERMINED)
