"""Level selection, hypothesis checks and Monte Carlo validation.

Every set-containment question is answered on a uniform scan grid over the
domain box. Sublevel sets that enter the certificate are the connected
components (full grid connectivity) that contain the equilibrium (for V2) or
the inner set ``{V1 < gamma1}`` (for V1); other components are ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional

import numpy as np
from scipy import ndimage

from .bernstein import BernsteinPoly
from .errors import ConfigError, DimensionMismatch, NoValidLevel
from .ode import IntegratorConfig, Status, VectorField, solve_batch
from .systems import NORM_SCALINGS, Box, ScalarField, norm_weights

log = logging.getLogger(__name__)

__all__ = [
    "CertConfig",
    "ScanGrid",
    "FieldScan",
    "LevelResult",
    "HypothesisCheck",
    "RoaCertificate",
    "McClassification",
    "ValidationReport",
    "lie_derivative",
    "opt_gamma3",
    "opt_eta",
    "opt_gamma1",
    "opt_gamma2",
    "v1_levels_without_v2",
    "certify_union",
    "monte_carlo_roa",
    "validate",
    "GRID_DISCLAIMER",
]

GRID_DISCLAIMER = (
    "Set containments were verified only at the nodes of a uniform scan grid; "
    "the certificate is rigorous up to the grid resolution, not between nodes. "
    "The LaSalle condition that no nonzero trajectory stays in {grad V2 . f = 0} "
    "is assumed, not checked."
)

HYPOTHESIS_IDS = (
    "v2_positive",
    "v2_nonincreasing",
    "v2_sublevel_interior",
    "ball_in_v2_sublevel",
    "v1_inner_in_ball",
    "v1_sublevel_interior",
    "v1_donut_decrease",
)

DEFAULT_RESOLUTION = {1: 4096, 2: 512, 3: 128, 4: 48}


@dataclass(frozen=True)
class CertConfig:
    """Scan and bisection settings.

    ``margin`` is relative: strict decrease is checked as
    ``lie < -margin * max|lie|`` and ball nesting against ``eta * (1 - margin)``.
    ``norm_scaling`` selects the norm defining the balls ``B_eta(0)`` (see
    :func:`roacert.systems.norm_weights`).
    """

    scan_resolution: Optional[int] = None
    bisect_tol: float = 1e-4
    max_bisect_steps: int = 40
    margin: float = 1e-3
    seed: int = 0
    mc_samples: int = 10_000
    norm_scaling: str = "box"

    def __post_init__(self):
        if self.norm_scaling not in NORM_SCALINGS:
            raise ConfigError(f"norm_scaling must be one of {NORM_SCALINGS}")
        if self.scan_resolution is not None and self.scan_resolution < 32:
            raise ConfigError("scan_resolution must be at least 32")
        if not self.bisect_tol > 0:
            raise ConfigError("bisect_tol must be positive")
        if not 0 <= self.margin < 1:
            raise ConfigError("margin must lie in [0, 1)")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")

    def resolution_for(self, dim: int) -> int:
        if self.scan_resolution is not None:
            return self.scan_resolution
        return DEFAULT_RESOLUTION.get(dim, 32)

    def as_dict(self, dim: Optional[int] = None) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if dim is not None:
            out["scan_resolution"] = self.resolution_for(dim)
        return out


class ScanGrid:
    """Uniform tensor grid over a box, ``resolution`` nodes per axis.

    ``norms`` holds the working norm ``||weights * x||`` of every node.
    """

    def __init__(self, box: Box, resolution: int, weights=None):
        if resolution < 2:
            raise ConfigError("scan resolution must be >= 2")
        self.box = box
        self.resolution = int(resolution)
        self.axes = [np.linspace(lo, hi, self.resolution) for lo, hi in zip(box.lower, box.upper)]
        self.shape = (self.resolution,) * box.dim
        self.spacing = box.width / (self.resolution - 1)
        self.cell_volume = float(np.prod(self.spacing))
        self.weights = np.ones(box.dim) if weights is None else np.asarray(weights, dtype=float).reshape(box.dim)
        self.norms = self._norm_tensor()
        self.origin_index = tuple(int(np.argmin(np.abs(a))) for a in self.axes)
        self.boundary = self._boundary_mask()
        self.boundary_distance = self._boundary_distance()
        self.structure = ndimage.generate_binary_structure(box.dim, box.dim)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def _norm_tensor(self):
        sq = np.zeros(self.shape)
        for j, a in enumerate(self.axes):
            shape = [1] * self.dim
            shape[j] = -1
            sq = sq + ((self.weights[j] * a) ** 2).reshape(shape)
        return np.sqrt(sq)

    def _boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for j in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[j] = 0
            mask[tuple(idx)] = True
            idx[j] = -1
            mask[tuple(idx)] = True
        return mask

    def _boundary_distance(self):
        # distance of every node to the nearest box face, in state units
        dist = np.full(self.shape, np.inf)
        for j, a in enumerate(self.axes):
            shape = [1] * self.dim
            shape[j] = -1
            d = np.minimum(a - self.box.lower[j], self.box.upper[j] - a).reshape(shape)
            dist = np.minimum(dist, d)
        return dist

    def point(self, index) -> np.ndarray:
        return np.array([a[i] for a, i in zip(self.axes, index)])

    def points_slab(self, i0: int) -> np.ndarray:
        """Grid points with first index ``i0``, as rows in C order."""
        sub = np.meshgrid(*self.axes[1:], indexing="ij") if self.dim > 1 else []
        cols = [np.full(self.resolution ** (self.dim - 1), self.axes[0][i0])]
        cols += [m.reshape(-1) for m in sub]
        return np.stack(cols, axis=1)

    def nearest_index(self, x) -> tuple:
        """Grid multi-indices nearest to each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.rint((x - self.box.lower) / self.spacing).astype(np.int64)
        idx = np.clip(idx, 0, self.resolution - 1)
        return tuple(idx[:, j] for j in range(self.dim))

    def components(self, mask: np.ndarray, seed: np.ndarray) -> np.ndarray:
        """Union of connected components of ``mask`` that meet ``seed``."""
        labels, count = ndimage.label(mask, structure=self.structure)
        if count == 0:
            return np.zeros(self.shape, dtype=bool)
        hit = np.unique(labels[seed & mask])
        hit = hit[hit > 0]
        if len(hit) == 0:
            return np.zeros(self.shape, dtype=bool)
        keep = np.zeros(count + 1, dtype=bool)
        keep[hit] = True
        return keep[labels]

    def seed_origin(self) -> np.ndarray:
        seed = np.zeros(self.shape, dtype=bool)
        seed[self.origin_index] = True
        return seed

    def describe(self) -> dict:
        return {"resolution": self.resolution, "nodes": self.size, "cell_volume": self.cell_volume}


@dataclass
class FieldScan:
    """A scalar field and its Lie derivative sampled on a :class:`ScanGrid`."""

    grid: ScanGrid
    values: np.ndarray
    lie: np.ndarray
    value_at_origin: float


def lie_derivative(V: ScalarField, field: VectorField, x) -> np.ndarray:
    """``grad V(x) . f(x)``, vectorised over rows of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != field.dim or V.dim != field.dim:
        raise DimensionMismatch("scalar field, vector field and state dimensions differ")
    out = np.sum(V.grad(x) * field(x), axis=-1)
    return float(out) if out.ndim == 0 else out


def scan_field(V: ScalarField, field: VectorField, grid: ScanGrid) -> FieldScan:
    """Sample ``V`` and its Lie derivative on every grid node."""
    if V.dim != grid.dim or field.dim != grid.dim:
        raise DimensionMismatch("dimension mismatch between grid, field and scalar function")
    values = np.empty(grid.shape)
    lie = np.empty(grid.shape)
    if isinstance(V, BernsteinPoly):
        values[...] = V.value_grid(grid.axes)
        grads = V.grad_grid(grid.axes)
        for i0 in range(grid.resolution):
            f = field(grid.points_slab(i0))
            acc = np.zeros(len(f))
            for j in range(grid.dim):
                acc += grads[j][i0].reshape(-1) * f[:, j]
            lie[i0] = acc.reshape(grid.shape[1:])
    else:
        for i0 in range(grid.resolution):
            pts = grid.points_slab(i0)
            values[i0] = V.value(pts).reshape(grid.shape[1:])
            lie[i0] = np.sum(V.grad(pts) * field(pts), axis=1).reshape(grid.shape[1:])
    v0 = float(V.value(np.zeros(grid.dim)))
    return FieldScan(grid=grid, values=values, lie=lie, value_at_origin=v0)


@dataclass
class LevelResult:
    value: float
    steps: int
    witness: Optional[list] = None
    margin: Optional[float] = None


@dataclass
class HypothesisCheck:
    id: str
    description: str
    passed: bool
    witness: Optional[list]
    margin: Optional[float]

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "description": self.description,
            "passed": bool(self.passed),
            "witness": self.witness,
            "worst_margin": self.margin,
        }


def _bisect(accept: Callable[[float], bool], lo: float, hi: float, cfg: CertConfig) -> LevelResult:
    """Largest accepted level in ``[lo, hi]``; ``accept(lo)`` must hold."""
    if accept(hi):
        return LevelResult(hi, 0)
    steps = 0
    while hi - lo > cfg.bisect_tol and steps < cfg.max_bisect_steps:
        mid = 0.5 * (lo + hi)
        if accept(mid):
            lo = mid
        else:
            hi = mid
        steps += 1
    return LevelResult(lo, steps)


def _witness(grid: ScanGrid, mask: np.ndarray, score: np.ndarray):
    """Grid point maximising ``score`` over ``mask`` and the score there."""
    if not mask.any():
        return None, None
    s = np.where(mask, score, -np.inf)
    idx = np.unravel_index(int(np.argmax(s)), grid.shape)
    return grid.point(idx).tolist(), float(score[idx])


def _lie_tol(scan: FieldScan) -> float:
    # rounding allowance only; the V2 decrease condition is non-strict
    return 1e-12 * float(np.max(np.abs(scan.lie)))


def v2_sublevel(scan: FieldScan, gamma: float) -> np.ndarray:
    """Component of ``{V2 <= gamma}`` containing the node nearest the origin."""
    return scan.grid.components(scan.values <= gamma, scan.grid.seed_origin())


def _v2_violations(scan: FieldScan, comp: np.ndarray) -> dict:
    g = scan.grid
    nonzero = g.norms > 0
    return {
        "positive": comp & nonzero & ~(scan.values > 0),
        "nonincreasing": comp & ~(scan.lie <= _lie_tol(scan)),
        "interior": comp & g.boundary,
    }


def opt_gamma3(scan: FieldScan, cfg: CertConfig) -> LevelResult:
    """Largest ``gamma`` whose V2 sublevel component lies in ``S_V2`` and the box interior."""
    g = scan.grid
    if abs(scan.value_at_origin) > 1e-9 * max(1.0, float(np.max(np.abs(scan.values)))):
        raise NoValidLevel(f"V2(0) = {scan.value_at_origin:.3e} is not zero", [0.0] * g.dim, scan.value_at_origin)
    bad = (g.norms > 0) & ~(scan.values > 0)
    if bad.any():
        w, m = _witness(g, bad, -scan.values)
        raise NoValidLevel("V2 is not positive on the scan grid away from the origin", w, -m)

    def accept(gamma):
        comp = v2_sublevel(scan, gamma)
        if not comp.any():
            return False
        return not any(v.any() for v in _v2_violations(scan, comp).values())

    # smallest level whose sublevel set contains the seed node
    lo = float(scan.values[g.origin_index])
    hi = float(np.max(scan.values))
    if not accept(lo):
        comp = v2_sublevel(scan, lo)
        viol = _v2_violations(scan, comp)
        mask = viol["nonincreasing"] | viol["positive"] | viol["interior"]
        w, m = _witness(g, mask, scan.lie)
        raise NoValidLevel("no V2 level is certified even at the smallest grid level", w, m)
    return _bisect(accept, lo, hi, cfg)


def _ball_radius_cap(grid: "ScanGrid") -> float:
    box = grid.box
    return float(np.min(np.minimum(-box.lower, box.upper) * grid.weights))


def opt_eta(scan: FieldScan, gamma3: float, cfg: CertConfig) -> LevelResult:
    """Largest ``eta`` with every grid node of ``B_eta(0)`` in the V2 sublevel component."""
    g = scan.grid
    comp = v2_sublevel(scan, gamma3)
    outside = ~comp
    cap = _ball_radius_cap(g)
    if cap <= 0:
        raise NoValidLevel("the origin is not interior to the box")

    def accept(eta):
        return not np.any(outside & (g.norms < eta))

    res = _bisect(accept, 0.0, cap, cfg)
    if res.value <= 0:
        raise NoValidLevel("no ball around the origin fits in the V2 sublevel set")
    w, m = _witness(g, outside, -g.norms)
    res.witness, res.margin = w, (None if m is None else -m)
    return res


def opt_gamma1(scan: FieldScan, eta: float, cfg: CertConfig) -> LevelResult:
    """Largest ``gamma`` with ``{V1 < gamma}`` strictly inside ``B_eta(0)``."""
    if not eta > 0:
        raise ConfigError("eta must be positive")
    g = scan.grid
    radius = eta * (1.0 - cfg.margin)
    outside = g.norms >= radius

    def accept(gamma):
        return not np.any((scan.values < gamma) & outside)

    vmin = float(np.min(scan.values))
    vmax = float(np.max(scan.values))
    res = _bisect(accept, vmin, vmax, cfg)
    if not np.any(scan.values < res.value):
        w, m = _witness(g, scan.values <= vmin, -g.norms)
        raise NoValidLevel(
            "the minimum of V1 lies outside B_eta(0); increase the degree or lambda", w, None if m is None else -m
        )
    return res


def v1_levels_without_v2(scan: FieldScan, cfg: CertConfig) -> tuple:
    """Heuristic ``(gamma1, gamma2)`` for V1 alone, with no ball to nest in.

    ``gamma1`` is the largest V1 value on the connected region around the
    origin where V1 fails to decrease strictly; ``gamma2`` then follows from
    :func:`opt_gamma2`. The resulting set is *not* certified.
    """
    g = scan.grid
    a = _lie_margin(scan, cfg)
    core = g.components(~(scan.lie < -a), g.seed_origin())
    if core.any():
        gamma1 = float(np.max(scan.values[core])) + cfg.bisect_tol
    else:
        gamma1 = float(scan.values[g.origin_index]) + cfg.bisect_tol
    return gamma1, opt_gamma2(scan, gamma1, cfg).value


def _lie_margin(scan: FieldScan, cfg: CertConfig) -> float:
    return cfg.margin * float(np.max(np.abs(scan.lie)))


def v1_sublevel(scan: FieldScan, gamma1: float, gamma: float) -> np.ndarray:
    """Components of ``{V1 <= gamma}`` meeting the inner set ``{V1 < gamma1}``."""
    return scan.grid.components(scan.values <= gamma, scan.values < gamma1)


def opt_gamma2(scan: FieldScan, gamma1: float, cfg: CertConfig) -> LevelResult:
    """Largest ``gamma`` such that V1 strictly decreases on the donut ``gamma1 <= V1 <= gamma``."""
    g = scan.grid
    a = _lie_margin(scan, cfg)

    def bad_mask(gamma):
        comp = v1_sublevel(scan, gamma1, gamma)
        donut = comp & (scan.values >= gamma1)
        return (donut & ~(scan.lie < -a)) | (comp & g.boundary)

    def accept(gamma):
        return not bad_mask(gamma).any()

    res = _bisect(accept, gamma1, float(np.max(scan.values)), cfg)
    # a donut holding no grid node is accepted vacuously and certifies nothing
    donut = v1_sublevel(scan, gamma1, res.value) & (scan.values >= gamma1)
    if res.value - gamma1 <= cfg.bisect_tol or not donut.any():
        above = scan.values[scan.values >= gamma1]
        probe = float(above.min()) if above.size else gamma1 + 2 * cfg.bisect_tol
        bad = bad_mask(max(probe, gamma1 + 2 * cfg.bisect_tol))
        w, m = _witness(g, bad, scan.lie)
        raise NoValidLevel("V1 does not decrease on any donut above gamma1", w, m)
    return res


@dataclass
class RoaCertificate:
    gamma1: Optional[float]
    gamma2: Optional[float]
    gamma3: Optional[float]
    eta: Optional[float]
    hypotheses: List[HypothesisCheck]
    certified: bool
    v2_certified: bool
    resolution: int
    margin: float
    errors: List[str] = dc_field(default_factory=list)
    grid_disclaimer: str = GRID_DISCLAIMER
    areas: dict = dc_field(default_factory=dict)
    v1_uncertified: bool = False
    # in-memory only
    grid: Optional[ScanGrid] = dc_field(default=None, repr=False)
    v1_mask: Optional[np.ndarray] = dc_field(default=None, repr=False)
    v2_mask: Optional[np.ndarray] = dc_field(default=None, repr=False)
    V1: Optional[ScalarField] = dc_field(default=None, repr=False)
    V2: Optional[ScalarField] = dc_field(default=None, repr=False)
    v1_values: Optional[np.ndarray] = dc_field(default=None, repr=False)

    def region_masks(self, include_uncertified: bool = False):
        """Grid masks of the V1 and V2 parts of the certified region.

        With ``include_uncertified`` the V1 set of a run without V2 is
        returned as well.
        """
        empty = None if self.grid is None else np.zeros(self.grid.shape, dtype=bool)
        v1_ok = self.certified or (include_uncertified and self.v1_uncertified)
        v1 = self.v1_mask if v1_ok else empty
        v2 = self.v2_mask if (self.certified or self.v2_certified) else empty
        return v1, v2

    def contains(self, x, gamma2: Optional[float] = None, include_uncertified: bool = False) -> np.ndarray:
        """Membership of states in the certified region.

        A state belongs to the V1 part if ``V1(x) <= gamma2`` and its nearest
        grid node is in the certified component (likewise for V2). Passing
        ``gamma2`` evaluates a hypothetical region with a different V1 level.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(len(x), dtype=bool)
        if self.grid is None:
            return out
        inside = self.grid.box.contains(x)
        idx = self.grid.nearest_index(x)
        v1m, v2m = self.region_masks(include_uncertified)
        level = self.gamma2
        if gamma2 is not None:
            if self.v1_values is None or self.gamma1 is None:
                raise ValueError("no V1 level structure to re-evaluate")
            v1m = self.grid.components(self.v1_values <= gamma2, self.v1_values < self.gamma1)
            level = gamma2
        if v1m is not None and v1m.any():
            out |= inside & v1m[idx] & (self.V1.value(x) <= level)
        if v2m is not None and v2m.any():
            out |= inside & v2m[idx] & (self.V2.value(x) <= self.gamma3)
        return out

    def as_dict(self) -> dict:
        return {
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "gamma3": self.gamma3,
            "eta": self.eta,
            "certified": bool(self.certified),
            "v2_certified": bool(self.v2_certified),
            "hypotheses": [h.as_dict() for h in self.hypotheses],
            "scan_resolution": self.resolution,
            "margin": self.margin,
            "errors": list(self.errors),
            "areas": self.areas,
            "v1_uncertified": bool(self.v1_uncertified),
            "grid_disclaimer": self.grid_disclaimer,
        }


def _check(id_, desc, bad: np.ndarray, grid: ScanGrid, score: np.ndarray, domain: np.ndarray) -> HypothesisCheck:
    """Check result with the tightest node of ``domain`` as witness.

    ``score`` is signed so that negative values satisfy the condition; the
    worst margin is the largest score over the violations, or over the whole
    domain when nothing is violated.
    """
    w, m = _witness(grid, bad if bad.any() else domain, score)
    return HypothesisCheck(id_, desc, not bad.any(), w, m)


def certify_union(
    V1: Optional[ScalarField],
    V2: Optional[ScalarField],
    field: VectorField,
    box: Box,
    cfg: CertConfig,
    *,
    grid: Optional[ScanGrid] = None,
) -> RoaCertificate:
    """Run the four level selections and re-verify every hypothesis.

    Never raises for a failed certification; failures are reported in the
    returned certificate. Without ``V2`` the V1 levels come from
    :func:`v1_levels_without_v2` and the certificate is flagged
    ``v1_uncertified``.
    """
    grid = grid or ScanGrid(box, cfg.resolution_for(box.dim), norm_weights(box, cfg.norm_scaling))
    scan1 = scan_field(V1, field, grid) if V1 is not None else None
    if V2 is None:
        return _certify_v1_only(V1, scan1, grid, cfg)
    scan2 = scan_field(V2, field, grid)
    errors = []
    g1 = g2 = g3 = eta = None

    try:
        g3 = opt_gamma3(scan2, cfg).value
        eta = opt_eta(scan2, g3, cfg).value
    except NoValidLevel as exc:
        errors.append(f"V2 level selection: {exc} (witness {exc.witness})")
    if scan1 is None:
        errors.append("no V1 supplied")
    elif eta is not None:
        try:
            g1 = opt_gamma1(scan1, eta, cfg).value
            g2 = opt_gamma2(scan1, g1, cfg).value
        except NoValidLevel as exc:
            errors.append(f"V1 level selection: {exc} (witness {exc.witness})")

    hyps = []
    zeros = np.zeros(grid.shape, dtype=bool)
    v2m = v2_sublevel(scan2, g3) if g3 is not None else zeros
    viol2 = _v2_violations(scan2, v2m)
    origin_ok = abs(scan2.value_at_origin) <= 1e-9 * max(1.0, float(np.max(np.abs(scan2.values))))
    edge = grid.boundary_distance
    h = _check(
        "v2_positive",
        "V2(0) = 0 and V2 > 0 on its sublevel set away from 0",
        viol2["positive"],
        grid,
        -scan2.values,
        v2m & (grid.norms > 0),
    )
    if not origin_ok:
        h.passed, h.witness, h.margin = False, [0.0] * grid.dim, scan2.value_at_origin
    hyps.append(h)
    hyps.append(
        _check("v2_nonincreasing", "grad V2 . f <= 0 on {V2 <= gamma3}", viol2["nonincreasing"], grid, scan2.lie, v2m)
    )
    hyps.append(
        _check("v2_sublevel_interior", "{V2 <= gamma3} lies in the box interior", viol2["interior"], grid, -edge, v2m)
    )
    ball_bad = (~v2m & (grid.norms < eta)) if eta is not None else ~zeros
    ball = (grid.norms < eta) if eta is not None else zeros
    hyps.append(
        _check("ball_in_v2_sublevel", "B_eta(0) inside {V2 <= gamma3}", ball_bad, grid, scan2.values - (g3 or 0.0), ball)
    )
    for hh in hyps:
        if g3 is None:
            hh.passed = False
    v2_ok = all(hh.passed for hh in hyps)

    if scan1 is not None and g1 is not None and g2 is not None:
        radius = eta * (1.0 - cfg.margin)
        inner = scan1.values < g1
        hyps.append(
            _check(
                "v1_inner_in_ball",
                "neighbourhood of {V1 < gamma1} inside B_eta(0)",
                inner & (grid.norms >= radius),
                grid,
                grid.norms - radius,
                inner,
            )
        )
        v1m = v1_sublevel(scan1, g1, g2)
        hyps.append(
            _check("v1_sublevel_interior", "{V1 <= gamma2} lies in the box interior", v1m & grid.boundary, grid, -edge, v1m)
        )
        a = _lie_margin(scan1, cfg)
        donut = v1m & (scan1.values >= g1)
        dec = _check(
            "v1_donut_decrease",
            "grad V1 . f < -a on {gamma1 <= V1 <= gamma2}",
            donut & ~(scan1.lie < -a),
            grid,
            scan1.lie + a,
            donut,
        )
        if not g1 < g2:
            dec.passed = False
        hyps.append(dec)
    else:
        v1m = zeros
        for id_, desc in (
            ("v1_inner_in_ball", "neighbourhood of {V1 < gamma1} inside B_eta(0)"),
            ("v1_sublevel_interior", "{V1 <= gamma2} lies in the box interior"),
            ("v1_donut_decrease", "grad V1 . f < -a on {gamma1 <= V1 <= gamma2}"),
        ):
            hyps.append(HypothesisCheck(id_, desc, False, None, None))

    certified = all(hh.passed for hh in hyps)
    union = (v1m | v2m) if certified else (v2m if v2_ok else zeros)
    areas = {
        "v1": float(v1m.sum() * grid.cell_volume),
        "v2": float(v2m.sum() * grid.cell_volume),
        "union": float(union.sum() * grid.cell_volume),
    }
    return RoaCertificate(
        gamma1=g1,
        gamma2=g2,
        gamma3=g3,
        eta=eta,
        hypotheses=hyps,
        certified=certified,
        v2_certified=v2_ok,
        resolution=grid.resolution,
        margin=cfg.margin,
        errors=errors,
        areas=areas,
        grid=grid,
        v1_mask=v1m,
        v2_mask=v2m,
        V1=V1,
        V2=V2,
        v1_values=None if scan1 is None else scan1.values,
    )


def _certify_v1_only(V1, scan1: Optional[FieldScan], grid: ScanGrid, cfg: CertConfig) -> RoaCertificate:
    errors = ["no V2 supplied: the V1 set is validated against simulation only and is not certified"]
    g1 = g2 = None
    v1m = np.zeros(grid.shape, dtype=bool)
    if scan1 is None:
        errors.append("no V1 supplied")
    else:
        try:
            g1, g2 = v1_levels_without_v2(scan1, cfg)
            v1m = v1_sublevel(scan1, g1, g2)
        except NoValidLevel as exc:
            errors.append(f"V1 level selection: {exc} (witness {exc.witness})")
    hyps = [HypothesisCheck(id_, "not checked without V2", False, None, None) for id_ in HYPOTHESIS_IDS]
    return RoaCertificate(
        gamma1=g1,
        gamma2=g2,
        gamma3=None,
        eta=None,
        hypotheses=hyps,
        certified=False,
        v2_certified=False,
        resolution=grid.resolution,
        margin=cfg.margin,
        errors=errors,
        areas={"v1": float(v1m.sum() * grid.cell_volume), "v2": 0.0, "union": 0.0},
        v1_uncertified=g2 is not None,
        grid=grid,
        v1_mask=v1m,
        v2_mask=np.zeros(grid.shape, dtype=bool),
        V1=V1,
        V2=None,
        v1_values=None if scan1 is None else scan1.values,
    )


@dataclass
class McClassification:
    points: np.ndarray
    statuses: np.ndarray
    seed: int

    def counts(self) -> dict:
        return {s.name.lower(): int(np.sum(self.statuses == s)) for s in Status}


def monte_carlo_roa(
    field: VectorField,
    box: Box,
    cfg: CertConfig,
    integ: Optional[IntegratorConfig] = None,
    *,
    batch_size: int = 4096,
) -> McClassification:
    """Classify ``cfg.mc_samples`` uniform samples of the box by simulation."""
    integ = integ or IntegratorConfig.for_box(box)
    rng = np.random.default_rng(cfg.seed)
    points = box.sample(rng, cfg.mc_samples)
    statuses = np.empty(len(points), dtype=np.int8)
    for s in range(0, len(points), batch_size):
        sol = solve_batch(field, points[s : s + batch_size], integ)
        st = sol.status.copy()
        st[sol.failed] = Status.UNDETERMINED
        statuses[s : s + batch_size] = st
    return McClassification(points=points, statuses=statuses, seed=cfg.seed)


@dataclass
class ValidationReport:
    inside: int
    violations: int
    witnesses: list

    def as_dict(self) -> dict:
        return {"samples_inside": self.inside, "violations": self.violations, "witnesses": self.witnesses[:20]}


def validate(
    cert: RoaCertificate,
    mc: McClassification,
    gamma2: Optional[float] = None,
    include_uncertified: bool = False,
) -> ValidationReport:
    """Count Monte Carlo samples in the certified region that did not converge.

    ``include_uncertified`` also tests the V1 set of a run without V2.
    """
    if cert.grid is None or mc.points.shape[1] != cert.grid.dim:
        raise DimensionMismatch("certificate and samples live in different spaces")
    inside = cert.contains(mc.points, gamma2=gamma2, include_uncertified=include_uncertified)
    bad = inside & (mc.statuses != Status.CONVERGED)
    return ValidationReport(
        inside=int(inside.sum()),
        violations=int(bad.sum()),
        witnesses=mc.points[bad].tolist(),
    )
