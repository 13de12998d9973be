"""Benchmark vector fields, domain boxes and analytical Lyapunov candidates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .errors import (
    ConfigError,
    DimensionMismatch,
    FormatError,
    NotEquilibrium,
    NotHurwitz,
    SingularSystem,
    UnknownSystem,
)
from .ode import VectorField

__all__ = [
    "Box",
    "ScalarField",
    "QuadraticLF",
    "SmibParams",
    "SmibEnergy",
    "UserPolynomial",
    "SystemBundle",
    "BUILTIN_NAMES",
    "builtin",
    "shift_to_origin",
    "NORM_SCALINGS",
    "norm_weights",
    "refine_equilibrium",
    "jacobian",
    "quadratic_lf_from_linearization",
    "smib_energy",
    "read_polynomial",
    "write_polynomial",
]


class Box:
    """Axis-aligned box ``[lower, upper]`` in R^n."""

    def __init__(self, lower, upper):
        lower = np.array(lower, dtype=float).reshape(-1)
        upper = np.array(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or lower.size == 0:
            raise ConfigError("box bounds must be nonempty vectors of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigError("box bounds must be finite")
        if np.any(lower >= upper):
            raise ConfigError(f"box lower bound must be below upper bound: {lower} vs {upper}")
        self.lower = lower
        self.upper = upper
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    def contains(self, x, strict: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if strict:
            return np.all((x > self.lower) & (x < self.upper), axis=-1)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.width

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lower + rng.random((size, self.dim)) * self.width

    def as_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __repr__(self):
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


class ScalarField:
    """Scalar function with analytic gradient, vectorised over rows.

    Subclasses implement ``_value`` and ``_grad`` for arrays of shape
    ``(m, n)``.
    """

    kind = "scalar"
    dim: int

    def _value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _prep(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"{self.kind} expects dimension {self.dim}, got {x.shape[-1]}")
        return x, x.reshape(-1, self.dim)

    def value(self, x) -> np.ndarray:
        x, flat = self._prep(x)
        return self._value(flat).reshape(x.shape[:-1])

    __call__ = value

    def grad(self, x) -> np.ndarray:
        x, flat = self._prep(x)
        return self._grad(flat).reshape(x.shape)

    def describe(self) -> dict:
        return {"kind": self.kind}


class QuadraticLF(ScalarField):
    """``V(x) = x^T P x``."""

    kind = "quadratic"

    def __init__(self, P, name: str = "quadratic"):
        P = np.array(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise DimensionMismatch("P must be square")
        self.P = 0.5 * (P + P.T)
        self.dim = P.shape[0]
        self.name = name

    def _value(self, x):
        return np.einsum("mi,ij,mj->m", x, self.P, x)

    def _grad(self, x):
        return 2.0 * x @ self.P

    def describe(self):
        return {"kind": self.kind, "name": self.name, "P": self.P.tolist()}


@dataclass(frozen=True)
class SmibParams:
    H: float = 0.0106
    X_eq: float = 0.28
    P_m: float = 1.0
    E_B: float = 1.0
    E_prime: float = 1.21
    D_damp: float = 0.03
    delta_ep: Optional[float] = None

    def __post_init__(self):
        if self.delta_ep is None:
            ratio = self.P_m * self.X_eq / (self.E_prime * self.E_B)
            if not 0 <= ratio < 1:
                raise ConfigError("SMIB parameters admit no stable equilibrium")
            object.__setattr__(self, "delta_ep", math.asin(ratio))

    @property
    def p_max(self) -> float:
        return self.E_prime * self.E_B / self.X_eq


class SmibEnergy(ScalarField):
    """Transient energy of the single machine infinite bus system.

    ``V(x) = -P_m x1 + p_max (cos d - cos(x1 + d)) + H x2^2`` in coordinates
    centred on the stable equilibrium angle ``d``.
    """

    kind = "smib_energy"

    def __init__(self, params: SmibParams = SmibParams()):
        self.params = params
        self.dim = 2

    def _value(self, x):
        p = self.params
        d = p.delta_ep
        return -p.P_m * x[:, 0] + p.p_max * (math.cos(d) - np.cos(x[:, 0] + d)) + p.H * x[:, 1] ** 2

    def _grad(self, x):
        p = self.params
        g = np.empty_like(x)
        g[:, 0] = -p.P_m + p.p_max * np.sin(x[:, 0] + p.delta_ep)
        g[:, 1] = 2.0 * p.H * x[:, 1]
        return g

    def describe(self):
        return {"kind": self.kind, "params": self.params.__dict__}


class UserPolynomial(ScalarField):
    """Polynomial ``sum_k c_k x^{e_k}`` given by exponent rows and coefficients."""

    kind = "user_polynomial"

    def __init__(self, exponents, coeffs, name: str = "user"):
        exponents = np.array(exponents, dtype=np.int64, ndmin=2)
        coeffs = np.array(coeffs, dtype=float).reshape(-1)
        if exponents.shape[0] != coeffs.size:
            raise DimensionMismatch("one coefficient per exponent row is required")
        if np.any(exponents < 0):
            raise ValueError("exponents must be nonnegative")
        self.exponents = exponents
        self.coeffs = coeffs
        self.dim = exponents.shape[1]
        self.name = name

    def _value(self, x):
        out = np.zeros(len(x))
        for e, c in zip(self.exponents, self.coeffs):
            out += c * np.prod(x ** e, axis=1)
        return out

    def _grad(self, x):
        g = np.zeros_like(x)
        for e, c in zip(self.exponents, self.coeffs):
            for j in range(self.dim):
                if e[j] == 0:
                    continue
                ej = e.copy()
                ej[j] -= 1
                g[:, j] += c * e[j] * np.prod(x ** ej, axis=1)
        return g

    def describe(self):
        return {
            "kind": self.kind,
            "name": self.name,
            "terms": [[e.tolist(), float(c)] for e, c in zip(self.exponents, self.coeffs)],
        }


def read_polynomial(path, name: Optional[str] = None) -> UserPolynomial:
    """Read a coefficient file.

    One term per line: ``e_1 ... e_n  coefficient``. Blank lines and text
    after ``#`` are ignored.
    """
    exps, coeffs = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            e = [int(p) for p in parts[:-1]]
            c = float(parts[-1])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: cannot parse term {raw!r}") from exc
        if not e or (exps and len(e) != len(exps[0])):
            raise FormatError(f"{path}:{lineno}: inconsistent number of exponents")
        exps.append(e)
        coeffs.append(c)
    if not exps:
        raise FormatError(f"{path}: no polynomial terms")
    return UserPolynomial(exps, coeffs, name=name or Path(path).stem)


def write_polynomial(poly: UserPolynomial, path) -> None:
    lines = [f"# polynomial in {poly.dim} variables: exponents then coefficient"]
    for e, c in zip(poly.exponents, poly.coeffs):
        lines.append(" ".join(str(int(v)) for v in e) + f" {float(c)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


NORM_SCALINGS = ("box", "none")


def norm_weights(box: "Box", scaling: str) -> Optional[np.ndarray]:
    """Per-coordinate weights of the working norm ``||w * x||``.

    ``"box"`` divides each coordinate by the box width, which is the
    Euclidean norm in the unit-cube coordinates of the Bernstein fit;
    ``"none"`` is the plain Euclidean norm and returns ``None``.
    """
    if scaling == "box":
        return 1.0 / box.width
    if scaling == "none":
        return None
    raise ConfigError(f"norm scaling must be one of {NORM_SCALINGS}, got {scaling!r}")


def shift_to_origin(field: VectorField, x_sep, tol: float = 1e-7) -> VectorField:
    """Return ``g(x) = field(x + x_sep)``.

    Raises
    ------
    NotEquilibrium
        If ``||field(x_sep)|| > tol``.
    """
    x_sep = np.asarray(x_sep, dtype=float).reshape(-1)
    residual = float(np.linalg.norm(field(x_sep)))
    if residual > tol:
        raise NotEquilibrium(f"{field.name}: |f(x_sep)| = {residual:.3e} exceeds {tol:.1e}")
    func = field.func
    return VectorField(field.dim, lambda x: func(x + x_sep), name=f"{field.name}_shifted")


def refine_equilibrium(field: VectorField, guess) -> np.ndarray:
    """Polish an approximate equilibrium with a hybrid Powell root solve."""
    sol = optimize.root(lambda x: field(x), np.asarray(guess, dtype=float), method="hybr", tol=1e-14)
    if not sol.success and np.linalg.norm(field(sol.x)) > 1e-10:
        raise NotEquilibrium(f"no equilibrium of {field.name} found near {guess}")
    return sol.x


def jacobian(field: VectorField, x=None, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian at ``x`` (origin by default)."""
    n = field.dim
    x = np.zeros(n) if x is None else np.asarray(x, dtype=float)
    steps = h * np.maximum(1.0, np.abs(x))
    pts = np.concatenate([x + np.diag(steps), x - np.diag(steps)])
    vals = field(pts)
    return ((vals[:n] - vals[n:]) / (2 * steps[:, None])).T


def quadratic_lf_from_linearization(field: VectorField, h_fd: float = 1e-6) -> QuadraticLF:
    """Solve ``A^T P + P A = -I`` for the Jacobian ``A`` at the origin.

    The Lyapunov equation is solved as the dense ``n^2 x n^2`` Kronecker
    system.
    """
    A = jacobian(field, h=h_fd)
    eig = np.linalg.eigvals(A)
    if np.any(eig.real >= 0):
        raise NotHurwitz(f"Jacobian of {field.name} has eigenvalues {eig}")
    n = A.shape[0]
    eye = np.eye(n)
    # vec(A^T P + P A) = (I kron A^T + A^T kron I) vec(P)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    try:
        vec = np.linalg.solve(K, -eye.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("Lyapunov Kronecker system is singular") from exc
    P = vec.reshape(n, n)
    P = 0.5 * (P + P.T)
    return QuadraticLF(P, name=f"{field.name}_linearization")


def smib_energy(params: SmibParams = SmibParams()) -> SmibEnergy:
    return SmibEnergy(params)


@dataclass
class SystemBundle:
    name: str
    field: VectorField
    x_sep: np.ndarray
    box: Box
    v2_candidates: Dict[str, ScalarField]
    recommended_fit: Tuple[float, int, int]
    t_max: float = 30.0
    x_sep_reported: Optional[np.ndarray] = None
    raw_field: Optional[VectorField] = dc_field(default=None, repr=False)
    max_undetermined: float = 0.01

    @property
    def dim(self) -> int:
        return self.field.dim

    def default_v2(self) -> Optional[ScalarField]:
        return next(iter(self.v2_candidates.values()), None)


def _vdp(x):
    out = np.empty_like(x)
    out[:, 0] = -x[:, 1]
    out[:, 1] = x[:, 0] - x[:, 1] * (1.0 - x[:, 0] ** 2)
    return out


def _smib_raw(params: SmibParams):
    def f(x):
        out = np.empty_like(x)
        out[:, 0] = x[:, 1]
        out[:, 1] = (params.P_m - params.p_max * np.sin(x[:, 0]) - params.D_damp * x[:, 1]) / (
            2.0 * params.H
        )
        return out

    return f


def _tmib(x):
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    out = np.empty_like(x)
    out[:, 0] = x2
    out[:, 1] = (
        33.5849
        - 1.8868 * np.cos(x1 - x3)
        - 5.283 * np.cos(x1)
        - 16.9811 * np.sin(x1 - x3)
        - 59.6226 * np.sin(x1)
        - 1.8868 * x2
    )
    out[:, 2] = x4
    out[:, 3] = (
        11.3924 * np.sin(x1 - x3)
        - 1.2658 * np.cos(x1 - x3)
        - 3.2278 * np.cos(x3)
        - 1.2658 * x4
        - 99.3671 * np.sin(x3)
        + 48.481
    )
    return out


def _three_machine(x):
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    out = np.empty_like(x)
    out[:, 0] = x2
    out[:, 1] = -np.sin(x1) - 0.5 * np.sin(x1 - x3) - 0.4 * x2
    out[:, 2] = x4
    out[:, 3] = -0.5 * np.sin(x3) - 0.5 * np.sin(x3 - x1) - 0.5 * x4 + 0.05
    return out


VDP_P = np.array([[1.5, -0.5], [-0.5, 1.0]])
BUILTIN_NAMES = ("vdp", "smib", "tmib", "three_machine")


def builtin(name: str) -> SystemBundle:
    """Return one of the four benchmark systems, shifted to the origin."""
    if name == "vdp":
        field = VectorField(2, _vdp, name="vdp")
        box = Box([-2.0, -2.7], [2.0, 2.7])
        lin = quadratic_lf_from_linearization(field)
        return SystemBundle(
            name="vdp",
            field=field,
            x_sep=np.zeros(2),
            x_sep_reported=np.zeros(2),
            box=box,
            v2_candidates={"khalil_quadratic": QuadraticLF(VDP_P, name="khalil_quadratic"), "linearization": lin},
            recommended_fit=(3.0, 1, 75),
            raw_field=field,
        )
    if name == "smib":
        params = SmibParams()
        raw = VectorField(2, _smib_raw(params), name="smib")
        x_sep = np.array([params.delta_ep, 0.0])
        field = shift_to_origin(raw, x_sep, tol=1e-9)
        field.name = "smib"
        box = Box([-0.75 * math.pi, -30.0], [math.pi, 30.0])
        return SystemBundle(
            name="smib",
            field=field,
            x_sep=x_sep,
            x_sep_reported=x_sep.copy(),
            box=box,
            v2_candidates={"energy": smib_energy(params)},
            recommended_fit=(10.0, 1, 60),
            raw_field=raw,
            # about 2% of the default node grid settles at the equilibrium
            # shifted by -2 pi, which is outside the region of attraction
            # but never enters the escape radius
            max_undetermined=0.05,
        )
    if name in ("tmib", "three_machine"):
        if name == "tmib":
            raw = VectorField(4, _tmib, name="tmib")
            printed = np.array([0.468, 0.0, 0.463, 0.0])
            box = Box([-2.0, -3.0, -2.0, -3.0], [2.0, 3.0, 2.0, 3.0])
        else:
            raw = VectorField(4, _three_machine, name="three_machine")
            printed = np.array([0.02001, 0.0, 0.06003, 0.0])
            box = Box([-4.0, -0.75, -4.0, -0.75], [4.0, 0.75, 4.0, 0.75])
        # the printed equilibria are rounded; polish them before shifting
        x_sep = refine_equilibrium(raw, printed)
        field = shift_to_origin(raw, x_sep, tol=1e-9)
        field.name = name
        lin = quadratic_lf_from_linearization(field)
        return SystemBundle(
            name=name,
            field=field,
            x_sep=x_sep,
            x_sep_reported=printed,
            box=box,
            v2_candidates={"linearization": lin},
            recommended_fit=(1.0, 1, 20),
            t_max=50.0,
            raw_field=raw,
            # the angle axes span more than 2 pi, so many nodes settle at
            # shifted copies of the equilibrium and stay undetermined
            max_undetermined=0.01 if name == "tmib" else 0.6,
        )
    raise UnknownSystem(f"unknown system {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
