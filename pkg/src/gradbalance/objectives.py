"""Local convex cost functions and their vectorized evaluation.

Each node owns a scalar convex cost. Three families are supported:

* ``quadratic``: ``(c/2) x^2 + b x`` with ``c > 0``
* ``quartic``: ``w (x - a)^4`` with ``w >= 0``; its derivative is only
  Lipschitz on a bounded interval, so the constant is certified on a
  derivative envelope supplied at construction
* ``table``: a fixed derivative value with no closed-form cost, used to
  replay hand-worked single rounds
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

QUADRATIC = "quadratic"
QUARTIC = "quartic"
TABLE = "table"

DEFAULT_ENVELOPE_SAFETY = 1.5


@dataclass(frozen=True)
class CostFunction:
    """A node's local convex cost.

    ``params`` holds ``(c, b)`` for quadratics, ``(w, a)`` for quartics and
    ``(slope,)`` for table entries. All methods accept floats or arrays.
    """

    kind: str
    params: tuple[float, ...]
    lipschitz: float
    validity_interval: tuple[float, float] = (-np.inf, np.inf)
    strong_convexity: float | None = None
    constant: bool = False

    def __post_init__(self):
        if not self.lipschitz >= 0:
            raise ValueError(f"lipschitz constant must be nonnegative, got {self.lipschitz}")
        mu = self.strong_convexity
        if mu is not None and not 0 <= mu <= self.lipschitz:
            raise ValueError(f"strong convexity {mu} must lie in [0, lipschitz={self.lipschitz}]")

    @property
    def has_value(self) -> bool:
        return self.kind != TABLE

    @property
    def has_inverse(self) -> bool:
        return self.kind != TABLE and not self.constant

    def value(self, x):
        if self.kind == QUADRATIC:
            c, b = self.params
            return 0.5 * c * x * x + b * x
        if self.kind == QUARTIC:
            w, a = self.params
            return w * (x - a) ** 4
        raise TypeError("table costs carry derivatives only, no cost value")

    def derivative(self, x):
        if self.kind == QUADRATIC:
            c, b = self.params
            return c * x + b
        if self.kind == QUARTIC:
            w, a = self.params
            return 4.0 * w * (x - a) ** 3
        (slope,) = self.params
        return slope + 0.0 * x

    def inverse_derivative(self, s):
        """Allocation whose slope is ``s`` (monotone inverse of the derivative)."""
        if self.kind == QUADRATIC:
            c, b = self.params
            return (s - b) / c
        if self.kind == QUARTIC and not self.constant:
            w, a = self.params
            return a + np.cbrt(s / (4.0 * w))
        raise TypeError(f"{self.kind} cost (constant={self.constant}) has no derivative inverse")


def make_quadratic(c: float, b: float = 0.0) -> CostFunction:
    if not c > 0:
        raise ValueError(f"quadratic curvature must be positive, got {c}")
    c, b = float(c), float(b)
    return CostFunction(QUADRATIC, (c, b), lipschitz=c, strong_convexity=c)


def make_quartic(w: float, a: float, envelope: tuple[float, float]) -> CostFunction:
    """Quartic ``w (x - a)^4`` certified on the slopes in ``envelope``.

    The validity interval is ``[a - M, a + M]`` with
    ``M = (max|envelope| / (4w))^(1/3)``; on it the second derivative is at
    most ``12 w M^2``. A zero weight gives a constant cost, which is flagged.
    """
    if not w >= 0:
        raise ValueError(f"quartic weight must be nonnegative, got {w}")
    lo, hi = envelope
    if not lo <= hi:
        raise ValueError(f"empty derivative envelope {envelope}")
    w, a = float(w), float(a)
    if w == 0.0:
        return CostFunction(QUARTIC, (w, a), lipschitz=0.0, constant=True)
    half_width = np.cbrt(max(abs(lo), abs(hi)) / (4.0 * w))
    return CostFunction(
        QUARTIC,
        (w, a),
        lipschitz=12.0 * w * half_width**2,
        validity_interval=(a - half_width, a + half_width),
    )


def quartic_envelope(
    params: Sequence[tuple[float, float]], x0: Sequence[float], safety: float = DEFAULT_ENVELOPE_SAFETY
) -> tuple[float, float]:
    """Symmetric slope envelope covering every initial derivative, inflated by ``safety``.

    Slopes never leave the initial range during a run, so constants certified
    on this envelope stay valid for the whole trajectory.
    """
    slopes = [4.0 * w * (x - a) ** 3 for (w, a), x in zip(params, x0)]
    radius = safety * max(abs(s) for s in slopes)
    return (-radius, radius)


def make_table(slopes: Sequence[float], lipschitz: float) -> list[CostFunction]:
    """Derivative-only stubs: node ``i`` reports ``slopes[i]`` whatever its allocation."""
    return [CostFunction(TABLE, (float(s),), lipschitz=float(lipschitz)) for s in slopes]


@dataclass(frozen=True)
class CostTable:
    """Per-node ``(node, slope)`` pairs with one shared Lipschitz constant."""

    entries: tuple[tuple[int, float], ...]
    lipschitz: float

    def __post_init__(self):
        nodes = sorted(i for i, _ in self.entries)
        if nodes != list(range(len(self.entries))):
            raise ValueError("cost table needs exactly one entry per node 0..n-1")

    def costs(self) -> list[CostFunction]:
        slopes = dict(self.entries)
        return make_table([slopes[i] for i in range(len(slopes))], self.lipschitz)


def sample_uniform_quartics(n: int, seed: int) -> list[tuple[float, float]]:
    """Draw ``(w_i, a_i)`` independently uniform on ``[0, 1]`` (numpy PCG64)."""
    if n < 1:
        raise ValueError(f"need at least one node, got n={n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.uniform(0.0, 1.0, size=(n, 2))
    return [(float(w), float(a)) for w, a in draws]


class CostBank:
    """Vectorized view of a list of costs, evaluated along the last axis."""

    def __init__(self, costs: Sequence[CostFunction]):
        self.costs = list(costs)
        self.n = len(self.costs)
        if self.n == 0:
            raise ValueError("no costs given")
        self.lipschitz = np.array([f.lipschitz for f in self.costs])
        self.has_value = all(f.has_value for f in self.costs)
        self._groups = []
        for kind in (QUADRATIC, QUARTIC, TABLE):
            idx = np.array([i for i, f in enumerate(self.costs) if f.kind == kind], dtype=np.intp)
            if idx.size:
                p = np.array([self.costs[i].params for i in idx]).T
                self._groups.append((kind, idx, p))
        self._single = len(self._groups) == 1

    def derivative(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._single:
            kind, _, p = self._groups[0]
            return _slope(kind, p, x)
        out = np.empty_like(x)
        for kind, idx, p in self._groups:
            out[..., idx] = _slope(kind, p, x[..., idx])
        return out

    def values(self, x: np.ndarray) -> np.ndarray:
        if not self.has_value:
            raise TypeError("table costs carry derivatives only, no cost value")
        x = np.asarray(x, dtype=float)
        if self._single:
            kind, _, p = self._groups[0]
            return _value(kind, p, x)
        out = np.empty_like(x)
        for kind, idx, p in self._groups:
            out[..., idx] = _value(kind, p, x[..., idx])
        return out

    def total(self, x: np.ndarray):
        """Objective ``F(x) = sum_i f_i(x_i)``; one value per row for 2-D input."""
        return self.values(x).sum(axis=-1)


def _slope(kind, p, x):
    if kind == QUADRATIC:
        return p[0] * x + p[1]
    if kind == QUARTIC:
        return 4.0 * p[0] * (x - p[1]) ** 3
    return np.broadcast_to(p[0], x.shape).copy()


def _value(kind, p, x):
    if kind == QUADRATIC:
        return 0.5 * p[0] * x * x + p[1] * x
    return p[0] * (x - p[1]) ** 4
