"""Zonotope algebra: construction, hulls, Minkowski sums, affine maps,
F-radius and its gradient, outer products, and support values.

A zonotope Z = <c, G> represents the set {c + G @ beta : beta in [-1, 1]^q}
with center c in R^n and generator matrix G in R^(n x q). q = 0 is legal and
denotes a point. Gradient sets reuse the same container: a "gradient
zonotope" holds d(loss)/d(center) as its center and d(loss)/d(generators) as
its generator matrix.

All operations are pure functions on immutable values; arrays are float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Zonotope",
    "Interval",
    "interval_hull",
    "minkowski_sum_interval",
    "affine_map",
    "f_radius",
    "f_radius_gradient",
    "outer_product",
    "support",
    "elementwise_add",
    "scale",
    "point_zonotope",
]

# Below this Frobenius norm the F-radius gradient is treated as zero: the
# true gradient is undefined at 0 and zero is the subgradient at the minimum.
DEGENERATE_F_RADIUS = 1e-12


def _as_center(center) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64)
    if c.ndim != 1:
        raise ValueError(f"center must be 1-D, got shape {c.shape}")
    return c


def _as_generators(generators, n: int) -> np.ndarray:
    G = np.asarray(generators, dtype=np.float64)
    if G.size == 0:
        G = G.reshape(n, 0)
    if G.ndim != 2:
        raise ValueError(f"generators must be 2-D, got shape {G.shape}")
    if G.shape[0] != n:
        raise ValueError(
            f"generator rows ({G.shape[0]}) must match center length ({n})"
        )
    return G


@dataclass(frozen=True)
class Zonotope:
    """Zonotope <c, G> = {c + G beta : beta in [-1,1]^q}.

    Attributes:
        center: shape (n,).
        generators: shape (n, q); q = 0 denotes a point zonotope.
    """

    center: np.ndarray
    generators: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        c = _as_center(self.center)
        gens = self.generators if self.generators is not None else np.zeros((c.size, 0))
        G = _as_generators(gens, c.size)
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(G)):
            raise ValueError("zonotope entries must be finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]

    def sample(self, rng: np.random.Generator, count: int = 1) -> np.ndarray:
        """Random points of the set, shape (count, n)."""
        beta = rng.uniform(-1.0, 1.0, size=(count, self.num_generators))
        return self.center + beta @ self.generators.T

    def __add__(self, other: "Zonotope") -> "Zonotope":
        return elementwise_add(self, other)

    def __mul__(self, s: float) -> "Zonotope":
        return scale(self, s)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Interval:
    """Axis-aligned box [lower, upper], component-wise lower <= upper."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("interval bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("interval bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("interval lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def midpoint(self) -> np.ndarray:
        return (self.upper + self.lower) / 2.0

    @property
    def radius(self) -> np.ndarray:
        return (self.upper - self.lower) / 2.0


def point_zonotope(x) -> Zonotope:
    """Zonotope with q = 0 representing the single point x."""
    c = _as_center(x)
    return Zonotope(c, np.zeros((c.size, 0)))


def interval_hull(z: Zonotope) -> Interval:
    """Tightest axis-aligned box containing z.

    lower = c - |G| 1, upper = c + |G| 1. Every point c + G beta with
    beta in [-1,1]^q lies inside.
    """
    r = np.abs(z.generators).sum(axis=1)
    return Interval(z.center - r, z.center + r)


def minkowski_sum_interval(z: Zonotope, box: Interval) -> Zonotope:
    """Minkowski sum of a zonotope and a box.

    The box contributes its midpoint to the center and one axis-aligned
    generator per dimension; q grows by n.
    """
    if box.lower.size != z.dim:
        raise ValueError(
            f"interval dimension {box.lower.size} does not match zonotope dimension {z.dim}"
        )
    center = z.center + box.midpoint
    gens = np.hstack([z.generators, np.diag(box.radius)])
    return Zonotope(center, gens)


def affine_map(W, b, z: Zonotope) -> Zonotope:
    """Image of z under x -> W x + b: <W c + b, W G> (exact, no new generators)."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != z.dim:
        raise ValueError(
            f"matrix shape {W.shape} incompatible with zonotope dimension {z.dim}"
        )
    return Zonotope(W @ z.center + b, W @ z.generators)


def f_radius(z: Zonotope) -> float:
    """Normalized Frobenius radius (1/n) * ||G||_F, a differentiable size proxy."""
    return float(np.sqrt(np.sum(z.generators**2)) / z.dim)


def f_radius_gradient(z: Zonotope) -> Zonotope:
    """Gradient of f_radius as a gradient zonotope.

    The center gradient is identically zero (the center does not enter the
    F-radius); the generator gradient is G / (n^2 * f_radius(z)), the exact
    derivative of the 1/n-normalized Frobenius norm. Degenerate sets
    (f_radius below 1e-12) get a zero gradient.
    """
    r = f_radius(z)
    zero_c = np.zeros(z.dim)
    if r < DEGENERATE_F_RADIUS:
        return Zonotope(zero_c, np.zeros_like(z.generators))
    return Zonotope(zero_c, z.generators / (z.dim**2 * r))


def outer_product(z1: Zonotope, z2: Zonotope) -> np.ndarray:
    """c1 c2^T + G1 G2^T; requires equal generator counts."""
    if z1.num_generators != z2.num_generators:
        raise ValueError(
            f"generator counts differ: {z1.num_generators} vs {z2.num_generators}"
        )
    return np.outer(z1.center, z2.center) + z1.generators @ z2.generators.T


def support(z: Zonotope, a) -> float:
    """Support value sup {a^T x : x in z} = a^T c + sum_j |a^T G_(.,j)|."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (z.dim,):
        raise ValueError(f"direction shape {a.shape} does not match dimension {z.dim}")
    return float(a @ z.center + np.abs(a @ z.generators).sum())


def elementwise_add(z1: Zonotope, z2: Zonotope) -> Zonotope:
    """Entry-wise sum of centers and generator matrices (not a Minkowski sum)."""
    if z1.dim != z2.dim or z1.num_generators != z2.num_generators:
        raise ValueError(
            f"shape mismatch: ({z1.dim}, {z1.num_generators}) vs ({z2.dim}, {z2.num_generators})"
        )
    return Zonotope(z1.center + z2.center, z1.generators + z2.generators)


def scale(z: Zonotope, s: float) -> Zonotope:
    """Entry-wise scaling of center and generators by a scalar."""
    s = float(s)
    return Zonotope(z.center * s, z.generators * s)
