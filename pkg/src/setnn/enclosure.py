"""Image enclosure of element-wise activation layers over zonotopes.

Each neuron's activation is approximated by a linear function with slope
lambda (the chord over the neuron's input bounds) plus an approximation-error
band [d_lower, d_upper]. The band endpoints are computed analytically from a
closed-form candidate set: the activation's tangent points where
phi'(x) = lambda, plus the interval endpoints. The enclosure output is

    Z_out = <lambda * c + (d_upper + d_lower)/2,
             [diag(lambda) G | diag((d_upper - d_lower)/2)]>,

which adds one error generator per neuron. The backward pass differentiates
the whole construction (slope, error band, and bound dependencies) with
respect to the input zonotope, treating the chosen error candidates as
locally constant (a piecewise-smooth regime).

Also provides the parallel-line comparison enclosure for s-shaped activations
(slope min(phi'(l), phi'(u)), symmetric error) and the integrated-error area
metric used to compare enclosure tightness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from setnn.network import ACTIVATIONS
from setnn.zonotope import Zonotope, interval_hull

__all__ = [
    "EnclosureRecord",
    "linear_slope",
    "approx_errors",
    "enclose_layer",
    "singh_enclose",
    "enclosure_area",
    "slope_gradient",
    "error_gradient",
    "backprop_enclosure",
]

# Intervals narrower than this are treated as points: slope = phi'(midpoint),
# zero error band, zero enclosure gradients. This makes epsilon = 0 set
# training collapse exactly to point training and avoids 0/0 in the chord.
DEGENERATE_WIDTH = 1e-9

# Keeps arctanh away from its pole when the interior-candidate radicand is
# clamped into [0, 1).
_RADICAND_CEIL = 1.0 - 1e-12

# Candidate kind codes, pinned in the record so forward and backward agree.
KIND_INTERIOR = 0
KIND_AT_LOWER = 1
KIND_AT_UPPER = 2


def _phi(kind: str, x: np.ndarray) -> np.ndarray:
    return ACTIVATIONS[kind].phi(np.asarray(x, dtype=np.float64))

def _phi_prime(kind: str, x: np.ndarray) -> np.ndarray:
    return ACTIVATIONS[kind].phi_prime(np.asarray(x, dtype=np.float64))


def _slope_ceiling(kind: str) -> float:
    # Chord slopes cannot exceed the activation's maximum derivative.
    return 0.25 if kind == "sigmoid" else 1.0


def linear_slope(l, u, kind: str):
    """Chord slope (phi(u) - phi(l)) / (u - l), elementwise.

    Degenerate intervals (width < 1e-9) use phi'((l+u)/2). The result is
    clamped into [0, max slope] to guard the interior-candidate radicands
    against float cancellation near tiny widths.
    """
    l = np.asarray(l, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    width = u - l
    degenerate = width < DEGENERATE_WIDTH
    safe_width = np.where(degenerate, 1.0, width)
    chord = (_phi(kind, u) - _phi(kind, l)) / safe_width
    lam = np.where(degenerate, _phi_prime(kind, (l + u) / 2.0), chord)
    lam = np.clip(lam, 0.0, _slope_ceiling(kind))
    return lam if lam.ndim else float(lam)


def _interior_candidates(kind: str, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stationary points of phi(x) - lam*x: the x with phi'(x) = lam.

    Returns (negative branch, positive branch). For relu the kink 0 plays
    the role of both branches.
    """
    if kind == "relu":
        zero = np.zeros_like(lam)
        return zero, zero
    if kind == "tanh":
        root = np.sqrt(np.clip(1.0 - lam, 0.0, _RADICAND_CEIL))
        x = np.arctanh(root)
        return -x, x
    if kind == "sigmoid":
        root = np.sqrt(np.clip(1.0 - 4.0 * lam, 0.0, _RADICAND_CEIL))
        x = 2.0 * np.arctanh(root)
        return -x, x
    raise ValueError(f"unknown activation kind: {kind!r}")


def _errors_with_kinds(lam, l, u, kind):
    """Vectorized error-band computation with candidate bookkeeping.

    Returns (d_lower, d_upper, x_lower, x_upper, kind_lower, kind_upper).
    Candidates are scanned in preference order (interior, then l, then u);
    strict comparisons mean earlier candidates win exact ties, which pins
    the tie-break used by the backward pass.
    """
    lam = np.asarray(lam, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    c_neg, c_pos = _interior_candidates(kind, lam)
    candidates = (
        (c_neg, KIND_INTERIOR, (c_neg >= l) & (c_neg <= u)),
        (c_pos, KIND_INTERIOR, (c_pos >= l) & (c_pos <= u)),
        (l, KIND_AT_LOWER, np.ones(l.shape, dtype=bool)),
        (u, KIND_AT_UPPER, np.ones(u.shape, dtype=bool)),
    )
    d_lo = np.full(l.shape, np.inf)
    d_hi = np.full(l.shape, -np.inf)
    x_lo = np.zeros_like(l)
    x_hi = np.zeros_like(l)
    k_lo = np.zeros(l.shape, dtype=np.int8)
    k_hi = np.zeros(l.shape, dtype=np.int8)
    for x, code, valid in candidates:
        g = np.where(valid, _phi(kind, x) - lam * x, np.nan)
        lower = valid & (g < d_lo)
        d_lo = np.where(lower, g, d_lo)
        x_lo = np.where(lower, x, x_lo)
        k_lo = np.where(lower, code, k_lo)
        upper = valid & (g > d_hi)
        d_hi = np.where(upper, g, d_hi)
        x_hi = np.where(upper, x, x_hi)
        k_hi = np.where(upper, code, k_hi)
    degenerate = (u - l) < DEGENERATE_WIDTH
    mid = (l + u) / 2.0
    # Point interval: lam = phi'(mid), and both errors collapse to the
    # tangent intercept phi(mid) - lam*mid so the output center is phi(mid).
    d_point = _phi(kind, mid) - lam * mid
    d_lo = np.where(degenerate, d_point, d_lo)
    d_hi = np.where(degenerate, d_point, d_hi)
    x_lo = np.where(degenerate, mid, x_lo)
    x_hi = np.where(degenerate, mid, x_hi)
    k_lo = np.where(degenerate, KIND_INTERIOR, k_lo).astype(np.int8)
    k_hi = np.where(degenerate, KIND_INTERIOR, k_hi).astype(np.int8)
    return d_lo, d_hi, x_lo, x_hi, k_lo, k_hi


def approx_errors(lam, l, u, kind: str):
    """Extreme values of phi(x) - lam*x over [l, u].

    Returns (d_lower, d_upper, x_lower, x_upper): the minimum and maximum of
    the deviation and the points attaining them. Candidates are the interior
    stationary points (where phi'(x) = lam, dropped when outside [l, u] or
    when the defining radicand leaves [0, 1)) and the endpoints l, u.
    """
    d_lo, d_hi, x_lo, x_hi, _, _ = _errors_with_kinds(lam, l, u, kind)
    if np.ndim(d_lo) == 0:
        return float(d_lo), float(d_hi), float(x_lo), float(x_hi)
    return d_lo, d_hi, x_lo, x_hi


@dataclass(frozen=True)
class EnclosureRecord:
    """Per-neuron enclosure data pinned by the forward pass.

    Attributes:
        kind: activation name.
        lower, upper: input bounds per neuron.
        lam: linear slope per neuron.
        d_lower, d_upper: approximation-error band per neuron.
        x_lower, x_upper: points attaining the errors.
        kind_lower, kind_upper: candidate codes (0 interior, 1 at l, 2 at u).
        degenerate: neurons treated as points (zero band, zero gradients).
        p: generator count of the input zonotope.
    """

    kind: str
    lower: np.ndarray
    upper: np.ndarray
    lam: np.ndarray
    d_lower: np.ndarray
    d_upper: np.ndarray
    x_lower: np.ndarray
    x_upper: np.ndarray
    kind_lower: np.ndarray
    kind_upper: np.ndarray
    degenerate: np.ndarray
    p: int

    @property
    def width(self) -> int:
        return self.lower.shape[-1] if self.lower.ndim else 1


def _make_record(kind: str, l: np.ndarray, u: np.ndarray, p: int) -> EnclosureRecord:
    lam = np.clip(
        np.asarray(linear_slope(l, u, kind), dtype=np.float64),
        0.0,
        _slope_ceiling(kind),
    )
    d_lo, d_hi, x_lo, x_hi, k_lo, k_hi = _errors_with_kinds(lam, l, u, kind)
    return EnclosureRecord(
        kind=kind,
        lower=l,
        upper=u,
        lam=lam,
        d_lower=d_lo,
        d_upper=d_hi,
        x_lower=x_lo,
        x_upper=x_hi,
        kind_lower=k_lo,
        kind_upper=k_hi,
        degenerate=(u - l) < DEGENERATE_WIDTH,
        p=p,
    )


def enclose_layer(z_in: Zonotope, kind: str) -> tuple[Zonotope, EnclosureRecord]:
    """Sound enclosure of phi(z_in) for an element-wise activation.

    The output zonotope scales the input by the per-neuron slopes, shifts by
    the error-band midpoint, and appends one axis-aligned generator per
    neuron holding the half-width of the error band.
    """
    hull = interval_hull(z_in)
    rec = _make_record(kind, hull.lower, hull.upper, z_in.num_generators)
    mid = (rec.d_upper + rec.d_lower) / 2.0
    half = (rec.d_upper - rec.d_lower) / 2.0
    center = rec.lam * z_in.center + mid
    gens = np.hstack([rec.lam[:, None] * z_in.generators, np.diag(half)])
    return Zonotope(center, gens), rec


def singh_enclose(l, u, kind: str):
    """Parallel-line comparison enclosure for s-shaped activations.

    lambda_S = min(phi'(l), phi'(u)); the offset mu_S centers the two
    parallel lines and d_S is the symmetric error. Only defined for tanh
    and sigmoid.
    """
    if kind not in ("tanh", "sigmoid"):
        raise ValueError(f"comparison enclosure is defined for s-shaped kinds, not {kind!r}")
    l = np.asarray(l, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    lam_s = np.minimum(_phi_prime(kind, l), _phi_prime(kind, u))
    mu_s = 0.5 * (_phi(kind, u) + _phi(kind, l) - lam_s * (u + l))
    d_s = 0.5 * (_phi(kind, u) - _phi(kind, l) - lam_s * (u - l))
    if np.ndim(lam_s) == 0:
        return float(lam_s), float(mu_s), float(d_s)
    return lam_s, mu_s, d_s


def enclosure_area(d_lower, d_upper, l, u):
    """Integrated approximation error (u - l) * (d_upper - d_lower)."""
    out = (np.asarray(u, dtype=np.float64) - np.asarray(l, dtype=np.float64)) * (
        np.asarray(d_upper, dtype=np.float64) - np.asarray(d_lower, dtype=np.float64)
    )
    return float(out) if np.ndim(out) == 0 else out


def _bound_partials(rec: EnclosureRecord):
    """Partial derivatives of (lam, d_lower, d_upper) w.r.t. (l, u).

    Returns six arrays (lam_l, lam_u, dlo_l, dlo_u, dhi_l, dhi_u). The error
    partials follow the chain rule with the forward-pinned candidate kinds:
    interior candidates have phi'(x*) = lam by construction, so only the
    -dlam * x* term survives; endpoint candidates add the explicit
    phi'(endpoint) - lam term. Degenerate neurons get zeros.
    """
    kind = rec.kind
    width = rec.upper - rec.lower
    safe = np.where(rec.degenerate, 1.0, width)
    pl = _phi_prime(kind, rec.lower)
    pu = _phi_prime(kind, rec.upper)
    lam_l = np.where(rec.degenerate, 0.0, (rec.lam - pl) / safe)
    lam_u = np.where(rec.degenerate, 0.0, (pu - rec.lam) / safe)

    def d_partials(x_star, kind_code):
        base_l = -lam_l * x_star
        base_u = -lam_u * x_star
        at_l = kind_code == KIND_AT_LOWER
        at_u = kind_code == KIND_AT_UPPER
        d_l = np.where(at_l, pl - rec.lam - lam_l * rec.lower, base_l)
        d_u = np.where(at_l, -lam_u * rec.lower, base_u)
        d_l = np.where(at_u, -lam_l * rec.upper, d_l)
        d_u = np.where(at_u, pu - rec.lam - lam_u * rec.upper, d_u)
        zero = rec.degenerate
        return np.where(zero, 0.0, d_l), np.where(zero, 0.0, d_u)

    dlo_l, dlo_u = d_partials(rec.x_lower, rec.kind_lower)
    dhi_l, dhi_u = d_partials(rec.x_upper, rec.kind_upper)
    return lam_l, lam_u, dlo_l, dlo_u, dhi_l, dhi_u


def slope_gradient(rec: EnclosureRecord, i: int, z_in: Zonotope) -> Zonotope:
    """Gradient of the neuron-i slope w.r.t. its input center and generator row.

    Returned as a 1-dimensional gradient zonotope: center = d(lam_i)/d(c_i),
    generators = d(lam_i)/d(G_(i,:)). Uses d(u)/d(c)=d(l)/d(c)=1 and
    d(u)/d(G_ij) = -d(l)/d(G_ij) = sign(G_ij), with sign(0) = 0.
    """
    lam_l, lam_u, *_ = _bound_partials(rec)
    dc = lam_l[i] + lam_u[i]
    row = (lam_u[i] - lam_l[i]) * np.sign(z_in.generators[i])
    return Zonotope(np.array([dc]), row[None, :])


def error_gradient(
    rec: EnclosureRecord, i: int, which: str, z_in: Zonotope
) -> Zonotope:
    """Gradient of neuron i's lower or upper approximation error.

    which: "lower" or "upper". Same gradient-zonotope layout as
    slope_gradient.
    """
    _, _, dlo_l, dlo_u, dhi_l, dhi_u = _bound_partials(rec)
    if which == "lower":
        d_l, d_u = dlo_l[i], dlo_u[i]
    elif which == "upper":
        d_l, d_u = dhi_l[i], dhi_u[i]
    else:
        raise ValueError(f"which must be 'lower' or 'upper', got {which!r}")
    dc = d_l + d_u
    row = (d_u - d_l) * np.sign(z_in.generators[i])
    return Zonotope(np.array([dc]), row[None, :])


def backprop_enclosure(
    rec: EnclosureRecord, z_in: Zonotope, g_out: Zonotope
) -> Zonotope:
    """Pull an output gradient zonotope back through an enclosure.

    Args:
        rec: record pinned by the matching enclose_layer call.
        z_in: the activation's input zonotope from the forward pass
            (p generators).
        g_out: gradient zonotope w.r.t. the enclosure output; must have
            p + n generators (the enclosure appended n error columns).

    Returns:
        Gradient zonotope w.r.t. z_in with p generators. Per neuron i the
        contributions are: the slope-scaled carried gradient, the slope
        gradient weighted by the gradient-state/input inner product, and the
        error-band gradients weighted by the center and error-column
        coefficients.
    """
    n = z_in.dim
    p = z_in.num_generators
    if rec.p != p:
        raise ValueError(f"record expects p={rec.p} input generators, got {p}")
    if g_out.num_generators != p + n:
        raise ValueError(
            f"output gradient has {g_out.num_generators} generators, expected {p + n}"
        )
    c_grad = g_out.center
    G_grad = g_out.generators[:, :p]
    err_grad = g_out.generators[np.arange(n), p + np.arange(n)]

    lam_l, lam_u, dlo_l, dlo_u, dhi_l, dhi_u = _bound_partials(rec)
    # Coefficient of dlam_i: how the loss moves when neuron i's slope moves.
    a = c_grad * z_in.center + np.sum(G_grad * z_in.generators, axis=1)
    b_hi = 0.5 * (c_grad + err_grad)
    b_lo = 0.5 * (c_grad - err_grad)
    t_l = a * lam_l + b_hi * dhi_l + b_lo * dlo_l
    t_u = a * lam_u + b_hi * dhi_u + b_lo * dlo_u

    c_in = rec.lam * c_grad + t_l + t_u
    G_in = rec.lam[:, None] * G_grad + (t_u - t_l)[:, None] * np.sign(z_in.generators)
    return Zonotope(c_in, G_in)
