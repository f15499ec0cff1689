"""Gradient-based adversarial attacks and attack-derived input sets.

All attacks are deterministic given (net, x, t, config): no random starts or
restarts. Steps use the sign of the input gradient of the cross-entropy loss
with sign(0) = 0, and every returned point satisfies the l-inf ball and
[0, 1] clamp constraints exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from setnn.network import Network, cross_entropy_grad, point_backward, point_forward
from setnn.zonotope import Zonotope

__all__ = [
    "AttackConfig",
    "fgsm",
    "fgsm_batch",
    "fgsm_input_set",
    "input_gradients",
    "pgd",
    "pgd_batch",
]


@dataclass(frozen=True)
class AttackConfig:
    """PGD settings; the evaluation default is 40 iterations of step 0.01."""

    epsilon: float
    iterations: int = 40
    step_size: float = 0.01

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size <= 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")


def input_gradients(net: Network, X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Gradient of the cross-entropy loss w.r.t. each input row."""
    y, hidden = point_forward(net, X)
    g = cross_entropy_grad(T, y)
    gs, _ = point_backward(net, hidden, g)
    return gs[0]


def fgsm_batch(net: Network, X: np.ndarray, T: np.ndarray, epsilon: float) -> np.ndarray:
    """Single signed-gradient step per row, clamped to [0, 1]."""
    g = input_gradients(net, X, T)
    return np.clip(X + epsilon * np.sign(g), 0.0, 1.0)


def fgsm(net: Network, x: np.ndarray, t: np.ndarray, epsilon: float) -> np.ndarray:
    """Fast gradient sign attack: clamp(x + eps * sign(grad), [0, 1])."""
    return fgsm_batch(net, x[None, :], t[None, :], epsilon)[0]


def pgd_batch(net: Network, X: np.ndarray, T: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Projected gradient descent from X itself, constant step size.

    Each iterate is projected onto the intersection of the epsilon ball
    around X and the [0, 1] box.
    """
    lo = np.maximum(X - cfg.epsilon, 0.0)
    hi = np.minimum(X + cfg.epsilon, 1.0)
    Xk = X.copy()
    for _ in range(cfg.iterations):
        g = input_gradients(net, Xk, T)
        Xk = np.clip(Xk + cfg.step_size * np.sign(g), lo, hi)
    return Xk


def pgd(net: Network, x: np.ndarray, t: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Iterated signed-gradient attack with projection; see pgd_batch."""
    return pgd_batch(net, x[None, :], t[None, :], cfg)[0]


def fgsm_deltas_batch(
    net: Network, X: np.ndarray, T: np.ndarray, epsilon: float, count: int
) -> np.ndarray:
    """count successive FGSM deviations from each row of X, shape (B, d, count).

    The first delta is the FGSM step at X; each further delta takes the
    epsilon-magnitude signed-gradient step evaluated at the previously
    perturbed point, always measured as a deviation from X and clamped so
    X + delta stays in [0, 1]. Every column satisfies |delta|_inf <= epsilon.
    """
    if count < 1:
        raise ValueError(f"attack count must be >= 1, got {count}")
    deltas = np.empty((X.shape[0], X.shape[1], count))
    point = X
    for i in range(count):
        g = input_gradients(net, point, T)
        point = np.clip(X + epsilon * np.sign(g), 0.0, 1.0)
        deltas[:, :, i] = point - X
    return deltas


def fgsm_input_set(
    net: Network, x: np.ndarray, t: np.ndarray, epsilon: float, attacks: int = 1
) -> Zonotope:
    """Input zonotope spanned by scaled attack directions.

    With deltas d_1..d_k (k = attacks), the set is
    <x + (1/k) sum d_i, (1/k) [d_1 ... d_k]>. Since each |d_i|_inf <= eps,
    the hull lies within the epsilon ball around the new center.
    """
    deltas = fgsm_deltas_batch(net, x[None, :], t[None, :], epsilon, attacks)[0]
    center = x + deltas.mean(axis=1)
    return Zonotope(center, deltas / attacks)
