"""Single-pass robustness verification, evaluation metrics, radius search.

A sample is verified at radius epsilon when the output set of its input box
provably avoids every misclassification direction: for true label l and any
other class k, sup{y_k - y_l} <= 0 over the enclosure. The threshold is
non-strict, so boundary-exact outputs count as verified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, pgd_batch
from .data import Dataset
from .network import Network, point_forward
from .propagate import linf_input_set, output_zonotope, set_forward, set_forward_batch
from .zonotope import Zonotope, interval_hull

__all__ = [
    "Metrics",
    "Verdict",
    "classify",
    "evaluate",
    "interval_norm",
    "max_verified_radius",
    "verify_robust",
]

VERIFIED = "Verified"
FALSIFIED = "Falsified"
UNKNOWN = "Unknown"


@dataclass(frozen=True)
class Verdict:
    """Per-sample outcome of an evaluation run.

    witness is an input that the network misclassifies (the clean input
    itself when it is already misclassified, otherwise the attack point);
    None unless the status is Falsified.
    """

    index: int
    label: int
    predicted: int
    status: str
    witness: np.ndarray | None = None
    max_radius: float | None = None


@dataclass(frozen=True)
class Metrics:
    """Aggregate accuracy fractions plus the per-sample verdicts."""

    clean_acc: float
    falsified_acc: float
    fast_verified_acc: float
    verdicts: tuple[Verdict, ...]


def classify(y) -> int:
    """Predicted label: argmax, ties broken by the lowest index."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"expected a single logit vector, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("logits must be finite")
    return int(np.argmax(y))


def _misclassification_supports(z: Zonotope, label: int) -> np.ndarray:
    """sup{y_k - y_label} over the zonotope for every class k (0 at k=label)."""
    dc = z.center - z.center[label]
    dG = z.generators - z.generators[label]
    return dc + np.abs(dG).sum(axis=1)


def verify_robust(
    net: Network, x, label: int, epsilon: float, backend: str = "zonotope_full"
) -> bool:
    """True when no point of the output enclosure flips the class.

    Propagates the epsilon box around x and checks the support of every
    misclassification direction e_k - e_label; all must be <= 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= label < net.output_dim:
        raise ValueError(f"label {label} out of range for {net.output_dim} classes")
    out, _ = set_forward(net, linf_input_set(x, epsilon), backend=backend)
    sup = _misclassification_supports(out, label)
    sup[label] = -np.inf
    return bool(np.all(sup <= 0.0))


def _verified_batch(
    net: Network, X: np.ndarray, labels: np.ndarray, epsilon: float,
    backend: str, chunk: int = 64,
) -> np.ndarray:
    """Vectorized verify_robust over rows of X (chunked to bound memory)."""
    d = X.shape[1]
    ok = np.zeros(len(X), dtype=bool)
    if epsilon == 0.0:
        gens = np.zeros((1, d, 0))
    else:
        gens = epsilon * np.eye(d)[None, :, :]
    for s in range(0, len(X), chunk):
        stop = min(s + chunk, len(X))
        trace = set_forward_batch(net, X[s:stop], gens, backend)
        for i in range(stop - s):
            z = output_zonotope(trace, i)
            sup = _misclassification_supports(z, int(labels[s + i]))
            sup[labels[s + i]] = -np.inf
            ok[s + i] = np.all(sup <= 0.0)
    return ok


def evaluate(
    net: Network,
    dataset: Dataset,
    epsilon: float,
    attack_cfg: AttackConfig | None = None,
    backend: str = "zonotope_full",
) -> Metrics:
    """Clean / falsified / fast-verified accuracy over a dataset.

    falsified_acc counts the correctly classified samples for which PGD finds
    a misclassifying point, as a fraction of all samples, so it can never
    exceed clean_acc. Per-sample verdicts mark already-misclassified inputs
    as Falsified too (the input itself is the witness); a sample is Verified
    when verify_robust holds, and Unknown otherwise.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if attack_cfg is None:
        attack_cfg = AttackConfig(epsilon=epsilon)
    X = dataset.inputs
    labels = dataset.labels
    y, _ = point_forward(net, X)
    preds = np.argmax(y, axis=1)
    correct = preds == labels

    adv = pgd_batch(net, X, dataset.targets(), attack_cfg)
    y_adv, _ = point_forward(net, adv)
    adv_preds = np.argmax(y_adv, axis=1)
    flipped = adv_preds != labels

    verified = _verified_batch(net, X, labels, epsilon, backend)

    verdicts = []
    for i in range(len(dataset)):
        if not correct[i]:
            verdicts.append(Verdict(i, int(labels[i]), int(preds[i]), FALSIFIED,
                                    witness=X[i].copy()))
        elif flipped[i]:
            verdicts.append(Verdict(i, int(labels[i]), int(preds[i]), FALSIFIED,
                                    witness=adv[i].copy()))
        elif verified[i]:
            verdicts.append(Verdict(i, int(labels[i]), int(preds[i]), VERIFIED))
        else:
            verdicts.append(Verdict(i, int(labels[i]), int(preds[i]), UNKNOWN))

    n = len(dataset)
    return Metrics(
        clean_acc=float(np.mean(correct)),
        falsified_acc=float(np.sum(correct & flipped)) / n,
        fast_verified_acc=sum(v.status == VERIFIED for v in verdicts) / n,
        verdicts=tuple(verdicts),
    )


def max_verified_radius(
    net: Network,
    x,
    label: int,
    lo: float = 0.0,
    hi: float = 0.1,
    iters: int = 10,
    backend: str = "zonotope_full",
) -> float:
    """Largest verifiable radius found by bisection.

    Returns hi immediately when hi verifies, 0 when even lo does not (a
    misclassified point never verifies at radius 0). Otherwise runs `iters`
    bisection steps keeping the lower end verified; the result is within
    (hi - lo) / 2**iters of the true boundary.
    """
    if hi <= lo:
        raise ValueError(f"need hi > lo, got lo={lo}, hi={hi}")
    if lo < 0.0:
        raise ValueError(f"lo must be >= 0, got {lo}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if verify_robust(net, x, label, hi, backend):
        return hi
    if not verify_robust(net, x, label, lo, backend):
        return 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if verify_robust(net, x, label, mid, backend):
            lo = mid
        else:
            hi = mid
    return lo


def interval_norm(z: Zonotope) -> float:
    """Mean width of the interval hull, (1/n) * sum(u_i - l_i)."""
    hull = interval_hull(z)
    return float(np.mean(hull.upper - hull.lower))
