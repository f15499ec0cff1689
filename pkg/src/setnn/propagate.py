"""Set propagation through feed-forward networks.

Three abstraction backends share one batched engine:

  * "zonotope_full": affine maps act on the full generator matrix and each
    activation appends one error generator per neuron, so the generator
    count grows layer by layer.
  * "zonotope_interval_errors": the generator count stays fixed at the
    input's; activation error bands accumulate in a separate interval-radius
    vector rho. Sound because the state represents the Minkowski sum of
    <c, G> with the box [-rho, rho].
  * "ibp": pure interval bounds in midpoint/radius form.

All states carry a leading sample axis. Generator tensors may keep a
broadcast batch axis of 1 while centers are per-sample, which leaves shared
input structure (an epsilon-ball identity, say) unexpanded until the first
activation makes samples diverge.

The backward passes return the exact gradients of the forward computations,
treating the error-band candidates pinned by the forward pass as locally
constant. Parameter gradients are averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from setnn.enclosure import _bound_partials, _make_record
from setnn.network import ACTIVATIONS, Activation, Linear, Network
from setnn.zonotope import DEGENERATE_F_RADIUS, Zonotope

__all__ = [
    "BACKENDS",
    "ForwardTrace",
    "FullState",
    "IbpState",
    "IntervalErrorState",
    "f_radius_seed",
    "linf_input_set",
    "output_bounds",
    "output_f_radius",
    "output_zonotope",
    "set_backward",
    "set_backward_batch",
    "set_forward",
    "set_forward_batch",
]

BACKENDS = ("zonotope_full", "zonotope_interval_errors", "ibp")


class FullState(NamedTuple):
    """Zonotope batch: centers (B, n), generators (B or 1, n, q)."""

    c: np.ndarray
    G: np.ndarray


class IntervalErrorState(NamedTuple):
    """Zonotope plus interval errors: c (B, n), G (B or 1, n, q), rho (B or 1, n)."""

    c: np.ndarray
    G: np.ndarray
    rho: np.ndarray


class IbpState(NamedTuple):
    """Interval batch in midpoint/radius form: m (B, n), r (B or 1, n)."""

    m: np.ndarray
    r: np.ndarray


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from a forward propagation.

    entries holds one (layer, state_in, record) triple per network layer;
    record is None for linear layers and for ibp activations (ibp recomputes
    its local derivatives from the stored input state).
    """

    backend: str
    entries: list
    output: object
    batch: int


def linf_input_set(x: np.ndarray, epsilon: float) -> Zonotope:
    """Axis-aligned epsilon-ball around a single input point."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single 1-D input point, got shape {x.shape}")
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if epsilon == 0.0:
        return Zonotope(x, np.zeros((x.size, 0)))
    return Zonotope(x, epsilon * np.eye(x.size))


def _check_backend(backend: str) -> None:
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def _diag_embed(v: np.ndarray) -> np.ndarray:
    b, n = v.shape
    out = np.zeros((b, n, n))
    idx = np.arange(n)
    out[:, idx, idx] = v
    return out


def _gen_radius(G: np.ndarray) -> np.ndarray:
    return np.abs(G).sum(axis=2)


def set_forward_batch(
    net: Network, centers: np.ndarray, generators: np.ndarray, backend: str = "zonotope_full"
) -> ForwardTrace:
    """Propagate a batch of input sets through the network.

    Args:
        net: the network.
        centers: (B, n0) input centers.
        generators: (B, n0, q0) or (1, n0, q0) input generators; a leading
            axis of 1 shares one generator matrix across the batch.
        backend: one of BACKENDS.

    Returns:
        ForwardTrace with the per-layer inputs, enclosure records, and the
        final state.
    """
    _check_backend(backend)
    centers = np.asarray(centers, dtype=np.float64)
    generators = np.asarray(generators, dtype=np.float64)
    if centers.ndim != 2 or generators.ndim != 3:
        raise ValueError("centers must be (B, n) and generators (B or 1, n, q)")
    if generators.shape[1] != centers.shape[1]:
        raise ValueError(
            f"generator rows {generators.shape[1]} do not match input width {centers.shape[1]}"
        )
    if generators.shape[0] not in (1, centers.shape[0]):
        raise ValueError("generator batch axis must be 1 or match the center batch")
    if centers.shape[1] != net.input_dim:
        raise ValueError(f"input width {centers.shape[1]} != network input {net.input_dim}")
    batch = centers.shape[0]

    if backend == "zonotope_full":
        state: object = FullState(centers, generators)
    elif backend == "zonotope_interval_errors":
        state = IntervalErrorState(centers, generators, np.zeros((1, centers.shape[1])))
    else:
        state = IbpState(centers, _gen_radius(generators))

    entries = []
    for layer in net.layers:
        if isinstance(layer, Linear):
            entries.append((layer, state, None))
            state = _forward_linear(backend, layer, state)
        else:
            state_in = state
            state, rec = _forward_activation(backend, layer, state)
            entries.append((layer, state_in, rec))
    return ForwardTrace(backend=backend, entries=entries, output=state, batch=batch)


def _forward_linear(backend: str, layer: Linear, state):
    W, b = layer.weights, layer.bias
    if backend == "ibp":
        return IbpState(state.m @ W.T + b, state.r @ np.abs(W).T)
    G = np.matmul(W, state.G)
    c = state.c @ W.T + b
    if backend == "zonotope_full":
        return FullState(c, G)
    return IntervalErrorState(c, G, state.rho @ np.abs(W).T)


def _forward_activation(backend: str, layer: Activation, state):
    kind = layer.kind
    if backend == "ibp":
        phi = ACTIVATIONS[kind].phi
        lo, hi = phi(state.m - state.r), phi(state.m + state.r)
        return IbpState((hi + lo) / 2.0, (hi - lo) / 2.0), None
    rad = _gen_radius(state.G)
    if backend == "zonotope_interval_errors":
        rad = rad + state.rho
    l, u = state.c - rad, state.c + rad
    rec = _make_record(kind, l, u, state.G.shape[2])
    mid = (rec.d_upper + rec.d_lower) / 2.0
    half = (rec.d_upper - rec.d_lower) / 2.0
    c = rec.lam * state.c + mid
    G = rec.lam[..., None] * state.G
    if backend == "zonotope_full":
        # point sets (q = 0) stay exact through every layer, so the all-zero
        # error block is skipped and q never grows; the backward treats the
        # missing block as zero
        if state.G.shape[2] > 0 or np.any(half):
            G = np.concatenate([G, _diag_embed(half)], axis=2)
        return FullState(c, G), rec
    return IntervalErrorState(c, G, rec.lam * state.rho + half), rec


def set_forward(
    net: Network, z: Zonotope, backend: str = "zonotope_full"
) -> tuple[Zonotope, ForwardTrace]:
    """Propagate one input set; returns the output set and the trace."""
    trace = set_forward_batch(net, z.center[None, :], z.generators[None, :, :], backend)
    return output_zonotope(trace, 0), trace


def _batch_row(arr: np.ndarray, index: int) -> np.ndarray:
    return arr[0] if arr.shape[0] == 1 else arr[index]


def output_zonotope(trace: ForwardTrace, index: int = 0) -> Zonotope:
    """Assemble the output set of one batch element as a zonotope."""
    out = trace.output
    if trace.backend == "zonotope_full":
        return Zonotope(out.c[index], _batch_row(out.G, index))
    if trace.backend == "zonotope_interval_errors":
        G = _batch_row(out.G, index)
        return Zonotope(out.c[index], np.hstack([G, np.diag(_batch_row(out.rho, index))]))
    return Zonotope(out.m[index], np.diag(_batch_row(out.r, index)))


def output_bounds(trace: ForwardTrace) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise output bounds for the whole batch, shapes (B, n)."""
    out = trace.output
    if trace.backend == "ibp":
        rad = np.broadcast_to(out.r, out.m.shape)
        return out.m - rad, out.m + rad
    rad = _gen_radius(out.G)
    if trace.backend == "zonotope_interval_errors":
        rad = rad + out.rho
    rad = np.broadcast_to(rad, out.c.shape)
    return out.c - rad, out.c + rad


def _radius_parts(trace: ForwardTrace) -> tuple[np.ndarray, int]:
    """Sum of squared generator entries per sample and the output width."""
    out = trace.output
    if trace.backend == "zonotope_full":
        sq = (out.G**2).sum(axis=(1, 2))
        n = out.c.shape[1]
        b = out.c.shape[0]
    elif trace.backend == "zonotope_interval_errors":
        sq = (out.G**2).sum(axis=(1, 2)) + (out.rho**2).sum(axis=1)
        n = out.c.shape[1]
        b = out.c.shape[0]
    else:
        sq = (out.r**2).sum(axis=1)
        n = out.m.shape[1]
        b = out.m.shape[0]
    return np.broadcast_to(sq, (b,)), n


def output_f_radius(trace: ForwardTrace) -> np.ndarray:
    """Frobenius radius of each output set, shape (B,)."""
    sq, n = _radius_parts(trace)
    return np.sqrt(sq) / n


def f_radius_seed(trace: ForwardTrace, scale: np.ndarray):
    """Backward seed for scale * f_radius(output set), per sample.

    scale is (B,) and multiplies each sample's radius gradient; degenerate
    radii (< 1e-12) contribute zero, matching f_radius_gradient.
    """
    out = trace.output
    sq, n = _radius_parts(trace)
    radius = np.sqrt(sq) / n
    scale = np.asarray(scale, dtype=np.float64)
    safe = np.where(radius < DEGENERATE_F_RADIUS, 1.0, radius)
    coeff = np.where(radius < DEGENERATE_F_RADIUS, 0.0, scale / (n * n * safe))
    if trace.backend == "zonotope_full":
        zeros = np.zeros_like(out.c)
        return FullState(zeros, coeff[:, None, None] * out.G)
    if trace.backend == "zonotope_interval_errors":
        zeros = np.zeros_like(out.c)
        return IntervalErrorState(
            zeros, coeff[:, None, None] * out.G, coeff[:, None] * out.rho
        )
    return IbpState(np.zeros_like(out.m), coeff[:, None] * np.broadcast_to(out.r, out.m.shape))


def _mean_outer(a: np.ndarray, b: np.ndarray, batch: int) -> np.ndarray:
    return a.T @ b / batch


def _mean_gen_outer(Gbar: np.ndarray, Gin: np.ndarray, batch: int) -> np.ndarray:
    # phrased as BLAS matmuls; einsum would contract these index patterns in
    # pure C loops, an order of magnitude slower at training shapes
    if Gin.shape[0] == 1:
        return Gbar.sum(axis=0) @ Gin[0].T / batch
    return np.matmul(Gbar, Gin.transpose(0, 2, 1)).sum(axis=0) / batch


def set_backward_batch(trace: ForwardTrace, seed, input_grad: bool = True) -> tuple[object, list]:
    """Pull a backend-matched gradient state back through a trace.

    Args:
        trace: result of set_forward_batch.
        seed: gradient of a scalar loss w.r.t. the output state, as a
            FullState / IntervalErrorState / IbpState matching the backend,
            one row per sample.
        input_grad: when False, the propagation into the network input is
            skipped (the first layer's heaviest matmul) and the returned
            state is None. Parameter gradients are unaffected; training
            loops that only update weights use this.

    Returns:
        (input gradient state, parameter gradients). Parameter gradients are
        a list aligned with the network layers: (dW, db) for linear layers
        averaged over the batch, None for activations.
    """
    backend = trace.backend
    expected = {
        "zonotope_full": FullState,
        "zonotope_interval_errors": IntervalErrorState,
        "ibp": IbpState,
    }[backend]
    if not isinstance(seed, expected):
        raise ValueError(f"seed must be {expected.__name__} for backend {backend!r}")
    grads: list = [None] * len(trace.entries)
    state = seed
    for k in range(len(trace.entries) - 1, -1, -1):
        layer, state_in, rec = trace.entries[k]
        if isinstance(layer, Linear):
            if k == 0 and not input_grad:
                grads[k] = _linear_param_grads(backend, layer, state_in, state, trace.batch)
                state = None
            else:
                state, grads[k] = _backward_linear(backend, layer, state_in, state, trace.batch)
        elif k == 0 and not input_grad:
            state = None
        else:
            state = _backward_activation(backend, layer, state_in, rec, state)
    return state, grads


def _linear_param_grads(backend: str, layer: Linear, state_in, gbar, batch: int):
    W = layer.weights
    if backend == "ibp":
        r_in = np.broadcast_to(state_in.r, (gbar.r.shape[0], state_in.r.shape[1]))
        dW = _mean_outer(gbar.m, state_in.m, batch) + np.sign(W) * _mean_outer(
            gbar.r, r_in, batch
        )
        return dW, gbar.m.mean(axis=0)
    dW = _mean_outer(gbar.c, state_in.c, batch) + _mean_gen_outer(gbar.G, state_in.G, batch)
    if backend == "zonotope_interval_errors":
        rho_in = np.broadcast_to(state_in.rho, (gbar.rho.shape[0], state_in.rho.shape[1]))
        dW = dW + np.sign(W) * _mean_outer(gbar.rho, rho_in, batch)
    return dW, gbar.c.mean(axis=0)


def _backward_linear(backend: str, layer: Linear, state_in, gbar, batch: int):
    W = layer.weights
    dW, db = _linear_param_grads(backend, layer, state_in, gbar, batch)
    if backend == "ibp":
        return IbpState(gbar.m @ W, gbar.r @ np.abs(W)), (dW, db)
    c = gbar.c @ W
    G = np.matmul(W.T, gbar.G)
    if backend == "zonotope_full":
        return FullState(c, G), (dW, db)
    return IntervalErrorState(c, G, gbar.rho @ np.abs(W)), (dW, db)


def _backward_activation(backend: str, layer: Activation, state_in, rec, gbar):
    kind = layer.kind
    if backend == "ibp":
        prime = ACTIVATIONS[kind].phi_prime
        pl = prime(state_in.m - state_in.r)
        pu = prime(state_in.m + state_in.r)
        s, d = (pu + pl) / 2.0, (pu - pl) / 2.0
        return IbpState(gbar.m * s + gbar.r * d, gbar.m * d + gbar.r * s)

    lam_l, lam_u, dlo_l, dlo_u, dhi_l, dhi_u = _bound_partials(rec)
    if backend == "zonotope_full":
        n = state_in.c.shape[1]
        p = rec.p
        if gbar.G.shape[2] == p:
            err = np.zeros_like(gbar.c)
        else:
            err = gbar.G[:, np.arange(n), p + np.arange(n)]
        Gp = gbar.G[..., :p]
        a = gbar.c * state_in.c + (Gp * state_in.G).sum(axis=2)
    else:
        err = gbar.rho
        Gp = gbar.G
        a = (
            gbar.c * state_in.c
            + (Gp * state_in.G).sum(axis=2)
            + gbar.rho * state_in.rho
        )
    b_hi = 0.5 * (gbar.c + err)
    b_lo = 0.5 * (gbar.c - err)
    t_l = a * lam_l + b_hi * dhi_l + b_lo * dlo_l
    t_u = a * lam_u + b_hi * dhi_u + b_lo * dlo_u
    c = rec.lam * gbar.c + t_l + t_u
    G = rec.lam[..., None] * Gp + (t_u - t_l)[..., None] * np.sign(state_in.G)
    if backend == "zonotope_full":
        return FullState(c, G)
    return IntervalErrorState(c, G, rec.lam * gbar.rho + (t_u - t_l))


def set_backward(trace: ForwardTrace, g_out: Zonotope) -> tuple[Zonotope, list]:
    """Pull an output gradient zonotope back through a full-zonotope trace.

    Only defined for the "zonotope_full" backend, whose traces preserve the
    exact generator structure; other backends raise ValueError. The trace
    must hold a single sample.

    Returns the gradient zonotope w.r.t. the input set and the parameter
    gradients (per linear layer).
    """
    if trace.backend != "zonotope_full":
        raise ValueError(
            f"set_backward requires a 'zonotope_full' trace, got {trace.backend!r}"
        )
    if trace.batch != 1:
        raise ValueError(f"set_backward expects a single-sample trace, got batch {trace.batch}")
    out = trace.output
    if g_out.dim != out.c.shape[1] or g_out.num_generators != out.G.shape[2]:
        raise ValueError(
            "gradient zonotope shape "
            f"({g_out.dim}, {g_out.num_generators}) does not match the output "
            f"({out.c.shape[1]}, {out.G.shape[2]})"
        )
    seed = FullState(g_out.center[None, :], g_out.generators[None, :, :])
    state, grads = set_backward_batch(trace, seed)
    return Zonotope(state.c[0], state.G[0]), grads
