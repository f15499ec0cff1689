"""Binding end-to-end acceptance checks.

Each test here pins one headline guarantee of the package: enclosure
soundness, exactness and dominance of the activation enclosures, gradient
fidelity of set-based backpropagation, exact degeneration to point training,
the 2D benchmark reproduction, the MNIST robust-training pattern, complexity
scaling, verifier consistency, and byte-level reproducibility. Tolerances
and runtime budgets are fixed; loosening them is not an option.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from test_propagate import fd_close
from test_training import point_sgd_reference

from setnn.attacks import AttackConfig, pgd_batch
from setnn.cli import main as cli_main
from setnn.data import load_mnist_idx, normalize_into_network, synthetic_2d
from setnn.enclosure import approx_errors, enclosure_area, linear_slope, singh_enclose
from setnn.network import (
    deserialize,
    init_mlp,
    load_network,
    point_forward,
    save_network,
    serialize,
)
from setnn.propagate import linf_input_set, set_forward
from setnn.training import SetLossConfig, TrainConfig, set_loss, set_loss_gradient, train
from setnn.propagate import set_backward
from setnn.verification import _verified_batch, evaluate
from setnn.zonotope import Zonotope, interval_hull

DATA_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist"

KINDS = ("relu", "tanh", "sigmoid")


def test_enclosure_soundness_suite():
    # 100 random networks, 1000 sampled points each: every sampled output
    # must lie inside the propagated interval hull (tolerance 1e-9)
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    for i in range(100):
        kind = KINDS[i % 3]
        n_linear = int(rng.integers(2, 5))
        dims = [int(rng.integers(2, 33)) for _ in range(n_linear + 1)]
        net = init_mlp(dims, kind, seed=int(rng.integers(0, 2**31)))
        q = int(rng.integers(1, 9))
        c = rng.uniform(-1.0, 1.0, dims[0])
        G = rng.normal(0.0, 0.3, (dims[0], q))
        out, _ = set_forward(net, Zonotope(c, G))
        hull = interval_hull(out)
        coeffs = rng.uniform(-1.0, 1.0, (1000, q))
        ys, _ = point_forward(net, c[None, :] + coeffs @ G.T)
        assert np.all(ys >= hull.lower[None, :] - 1e-9), f"net {i} below hull"
        assert np.all(ys <= hull.upper[None, :] + 1e-9), f"net {i} above hull"
    assert time.perf_counter() - t0 < 120.0


def test_approximation_error_exactness():
    # analytic extreme deviations vs a brute-force grid with 1e5 steps; half
    # the intervals are forced to straddle zero so the crossing formulas get
    # dense coverage. The grid is the oracle here, so each kind's widths are
    # chosen to keep the grid's own discretization error below the 1e-6
    # comparison tolerance: smooth kinds are second-order flat at interior
    # extrema, but the relu kink is first-order and off-grid, which bounds
    # relu widths by 0.2 (error <= width / 4e5; the formulas are
    # scale-equivariant, so narrow intervals cover the same cases)
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    steps = np.linspace(0.0, 1.0, 100_001)
    chunk, seg = 200, 10_001
    x = np.empty((chunk, seg))
    dev = np.empty((chunk, seg))

    def accumulate(kind, l_c, w_c, lam_c):
        lo = np.full(len(l_c), np.inf)
        hi = np.full(len(l_c), -np.inf)
        for s in range(0, len(steps), seg):
            m = min(seg, len(steps) - s)
            np.multiply(w_c[:, None], steps[None, s:s + m], out=x[:, :m])
            x[:, :m] += l_c[:, None]
            if kind == "relu":
                np.maximum(x[:, :m], 0.0, out=dev[:, :m])
            elif kind == "tanh":
                np.tanh(x[:, :m], out=dev[:, :m])
            else:
                np.negative(x[:, :m], out=dev[:, :m])
                np.exp(dev[:, :m], out=dev[:, :m])
                dev[:, :m] += 1.0
                np.reciprocal(dev[:, :m], out=dev[:, :m])
            x[:, :m] *= lam_c[:, None]
            dev[:, :m] -= x[:, :m]
            np.minimum(lo, dev[:, :m].min(axis=1), out=lo)
            np.maximum(hi, dev[:, :m].max(axis=1), out=hi)
        return lo, hi

    for kind in KINDS:
        w_max = 0.2 if kind == "relu" else 6.0
        span = 2.0 if kind == "relu" else 4.0
        width = rng.uniform(1e-3, w_max, 10_000)
        l = np.where(
            np.arange(10_000) < 5_000,
            rng.uniform(-span, span, 10_000),
            -width * rng.uniform(0.0, 1.0, 10_000),
        )
        u = l + width
        lam = linear_slope(l, u, kind)
        d_lo, d_hi, _, _ = approx_errors(lam, l, u, kind)
        for s in range(0, 10_000, chunk):
            e = s + chunk
            lo, hi = accumulate(kind, l[s:e], width[s:e], lam[s:e])
            np.testing.assert_allclose(lo, d_lo[s:e], atol=1e-6)
            np.testing.assert_allclose(hi, d_hi[s:e], atol=1e-6)
    assert time.perf_counter() - t0 < 60.0


def test_enclosure_dominance():
    # our tightest-chord enclosure never has more integrated error than the
    # parallel-line comparison enclosure, and the hand-computed tanh [-1, 1]
    # pair reproduces
    t0 = time.perf_counter()
    rng = np.random.default_rng(13)
    for kind in ("tanh", "sigmoid"):
        l = rng.uniform(-5.0, 5.0, 10_000)
        u = l + rng.uniform(0.0, 8.0, 10_000)
        lam = linear_slope(l, u, kind)
        d_lo, d_hi, _, _ = approx_errors(lam, l, u, kind)
        ours = enclosure_area(d_lo, d_hi, l, u)
        _, _, d_s = singh_enclose(l, u, kind)
        singh = enclosure_area(-d_s, d_s, l, u)
        assert np.all(ours <= singh + 1e-12), kind

    lam = linear_slope(-1.0, 1.0, "tanh")
    d_lo, d_hi, _, _ = approx_errors(lam, -1.0, 1.0, "tanh")
    _, _, d_s = singh_enclose(-1.0, 1.0, "tanh")
    assert enclosure_area(d_lo, d_hi, -1.0, 1.0) == pytest.approx(0.327020, abs=1e-4)
    assert enclosure_area(-d_s, d_s, -1.0, 1.0) == pytest.approx(1.366480, abs=1e-4)
    assert time.perf_counter() - t0 < 30.0


def _fd_trace_ok(trace):
    """Finite-difference safety margins for an FD probe at h=1e-6.

    Relu bounds must clear the kink: crossing it inside the stencil jumps the
    chord slope by O(1). For smooth kinds the only discrete event is the
    argmin/argmax flip between an interior tangent candidate and the
    endpoints; the candidate gap and its drift across the stencil both carry
    the local curvature as a factor, so the flip condition reduces to a pure
    width bound (gap ~ phi''*w^2/8 vs drift ~ h*phi''*w*chain), and a floor
    of 1e-3 on interval widths rules flips out for any chain magnitude these
    small networks can produce."""
    for layer, state_in, rec in trace.entries:
        if rec is None:
            continue
        l, u = rec.lower.ravel(), rec.upper.ravel()
        if rec.kind == "relu":
            if np.any(u - l < 1e-4):
                return False
            if np.any(np.abs(l) < 1e-3) or np.any(np.abs(u) < 1e-3):
                return False
        elif np.any(u - l < 1e-3):
            return False
    return True


def _fd_safe_input(net, eps, rng):
    """Input whose trace keeps finite differences of the set loss honest."""
    for _ in range(500):
        x = rng.uniform(0.05, 0.95, net.input_dim)
        _, trace = set_forward(net, linf_input_set(x, eps))
        if _fd_trace_ok(trace):
            return x
    raise RuntimeError("no finite-difference-safe input found")


def test_set_gradient_fidelity():
    # every single dW/db entry against central finite differences of the
    # set loss, 50 random networks across all activation kinds
    t0 = time.perf_counter()
    rng = np.random.default_rng(4242)
    h = 1e-6
    for i in range(50):
        kind = KINDS[i % 3]
        eps = (0.01, 0.05)[i % 2]
        tau = (0.1, 0.5)[(i // 2) % 2]
        n_hidden = int(rng.integers(1, 4))
        dims = [int(rng.integers(2, 5))] + [
            int(rng.integers(2, 17)) for _ in range(n_hidden)
        ] + [int(rng.integers(2, 4))]
        net = init_mlp(dims, kind, seed=1000 + i)
        x = _fd_safe_input(net, eps, rng)
        t = np.zeros(dims[-1])
        t[int(rng.integers(0, dims[-1]))] = 1.0
        cfg = SetLossConfig(tau=tau, epsilon=eps)
        z_in = linf_input_set(x, eps)

        out, trace = set_forward(net, z_in)
        _, grads = set_backward(trace, set_loss_gradient(t, out, cfg))
        linear_grads = [g for g in grads if g is not None]

        def loss_at() -> float:
            y, _ = set_forward(net, z_in)
            return set_loss(t, y, cfg)

        for (dW, db), layer in zip(linear_grads, net.linear_layers()):
            for param, grad in ((layer.weights, dW), (layer.bias, db)):
                flat_p = param.reshape(-1)
                flat_g = grad.reshape(-1)
                for j in range(flat_p.size):
                    keep = flat_p[j]
                    flat_p[j] = keep + h
                    up = loss_at()
                    flat_p[j] = keep - h
                    down = loss_at()
                    flat_p[j] = keep
                    fd = (up - down) / (2.0 * h)
                    fd_close(flat_g[j], fd)
    assert time.perf_counter() - t0 < 300.0


@pytest.mark.parametrize("backend", ["zonotope_full", "zonotope_interval_errors", "ibp"])
def test_point_training_degeneracy(backend):
    # with zero radius and zero tau, 20 set-based SGD steps must match the
    # point-based reference to 1e-12 per parameter
    dataset = synthetic_2d()
    cfg = TrainConfig(
        learning_rate=0.05, epochs=10, batch_size=10, optimizer="sgd",
        seed=3, epsilon=0.0, backend=backend,
    )
    net = init_mlp([2, 12, 12, 2], "relu", seed=3)
    trained, log = train(net, dataset, cfg, SetLossConfig())
    assert len(log) * 2 == 20  # two batches of 10 per epoch
    reference = point_sgd_reference(net, dataset, cfg)
    for got, want in zip(trained.linear_layers(), reference.linear_layers()):
        np.testing.assert_allclose(got.weights, want.weights, atol=1e-12, rtol=0)
        np.testing.assert_allclose(got.bias, want.bias, atol=1e-12, rtol=0)


@pytest.fixture(scope="module")
def benchmark_2d_runs():
    """Five seeds of the 2D benchmark: set-trained vs point-trained models."""
    dataset = synthetic_2d()
    dims = [2, 100, 100, 100, 100, 100, 2]
    t0 = time.perf_counter()
    runs = []
    for seed in range(5):
        set_cfg = TrainConfig(
            learning_rate=0.01, epochs=200, batch_size=10, optimizer="adam",
            seed=seed, epsilon=0.05, warmup_epochs=20, rampup_epochs=80,
        )
        point_cfg = TrainConfig(
            learning_rate=0.01, epochs=200, batch_size=10, optimizer="adam",
            seed=seed, epsilon=0.0,
        )
        set_net, set_log = train(
            init_mlp(dims, "relu", seed=seed), dataset, set_cfg,
            SetLossConfig(tau=0.1, epsilon=0.05),
        )
        point_net, point_log = train(
            init_mlp(dims, "relu", seed=seed), dataset, point_cfg,
            SetLossConfig(),
        )
        runs.append({
            "seed": seed,
            "set_net": set_net,
            "point_net": point_net,
            "set_acc": set_log[-1].accuracy,
            "point_acc": point_log[-1].accuracy,
            "set_metrics": evaluate(set_net, dataset, 0.05),
            "point_metrics": evaluate(point_net, dataset, 0.05),
        })
    return {"dataset": dataset, "runs": runs,
            "elapsed": time.perf_counter() - t0}


def test_benchmark_2d_reproduction(benchmark_2d_runs):
    # both trainings reach 100% accuracy and set training certifies strictly
    # more of the training points at the training radius, in >= 4 of 5 seeds
    wins = 0
    for run in benchmark_2d_runs["runs"]:
        fv_set = run["set_metrics"].fast_verified_acc
        fv_point = run["point_metrics"].fast_verified_acc
        if run["set_acc"] == 1.0 and run["point_acc"] == 1.0 and fv_set > fv_point:
            wins += 1
    detail = [
        (r["seed"], r["set_acc"], r["point_acc"],
         r["set_metrics"].fast_verified_acc, r["point_metrics"].fast_verified_acc)
        for r in benchmark_2d_runs["runs"]
    ]
    assert wins >= 4, f"only {wins}/5 seeds: {detail}"
    assert benchmark_2d_runs["elapsed"] < 300.0


@pytest.fixture(scope="module")
def mnist_runs():
    """Set-trained vs point-trained 784-100-100-10 relu MLP, 10 epochs.

    Training uses a class-balanced 3000-image subset (the vendored set is
    ordered by digit, so a stride picks evenly): enough to hold clean
    accuracy while keeping the certified run inside the time budget on one
    core. Evaluation uses the full 1000-image test split."""
    train_ds = load_mnist_idx(
        DATA_DIR / "train-images-idx3-ubyte.gz",
        DATA_DIR / "train-labels-idx1-ubyte.gz",
    )
    train_ds = train_ds.take(np.arange(0, len(train_ds), 3))
    test_ds = load_mnist_idx(
        DATA_DIR / "test-images-idx3-ubyte.gz",
        DATA_DIR / "test-labels-idx1-ubyte.gz",
    )

    def fresh():
        return normalize_into_network(
            0.1307, 0.3081, init_mlp([784, 100, 100, 10], "relu", seed=0)
        )

    t0 = time.perf_counter()
    set_cfg = TrainConfig(
        learning_rate=1e-3, epochs=10, batch_size=128, optimizer="adam",
        seed=0, epsilon=0.1, warmup_epochs=1, rampup_epochs=4,
        backend="zonotope_interval_errors",
    )
    point_cfg = TrainConfig(
        learning_rate=1e-3, epochs=10, batch_size=128, optimizer="adam",
        seed=0, epsilon=0.0,
    )
    set_net, _ = train(fresh(), train_ds, set_cfg,
                       SetLossConfig(tau=0.1, epsilon=0.1))
    point_net, _ = train(fresh(), train_ds, point_cfg, SetLossConfig())

    results = {"elapsed_train": time.perf_counter() - t0}
    for name, net in (("set", set_net), ("point", point_net)):
        y, _ = point_forward(net, test_ds.inputs)
        preds = np.argmax(y, axis=1)
        verified = _verified_batch(net, test_ds.inputs, test_ds.labels, 0.1,
                                   "zonotope_full")
        adv = pgd_batch(net, test_ds.inputs, test_ds.targets(),
                        AttackConfig(epsilon=0.1))
        y_adv, _ = point_forward(net, adv)
        flipped = np.argmax(y_adv, axis=1) != test_ds.labels
        results[name] = {
            "net": net,
            "clean": float(np.mean(preds == test_ds.labels)),
            "fv": float(np.mean(verified)),
            "verified": verified,
            "flipped": flipped,
        }
    results["elapsed"] = time.perf_counter() - t0
    results["test_ds"] = test_ds
    return results


def test_mnist_robustness_pattern(mnist_runs):
    # non-certified training verifies (almost) nothing; set training holds
    # clean accuracy >= 85% and beats it by >= 30 percentage points
    set_run, point_run = mnist_runs["set"], mnist_runs["point"]
    assert set_run["clean"] >= 0.85, set_run["clean"]
    gap = set_run["fv"] - point_run["fv"]
    assert gap >= 0.30, (set_run["fv"], point_run["fv"])
    assert mnist_runs["elapsed"] < 1800.0


def test_complexity_scaling_in_generators():
    # doubling the input generator count scales single-pass propagation time
    # by a factor consistent with a linear-in-q cost term
    dims = [256, 256, 256, 256, 16]
    net = init_mlp(dims, "relu", seed=0)
    rng = np.random.default_rng(0)
    c = rng.uniform(0.0, 1.0, dims[0])
    G1 = rng.normal(0.0, 0.01, (dims[0], 2048))
    G2 = rng.normal(0.0, 0.01, (dims[0], 4096))
    z1, z2 = Zonotope(c, G1), Zonotope(c, G2)
    set_forward(net, z1)  # warm the caches before timing
    set_forward(net, z2)
    ratios = []
    for _ in range(20):
        t0 = time.perf_counter()
        set_forward(net, z1)
        t1 = time.perf_counter()
        set_forward(net, z2)
        t2 = time.perf_counter()
        ratios.append((t2 - t1) / (t1 - t0))
    assert 1.5 <= float(np.median(ratios)) <= 3.0, sorted(ratios)


def test_verifier_consistency(benchmark_2d_runs, mnist_runs):
    # across every evaluation run: nothing is both Verified and Falsified,
    # and anything interval propagation verifies, zonotopes verify too
    ds = benchmark_2d_runs["dataset"]
    for run in benchmark_2d_runs["runs"]:
        for metrics, net in ((run["set_metrics"], run["set_net"]),
                             (run["point_metrics"], run["point_net"])):
            statuses = np.array([v.status for v in metrics.verdicts])
            assert set(statuses) <= {"Verified", "Falsified", "Unknown"}
            # independently recomputed: certified samples are never the ones
            # the attack falsifies
            zono = _verified_batch(net, ds.inputs, ds.labels, 0.05,
                                   "zonotope_full")
            adv = pgd_batch(net, ds.inputs, ds.targets(),
                            AttackConfig(epsilon=0.05))
            y_adv, _ = point_forward(net, adv)
            flipped = np.argmax(y_adv, axis=1) != ds.labels
            assert not np.any(zono & flipped)
            assert not np.any((statuses == "Verified")
                              & (statuses == "Falsified"))
            assert not np.any(zono & (statuses == "Falsified"))
            ibp = _verified_batch(net, ds.inputs, ds.labels, 0.05, "ibp")
            assert not np.any(ibp & ~zono), "ibp verified but zonotope did not"

    test_ds = mnist_runs["test_ds"]
    for name in ("set", "point"):
        run = mnist_runs[name]
        # independent exclusivity: a verified sample can never be flipped
        # by an in-budget attack
        assert not np.any(run["verified"] & run["flipped"]), name
        sub = np.arange(200)
        ibp = _verified_batch(run["net"], test_ds.inputs[sub],
                              test_ds.labels[sub], 0.1, "ibp")
        assert not np.any(ibp & ~run["verified"][sub]), name


def test_serialization_round_trip_and_reproducibility(tmp_path, benchmark_2d_runs):
    # bit-exact model round trip, including a genuinely trained model
    rng = np.random.default_rng(5)
    nets = [
        init_mlp([3, 8, 8, 2], kind, seed=int(rng.integers(0, 100)))
        for kind in KINDS
    ] + [benchmark_2d_runs["runs"][0]["set_net"]]
    for i, net in enumerate(nets):
        blob = serialize(net)
        assert serialize(deserialize(blob)) == blob
        path = tmp_path / f"model_{i}.net"
        save_network(net, path)
        loaded = load_network(path)
        for a, b in zip(net.linear_layers(), loaded.linear_layers()):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
            assert a.weights.dtype == b.weights.dtype == np.float64

    # identical config and seed give byte-identical CSV and JSON outputs
    ini = tmp_path / "run.ini"
    ini.write_text(
        "[model]\nhidden = 8\n\n[train]\nepochs = 4\nbatch_size = 10\n"
        "epsilon = 0.03\ntau = 0.1\nseed = 5\n"
    )
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli_main(["train", "--config", str(ini), "--out", str(out_a)]) == 0
    assert cli_main(["train", "--config", str(ini), "--out", str(out_b)]) == 0
    for name in ("metrics.csv", "summary.json", "model.net"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    verdicts_a, verdicts_b = tmp_path / "va", tmp_path / "vb"
    for out in (verdicts_a, verdicts_b):
        assert cli_main(["verify", "--config", str(ini),
                         "--model", str(out_a / "model.net"),
                         "--out", str(out)]) == 0
    assert (verdicts_a / "verdicts.csv").read_bytes() == \
        (verdicts_b / "verdicts.csv").read_bytes()
