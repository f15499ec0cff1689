"""Command-line entry point.

Subcommands: train, eval, verify, attack, max-radius, compare-enclosures.
Every run is driven by an INI config file (see config.py for the schema)
plus a handful of overriding flags. All outputs are plain CSV ('.' decimal,
'\\n' line endings, header row) and JSON; identical config and seed give
byte-identical files, so runs can be diffed directly.

Exit codes: 0 success, 2 configuration or user error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, pgd_batch
from .config import ConfigError, RunConfig, load_run_config, resolve_backend
from .data import DataFormatError, Dataset, load_mnist_idx, synthetic_2d
from .enclosure import approx_errors, enclosure_area, linear_slope, singh_enclose
from .network import (
    ModelFormatError,
    Network,
    init_mlp,
    load_network,
    point_forward,
    save_network,
)
from .training import SetLossConfig, TrainConfig, TrainingDivergedError, train
from .verification import evaluate, max_verified_radius

__all__ = ["main"]


def _fmt(value) -> str:
    """CSV cell: floats via shortest round-trip repr, '.' decimal."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(cfg: RunConfig, split: str) -> Dataset:
    """Dataset for 'train' or 'test'; the 2D benchmark has a single split."""
    if cfg.dataset_kind == "2d":
        ds = synthetic_2d()
    else:
        images = getattr(cfg, f"dataset_{split}_images")
        labels = getattr(cfg, f"dataset_{split}_labels")
        if images is None or labels is None:
            raise ConfigError(
                f"dataset.kind=mnist needs {split}_images and {split}_labels paths"
            )
        ds = load_mnist_idx(images, labels)
    limit = cfg.dataset_limit if split == "train" else cfg.dataset_eval_limit
    if limit is not None:
        ds = ds.take(np.arange(min(limit, len(ds))))
    return ds


def _eval_split(cfg: RunConfig) -> Dataset:
    """Held-out data for summaries: the test split when one is configured."""
    if cfg.dataset_kind == "mnist" and cfg.dataset_test_images is not None:
        return _load_split(cfg, "test")
    return _load_split(cfg, "train")


def _load_model(args, ds: Dataset) -> Network:
    if args.model is None:
        raise ConfigError("this command needs --model PATH")
    net = load_network(args.model)
    if net.input_dim != ds.input_dim or net.output_dim != ds.num_classes:
        raise ConfigError(
            f"model maps {net.input_dim} -> {net.output_dim} but the dataset "
            f"has {ds.input_dim} features and {ds.num_classes} classes"
        )
    return net


def _resolved_verify_epsilon(cfg: RunConfig, args) -> float:
    if args.epsilon is not None:
        return args.epsilon
    if cfg.verify_epsilon is not None:
        return cfg.verify_epsilon
    return cfg.train_epsilon


def _resolved_verify_backend(cfg: RunConfig, args) -> str:
    if args.backend is not None:
        return resolve_backend(args.backend)
    if cfg.verify_backend is not None:
        return cfg.verify_backend
    return cfg.train_backend


def _attack_config(cfg: RunConfig, args, epsilon: float) -> AttackConfig:
    if args.epsilon is not None:
        epsilon = args.epsilon
    elif cfg.attack_epsilon is not None:
        epsilon = cfg.attack_epsilon
    return AttackConfig(
        epsilon=epsilon,
        iterations=cfg.attack_iterations,
        step_size=cfg.attack_step_size,
    )


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    dataset = _load_split(cfg, "train")
    seed = args.seed if args.seed is not None else cfg.train_seed
    epsilon = args.epsilon if args.epsilon is not None else cfg.train_epsilon
    backend = (
        resolve_backend(args.backend) if args.backend is not None
        else cfg.train_backend
    )

    holdout = None
    if cfg.dataset_kind == "mnist" and cfg.dataset_test_images is not None:
        holdout = _load_split(cfg, "test")
    elif cfg.train_holdout_fraction > 0.0:
        n_hold = int(np.ceil(cfg.train_holdout_fraction * len(dataset)))
        n_hold = min(n_hold, len(dataset) - 1)
        holdout = dataset.take(np.arange(len(dataset) - n_hold, len(dataset)))
        dataset = dataset.take(np.arange(len(dataset) - n_hold))
    if holdout is None:
        holdout = dataset

    net = init_mlp(
        [dataset.input_dim, *cfg.model_hidden, dataset.num_classes],
        cfg.model_activation,
        seed=seed,
    )
    train_cfg = TrainConfig(
        learning_rate=cfg.train_learning_rate,
        epochs=cfg.train_epochs,
        batch_size=cfg.train_batch_size,
        optimizer=cfg.train_optimizer,
        seed=seed,
        epsilon=epsilon,
        grad_clip_norm=cfg.train_grad_clip_norm,
        warmup_epochs=cfg.train_warmup_epochs,
        rampup_epochs=cfg.train_rampup_epochs,
        lr_decay_epochs=cfg.train_lr_decay_epochs,
        lr_decay_factor=cfg.train_lr_decay_factor,
        backend=backend,
        input_set_mode=cfg.train_input_set_mode,
        fgsm_attacks=cfg.train_fgsm_attacks,
    )
    # one epsilon knob: the input radius doubles as the loss normalizer
    loss_cfg = SetLossConfig(
        tau=cfg.train_tau, epsilon=epsilon if epsilon > 0 else 1.0
    )
    trained, history = train(net, dataset, train_cfg, loss_cfg)

    save_network(trained, out / "model.net")
    # wall time is intentionally absent: outputs must be byte-reproducible
    _write_csv(
        out / "metrics.csv",
        ["epoch", "epsilon", "tau", "learning_rate", "set_loss", "f_radius",
         "train_accuracy"],
        [(m.epoch, m.epsilon, m.tau, m.learning_rate, m.set_loss, m.f_radius,
          m.accuracy) for m in history],
    )
    metrics = evaluate(
        trained,
        holdout,
        _resolved_verify_epsilon(cfg, args),
        attack_cfg=_attack_config(cfg, args, epsilon),
        backend=_resolved_verify_backend(cfg, args),
    )
    _write_json(out / "summary.json", {
        "clean": metrics.clean_acc,
        "falsified": metrics.falsified_acc,
        "fast_verified": metrics.fast_verified_acc,
    })
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    ds = _eval_split(cfg)
    net = _load_model(args, ds)
    logits, _ = point_forward(net, ds.inputs)
    preds = np.argmax(logits, axis=1)
    _write_csv(
        out / "predictions.csv",
        ["index", "label", "predicted", "correct"],
        [(i, int(ds.labels[i]), int(preds[i]), int(preds[i] == ds.labels[i]))
         for i in range(len(ds))],
    )
    _write_json(out / "summary.json", {
        "clean": float(np.mean(preds == ds.labels)),
    })
    return 0


def cmd_verify(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    ds = _eval_split(cfg)
    net = _load_model(args, ds)
    epsilon = _resolved_verify_epsilon(cfg, args)
    metrics = evaluate(
        net,
        ds,
        epsilon,
        attack_cfg=_attack_config(cfg, args, epsilon),
        backend=_resolved_verify_backend(cfg, args),
    )
    _write_csv(
        out / "verdicts.csv",
        ["index", "label", "predicted", "verdict"],
        [(v.index, v.label, v.predicted, v.status) for v in metrics.verdicts],
    )
    _write_json(out / "summary.json", {
        "clean": metrics.clean_acc,
        "falsified": metrics.falsified_acc,
        "fast_verified": metrics.fast_verified_acc,
    })
    return 0


def cmd_attack(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    ds = _eval_split(cfg)
    net = _load_model(args, ds)
    attack_cfg = _attack_config(cfg, args, cfg.train_epsilon)
    logits, _ = point_forward(net, ds.inputs)
    preds = np.argmax(logits, axis=1)
    adv = pgd_batch(net, ds.inputs, ds.targets(), attack_cfg)
    adv_logits, _ = point_forward(net, adv)
    adv_preds = np.argmax(adv_logits, axis=1)
    success = adv_preds != ds.labels
    _write_csv(
        out / "attacks.csv",
        ["index", "label", "predicted", "adversarial_predicted", "success"],
        [(i, int(ds.labels[i]), int(preds[i]), int(adv_preds[i]),
          int(success[i])) for i in range(len(ds))],
    )
    _write_json(out / "summary.json", {
        "success_rate": float(np.mean(success)),
    })
    return 0


def cmd_max_radius(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    ds = _eval_split(cfg)
    net = _load_model(args, ds)
    hi = args.epsilon if args.epsilon is not None else cfg.max_radius_hi
    backend = _resolved_verify_backend(cfg, args)
    radii = [
        max_verified_radius(
            net, ds.inputs[i], int(ds.labels[i]),
            hi=hi, iters=cfg.max_radius_iters, backend=backend,
        )
        for i in range(len(ds))
    ]
    _write_csv(
        out / "radii.csv",
        ["index", "label", "radius"],
        [(i, int(ds.labels[i]), radii[i]) for i in range(len(ds))],
    )
    _write_json(out / "summary.json", {
        "mean": float(np.mean(radii)),
        "std": float(np.std(radii)),
    })
    return 0


def cmd_compare_enclosures(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    for kind in cfg.compare_kinds:
        if kind not in ("tanh", "sigmoid"):
            raise ConfigError(
                f"compare.kinds supports tanh and sigmoid, got {kind!r}"
            )
    if cfg.compare_steps < 2 or cfg.compare_hi <= cfg.compare_lo:
        raise ConfigError("compare grid needs steps >= 2 and hi > lo")
    grid = np.linspace(cfg.compare_lo, cfg.compare_hi, cfg.compare_steps)
    rows = []
    for kind in cfg.compare_kinds:
        for i, l in enumerate(grid):
            for u in grid[i:]:
                lam = linear_slope(l, u, kind)
                d_lo, d_hi, _, _ = approx_errors(lam, l, u, kind)
                _, _, d_s = singh_enclose(l, u, kind)
                rows.append((
                    float(l), float(u), kind,
                    enclosure_area(d_lo, d_hi, l, u),
                    enclosure_area(-d_s, d_s, l, u),
                ))
    _write_csv(
        out / "enclosures.csv",
        ["l", "u", "kind", "area_ours", "area_singh"],
        rows,
    )
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "attack": cmd_attack,
    "max-radius": cmd_max_radius,
    "compare-enclosures": cmd_compare_enclosures,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setnn",
        description="Set-based neural network training and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="INI run configuration file")
        p.add_argument("--model", type=str, default=None,
                       help="path to a saved model")
        p.add_argument("--out", type=str, default=None,
                       help="output directory (overrides output.dir)")
        p.add_argument("--backend", type=str, default=None,
                       choices=["zono", "zono-int-err", "ibp"],
                       help="set propagation backend")
        p.add_argument("--epsilon", type=float, default=None,
                       help="perturbation radius override")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override (train)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config) if args.config else RunConfig()
        return _COMMANDS[args.command](cfg, args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DataFormatError, ModelFormatError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
