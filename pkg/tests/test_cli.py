"""End-to-end tests for the command-line interface and config parsing."""

import csv
import json

import numpy as np
import pytest

from setnn.cli import main
from setnn.config import ConfigError, RunConfig, load_run_config, resolve_backend
from setnn.network import load_network
from setnn.verification import verify_robust


BASE_INI = """\
[model]
hidden = 6

[train]
epochs = 3
batch_size = 10
learning_rate = 0.05
epsilon = 0.02
tau = 0.1
seed = 1
"""


@pytest.fixture
def base_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(BASE_INI)
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def read_json(path):
    with open(path) as f:
        return json.load(f)


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.dataset_kind == "2d"
        assert cfg.train_backend == "zonotope_full"
        assert cfg.model_hidden == (100, 100)

    def test_load_overrides_only_given_keys(self, base_config):
        cfg = load_run_config(base_config)
        assert cfg.model_hidden == (6,)
        assert cfg.train_epochs == 3
        assert cfg.train_tau == 0.1
        # untouched keys keep their defaults
        assert cfg.train_optimizer == "adam"
        assert cfg.output_dir == "out"

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(ConfigError, match=r"unknown section \[nonsense\]"):
            load_run_config(p)

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nlearningrate = 0.1\n")
        with pytest.raises(ConfigError, match="unknown key 'learningrate'"):
            load_run_config(p)

    def test_keys_are_case_sensitive(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nEpochs = 5\n")
        with pytest.raises(ConfigError, match="unknown key 'Epochs'"):
            load_run_config(p)

    def test_bad_value_reports_location(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nepochs = lots\n")
        with pytest.raises(ConfigError, match="bad value for train.epochs"):
            load_run_config(p)

    def test_bad_choice_rejected(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[model]\nactivation = swish\n")
        with pytest.raises(ConfigError, match="must be one of"):
            load_run_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.ini")

    def test_int_tuple_parsing(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[model]\nhidden = 10, 20,30\n\n[train]\nlr_decay_epochs =\n")
        cfg = load_run_config(p)
        assert cfg.model_hidden == (10, 20, 30)
        assert cfg.train_lr_decay_epochs == ()

    def test_backend_aliases(self):
        assert resolve_backend("zono") == "zonotope_full"
        assert resolve_backend("zono-int-err") == "zonotope_interval_errors"
        assert resolve_backend("ibp") == "ibp"
        assert resolve_backend("zonotope_full") == "zonotope_full"
        with pytest.raises(ConfigError, match="unknown backend"):
            resolve_backend("octagon")

    def test_backend_alias_in_file(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nbackend = zono-int-err\n")
        assert load_run_config(p).train_backend == "zonotope_interval_errors"


class TestTrainCommand:
    def test_writes_model_metrics_summary(self, base_config, tmp_path):
        out = tmp_path / "out"
        assert main(["train", "--config", str(base_config),
                     "--out", str(out)]) == 0
        net = load_network(out / "model.net")
        assert net.input_dim == 2
        assert net.output_dim == 2

        rows = read_csv(out / "metrics.csv")
        assert len(rows) == 3
        assert list(rows[0]) == ["epoch", "epsilon", "tau", "learning_rate",
                                 "set_loss", "f_radius", "train_accuracy"]
        assert [r["epoch"] for r in rows] == ["1", "2", "3"]
        assert float(rows[-1]["f_radius"]) > 0.0

        summary = read_json(out / "summary.json")
        assert set(summary) == {"clean", "falsified", "fast_verified"}
        assert summary["falsified"] <= summary["clean"]

    def test_byte_identical_reruns(self, base_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(base_config), "--out", str(a)]) == 0
        assert main(["train", "--config", str(base_config), "--out", str(b)]) == 0
        for name in ("model.net", "metrics.csv", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_flag_changes_model(self, base_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", str(base_config), "--out", str(a)])
        main(["train", "--config", str(base_config), "--out", str(b),
              "--seed", "9"])
        assert (a / "model.net").read_bytes() != (b / "model.net").read_bytes()

    def test_csv_uses_lf_line_endings(self, base_config, tmp_path):
        out = tmp_path / "out"
        main(["train", "--config", str(base_config), "--out", str(out)])
        raw = (out / "metrics.csv").read_bytes()
        assert b"\r" not in raw
        assert raw.endswith(b"\n")

    def test_holdout_fraction_splits_summary_data(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text(BASE_INI + "holdout_fraction = 0.25\n")
        out = tmp_path / "out"
        assert main(["train", "--config", str(p), "--out", str(out)]) == 0
        # 15 of the 20 points remain for training
        rows = read_csv(out / "metrics.csv")
        assert rows  # trained at all; accuracy is over the training part
        assert read_json(out / "summary.json")["clean"] >= 0.0

    def test_divergence_exits_3(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nepochs = 2\nbatch_size = 10\noptimizer = sgd\n"
                     "learning_rate = 1e200\ngrad_clip_norm = 1e300\n")
        assert main(["train", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 3

    def test_invalid_train_parameter_exits_2(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nepochs = -3\n")
        assert main(["train", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 2

    def test_unknown_config_key_exits_2(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nmomentum = 0.9\n")
        assert main(["train", "--config", str(p)]) == 2

    def test_missing_mnist_paths_exit_2(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[dataset]\nkind = mnist\n")
        assert main(["train", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 2


@pytest.fixture
def trained(base_config, tmp_path):
    out = tmp_path / "trained"
    assert main(["train", "--config", str(base_config), "--out", str(out)]) == 0
    return base_config, out / "model.net"


class TestEvalVerifyCommands:
    def test_eval_predictions(self, trained, tmp_path):
        config, model = trained
        out = tmp_path / "eval"
        assert main(["eval", "--config", str(config), "--model", str(model),
                     "--out", str(out)]) == 0
        rows = read_csv(out / "predictions.csv")
        assert len(rows) == 20
        acc = np.mean([r["correct"] == "1" for r in rows])
        assert read_json(out / "summary.json") == {"clean": pytest.approx(acc)}

    def test_verify_verdicts_and_summary(self, trained, tmp_path):
        config, model = trained
        out = tmp_path / "verify"
        assert main(["verify", "--config", str(config), "--model", str(model),
                     "--out", str(out)]) == 0
        rows = read_csv(out / "verdicts.csv")
        assert list(rows[0]) == ["index", "label", "predicted", "verdict"]
        assert len(rows) == 20
        assert all(r["verdict"] in ("Verified", "Falsified", "Unknown")
                   for r in rows)
        summary = read_json(out / "summary.json")
        assert set(summary) == {"clean", "falsified", "fast_verified"}
        verified = np.mean([r["verdict"] == "Verified" for r in rows])
        assert summary["fast_verified"] == pytest.approx(verified)

    def test_verify_epsilon_flag_wins(self, trained, tmp_path):
        config, model = trained
        big, small = tmp_path / "big", tmp_path / "small"
        main(["verify", "--config", str(config), "--model", str(model),
              "--out", str(small), "--epsilon", "0.0001"])
        main(["verify", "--config", str(config), "--model", str(model),
              "--out", str(big), "--epsilon", "0.5"])
        s = read_json(small / "summary.json")
        b = read_json(big / "summary.json")
        assert s["fast_verified"] >= b["fast_verified"]
        assert b["fast_verified"] == 0.0

    def test_verify_backend_flag(self, trained, tmp_path):
        config, model = trained
        zono, ibp = tmp_path / "zono", tmp_path / "ibp"
        main(["verify", "--config", str(config), "--model", str(model),
              "--out", str(zono), "--backend", "zono"])
        main(["verify", "--config", str(config), "--model", str(model),
              "--out", str(ibp), "--backend", "ibp"])
        assert read_json(ibp / "summary.json")["fast_verified"] <= \
            read_json(zono / "summary.json")["fast_verified"]

    def test_model_dataset_mismatch_exits_2(self, trained, tmp_path):
        from setnn.network import Linear, Network, save_network
        config, _ = trained
        bad = tmp_path / "bad.net"
        save_network(Network([Linear(np.eye(5), np.zeros(5))]), bad)
        assert main(["verify", "--config", str(config), "--model", str(bad),
                     "--out", str(tmp_path / "o")]) == 2

    def test_missing_model_exits_2(self, trained, tmp_path):
        config, _ = trained
        assert main(["verify", "--config", str(config),
                     "--out", str(tmp_path / "o")]) == 2


class TestAttackCommand:
    def test_attack_csv(self, trained, tmp_path):
        config, model = trained
        out = tmp_path / "attack"
        assert main(["attack", "--config", str(config), "--model", str(model),
                     "--out", str(out), "--epsilon", "0.1"]) == 0
        rows = read_csv(out / "attacks.csv")
        assert len(rows) == 20
        rate = np.mean([r["success"] == "1" for r in rows])
        assert read_json(out / "summary.json")["success_rate"] == \
            pytest.approx(rate)

    def test_zero_epsilon_attack_only_hits_misclassified(self, trained, tmp_path):
        config, model = trained
        out = tmp_path / "attack0"
        main(["attack", "--config", str(config), "--model", str(model),
              "--out", str(out), "--epsilon", "0.0"])
        for row in read_csv(out / "attacks.csv"):
            # with no perturbation budget the only "successes" are inputs
            # that were already misclassified
            if row["success"] == "1":
                assert row["predicted"] != row["label"]
            assert row["adversarial_predicted"] == row["predicted"]


class TestMaxRadiusCommand:
    def test_radii_csv_and_bracketing(self, trained, tmp_path):
        config, model = trained
        out = tmp_path / "radius"
        assert main(["max-radius", "--config", str(config),
                     "--model", str(model), "--out", str(out),
                     "--epsilon", "0.2"]) == 0
        rows = read_csv(out / "radii.csv")
        assert len(rows) == 20
        radii = [float(r["radius"]) for r in rows]
        summary = read_json(out / "summary.json")
        assert summary["mean"] == pytest.approx(np.mean(radii))
        assert summary["std"] == pytest.approx(np.std(radii))

        from setnn.data import synthetic_2d
        net = load_network(model)
        ds = synthetic_2d()
        res = 0.2 / 2**10
        for row in rows[:5]:
            i, r = int(row["index"]), float(row["radius"])
            if r > 0.0:
                assert verify_robust(net, ds.inputs[i], int(ds.labels[i]), r)
            if r < 0.2:
                assert not verify_robust(
                    net, ds.inputs[i], int(ds.labels[i]), r + 2 * res)


class TestCompareEnclosuresCommand:
    def test_dominance_over_grid(self, tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare-enclosures", "--out", str(out)]) == 0
        rows = read_csv(out / "enclosures.csv")
        assert list(rows[0]) == ["l", "u", "kind", "area_ours", "area_singh"]
        assert {r["kind"] for r in rows} == {"tanh", "sigmoid"}
        for r in rows:
            assert float(r["area_ours"]) <= float(r["area_singh"]) + 1e-12
            if r["l"] == r["u"]:
                assert float(r["area_ours"]) == 0.0
                assert float(r["area_singh"]) == 0.0

    def test_hand_computed_tanh_pair(self, tmp_path):
        # default grid includes [-1, 1]
        out = tmp_path / "cmp"
        main(["compare-enclosures", "--out", str(out)])
        row = next(r for r in read_csv(out / "enclosures.csv")
                   if r["kind"] == "tanh"
                   and float(r["l"]) == -1.0 and float(r["u"]) == 1.0)
        assert float(row["area_ours"]) == pytest.approx(0.327020, abs=1e-4)
        assert float(row["area_singh"]) == pytest.approx(1.366480, abs=1e-4)

    def test_custom_grid(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[compare]\nkinds = tanh\nlo = -2\nhi = 2\nsteps = 5\n")
        out = tmp_path / "cmp"
        assert main(["compare-enclosures", "--config", str(p),
                     "--out", str(out)]) == 0
        rows = read_csv(out / "enclosures.csv")
        assert len(rows) == 15  # 5 choose 2 pairs plus 5 degenerate rows
        assert {r["kind"] for r in rows} == {"tanh"}

    def test_relu_kind_rejected(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[compare]\nkinds = relu\n")
        assert main(["compare-enclosures", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 2
