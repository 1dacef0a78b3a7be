import json

import numpy as np
import pytest

from certunlearn.checkpoint import load_checkpoint
from certunlearn.cli import UsageError, load_config, load_requests, load_split, main, validate_config
from certunlearn.errors import FormatError, IntegrityError

CONFIG = {
    "data": {"kind": "blobs", "n": 260, "dim": 4, "classes": 3, "separation": 3.0, "seed": 0},
    "n_test": 60,
    "hidden": [6],
    "train": {"C": 10.0, "epochs": 10},
    "unlearn": {"s": 20},
    "n_u": 5,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(CONFIG))
    assert main(["train", "--config", str(cfg), "--out-dir", str(root / "train")]) == 0
    return root, cfg, root / "train" / "model.cuw"


def _manifest(path):
    return json.loads((path / "manifest.json").read_text())


class TestConfigValidation:
    def test_missing_c_reports_pointer(self):
        bad = {**CONFIG, "train": {"epochs": 3}}
        with pytest.raises(UsageError, match="/train: 'C' is a required property"):
            validate_config(bad)

    def test_unknown_key(self):
        with pytest.raises(UsageError, match="Additional properties"):
            validate_config({**CONFIG, "colour": "red"})

    def test_c_mismatch(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({**CONFIG, "unlearn": {"C": 3.0}}))
        with pytest.raises(UsageError):
            load_config(p)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{")
        with pytest.raises(UsageError):
            load_config(p)


class TestInputs:
    def test_split_errors(self, tmp_path):
        with pytest.raises(IntegrityError):
            load_split(tmp_path / "none.json", 10)
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"n": 11, "unlearn_indices": [1]}))
        with pytest.raises(IntegrityError):
            load_split(p, 10)
        p.write_text(json.dumps({"rows": [1]}))
        with pytest.raises(FormatError):
            load_split(p, 10)

    def test_requests_both_shapes(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text("[[1, 2], [3]]")
        assert load_requests(p) == [[1, 2], [3]]
        p.write_text(json.dumps({"requests": [[4]]}))
        assert load_requests(p) == [[4]]


class TestCommands:
    def test_train_outputs_and_determinism(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        m = _manifest(root / "train")
        assert m["status"] == "ok" and m["command"] == "train"
        assert set(m["outputs"]) == {"checkpoint", "loss_trace"}
        assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "model.cuw").read_bytes() == ckpt.read_bytes()

    def test_unlearn_and_replay(self, workspace):
        root, cfg, ckpt = workspace
        out = root / "unlearn"
        assert main(["unlearn", "--config", str(cfg), "--out-dir", str(out), "--checkpoint", str(ckpt),
                     "--diagnostics"]) == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["mechanism"] == "classic" and cert["sigma"] > 0
        assert load_checkpoint(out / "unlearned.cuw").w.shape == load_checkpoint(ckpt).w.shape
        rp = root / "replay"
        assert main(["replay", "--config", str(cfg), "--out-dir", str(rp), "--checkpoint", str(ckpt),
                     "--certificate", str(out / "certificate.json")]) == 0
        assert _manifest(rp)["result"]["replayed"] is True

    def test_replay_detects_tampering(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        out = tmp_path / "u"
        main(["unlearn", "--config", str(cfg), "--out-dir", str(out), "--checkpoint", str(ckpt)])
        cert = json.loads((out / "certificate.json").read_text())
        cert["sigma"] *= 1.5
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(cert))
        code = main(["replay", "--config", str(cfg), "--out-dir", str(tmp_path / "r"), "--checkpoint", str(ckpt),
                     "--certificate", str(bad)])
        assert code == 3
        assert _manifest(tmp_path / "r")["error"]["type"] == "IntegrityError"

    def test_analytic_noise_is_smaller(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        sig = {}
        for mech in ("classic", "analytic"):
            out = tmp_path / mech
            main(["unlearn", "--config", str(cfg), "--out-dir", str(out), "--checkpoint", str(ckpt),
                  "--mechanism", mech])
            sig[mech] = json.loads((out / "certificate.json").read_text())["sigma"]
        assert sig["analytic"] < sig["classic"]

    def test_sigma_override(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        main(["unlearn", "--config", str(cfg), "--out-dir", str(tmp_path), "--checkpoint", str(ckpt),
              "--sigma-override", "25"])
        cert = json.loads((tmp_path / "certificate.json").read_text())
        assert cert["sigma"] == 25.0 and set(cert["implied_budgets"]) == {"classic", "analytic"}

    def test_sequential_group_privacy(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        reqs = tmp_path / "reqs.json"
        reqs.write_text(json.dumps([[i] for i in range(4)]))
        code = main(["sequential", "--config", str(cfg), "--out-dir", str(tmp_path), "--checkpoint", str(ckpt),
                     "--requests", str(reqs), "--group-privacy", "--budget-eps", "0.5"])
        assert code == 0
        m = _manifest(tmp_path)
        assert m["certificate"]["certified_budget"]["epsilon"] == pytest.approx(2.0)
        assert len(list(tmp_path.glob("trace-*.csv"))) == 1

    def test_overlapping_requests_exit_2(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        reqs = tmp_path / "reqs.json"
        reqs.write_text("[[1, 2], [2]]")
        code = main(["sequential", "--config", str(cfg), "--out-dir", str(tmp_path), "--checkpoint", str(ckpt),
                     "--requests", str(reqs)])
        assert code == 2
        assert "requests 0 and 1" in _manifest(tmp_path)["error"]["message"]

    def test_evaluate_with_relearn(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        code = main(["evaluate", "--config", str(cfg), "--out-dir", str(tmp_path), "--checkpoint", str(ckpt),
                     "--checkpoint", str(ckpt), "--relearn-threshold", "0"])
        assert code == 0
        rows = _manifest(tmp_path)["result"]
        assert len(rows) == 2 and rows[0]["relearn_epochs"] is None

    def test_ablate_and_sweep_row_counts(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        assert main(["ablate", "--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
        (csv_a,) = (tmp_path / "a").glob("ablation-*.csv")
        assert len(csv_a.read_text().splitlines()) == 1 + 4
        assert main(["sweep", "--config", str(cfg), "--out-dir", str(tmp_path / "s"), "--checkpoint", str(ckpt),
                     "--lambdas", "10"]) == 0
        (csv_s,) = (tmp_path / "s").glob("sweep-*.csv")
        assert len(csv_s.read_text().splitlines()) == 1 + 6 * 3

    def test_retrain_from_split_file(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        split = tmp_path / "split.json"
        split.write_text(json.dumps({"n": 200, "unlearn_indices": [0, 1, 2]}))
        assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path), "--split", str(split)]) == 0
        assert (tmp_path / "retrained.cuw").exists()


class TestExitCodes:
    def test_missing_split_file_exit_3(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        code = main(["unlearn", "--config", str(cfg), "--out-dir", str(tmp_path), "--checkpoint", str(ckpt),
                     "--split", str(tmp_path / "absent.json")])
        assert code == 3
        m = _manifest(tmp_path)
        assert m["status"] == "error" and m["error"]["type"] == "IntegrityError"

    def test_schema_error_exit_2(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({**CONFIG, "train": {"epochs": 1}}))
        assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
        assert "/train" in _manifest(tmp_path)["error"]["message"]

    def test_dataset_mismatch_exit_3(self, workspace, tmp_path):
        root, cfg, ckpt = workspace
        other = tmp_path / "c.json"
        other.write_text(json.dumps({**CONFIG, "data": {**CONFIG["data"], "seed": 9}}))
        code = main(["unlearn", "--config", str(other), "--out-dir", str(tmp_path), "--checkpoint", str(ckpt)])
        assert code == 3

    def test_divergence_exit_4(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            **CONFIG, "loss": "mean-squared-error",
            "train": {"C": 1e200, "epochs": 400, "learning_rate": 1e3, "momentum": 0.0, "batch_size": 200},
            "unlearn": {"C": 1e200},
        }))
        with np.errstate(all="ignore"):
            code = main(["train", "--config", str(cfg), "--out-dir", str(tmp_path)])
        assert code == 4
        assert "epoch" in _manifest(tmp_path)["error"]["message"]

    def test_argparse_error_exit_2(self):
        with pytest.raises(SystemExit) as info:
            main(["unlearn", "--config", "x"])
        assert info.value.code == 2
