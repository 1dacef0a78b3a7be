import json

import numpy as np
import pytest

from certunlearn.errors import InvalidArgument
from certunlearn.evaluation import (
    AblationRow,
    ExperimentConfig,
    UtilityReport,
    ablation_config,
    ablation_lambda,
    approximation_error,
    budget_sweep,
    prepare,
    relearn_comparison,
    relearn_time,
    sequential_trace,
    sweep_summary,
    timed_comparison,
    utility_report,
    write_rows,
)
from certunlearn.training import TrainConfig, train_pgd
from certunlearn.unlearning import Budget, UnlearnConfig, unlearn_sequential, unlearn_single

SMALL = {
    "data": {"kind": "blobs", "n": 260, "dim": 4, "classes": 3, "separation": 3.0, "seed": 0},
    "n_test": 60,
    "hidden": [6],
    "train": {"C": 10.0, "epochs": 15},
    "unlearn": {"s": 30},
    "n_u": 5,
}


@pytest.fixture(scope="module")
def setup():
    return prepare(ExperimentConfig.from_json(SMALL))


@pytest.fixture(scope="module")
def trained(setup):
    return train_pgd(setup.model, setup.train, setup.exp.train)


class TestConfig:
    def test_json_round_trip_and_hash(self):
        exp = ExperimentConfig.from_json(SMALL)
        again = ExperimentConfig.from_json(json.loads(json.dumps(exp.to_json())))
        assert again == exp and again.config_hash() == exp.config_hash()
        assert len(exp.config_hash()) == 12
        assert exp.unlearn.C == exp.train.C == 10.0

    def test_hash_changes_with_content(self):
        other = ExperimentConfig.from_json({**SMALL, "n_u": 6})
        assert other.config_hash() != ExperimentConfig.from_json(SMALL).config_hash()

    def test_mismatched_c_rejected(self):
        with pytest.raises(InvalidArgument):
            ExperimentConfig(train=TrainConfig(C=5.0), unlearn=UnlearnConfig(C=6.0))

    def test_prepare_shapes(self, setup):
        assert (len(setup.train), len(setup.test)) == (200, 60)
        assert setup.model.spec.layer_dims == (4, 6, 3)
        assert setup.split.n_u == 5


def test_approximation_error():
    assert approximation_error(np.zeros(3), np.array([3.0, 4.0, 0.0])) == 5.0
    with pytest.raises(InvalidArgument):
        approximation_error(np.zeros(3), np.zeros(4))


class TestUtility:
    def test_report_fields(self, setup, trained):
        rep = utility_report(setup.model, trained.w, setup.train, setup.split, setup.test)
        assert rep.dataset_hash == setup.train.hash_hex and rep.test_hash == setup.test.hash_hex
        pred = setup.model.predict(trained.w, setup.test.batch())
        assert rep.f1_test == pytest.approx(np.mean(pred == setup.test.labels))

    def test_range_checked(self):
        with pytest.raises(InvalidArgument):
            UtilityReport(1.2, 0.5, 0.5, "a", "b")


class TestRelearn:
    def test_already_met_and_unreachable(self, setup, trained):
        cfg = setup.exp.train
        assert relearn_time(setup.model, trained.w, setup.train, setup.split, 1e9, cfg, 3) == 0
        assert relearn_time(setup.model, trained.w, setup.train, setup.split, 0.0, cfg, 3) is None

    def test_negative_threshold_rejected(self, setup, trained):
        with pytest.raises(InvalidArgument):
            relearn_time(setup.model, trained.w, setup.train, setup.split, -1.0, setup.exp.train, 3)

    def test_counts_epochs_from_scratch(self, setup, trained):
        w0 = np.zeros(setup.model.dim)
        forget = setup.train.batch(setup.split.unlearn_indices)
        target = setup.model.loss(w0, forget) * 0.5
        epochs = relearn_time(setup.model, w0, setup.train, setup.split, target, setup.exp.train, 50)
        assert epochs is not None and epochs >= 1

    def test_comparison_keys(self, setup, trained):
        res = unlearn_single(setup.model, trained, setup.train, setup.split, setup.exp.unlearn, Budget(1.0, 0.1))
        out = relearn_comparison(setup, res, trained)
        assert set(out) == {"threshold", "original", "retrained", "w_tilde", "w_minus"}
        assert out["retrained"] == 0


class TestAblation:
    def test_config_raises_h(self):
        cfg = ablation_config(UnlearnConfig(lam=1.0, H=10.0), 1e3)
        assert (cfg.lam, cfg.H) == (1e3, 1010.0)

    def test_rows(self, setup):
        rows = ablation_lambda(setup, [10.0, 1e3])
        assert [r.lam for r in rows] == [10.0, 1e3]
        assert all(isinstance(r, AblationRow) for r in rows)
        assert rows[0].err_bound > rows[1].err_bound
        assert all(r.approx_err >= 0 and r.approx_err_unconstrained >= 0 for r in rows)

    def test_empty_grid(self, setup):
        with pytest.raises(InvalidArgument):
            ablation_lambda(setup, [], pairs={})


class TestSweep:
    def test_row_count_and_common_noise(self, setup, trained):
        rows = budget_sweep(setup, [10.0, 100.0], 0.1, [10.0], trained, repeats=3)
        assert len(rows) == 6
        a, b = rows[0], rows[3]
        assert a["repeat"] == b["repeat"] == 0
        assert b["sigma"] == pytest.approx(a["sigma"] / 10, rel=1e-12)
        again = budget_sweep(setup, [10.0, 100.0], 0.1, [10.0], trained, repeats=3)
        assert rows == again

    def test_grid_must_ascend(self, setup, trained):
        with pytest.raises(InvalidArgument):
            budget_sweep(setup, [10.0, 5.0], 0.1, None, trained)

    def test_summary(self):
        rows = [
            {"lam": 1.0, "epsilon": e, "f1_test": f}
            for e, f in [(1.0, 0.2), (1.0, 0.4), (2.0, 0.5), (3.0, 0.9)]
        ]
        s = sweep_summary(rows)[1.0]
        assert s["mean_f1"] == pytest.approx([0.3, 0.5, 0.9])
        assert s["spearman"] == pytest.approx(1.0)


def test_sequential_trace(setup, trained):
    reqs = [[0, 1], [2]]
    res = unlearn_sequential(setup.model, trained, setup.train, reqs, setup.exp.unlearn, Budget(1.0, 0.1))
    rows = sequential_trace(setup.model, res, setup.test)
    assert [r["step"] for r in rows] == [1, 2]
    assert all("w" not in r and 0 <= r["f1_test"] <= 1 for r in rows)
    single = unlearn_single(setup.model, trained, setup.train, setup.split, setup.exp.unlearn, Budget(1.0, 0.1))
    with pytest.raises(InvalidArgument):
        sequential_trace(setup.model, single, setup.test)


def test_timed_comparison(setup):
    out = timed_comparison(setup, repeats=1)
    assert out["unlearn_seconds"] > 0 and out["retrain_seconds"] > 0
    assert out["speedup"] == pytest.approx(out["retrain_seconds"] / out["unlearn_seconds"])


def test_write_rows(tmp_path):
    path = write_rows([AblationRow(1.0, 2.0, 0.1, 0.2)], tmp_path / "x.csv")
    lines = path.read_text().splitlines()
    assert lines == ["lam,err_bound,approx_err,approx_err_unconstrained", "1.0,2.0,0.1,0.2"]
