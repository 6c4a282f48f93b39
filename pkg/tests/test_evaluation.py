import json

import pytest

from conftest import tiny_config, toy_cases
from speechmark import evaluation
from speechmark.corpus import Label
from speechmark.errors import ConfigurationError, LeakageError
from speechmark.evaluation import (
    Confusion,
    LeakageGuard,
    grid_cells,
    format_table,
    run_ablation,
    run_cv,
    write_reports,
)


class TestMetrics:
    def test_worked_example(self):
        m = Confusion(tp=31, tn=30, fp=5, fn=6).metrics()
        assert round(m["accuracy"], 1) == 84.7
        p_dem, p_con = 31 / 36, 30 / 36
        r_dem, r_con = 31 / 37, 30 / 35
        assert m["precision"] == pytest.approx(50 * (p_dem + p_con))
        assert m["recall"] == pytest.approx(50 * (r_dem + r_con))
        f1 = [2 * p * r / (p + r) for p, r in ((p_dem, r_dem), (p_con, r_con))]
        assert m["f1"] == pytest.approx(50 * sum(f1))

    def test_from_predictions(self):
        truth = [Label.DEMENTIA, Label.DEMENTIA, Label.CONTROL, Label.CONTROL]
        pred = [Label.DEMENTIA, Label.CONTROL, Label.DEMENTIA, Label.CONTROL]
        assert Confusion.from_predictions(truth, pred) == Confusion(1, 1, 1, 1)

    def test_bounds(self):
        for conf in (Confusion(5, 0, 0, 0), Confusion(0, 0, 3, 4), Confusion(2, 3, 1, 0)):
            assert all(0.0 <= v <= 100.0 for v in conf.metrics().values())


class TestLeakage:
    def test_guard(self):
        cases = toy_cases(10)
        guard = LeakageGuard(0, [cases[0].id])
        guard.check("ok", cases[1:])
        with pytest.raises(LeakageError, match="svm"):
            guard.check("svm", cases)

    def test_split_fault(self, monkeypatch):
        original = evaluation.split_fold

        def leaky(cases, fold):
            train, test = original(cases, fold)
            return train + test[:1], test

        monkeypatch.setattr(evaluation, "split_fold", leaky)
        with pytest.raises(LeakageError):
            run_cv(toy_cases(), tiny_config())

    @pytest.mark.parametrize("block", ["perplexity_block", "ivector_block", "xvector_block"])
    def test_stage_fault(self, monkeypatch, block):
        original = getattr(evaluation, block)

        def leaky(train, test, *args, **kwargs):
            return original(list(train) + list(test[-1:]), test, *args, **kwargs)

        monkeypatch.setattr(evaluation, block, leaky)
        with pytest.raises(LeakageError):
            run_cv(toy_cases(), tiny_config())


class TestRunCv:
    def test_separable(self, small_cases):
        report = run_cv(small_cases, tiny_config())
        assert report.accuracy >= 90.0
        assert report.confusion.total == len(small_cases)
        assert len(report.per_fold) == 5
        assert set(report.predictions) == {c.id for c in small_cases}

    def test_random_labels_near_chance(self):
        cases = toy_cases(200, seed=1, informative=False)
        report = run_cv(cases, tiny_config(blocks={"xvector": False}))
        assert 40.0 <= report.accuracy <= 60.0

    def test_deterministic(self, small_cases):
        a = run_cv(small_cases, tiny_config())
        b = run_cv(small_cases, tiny_config())
        assert a.to_json() == b.to_json()

    def test_no_blocks(self, small_cases):
        with pytest.raises(ConfigurationError):
            run_cv(small_cases, tiny_config(blocks={"perplexity": False, "ivector": False, "xvector": False}))

    def test_folds_must_fit(self, small_cases):
        with pytest.raises(ConfigurationError):
            run_cv(small_cases, tiny_config(cv={"k_folds": 3}))


class TestAblation:
    @pytest.mark.parametrize("grid,rows", [("table3", 6), ("table4", 16), ("table5", 7)])
    def test_grid_sizes(self, grid, rows):
        assert len(list(grid_cells(tiny_config(), grid))) == rows

    def test_unknown_grid(self):
        with pytest.raises(ConfigurationError):
            list(grid_cells(tiny_config(), "table9"))

    def test_table5_rows_and_reports(self, small_cases, tmp_path):
        reports = run_ablation(small_cases, tiny_config(), grids=("table5",))
        assert [r.params["columns"] for r in reports][-1] == {"X-vector": "Yes", "I-vector": "Yes", "Perplexity": "Yes"}
        assert len(reports) == 7
        text = format_table(reports)
        assert text.splitlines()[0].split() == ["X-vector", "I-vector", "Perplexity", "|", "Accuracy",
                                                "Precision", "Recall", "F1-Score"]
        jsonl, table = write_reports(reports, tmp_path, "ablation")
        records = [json.loads(line) for line in jsonl.read_text().splitlines()]
        assert len(records) == 7
        for rec in records:
            conf = Confusion(**rec["confusion"])
            assert rec["metrics"]["accuracy"] == pytest.approx(conf.metrics()["accuracy"], abs=1e-6)
        assert table.read_text().count("\n") >= 9

    def test_small_grids(self, small_cases):
        cfg = tiny_config(ablation={"ubm_grid": (2, 4), "rank_grid": (2, 3), "ngram_orders": (2, 3)})
        reports = run_ablation(small_cases, cfg, grids=("table3", "table4"))
        assert len(reports) == 4 + 4
        assert len({r.fingerprint for r in reports}) == 8
