import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conset import __version__
from conset.cli import main


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def tiny(tmp_path):
    """Three respondents over options a, b, c with {a+b} supplied as a category."""
    (tmp_path / "survey.csv").write_text(
        "consideration_set,region\na,West\nc,East\na,West\n", encoding="utf-8")
    (tmp_path / "analysis.json").write_text(json.dumps({
        "options": ["a", "b", "c"],
        "scheme": {"region": {"type": "indicator", "one_levels": ["West"], "name": "west"}},
        "sets": ["a+b"],
    }), encoding="utf-8")
    return tmp_path


@pytest.fixture(scope="module")
def logit_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("logit")
    assert main(["simulate", "--config", "logit_recovery", "--n", "3000", "--out-dir", str(out)]) == 0
    return out


def args_for(run, *extra):
    return ["--input", str(run / "survey.csv"), "--config", str(run / "analysis.json"),
            "--out-dir", str(run), *extra]


class TestSummarize:
    def test_three_rows(self, tiny):
        assert main(["summarize", *args_for(tiny)]) == 0
        rows = read_csv(tiny / "counts.csv")
        assert rows[0] == ["category", "count", "proportion"]
        assert [(r[0], r[1], float(r[2])) for r in rows[1:]] == [
            ("a", "2", 2 / 3), ("b", "0", 0.0), ("c", "1", 1 / 3), ("a+b", "0", 0.0)]
        meta = json.loads((tiny / "counts.csv.meta.json").read_text())
        assert meta["version"] == __version__ and meta["seed"] == 0
        assert len(meta["config_hash"]) == 64 and "input_sha256" in meta

    def test_usage_errors(self, tiny):
        assert main(["summarize", "--input", str(tiny / "missing.csv"),
                     "--config", str(tiny / "analysis.json")]) == 1
        assert main(["summarize", "--input", str(tiny / "survey.csv")]) == 1
        assert main(["frobnicate"]) == 1
        assert main(["fit", *args_for(tiny), "--lambda", "lots"]) == 1

    def test_data_error(self, tiny, capsys):
        (tiny / "survey.csv").write_text("consideration_set,region\na,West\nXYZ,East\n")
        assert main(["summarize", *args_for(tiny)]) == 2
        err = capsys.readouterr().err
        assert "XYZ" in err and "line 3" in err

    def test_drop_policy_error(self, tiny):
        (tiny / "survey.csv").write_text("consideration_set,region\na,West\nb+c,East\n")
        assert main(["summarize", *args_for(tiny, "--drop-policy", "error")]) == 2
        assert main(["summarize", *args_for(tiny)]) == 0
        assert json.loads((tiny / "summary.json").read_text())["dropped_rows"] == 1


class TestFit:
    def test_huge_lambda_zeroes(self, logit_run):
        assert main(["fit", *args_for(logit_run, "--lambda", "1e9")]) == 0
        rows = read_csv(logit_run / "coefficients.csv")
        assert rows[0] == ["covariate", "a", "b", "c", "d"]
        assert rows[1][0] == "(Intercept)"
        assert all(float(v) == 0.0 for r in rows[2:] for v in r[1:])

    def test_zero_lambda_near_truth(self, logit_run):
        assert main(["fit", *args_for(logit_run, "--lambda", "0")]) == 0
        beta = np.array([[float(v) for v in r[1:]] for r in read_csv(logit_run / "coefficients.csv")[1:]]).T
        truth = np.array(json.loads((logit_run / "truth.json").read_text())["true_beta"])
        assert np.max(np.abs(beta - truth)) < 0.25

    def test_nonconvergence_exit(self, logit_run):
        assert main(["fit", *args_for(logit_run, "--lambda", "0", "--max-iter", "1")]) == 3
        assert json.loads((logit_run / "fit.json").read_text())["converged"] is False

    def test_cv(self, logit_run):
        assert main(["cv", *args_for(logit_run, "--folds", "3", "--n-lambda", "5")]) == 0
        cv = json.loads((logit_run / "cv.json").read_text())
        assert cv["lambda_1se"] >= cv["lambda_min"]
        assert len(read_csv(logit_run / "cv_path.csv")) == 6
        assert len(read_csv(logit_run / "folds.csv")) == 3001


class TestExplainCluster:
    def test_explain(self, logit_run):
        code = main(["explain", *args_for(logit_run, "--positive", "a", "--negative", "b",
                                          "--trees", "20", "--background", "sample:30")])
        assert code == 0
        shap = read_csv(logit_run / "shap.csv")
        assert len(shap[0]) == 2 * 2 + 1
        model = json.loads((logit_run / "gbm_model.json").read_text())
        assert model["output"] == "log_odds" and len(model["trees"]) == 20
        info = json.loads((logit_run / "explain.json").read_text())
        assert sum(info["balance"]) == info["n_train"] + info["n_test"]

    def test_explain_bad_class(self, logit_run):
        assert main(["explain", *args_for(logit_run, "--positive", "a+b", "--negative", "b")]) == 2
        assert main(["explain", *args_for(logit_run, "--positive", "a")]) == 1

    def test_cluster(self, tmp_path, logit_run):
        small = tmp_path / "small"
        assert main(["simulate", "--config", "logit_recovery", "--n", "200", "--out-dir", str(small)]) == 0
        assert main(["cluster", *args_for(small, "--k", "3", "--trees", "10")]) == 0
        prof = read_csv(small / "profile.csv")
        assert prof[0][:2] == ["cluster", "size"] and len(prof) == 4
        assert all(abs(sum(map(float, r[2:])) - 1) < 1e-12 for r in prof[1:])
        assert len(read_csv(small / "assignment.csv")) == 201


def test_byte_identical(tmp_path):
    outs = []
    for name in ("r1", "r2"):
        d = tmp_path / name
        assert main(["simulate", "--config", "logit_recovery", "--n", "400", "--out-dir", str(d)]) == 0
        assert main(["fit", *args_for(d, "--folds", "3", "--n-lambda", "4", "--seed", "5")]) == 0
        assert main(["cluster", *args_for(d, "--trees", "5", "--seed", "5")]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0].keys() == outs[1].keys()
    assert outs[0] == outs[1]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "conset", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
