import json

import jsonschema
import numpy as np
import pytest

from lcva.cli import main
from lcva.config import apply_overrides, load_config
from lcva.data import load_units_csv
from lcva.errors import UsageError
from lcva.metrics import MetricsReport, report_schema

from .oracles import normal_equations

SMALL = ["--set", 'data.synthetic={"n_units": 100, "feature_dim": 4}']


def run(*argv):
    return main([str(a) for a in argv])


class TestConfig:
    def test_precedence(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 3, "lcva": {"epochs": 5, "latent_dim": 4}}))
        cfg = load_config(path, ["lcva.epochs=9"], seed=11)
        assert cfg.seed == 11
        assert cfg.lcva == {"epochs": 9, "latent_dim": 4}
        assert cfg.split.train_fraction == 0.8

    def test_override_values(self):
        doc = apply_overrides({}, ["a.b=3", "a.c=text", "d=[1, 2]", "e=true"])
        assert doc == {"a": {"b": 3, "c": "text"}, "d": [1, 2], "e": True}

    @pytest.mark.parametrize("override", ["colour=red", "lcva.epochs=-1", "forest.depth=3",
                                          "estimator=tarnet", "split.train_fraction=1.5",
                                          'data.synthetic={"n_units": 1}', "metrics=[\"auc\"]"])
    def test_rejected(self, override):
        with pytest.raises(UsageError):
            load_config(None, [override])

    def test_bad_override_syntax(self):
        with pytest.raises(UsageError, match="KEY=VALUE"):
            load_config(None, ["novalue"])


class TestSynth:
    def test_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert run("synth", "--seed", 7, "--out", tmp_path / d,
                       "--set", 'data.synthetic={"n_units": 100}') == 0
        for name in ("units.csv", "pairs.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_gamma_zero_manifest(self, tmp_path):
        assert run("synth", "--out", tmp_path, "--set",
                   'data.synthetic={"n_units": 80, "gamma": 0, "tau": 1.5}') == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["true_ate"] == pytest.approx(1.5, abs=1e-12)
        assert set(manifest["files"]) == {"units.csv", "pairs.csv"}

    def test_unwritable_out(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run("synth", "--out", blocker / "sub", *SMALL) == 3


class TestTrainEval:
    def test_epochs_zero(self, tmp_path):
        assert run("train", "--out", tmp_path, *SMALL, "--set", "lcva.epochs=0",
                   "--set", "lcva.hidden_dim=4") == 0
        ckpt = json.loads((tmp_path / "model.json").read_text())
        assert ckpt["kind"] == "lcva"
        assert json.loads((tmp_path / "trace.json").read_text())["objective"] == []

    def test_same_config_same_checkpoint(self, tmp_path):
        for d in ("a", "b"):
            assert run("train", "--out", tmp_path / d, *SMALL, "--set", "lcva.epochs=2",
                       "--set", "lcva.hidden_dim=8") == 0
        assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()

    def test_ols1_coefficients(self, tmp_path):
        rng = np.random.default_rng(0)
        n, d = 60, 2
        X = rng.normal(size=(n, d))
        t = rng.integers(0, 2, n).astype(float)
        peer = (np.arange(n) + 1) % n
        y = 3 + 2 * t + t[peer] + X @ np.array([0.5, -1.5])
        lines = ["id,t,y,f0,f1"] + [f"u{i},{int(t[i])},{float(y[i])!r},{float(X[i, 0])!r},{float(X[i, 1])!r}" for i in range(n)]
        (tmp_path / "units.csv").write_text("\n".join(lines) + "\n")
        (tmp_path / "pairs.csv").write_text(
            "ego_id,peer_id\n" + "".join(f"u{i},u{peer[i]}\n" for i in range(n)))
        assert run("train", "--out", tmp_path / "run", "--set", "estimator=ols1",
                   "--set", f"data.units_csv={tmp_path / 'units.csv'}",
                   "--set", f"data.pairs_csv={tmp_path / 'pairs.csv'}") == 0
        state = json.loads((tmp_path / "run" / "model.json").read_text())["state"]["model"]
        # the oracle refits on the same training egos
        from lcva.cli import build_dataset
        from lcva.data import split_pairs
        cfg = load_config(None, [f"data.units_csv={tmp_path / 'units.csv'}",
                                 f"data.pairs_csv={tmp_path / 'pairs.csv'}"])
        train, _ = split_pairs(build_dataset(cfg), 0.8, 0)
        b = train.pair_batch()
        c0, coefs = normal_equations(np.column_stack([b.x_u, b.t_u, b.t_v]).tolist(), b.y_u.tolist())
        assert state["intercept"] == pytest.approx(c0, abs=1e-8)
        np.testing.assert_allclose(state["coefficients"], coefs, atol=1e-8)
        np.testing.assert_allclose(state["coefficients"], [0.5, -1.5, 2.0, 1.0], atol=1e-8)

    def test_eval_report_validates(self, tmp_path):
        assert run("train", "--out", tmp_path, *SMALL, "--set", "estimator=ols2") == 0
        assert run("eval", "--out", tmp_path, *SMALL, "--set", "estimator=ols2",
                   "--checkpoint", tmp_path / "model.json") == 0
        doc = json.loads((tmp_path / "report.json").read_text())
        jsonschema.validate(doc, report_schema())
        assert doc["model"] == "OLS2" and doc["pehe"] is not None
        assert (tmp_path / "report.txt").read_text().splitlines()[1].split() == ["Models", "eps_ATE", "PEHE"]

    def test_checkpoint_estimator_mismatch(self, tmp_path):
        assert run("train", "--out", tmp_path, *SMALL, "--set", "estimator=ols1") == 0
        assert run("eval", "--out", tmp_path, *SMALL, "--checkpoint", tmp_path / "model.json") == 2

    def test_metric_without_ground_truth(self, tmp_path, capsys):
        assert run("train", "--out", tmp_path, *SMALL, "--set", "estimator=ols1") == 0
        code = run("eval", "--out", tmp_path, *SMALL, "--set", "estimator=ols1",
                   "--set", 'metrics=["policy_risk"]', "--checkpoint", tmp_path / "model.json")
        assert code == 2
        assert "policy_risk" in capsys.readouterr().err

    def test_bad_csv_exit_code(self, tmp_path):
        (tmp_path / "units.csv").write_text("id,t,y,f0\na,1,oops,0.5\n")
        code = run("train", "--out", tmp_path, "--set", f"data.units_csv={tmp_path / 'units.csv'}")
        assert code == 3


class TestOracleStub:
    def test_perfect_scores(self):
        from lcva.data import SyntheticSpec, generate_synthetic_spillover
        from lcva.estimators import OracleEstimator
        from lcva.pipeline import evaluate

        ds = generate_synthetic_spillover(SyntheticSpec(n_units=120, seed=3))
        report = evaluate(OracleEstimator(), ds)
        assert report.eps_ate == 0.0 and report.pehe == 0.0


class TestSchema:
    def test_published_schema_matches_model(self):
        published = report_schema()
        generated = MetricsReport.model_json_schema()
        assert {k: v for k, v in published.items() if k != "$schema"} == generated

    def test_rejects_bad_report(self):
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate({"model": "X", "eps_ate": -1.0}, report_schema())


def test_bench_layout(tmp_path, capsys):
    assert run("bench", "--out", tmp_path, *SMALL, "--set", "lcva.epochs=1",
               "--set", "forest.tree_count=3") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1].split() == ["Models", "eps_ATE", "PEHE"]
    assert [line.split()[0] for line in out[3:8]] == ["LCVA", "CEVAE", "OLS1", "OLS2", "RF"]
    docs = json.loads((tmp_path / "bench.json").read_text())
    assert len(docs) == 5
    for doc in docs:
        jsonschema.validate(doc, report_schema())


def test_synth_jobs_shape(tmp_path):
    spec = '{"n_units": 3212, "n_treated": 297, "randomized_units": 722}'
    assert run("synth", "--out", tmp_path, "--set", f"data.synthetic={spec}") == 0
    units = load_units_csv(tmp_path / "units.csv")
    assert sum(u.treatment for u in units) == 297
    assert len(units) - 297 == 2915
    assert len(units[0].covariates) == 10
