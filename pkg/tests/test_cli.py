import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from attrprior.bundle import read_bundle
from attrprior.checkpoint import load_checkpoint
from attrprior.cli import gradcheck, main
from attrprior.pipeline import evaluate, fit, report_metrics
from attrprior.training import TrainConfig

TINY = {"hidden": 32, "embed": 16, "epochs_stage1": 4, "epochs_stage2": 4, "patience": 5}


def _sets(doc):
    out = []
    for k, v in doc.items():
        out += ["--set", f"{k}={v}"]
    return out


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--out", str(root / "data"), "--set", "noise=1.5",
                 "--set", "beta=0.6"]) == 0
    cfg = root / "cfg.yaml"
    cfg.write_text("".join(f"{k}: {v}\n" for k, v in TINY.items()))
    for run in ("r1", "r2"):
        assert main(["train", "--bundle", str(root / "data"), "--out", str(root / run),
                     "--config", str(cfg)]) == 0
    return root


def test_generate_writes_loadable_bundle(workdir):
    b = read_bundle(workdir / "data")
    assert b.space.n_pairs == 48
    assert json.loads((workdir / "data" / "synth.json").read_text())["spec"]["beta"] == 0.6


def test_train_outputs_and_determinism(workdir):
    r1, r2 = workdir / "r1", workdir / "r2"
    for name in ("model.ckpt", "trace.jsonl", "prior.json", "config.json"):
        assert (r1 / name).read_bytes() == (r2 / name).read_bytes(), name
    assert (r1 / "trace.png").stat().st_size > 0
    recs = [json.loads(line) for line in (r1 / "trace.jsonl").read_text().splitlines()]
    assert {r["stage"] for r in recs} == {"stage1", "stage2"}
    prior = json.loads((r1 / "prior.json").read_text())
    assert abs(sum(prior["k"].values()) - 1) < 1e-9


def test_eval_reports_are_deterministic(workdir):
    for out in ("e1", "e2"):
        assert main(["eval", "--checkpoint", str(workdir / "r1" / "model.ckpt"),
                     "--bundle", str(workdir / "data"), "--out", str(workdir / out)]) == 0
    for name in ("report.json", "curve.csv", "curve.png"):
        assert (workdir / "e1" / name).read_bytes() == (workdir / "e2" / name).read_bytes()
    rep = json.loads((workdir / "e1" / "report.json").read_text())
    assert 0 <= rep["auc"] <= rep["best_seen"] * rep["best_unseen"]
    with open(workdir / "e1" / "curve.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:3] == ["bias", "seen_acc", "unseen_acc"]


def test_no_inference_prior_only_changes_scoring(workdir):
    ckpt = workdir / "r1" / "model.ckpt"
    before = ckpt.read_bytes()
    assert main(["eval", "--checkpoint", str(ckpt), "--bundle", str(workdir / "data"),
                 "--out", str(workdir / "p0"), "--no-inference-prior", "--no-plots"]) == 0
    assert ckpt.read_bytes() == before
    p0 = json.loads((workdir / "p0" / "report.json").read_text())
    full = json.loads((workdir / "e1" / "report.json").read_text()) if (
        workdir / "e1").exists() else None
    assert p0["inference_prior"] is False
    if full is not None:
        assert full["checkpoint_sha256"] == p0["checkpoint_sha256"]


@pytest.mark.parametrize("mode", ["composition", "ensemble", "independent"])
def test_baseline_modes(workdir, mode):
    out = workdir / f"m_{mode}"
    assert main(["eval", "--checkpoint", str(workdir / "r1" / "model.ckpt"), "--bundle",
                 str(workdir / "data"), "--out", str(out), "--mode", mode, "--no-plots"]) == 0
    assert json.loads((out / "report.json").read_text())["mode"] == mode


def test_eval_refuses_other_space(workdir, tmp_path):
    assert main(["generate", "--out", str(tmp_path / "other"), "--seed", "7"]) == 0
    code = main(["eval", "--checkpoint", str(workdir / "r1" / "model.ckpt"),
                 "--bundle", str(tmp_path / "other"), "--out", str(tmp_path / "x")])
    assert code == 1


def test_config_bundle_mismatch_fails_before_training(workdir, tmp_path):
    code = main(["train", "--bundle", str(workdir / "data"), "--out", str(tmp_path / "t"),
                 "--set", "space_digest=deadbeef"])
    assert code == 1
    assert not (tmp_path / "t").exists()


@pytest.mark.parametrize("argv", [
    ["train", "--bundle", "/nonexistent", "--out", "x"],
    ["generate", "--out", "x", "--set", "betta=1"],
    ["generate", "--out", "x", "--set", "unseen_fraction=1.0"],
    ["train", "--bundle", "/nonexistent", "--out", "x", "--set", "lr=-1"],
])
def test_validation_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_sweep_single_cell_equals_train_eval(workdir):
    out = workdir / "sw1"
    assert main(["sweep", "--bundle", str(workdir / "data"), "--out", str(out),
                 "--grid", "eta=1.0", "--seeds", "0", "--no-plots"] + _sets(TINY)) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    got = {r["metric"]: float(r["value"]) for r in rows}
    model = load_checkpoint(workdir / "r1" / "model.ckpt")
    want = report_metrics(evaluate(model, read_bundle(workdir / "data")))
    assert got == pytest.approx(want, abs=0)


def test_sweep_counts_rows(workdir):
    out = workdir / "sw2"
    assert main(["sweep", "--bundle", str(workdir / "data"), "--out", str(out),
                 "--grid", "eta=0,0.5,1.0", "--seeds", "0", "1", "2"]
                + _sets({**TINY, "epochs_stage1": 1, "epochs_stage2": 1})) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    per_metric = {}
    for r in rows:
        per_metric[r["metric"]] = per_metric.get(r["metric"], 0) + 1
    assert set(per_metric.values()) == {9}
    assert (out / "sweep_hm.png").exists()
    assert json.loads((out / "errors.json").read_text()) == []


def test_sweep_empty_grid_rejected(workdir, tmp_path):
    assert main(["sweep", "--bundle", str(workdir / "data"), "--out", str(tmp_path)]) == 1


def test_lambda_sweep_is_smooth(workdir):
    """Unseen accuracy over a lambda grid: neighbouring cells stay within 10 points."""
    bundle = read_bundle(workdir / "data")
    cfg = TrainConfig(**TINY)
    base = fit(bundle, cfg)
    lams = [1.0, 5.0, 10.0, 50.0, 100.0, float("inf")]
    unseen = []
    for lam in lams:
        model = replace(base, config=replace(cfg, lam=lam))
        unseen.append(evaluate(model, bundle).best_unseen)
    assert np.all(np.abs(np.diff(unseen)) <= 0.10)


def test_imbalance_command(workdir):
    out = workdir / "imb"
    assert main(["imbalance", "--checkpoint", str(workdir / "r1" / "model.ckpt"),
                 "--bundle", str(workdir / "data"), "--out", str(out), "--level", "state"]) == 0
    with open(out / "imbalance_state.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert abs(sum(float(r["count"]) for r in rows) - 1) < 1e-12


def test_import_command(tmp_path):
    space = {"states": ["red", "blue"], "objects": ["car", "cup"],
             "pairs": [[0, 0, True], [1, 1, True], [0, 1, False]]}
    (tmp_path / "space.json").write_text(json.dumps(space))
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 5))
    np.save(tmp_path / "x.npy", x)
    rows = [(0, 0, "train"), (1, 1, "train"), (0, 0, "val"), (0, 1, "val"), (1, 1, "test"),
            (0, 1, "test")]
    with open(tmp_path / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "object", "split"])
        w.writerows(rows)
    assert main(["import", "--features", str(tmp_path / "x.npy"), "--labels",
                 str(tmp_path / "labels.csv"), "--space", str(tmp_path / "space.json"),
                 "--out", str(tmp_path / "b")]) == 0
    b = read_bundle(tmp_path / "b")
    np.testing.assert_array_equal(b.features, x.astype(np.float32))
    assert list(b.splits) == [r[2] for r in rows]
    rows[0] = (0, 1, "train")
    with open(tmp_path / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "object", "split"])
        w.writerows(rows)
    assert main(["import", "--features", str(tmp_path / "x.npy"), "--labels",
                 str(tmp_path / "labels.csv"), "--space", str(tmp_path / "space.json"),
                 "--out", str(tmp_path / "c")]) == 1


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "3"]) == 0
    assert "loss_cls" in capsys.readouterr().out
    worst = gradcheck(2, seed=1)
    assert max(worst.values()) <= 1e-5
