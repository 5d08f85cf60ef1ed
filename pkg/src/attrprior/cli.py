"""Command-line entry point.

Subcommands: generate, import, train, eval, sweep, imbalance, gradcheck.
Options come from an optional YAML/JSON ``--config`` file, then from
repeatable ``--set key=value`` overrides, then from explicit flags.

Exit status: 0 on success, 1 on invalid input or configuration, 2 on a
numerical or other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import plotting
from .bundle import SPLITS, import_features, read_bundle, write_bundle
from .checkpoint import load_checkpoint, save_checkpoint
from .classifiers import PrototypeClassifier, SemanticTable
from .core import make_rng, softmax
from .errors import ContractError, NumericalError, ValidationError
from .evaluate import report_to_json_dict
from .pipeline import MODES, evaluate, fit, sweep
from .space import CompositionSpace
from .synthgen import SynthSpec, generate, imbalance_report
from .training import TrainConfig, cross_entropy, loss_cls, loss_ic

log = logging.getLogger("attrprior")

TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
# run-level keys accepted next to the TrainConfig fields
RUN_KEYS = {"space_digest", "mode", "delta", "split", "seeds", "grid", "metric"}


# -- config handling ------------------------------------------------------------

def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ValidationError(f"config file {path} not found") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ValidationError("config file must hold a mapping")
    return doc


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _options(args) -> dict:
    doc = _read_config(args.config)
    doc.update(_overrides(args.set))
    return doc


def _split_run_options(doc: dict):
    unknown = sorted(set(doc) - TRAIN_KEYS - RUN_KEYS)
    if unknown:
        raise ValidationError(f"unknown options {unknown}")
    train = {k: v for k, v in doc.items() if k in TRAIN_KEYS}
    run = {k: v for k, v in doc.items() if k in RUN_KEYS}
    if "lam" in train and isinstance(train["lam"], str):
        train["lam"] = float(train["lam"])
    try:
        return TrainConfig.from_dict(train), run
    except TypeError as exc:
        raise ValidationError(f"bad option value: {exc}") from exc


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- commands -------------------------------------------------------------------

def cmd_generate(args) -> int:
    doc = _options(args)
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(doc)
    except TypeError as exc:
        raise ValidationError(f"bad option value: {exc}") from exc
    space, _, bundle, biased = generate(spec)
    out = write_bundle(bundle, args.out)
    _write_json(out / "synth.json", {"spec": spec.to_dict(),
                                     "biased_pairs": [space.pair_names()[i]
                                                      for i in np.flatnonzero(biased)]})
    counts = {s: int(np.sum(bundle.splits == s)) for s in SPLITS}
    print(f"wrote {out}: {space.n_pairs} pairs ({space.n_seen} seen), samples {counts}, "
          f"digest {bundle.digest()[:12]}")
    return 0


def _read_matrix(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_import(args) -> int:
    doc = _read_config(args.space)
    try:
        space = CompositionSpace.from_dict(doc)
    except KeyError as exc:
        raise ValidationError(f"space document lacks {exc}") from exc
    sem_doc = doc.get("semantics")
    if sem_doc is not None:
        sem = SemanticTable(np.array(sem_doc["states"], dtype=float),
                            np.array(sem_doc["objects"], dtype=float))
    else:
        # no word vectors supplied: seeded random stand-ins
        rng = make_rng(args.seed)
        sem = SemanticTable(rng.standard_normal((space.n_states, args.d_w)),
                            rng.standard_normal((space.n_objects, args.d_w)))
    x = _read_matrix(Path(args.features))
    with open(args.labels, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"state", "object", "split"} <= set(rows[0]):
        raise ValidationError("labels file needs columns state, object, split")
    states = [int(r["state"]) for r in rows]
    objects = [int(r["object"]) for r in rows]
    splits = [r["split"] for r in rows]
    bundle = import_features(x, states, objects, splits, space, sem,
                             provenance=f"imported from {Path(args.features).name}")
    out = write_bundle(bundle, args.out)
    print(f"wrote {out}: {len(x)} samples, d_x {bundle.d_x}, digest {bundle.digest()[:12]}")
    return 0


def _load_bundle_for(cfg_run, path):
    bundle = read_bundle(path)
    expected = cfg_run.get("space_digest")
    if expected is not None and expected != bundle.space.digest():
        raise ValidationError("config pins a different composition space than the bundle")
    for split in ("train", "val"):
        if not np.any(bundle.splits == split):
            raise ValidationError(f"bundle has no {split!r} samples")
    return bundle


def cmd_train(args) -> int:
    doc = _options(args)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg, run = _split_run_options(doc)
    bundle = _load_bundle_for(run, args.bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = fit(bundle, cfg)
    ckpt = save_checkpoint(model, out / "model.ckpt")
    with open(out / "trace.jsonl", "w", encoding="utf-8") as fh:
        for tr in model.traces:
            for rec in tr.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    names = bundle.space.pair_names()
    prior = model.prior
    _write_json(out / "prior.json", {
        "epoch": prior.epoch, "mode": cfg.prior, "form": cfg.prior_form,
        "state_prior": dict(zip(bundle.space.states, prior.state_prior.tolist())),
        "object_prior": dict(zip(bundle.space.objects, prior.object_prior.tolist())),
        "k": dict(zip(names, prior.k.tolist())),
    })
    _write_json(out / "config.json", {"train": cfg.to_dict(), "bundle_digest": bundle.digest(),
                                      "space_digest": bundle.space.digest()})
    if not args.no_plots:
        plotting.plot_traces(model.traces, out / "trace.png")
    for tr in model.traces:
        log.info("%s: %d epochs in %.1fs, best epoch %d", tr.stage, len(tr.losses),
                 tr.seconds, tr.best_epoch)
    print(f"wrote {ckpt} (sha256 {_sha256(ckpt)[:12]})")
    return 0


def cmd_eval(args) -> int:
    bundle = read_bundle(args.bundle)
    model = load_checkpoint(args.checkpoint, bundle.space.digest())
    inference_prior = False if args.no_inference_prior else None
    rep = evaluate(model, bundle, args.split, args.mode, inference_prior, args.delta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = report_to_json_dict(rep)
    doc.update({"split": args.split, "mode": args.mode, "delta": args.delta,
                "inference_prior": (model.config.inference_prior and not args.no_inference_prior),
                "checkpoint_sha256": _sha256(Path(args.checkpoint))})
    _write_json(out / "report.json", doc)
    (out / "curve.csv").write_text(rep.curve_csv(), encoding="utf-8")
    if not args.no_plots:
        plotting.plot_bias_curve(rep, out / "curve.png", title=f"{args.mode} on {args.split}")
    auc = "n/a" if rep.auc is None else f"{rep.auc:.4f}"
    print(f"AUC {auc}  HM {rep.best_hm:.4f}  seen {rep.best_seen:.4f}  "
          f"unseen {rep.best_unseen:.4f}  state {rep.best_state:.4f}  object {rep.best_object:.4f}")
    return 0


def _parse_grid(items) -> dict:
    grid = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep:
            raise ValidationError(f"--grid expects key=v1,v2,..., got {item!r}")
        grid[key.strip()] = [yaml.safe_load(v) for v in values.split(",") if v.strip()]
    return grid


def cmd_sweep(args) -> int:
    doc = _options(args)
    base, run = _split_run_options(doc)
    grid = dict(run.get("grid") or {})
    grid.update(_parse_grid(args.grid))
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValidationError("sweep grid is empty")
    unknown = sorted(set(grid) - TRAIN_KEYS)
    if unknown:
        raise ValidationError(f"grid keys {unknown} are not training options")
    seeds = args.seeds if args.seeds else run.get("seeds", [base.seed])
    bundle = _load_bundle_for(run, args.bundle)
    rows, errors = sweep(bundle, base, grid, seeds, split=run.get("split", args.split),
                         mode=run.get("mode", args.mode), delta=run.get("delta", args.delta))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "seed", "metric", "value"])
        for r in rows:
            w.writerow([r["cell"], r["seed"], r["metric"], repr(float(r["value"]))])
    _write_json(out / "errors.json", errors)
    if not args.no_plots:
        metric = run.get("metric", args.metric)
        plotting.plot_sweep(rows, out / f"sweep_{metric}.png", metric)
    print(f"{len(rows)} rows, {len(errors)} failed cells -> {out / 'sweep.csv'}")
    return 0 if not errors else 2


def cmd_imbalance(args) -> int:
    bundle = read_bundle(args.bundle)
    model = load_checkpoint(args.checkpoint, bundle.space.digest())
    x, s, o, y = bundle.split(args.split)
    sem = bundle.semantics
    if args.level == "composition":
        post = softmax(model.cy.forward(x, sem.pair_vectors(bundle.space))[0])
        labels, n, names = y, bundle.space.n_pairs, bundle.space.pair_names()
    elif args.level == "state":
        post = softmax(model.cs.forward(x, sem.states)[0])
        labels, n, names = s, bundle.space.n_states, list(bundle.space.states)
    else:
        post = softmax(model.co.forward(x, sem.objects)[0])
        labels, n, names = o, bundle.space.n_objects, list(bundle.space.objects)
    rep = imbalance_report(post, labels, n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"imbalance_{args.level}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "name", "count", "posterior"])
        for c, cnt, p in zip(rep["class"], rep["count"], rep["posterior"]):
            w.writerow([int(c), names[c], repr(float(cnt)), repr(float(p))])
    if not args.no_plots:
        plotting.plot_imbalance(rep, out / f"imbalance_{args.level}.png")
    print(f"Spearman(count, posterior) = {rep['spearman']:.4f} over {len(rep['class'])} classes")
    return 0


def _fd(f, z, h=1e-6):
    g = np.zeros_like(z)
    for i in np.ndindex(z.shape):
        old = z[i]
        z[i] = old + h
        fp = f(z)
        z[i] = old - h
        fm = f(z)
        z[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def gradcheck(n_instances=20, seed=0):
    """Worst relative error between analytic and central-difference gradients
    for each loss and for the classifier parameters."""
    rng = make_rng(seed)
    worst = {"loss_ic": 0.0, "loss_cls": 0.0, "classifier": 0.0}
    for _ in range(n_instances):
        zs, zo = 3 * rng.standard_normal((6, 4)), 3 * rng.standard_normal((6, 5))
        s, o = rng.integers(4, size=6), rng.integers(5, size=6)
        _, gs, go = loss_ic(zs, zo, s, o)
        worst["loss_ic"] = max(worst["loss_ic"],
                               _rel(gs, _fd(lambda z: loss_ic(z, zo, s, o)[0], zs.copy())),
                               _rel(go, _fd(lambda z: loss_ic(zs, z, s, o)[0], zo.copy())))
        z = 3 * rng.standard_normal((5, 7))
        y = rng.integers(7, size=5)
        k = softmax(rng.standard_normal(7))
        for eta in (0.0, 0.5, 1.0):
            _, g = loss_cls(z, y, k, eta)
            num = _fd(lambda v: loss_cls(v, y, k, eta)[0], z.copy())
            worst["loss_cls"] = max(worst["loss_cls"], _rel(g, num))
    # one small classifier through the cosine head
    clf = PrototypeClassifier.create(4, 3, rng, hidden=6, embed=5, tau=0.2, dropout=0.0)
    x, sem = rng.standard_normal((5, 4)), rng.standard_normal((3, 3))
    labels = rng.integers(3, size=5)

    def total():
        return cross_entropy(clf.forward(x, sem)[0], labels)[0]

    zc, cache = clf.forward(x, sem)
    grads = clf.backward(cache, cross_entropy(zc, labels)[1])
    for p, g in zip(clf.parameters(), grads):
        worst["classifier"] = max(worst["classifier"], _rel(g, _fd(lambda _: total(), p)))
    return worst


def cmd_gradcheck(args) -> int:
    worst = gradcheck(args.instances, args.seed)
    for name, err in worst.items():
        print(f"{name:10s} max relative error {err:.2e}")
    if max(worst.values()) > args.tol:
        raise NumericalError(f"gradient check failed (tolerance {args.tol:g})")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attrprior",
                                description="Attribute-prior compositional zero-shot engine")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def config_opts(sp):
        sp.add_argument("--config", help="YAML or JSON options file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one option (repeatable)")

    g = sub.add_parser("generate", help="write a synthetic feature bundle")
    config_opts(g)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    im = sub.add_parser("import", help="wrap external features as a bundle")
    im.add_argument("--features", required=True, help=".npy or comma-separated matrix")
    im.add_argument("--labels", required=True, help="CSV with state,object,split columns")
    im.add_argument("--space", required=True,
                    help="YAML/JSON with states, objects, pairs and optional semantics")
    im.add_argument("--out", required=True)
    im.add_argument("--d-w", type=int, default=16, help="random semantic width if none given")
    im.add_argument("--seed", type=int, default=0)
    im.set_defaults(func=cmd_import)

    t = sub.add_parser("train", help="run both training stages")
    config_opts(t)
    t.add_argument("--bundle", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-plots", action="store_true")
    t.set_defaults(func=cmd_train)

    def eval_opts(sp):
        sp.add_argument("--split", default="test", choices=SPLITS)
        sp.add_argument("--mode", default="adjusted", choices=MODES)
        sp.add_argument("--delta", type=float, default=0.5, help="ensemble mixing weight")
        sp.add_argument("--no-plots", action="store_true")

    e = sub.add_parser("eval", help="score a split and write the report")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--bundle", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--no-inference-prior", action="store_true",
                   help="score raw C_y logits (training is untouched)")
    eval_opts(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train+eval over a hyper-parameter grid")
    config_opts(s)
    s.add_argument("--bundle", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                   help="grid axis (repeatable); cells are the cartesian product")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--metric", default="hm", help="metric to plot")
    eval_opts(s)
    s.set_defaults(func=cmd_sweep)

    ib = sub.add_parser("imbalance", help="count vs posterior table for one classifier")
    ib.add_argument("--checkpoint", required=True)
    ib.add_argument("--bundle", required=True)
    ib.add_argument("--out", required=True)
    ib.add_argument("--split", default="train", choices=SPLITS)
    ib.add_argument("--level", default="composition", choices=("composition", "state", "object"))
    ib.add_argument("--no-plots", action="store_true")
    ib.set_defaults(func=cmd_imbalance)

    gc = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ContractError, OSError, RuntimeError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
