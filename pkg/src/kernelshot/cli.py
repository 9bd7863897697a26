"""Command-line entry point: generate data, run methods, sweep, compare,
gradient-check, and inspect bundles.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .core import HyperParams
from .errors import DataError, NumericalError
from .harness import DataSplits, SweepGrid, SyntheticSpec
from .methods import METHOD_NAMES
from .trainer import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--train", required=True, help="train bundle directory")
    p.add_argument("--val", required=True, help="validation bundle directory")
    p.add_argument("--test", required=True, help="test bundle directory")
    p.add_argument("--text-anchors", required=True, help="text bundle directory")
    p.add_argument("--support", help="external support bundle (sus-x)")
    p.add_argument("--shots", type=int, default=16)


def _add_hp_flags(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=5.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=-1.0)
    p.add_argument("--logit-scale", type=float, default=100.0)


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=0.0)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kernelshot",
        description="Kernel-method low-shot adapters over precomputed embeddings",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate synthetic bundles")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--shots", type=int, default=16,
                   help="train rows per class = 2x this value")
    g.add_argument("--val-per-class", type=int, default=5)
    g.add_argument("--test-per-class", type=int, default=50)
    g.add_argument("--concentration", type=float, default=5.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")

    r = sub.add_parser("run", help="run one method at fixed hyperparameters")
    r.add_argument("--method", required=True, choices=METHOD_NAMES)
    _add_data_flags(r)
    _add_hp_flags(r)
    _add_train_flags(r)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help="write RunResult JSON here (default stdout)")
    r.add_argument("--format", choices=("json", "csv"), default="json")

    s = sub.add_parser("sweep", help="validation-split hyperparameter search")
    s.add_argument("--method", required=True, choices=METHOD_NAMES)
    _add_data_flags(s)
    _add_train_flags(s)
    s.add_argument("--seeds", default="0", help="comma-separated seed list")
    s.add_argument("--grid", help="JSON file with grid lists")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--format", choices=("json", "csv"), default="json")

    c = sub.add_parser("compare", help="sweep several methods, emit delta table")
    c.add_argument("--methods", required=True,
                   help="comma-separated method names; first is the baseline")
    _add_data_flags(c)
    _add_train_flags(c)
    c.add_argument("--seeds", default="0", help="comma-separated seed list")
    c.add_argument("--grid", help="JSON file with grid lists")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out")
    c.add_argument("--format", choices=("json", "csv"), default="json")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    gc.add_argument("--beta", type=float, default=5.0)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--break-gradient", action="store_true",
                    help="perturb one analytic term; the check must then fail")

    i = sub.add_parser("inspect", help="print bundle metadata")
    i.add_argument("path")
    return p


def _grid_from_file(path) -> SweepGrid:
    raw = json.loads(Path(path).read_text())
    kw = {}
    for src, dst in (
        ("alpha", "alphas"), ("beta", "betas"), ("lambda", "lambdas"),
        ("gamma", "gammas"), ("logit_scale", "logit_scales"),
    ):
        if src in raw:
            kw[dst] = tuple(raw[src])
        elif dst in raw:
            kw[dst] = tuple(raw[dst])
    return SweepGrid(**kw)


def _splits(args) -> DataSplits:
    return DataSplits(
        train=harness.load_bundle(args.train),
        val=harness.load_bundle(args.val),
        test=harness.load_bundle(args.test),
        text=harness.load_bundle(args.text_anchors),
        support=harness.load_bundle(args.support) if args.support else None,
    )


def _train_cfg(args, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        seed=seed,
    )


def _emit(doc: dict, out, fmt: str):
    if fmt == "csv" and "results" in doc:
        text = harness.result_to_csv(doc)
    else:
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        class_count=args.classes,
        dim=args.dim,
        train_per_class=2 * args.shots,
        val_per_class=args.val_per_class,
        test_per_class=args.test_per_class,
        concentration=args.concentration,
        seed=args.seed,
    )
    train, val, test, text = harness.gen_synthetic(spec)
    out = Path(args.out)
    for name, b in (("train", train), ("val", val), ("test", test), ("text", text)):
        harness.save_bundle(b, out / name, force=args.force)
    print(f"wrote 4 bundles under {out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    hp = HyperParams(
        alpha=args.alpha, beta=args.beta, lam=args.lam,
        gamma=args.gamma, logit_scale=args.logit_scale,
    )
    result = harness.run_single(
        args.method, hp, _splits(args), args.shots,
        seed=args.seed, train_cfg=_train_cfg(args, args.seed),
    )
    _emit(result.to_dict(), args.out, args.format)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")]
    grid = _grid_from_file(args.grid) if args.grid else SweepGrid()
    result = harness.sweep(
        args.method, grid, _splits(args), args.shots, seeds,
        train_cfg=_train_cfg(args, seeds[0]), jobs=args.jobs,
    )
    _emit(result.to_dict(), args.out, args.format)
    return EXIT_OK


def _cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    grid = _grid_from_file(args.grid) if args.grid else SweepGrid()
    doc = harness.compare(
        methods, _splits(args), args.shots, seeds,
        grid=grid, train_cfg=_train_cfg(args, seeds[0]), jobs=args.jobs,
    )
    _emit(doc, args.out, args.format)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .anchors import AnchorSet
    from .core import FeatureBundle, one_hot
    from .methods import CacheScores
    from .trainer import grad_cache_scores, grad_keys, cross_entropy_loss, _model_logits

    rng = np.random.default_rng(args.seed)
    C, M, d, B = 3, 2, 8, 4
    n1 = C * M
    hp = HyperParams(alpha=1.0, beta=args.beta, logit_scale=10.0)

    def unit(a):
        return a / np.linalg.norm(a, axis=1, keepdims=True)

    keys = unit(rng.standard_normal((n1, d)))
    text = unit(rng.standard_normal((C, d)))
    X = unit(rng.standard_normal((B, d)))
    y = rng.integers(0, C, size=B)
    Z = one_hot(np.repeat(np.arange(C), M), C)
    r = np.exp(rng.standard_normal(n1) * 0.1)
    anchors = AnchorSet(
        image_anchors=FeatureBundle(keys, kind="image"),
        text_anchors=FeatureBundle(text, kind="text"),
    )
    gk = grad_keys(X, y, anchors, Z, hp, CacheScores(r))
    gr = grad_cache_scores(X, y, anchors, Z, hp, CacheScores(r))
    if args.break_gradient:
        gk = gk * 1.05 + 1e-3

    def loss_at(keys_, r_):
        logits, _ = _model_logits(X, keys_, text, Z, hp, r_)
        return cross_entropy_loss(logits, y)

    h = 1e-4
    max_rel_k = 0.0
    for idx in range(keys.size):
        kp = keys.ravel().copy()
        kp[idx] += h
        km = keys.ravel().copy()
        km[idx] -= h
        fd = (loss_at(kp.reshape(keys.shape), r)
              - loss_at(km.reshape(keys.shape), r)) / (2 * h)
        an = gk.ravel()[idx]
        max_rel_k = max(max_rel_k, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    max_rel_r = 0.0
    for idx in range(n1):
        rp = r.copy()
        rp[idx] += h
        rm = r.copy()
        rm[idx] -= h
        fd = (loss_at(keys, rp) - loss_at(keys, rm)) / (2 * h)
        max_rel_r = max(max_rel_r, abs(fd - gr[idx]) / max(abs(fd), abs(gr[idx]), 1e-6))

    print(f"keys gradient max relative error:   {max_rel_k:.3e}")
    print(f"scores gradient max relative error: {max_rel_r:.3e}")
    if max(max_rel_k, max_rel_r) > 1e-4:
        raise NumericalError("gradient check failed (max relative error > 1e-4)")
    print("gradcheck PASS")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    b = harness.load_bundle(args.path)
    doc = {
        "kind": b.kind,
        "n": b.n,
        "d": b.dim,
        "l2_normalized": b.l2_normalized,
        "class_count": b.class_count,
        "has_labels": b.labels is not None,
        "payload_sha256": b.payload_sha256,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "gradcheck": _cmd_gradcheck,
    "inspect": _cmd_inspect,
}


def run_cli(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
