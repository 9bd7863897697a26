"""Dataset I/O, synthetic data generation, evaluation, hyperparameter
sweeps on the validation split, and results emission.

On-disk bundle format (little-endian): a directory holding
``meta.json``, ``features.bin`` (n*d float32, row-major, no header) and
optionally ``labels.bin`` (n int32).
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .anchors import (
    AnchorSet,
    image_anchors_from_shots,
    image_anchors_from_support,
    text_anchors_from_bundle,
)
from .core import (
    EpisodeSpec,
    FeatureBundle,
    HyperParams,
    OneHotLabels,
    one_hot,
    sample_episode,
)
from .errors import (
    BadMagic,
    CorruptLabels,
    EmptyBundle,
    IoFailure,
    MissingLabels,
    NotPositiveDefinite,
    ShapeMismatch,
)
from .methods import MethodConfig, Scorer, compose_method
from .trainer import TrainConfig, train, trained_anchor_set

_FORMAT = "rpft"
_VERSION = 1


# -- bundle I/O ---------------------------------------------------------------


def save_bundle(bundle: FeatureBundle, path, force: bool = False) -> None:
    """Write the normative bundle directory; refuses to overwrite unless forced."""
    if bundle.n == 0:
        raise EmptyBundle("refusing to save a bundle with zero rows")
    path = Path(path)
    meta_path = path / "meta.json"
    if meta_path.exists() and not force:
        raise IoFailure(f"{meta_path} exists; pass force=True to overwrite")
    try:
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "format": _FORMAT,
            "version": _VERSION,
            "kind": bundle.kind,
            "n": bundle.n,
            "d": bundle.dim,
            "dtype": "f32",
            "l2_normalized": bundle.l2_normalized,
            "class_count": bundle.class_count,
            "has_labels": bundle.labels is not None,
        }
        if bundle.class_names is not None:
            meta["class_names"] = list(bundle.class_names)
        (path / "features.bin").write_bytes(
            bundle.data.astype("<f4").tobytes(order="C")
        )
        if bundle.labels is not None:
            (path / "labels.bin").write_bytes(bundle.labels.astype("<i4").tobytes())
        meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_bundle(path) -> FeatureBundle:
    """Read and validate a bundle directory; features are widened to f64."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise BadMagic(f"{path} has no meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise BadMagic(f"unreadable meta.json: {e}") from e
    if meta.get("format") != _FORMAT or meta.get("version") != _VERSION:
        raise BadMagic(
            f"expected format={_FORMAT} version={_VERSION}, "
            f"got {meta.get('format')}/{meta.get('version')}"
        )
    n, d = int(meta["n"]), int(meta["d"])
    raw = (path / "features.bin").read_bytes()
    if len(raw) != 4 * n * d:
        raise ShapeMismatch(
            f"features.bin is {len(raw)} bytes, expected {4 * n * d} for {n}x{d}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(n, d).astype(np.float64)
    labels = None
    if meta.get("has_labels"):
        lraw = (path / "labels.bin").read_bytes()
        if len(lraw) != 4 * n:
            raise CorruptLabels(
                f"labels.bin is {len(lraw)} bytes, expected {4 * n}"
            )
        labels = np.frombuffer(lraw, dtype="<i4").astype(np.int64)
        c = meta.get("class_count")
        if c is not None and labels.size and (labels.min() < 0 or labels.max() >= c):
            raise CorruptLabels("label values outside [0, class_count)")
    return FeatureBundle(
        data=data,
        labels=labels,
        class_names=tuple(meta["class_names"]) if "class_names" in meta else None,
        kind=meta["kind"],
        l2_normalized=bool(meta.get("l2_normalized", False)),
        class_count=meta.get("class_count"),
        payload_sha256=hashlib.sha256(raw).hexdigest(),
    )


# -- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale directional data: unit class centers plus angular noise."""

    class_count: int = 10
    dim: int = 64
    train_per_class: int = 32
    val_per_class: int = 5
    test_per_class: int = 50
    concentration: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.concentration <= 0:
            raise ValueError("concentration must be > 0")


def _draw_split(centers, per_class, concentration, rng):
    C, d = centers.shape
    data = np.empty((C * per_class, d))
    labels = np.empty(C * per_class, dtype=np.int64)
    for c in range(C):
        noise = rng.standard_normal((per_class, d)) / concentration
        rows = centers[c] + noise
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        data[c * per_class:(c + 1) * per_class] = rows
        labels[c * per_class:(c + 1) * per_class] = c
    return FeatureBundle(
        data=data, labels=labels, kind="image",
        l2_normalized=True, class_count=C,
    )


def gen_synthetic(spec: SyntheticSpec):
    """(train, val, test, text) bundles; splits use independent RNG streams."""
    center_rng = np.random.default_rng([spec.seed, 0])
    centers = center_rng.standard_normal((spec.class_count, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    train = _draw_split(
        centers, spec.train_per_class, spec.concentration,
        np.random.default_rng([spec.seed, 1]),
    )
    val = _draw_split(
        centers, spec.val_per_class, spec.concentration,
        np.random.default_rng([spec.seed, 2]),
    )
    test = _draw_split(
        centers, spec.test_per_class, spec.concentration,
        np.random.default_rng([spec.seed, 3]),
    )
    text = FeatureBundle(
        data=centers, kind="text", l2_normalized=True,
        class_count=spec.class_count,
    )
    return train, val, test, text


# -- evaluation ---------------------------------------------------------------


def evaluate(scorer: Scorer, test: FeatureBundle) -> float:
    """Top-1 accuracy in percent."""
    if test.labels is None:
        raise MissingLabels("evaluation needs a labeled bundle")
    pred = scorer.predict(test.data)
    return float((pred == test.labels).mean() * 100.0)


# -- sweeps -------------------------------------------------------------------


@dataclass(frozen=True)
class SweepGrid:
    """Candidate values per hyperparameter; selection is val top-1 accuracy
    with first-in-grid tie-break."""

    alphas: tuple[float, ...] = (0.01, 0.1, 0.5, 1.0, 2.0, 5.0)
    betas: tuple[float, ...] = (1.0, 3.0, 5.0, 7.0, 10.0)
    lambdas: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    gammas: tuple[float, ...] = (-1.0, 0.5)
    logit_scales: tuple[float, ...] = (100.0,)

    def __post_init__(self):
        for name in ("alphas", "betas", "lambdas", "gammas", "logit_scales"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"grid list {name} must be non-empty")
            object.__setattr__(self, name, vals)

    def points(self):
        for a, b, lam, g, s in product(
            self.alphas, self.betas, self.lambdas, self.gammas, self.logit_scales
        ):
            yield HyperParams(alpha=a, beta=b, lam=lam, gamma=g, logit_scale=s)


@dataclass(frozen=True)
class DataSplits:
    train: FeatureBundle
    val: FeatureBundle
    test: FeatureBundle
    text: FeatureBundle
    support: Optional[FeatureBundle] = None


@dataclass
class RunResult:
    method: str
    seeds: list
    test_accuracies: list  # percent, one per seed
    val_accuracies: list
    chosen_hyperparams: list  # dicts, one per seed
    jitters: list
    wall_clock_sec: float = 0.0
    leakage_warning: bool = False
    notes: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.test_accuracies))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seeds": list(self.seeds),
            "test_accuracies": [round(a, 2) for a in self.test_accuracies],
            "mean_accuracy": round(self.mean_accuracy, 2),
            "val_accuracies": [round(a, 2) for a in self.val_accuracies],
            "chosen_hyperparams": self.chosen_hyperparams,
            "jitters": self.jitters,
            "leakage_warning": self.leakage_warning,
            "notes": self.notes,
            "wall_clock_sec": self.wall_clock_sec,
        }


def _build_scorer(
    name: str,
    hp: HyperParams,
    anchor_template: AnchorSet,
    Z: OneHotLabels,
    episode: FeatureBundle,
    val: Optional[FeatureBundle],
    train_cfg: Optional[TrainConfig],
) -> Scorer:
    config = MethodConfig(name, hp)
    anchors = anchor_template
    if config.train_target is not None:
        cfg = train_cfg or TrainConfig()
        cfg = TrainConfig(
            learning_rate=cfg.learning_rate,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            weight_decay=cfg.weight_decay,
            seed=cfg.seed,
            target=config.train_target,
            normalize_keys=cfg.normalize_keys,
            cosine_decay=cfg.cosine_decay,
        )
        report = train(cfg, episode, anchors, Z, val, hp)
        anchors = trained_anchor_set(anchors, report)
    return compose_method(config, anchors, Z, episode)


def _episode_pieces(method: str, splits: DataSplits, shots: int, seed: int):
    C = splits.text.n
    episode = sample_episode(splits.train, EpisodeSpec(C, shots, seed))
    Z = one_hot(episode.labels, C)
    text_set = text_anchors_from_bundle(splits.text)
    config = MethodConfig(method)
    if not config.needs_image_anchors:
        return episode, Z, text_set
    if method.startswith("sus-x") and splits.support is not None:
        img_set = image_anchors_from_support(splits.support)
        Z = one_hot(img_set.image_anchors.labels, C)
    else:
        img_set = image_anchors_from_shots(episode)
        Z = one_hot(img_set.image_anchors.labels, C)
    return episode, Z, img_set.merge(text_set)


def _sweep_one_seed(
    method: str,
    grid: SweepGrid,
    splits: DataSplits,
    shots: int,
    seed: int,
    train_cfg: Optional[TrainConfig],
):
    episode, Z, anchors = _episode_pieces(method, splits, shots, seed)
    active = MethodConfig(method).active_hyperparams()
    seen = set()
    best = None  # (val_acc, hp)
    infeasible = None
    for hp in grid.points():
        key = tuple(hp.as_dict()[k] for k in active)
        if key in seen:
            continue
        seen.add(key)
        try:
            scorer = _build_scorer(
                method, hp, anchors, Z, episode, splits.val, train_cfg
            )
        except NotPositiveDefinite as e:
            # a grid point can make the calibrated Gram indefinite; skip it
            infeasible = e
            continue
        acc = evaluate(scorer, splits.val)
        if best is None or acc > best[0]:
            best = (acc, hp)
    if best is None:
        raise infeasible
    val_acc, hp = best
    scorer = _build_scorer(method, hp, anchors, Z, episode, splits.val, train_cfg)
    test_acc = evaluate(scorer, splits.test)
    return {
        "seed": seed,
        "val_accuracy": val_acc,
        "test_accuracy": test_acc,
        "hyperparams": {k: hp.as_dict()[k] for k in active},
        "jitter": scorer.metadata.get("jitter", 0.0),
    }


def _leaky(val: FeatureBundle, test: FeatureBundle) -> bool:
    return val.data.shape == test.data.shape and np.array_equal(val.data, test.data)


def sweep(
    method: str,
    grid: SweepGrid,
    splits: DataSplits,
    shots: int,
    seeds: Sequence[int] = (0,),
    train_cfg: Optional[TrainConfig] = None,
    jobs: int = 1,
) -> RunResult:
    """Select hyperparameters on the validation split, then score the test
    split once under the selected setting. Never selects on test."""
    t0 = time.monotonic()
    leak = _leaky(splits.val, splits.test)
    if leak:
        warnings.warn("validation and test bundles are identical: leakage risk")

    def work(seed):
        return _sweep_one_seed(method, grid, splits, shots, seed, train_cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(work, seeds))
    else:
        rows = [work(s) for s in seeds]
    return RunResult(
        method=method,
        seeds=list(seeds),
        test_accuracies=[r["test_accuracy"] for r in rows],
        val_accuracies=[r["val_accuracy"] for r in rows],
        chosen_hyperparams=[r["hyperparams"] for r in rows],
        jitters=[r["jitter"] for r in rows],
        wall_clock_sec=time.monotonic() - t0,
        leakage_warning=leak,
    )


def run_single(
    method: str,
    hp: HyperParams,
    splits: DataSplits,
    shots: int,
    seed: int = 0,
    train_cfg: Optional[TrainConfig] = None,
) -> RunResult:
    """Direct run at fixed hyperparameters (no sweep)."""
    t0 = time.monotonic()
    episode, Z, anchors = _episode_pieces(method, splits, shots, seed)
    scorer = _build_scorer(method, hp, anchors, Z, episode, splits.val, train_cfg)
    val_acc = evaluate(scorer, splits.val) if splits.val.labels is not None else 0.0
    test_acc = evaluate(scorer, splits.test)
    return RunResult(
        method=method,
        seeds=[seed],
        test_accuracies=[test_acc],
        val_accuracies=[val_acc],
        chosen_hyperparams=[hp.as_dict()],
        jitters=[scorer.metadata.get("jitter", 0.0)],
        wall_clock_sec=time.monotonic() - t0,
    )


def compare(
    methods: Sequence[str],
    splits: DataSplits,
    shots: int,
    seeds: Sequence[int] = (0,),
    grid: Optional[SweepGrid] = None,
    train_cfg: Optional[TrainConfig] = None,
    jobs: int = 1,
) -> dict:
    """Run each method through its sweep; emit per-method results and
    deltas of every later method against the first (the baseline)."""
    if len(methods) < 2:
        raise ValueError("compare needs at least 2 methods")
    grid = grid or SweepGrid()
    results = [
        sweep(m, grid, splits, shots, seeds, train_cfg, jobs) for m in methods
    ]
    base = results[0]
    deltas = []
    for r in results[1:]:
        per_seed = [
            round(a - b, 2)
            for a, b in zip(r.test_accuracies, base.test_accuracies)
        ]
        deltas.append({
            "method": r.method,
            "baseline": base.method,
            "delta_mean": round(r.mean_accuracy - base.mean_accuracy, 2),
            "delta_per_seed": per_seed,
        })
    return {
        "shots": shots,
        "seeds": list(seeds),
        "results": [r.to_dict() for r in results],
        "deltas": deltas,
    }


def result_to_csv(doc: dict) -> str:
    """CSV table mirroring the per-method / delta row layout."""
    lines = ["method,mean_accuracy," + ",".join(
        f"seed_{s}" for s in doc["seeds"]
    )]
    for r in doc["results"]:
        accs = ",".join(f"{a:.2f}" for a in r["test_accuracies"])
        lines.append(f"{r['method']},{r['mean_accuracy']:.2f},{accs}")
    for d in doc["deltas"]:
        accs = ",".join(f"{a:+.2f}" for a in d["delta_per_seed"])
        lines.append(
            f"delta({d['method']}-{d['baseline']}),{d['delta_mean']:+.2f},{accs}"
        )
    return "\n".join(lines) + "\n"
