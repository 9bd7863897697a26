"""Writer for the feature-bundle directory format.

The format (little-endian) is a directory holding:

  meta.json     {"format": "rpft", "version": 1, "kind": "image"|"text",
                 "n": int, "d": int, "dtype": "f32",
                 "l2_normalized": bool, "class_count": int,
                 "class_names": [...], "has_labels": bool, ...}
  features.bin  n*d IEEE-754 binary32 values, row-major, no header
  labels.bin    n signed 32-bit integers (only when has_labels)

Extra provenance keys in meta.json (backbone, template, dataset) are
permitted; consumers ignore keys they do not know.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

FORMAT = "rpft"
VERSION = 1


def l2_normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise ValueError("cannot normalize a zero-norm embedding row")
    return rows / norms


def write_bundle(
    path,
    features: np.ndarray,
    kind: str,
    class_names: Sequence[str],
    labels: Optional[np.ndarray] = None,
    extra_meta: Optional[dict] = None,
) -> None:
    """Write one bundle directory. Features are L2-normalized before the
    binary32 truncation so exported rows are unit norm."""
    features = l2_normalize(np.asarray(features, dtype=np.float64))
    n, d = features.shape
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "n": n,
        "d": d,
        "dtype": "f32",
        "l2_normalized": True,
        "class_count": len(class_names),
        "class_names": list(class_names),
        "has_labels": labels is not None,
    }
    if extra_meta:
        meta.update(extra_meta)
    (path / "features.bin").write_bytes(
        features.astype("<f4").tobytes(order="C")
    )
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} != ({n},)")
        (path / "labels.bin").write_bytes(labels.astype("<i4").tobytes())
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
