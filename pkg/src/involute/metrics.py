"""Evaluation quantities: the symmetry-violation metric, flip violation for
classifiers, and the per-epoch run record with its CSV schema."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RunRecord:
    epoch: int
    train_loss: float
    violation: float
    trunk_evals: int
    wall_ms: float  # informational only; excluded from determinism checks


CSV_HEADER = "epoch,train_loss,violation,trunk_evals,wall_ms"


def violation_metric(model, points, a_matrix, parity: int) -> float:
    """Mean squared residual of model(x) - p * model(A x) over the point set."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ValueError("violation metric over an empty point set is undefined")
    a = np.asarray(a_matrix, dtype=float)
    total = 0.0
    for x in pts:
        d = float(model(x)) - parity * float(model(a @ x))
        total += d * d
    return total / pts.shape[0]


def violation_metric_batch(predict, points, a_matrix, parity: int) -> float:
    """Same metric via one batched prediction call per side (harness path)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ValueError("violation metric over an empty point set is undefined")
    a = np.asarray(a_matrix, dtype=float)
    d = np.asarray(predict(pts)) - parity * np.asarray(predict(pts @ a.T))
    return float(np.mean(d * d))


def flip_violation(classifier, images, axis: str) -> float:
    """Fraction of images whose argmax class changes under a mirror flip.

    The classifier must be deterministic (anything stochastic, e.g. dropout,
    makes the fraction meaningless).
    """
    from .cnn import flip_image

    if len(images) == 0:
        raise ValueError("flip violation over an empty image set is undefined")
    changed = 0
    for img in images:
        before = int(np.argmax(classifier(img)))
        after = int(np.argmax(classifier(flip_image(img, axis))))
        if before != after:
            changed += 1
    return changed / len(images)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def emit_csv(records, path) -> None:
    """Write run records; floats carry 17 significant digits (exact round-trip)."""
    records = list(records)
    if not records:
        raise ValueError("refusing to write an empty record file")
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.epoch},{_fmt(r.train_loss)},{_fmt(r.violation)},{r.trunk_evals},{_fmt(r.wall_ms)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_records(path) -> list[RunRecord]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected record header in {path}")
    out = []
    for ln in lines[1:]:
        epoch, loss, vio, evals, wall = ln.split(",")
        out.append(RunRecord(int(epoch), float(loss), float(vio), int(evals), float(wall)))
    return out
