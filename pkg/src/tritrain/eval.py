"""Accuracy, multi-seed aggregation and the paired bootstrap test."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import write_atomic

DEFAULT_RESAMPLES = 10_000


def accuracy(predicted, gold) -> float:
    predicted = np.asarray(predicted)
    gold = np.asarray(gold)
    if predicted.shape != gold.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {gold.shape}")
    if predicted.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    return float(np.mean(predicted == gold))


def aggregate(accs: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    a = np.asarray(accs, dtype=np.float64)
    if a.size == 0:
        raise ValueError("nothing to aggregate")
    return float(a.mean()), float(a.std())


def paired_bootstrap_test(
    preds_a,
    preds_b,
    gold,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> float:
    """One-sided paired bootstrap p-value for "a is more accurate than b".

    Example indices are resampled with replacement; p is the fraction of
    resamples in which a's accuracy does not exceed b's. If a does not beat
    b on the full set the test returns 1.0.
    """
    a, b, g = (np.asarray(v) for v in (preds_a, preds_b, gold))
    if not (a.shape == b.shape == g.shape) or a.ndim != 1:
        raise ValueError("preds_a, preds_b and gold must be equal-length vectors")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    n = len(g)
    if n == 0:
        raise ValueError("empty test set")
    diff = (a == g).astype(np.int64) - (b == g).astype(np.int64)
    if diff.sum() <= 0:
        return 1.0
    rng = np.random.default_rng(seed)
    chunk = max(1, 2_000_000 // n)
    not_better = 0
    done = 0
    while done < resamples:
        m = min(chunk, resamples - done)
        idx = rng.integers(0, n, size=(m, n))
        not_better += int(np.count_nonzero(diff[idx].sum(axis=1) <= 0))
        done += m
    return not_better / resamples


@dataclass
class RunReport:
    strategy: str
    per_seed_accuracy: list[float]
    seeds: list[int] = field(default_factory=list)
    mu_pseudo: float = 0.0
    p_value_vs_baseline: float | None = None
    mean: float = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        if any(not 0.0 <= a <= 1.0 for a in self.per_seed_accuracy):
            raise ValueError("accuracies must lie in [0, 1]")
        if self.p_value_vs_baseline is not None and not 0.0 <= self.p_value_vs_baseline <= 1.0:
            raise ValueError("p-value must lie in [0, 1]")
        if not self.seeds:
            self.seeds = list(range(len(self.per_seed_accuracy)))
        self.mean, self.std = aggregate(self.per_seed_accuracy)


def _r6(x: float) -> float:
    return float(f"{x:.6f}")


def dumps_report(report: RunReport) -> str:
    lines = [
        json.dumps({"type": "seed", "seed": s, "accuracy": _r6(a)})
        for s, a in zip(report.seeds, report.per_seed_accuracy)
    ]
    lines.append(json.dumps({
        "type": "report",
        "strategy": report.strategy,
        "n_seeds": len(report.per_seed_accuracy),
        "mean": _r6(report.mean),
        "std": _r6(report.std),
        "mu_pseudo": _r6(report.mu_pseudo),
        "p_value_vs_baseline": (None if report.p_value_vs_baseline is None
                                else _r6(report.p_value_vs_baseline)),
    }, sort_keys=True))
    return "\n".join(lines) + "\n"


def loads_report(text: str) -> tuple[RunReport, dict]:
    """Parse a report file; returns the rebuilt report and the stored summary record."""
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    summary = [r for r in records if r.get("type") == "report"]
    if len(summary) != 1:
        raise ValueError("report file needs exactly one summary record")
    seeds = [r for r in records if r.get("type") == "seed"]
    s = summary[0]
    report = RunReport(
        s["strategy"],
        [r["accuracy"] for r in seeds],
        [r["seed"] for r in seeds],
        s.get("mu_pseudo", 0.0),
        s.get("p_value_vs_baseline"),
    )
    return report, s


def save_report(report: RunReport, path) -> None:
    write_atomic(path, dumps_report(report))


def load_report(path) -> tuple[RunReport, dict]:
    return loads_report(Path(path).read_text(encoding="utf-8"))
