"""Stratified fold planning for cross-validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict[str, int]

    def test_ids(self, fold: int) -> list[str]:
        return [c for c, f in self.assignment.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [c for c, f in self.assignment.items() if f != fold]


def stratified_kfold(call_ids: list[str], labels: list[str], k: int, seed: int) -> FoldPlan:
    """Assign calls to k folds so per-class counts differ by at most one.

    Each class is shuffled and dealt round-robin from a seeded starting fold,
    so classes smaller than k (down to a single call) still spread out instead
    of piling into fold 0.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(call_ids) < k:
        raise ValueError(f"cannot split {len(call_ids)} calls into {k} folds")
    if len(call_ids) != len(labels):
        raise ValueError("call_ids and labels length mismatch")

    rng = np.random.default_rng(seed)
    by_class: dict[str, list[str]] = {}
    for call_id, label in zip(call_ids, labels):
        by_class.setdefault(label, []).append(call_id)

    assignment: dict[str, int] = {}
    for label in sorted(by_class):
        ids = list(by_class[label])
        rng.shuffle(ids)
        start = int(rng.integers(k))
        for t, call_id in enumerate(ids):
            assignment[call_id] = (start + t) % k
    return FoldPlan(k, assignment)
