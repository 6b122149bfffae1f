"""Kernel SVMs trained by sequential minimal optimization, one-vs-one
multi-class combination, and UAR-scored grid search.

The solver keeps a full kernel matrix per binary subproblem and picks the
maximal KKT-violating pair each step, so training is deterministic for a
given sample order.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .folds import stratified_kfold
from .metrics import confusion_from_predictions, uar

KERNEL_KINDS = ("linear", "rbf", "polynomial", "sigmoid")


class SvmError(Exception):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    gamma: float = 1.0
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise SvmError(f"unknown kernel kind {self.kind!r}")
        if self.kind != "linear" and self.gamma <= 0:
            raise SvmError(f"{self.kind} kernel requires gamma > 0")
        if self.degree < 1:
            raise SvmError("polynomial degree must be >= 1")


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise SvmError(f"kernel dimension mismatch: {x.shape} vs {y.shape}")
    return float(kernel_matrix(spec, x[None, :], y[None, :])[0, 0])


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[1]:
        raise SvmError(f"kernel dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if spec.kind == "linear":
        return a @ b.T
    if spec.kind == "rbf":
        sq = (
            np.sum(a * a, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * (a @ b.T)
        )
        return np.exp(-spec.gamma * np.maximum(sq, 0.0))
    if spec.kind == "polynomial":
        return (spec.gamma * (a @ b.T) + spec.coef0) ** spec.degree
    return np.tanh(spec.gamma * (a @ b.T) + spec.coef0)  # sigmoid


@dataclass(frozen=True)
class BinarySvmModel:
    support_vectors: np.ndarray
    dual_coefs: np.ndarray  # alpha_i * y_i
    bias: float
    kernel: KernelSpec
    c: float
    n_iter: int = 0

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = kernel_matrix(self.kernel, x, self.support_vectors)
        return k @ self.dual_coefs + self.bias


def train_binary(
    vectors,
    labels,
    c: float,
    kernel: KernelSpec,
    tol: float = 1e-3,
    max_iter: int | None = None,
) -> BinarySvmModel:
    """Soft-margin binary SVM via SMO with maximal-violating-pair selection.

    Labels must be -1/+1 with both classes present. Converges when the
    largest KKT violation gap drops to `tol`.
    """
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise SvmError("vectors must be 2-D with one label per row")
    if not np.all(np.isfinite(x)):
        raise SvmError("non-finite feature values")
    if not (np.any(y == 1) and np.any(y == -1)) or not np.all(np.abs(y) == 1):
        raise SvmError("labels must contain both -1 and +1")
    if c <= 0:
        raise SvmError("C must be positive")

    n = x.shape[0]
    if max_iter is None:
        max_iter = max(50_000, 500 * n)
    k = kernel_matrix(kernel, x, x)
    q = (y[:, None] * y[None, :]) * k
    qd = np.diagonal(q).copy()

    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - 1'a
    tau = 1e-12

    it = 0
    while it < max_iter:
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        j = int(np.argmin(np.where(low, yg, np.inf)))
        if yg[i] - yg[j] <= tol:
            break
        old_ai, old_aj = alpha[i], alpha[j]

        if y[i] != y[j]:
            quad = qd[i] + qd[j] + 2.0 * q[i, j]
            if quad <= 0:
                quad = tau
            delta = (-grad[i] - grad[j]) / quad
            diff = old_ai - old_aj
            ai, aj = old_ai + delta, old_aj + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
                if ai > c:
                    ai, aj = c, c - diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
                if aj > c:
                    aj, ai = c, c + diff
        else:
            quad = qd[i] + qd[j] - 2.0 * q[i, j]
            if quad <= 0:
                quad = tau
            delta = (grad[i] - grad[j]) / quad
            total = old_ai + old_aj
            ai, aj = old_ai - delta, old_aj + delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
                if aj > c:
                    aj, ai = c, total - c
            else:
                if aj < 0:
                    aj, ai = 0.0, total
                if ai < 0:
                    ai, aj = 0.0, total

        alpha[i], alpha[j] = ai, aj
        grad += q[:, i] * (ai - old_ai) + q[:, j] * (aj - old_aj)
        it += 1
    else:
        raise SvmError(f"SMO did not converge within {max_iter} iterations")

    # bias from the free support vectors, midpoint of the violation gap otherwise
    y_grad = y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        bias = -float(np.mean(y_grad[free]))
    else:
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        hi = np.max(np.where(up, yg, -np.inf))
        lo = np.min(np.where(low, yg, np.inf))
        bias = float((hi + lo) / 2.0)

    sv = alpha > 0
    return BinarySvmModel(
        support_vectors=x[sv].copy(),
        dual_coefs=(alpha * y)[sv],
        bias=bias,
        kernel=kernel,
        c=float(c),
        n_iter=it,
    )


def dual_objective(model: BinarySvmModel, vectors, labels) -> float:
    """Value of the maximized dual at the model's multipliers (recomputed
    from the full training set so it is comparable across solvers)."""
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    alpha = np.zeros(x.shape[0])
    # map support vectors back to training rows by exact match
    used = np.zeros(x.shape[0], dtype=bool)
    for vec, coef in zip(model.support_vectors, model.dual_coefs):
        matches = np.flatnonzero(~used & np.all(x == vec, axis=1))
        if matches.size == 0:
            raise SvmError("support vector not found among training rows")
        alpha[matches[0]] = coef
        used[matches[0]] = True
    alpha *= y  # coef = alpha*y, so alpha = coef*y
    k = kernel_matrix(model.kernel, x, x)
    q = (y[:, None] * y[None, :]) * k
    return float(alpha.sum() - 0.5 * alpha @ q @ alpha)


def kkt_violation(model: BinarySvmModel, vectors, labels) -> float:
    """Largest violation of the KKT optimality conditions on the training set."""
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    margins = y * model.decision(x)
    alpha = np.zeros(x.shape[0])
    used = np.zeros(x.shape[0], dtype=bool)
    for vec, coef in zip(model.support_vectors, model.dual_coefs):
        matches = np.flatnonzero(~used & np.all(x == vec, axis=1))
        alpha[matches[0]] = coef
        used[matches[0]] = True
    alpha *= y
    worst = 0.0
    for a, m in zip(alpha, margins):
        if a <= 0:
            worst = max(worst, 1.0 - m)  # should satisfy y f >= 1
        elif a >= model.c:
            worst = max(worst, m - 1.0)  # should satisfy y f <= 1
        else:
            worst = max(worst, abs(m - 1.0))
    return worst


# ---------------------------------------------------------------------------
# one-vs-one multi-class
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiClassSvmModel:
    class_labels: list[str]
    pairs: list[tuple[int, int]]
    pairwise_models: list[BinarySvmModel]
    hyperparameters: dict

    def n_classes(self) -> int:
        return len(self.class_labels)


def train_multiclass(
    vectors, class_indices, c: float, kernel: KernelSpec, class_labels: list[str],
    tol: float = 1e-3,
) -> MultiClassSvmModel:
    """One binary SVM per unordered class pair; the lower class index is +1."""
    x = np.asarray(vectors, dtype=np.float64)
    idx = np.asarray(class_indices, dtype=np.int64)
    n_classes = len(class_labels)
    counts = np.bincount(idx, minlength=n_classes)
    empty = [class_labels[i] for i in range(n_classes) if counts[i] == 0]
    if n_classes < 2:
        raise SvmError("need at least 2 classes")
    if empty:
        raise SvmError(f"classes with zero samples: {empty}")

    pairs = list(itertools.combinations(range(n_classes), 2))
    models = []
    for a, b in pairs:
        mask = (idx == a) | (idx == b)
        y = np.where(idx[mask] == a, 1.0, -1.0)
        models.append(train_binary(x[mask], y, c, kernel, tol=tol))
    hyper = {"C": float(c), "gamma": kernel.gamma, "kernel": kernel.kind,
             "degree": kernel.degree, "coef0": kernel.coef0}
    return MultiClassSvmModel(list(class_labels), pairs, models, hyper)


def predict(model: MultiClassSvmModel, x) -> np.ndarray:
    """Majority vote over pairwise decisions.

    Vote ties break toward the larger summed |decision| of won pairs, then
    toward the earlier class in label order.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    n_classes = model.n_classes()
    votes = np.zeros((n, n_classes), dtype=np.int64)
    strength = np.zeros((n, n_classes))
    for (a, b), binary in zip(model.pairs, model.pairwise_models):
        dec = binary.decision(x)
        towards_a = dec > 0
        votes[towards_a, a] += 1
        votes[~towards_a, b] += 1
        strength[towards_a, a] += np.abs(dec[towards_a])
        strength[~towards_a, b] += np.abs(dec[~towards_a])

    best = np.empty(n, dtype=np.int64)
    for r in range(n):
        top = votes[r].max()
        tied = np.flatnonzero(votes[r] == top)
        if tied.size == 1:
            best[r] = tied[0]
        else:
            best[r] = tied[int(np.argmax(strength[r, tied]))]
    return best


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

SVM_FORMAT_VERSION = 1


def save_multiclass(model: MultiClassSvmModel, path: str | Path) -> None:
    """Versioned JSON with a deduplicated support-vector table; each pairwise
    model stores indices into it."""
    vector_table: list[list[float]] = []
    index_of: dict[bytes, int] = {}

    def intern(vec: np.ndarray) -> int:
        key = vec.tobytes()
        if key not in index_of:
            index_of[key] = len(vector_table)
            vector_table.append([float(v) for v in vec])
        return index_of[key]

    pairs = []
    for (a, b), binary in zip(model.pairs, model.pairwise_models):
        pairs.append({
            "classes": [a, b],
            "support_vector_indices": [intern(v) for v in binary.support_vectors],
            "dual_coefs": [float(v) for v in binary.dual_coefs],
            "bias": binary.bias,
            "C": binary.c,
            "kernel": {"kind": binary.kernel.kind, "gamma": binary.kernel.gamma,
                       "degree": binary.kernel.degree, "coef0": binary.kernel.coef0},
        })
    doc = {
        "format_version": SVM_FORMAT_VERSION,
        "class_labels": model.class_labels,
        "hyperparameters": model.hyperparameters,
        "vectors": vector_table,
        "pairwise": pairs,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_multiclass(path: str | Path) -> MultiClassSvmModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != SVM_FORMAT_VERSION:
        raise SvmError(f"unsupported SVM model format {doc.get('format_version')}")
    vectors = np.array(doc["vectors"], dtype=np.float64)
    pairs, models = [], []
    for entry in doc["pairwise"]:
        kernel = KernelSpec(**entry["kernel"])
        pairs.append(tuple(entry["classes"]))
        models.append(BinarySvmModel(
            support_vectors=vectors[entry["support_vector_indices"]],
            dual_coefs=np.array(entry["dual_coefs"], dtype=np.float64),
            bias=float(entry["bias"]),
            kernel=kernel,
            c=float(entry["C"]),
        ))
    return MultiClassSvmModel(list(doc["class_labels"]), pairs, models,
                              dict(doc["hyperparameters"]))


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

DEFAULT_GRID = {
    "C": [0.1, 1.0, 10.0, 100.0],
    "gamma": [0.001, 0.01, 0.1, 1.0],
    "kernels": ["linear", "rbf", "polynomial", "sigmoid"],
}


def grid_candidates(grid: dict) -> list[tuple[str, float, float]]:
    """Deterministic enumeration order: kernel, then C, then gamma."""
    return [
        (kind, c, gamma)
        for kind in grid["kernels"]
        for c in grid["C"]
        for gamma in grid["gamma"]
    ]


def grid_search(
    train_vectors,
    train_class_indices,
    class_labels: list[str],
    grid: dict | None = None,
    inner_folds: int = 3,
    seed: int = 0,
    score_on_train: bool = False,
) -> dict:
    """Pick hyperparameters by mean UAR over a stratified inner CV.

    Classes smaller than `inner_folds` shrink the inner fold count (floor 2);
    if a class has a single sample, candidates are scored by UAR on the
    training set itself and the result is flagged `train_scored`.
    """
    x = np.asarray(train_vectors, dtype=np.float64)
    idx = np.asarray(train_class_indices, dtype=np.int64)
    grid = dict(DEFAULT_GRID) if grid is None else grid
    candidates = grid_candidates(grid)
    if not candidates:
        raise SvmError("empty hyperparameter grid")

    counts = np.bincount(idx, minlength=len(class_labels))
    present = counts[counts > 0]
    min_count = int(present.min())
    train_scored = score_on_train
    if not score_on_train:
        if min_count >= inner_folds:
            k = inner_folds
        elif min_count >= 2:
            k = min_count
        else:
            train_scored = True

    splits = []
    if not train_scored:
        ids = [str(t) for t in range(len(idx))]
        labels = [class_labels[i] for i in idx]
        plan = stratified_kfold(ids, labels, k, seed)
        for fold in range(k):
            test = np.array([t for t, cid in enumerate(ids) if plan.assignment[cid] == fold])
            train = np.array([t for t, cid in enumerate(ids) if plan.assignment[cid] != fold])
            # inner folds may lose a class from the training side; skip those
            if np.unique(idx[train]).size < 2:
                continue
            splits.append((train, test))

    degree = int(grid.get("degree", 3))
    coef0 = float(grid.get("coef0", 0.0))
    results = []
    best = None
    for kind, c, gamma in candidates:
        kernel = KernelSpec(kind=kind, gamma=gamma, degree=degree, coef0=coef0)
        converged = True
        try:
            if train_scored or not splits:
                model = train_multiclass(x, idx, c, kernel, class_labels)
                pred = predict(model, x)
                score = uar(confusion_from_predictions(idx, pred, class_labels))
            else:
                scores = []
                for train, test in splits:
                    model = train_multiclass(x[train], idx[train], c, kernel, class_labels)
                    pred = predict(model, x[test])
                    scores.append(uar(confusion_from_predictions(idx[test], pred,
                                                                 class_labels)))
                score = float(np.mean(scores))
        except SvmError:
            # a candidate that will not converge is simply a bad candidate
            score, converged = 0.0, False
        results.append({"kernel": kind, "C": c, "gamma": gamma,
                        "mean_inner_uar": score, "converged": converged})
        if best is None or score > best["mean_inner_uar"]:
            best = results[-1]

    return {
        "best": dict(best),
        "table": results,
        "train_scored": train_scored,
        "inner_folds": 0 if train_scored else k,
    }
