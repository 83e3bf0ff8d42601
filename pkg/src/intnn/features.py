"""Handcrafted window features and the logistic / MLP baselines built on them.

Features per window (``m`` insurances, ``s`` periods, oldest first):

* NPC: for each insurance, the run of trailing periods in which it was *not* paid;
* IC: number of insurances paid in the current period;
* PC: the run of trailing periods in which more than ``pc_threshold`` insurances were paid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .network import WindowSample, bce_logits, bce_slope

__all__ = [
    "FEATURE_SUBSETS",
    "FeatureVector",
    "LogisticParams",
    "MLPParams",
    "binarize_payment",
    "trailing_run",
    "extract_features",
    "feature_matrix",
    "select_features",
    "export_features_csv",
    "logistic_loss_and_gradient",
    "mlp_loss_and_gradient",
    "fit_baseline",
    "ComparisonRow",
    "comparison_table",
]

# Row order of the comparison table, per baseline family.
FEATURE_SUBSETS = ("NPC, IC, PC", "NPC", "PC, IC", "PC", "IC")

DEFAULT_PC_THRESHOLD = 2


@dataclass(frozen=True)
class FeatureVector:
    npc: np.ndarray
    ic: int
    pc: int


def binarize_payment(amount: float) -> int:
    if amount < 0:
        raise ValueError(f"payment amount must be non-negative, got {amount!r}")
    return 1 if amount > 0 else 0


def trailing_run(indicator: np.ndarray) -> np.ndarray:
    """Length of the run of ones ending at the last position (time on the last axis)."""
    ind = np.asarray(indicator).astype(bool)
    rev = ind[..., ::-1]
    return np.cumprod(rev, axis=-1).sum(axis=-1)


def _indicators(payments: np.ndarray, pc_threshold: int):
    pays = payments > 0  # (..., m, s)
    count = pays.sum(axis=-2)  # (..., s)
    return pays, count, count > pc_threshold


def extract_features(sample: WindowSample, pc_threshold: int = DEFAULT_PC_THRESHOLD) -> FeatureVector:
    pays, count, many = _indicators(sample.payments, pc_threshold)
    return FeatureVector(npc=trailing_run(~pays), ic=int(count[-1]), pc=int(trailing_run(many)))


def feature_matrix(payments: np.ndarray, pc_threshold: int = DEFAULT_PC_THRESHOLD) -> np.ndarray:
    """Columns ``npc_1..npc_m, ic, pc`` for a stack of windows ``(N, m, s)``."""
    payments = np.asarray(payments)
    pays, count, many = _indicators(payments, pc_threshold)
    npc = trailing_run(~pays)
    return np.column_stack([npc, count[:, -1], trailing_run(many)]).astype(np.float64)


def subset_columns(subset: str, m: int) -> list[int]:
    parts = {p.strip() for p in subset.split(",")}
    if not parts or not parts <= {"NPC", "IC", "PC"}:
        raise ValueError(f"unknown feature subset {subset!r}")
    cols = []
    if "NPC" in parts:
        cols.extend(range(m))
    if "IC" in parts:
        cols.append(m)
    if "PC" in parts:
        cols.append(m + 1)
    return cols


def subset_names(subset: str, insurance_names: Sequence[str]) -> list[str]:
    m = len(insurance_names)
    all_names = [f"npc:{n}" for n in insurance_names] + ["ic", "pc"]
    return [all_names[i] for i in subset_columns(subset, m)]


def select_features(F: np.ndarray, subset: str, m: int) -> np.ndarray:
    return F[:, subset_columns(subset, m)]


def export_features_csv(F: np.ndarray, labels, path) -> None:
    m = F.shape[1] - 2
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"npc_{j + 1}" for j in range(m)] + ["ic", "pc", "label"])
        for row, y in zip(F, labels):
            wr.writerow([int(x) for x in row] + [int(y)])


# ---------------------------------------------------------------------------
# baselines


@dataclass
class LogisticParams:
    weights: np.ndarray
    intercept: float
    names: list[str] | None = None

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        self.intercept = float(self.intercept)

    def to_dict(self):
        return {"weights": self.weights.copy(), "intercept": np.array(self.intercept)}

    def from_arrays(self, arrays) -> "LogisticParams":
        return LogisticParams(arrays["weights"], float(arrays["intercept"]), self.names)

    def coefficients(self) -> dict[str, float]:
        if self.names is None:
            raise ValueError("logistic model carries no feature names")
        return dict(zip(self.names, self.weights.tolist()))


@dataclass
class MLPParams:
    W1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float
    names: list[str] | None = None

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=np.float64))
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        h = self.W1.shape[1]
        if self.b1.shape != (h,) or self.w2.shape != (h,):
            raise ValueError("hidden layer dimensions are inconsistent")

    def to_dict(self):
        return {"W1": self.W1.copy(), "b1": self.b1.copy(), "w2": self.w2.copy(), "b2": np.array(self.b2)}

    def from_arrays(self, arrays) -> "MLPParams":
        return MLPParams(arrays["W1"], arrays["b1"], arrays["w2"], float(arrays["b2"]), self.names)


def logistic_proba(params: LogisticParams, X) -> np.ndarray:
    return expit(np.asarray(X, dtype=np.float64) @ params.weights + params.intercept)


def logistic_loss_and_gradient(params: LogisticParams, X, y, lam=0.0):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    logit = X @ params.weights + params.intercept
    value = float(np.mean(bce_logits(logit, y)) + lam * np.abs(params.weights).sum())
    g = bce_slope(logit, y) / X.shape[0]
    grads = {"weights": X.T @ g + lam * np.sign(params.weights), "intercept": np.array(g.sum())}
    return value, grads


def mlp_proba(params: MLPParams, X) -> np.ndarray:
    hidden = expit(np.asarray(X, dtype=np.float64) @ params.W1 + params.b1)
    return expit(hidden @ params.w2 + params.b2)


def mlp_loss_and_gradient(params: MLPParams, X, y, lam=0.0):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    hidden = expit(X @ params.W1 + params.b1)
    logit = hidden @ params.w2 + params.b2
    value = float(np.mean(bce_logits(logit, y)) + lam * np.abs(params.w2).sum())
    g = bce_slope(logit, y) / X.shape[0]
    g_hidden = np.outer(g, params.w2) * hidden * (1.0 - hidden)
    grads = {
        "W1": X.T @ g_hidden,
        "b1": g_hidden.sum(axis=0),
        "w2": hidden.T @ g + lam * np.sign(params.w2),
        "b2": np.array(g.sum()),
    }
    return value, grads


def fit_baseline(kind: str, subset: str, train_windows, config, insurance_names: Sequence[str], test_windows=None):
    """Fit a logistic or MLP baseline on the ``subset`` features of ``train_windows``.

    ``train_windows`` / ``test_windows`` are ``(payments, labels)`` pairs.
    Returns the :class:`~intnn.training.TrainResult`.
    """
    from .training import train

    if kind not in ("logistic", "mlp"):
        raise ValueError(f"unknown baseline kind {kind!r}")
    m = len(insurance_names)
    cols = subset_columns(subset, m)
    names = subset_names(subset, insurance_names)

    def prep(windows):
        X, y = windows
        return feature_matrix(X)[:, cols], y

    Xtr, ytr = prep(train_windows)
    test = prep(test_windows) if test_windows is not None else None
    return train(kind, Xtr, ytr, config, test=test, names=names)


# ---------------------------------------------------------------------------
# comparison table


@dataclass(frozen=True)
class ComparisonRow:
    index: int
    model: str
    inputs: str
    accuracy: float


def comparison_table(rows: Sequence[ComparisonRow], title: str = "Model Comparisons", footnote: str | None = None) -> str:
    rows = list(rows)
    if not rows:
        raise ValueError("comparison table needs at least one row")
    for r in rows:
        if r.accuracy is None or not np.isfinite(r.accuracy):
            raise ValueError(f"row {r.index} has no accuracy")
    rows.sort(key=lambda r: r.index)
    header = f"{'Index':<6s} {'Model':<10s} {'Inputs':<12s} {'Test Accuracy':>13s}"
    lines = [title, header, "-" * len(header)]
    prev = None
    for r in rows:
        model = r.model if r.model != prev else ""
        prev = r.model
        lines.append(f"{r.index:<6d} {model:<10s} {r.inputs:<12s} {r.accuracy:>13.5f}")
    if footnote:
        lines.append("")
        lines.append(footnote)
    return "\n".join(lines) + "\n"


def read_table_accuracies(text: str) -> dict[int, float]:
    """Parse the index -> accuracy map back out of :func:`comparison_table` output."""
    out = {}
    for line in text.splitlines():
        parts = line.split()
        if parts and parts[0].isdigit():
            out[int(parts[0])] = float(parts[-1])
    return out


def write_table(text: str, path) -> None:
    Path(path).write_text(text, encoding="utf-8")
