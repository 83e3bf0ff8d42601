"""Synthetic payment panels, CSV I/O, windowing, balanced splits and missing-data corruption.

Panels are long format: one record per (unit, period) with ``m`` payment
amounts and an optional employment label (``-1`` when absent).
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .network import INSURANCE_NAMES, NetworkParams, WindowSample, forward_batch
from .training import ConfigError, make_rng

__all__ = [
    "DataIntegrityError",
    "PanelDataset",
    "GeneratorConfig",
    "WindowSet",
    "generate_synthetic",
    "generate_teacher_labeled",
    "windowize",
    "balanced_split",
    "corrupt_missing",
    "load_csv",
    "save_csv",
]

UNLABELED = -1

# Per-insurance pay probabilities by state, in INSURANCE_NAMES order.
DEFAULT_EMPLOYED_PAY = (0.55, 0.69, 0.99, 0.68, 0.71, 0.0, 0.47)
DEFAULT_UNEMPLOYED_PAY = (0.75, 0.0, 0.98, 0.0, 0.0, 0.002, 0.02)


class DataIntegrityError(ValueError):
    """Malformed or inconsistent panel data."""


@dataclass
class PanelDataset:
    unit_id: np.ndarray  # (R,) int
    period: np.ndarray  # (R,) int
    payments: np.ndarray  # (R, m) float
    label: np.ndarray  # (R,) int, UNLABELED when absent
    insurance_names: list[str] = field(default_factory=lambda: list(INSURANCE_NAMES))
    teacher: NetworkParams | None = None

    def __post_init__(self):
        self.unit_id = np.asarray(self.unit_id, dtype=np.int64).reshape(-1)
        self.period = np.asarray(self.period, dtype=np.int64).reshape(-1)
        self.payments = np.asarray(self.payments, dtype=np.float64).reshape(self.unit_id.size, -1) \
            if self.unit_id.size else np.zeros((0, len(self.insurance_names)))
        self.label = np.asarray(self.label, dtype=np.int64).reshape(-1)
        n = self.unit_id.size
        if not (self.period.size == n and self.payments.shape[0] == n and self.label.size == n):
            raise DataIntegrityError("record columns have different lengths")
        if self.payments.shape[1] != len(self.insurance_names):
            raise DataIntegrityError("payment columns do not match insurance names")
        if np.any(self.payments < 0) or not np.all(np.isfinite(self.payments)):
            raise DataIntegrityError("payments must be finite and non-negative")
        if not np.all(np.isin(self.label, (UNLABELED, 0, 1))):
            raise DataIntegrityError("labels must be 0, 1 or missing")
        self._check_keys()

    def _check_keys(self):
        if self.unit_id.size == 0:
            return
        order = np.lexsort((self.period, self.unit_id))
        u = self.unit_id[order]
        p = self.period[order]
        same = u[1:] == u[:-1]
        if np.any(same & (p[1:] == p[:-1])):
            i = int(np.flatnonzero(same & (p[1:] == p[:-1]))[0])
            raise DataIntegrityError(f"duplicate record for unit {u[i]}, period {p[i]}")
        if np.any(same & (p[1:] != p[:-1] + 1)):
            i = int(np.flatnonzero(same & (p[1:] != p[:-1] + 1))[0])
            raise DataIntegrityError(f"unit {u[i]} has a gap after period {p[i]}")

    @property
    def m(self) -> int:
        return self.payments.shape[1]

    def __len__(self) -> int:
        return self.unit_id.size

    def sorted(self) -> "PanelDataset":
        order = np.lexsort((self.period, self.unit_id))
        return dataclasses.replace(self, unit_id=self.unit_id[order], period=self.period[order],
                                   payments=self.payments[order], label=self.label[order])

    def equals(self, other: "PanelDataset") -> bool:
        return (
            list(self.insurance_names) == list(other.insurance_names)
            and np.array_equal(self.unit_id, other.unit_id)
            and np.array_equal(self.period, other.period)
            and np.array_equal(self.payments, other.payments)
            and np.array_equal(self.label, other.label)
        )


@dataclass
class GeneratorConfig:
    n_units: int = 2000
    n_periods: int = 24
    window: int = 6
    employed_pay_prob: tuple = DEFAULT_EMPLOYED_PAY
    unemployed_pay_prob: tuple = DEFAULT_UNEMPLOYED_PAY
    p_lose_job: float = 0.05
    p_find_job: float = 0.05
    initial_employed: float = 0.5
    amount_low: float = 5.0
    amount_high: float = 100.0
    seed: int = 0

    def __post_init__(self):
        self.employed_pay_prob = tuple(float(x) for x in self.employed_pay_prob)
        self.unemployed_pay_prob = tuple(float(x) for x in self.unemployed_pay_prob)
        if len(self.employed_pay_prob) != len(self.unemployed_pay_prob):
            raise ConfigError("pay probability vectors differ in length")
        for name in ("employed_pay_prob", "unemployed_pay_prob"):
            if not all(0.0 <= x <= 1.0 for x in getattr(self, name)):
                raise ConfigError(f"{name} entries must lie in [0, 1]")
        for name in ("p_lose_job", "p_find_job", "initial_employed"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.n_units < 1:
            raise ConfigError("n_units must be positive")
        if self.window < 1 or self.n_periods < self.window:
            raise ConfigError("n_periods must be at least window >= 1")
        if not 0 < self.amount_low < self.amount_high:
            raise ConfigError("amount range must satisfy 0 < low < high")

    @property
    def m(self) -> int:
        return len(self.employed_pay_prob)

    @staticmethod
    def parse_field(name: str, raw: str):
        try:
            if name in ("employed_pay_prob", "unemployed_pay_prob"):
                return tuple(float(x) for x in raw.split(","))
            if name in ("n_units", "n_periods", "window", "seed"):
                return int(raw)
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {name!r}: cannot parse {raw!r}") from None

    @classmethod
    def from_mapping(cls, values) -> "GeneratorConfig":
        from .training import _from_mapping

        return _from_mapping(cls, values)


def _simulate(config: GeneratorConfig, rng: np.random.Generator):
    U, T, m = config.n_units, config.n_periods, config.m
    state = np.empty((U, T), dtype=np.int64)
    state[:, 0] = rng.random(U) < config.initial_employed
    for t in range(1, T):
        r = rng.random(U)
        prev = state[:, t - 1]
        state[:, t] = np.where(prev == 1, r >= config.p_lose_job, r < config.p_find_job)
    prob = np.where(state[..., None] == 1, np.array(config.employed_pay_prob), np.array(config.unemployed_pay_prob))
    pays = rng.random((U, T, m)) < prob
    amounts = rng.uniform(config.amount_low, config.amount_high, size=(U, T, m))
    payments = np.where(pays, amounts, 0.0)
    return state, payments


def _panel(payments: np.ndarray, labels: np.ndarray, teacher=None) -> PanelDataset:
    U, T, m = payments.shape
    unit = np.repeat(np.arange(U), T)
    period = np.tile(np.arange(1, T + 1), U)
    return PanelDataset(unit, period, payments.reshape(U * T, m), labels.reshape(-1),
                        list(INSURANCE_NAMES[:m]) if m == len(INSURANCE_NAMES) else [f"insurance_{j + 1}" for j in range(m)],
                        teacher)


def generate_synthetic(config: GeneratorConfig) -> PanelDataset:
    """Two-state employment chains with state-dependent Bernoulli x uniform payments."""
    state, payments = _simulate(config, make_rng(config.seed))
    return _panel(payments, state)


def generate_teacher_labeled(config: GeneratorConfig, teacher: NetworkParams) -> PanelDataset:
    """Payments as in :func:`generate_synthetic`; labels drawn from the teacher network.

    Only periods with a full window of history are labelled.
    """
    if teacher.m != config.m or teacher.s != config.window:
        raise ConfigError(f"teacher expects (m, s) = ({teacher.m}, {teacher.s}), "
                          f"generator gives ({config.m}, {config.window})")
    rng = make_rng(config.seed)
    _, payments = _simulate(config, rng)
    U, T, m = payments.shape
    s = config.window
    labels = np.full((U, T), UNLABELED, dtype=np.int64)
    # windows[u, t] covers periods t-s+1..t, oldest first -> (U, T-s+1, m, s)
    windows = np.lib.stride_tricks.sliding_window_view(payments, s, axis=1)
    prob = forward_batch(teacher, windows.reshape(-1, m, s)).reshape(U, T - s + 1)
    labels[:, s - 1:] = (rng.random(prob.shape) < prob).astype(np.int64)
    return _panel(payments, labels, teacher)


@dataclass
class WindowSet:
    """Stacked windows: ``payments`` is ``(N, m, s)`` oldest period first."""

    payments: np.ndarray
    labels: np.ndarray
    unit_id: np.ndarray
    period: np.ndarray  # the current (last) period of each window

    def __len__(self) -> int:
        return self.labels.size

    def __getitem__(self, i) -> WindowSample:
        return WindowSample(self.payments[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[WindowSample]:
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.payments[idx], self.labels[idx], self.unit_id[idx], self.period[idx])

    @property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.payments, self.labels


def windowize(dataset: PanelDataset, s: int) -> WindowSet:
    """One window per labelled (unit, period) with ``s`` periods of history.

    Windows are ordered by unit then period; within a window column 0 is
    period ``t - s + 1`` and column ``s - 1`` is period ``t``.
    """
    if s < 1:
        raise ValueError("window length must be positive")
    ds = dataset.sorted()
    m = ds.m
    out_x, out_y, out_u, out_t = [], [], [], []
    bounds = np.flatnonzero(np.diff(ds.unit_id)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(ds)]):
        if hi - lo < s:
            continue
        pay = ds.payments[lo:hi]
        lab = ds.label[lo + s - 1:hi]
        keep = lab != UNLABELED
        if not keep.any():
            continue
        win = np.lib.stride_tricks.sliding_window_view(pay, s, axis=0)  # (n-s+1, m, s)
        out_x.append(win[keep])
        out_y.append(lab[keep])
        out_u.append(np.full(int(keep.sum()), ds.unit_id[lo]))
        out_t.append(ds.period[lo + s - 1:hi][keep])
    if not out_x:
        return WindowSet(np.zeros((0, m, s)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    return WindowSet(np.concatenate(out_x), np.concatenate(out_y), np.concatenate(out_u), np.concatenate(out_t))


def balanced_split(samples: WindowSet, n_per_class: int, seed: int) -> tuple[WindowSet, WindowSet]:
    """Draw ``n_per_class`` windows of each label and split each class evenly."""
    if n_per_class < 2 or n_per_class % 2:
        raise ValueError("n_per_class must be an even number >= 2")
    rng = make_rng(seed)
    train_idx, test_idx = [], []
    for cls, name in ((1, "employed"), (0, "unemployed")):
        pool = np.flatnonzero(samples.labels == cls)
        if pool.size < n_per_class:
            raise ValueError(f"class {cls} ({name}) has {pool.size} samples, need {n_per_class}")
        chosen = rng.choice(pool, size=n_per_class, replace=False)
        half = n_per_class // 2
        train_idx.append(chosen[:half])
        test_idx.append(chosen[half:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return samples.subset(tr), samples.subset(te)


def corrupt_missing(dataset: PanelDataset, rate: float, seed: int) -> PanelDataset:
    """Zero each payment cell independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    rng = make_rng(seed)
    drop = rng.random(dataset.payments.shape) < rate
    return dataclasses.replace(dataset, payments=np.where(drop, 0.0, dataset.payments))


# ---------------------------------------------------------------------------
# CSV


def _header(names: Sequence[str]) -> list[str]:
    return ["unit_id", "period"] + [f"pay_{j + 1}" for j in range(len(names))] + ["label"]


def save_csv(dataset: PanelDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(_header(dataset.insurance_names))
        for u, t, pay, lab in zip(dataset.unit_id.tolist(), dataset.period.tolist(),
                                  dataset.payments.tolist(), dataset.label.tolist()):
            wr.writerow([u, t] + [repr(float(x)) for x in pay] + ["" if lab == UNLABELED else lab])


def load_csv(path, insurance_names: Sequence[str] | None = None) -> PanelDataset:
    """Read the ``unit_id,period,pay_1..pay_m,label`` layout written by :func:`save_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise DataIntegrityError(f"{path}: missing header row") from None
        m = len(header) - 3
        if m < 1 or header != ["unit_id", "period"] + [f"pay_{j + 1}" for j in range(m)] + ["label"]:
            raise DataIntegrityError(f"{path}:1: unexpected header {header}")
        units, periods, pays, labels = [], [], [], []
        for lineno, row in enumerate(rows, 2):
            if len(row) != m + 3:
                raise DataIntegrityError(f"{path}:{lineno}: expected {m + 3} fields, got {len(row)}")
            try:
                u, t = int(row[0]), int(row[1])
                pay = [float(x) for x in row[2:2 + m]]
                lab = UNLABELED if row[-1] == "" else int(row[-1])
            except ValueError as exc:
                raise DataIntegrityError(f"{path}:{lineno}: {exc}") from None
            if any(not np.isfinite(x) or x < 0 for x in pay):
                raise DataIntegrityError(f"{path}:{lineno}: payments must be finite and non-negative")
            if lab not in (UNLABELED, 0, 1):
                raise DataIntegrityError(f"{path}:{lineno}: label must be 0, 1 or blank")
            units.append(u)
            periods.append(t)
            pays.append(pay)
            labels.append(lab)
    if insurance_names is None:
        insurance_names = list(INSURANCE_NAMES) if m == len(INSURANCE_NAMES) else [f"insurance_{j + 1}" for j in range(m)]
    payments = np.array(pays, dtype=np.float64).reshape(len(units), m)
    return PanelDataset(np.array(units, dtype=np.int64), np.array(periods, dtype=np.int64), payments,
                        np.array(labels, dtype=np.int64), list(insurance_names))
