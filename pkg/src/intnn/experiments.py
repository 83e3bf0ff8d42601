"""End-to-end pipelines shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import features as ft
from .data import GeneratorConfig, PanelDataset, WindowSet, balanced_split, corrupt_missing, windowize
from .filters import smooth_persistent_change
from .network import INSURANCE_NAMES, NetworkParams
from .training import TrainConfig, TrainResult, evaluate, make_rng, train

log = logging.getLogger(__name__)

# Fixed teacher for the parameter-recovery experiments.  Signs of ``w`` follow
# the fitted reduction weights reported for the real data; the head is made
# confident so the teacher's own accuracy sits well above 0.95.
ACCEPTANCE_TEACHER = NetworkParams.from_smoothing(
    c=2.0,
    d=-5.0,
    w=[[-1.73, 1.84, -4.0, 0.64, 0.62, -0.66, 4.19]],
    b=[3.67],
    k=[0.9],
    u=[4.0],
    v=-2.0,
    s=6,
)

# Unemployed units pay non-working medical insurance often enough for its
# weight to be identifiable; everything else is the default calibration.
ACCEPTANCE_GENERATOR = GeneratorConfig(
    n_units=3000,
    n_periods=24,
    window=6,
    unemployed_pay_prob=(0.75, 0.0, 0.98, 0.0, 0.0, 0.3, 0.02),
    seed=1,
)

ACCEPTANCE_TRAIN = TrainConfig(seed=3, n_per_class=4000)

BASELINE_LABEL = "MLP"
FOOTNOTE = ("Rows 7-11: a one-hidden-layer MLP stands in for the random forest / neural network "
            "baselines; random forests are not run.")


def split_windows(dataset: PanelDataset, config: TrainConfig, seed: int | None = None) -> tuple[WindowSet, WindowSet]:
    windows = windowize(dataset, config.window)
    return balanced_split(windows, config.n_per_class, config.seed if seed is None else seed)


@dataclass
class ComparisonResult:
    rows: list[ft.ComparisonRow]
    intnn: TrainResult
    baselines: dict[tuple[str, str], TrainResult] = field(default_factory=dict)

    def table(self, title: str = "Model Comparisons") -> str:
        return ft.comparison_table(self.rows, title=title, footnote=FOOTNOTE)

    def accuracy(self, index: int) -> float:
        return next(r.accuracy for r in self.rows if r.index == index)

    @property
    def logistic_npc(self) -> TrainResult:
        return self.baselines[("logistic", "NPC")]


def run_comparison(train_set: WindowSet, test_set: WindowSet, config: TrainConfig,
                   insurance_names=INSURANCE_NAMES) -> ComparisonResult:
    """Train the interpretable network and both baseline families on every feature subset."""
    net = train("intnn", *train_set.xy, config, test=test_set.xy)
    rows = [ft.ComparisonRow(1, "IntNN", "-", evaluate(net.params, "intnn", *test_set.xy).accuracy)]
    baselines = {}
    index = 2
    for kind, label in (("logistic", "Logistic"), ("mlp", BASELINE_LABEL)):
        for subset in ft.FEATURE_SUBSETS:
            res = ft.fit_baseline(kind, subset, train_set.xy, config, insurance_names, test_windows=test_set.xy)
            Xte = ft.feature_matrix(test_set.payments)[:, ft.subset_columns(subset, len(insurance_names))]
            acc = evaluate(res.params, kind, Xte, test_set.labels).accuracy
            rows.append(ft.ComparisonRow(index, label, subset, acc))
            baselines[(kind, subset)] = res
            log.info("row %d %s %s: %.5f", index, label, subset, acc)
            index += 1
    return ComparisonResult(rows, net, baselines)


@dataclass
class RobustnessResult:
    clean: ComparisonResult
    corrupt: ComparisonResult
    rate: float

    def parameter_diff(self, insurance_names=INSURANCE_NAMES) -> str:
        a, b = self.clean.intnn.params, self.corrupt.intnn.params
        lines = [f"{'parameter':<28s} {'clean':>12s} {'corrupt':>12s}"]

        def row(name, x, y):
            lines.append(f"{name:<28s} {x:>12.6g} {y:>12.6g}")

        row("c", a.c, b.c)
        row("d", a.d, b.d)
        for f in range(a.channels):
            tag = f"[{f + 1}]" if a.channels > 1 else ""
            for j, name in enumerate(insurance_names):
                row(f"w{tag} {name}", a.w[f, j], b.w[f, j])
            row(f"b{tag}", a.b[f], b.b[f])
            row(f"k{tag}", a.k[f], b.k[f])
            row(f"u{tag}", a.u[f], b.u[f])
        row("v", a.v, b.v)
        return "\n".join(lines) + "\n"

    @property
    def k_clean(self) -> np.ndarray:
        return self.clean.intnn.params.k

    @property
    def k_corrupt(self) -> np.ndarray:
        return self.corrupt.intnn.params.k


def run_robustness(dataset: PanelDataset, rate: float, config: TrainConfig, seed: int | None = None) -> RobustnessResult:
    """Rerun the comparison after zeroing a fraction ``rate`` of payment cells.

    Both runs use the same windows: corruption leaves labels alone, so the
    balanced split draws identical (unit, period) pairs.
    """
    seed = config.seed if seed is None else seed
    clean_tr, clean_te = split_windows(dataset, config, seed)
    clean = run_comparison(clean_tr, clean_te, config, dataset.insurance_names)
    corrupted = corrupt_missing(dataset, rate, seed)
    bad_tr, bad_te = split_windows(corrupted, config, seed)
    corrupt = run_comparison(bad_tr, bad_te, config, dataset.insurance_names)
    return RobustnessResult(clean, corrupt, rate)


def step_series(T: int, t0: int) -> np.ndarray:
    """Zeros followed by ``t0`` trailing ones."""
    return (np.arange(1, T + 1) > T - t0).astype(np.float64)


def noisy_step_series(T: int, t0: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Step series with each trailing one replaced by 0.9 with probability ``noise``."""
    x = step_series(T, t0)
    hit = (rng.random(T) < noise) & (x == 1.0)
    x[hit] = 0.9
    return x


def filter_demo(mode: str, T: int, ks, t0s, noise: float = 0.05, seed: int = 0) -> list[tuple[int, float, float]]:
    """Terminal filter value for each ``(t0, k)`` on a step (``example1``) or noisy step (``example2``) series."""
    rng = make_rng(seed)
    rows = []
    for t0 in t0s:
        if mode == "example1":
            x = step_series(T, t0)
        elif mode == "example2":
            x = noisy_step_series(T, t0, noise, rng)
        else:
            raise ValueError(f"unknown filter demo mode {mode!r}")
        for k in ks:
            rows.append((int(t0), float(k), smooth_persistent_change(x, k)))
    return rows
