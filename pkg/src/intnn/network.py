"""Four-layer interpretable network for windows of panel payments.

Layers, applied to an ``m x s`` payment window (oldest period first):

1. splitting: ``h = sigmoid(c * x + d)`` elementwise, shared ``c, d``;
2. reduction: per channel ``f`` and period, ``r_f = sigmoid(w_f . h + b_f)``;
3. filter: ``z_f = D(r_f, k_f)`` with ``k_f = sigmoid(kappa_f)``;
4. head: ``P(y = 1) = sigmoid(sum_f u_f z_f + v)``.

The loss is mean binary cross-entropy plus ``lam * ||u||_1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .filters import filter_backward, run_filter

__all__ = [
    "INSURANCE_NAMES",
    "PROB_EPS",
    "LOGIT_CLAMP",
    "bce",
    "bce_logits",
    "NetworkParams",
    "WindowSample",
    "ChannelReport",
    "InterpretationReport",
    "SignComparison",
    "init_params",
    "forward",
    "forward_batch",
    "loss",
    "loss_batch",
    "gradient",
    "loss_and_gradient",
    "predict_batch",
    "interpret",
    "compare_interpretations",
    "save_model",
    "load_model",
]

INSURANCE_NAMES = (
    "endowment",
    "working medical",
    "unemployment",
    "injury",
    "maternity",
    "non-working medical",
    "HPF",
)

PROB_EPS = 1e-12
# logit at which the probability reaches the clamp PROB_EPS / 1 - PROB_EPS
LOGIT_CLAMP = float(np.log1p(-PROB_EPS) - np.log(PROB_EPS))
MODEL_FORMAT_VERSION = 1


@dataclass
class NetworkParams:
    c: float
    d: float
    w: np.ndarray  # (C, m)
    b: np.ndarray  # (C,)
    kappa: np.ndarray  # (C,)
    u: np.ndarray  # (C,)
    v: float
    s: int = 6

    def __post_init__(self):
        self.c = float(self.c)
        self.d = float(self.d)
        self.v = float(self.v)
        self.w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        self.kappa = np.atleast_1d(np.asarray(self.kappa, dtype=np.float64))
        self.u = np.atleast_1d(np.asarray(self.u, dtype=np.float64))
        C = self.w.shape[0]
        for name in ("b", "kappa", "u"):
            if getattr(self, name).shape != (C,):
                raise ValueError(f"{name} must have length C={C}, got {getattr(self, name).shape}")
        if int(self.s) < 1:
            raise ValueError("s must be positive")
        self.s = int(self.s)

    @property
    def m(self) -> int:
        return self.w.shape[1]

    @property
    def channels(self) -> int:
        return self.w.shape[0]

    @property
    def k(self) -> np.ndarray:
        return expit(self.kappa)

    @classmethod
    def from_smoothing(cls, *, c, d, w, b, k, u, v, s=6) -> "NetworkParams":
        """Build params from smoothing values ``k`` in (0, 1) instead of ``kappa``."""
        k = np.atleast_1d(np.asarray(k, dtype=np.float64))
        if np.any((k <= 0.0) | (k >= 1.0)):
            raise ValueError("k must lie strictly inside (0, 1)")
        return cls(c=c, d=d, w=w, b=b, kappa=np.log(k) - np.log1p(-k), u=u, v=v, s=s)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.to_dict().values())

    def to_dict(self) -> dict[str, np.ndarray]:
        return {
            "c": np.array(self.c),
            "d": np.array(self.d),
            "w": self.w.copy(),
            "b": self.b.copy(),
            "kappa": self.kappa.copy(),
            "u": self.u.copy(),
            "v": np.array(self.v),
        }

    @classmethod
    def from_dict(cls, arrays: Mapping[str, np.ndarray], s: int) -> "NetworkParams":
        return cls(
            c=float(arrays["c"]),
            d=float(arrays["d"]),
            w=np.array(arrays["w"], dtype=np.float64),
            b=np.array(arrays["b"], dtype=np.float64),
            kappa=np.array(arrays["kappa"], dtype=np.float64),
            u=np.array(arrays["u"], dtype=np.float64),
            v=float(arrays["v"]),
            s=s,
        )

    def copy(self) -> "NetworkParams":
        return NetworkParams.from_dict(self.to_dict(), self.s)

    def permute_channels(self, order: Sequence[int]) -> "NetworkParams":
        order = list(order)
        return NetworkParams(self.c, self.d, self.w[order], self.b[order], self.kappa[order],
                             self.u[order], self.v, self.s)

    def flip_channel(self, f: int) -> "NetworkParams":
        """Negate ``w_f, b_f, u_f``: the reduced series is complemented and the head compensates."""
        out = self.copy()
        out.w[f] = -out.w[f]
        out.b[f] = -out.b[f]
        out.u[f] = -out.u[f]
        return out


@dataclass
class WindowSample:
    payments: np.ndarray  # (m, s), column 0 is the oldest period
    label: int | None = None

    def __post_init__(self):
        self.payments = np.asarray(self.payments, dtype=np.float64)
        if self.payments.ndim != 2:
            raise ValueError("payments must be an m x s matrix")
        if np.any(self.payments < 0) or not np.all(np.isfinite(self.payments)):
            raise ValueError("payments must be finite and non-negative")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


def init_params(rng: np.random.Generator, m: int, s: int, channels: int = 1,
                payment_scale: float = 1.0) -> NetworkParams:
    """Random start that keeps every sigmoid away from saturation.

    ``c`` is divided by ``payment_scale`` so the initial splitting acts on
    payments measured in units of the scale.
    """
    c = rng.uniform(0.5, 1.5) / payment_scale
    d = rng.uniform(-1.0, 1.0)
    w = rng.uniform(-0.5, 0.5, size=(channels, m))
    u = rng.uniform(-0.5, 0.5, size=channels)
    return NetworkParams(c=c, d=d, w=w, b=np.zeros(channels), kappa=np.full(channels, 2.0),
                         u=u, v=0.0, s=s)


def _as_batch(params: NetworkParams, payments) -> np.ndarray:
    X = np.asarray(payments, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (params.m, params.s):
        raise ValueError(
            f"payment windows of shape {X.shape[1:]} do not match the network's (m, s) = ({params.m}, {params.s})"
        )
    return X


def _head(z: np.ndarray, u: np.ndarray, v: float) -> np.ndarray:
    # sorting the terms makes the sum independent of channel order
    terms = np.sort(z * u, axis=-1)
    return terms.sum(axis=-1) + v


def _forward_cache(params: NetworkParams, X: np.ndarray):
    A = params.c * X + params.d
    H = expit(A)  # (N, m, s)
    S = np.einsum("cj,njs->ncs", params.w, H) + params.b[None, :, None]  # (N, C, s)
    R = expit(S)
    Rbar = expit(-S)
    k = params.k
    trace = run_filter(R, Rbar, k[None, :])
    z = trace.value  # (N, C)
    logit = _head(z, params.u, params.v)
    return H, R, trace, z, logit


def forward_batch(params: NetworkParams, payments) -> np.ndarray:
    """Employment probability for each window in ``payments`` (N, m, s)."""
    X = _as_batch(params, payments)
    return expit(_forward_cache(params, X)[-1])


def forward(params: NetworkParams, sample: WindowSample) -> float:
    return float(forward_batch(params, sample.payments)[0])


def _labels(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple):
        X, y = batch
    else:
        batch = list(batch)
        if not batch:
            raise ValueError("batch is empty")
        X = np.stack([s.payments for s in batch])
        y = np.array([s.label for s in batch])
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("batch is empty")
    return X, y


def bce(prob: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_logits(logit: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross-entropy from logits, clamped like :func:`bce`.

    Working with logits avoids forming ``1 - p`` for confident predictions.
    """
    a = np.clip(logit, -LOGIT_CLAMP, LOGIT_CLAMP)
    return np.logaddexp(0.0, a) - y * a


def bce_slope(logit: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d bce / d logit per sample; zero where the probability is clamped."""
    live = np.abs(logit) < LOGIT_CLAMP
    return np.where(live, expit(logit) - y, 0.0)


def loss_batch(params: NetworkParams, X, y, lam: float = 0.0) -> float:
    X = _as_batch(params, X)
    logit = _forward_cache(params, X)[-1]
    return float(np.mean(bce_logits(logit, np.asarray(y, dtype=np.float64))) + lam * np.abs(params.u).sum())


def loss(params: NetworkParams, batch, lam: float = 0.0) -> float:
    """Mean cross-entropy over ``batch`` plus ``lam * ||u||_1``.

    ``batch`` is a list of labelled :class:`WindowSample` or an ``(X, y)`` pair.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    X, y = _labels(batch)
    return loss_batch(params, X, y, lam)


def loss_and_gradient(params: NetworkParams, X, y, lam: float = 0.0) -> tuple[float, NetworkParams]:
    X = _as_batch(params, X)
    y = np.asarray(y, dtype=np.float64)
    N = X.shape[0]
    H, R, trace, z, logit = _forward_cache(params, X)
    value = float(np.mean(bce_logits(logit, y)) + lam * np.abs(params.u).sum())
    g_logit = bce_slope(logit, y) / N
    g_u = z.T @ g_logit + lam * np.sign(params.u)
    g_v = g_logit.sum()

    g_z = g_logit[:, None] * params.u[None, :]
    g_R, g_Rbar, g_k = filter_backward(trace, g_z)
    k = params.k
    g_kappa = g_k.sum(axis=0) * k * (1.0 - k)

    # R = sigmoid(S), Rbar = sigmoid(-S)
    g_S = (g_R - g_Rbar) * R * (1.0 - R)
    g_w = np.einsum("ncs,njs->cj", g_S, H)
    g_b = g_S.sum(axis=(0, 2))
    g_H = np.einsum("ncs,cj->njs", g_S, params.w)
    g_A = g_H * H * (1.0 - H)
    g_c = float((g_A * X).sum())
    g_d = float(g_A.sum())
    grad = NetworkParams(c=g_c, d=g_d, w=g_w, b=g_b, kappa=g_kappa, u=g_u, v=g_v, s=params.s)
    return value, grad


def gradient(params: NetworkParams, batch, lam: float = 0.0) -> NetworkParams:
    """Gradient of :func:`loss` for every parameter, shaped like ``params``.

    The L1 term uses the subgradient 0 at ``u_f = 0``.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    X, y = _labels(batch)
    return loss_and_gradient(params, X, y, lam)[1]


def predict_batch(params: NetworkParams, samples, threshold: float = 0.5) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        X = samples
    else:
        X = np.stack([s.payments for s in samples])
    return (forward_batch(params, X) >= threshold).astype(np.int64)


# ---------------------------------------------------------------------------
# interpretation


@dataclass
class ChannelReport:
    index: int
    weights: list[tuple[str, float]]  # sorted by |weight|, largest first
    intercept: float
    k: float
    head_weight: float

    @property
    def positive(self) -> list[str]:
        return [n for n, x in self.weights if x > 0]

    @property
    def negative(self) -> list[str]:
        return [n for n, x in self.weights if x < 0]


@dataclass
class InterpretationReport:
    c: float
    d: float
    splitting_threshold: float | None
    channels: list[ChannelReport]
    head_intercept: float
    active_channels: list[int] = field(default_factory=list)

    @property
    def channel_weights(self) -> list[dict[str, float]]:
        return [dict(ch.weights) for ch in self.channels]

    @property
    def channel_smoothing(self) -> list[float]:
        return [ch.k for ch in self.channels]

    @property
    def head_weights(self) -> list[float]:
        return [ch.head_weight for ch in self.channels]

    def format(self) -> str:
        lines = ["Splitting layer: sigmoid(c * payment + d)"]
        lines.append(f"  c = {self.c:.6g}, d = {self.d:.6g}")
        if self.splitting_threshold is None:
            lines.append("  threshold -d/c: undefined (c = 0)")
        else:
            lines.append(f"  threshold -d/c = {self.splitting_threshold:.4f}")
        for ch in self.channels:
            lines.append(f"Channel {ch.index + 1}:")
            lines.append(f"  reduction intercept b = {ch.intercept:.6g}")
            for name, x in ch.weights:
                lines.append(f"    {name:<22s} {x:+.4f}")
            lines.append(f"  positive: {', '.join(ch.positive) or '(none)'}")
            lines.append(f"  negative: {', '.join(ch.negative) or '(none)'}")
            lines.append(f"  smoothing k = {ch.k:.6g}")
            lines.append(f"  head weight u = {ch.head_weight:+.6g}")
        lines.append(f"Head intercept v = {self.head_intercept:+.6g}")
        active = ", ".join(str(f + 1) for f in self.active_channels) or "(none)"
        lines.append(f"Active channels: {active}")
        return "\n".join(lines) + "\n"


def interpret(params: NetworkParams, feature_names: Sequence[str], active_tol: float = 1e-3) -> InterpretationReport:
    names = list(feature_names)
    if len(names) != params.m:
        raise ValueError(f"expected {params.m} feature names, got {len(names)}")
    threshold = None if params.c == 0 else -params.d / params.c
    k = params.k
    channels = []
    for f in range(params.channels):
        pairs = sorted(zip(names, params.w[f].tolist()), key=lambda nx: -abs(nx[1]))
        channels.append(ChannelReport(index=f, weights=pairs, intercept=float(params.b[f]),
                                      k=float(k[f]), head_weight=float(params.u[f])))
    active = [f for f in range(params.channels) if abs(params.u[f]) > active_tol]
    return InterpretationReport(c=params.c, d=params.d, splitting_threshold=threshold, channels=channels,
                                head_intercept=params.v, active_channels=active)


@dataclass
class SignComparison:
    rows: list[tuple[str, float, float, bool]]  # name, network weight, logistic coefficient, agree

    @property
    def agreements(self) -> int:
        return sum(1 for r in self.rows if r[3])

    def format(self) -> str:
        lines = [f"{'insurance':<22s} {'network w':>10s} {'logistic':>10s}  opposite"]
        for name, w, beta, agree in self.rows:
            lines.append(f"{name:<22s} {w:>+10.4f} {beta:>+10.4f}  {'yes' if agree else 'no'}")
        lines.append(f"opposite-sign agreement: {self.agreements}/{len(self.rows)}")
        return "\n".join(lines) + "\n"


def compare_interpretations(params: NetworkParams, feature_names: Sequence[str],
                            logistic_coefficients: Mapping[str, float], channel: int = 0) -> SignComparison:
    """Compare reduction weights against logistic coefficients on not-pay run lengths.

    Those logistic inputs count periods of *not* paying, so the two models
    agree when the signs are opposite.
    """
    names = list(feature_names)
    if len(names) != params.m:
        raise ValueError(f"expected {params.m} feature names, got {len(names)}")
    if set(names) != set(logistic_coefficients):
        missing = set(names) ^ set(logistic_coefficients)
        raise ValueError(f"feature names do not match logistic coefficients: {sorted(missing)}")
    rows = []
    for name, w in zip(names, params.w[channel].tolist()):
        beta = float(logistic_coefficients[name])
        rows.append((name, w, beta, bool(np.sign(w) * np.sign(beta) < 0)))
    return SignComparison(rows)


# ---------------------------------------------------------------------------
# serialization


def params_document(params: NetworkParams) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "kind": "intnn",
        "m": params.m,
        "s": params.s,
        "C": params.channels,
        "c": params.c,
        "d": params.d,
        "channels": [
            {"w": params.w[f].tolist(), "b": float(params.b[f]), "kappa": float(params.kappa[f])}
            for f in range(params.channels)
        ],
        "u": params.u.tolist(),
        "v": params.v,
    }


def params_from_document(doc: Mapping) -> NetworkParams:
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    chans = doc["channels"]
    params = NetworkParams(
        c=doc["c"],
        d=doc["d"],
        w=[ch["w"] for ch in chans],
        b=[ch["b"] for ch in chans],
        kappa=[ch["kappa"] for ch in chans],
        u=doc["u"],
        v=doc["v"],
        s=doc["s"],
    )
    if params.m != doc["m"] or params.channels != doc["C"]:
        raise ValueError("model document dimensions are inconsistent")
    return params


def save_model(params: NetworkParams, path) -> None:
    Path(path).write_text(json.dumps(params_document(params), indent=2) + "\n", encoding="utf-8")


def load_model(path) -> NetworkParams:
    return params_from_document(json.loads(Path(path).read_text(encoding="utf-8")))
