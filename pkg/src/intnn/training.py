"""Adam, the minibatch training loop, evaluation metrics and gradient checks."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import features as ft
from . import network as nw

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "TrainConfig",
    "Metrics",
    "EpochRecord",
    "TrainResult",
    "AdamState",
    "adam_step",
    "make_rng",
    "train",
    "evaluate",
    "predict_proba",
    "gradient_check",
    "read_config_file",
    "MODEL_KINDS",
]

MODEL_KINDS = ("intnn", "logistic", "mlp")


class ConfigError(ValueError):
    """Invalid configuration value, key or shape."""


def make_rng(seed: int) -> np.random.Generator:
    # Philox is counter based, so streams are reproducible from the seed alone
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 200
    batch_size: int = 256
    lam: float | None = None
    seed: int = 0
    payment_scale: float = 1.0
    channels: int = 1
    window: int = 6
    hidden: int = 16
    n_per_class: int = 2000

    # config-file spelling of fields whose Python name differs
    KEY_ALIASES = {"lambda": "lam"}

    def __post_init__(self):
        checks = [
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (0 < self.beta1 < 1, "beta1 must lie in (0, 1)"),
            (0 < self.beta2 < 1, "beta2 must lie in (0, 1)"),
            (self.eps_adam > 0, "eps_adam must be > 0"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lam is None or self.lam >= 0, "lambda must be >= 0"),
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.payment_scale > 0, "payment_scale must be > 0"),
            (self.channels >= 1, "channels must be >= 1"),
            (self.window >= 1, "window must be >= 1"),
            (self.hidden >= 1, "hidden must be >= 1"),
            (self.n_per_class >= 2, "n_per_class must be >= 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def penalty(self) -> float:
        if self.lam is not None:
            return self.lam
        return 0.0 if self.channels == 1 else 1e-3

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "TrainConfig":
        return _from_mapping(cls, values)


def _coerce(tp, raw: str, key: str):
    try:
        if tp in ("int", int):
            return int(raw)
        if tp in ("float", float):
            return float(raw)
        if tp in ("float | None",):
            return None if raw.strip().lower() in ("", "none") else float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


def _from_mapping(cls, values: Mapping[str, str]):
    names = {f.name: f for f in dataclasses.fields(cls)}
    aliases = getattr(cls, "KEY_ALIASES", {})
    kwargs = {}
    for key, raw in values.items():
        name = aliases.get(key, key)
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        parser = getattr(cls, "parse_field", None)
        if parser is not None:
            kwargs[name] = parser(name, raw)
        else:
            kwargs[name] = _coerce(names[name].type, raw, key)
    return cls(**kwargs)


def read_config_file(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = value
    return values


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    accuracy: float
    mean_loss: float
    confusion: np.ndarray  # rows: true label 0/1, columns: predicted 0/1
    n: int

    @classmethod
    def from_predictions(cls, y_true, prob, mean_loss: float) -> "Metrics":
        y_true = np.asarray(y_true).astype(np.int64)
        pred = (np.asarray(prob) >= 0.5).astype(np.int64)
        confusion = np.zeros((2, 2), dtype=np.int64)
        np.add.at(confusion, (y_true, pred), 1)
        n = int(y_true.size)
        return cls(accuracy=int(np.trace(confusion)) / n, mean_loss=float(mean_loss), confusion=confusion, n=n)


@dataclass
class EpochRecord:
    epoch: int
    train: Metrics
    test: Metrics | None = None


@dataclass
class TrainResult:
    kind: str
    params: object
    history: list[EpochRecord]
    initial: Metrics
    config: TrainConfig

    def __iter__(self):
        # allows ``params, history = train(...)``
        return iter((self.params, self.history))


# ---------------------------------------------------------------------------
# model kinds


@dataclass(frozen=True)
class _Kind:
    name: str
    init: Callable
    loss_and_grad: Callable  # (params, X, y, lam) -> (loss, dict of grads)
    proba: Callable  # (params, X) -> probabilities
    rebuild: Callable  # (template params, dict of arrays) -> params
    penalized: bool


def _intnn_loss_and_grad(params, X, y, lam):
    value, grad = nw.loss_and_gradient(params, X, y, lam)
    return value, grad.to_dict()


def _intnn_init(rng, X, config, names):
    return nw.init_params(rng, m=X.shape[1], s=X.shape[2], channels=config.channels)


def _logistic_init(rng, X, config, names):
    return ft.LogisticParams(np.zeros(X.shape[1]), 0.0, names)


def _mlp_init(rng, X, config, names):
    d, h = X.shape[1], config.hidden
    bound = 1.0 / np.sqrt(d)
    return ft.MLPParams(
        W1=rng.uniform(-bound, bound, size=(d, h)),
        b1=np.zeros(h),
        w2=rng.uniform(-1.0, 1.0, size=h) / np.sqrt(h),
        b2=0.0,
        names=names,
    )


_KINDS = {
    "intnn": _Kind("intnn", _intnn_init, _intnn_loss_and_grad, nw.forward_batch,
                   lambda tpl, a: nw.NetworkParams.from_dict(a, tpl.s), True),
    "logistic": _Kind("logistic", _logistic_init, ft.logistic_loss_and_gradient, ft.logistic_proba,
                      lambda tpl, a: tpl.from_arrays(a), False),
    "mlp": _Kind("mlp", _mlp_init, ft.mlp_loss_and_gradient, ft.mlp_proba,
                 lambda tpl, a: tpl.from_arrays(a), False),
}


def _kind(name: str) -> _Kind:
    try:
        return _KINDS[name]
    except KeyError:
        raise ConfigError(f"unknown model kind {name!r}; expected one of {MODEL_KINDS}") from None


def predict_proba(kind: str, params, X) -> np.ndarray:
    return _kind(kind).proba(params, X)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(a, dtype=np.float64) for k, a in params.items()},
                   {k: np.zeros_like(a, dtype=np.float64) for k, a in params.items()})


def adam_step(state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              config: TrainConfig, step: int) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; moment buffers in ``state`` are replaced."""
    if step < 1:
        raise ConfigError("Adam step index starts at 1")
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ConfigError("parameter, gradient and optimizer state keys differ")
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    out = {}
    for key, p in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != np.shape(p) or state.m[key].shape != g.shape:
            raise ConfigError(f"shape mismatch for {key!r}: param {np.shape(p)}, grad {g.shape}")
        m = b1 * state.m[key] + (1.0 - b1) * g
        v = b2 * state.v[key] + (1.0 - b2) * (g * g)
        state.m[key] = m
        state.v[key] = v
        out[key] = p - config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps_adam)
    return out


# ---------------------------------------------------------------------------
# training loop


def _metrics(kind: _Kind, params, X, y, lam) -> Metrics:
    prob = kind.proba(params, X)
    mean_loss = float(np.mean(nw.bce(prob, y)))
    if kind.penalized:
        mean_loss += lam * float(np.abs(params.u).sum())
    return Metrics.from_predictions(y, prob, mean_loss)


def _scale_inputs(kind: str, X, config: TrainConfig):
    if kind == "intnn" and config.payment_scale != 1.0:
        return X / config.payment_scale
    return X


def _unscale_params(kind: str, params, config: TrainConfig):
    if kind == "intnn" and config.payment_scale != 1.0:
        params = params.copy()
        params.c = params.c / config.payment_scale
    return params


def train(kind: str, X, y, config: TrainConfig, *, test=None, init=None, names=None) -> TrainResult:
    """Minibatch Adam on the penalised cross-entropy.

    ``X`` is ``(N, m, s)`` payment windows for ``intnn`` and ``(N, d)``
    features for the baselines.  ``test`` is an optional ``(X, y)`` pair
    evaluated after every epoch.  The result unpacks as ``(params, history)``.
    """
    spec = _kind(kind)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("training split is empty")
    if y.shape != (X.shape[0],):
        raise ValueError("labels do not match the number of samples")
    lam = config.penalty if spec.penalized else 0.0
    rng = make_rng(config.seed)
    Xs = _scale_inputs(kind, X, config)
    if test is not None:
        test = (_scale_inputs(kind, np.asarray(test[0], dtype=np.float64), config),
                np.asarray(test[1], dtype=np.float64))

    params = init.copy() if init is not None else spec.init(rng, Xs, config, names)
    if init is not None and kind == "intnn" and config.payment_scale != 1.0:
        params.c = params.c * config.payment_scale
    arrays = params.to_dict()
    state = AdamState.zeros_like(arrays)
    initial = _metrics(spec, params, Xs, y, lam)
    history = []
    n = X.shape[0]
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = spec.loss_and_grad(params, Xs[idx], y[idx], lam)
            step += 1
            arrays = adam_step(state, arrays, grads, config, step)
            params = spec.rebuild(params, arrays)
        rec = EpochRecord(epoch, _metrics(spec, params, Xs, y, lam))
        if test is not None:
            rec.test = _metrics(spec, params, test[0], test[1], lam)
        history.append(rec)
        if epoch % 50 == 0 or epoch == config.epochs:
            log.debug("%s epoch %d: loss %.5f acc %.4f", kind, epoch, rec.train.mean_loss, rec.train.accuracy)
    return TrainResult(kind, _unscale_params(kind, params, config), history, initial, config)


def evaluate(params, kind: str, X, y) -> Metrics:
    """Accuracy at threshold 0.5, mean unpenalised cross-entropy and confusion counts."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    prob = predict_proba(kind, params, X)
    return Metrics.from_predictions(y, prob, float(np.mean(nw.bce(prob, y.astype(np.float64)))))


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps vanishing gradients from dividing by zero."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_difference(fn: Callable[[dict], float], arrays: Mapping[str, np.ndarray], step: float) -> dict[str, np.ndarray]:
    """Central differences of ``fn`` with respect to every entry of ``arrays``."""
    base = {k: np.array(a, dtype=np.float64) for k, a in arrays.items()}
    out = {}
    for key, arr in base.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = fn(base)
            arr[idx] = orig - step
            down = fn(base)
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * step)
        out[key] = g
    return out


def check_gradients(fn: Callable[[dict], float], arrays: Mapping[str, np.ndarray],
                    analytic: Mapping[str, np.ndarray], step: float = 1e-6, floor: float = 1e-8) -> dict[str, float]:
    """Max relative error per parameter group between ``analytic`` and central differences."""
    if not 0 < step <= 1e-3:
        raise ConfigError("finite-difference step must lie in (0, 1e-3]")
    numeric = finite_difference(fn, arrays, step)
    return {k: float(relative_error(analytic[k], numeric[k], floor).max(initial=0.0)) for k in arrays}


def gradient_check(kind: str, params, X, y, lam: float = 0.0, step: float = 1e-6,
                   floor: float = 1e-8) -> dict[str, float]:
    spec = _kind(kind)
    _, analytic = spec.loss_and_grad(params, X, y, lam)

    def fn(arrays):
        return spec.loss_and_grad(spec.rebuild(params, arrays), X, y, lam)[0]

    return check_gradients(fn, params.to_dict(), analytic, step, floor)
