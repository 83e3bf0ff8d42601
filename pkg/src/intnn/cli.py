"""Command-line entry point: ``intnn <command> [options]``.

Exit codes: 0 success, 1 failed check, 2 usage or configuration error,
3 data integrity error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import features as ft
from . import network as nw
from .data import (DataIntegrityError, GeneratorConfig, generate_synthetic, generate_teacher_labeled, load_csv,
                   save_csv)
from .training import ConfigError, TrainConfig, evaluate, gradient_check, make_rng, read_config_file, train
from .training import check_gradients

log = logging.getLogger("intnn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config and model files


def load_configs(path) -> tuple[TrainConfig, GeneratorConfig]:
    """Split one flat config file between the training and generator settings."""
    values = read_config_file(path) if path else {}
    train_keys = {f for f in TrainConfig.__dataclass_fields__} | set(TrainConfig.KEY_ALIASES)
    gen_keys = set(GeneratorConfig.__dataclass_fields__)
    for key in values:
        if key not in train_keys and key not in gen_keys:
            raise ConfigError(f"unknown config key {key!r}")
    tcfg = TrainConfig.from_mapping({k: v for k, v in values.items() if k in train_keys})
    gcfg = GeneratorConfig.from_mapping({k: v for k, v in values.items() if k in gen_keys})
    return tcfg, gcfg


def model_document(kind: str, params, subset: str | None = None) -> dict:
    if kind == "intnn":
        return nw.params_document(params)
    doc = {"version": nw.MODEL_FORMAT_VERSION, "kind": kind, "features": subset, "names": params.names}
    doc.update({k: np.asarray(a).tolist() for k, a in params.to_dict().items()})
    return doc


def save_any(path, kind: str, params, subset: str | None = None) -> None:
    Path(path).write_text(json.dumps(model_document(kind, params, subset), indent=2) + "\n", encoding="utf-8")


def load_any(path):
    """Return ``(kind, params, feature subset)`` from a model file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataIntegrityError(f"{path}: not a model file ({exc})") from None
    kind = doc.get("kind")
    if kind == "intnn":
        return kind, nw.params_from_document(doc), None
    if kind == "logistic":
        return kind, ft.LogisticParams(doc["weights"], doc["intercept"], doc["names"]), doc["features"]
    if kind == "mlp":
        return kind, ft.MLPParams(doc["W1"], doc["b1"], doc["w2"], doc["b2"], doc["names"]), doc["features"]
    raise DataIntegrityError(f"{path}: unknown model kind {kind!r}")


def _read_data(path):
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return load_csv(path)


def _inputs(kind, subset, windows, m):
    if kind == "intnn":
        return windows.payments
    return ft.feature_matrix(windows.payments)[:, ft.subset_columns(subset, m)]


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    tcfg, gcfg = load_configs(args.config)
    if args.acceptance:
        gcfg = ex.ACCEPTANCE_GENERATOR
    if args.seed is not None:
        gcfg = GeneratorConfig(**{**gcfg.__dict__, "seed": args.seed})
    teacher = None
    if args.teacher:
        kind, teacher, _ = load_any(args.teacher)
        if kind != "intnn":
            raise UsageError("--teacher must be an interpretable-network model file")
    elif args.acceptance:
        teacher = ex.ACCEPTANCE_TEACHER
    ds = generate_teacher_labeled(gcfg, teacher) if teacher is not None else generate_synthetic(gcfg)
    save_csv(ds, args.out)
    print(f"wrote {len(ds)} records to {args.out}")
    return EXIT_OK


def _write_history(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "train_loss", "train_acc", "test_acc"])
        for rec in history:
            test = "" if rec.test is None else repr(rec.test.accuracy)
            wr.writerow([rec.epoch, repr(rec.train.mean_loss), repr(rec.train.accuracy), test])


def cmd_train(args) -> int:
    tcfg, _ = load_configs(args.config)
    if args.seed is not None:
        tcfg = tcfg.replace(seed=args.seed)
    ds = _read_data(args.data)
    train_set, test_set = ex.split_windows(ds, tcfg)
    subset = None if args.model == "intnn" else args.features
    if subset is not None:
        try:
            ft.subset_columns(subset, ds.m)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    Xtr = _inputs(args.model, subset, train_set, ds.m)
    Xte = _inputs(args.model, subset, test_set, ds.m)
    names = None if subset is None else ft.subset_names(subset, ds.insurance_names)
    res = train(args.model, Xtr, train_set.labels, tcfg, test=(Xte, test_set.labels), names=names)
    save_any(args.out, args.model, res.params, subset)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    _write_history(metrics_path, res.history)
    final = evaluate(res.params, args.model, Xte, test_set.labels)
    print(f"model written to {args.out}; metrics history in {metrics_path}")
    print(f"test accuracy {final.accuracy:.5f} on {final.n} windows")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tcfg, _ = load_configs(args.config)
    kind, params, subset = load_any(args.model)
    ds = _read_data(args.data)
    if args.all:
        from .data import windowize

        windows = windowize(ds, tcfg.window)
    else:
        windows = ex.split_windows(ds, tcfg)[1]
    if len(windows) == 0:
        raise DataIntegrityError("no labelled windows to evaluate")
    met = evaluate(params, kind, _inputs(kind, subset, windows, ds.m), windows.labels)
    (tn, fp), (fn, tp) = met.confusion.tolist()
    print(f"n = {met.n}")
    print(f"accuracy = {met.accuracy:.5f}")
    print(f"mean_loss = {met.mean_loss:.6f}")
    print(f"confusion (rows true 0/1, cols predicted 0/1): [[{tn}, {fp}], [{fn}, {tp}]]")
    return EXIT_OK


def cmd_compare(args) -> int:
    tcfg, _ = load_configs(args.config)
    ds = _read_data(args.data)
    train_set, test_set = ex.split_windows(ds, tcfg)
    result = ex.run_comparison(train_set, test_set, tcfg, ds.insurance_names)
    text = result.table()
    ft.write_table(text, args.out)
    print(text, end="")
    return EXIT_OK


def cmd_interpret(args) -> int:
    kind, params, _ = load_any(args.model)
    if kind != "intnn":
        raise UsageError("interpret needs an interpretable-network model")
    names = [n.strip() for n in args.names.split(",")] if args.names else list(nw.INSURANCE_NAMES)
    if len(names) != params.m:
        raise UsageError(f"--names lists {len(names)} names, model has m = {params.m}")
    text = nw.interpret(params, names).format()
    if args.logistic:
        lkind, lparams, _ = load_any(args.logistic)
        if lkind != "logistic":
            raise UsageError("--logistic must be a logistic baseline model file")
        coef = {}
        for name, beta in lparams.coefficients().items():
            if name.startswith("npc:"):
                coef[name[4:]] = beta
        try:
            cmp = nw.compare_interpretations(params, names, coef)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        text += "\nSign comparison with logistic NPC coefficients\n" + cmp.format()
    print(text, end="")
    return EXIT_OK


def cmd_filter_demo(args) -> int:
    try:
        ks = [float(k) for k in args.k.split(",")]
    except ValueError:
        raise UsageError(f"--k must be a comma-separated list of numbers, got {args.k!r}") from None
    if args.T < 1 or args.t0_step < 1:
        raise UsageError("--T and --t0-step must be positive")
    try:
        rows = ex.filter_demo(args.mode, args.T, ks, range(0, args.T + 1, args.t0_step), args.noise, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t0", "k", "value"])
        for t0, k, value in rows:
            wr.writerow([t0, repr(k), repr(value)])
    print(f"wrote {len(rows)} points to {args.out}")
    return EXIT_OK


def _quadratic_check(rng, perturb: float) -> dict[str, float]:
    n = 5
    M = rng.normal(size=(n, n))
    A = M @ M.T + np.eye(n)
    bvec = rng.normal(size=n)
    theta = rng.normal(size=n)

    def fn(arrays):
        t = arrays["theta"]
        return float(0.5 * t @ A @ t + bvec @ t)

    grad = A @ theta + bvec + perturb
    return check_gradients(fn, {"theta": theta}, {"theta": grad}, step=1e-3)


def _random_problem(kind: str, rng):
    m, s, n = 7, 6, 32
    X = np.where(rng.random((n, m, s)) < 0.6, rng.uniform(5.0, 100.0, (n, m, s)), 0.0)
    y = rng.integers(0, 2, n)
    if kind == "intnn":
        params = nw.NetworkParams(c=rng.uniform(0.05, 0.2), d=rng.uniform(-2.0, 0.0), w=rng.normal(0, 1, (2, m)),
                                  b=rng.normal(0, 1, 2), kappa=rng.normal(0, 1, 2), u=rng.normal(0, 1, 2),
                                  v=rng.normal(), s=s)
        return params, X, y
    F = ft.feature_matrix(X)
    if kind == "logistic":
        return ft.LogisticParams(rng.normal(0, 0.3, F.shape[1]), rng.normal()), F, y
    h = 16
    return ft.MLPParams(rng.normal(0, 0.3, (F.shape[1], h)), rng.normal(0, 0.3, h), rng.normal(0, 1, h),
                        rng.normal()), F, y


def cmd_gradcheck(args) -> int:
    rng = make_rng(args.seed)
    if args.model_kind == "quadratic":
        report = _quadratic_check(rng, args.perturb)
        tol = 1e-10
    else:
        params, X, y = _random_problem(args.model_kind, rng)
        report = gradient_check(args.model_kind, params, X, y, lam=0.0, step=1e-6)
        if args.perturb:
            report = {k: v + args.perturb for k, v in report.items()}
        tol = 1e-4
    worst = max(report.values())
    for name, err in report.items():
        print(f"{name:<10s} max relative error {err:.3e}")
    ok = worst <= tol
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {tol:g})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_robustness(args) -> int:
    tcfg, _ = load_configs(args.config)
    if not 0.0 <= args.rate <= 1.0:
        raise UsageError("--rate must lie in [0, 1]")
    ds = _read_data(args.data)
    result = ex.run_robustness(ds, args.rate, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clean = result.clean.table("Model Comparisons (clean)")
    corrupt = result.corrupt.table(f"Robust Model Comparisons ({args.rate:g} of payments zeroed)")
    diff = result.parameter_diff(ds.insurance_names)
    (out / "clean_table.txt").write_text(clean, encoding="utf-8")
    (out / "corrupt_table.txt").write_text(corrupt, encoding="utf-8")
    (out / "parameters.txt").write_text(diff, encoding="utf-8")
    print(clean)
    print(corrupt)
    print(diff, end="")
    for f, (a, b) in enumerate(zip(result.k_clean, result.k_corrupt)):
        print(f"smoothing k channel {f + 1}: clean {a:.6g}, corrupted {b:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intnn", description="Interpretable neural networks for payment panels")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic panel CSV")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", help="label with this network model instead of the employment state")
    p.add_argument("--acceptance", action="store_true", help="use the built-in acceptance generator and teacher")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model on a balanced split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=("intnn", "logistic", "mlp"), default="intnn")
    p.add_argument("--features", default="NPC, IC, PC", help="baseline feature subset, e.g. 'NPC, IC, PC'")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="per-epoch metrics CSV (default: <out>.metrics.csv)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved model on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--all", action="store_true", help="use every labelled window, not the test split")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="11-row model comparison table")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("interpret", help="layer-by-layer reading of a trained network")
    p.add_argument("--model", required=True)
    p.add_argument("--names", help="comma-separated insurance names")
    p.add_argument("--logistic", help="logistic NPC model to compare weight signs against")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("filter-demo", help="filter value against run length on step series")
    p.add_argument("--mode", choices=("example1", "example2"), default="example1")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--k", default="0.25,0.5,0.75,1.0")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--t0-step", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter_demo)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with central differences")
    p.add_argument("--model-kind", choices=("intnn", "logistic", "mlp", "quadratic"), default="intnn")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("robustness", help="compare models on clean and partly zeroed payments")
    p.add_argument("--data", required=True)
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_robustness)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataIntegrityError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
