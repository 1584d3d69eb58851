"""Command-line front end: ``squeezy {fit,transform,simulate,bench,mvncheck}``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .codata import GroupStructure, load_codata_csv
from .families import get_family
from .glm import DesignData
from .enet import SolverWarning
from .marginal import ConvergenceWarning, RidgePenaltyState

logger = logging.getLogger("squeezy")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2
THREADS_ENV = "SQUEEZY_NUM_THREADS"


class InputError(ValueError):
    """Malformed user input."""


# ---------------------------------------------------------------- io helpers

def read_design_csv(path, response: str | None):
    """Parse a numeric CSV with a header row.

    Returns ``(y, X, feature_names)``; ``y`` is None when ``response`` is None.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise InputError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {lineno} has {len(row)} fields, "
                                 f"expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise InputError(f"{path}: row {lineno}, column {col!r}: "
                                     f"not a number: {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    table = np.array(rows)
    if not np.all(np.isfinite(table)):
        r, c = np.argwhere(~np.isfinite(table))[0]
        raise InputError(f"{path}: row {r + 2}, column {header[c]!r}: non-finite value")
    if response is None:
        return None, table, header
    if response not in header:
        raise InputError(f"{path}: response column {response!r} not found")
    j = header.index(response)
    keep = [k for k in range(len(header)) if k != j]
    return table[:, j], table[:, keep], [header[k] for k in keep]


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def parse_alpha(text: str) -> list[float]:
    try:
        alphas = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise InputError(f"--alpha: cannot parse {text!r}") from None
    if not alphas or any(not 0.0 <= a <= 1.0 for a in alphas):
        raise InputError("--alpha values must lie in [0, 1]")
    return alphas


def write_manifest(out: Path, config: dict):
    blob = json.dumps(config, sort_keys=True).encode()
    write_json(out / "manifest.json", {
        "config": config,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seed": config.get("seed"),
        "version": __version__,
    })


@contextlib.contextmanager
def thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    try:
        limit = int(n)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {n!r}") from None
    with threadpool_limits(limits=limit):
        yield


# ---------------------------------------------------------------- subcommands

def _config(args, skip=("func",)) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}


def _standardize(X):
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    if np.any(scale == 0):
        raise InputError("--standardize: constant column(s) cannot be scaled")
    return center, scale


def cmd_fit(args) -> int:
    from .pipeline import fit_group_adaptive

    family = get_family(args.family)
    alphas = parse_alpha(args.alpha)
    y, X, names = read_design_csv(args.design, args.response)
    family.check_response(y)
    unpen_names = [u for u in (args.unpenalized or "").split(",") if u]
    missing = sorted(set(unpen_names) - set(names))
    if missing:
        raise InputError(f"--unpenalized: unknown column(s) {missing}")
    unpen_idx = [names.index(u) for u in unpen_names]
    pen_names = [nm for nm in names if nm not in set(unpen_names)]
    pen_cols = [names.index(nm) for nm in pen_names]

    center = np.zeros(X.shape[1])
    scale = np.ones(X.shape[1])
    if args.standardize:
        c, s = _standardize(X[:, pen_cols])
        scale[pen_cols] = s
        if args.intercept:
            center[pen_cols] = c
        X = (X - center) / scale

    data = DesignData.from_arrays(y, X, unpen_idx, intercept=args.intercept,
                                  feature_names=names)
    if args.codata:
        if not Path(args.codata).is_file():
            raise InputError(f"{args.codata}: no such file")
        try:
            groups = load_codata_csv(args.codata, pen_names)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        groups = GroupStructure.single(len(pen_names))
    group_names = [str(g) for g in groups.names]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    method = {"nm": "nelder_mead", "grad": "gradient"}[args.optimizer]
    result = fit_group_adaptive(data, family, groups, alpha=alphas, method=method,
                                recalibrate=args.recalibrate, n_folds=args.folds,
                                seed=args.seed)
    state = result.ridge.state

    penalties = {
        "family": family.kind,
        "groups": group_names,
        "ridge": {"rho": state.rho.tolist(), "lambda": state.lambdas.tolist(),
                  "phi": float(state.phi)},
        "elastic_net": [
            {"alpha": f.alpha, "lambda0": f.lambda0,
             "lambda": f.penalty.lambda_group.tolist(),
             "lambda_before_recalibration": f.base_penalty.lambda_group.tolist(),
             "truncated": list(f.penalty.truncated)}
            for f in result.fits
        ],
    }
    write_json(out / "penalties.json", penalties)

    Z = np.asarray(groups.Z)
    member = {nm: ";".join(group_names[g] for g in np.flatnonzero(Z[k]))
              for k, nm in enumerate(pen_names)}
    rows = []
    for f in result.fits:
        beta = f.fit.coef(data)
        # back to the original column scale
        coef = beta.copy()
        off = 1 if args.intercept else 0
        coef[off:] = beta[off:] / scale
        if args.intercept:
            coef[0] = beta[0] - float(np.sum(beta[off:] * center / scale))
        for nm, b in zip(data.feature_names, coef):
            rows.append([nm, repr(float(b)), member.get(nm, ""), repr(f.alpha)])
    write_csv(out / "coefficients.csv", ["feature_id", "beta", "group", "alpha"], rows)

    ev = result.evaluation
    report = {
        "neg_log_marginal_likelihood": _num(ev.neg_log_ml),
        "terms": {"loglik": _num(ev.loglik_term), "quadratic": _num(ev.quad_term),
                  "logdet": _num(ev.logdet_term)},
        "gradient_norm": _num(result.ridge.grad_norm),
        "optimizer": {"method": result.ridge.method, "converged": result.ridge.converged,
                      "n_evaluations": result.ridge.n_evaluations,
                      "message": result.ridge.message},
        "recalibrated": result.recalibrated,
        "fits": [{"alpha": f.alpha, "converged": f.fit.converged,
                  "kkt_max_violation": _num(f.fit.kkt_max_violation),
                  "n_nonzero": f.fit.n_nonzero, "objective": _num(f.fit.objective)}
                 for f in result.fits],
        "converged": result.converged,
    }
    write_json(out / "fit_report.json", report)
    write_json(out / "timings.json", {k: float(v) for k, v in result.timings.items()})
    write_manifest(out, _config(args))
    return EXIT_OK if result.converged else EXIT_WARN


def _load_state(path) -> tuple[RidgePenaltyState, list]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    ridge = obj.get("ridge", obj)
    if "rho" in ridge:
        rho = np.asarray(ridge["rho"], dtype=float)
    elif "lambda" in ridge:
        rho = np.log(np.asarray(ridge["lambda"], dtype=float))
    else:
        raise InputError(f"{path}: needs 'rho' or 'lambda'")
    phi = float(ridge.get("phi", 1.0))
    names = obj.get("groups") or [str(g) for g in range(rho.size)]
    return RidgePenaltyState(rho, phi), names


def cmd_transform(args) -> int:
    from .transform import transform_ridge_to_en

    state, names = _load_state(args.state)
    groups = GroupStructure.from_labels(list(names), names=names)
    rows = []
    for a in parse_alpha(args.alpha):
        pen = transform_ridge_to_en(state, groups, a)
        for g, nm in enumerate(names):
            rows.append([repr(a), nm, repr(float(state.lambdas[g])),
                         repr(float(state.phi / state.lambdas[g])),
                         repr(float(pen.lambda_group[g])), pen.truncated[g]])
    header = ["alpha", "group", "lambda_ridge", "prior_variance", "lambda_en", "truncated"]
    if args.out:
        write_csv(args.out, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return EXIT_OK


def _settings(args):
    from .simulate import SimSettings

    return SimSettings.named(args.setting, n=args.n, p=args.p, G=args.groups,
                             alpha_fit=args.alpha_fit, seed=args.seed,
                             n_test=args.n_test, family=args.family)


def cmd_simulate(args) -> int:
    from .simulate import simulate_dataset

    settings = _settings(args)
    train, test, beta = simulate_dataset(settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = list(train.feature_names)
    for nm, d in (("train.csv", train), ("test.csv", test)):
        write_csv(out / nm, ["y"] + names,
                  [[repr(float(v)) for v in np.r_[yi, xi]] for yi, xi in zip(d.y, d.X)])
    write_csv(out / "beta.csv", ["feature_id", "beta"],
              [[nm, repr(float(b))] for nm, b in zip(names, beta)])
    labels = settings.group_labels()
    write_csv(out / "codata.csv", ["feature_id", "group_id"],
              [[nm, str(int(g))] for nm, g in zip(names, labels)])
    write_manifest(out, _config(args))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import VARIANTS, run_benchmark

    variants = tuple(v for v in args.variants.split(",") if v)
    bad = sorted(set(variants) - set(VARIANTS))
    if bad:
        raise InputError(f"--variants: unknown {bad}; choose from {list(VARIANTS)}")
    settings = _settings(args)
    result = run_benchmark(settings, args.replicates, variants, n_folds=args.folds,
                           n_jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(out / "results.csv", include_timing=False)
    write_csv(out / "timings.csv", ["replicate", "variant", "seconds"],
              [[r["replicate"], r["variant"], repr(r["value"])]
               for r in result.records if r["metric"] == "time"])
    summary = result.summary()
    for table in summary["median"].values():
        table.pop("time", None)
    write_json(out / "summary.json", summary)
    write_manifest(out, _config(args))
    for v in variants:
        metric = "mse" if settings.family == "gaussian" else "auc"
        print(f"{v}: median {metric} {result.median(v, metric):.6g}")
    return EXIT_WARN if result.failures() else EXIT_OK


def cmd_mvncheck(args) -> int:
    from .mvn import balanced_design, dominated_design, mvn_qq_diagnostic
    from .transform import ElasticNetPenalty

    rng = np.random.default_rng(args.seed)
    if args.design_csv:
        _, X, _ = read_design_csv(args.design_csv, None)
    elif args.design == "balanced":
        X = balanced_design(args.n, args.p, rng)
    else:
        X = dominated_design(args.n, args.p, rng)
    penalty = ElasticNetPenalty.uniform(args.lam, X.shape[1], args.alpha)
    points, corr = mvn_qq_diagnostic(X, None, penalty, args.draws, args.seed)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "qq.csv", ["chi2_quantile", "mahalanobis_sq"],
                  [[repr(float(a)), repr(float(b))] for a, b in points])
        write_json(out / "mvncheck.json", {"correlation": corr, "n": X.shape[0],
                                            "p": X.shape[1], "draws": args.draws})
        write_manifest(out, _config(args))
    print(f"qq correlation {corr:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _sim_args(p):
    p.add_argument("--setting", choices=("none", "weak", "informative"),
                   default="informative")
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--p", type=int, default=600)
    p.add_argument("--groups", type=int, default=5)
    p.add_argument("--alpha-fit", type=float, default=0.3)
    p.add_argument("--n-test", type=int, default=None,
                   help="test set size (default: same as training)")
    p.add_argument("--family", choices=("gaussian", "binomial"), default="gaussian")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="squeezy", description=__doc__)
    parser.add_argument("--version", action="version", version=f"squeezy {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate group penalties and fit elastic nets")
    p.add_argument("design", help="CSV with header; features as columns")
    p.add_argument("--response", required=True, help="name of the response column")
    p.add_argument("--family", choices=("gaussian", "binomial"), default="gaussian")
    p.add_argument("--alpha", default="0.3", help="mixing value(s), comma separated")
    p.add_argument("--codata", help="CSV with feature_id,group_id rows")
    p.add_argument("--unpenalized", default="", help="comma-separated column names")
    p.add_argument("--intercept", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--optimizer", choices=("nm", "grad"), default="nm")
    p.add_argument("--recalibrate", choices=("auto", "on", "off"), default="auto")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true",
                   help="scale penalised columns to unit variance before fitting")
    p.add_argument("--out", default="squeezy_out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transform", help="ridge penalties to elastic-net penalties")
    p.add_argument("state", help="JSON with rho (or lambda) and phi, e.g. penalties.json")
    p.add_argument("--alpha", default="0.3")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("simulate", help="write a simulated training/test pair")
    _sim_args(p)
    p.add_argument("--out", default="squeezy_sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run the simulation benchmark")
    _sim_args(p)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--variants", default="squeezy_single,squeezy_multi")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="squeezy_bench")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("mvncheck", help="chi-square QQ check of prior normality of X beta")
    p.add_argument("--design", choices=("balanced", "dominated"), default="balanced")
    p.add_argument("--design-csv", help="use this numeric CSV as X instead")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--p", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=10.0)
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mvncheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        with thread_limit(), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = args.func(args)
    except (InputError, ValueError, FileNotFoundError) as exc:
        print(f"squeezy: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report, never swallow
        print(f"squeezy: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    convergence = False
    for w in caught:
        print(f"squeezy: warning: {w.category.__name__}: {w.message}", file=sys.stderr)
        convergence |= issubclass(w.category, (ConvergenceWarning, SolverWarning))
    logger.info("done in %.2fs", time.perf_counter() - t0)
    if code == EXIT_OK and convergence:
        code = EXIT_WARN
    return code


if __name__ == "__main__":
    sys.exit(main())
