"""Benchmark harness comparing single-group and multi-group variants."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .enet import fit_elastic_net
from .marginal import MarginalLikelihood, optimize_penalties
from .recalibrate import make_plan, recalibrate_lambda0
from .simulate import SimSettings, simulate_dataset
from .transform import transform_ridge_to_en

logger = logging.getLogger(__name__)

VARIANTS = ("squeezy_single", "squeezy_single_recv", "squeezy_multi", "squeezy_multi_recv")


def auc(y, score) -> float:
    """Area under the ROC curve via the rank-sum statistic."""
    y = np.asarray(y)
    pos = y == 1
    n1, n0 = pos.sum(), (~pos).sum()
    if n1 == 0 or n0 == 0:
        return np.nan
    r = rankdata(score)
    return float((r[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


@dataclass
class BenchResult:
    """Tidy benchmark records: one row per replicate, variant and metric."""

    settings: SimSettings
    replicates: int
    seeds: list
    records: list = field(default_factory=list)

    def values(self, variant: str, metric: str) -> np.ndarray:
        return np.array([r["value"] for r in self.records
                         if r["variant"] == variant and r["metric"] == metric])

    def median(self, variant: str, metric: str) -> float:
        v = self.values(variant, metric)
        v = v[np.isfinite(v)]
        return float(np.median(v)) if v.size else np.nan

    def failures(self) -> list:
        return [r for r in self.records if r["metric"] == "error"]

    def to_csv(self, path, include_timing: bool = True):
        rows = [r for r in self.records if include_timing or r["metric"] != "time"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["replicate", "seed", "variant", "metric",
                                                    "value", "note"])
            writer.writeheader()
            for r in rows:
                writer.writerow({**r, "value": repr(float(r["value"]))})

    def summary(self) -> dict:
        variants = sorted({r["variant"] for r in self.records})
        metrics = sorted({r["metric"] for r in self.records} - {"error"})
        table = {v: {m: self.median(v, m) for m in metrics if self.values(v, m).size}
                 for v in variants}
        return {"settings": asdict(self.settings), "replicates": self.replicates,
                "seeds": self.seeds, "median": table, "n_failures": len(self.failures())}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True, default=float)


def run_replicate(settings: SimSettings, replicate: int, seed: int, variants=VARIANTS,
                  n_folds: int = 10, intercept: bool = True) -> list[dict]:
    """Simulate one training/test pair and score each requested variant."""
    s = settings.with_seed(seed)
    train, test, _ = simulate_dataset(s)
    if intercept:
        train, test = train.with_intercept(), test.with_intercept()
    family = s.family
    rows = []

    def add(variant, metric, value, note=""):
        rows.append({"replicate": replicate, "seed": seed, "variant": variant,
                     "metric": metric, "value": float(value), "note": note})

    for kind in ("single", "multi"):
        wanted = [v for v in variants if v.split("_")[1] == kind]
        if not wanted:
            continue
        groups = s.single_group() if kind == "single" else s.groups()
        try:
            t0 = time.perf_counter()
            mml = MarginalLikelihood(train, family, groups)
            ridge = optimize_penalties(train, family, groups, mml=mml)
            base = transform_ridge_to_en(ridge.state, groups, s.alpha_fit)
            t_est = time.perf_counter() - t0
        except Exception as exc:  # recorded, not fatal
            logger.warning("replicate %d %s: penalty estimation failed: %s", replicate, kind, exc)
            for v in wanted:
                add(v, "error", np.nan, repr(exc))
            continue
        phi = ridge.state.phi
        for v in wanted:
            try:
                t1 = time.perf_counter()
                pen = base
                if v.endswith("_recv"):
                    plan = make_plan(train, family, n_folds, seed)
                    lambda0, _ = recalibrate_lambda0(train, family, base, plan, dispersion=phi)
                    pen = base.rescaled(lambda0)
                fit = fit_elastic_net(train, family, pen, dispersion=phi)
                elapsed = t_est + time.perf_counter() - t1
            except Exception as exc:
                logger.warning("replicate %d %s failed: %s", replicate, v, exc)
                add(v, "error", np.nan, repr(exc))
                continue
            eta = fit.predict(test)
            if family == "gaussian":
                add(v, "mse", np.mean((test.y - eta) ** 2))
            else:
                add(v, "auc", auc(test.y, eta))
            add(v, "time", elapsed)
            add(v, "converged", ridge.converged and fit.converged)
            add(v, "kkt", fit.kkt_max_violation)
            add(v, "phi", phi)
            for g, lam in enumerate(ridge.state.lambdas):
                add(v, f"lambda_ridge_{g}", lam)
            for g, lam in enumerate(pen.lambda_group):
                add(v, f"lambda_en_{g}", lam)
    return rows


def replicate_seeds(seed: int, replicates: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(replicates)]


def run_benchmark(settings: SimSettings, replicates: int = 20, variants=VARIANTS,
                  n_folds: int = 10, n_jobs: int = 1, intercept: bool = True) -> BenchResult:
    """Run all variants on ``replicates`` independent training/test pairs.

    Replicate seeds are derived from ``settings.seed``; results do not depend
    on ``n_jobs``.
    """
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise ValueError(f"unknown variants {sorted(unknown)}")
    seeds = replicate_seeds(settings.seed, replicates)
    args = [(settings, i, sd, tuple(variants), n_folds, intercept) for i, sd in enumerate(seeds)]
    if n_jobs == 1:
        chunks = [run_replicate(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            chunks = list(ex.map(run_replicate, *zip(*args)))
    result = BenchResult(settings, replicates, seeds)
    for rows in chunks:
        result.records.extend(rows)
    return result


def timing_sweep(settings: SimSettings, group_counts=(2, 5, 10, 20), replicates: int = 1,
                 setting: str = "informative") -> tuple[list[dict], float]:
    """Penalty estimation plus final fit time as a function of the number of groups.

    Returns per-run records and the log-log slope of mean time against ``G``.
    """
    from .simulate import setting_variances

    records = []
    seeds = replicate_seeds(settings.seed, replicates)
    for G in group_counts:
        s = SimSettings(n=settings.n, p=settings.p, G=G, rho=settings.rho,
                        sigma2=settings.sigma2,
                        group_variances=setting_variances(setting, settings.p, G),
                        alpha_fit=settings.alpha_fit, n_blocks=settings.n_blocks)
        for i, sd in enumerate(seeds):
            train, _, _ = simulate_dataset(s.with_seed(sd))
            train = train.with_intercept()
            groups = s.groups()
            t0 = time.perf_counter()
            ridge = optimize_penalties(train, s.family, groups)
            pen = transform_ridge_to_en(ridge.state, groups, s.alpha_fit)
            fit_elastic_net(train, s.family, pen, dispersion=ridge.state.phi)
            records.append({"G": G, "replicate": i, "seed": sd,
                            "time": time.perf_counter() - t0,
                            "n_evaluations": ridge.n_evaluations})
    G_arr = np.array(group_counts, dtype=float)
    mean_t = np.array([np.mean([r["time"] for r in records if r["G"] == G])
                       for G in group_counts])
    slope = float(np.polyfit(np.log(G_arr), np.log(mean_t), 1)[0])
    return records, slope
