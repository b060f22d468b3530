"""Experiment drivers: seeded trials, parallel ensembles, SE comparison.

Every trial draws from its own RNG stream keyed by (master seed, N, delta,
trial index), so ensembles are reproducible, order-independent, and the
first k trials of a larger sweep coincide bit-for-bit with a smaller one.
Draw order within a trial: matrix, signal, channel output, field init.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .ensembles import sample_iid_gaussian, sample_row_orthogonal
from .errors import ConfigError
from .models import build_model_pair

OBSERVABLES = ("m1x", "q1x", "chi1x", "m1z", "q1z", "chi1z",
               "m2x", "q2x", "chi2x", "m2z", "q2z", "chi2z", "d")


def trial_rng(master_seed: int, n: int, delta: float, trial: int) -> np.random.Generator:
    delta_key = int(round(delta * 1_000_000_000))
    seq = np.random.SeedSequence([int(master_seed), int(n), delta_key, int(trial)])
    return np.random.default_rng(seq)


def rows_for(n: int, delta: float) -> int:
    return int(round(delta * n))


def run_trial(cfg: dict, n: int, delta: float, trial: int,
              master_seed: int | None = None) -> engine.Trajectory:
    """Sample one problem instance from the trial's stream and run the engine."""
    seed = cfg["ensemble"]["master_seed"] if master_seed is None else master_seed
    rng = trial_rng(seed, n, delta, trial)
    m = rows_for(n, delta)
    if cfg["ensemble"]["matrix"] == "row_orthogonal":
        a = sample_row_orthogonal(m, n, cfg["ensemble"].get("scale", 1.0), rng,
                                  provenance=f"seed={seed} N={n} delta={delta} trial={trial}")
    else:
        a = sample_iid_gaussian(m, n, rng,
                                provenance=f"seed={seed} N={n} delta={delta} trial={trial}")
    models = build_model_pair(cfg["model"])
    problem = engine.sample_problem(a, models, rng)
    init_cfg = cfg["run"]["init"]
    init = engine.default_init(m, n, rng, h1x_std=init_cfg["h1x_std"],
                               h1z_std=init_cfg["h1z_std"], qh1x=init_cfg["Qh1x"],
                               qh1z=init_cfg["Qh1z"])
    return engine.run_vamp(problem, init, t_iter=cfg["run"]["T_iter"],
                           damping=cfg["run"]["damping"],
                           conv_tol=cfg["run"]["conv_tol"])


def _trial_worker(args):
    cfg, n, delta, trial, seed = args
    traj = run_trial(cfg, n, delta, trial, master_seed=seed)
    return trial, {
        "converged": traj.converged,
        "converged_iteration": traj.converged_iteration,
        "abort_reason": traj.abort_reason,
        "records": traj.records,
    }


@dataclass
class EnsembleResult:
    """Aggregate over the trials of one (N, delta) cell."""

    n: int
    delta: float
    trials: int
    n_converged: int
    abort_counts: dict = field(default_factory=dict)
    mean_rows: list = field(default_factory=list)   # per-t dicts with *_mean/_stderr

    @property
    def convergence_probability(self) -> float:
        return self.n_converged / self.trials

    @property
    def stderr(self) -> float:
        p = self.convergence_probability
        return math.sqrt(p * (1.0 - p) / self.trials)

    def summary_row(self) -> dict:
        return {"N": self.n, "delta": self.delta, "trials": self.trials,
                "n_converged": self.n_converged,
                "convergence_probability": self.convergence_probability,
                "stderr": self.stderr,
                "n_aborted": sum(self.abort_counts.values())}


class _Accumulator:
    """Streaming per-iteration mean/stderr over trials (order-independent sums)."""

    def __init__(self):
        self.count: list[int] = []
        self.sums: list[dict] = []
        self.sumsq: list[dict] = []

    def add(self, records: list[dict]):
        for i, rec in enumerate(records):
            if i == len(self.count):
                self.count.append(0)
                self.sums.append({k: 0.0 for k in OBSERVABLES})
                self.sumsq.append({k: 0.0 for k in OBSERVABLES})
            self.count[i] += 1
            for k in OBSERVABLES:
                v = rec[k]
                self.sums[i][k] += v
                self.sumsq[i][k] += v * v

    def rows(self) -> list[dict]:
        out = []
        for i, cnt in enumerate(self.count):
            row = {"t": i + 1, "n_trials": cnt}
            for k in OBSERVABLES:
                mean = self.sums[i][k] / cnt
                row[f"{k}_mean"] = mean
                if cnt > 1:
                    var = max(self.sumsq[i][k] - cnt * mean * mean, 0.0) / (cnt - 1)
                    row[f"{k}_stderr"] = math.sqrt(var / cnt)
                else:
                    row[f"{k}_stderr"] = 0.0
            out.append(row)
        return out


def run_ensemble_cell(cfg: dict, n: int, delta: float, jobs: int = 1,
                      master_seed: int | None = None) -> EnsembleResult:
    """All trials of one (N, delta) cell, optionally in parallel.

    Aggregation is associative over trial index, so any worker count gives
    results identical to a serial run.  Trial aborts are counted, never fatal.
    """
    seed = cfg["ensemble"]["master_seed"] if master_seed is None else master_seed
    trials = cfg["ensemble"]["trials"]
    args = [(cfg, n, delta, t, seed) for t in range(trials)]
    acc = _Accumulator()
    n_converged = 0
    aborts: Counter = Counter()
    if jobs <= 1:
        results = map(_trial_worker, args)
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        results = pool.map(_trial_worker, args, chunksize=1)
    for _, summary in results:
        if summary["converged"]:
            n_converged += 1
        if summary["abort_reason"]:
            aborts[summary["abort_reason"].split(":")[0]] += 1
        acc.add(summary["records"])
    if jobs > 1:
        pool.shutdown()
    return EnsembleResult(n=n, delta=delta, trials=trials, n_converged=n_converged,
                          abort_counts=dict(aborts), mean_rows=acc.rows())


def run_ensemble_sweep(cfg: dict, jobs: int = 1,
                       master_seed: int | None = None) -> list[EnsembleResult]:
    out = []
    for n in cfg["ensemble"]["N"]:
        for delta in cfg["ensemble"]["deltas"]:
            out.append(run_ensemble_cell(cfg, n, delta, jobs=jobs,
                                         master_seed=master_seed))
    return out


@dataclass
class ComparisonResult:
    rows: list[dict]
    max_abs_z: float
    n_undefined: int

    @property
    def degenerate(self) -> bool:
        return self.n_undefined > 0


def compare_to_se(mean_rows: list[dict], se_rows: list[dict],
                  columns: list[str]) -> ComparisonResult:
    """Per (iteration, observable): ensemble mean, stderr, SE value, z-score.

    A z-score is undefined where the stderr is zero (e.g. comparing a file
    against itself); such rows are flagged and counted.
    """
    se_by_t = {int(r["t"]): r for r in se_rows}
    rows = []
    max_z = 0.0
    undefined = 0
    for rec in mean_rows:
        t = int(rec["t"])
        if t not in se_by_t:
            continue
        for col in columns:
            mean_key, err_key = f"{col}_mean", f"{col}_stderr"
            if mean_key not in rec and col in rec:
                # plain trajectory on the mean side: a single run, stderr 0
                mean_key, err_key = col, None
            if mean_key not in rec or col not in se_by_t[t]:
                raise ConfigError(f"column {col!r} missing from one of the inputs")
            se_val = se_by_t[t][col]
            if isinstance(se_val, float) and math.isnan(se_val):
                continue
            mean = rec[mean_key]
            if isinstance(mean, float) and math.isnan(mean):
                continue
            err = rec.get(err_key, 0.0) if err_key else 0.0
            if err > 0:
                z = (mean - se_val) / err
                max_z = max(max_z, abs(z))
            else:
                z = float("nan")
                undefined += 1
            rows.append({"t": t, "observable": col, "mean": mean, "stderr": err,
                         "se_value": se_val, "z": z})
    return ComparisonResult(rows=rows, max_abs_z=max_z, n_undefined=undefined)
