"""Command-line front end: run, se, compare, ensemble, stability.

Exit status convention: 0 success, 2 config error, 3 numerical abort,
4 non-convergence where convergence was required.
"""

from __future__ import annotations

import os
import sys

import click

from . import __version__, harness, runio, state_evolution as sevo
from .config import config_hash, limiting_measure, load_config
from .errors import BracketError, ConfigError, SENonConvergenceError, VampseError
from .models import build_model_pair
from .stability import evaluate_stability, find_at_threshold

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGENCE = 4


def _load(config_path, seed_override, out_override):
    cfg = load_config(config_path)
    seed = cfg["ensemble"]["master_seed"] if seed_override is None else seed_override
    out_dir = cfg["output"]["dir"] if out_override is None else out_override
    os.makedirs(out_dir, exist_ok=True)
    return cfg, seed, out_dir


def _meta(cfg, seed, **extra):
    return runio.make_meta(__version__, config_hash(cfg), seed, **extra)


def _single_cell(cfg):
    ens = cfg["ensemble"]
    if len(ens["N"]) != 1 or len(ens["deltas"]) != 1:
        raise ConfigError("this command needs exactly one N and one delta in the config")
    return ens["N"][0], ens["deltas"][0]


def _se_model(cfg, delta):
    models = build_model_pair(cfg["model"])
    measure = limiting_measure(cfg, delta)
    return sevo.SEModel(models=models, measure=measure, delta=delta,
                        n_nodes=cfg["run"]["quadrature_nodes"])


def _se_init(cfg, se):
    init = cfg["run"]["init"]
    return sevo.default_init(se.t_x, se.t_z,
                             ch1x=init["h1x_std"] ** 2, qh1x=init["Qh1x"],
                             ch1z=init["h1z_std"] ** 2, qh1z=init["Qh1z"])


@click.group()
@click.version_option(__version__)
def main():
    """Vector AMP for mismatched GLMs: runs, state evolution, stability."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None)
def run(config_path, seed, out_dir):
    """Sample one problem instance, run the engine, write its trajectory."""
    cfg, seed, out_dir = _load(config_path, seed, out_dir)
    n, delta = _single_cell(cfg)
    traj = harness.run_trial(cfg, n, delta, trial=0, master_seed=seed)
    meta = _meta(cfg, seed, command="run", N=n, delta=delta, trial=0)
    runio.write_csv(os.path.join(out_dir, "run_trajectory.csv"), meta,
                    runio.TRAJECTORY_HEADER, traj.records)
    runio.write_json(os.path.join(out_dir, "run_metadata.json"), {
        "meta": meta, "config": cfg, "converged": traj.converged,
        "converged_iteration": traj.converged_iteration,
        "n_iterations": traj.n_iterations,
        "abort_reason": traj.abort_reason, "abort_iteration": traj.abort_iteration,
        "T_x": traj.t_x, "T_z": traj.t_z,
    })
    click.echo(f"wrote {traj.n_iterations} iterations; converged={traj.converged}")
    if traj.abort_reason is not None:
        click.echo(f"numerical abort: {traj.abort_reason}", err=True)
        sys.exit(EXIT_NUMERICAL)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def se(config_path, seed, out_dir):
    """Write the SE trajectory and the SE fixed point with its saddle residual."""
    cfg, seed, out_dir = _load(config_path, seed, out_dir)
    n, delta = _single_cell(cfg)
    se_model = _se_model(cfg, delta)
    init = _se_init(cfg, se_model)
    states = sevo.se_trajectory(se_model, init, t_iter=cfg["run"]["T_iter"])
    meta = _meta(cfg, seed, command="se", N=n, delta=delta)
    runio.write_csv(os.path.join(out_dir, "se_trajectory.csv"), meta,
                    runio.TRAJECTORY_HEADER, runio.se_trajectory_rows(states))
    fp_cfg = cfg["run"]["se_fixed_point"]
    fp = sevo.se_fixed_point(se_model, init, damping=fp_cfg["damping"],
                             tol=fp_cfg["tol"], max_iter=fp_cfg["max_iter"])
    residual = sevo.rs_saddle_residual(fp.state, se_model) if fp.converged else None
    runio.write_json(os.path.join(out_dir, "se_fixed_point.json"), {
        "meta": meta, "converged": fp.converged, "iterations": fp.iterations,
        "last_update_residual": fp.residual,
        "consistency_gap": fp.consistency_gap,
        "rs_saddle_residual": residual,
        "state": fp.state.as_dict(),
    })
    click.echo(f"SE fixed point converged={fp.converged} after {fp.iterations} "
               f"iterations; saddle residual={residual}")
    if not fp.converged:
        sys.exit(EXIT_NONCONVERGENCE)


@main.command()
@click.argument("mean_csv", type=click.Path(exists=True))
@click.argument("se_csv", type=click.Path(exists=True))
@click.option("--columns", default="m1x,q1x",
              help="Comma-separated observables to compare.")
@click.option("--out", "out_dir", type=click.Path(), default=".")
@click.option("--max-z", type=float, default=None,
              help="Exit nonzero if any |z| exceeds this bound.")
def compare(mean_csv, se_csv, columns, out_dir, max_z):
    """Z-score ensemble means in MEAN_CSV against SE values in SE_CSV."""
    meta_a, _, mean_rows = runio.read_csv(mean_csv)
    _, _, se_rows = runio.read_csv(se_csv)
    cols = [c.strip() for c in columns.split(",") if c.strip()]
    result = harness.compare_to_se(mean_rows, se_rows, cols)
    os.makedirs(out_dir, exist_ok=True)
    header = ["t", "observable", "mean", "stderr", "se_value", "z"]
    meta = runio.make_meta(__version__, meta_a.get("config_hash", ""),
                           meta_a.get("master_seed", 0), command="compare")
    rows = [{**r, "observable": r["observable"]} for r in result.rows]
    runio.write_csv(os.path.join(out_dir, "compare.csv"), meta, header, rows)
    click.echo(f"compared {len(result.rows)} points; max |z| = {result.max_abs_z:.3f}; "
               f"undefined z: {result.n_undefined}")
    if result.degenerate:
        click.echo("zero-stderr comparisons present: z undefined", err=True)
        sys.exit(EXIT_NUMERICAL)
    if max_z is not None and result.max_abs_z > max_z:
        sys.exit(1)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--jobs", type=int, default=1, help="Parallel trial workers.")
def ensemble(config_path, seed, out_dir, jobs):
    """Run the (N, delta) sweep; write per-cell mean trajectories and a summary."""
    cfg, seed, out_dir = _load(config_path, seed, out_dir)
    results = harness.run_ensemble_sweep(cfg, jobs=jobs, master_seed=seed)
    meta = _meta(cfg, seed, command="ensemble")
    obs_header = ["t", "n_trials"]
    for k in harness.OBSERVABLES:
        obs_header += [f"{k}_mean", f"{k}_stderr"]
    for res in results:
        name = f"ensemble_N{res.n}_delta{res.delta:g}.csv"
        runio.write_csv(os.path.join(out_dir, name),
                        {**meta, "N": res.n, "delta": res.delta}, obs_header,
                        res.mean_rows)
    summary_header = ["N", "delta", "trials", "n_converged",
                      "convergence_probability", "stderr", "n_aborted"]
    runio.write_csv(os.path.join(out_dir, "ensemble_summary.csv"), meta,
                    summary_header, [r.summary_row() for r in results])
    runio.write_json(os.path.join(out_dir, "ensemble_metadata.json"), {
        "meta": meta, "config": cfg,
        "abort_counts": [{"N": r.n, "delta": r.delta, "counts": r.abort_counts}
                         for r in results],
    })
    for res in results:
        click.echo(f"N={res.n} delta={res.delta:g}: "
                   f"P(conv)={res.convergence_probability:.3f} "
                   f"+- {res.stderr:.3f} ({res.trials} trials)")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--find-threshold", is_flag=True, default=False)
@click.option("--bracket", nargs=2, type=float, default=None,
              help="delta bracket for the threshold search.")
def stability(config_path, seed, out_dir, find_threshold, bracket):
    """Stability report at the SE fixed point; optionally locate the threshold."""
    cfg, seed, out_dir = _load(config_path, seed, out_dir)
    n, delta = _single_cell(cfg)
    se_model = _se_model(cfg, delta)
    fp_cfg = cfg["run"]["se_fixed_point"]
    fp = sevo.se_fixed_point(se_model, _se_init(cfg, se_model),
                             damping=fp_cfg["damping"], tol=fp_cfg["tol"],
                             max_iter=fp_cfg["max_iter"])
    if not fp.converged:
        click.echo(f"SE fixed point did not converge (residual {fp.residual:.3e})",
                   err=True)
        sys.exit(EXIT_NONCONVERGENCE)
    report = evaluate_stability(se_model, fp.state)
    payload = {"meta": _meta(cfg, seed, command="stability"),
               "report": report.to_json(),
               "fixed_point": fp.state.as_dict()}
    if find_threshold:
        if bracket is None:
            raise ConfigError("--find-threshold requires --bracket LO HI")
        threshold = find_at_threshold(lambda d: _se_model(cfg, d),
                                      bracket[0], bracket[1],
                                      damping=fp_cfg["damping"], se_tol=fp_cfg["tol"],
                                      max_iter=fp_cfg["max_iter"])
        payload["at_threshold"] = threshold
        click.echo(f"AT threshold located at delta = {threshold:.4f}")
    runio.write_json(os.path.join(out_dir, "stability_report.json"), payload)
    click.echo(f"delta={delta:g}: at_lhs={report.at_lhs:+.5f} "
               f"micro_lhs={report.micro_lhs:+.5f} "
               f"growth_eigenvalue={report.growth_eigenvalue:.5f} "
               f"stable={report.stable}")


def _wrap(cmd):
    """Map package errors onto the exit-status convention."""
    original = cmd.callback

    def wrapped(*args, **kwargs):
        try:
            return original(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (SENonConvergenceError,) as exc:
            click.echo(f"non-convergence: {exc}", err=True)
            sys.exit(EXIT_NONCONVERGENCE)
        except BracketError as exc:
            click.echo(f"bracket error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except VampseError as exc:
            click.echo(f"numerical error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    cmd.callback = wrapped
    return cmd


for _cmd in (run, se, compare, ensemble, stability):
    _wrap(_cmd)


if __name__ == "__main__":
    main()
