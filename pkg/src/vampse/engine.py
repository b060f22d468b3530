"""The two-part message-passing engine: factorized denoising + LMMSE.

Implements the algorithm loop exactly: factorized step, message pass,
Gaussian (LMMSE) step in the SVD basis, message pass back.  Trajectories
record the macroscopic overlaps against the known signal each iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensembles import MeasurementMatrix
from .errors import (
    DegenerateDivergenceError,
    IndefinitePrecisionError,
    InvalidParameterError,
    VampseError,
)
from .models import ScalarModelPair

CHI_FLOOR = 1e-12

TRAJECTORY_COLUMNS = (
    "t", "m1x", "q1x", "chi1x", "m1z", "q1z", "chi1z",
    "m2x", "q2x", "chi2x", "m2z", "q2z", "chi2z",
    "d", "Qh1x", "Qh1z", "Qh2x", "Qh2z",
)


@dataclass
class EngineState:
    """Message fields and precisions.

    As a run's initial state, qh1x and qh1z must be positive (checked by
    run_vamp); mid-run states may legally carry negative precisions.
    """

    h1x: np.ndarray
    h1z: np.ndarray
    qh1x: float
    qh1z: float
    h2x: np.ndarray | None = None
    h2z: np.ndarray | None = None
    qh2x: float = 0.0
    qh2z: float = 0.0
    iteration: int = 0

    def copy(self) -> "EngineState":
        return EngineState(
            h1x=self.h1x.copy(), h1z=self.h1z.copy(), qh1x=self.qh1x, qh1z=self.qh1z,
            h2x=None if self.h2x is None else self.h2x.copy(),
            h2z=None if self.h2z is None else self.h2z.copy(),
            qh2x=self.qh2x, qh2z=self.qh2z, iteration=self.iteration)


@dataclass
class ProblemInstance:
    """A measurement matrix with the generated (x0, z0, y) triple."""

    a: MeasurementMatrix
    x0: np.ndarray
    z0: np.ndarray
    y: np.ndarray
    models: ScalarModelPair

    @property
    def t_x(self) -> float:
        return float(self.x0 @ self.x0) / self.a.cols

    @property
    def t_z(self) -> float:
        return float(self.z0 @ self.z0) / self.a.rows


def sample_problem(a: MeasurementMatrix, models: ScalarModelPair,
                   rng: np.random.Generator) -> ProblemInstance:
    x0 = models.actual_prior.sample(a.cols, rng)
    z0 = a.entries @ x0
    y = models.actual_channel.sample(z0, rng)
    return ProblemInstance(a=a, x0=x0, z0=z0, y=y, models=models)


def default_init(m: int, n: int, rng: np.random.Generator,
                 h1x_std: float = 1.0, h1z_std: float = 1.0,
                 qh1x: float = 1.0, qh1z: float = 1.0) -> EngineState:
    """h fields iid normal, unit precisions; mirrors the SE default."""
    return EngineState(h1x=h1x_std * rng.standard_normal(n),
                       h1z=h1z_std * rng.standard_normal(m),
                       qh1x=qh1x, qh1z=qh1z)


@dataclass
class Trajectory:
    """Per-iteration macroscopic observables of one run."""

    records: list[dict] = field(default_factory=list)
    converged: bool = False
    converged_iteration: int | None = None
    abort_reason: str | None = None
    abort_iteration: int | None = None
    x1_final: np.ndarray | None = None
    x2_final: np.ndarray | None = None
    final_state: EngineState | None = None
    t_x: float = 0.0
    t_z: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    @property
    def n_iterations(self) -> int:
        return len(self.records)


def factorized_step(state: EngineState, models: ScalarModelPair, y: np.ndarray,
                    chi_floor: float = CHI_FLOOR):
    """x1 = g(h1x, Qh1x) coordinatewise, chi1x = mean dg; z side with y."""
    den_x, den_z = models.x_denoiser, models.z_denoiser
    x1 = den_x.g(state.h1x, state.qh1x)
    chi1x = float(np.mean(den_x.dg(state.h1x, state.qh1x)))
    z1 = den_z.g(state.h1z, state.qh1z, y)
    chi1z = float(np.mean(den_z.dg(state.h1z, state.qh1z, y)))
    if chi1x <= chi_floor or chi1z <= chi_floor:
        raise DegenerateDivergenceError(
            f"divergence hit floor: chi1x={chi1x:.3e}, chi1z={chi1z:.3e}")
    return x1, chi1x, z1, chi1z


def lmmse_step(h2x: np.ndarray, h2z: np.ndarray, qh2x: float, qh2z: float,
               a: MeasurementMatrix):
    """Solve (Qh2x I + Qh2z A^T A) x2 = h2x + A^T h2z in the SVD basis.

    Returns (x2, z2, chi2x, chi2z) with z2 = A x2 and the divergences as
    exact trace sums over the cached eigenvalues.
    """
    lam = a.eigenvalues
    denom_full = qh2x + lam * qh2z
    if np.min(denom_full) <= 0:
        raise IndefinitePrecisionError(
            f"K not positive definite (min eigenvalue {np.min(denom_full):.3e})",
            min_eigenvalue=float(np.min(denom_full)))
    r = min(a.rows, a.cols)
    rhs = h2x + a.entries.T @ h2z
    xt = (a.svd_v.T @ rhs) / denom_full
    x2 = a.svd_v @ xt
    z2 = a.svd_u[:, :r] @ (a.svd_s * xt[:r])
    chi2x = float(np.mean(1.0 / denom_full))
    chi2z = float(np.sum(lam / denom_full)) / a.rows
    return x2, z2, chi2x, chi2z


def message_pass(estimate: np.ndarray, divergence: float, h_in: np.ndarray,
                 qh_in: float, chi_floor: float = CHI_FLOOR):
    """h_out = estimate/chi - h_in, Qh_out = 1/chi - Qh_in (no clamping)."""
    if divergence <= chi_floor:
        raise DegenerateDivergenceError(f"divergence {divergence:.3e} at floor")
    return estimate / divergence - h_in, 1.0 / divergence - qh_in


def _iterate(problem: ProblemInstance, st: EngineState, damping: float):
    """One full loop iteration; mutates st in place, returns the observables."""
    x1, chi1x, z1, chi1z = factorized_step(st, problem.models, problem.y)
    h2x, qh2x = message_pass(x1, chi1x, st.h1x, st.qh1x)
    h2z, qh2z = message_pass(z1, chi1z, st.h1z, st.qh1z)
    if damping < 1.0 and st.h2x is not None:
        h2x = damping * h2x + (1 - damping) * st.h2x
        h2z = damping * h2z + (1 - damping) * st.h2z
        qh2x = damping * qh2x + (1 - damping) * st.qh2x
        qh2z = damping * qh2z + (1 - damping) * st.qh2z
    st.h2x, st.h2z, st.qh2x, st.qh2z = h2x, h2z, qh2x, qh2z
    x2, z2, chi2x, chi2z = lmmse_step(h2x, h2z, qh2x, qh2z, problem.a)
    h1x, qh1x = message_pass(x2, chi2x, h2x, qh2x)
    h1z, qh1z = message_pass(z2, chi2z, h2z, qh2z)
    if damping < 1.0:
        h1x = damping * h1x + (1 - damping) * st.h1x
        h1z = damping * h1z + (1 - damping) * st.h1z
        qh1x = damping * qh1x + (1 - damping) * st.qh1x
        qh1z = damping * qh1z + (1 - damping) * st.qh1z
    st.h1x, st.h1z, st.qh1x, st.qh1z = h1x, h1z, qh1x, qh1z
    st.iteration += 1
    return x1, chi1x, z1, chi1z, x2, z2, chi2x, chi2z


def run_vamp(problem: ProblemInstance, init: EngineState, t_iter: int = 10000,
             damping: float = 1.0, conv_tol: float = 1e-15) -> Trajectory:
    """Iterate the two-part loop, recording overlaps against the known truth.

    Stops early once d(t) = ||x1 - x2||^2 / N < conv_tol.  Numerical aborts
    (degenerate divergence, indefinite K, denoiser domain errors) terminate
    the run and are reported on the trajectory rather than raised.
    """
    if not 0.0 < damping <= 1.0:
        raise InvalidParameterError("damping must be in (0, 1]")
    if t_iter < 1:
        raise InvalidParameterError("t_iter must be >= 1")
    if init.qh1x <= 0 or init.qh1z <= 0:
        raise InvalidParameterError("initial Qh1x and Qh1z must be > 0")
    n, m = problem.a.cols, problem.a.rows
    x0, z0 = problem.x0, problem.z0
    traj = Trajectory(t_x=problem.t_x, t_z=problem.t_z)
    st = init.copy()
    for t in range(1, t_iter + 1):
        # the Qh entering the factorized part at iteration t
        qh1x_in, qh1z_in = st.qh1x, st.qh1z
        try:
            x1, chi1x, z1, chi1z, x2, z2, chi2x, chi2z = _iterate(problem, st, damping)
        except VampseError as exc:
            traj.abort_reason = f"{type(exc).__name__}: {exc}"
            traj.abort_iteration = t
            break
        d = float(np.sum((x1 - x2) ** 2)) / n
        traj.records.append({
            "t": t,
            "m1x": float(x0 @ x1) / n, "q1x": float(x1 @ x1) / n, "chi1x": chi1x,
            "m1z": float(z0 @ z1) / m, "q1z": float(z1 @ z1) / m, "chi1z": chi1z,
            "m2x": float(x0 @ x2) / n, "q2x": float(x2 @ x2) / n, "chi2x": chi2x,
            "m2z": float(z0 @ z2) / m, "q2z": float(z2 @ z2) / m, "chi2z": chi2z,
            "d": d,
            "Qh1x": qh1x_in, "Qh1z": qh1z_in, "Qh2x": st.qh2x, "Qh2z": st.qh2z,
        })
        traj.x1_final, traj.x2_final = x1, x2
        if d < conv_tol:
            traj.converged = True
            traj.converged_iteration = t
            break
    traj.final_state = st
    return traj


def inject_perturbation(state: EngineState, eps_x: float, eps_z: float,
                        rng: np.random.Generator) -> EngineState:
    """Add sqrt(eps) * unit-variance noise to the h1 fields; Qh untouched."""
    if eps_x < 0 or eps_z < 0:
        raise InvalidParameterError("perturbation strengths must be >= 0")
    out = state.copy()
    if eps_x > 0:
        out.h1x = out.h1x + np.sqrt(eps_x) * rng.standard_normal(out.h1x.size)
    if eps_z > 0:
        out.h1z = out.h1z + np.sqrt(eps_z) * rng.standard_normal(out.h1z.size)
    return out


def measure_growth_rate(problem: ProblemInstance, state: EngineState,
                        eps: float = 1e-10, n_iters: int = 60,
                        rng: np.random.Generator | None = None,
                        linear_guard: float = 1e-2) -> float:
    """Least-squares slope of log ||h1x difference||^2 between paired runs.

    Runs the undamped loop from ``state`` twice, once with an
    eps-perturbation of the h1 fields, and fits the growth of the squared
    field difference over the iterations where it stays below
    ``linear_guard`` (the linear regime).  At a converged fixed point this
    is the microscopic stability exponent; from a burn-in state it measures
    the leading Lyapunov growth of the dynamics.  Returns -inf if the
    difference contracts to exactly zero.
    """
    rng = np.random.default_rng() if rng is None else rng
    base = state.copy()
    pert = inject_perturbation(state, eps, eps, rng)
    n = problem.a.cols
    # below this the difference is float-rounding debris, not dynamics
    scale = max(float(np.sqrt(np.mean(base.h1x ** 2))), 1.0)
    floor = (100.0 * np.finfo(float).eps * scale) ** 2
    log_d2 = []
    for _ in range(n_iters):
        _iterate(problem, base, 1.0)
        _iterate(problem, pert, 1.0)
        d2 = float(np.sum((base.h1x - pert.h1x) ** 2)) / n
        if d2 <= floor:
            if len(log_d2) < 2:
                return float("-inf")
            break
        if d2 > linear_guard:
            break
        log_d2.append(np.log(d2))
    if len(log_d2) < 2:
        raise InvalidParameterError("no iterations in the linear regime; reduce eps")
    t = np.arange(len(log_d2))
    slope = np.polyfit(t, np.array(log_d2), 1)[0]
    return float(slope)
