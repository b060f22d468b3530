"""Scalar state evolution: the deterministic recursion tracking the engine.

Factorized-side quantities are moment reductions over the scalar effective
field h = mhat * truth + sqrt(chihat) * xi:

    m = E[truth * g(h)],  chi = E[g'(h)],  q = E[g(h)^2],  chi2 = E[g'(h)^2],

with xi standard normal; the Gaussian side consists of spectral averages
over the eigenvalue law of A^T A; the message passes mirror the engine's
precision/field updates in (mhat, chihat, Qhat) coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace, asdict

import numpy as np

from .ensembles import SpectralMeasure, spectral_expectation
from .errors import (
    DegenerateDivergenceError,
    IndefinitePrecisionError,
    NegativeConjugateVarianceError,
    QuadratureAccuracyError,
    VampseError,
)
from .models import DEFAULT_GH_NODES, ScalarModelPair, XDenoiser, ZDenoiser
from .quadrature import gauss_hermite, normal_rule

CHI_FLOOR = 1e-12
CHIHAT_SNAP = 1e-10      # chihat in (-CHIHAT_SNAP, 0) snaps to 0; below aborts
NODE_CHECK_TOL = 1e-7


@dataclass(frozen=True)
class MacroState:
    """All macroscopic SE quantities of one iteration (plus T constants)."""

    # factorized side
    m1x: float = 0.0
    chi1x: float = 0.0
    q1x: float = 0.0
    m1z: float = 0.0
    chi1z: float = 0.0
    q1z: float = 0.0
    # gaussian side
    m2x: float = 0.0
    chi2x: float = 0.0
    q2x: float = 0.0
    m2z: float = 0.0
    chi2z: float = 0.0
    q2z: float = 0.0
    # conjugates (mhat, chihat, Qhat) for both parts
    mh1x: float = 0.0
    ch1x: float = 1.0
    qh1x: float = 1.0
    mh1z: float = 0.0
    ch1z: float = 1.0
    qh1z: float = 1.0
    mh2x: float = 0.0
    ch2x: float = 0.0
    qh2x: float = 0.0
    mh2z: float = 0.0
    ch2z: float = 0.0
    qh2z: float = 0.0
    # constants
    t_x: float = 1.0
    t_z: float = 1.0

    @property
    def that_z(self) -> float:
        return 1.0 / self.t_z

    def as_dict(self) -> dict:
        return asdict(self)


# the quantities whose change drives fixed-point convergence: the twelve
# moments plus the six side-1 conjugates (side-2 conjugates are intermediates)
EVOLVING_FIELDS = (
    "m1x", "chi1x", "q1x", "m1z", "chi1z", "q1z",
    "m2x", "chi2x", "q2x", "m2z", "chi2z", "q2z",
    "mh1x", "ch1x", "qh1x", "mh1z", "ch1z", "qh1z",
)


@dataclass(frozen=True)
class SEModel:
    """Model pair + spectral measure + aspect ratio, with derived constants."""

    models: ScalarModelPair
    measure: SpectralMeasure
    delta: float
    n_nodes: int = DEFAULT_GH_NODES

    @property
    def t_x(self) -> float:
        return self.models.actual_prior.second_moment

    @property
    def t_z(self) -> float:
        return spectral_expectation(self.measure, lambda l: l) * self.t_x / self.delta


def default_init(t_x: float, t_z: float, mh1x: float = 0.0, ch1x: float = 1.0,
                 qh1x: float = 1.0, mh1z: float = 0.0, ch1z: float = 1.0,
                 qh1z: float = 1.0) -> MacroState:
    """Side-1 conjugates matching the engine's h ~ N(0, std^2) initialization."""
    return MacroState(mh1x=mh1x, ch1x=ch1x, qh1x=qh1x, mh1z=mh1z, ch1z=ch1z,
                      qh1z=qh1z, t_x=t_x, t_z=t_z)


# ---------------------------------------------------------------------------
# factorized part


def _x_cond_moments(den: XDenoiser, mu: np.ndarray, sigma: float, qh: float,
                    n_xi: int):
    if den.cond_moments is not None:
        return den.cond_moments(mu, sigma, qh)
    xi, w = gauss_hermite(n_xi)
    h = mu[:, None] + sigma * xi[None, :]
    g = den.g(h, qh)
    dg = den.dg(h, qh)
    return g @ w, dg @ w, (g * g) @ w, (dg * dg) @ w


def _z_cond_moments(den: ZDenoiser, mu: np.ndarray, sigma: float, qh: float,
                    y, n_xi: int):
    if den.cond_moments is not None:
        return den.cond_moments(mu, sigma, qh, y)
    xi, w = gauss_hermite(n_xi)
    h = mu[:, None] + sigma * xi[None, :]
    yb = np.asarray(y)[..., None] if np.ndim(y) else y
    g = den.g(h, qh, yb)
    dg = den.dg(h, qh, yb)
    return g @ w, dg @ w, (g * g) @ w, (dg * dg) @ w


def _factorized_x_once(models, mh1x, ch1x, qh1x, n_nodes):
    if ch1x < 0:
        raise NegativeConjugateVarianceError(f"chihat1x = {ch1x} < 0")
    x0, w0 = models.actual_prior.quad_nodes(n_nodes)
    eg, edg, eg2, edg2 = _x_cond_moments(models.x_denoiser, mh1x * x0,
                                         np.sqrt(ch1x), qh1x, n_nodes)
    return (float(np.sum(w0 * x0 * eg)), float(np.sum(w0 * edg)),
            float(np.sum(w0 * eg2)), float(np.sum(w0 * edg2)))


def se_factorized_x(models: ScalarModelPair, mh1x: float, ch1x: float, qh1x: float,
                    n_nodes: int = DEFAULT_GH_NODES, check: bool = True):
    """(m1x, chi1x, q1x, chix2) under h = mh1x x0 + sqrt(ch1x) xi."""
    out = _factorized_x_once(models, mh1x, ch1x, qh1x, n_nodes)
    if check:
        fine = _factorized_x_once(models, mh1x, ch1x, qh1x, 2 * n_nodes + 1)
        if max(abs(a - b) for a, b in zip(out, fine)) > NODE_CHECK_TOL:
            raise QuadratureAccuracyError(
                f"x-side moments changed more than {NODE_CHECK_TOL} on node doubling")
        return fine
    return out


def _factorized_z_once(models, t_z, mh1z, ch1z, qh1z, n_nodes):
    if ch1z < 0:
        raise NegativeConjugateVarianceError(f"chihat1z = {ch1z} < 0")
    channel = models.actual_channel
    z0, w0 = normal_rule(t_z, channel.z0_breakpoints, n_nodes)
    sigma = np.sqrt(ch1z)
    m = chi = q = chi2 = 0.0
    for y, wy in channel.y_components(z0):
        eg, edg, eg2, edg2 = _z_cond_moments(models.z_denoiser, mh1z * z0, sigma,
                                             qh1z, y, n_nodes)
        wt = w0 * wy
        m += float(np.sum(wt * z0 * eg))
        chi += float(np.sum(wt * edg))
        q += float(np.sum(wt * eg2))
        chi2 += float(np.sum(wt * edg2))
    return m, chi, q, chi2


def se_factorized_z(models: ScalarModelPair, t_z: float, mh1z: float, ch1z: float,
                    qh1z: float, n_nodes: int = DEFAULT_GH_NODES, check: bool = True):
    """(m1z, chi1z, q1z, chiz2) with z0 ~ N(0, t_z), y ~ channel(z0)."""
    out = _factorized_z_once(models, t_z, mh1z, ch1z, qh1z, n_nodes)
    if check:
        fine = _factorized_z_once(models, t_z, mh1z, ch1z, qh1z, 2 * n_nodes + 1)
        if max(abs(a - b) for a, b in zip(out, fine)) > NODE_CHECK_TOL:
            raise QuadratureAccuracyError(
                f"z-side moments changed more than {NODE_CHECK_TOL} on node doubling")
        return fine
    return out


# ---------------------------------------------------------------------------
# gaussian part


def _check_definite(measure: SpectralMeasure, qh2x: float, qh2z: float):
    # the denominator is affine in lambda: positivity at the support extremes
    # (and at every atom) is sufficient
    lams = [l for l, _ in measure.atoms]
    if measure.density is not None:
        lams += list(measure.density.support)
    if measure.samples is not None:
        lams += [float(np.min(measure.samples)), float(np.max(measure.samples))]
    for lam in lams:
        if qh2x + lam * qh2z <= 0:
            raise IndefinitePrecisionError(
                f"Qh2x + lam Qh2z = {qh2x + lam * qh2z:.3e} <= 0 at lam = {lam}",
                min_eigenvalue=qh2x + lam * qh2z)


def se_gaussian_part(measure: SpectralMeasure, t_x: float, delta: float,
                     mh2x: float, mh2z: float, ch2x: float, ch2z: float,
                     qh2x: float, qh2z: float):
    """(m2x, chi2x, q2x, m2z, chi2z, q2z) as spectral averages."""
    _check_definite(measure, qh2x, qh2z)
    ex = lambda f: spectral_expectation(measure, f)
    w = lambda l: 1.0 / (qh2x + l * qh2z)
    m2x = t_x * ex(lambda l: (mh2x + l * mh2z) * w(l))
    chi2x = ex(w)
    q2x = (ex(lambda l: (ch2x + l * ch2z) * w(l) ** 2)
           + t_x * ex(lambda l: (mh2x + l * mh2z) ** 2 * w(l) ** 2))
    m2z = t_x / delta * ex(lambda l: l * (mh2x + l * mh2z) * w(l))
    chi2z = ex(lambda l: l * w(l)) / delta
    q2z = (ex(lambda l: l * (ch2x + l * ch2z) * w(l) ** 2) / delta
           + t_x / delta * ex(lambda l: l * (mh2x + l * mh2z) ** 2 * w(l) ** 2))
    return m2x, chi2x, q2x, m2z, chi2z, q2z


# ---------------------------------------------------------------------------
# message passes


def _snap_chihat(value: float, label: str) -> float:
    if value < -CHIHAT_SNAP:
        raise NegativeConjugateVarianceError(f"{label} = {value:.3e} < -{CHIHAT_SNAP}")
    return max(value, 0.0)


def _guard_chi(chi: float, label: str) -> float:
    if chi <= CHI_FLOOR:
        raise DegenerateDivergenceError(f"{label} = {chi:.3e} at or below floor")
    return chi


def se_message_pass(direction: str, macro: MacroState) -> MacroState:
    """Apply the conjugate updates of one direction ("ftog" or "gtof").

    The chihat updates use the overlap m (not the conjugate mhat) in the
    subtracted squared term, as the large-N derivation dictates.
    """
    t_x, t_z = macro.t_x, macro.t_z
    if direction == "ftog":
        chix = _guard_chi(macro.chi1x, "chi1x")
        chiz = _guard_chi(macro.chi1z, "chi1z")
        return replace(
            macro,
            qh2x=1.0 / chix - macro.qh1x,
            mh2x=macro.m1x / (t_x * chix) - macro.mh1x,
            ch2x=_snap_chihat(macro.q1x / chix ** 2
                              - macro.m1x ** 2 / (t_x * chix ** 2) - macro.ch1x,
                              "chihat2x"),
            qh2z=1.0 / chiz - macro.qh1z,
            mh2z=macro.m1z / (t_z * chiz) - macro.mh1z,
            ch2z=_snap_chihat(macro.q1z / chiz ** 2
                              - macro.m1z ** 2 / (t_z * chiz ** 2) - macro.ch1z,
                              "chihat2z"),
        )
    if direction == "gtof":
        chix = _guard_chi(macro.chi2x, "chi2x")
        chiz = _guard_chi(macro.chi2z, "chi2z")
        return replace(
            macro,
            qh1x=1.0 / chix - macro.qh2x,
            mh1x=macro.m2x / (t_x * chix) - macro.mh2x,
            ch1x=_snap_chihat(macro.q2x / chix ** 2
                              - macro.m2x ** 2 / (t_x * chix ** 2) - macro.ch2x,
                              "chihat1x"),
            qh1z=1.0 / chiz - macro.qh2z,
            mh1z=macro.m2z / (t_z * chiz) - macro.mh2z,
            ch1z=_snap_chihat(macro.q2z / chiz ** 2
                              - macro.m2z ** 2 / (t_z * chiz ** 2) - macro.ch2z,
                              "chihat1z"),
        )
    raise ValueError(f"direction must be 'ftog' or 'gtof', got {direction!r}")


# ---------------------------------------------------------------------------
# drivers


def se_sweep(se: SEModel, macro: MacroState, check: bool = False) -> MacroState:
    """One full iteration: factorized -> FtoG -> gaussian -> GtoF."""
    m1x, chi1x, q1x, _ = se_factorized_x(se.models, macro.mh1x, macro.ch1x,
                                         macro.qh1x, se.n_nodes, check=check)
    m1z, chi1z, q1z, _ = se_factorized_z(se.models, macro.t_z, macro.mh1z,
                                         macro.ch1z, macro.qh1z, se.n_nodes,
                                         check=check)
    macro = replace(macro, m1x=m1x, chi1x=chi1x, q1x=q1x,
                    m1z=m1z, chi1z=chi1z, q1z=q1z)
    macro = se_message_pass("ftog", macro)
    m2x, chi2x, q2x, m2z, chi2z, q2z = se_gaussian_part(
        se.measure, macro.t_x, se.delta, macro.mh2x, macro.mh2z,
        macro.ch2x, macro.ch2z, macro.qh2x, macro.qh2z)
    macro = replace(macro, m2x=m2x, chi2x=chi2x, q2x=q2x,
                    m2z=m2z, chi2z=chi2z, q2z=q2z)
    return se_message_pass("gtof", macro)


def se_trajectory(se: SEModel, init: MacroState | None = None, t_iter: int = 20,
                  check_first: bool = True) -> list[MacroState]:
    """Iterate the recursion t_iter times, recording the state of each iteration.

    The recorded state of iteration t carries that iteration's moments and
    side-2 conjugates together with the side-1 conjugates that *entered* the
    iteration, mirroring what the engine records per row; the GtoF output
    feeds the next iteration.
    """
    macro = default_init(se.t_x, se.t_z) if init is None else \
        replace(init, t_x=se.t_x, t_z=se.t_z)
    out = []
    for t in range(t_iter):
        swept = se_sweep(se, macro, check=check_first and t == 0)
        out.append(replace(swept, mh1x=macro.mh1x, ch1x=macro.ch1x,
                           qh1x=macro.qh1x, mh1z=macro.mh1z, ch1z=macro.ch1z,
                           qh1z=macro.qh1z))
        macro = swept
    return out


@dataclass
class FixedPointResult:
    state: MacroState
    converged: bool
    residual: float
    iterations: int
    consistency_gap: float = 0.0


def se_fixed_point(se: SEModel, init: MacroState | None = None,
                   damping: float = 0.5, tol: float = 1e-11,
                   max_iter: int = 20000) -> FixedPointResult:
    """Damped iteration until every evolving field moves less than tol.

    Non-convergence is reported on the result, not raised; callers scanning
    unstable regions handle it.  On convergence the two-part consistency
    (m1 = m2, q1 = q2, chi1 = chi2 on both sides) is asserted within 10*tol.
    """
    macro = default_init(se.t_x, se.t_z) if init is None else \
        replace(init, t_x=se.t_x, t_z=se.t_z)
    residual = np.inf
    for it in range(1, max_iter + 1):
        new = se_sweep(se, macro, check=False)
        residual = max(abs(getattr(new, f) - getattr(macro, f))
                       for f in EVOLVING_FIELDS)
        if damping < 1.0:
            damped = {f: damping * getattr(new, f) + (1 - damping) * getattr(macro, f)
                      for f in ("mh1x", "ch1x", "qh1x", "mh1z", "ch1z", "qh1z")}
            damped["ch1x"] = max(damped["ch1x"], 0.0)
            damped["ch1z"] = max(damped["ch1z"], 0.0)
            macro = replace(new, **damped)
        else:
            macro = new
        if residual < tol:
            gap = max(abs(macro.m1x - macro.m2x), abs(macro.q1x - macro.q2x),
                      abs(macro.chi1x - macro.chi2x), abs(macro.m1z - macro.m2z),
                      abs(macro.q1z - macro.q2z), abs(macro.chi1z - macro.chi2z))
            if gap > 10 * tol:
                raise VampseError(
                    f"converged fixed point violates two-part consistency: gap {gap:.3e}")
            return FixedPointResult(state=macro, converged=True, residual=residual,
                                    iterations=it, consistency_gap=gap)
    return FixedPointResult(state=macro, converged=False, residual=residual,
                            iterations=max_iter)


def rs_saddle_residual(macro: MacroState, se: SEModel) -> float:
    """Max absolute mismatch of every SE right-hand side re-evaluated at macro.

    Zero exactly at a fixed point; by the saddle-point equivalence this
    certifies the replica-symmetric stationarity of the state.
    """
    new = se_sweep(se, macro, check=False)
    return max(abs(getattr(new, f) - getattr(macro, f)) for f in EVOLVING_FIELDS)


def se_chi2_moments(se: SEModel, macro: MacroState) -> tuple[float, float]:
    """(chix2, chiz2) = mean squared denoiser derivatives at the state's fields."""
    _, _, _, chix2 = se_factorized_x(se.models, macro.mh1x, macro.ch1x, macro.qh1x,
                                     se.n_nodes, check=False)
    _, _, _, chiz2 = se_factorized_z(se.models, macro.t_z, macro.mh1z, macro.ch1z,
                                     macro.qh1z, se.n_nodes, check=False)
    return chix2, chiz2
