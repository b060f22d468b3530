"""Replica-symmetry instability diagnostics at state-evolution fixed points.

Three equivalent stability tests are provided and cross-checked:

* the replicon determinant condition built from the second derivatives of
  the spectral potential F(chi_x, chi_z) (negative => RS unstable);
* its expanded form in terms of the spectral second moments zeta0..zeta2
  (the microscopic field-perturbation condition, same sign);
* the 2x2 variance-growth matrix of an injected field perturbation, whose
  largest eigenvalue exceeds 1 exactly when the other two go negative.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .ensembles import SpectralMeasure, spectral_expectation
from .errors import BracketError, SENonConvergenceError, SingularMeasureError
from .state_evolution import (
    FixedPointResult,
    MacroState,
    SEModel,
    se_chi2_moments,
    se_fixed_point,
)

ZETA_DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class StabilityReport:
    """Every intermediate of the instability evaluation, for auditability."""

    delta: float
    chi_x: float
    chi_z: float
    chi_x2: float
    chi_z2: float
    zeta0: float
    zeta1: float
    zeta2: float
    f_xx: float
    f_zz: float
    f_xz: float
    at_lhs: float
    micro_lhs: float
    growth_matrix: tuple[tuple[float, float], tuple[float, float]]
    growth_eigenvalue: float
    stable: bool

    def to_json(self) -> dict:
        out = asdict(self)
        out["growth_matrix"] = [list(r) for r in self.growth_matrix]
        return out


def zeta_moments(qh2x: float, qh2z: float, measure: SpectralMeasure):
    """(zeta0, zeta1, zeta2): spectral moments of 1/(Qh2x + lam Qh2z)^2."""
    w2 = lambda l: 1.0 / (qh2x + l * qh2z) ** 2
    z0 = spectral_expectation(measure, w2)
    z1 = spectral_expectation(measure, lambda l: l * w2(l))
    z2 = spectral_expectation(measure, lambda l: l * l * w2(l))
    return z0, z1, z2


def f_second_derivatives(chi_x: float, chi_z: float, zeta0: float, zeta1: float,
                         zeta2: float, delta: float):
    """Closed-form Hessian entries of the spectral potential F(chi_x, chi_z)."""
    det = zeta0 * zeta2 - zeta1 ** 2
    if det <= ZETA_DEGENERATE_TOL * max(zeta0 * zeta2, 1e-300):
        raise SingularMeasureError(
            "zeta0*zeta2 == zeta1^2 (single-atom spectrum): F Hessian is singular")
    f_xx = 0.5 * (1.0 / chi_x ** 2 - zeta2 / det)
    f_zz = 0.5 * delta * (1.0 / chi_z ** 2 - delta * zeta0 / det)
    f_xz = 0.5 * delta * zeta1 / det
    return f_xx, f_zz, f_xz


def at_condition(chi_x: float, chi_z: float, chi_x2: float, chi_z2: float,
                 zeta0: float, zeta1: float, zeta2: float, delta: float) -> float:
    """Replicon determinant (1 - 2Fxx chix2)(1 - (2/d)Fzz chiz2) - (4/d)Fxz^2 chix2 chiz2.

    Negative means the replica-symmetric saddle is locally unstable.  The
    cross term carries the square of the mixed derivative, consistent with
    the 2x2 determinant it derives from.
    """
    f_xx, f_zz, f_xz = f_second_derivatives(chi_x, chi_z, zeta0, zeta1, zeta2, delta)
    return ((1.0 - 2.0 * f_xx * chi_x2) * (1.0 - 2.0 / delta * f_zz * chi_z2)
            - 4.0 / delta * f_xz ** 2 * chi_x2 * chi_z2)


def micro_instability(chi_x: float, chi_z: float, chi_x2: float, chi_z2: float,
                      zeta0: float, zeta1: float, zeta2: float,
                      delta: float) -> float:
    """Expanded field-perturbation condition; negative => fixed point unstable.

    Algebraically identical to ``at_condition`` (every denominator carries
    zeta0*zeta2 - zeta1^2).
    """
    det = zeta0 * zeta2 - zeta1 ** 2
    if det <= ZETA_DEGENERATE_TOL * max(zeta0 * zeta2, 1e-300):
        raise SingularMeasureError(
            "zeta0*zeta2 == zeta1^2 (single-atom spectrum): condition undefined")
    return (1.0
            - (1.0 / chi_x ** 2 - zeta2 / det) * chi_x2
            - (1.0 / chi_z ** 2 - delta * zeta0 / det) * chi_z2
            + (1.0 / (chi_x ** 2 * chi_z ** 2)
               - delta * zeta0 / (chi_x ** 2 * det)
               - zeta2 / (chi_z ** 2 * det)
               + delta / det) * chi_x2 * chi_z2)


def growth_matrix(chi_x: float, chi_z: float, chi_x2: float, chi_z2: float,
                  zeta0: float, zeta1: float, zeta2: float, delta: float):
    """Variance-propagation matrix of an injected field perturbation.

    Entry (i, j) maps the variance of side-j's perturbation into side-i's
    after one iteration; the fixed point is unstable iff the largest
    eigenvalue exceeds 1.  The z-row trace sums run over the M coordinates,
    hence the 1/delta on the zeta2 term as well as on the off-diagonal.
    """
    u = chi_x2 / chi_x ** 2 - 1.0
    v = chi_z2 / chi_z ** 2 - 1.0
    mat = np.array([
        [(zeta0 / chi_x ** 2 - 1.0) * u, (zeta1 / chi_x ** 2) * v],
        [(zeta1 / (delta * chi_z ** 2)) * u,
         (zeta2 / (delta * chi_z ** 2) - 1.0) * v],
    ])
    eig = np.linalg.eigvals(mat)
    lead = float(eig[np.argmax(np.abs(eig))].real)
    return mat, lead


def evaluate_stability(se: SEModel, fixed: MacroState,
                       chi2: tuple[float, float] | None = None) -> StabilityReport:
    """Full report at a converged fixed point of the given SE model."""
    chi_x2, chi_z2 = se_chi2_moments(se, fixed) if chi2 is None else chi2
    z0, z1, z2 = zeta_moments(fixed.qh2x, fixed.qh2z, se.measure)
    f_xx, f_zz, f_xz = f_second_derivatives(fixed.chi1x, fixed.chi1z, z0, z1, z2,
                                            se.delta)
    at = at_condition(fixed.chi1x, fixed.chi1z, chi_x2, chi_z2, z0, z1, z2, se.delta)
    micro = micro_instability(fixed.chi1x, fixed.chi1z, chi_x2, chi_z2, z0, z1, z2,
                              se.delta)
    mat, lead = growth_matrix(fixed.chi1x, fixed.chi1z, chi_x2, chi_z2, z0, z1, z2,
                              se.delta)
    return StabilityReport(
        delta=se.delta, chi_x=fixed.chi1x, chi_z=fixed.chi1z,
        chi_x2=chi_x2, chi_z2=chi_z2, zeta0=z0, zeta1=z1, zeta2=z2,
        f_xx=f_xx, f_zz=f_zz, f_xz=f_xz, at_lhs=at, micro_lhs=micro,
        growth_matrix=((float(mat[0, 0]), float(mat[0, 1])),
                       (float(mat[1, 0]), float(mat[1, 1]))),
        growth_eigenvalue=lead, stable=bool(micro > 0.0))


def find_at_threshold(se_model_factory, lo: float, hi: float, tol: float = 1e-3,
                      damping: float = 0.5, se_tol: float = 1e-11,
                      max_iter: int = 20000):
    """Bisect delta on the sign of the replicon condition at the SE fixed point.

    ``se_model_factory(delta)`` builds the SEModel for a given aspect ratio.
    Fixed points along the sweep are warm-started from the previous one to
    stay on a single solution branch.  Raises BracketError if the endpoints
    agree in sign; SE non-convergence propagates with the offending delta.
    """
    if not (0 < lo < hi):
        raise BracketError(f"need 0 < lo < hi, got [{lo}, {hi}]")

    warm: dict[str, MacroState | None] = {"state": None}

    def condition(delta: float) -> float:
        se = se_model_factory(delta)
        fp: FixedPointResult = se_fixed_point(se, init=warm["state"],
                                              damping=damping, tol=se_tol,
                                              max_iter=max_iter)
        if not fp.converged:
            raise SENonConvergenceError(
                f"SE did not converge at delta={delta} (residual {fp.residual:.3e})",
                delta=delta, residual=fp.residual)
        warm["state"] = fp.state
        return evaluate_stability(se, fp.state).at_lhs

    f_lo = condition(lo)
    f_hi = condition(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise BracketError(
            f"at_condition has the same sign at both ends: f({lo})={f_lo:.3e}, "
            f"f({hi})={f_hi:.3e}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = condition(mid)
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
