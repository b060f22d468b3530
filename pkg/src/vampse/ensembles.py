"""Rotationally invariant measurement matrices and their spectral measures.

All large-system expectations E_lam[.] in the state evolution and stability
modules are taken against the limiting (or empirical) eigenvalue law of
A^T A, represented here by :class:`SpectralMeasure`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from .errors import (
    InvalidAspectError,
    InvalidMeasureError,
    InvalidParameterError,
    QuadratureAccuracyError,
    SpectralEvaluationError,
)

MASS_TOL = 1e-10


class DensityPart:
    """Continuous component of a spectral measure.

    Subclasses provide ``pdf``, ``support`` and ``integrate``; ``integrate``
    must resolve the integral of f against the density to the requested
    relative tolerance.
    """

    support: tuple[float, float]

    def pdf(self, lam):
        raise NotImplementedError

    def integrate(self, f, epsrel=1e-10):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class GenericDensity(DensityPart):
    """Arbitrary integrable density, integrated by adaptive Gauss-Kronrod."""

    def __init__(self, pdf, support):
        self._pdf = pdf
        self.support = (float(support[0]), float(support[1]))

    def pdf(self, lam):
        return self._pdf(lam)

    def integrate(self, f, epsrel=1e-10):
        a, b = self.support
        val, err = integrate.quad(lambda l: f(np.asarray(l)) * self._pdf(np.asarray(l)),
                                  a, b, epsrel=epsrel, epsabs=1e-14, limit=500)
        if err > max(epsrel * abs(val), 1e-11):
            raise QuadratureAccuracyError(
                f"density quadrature error estimate {err:.2e} too large")
        return val

    def descriptor(self):
        return {"type": "generic", "support": list(self.support)}


@lru_cache(maxsize=512)
def _mp_rule(delta: float, n_per_panel: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights integrating f against the Marchenko-Pastur density.

    Both edges are resolved by square-root substitutions (lam = lm + c v^2
    from the left, lam = lp - c w^2 from the right), which absorb the
    sqrt edge factors exactly; for delta near 1 the 1/lam factor develops a
    boundary layer next to the left edge, resolved by geometrically graded
    panels in v.
    """
    lm = (1.0 - np.sqrt(delta)) ** 2
    lp = (1.0 + np.sqrt(delta)) ** 2
    mid = 0.5 * (lm + lp)
    xg, wg = leggauss(n_per_panel)
    xg = 0.5 * (xg + 1.0)           # map to [0, 1]
    wg = 0.5 * wg

    def panels_from_edges(edges):
        vs, ws = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            vs.append(a + (b - a) * xg)
            ws.append((b - a) * wg)
        return np.concatenate(vs), np.concatenate(ws)

    # left half: lam = lm + (mid - lm) v^2
    width = np.sqrt(lm / (mid - lm)) if lm > 0 else 1.0
    edges = [0.0]
    v = min(max(width, 1e-4), 0.5)
    while v < 1.0:
        edges.append(v)
        v *= 2.0
    edges.append(1.0)
    v, wv = panels_from_edges(np.array(edges))
    lam_l = lm + (mid - lm) * v * v
    w_l = wv * np.sqrt(lp - lam_l) * (mid - lm) ** 1.5 * v * v / (np.pi * lam_l)
    # right half: lam = lp - (lp - mid) w^2
    u, wu = panels_from_edges(np.array([0.0, 0.5, 1.0]))
    lam_r = lp - (lp - mid) * u * u
    w_r = wu * np.sqrt(lam_r - lm) * (lp - mid) ** 1.5 * u * u / (np.pi * lam_r)
    return np.concatenate([lam_l, lam_r]), np.concatenate([w_l, w_r])


class MarchenkoPasturDensity(DensityPart):
    """Continuous part of the Marchenko-Pastur law of A^T A, entries var 1/N.

    Density sqrt((lp - lam)(lam - lm)) / (2 pi lam) on [lm, lp] with
    lm, lp = (1 -+ sqrt(delta))^2; total mass min(delta, 1).  Integration
    uses edge-adapted nodes (see _mp_rule) with node doubling until the
    requested relative tolerance is met.
    """

    def __init__(self, delta):
        self.delta = float(delta)
        self.lam_minus = (1.0 - np.sqrt(self.delta)) ** 2
        self.lam_plus = (1.0 + np.sqrt(self.delta)) ** 2
        self.support = (self.lam_minus, self.lam_plus)

    def pdf(self, lam):
        lam = np.asarray(lam, dtype=float)
        inside = (lam > self.lam_minus) & (lam < self.lam_plus)
        out = np.zeros_like(lam)
        lam_in = lam[inside]
        out[inside] = np.sqrt((self.lam_plus - lam_in) * (lam_in - self.lam_minus)) / (
            2.0 * np.pi * lam_in)
        return out

    def integrate(self, f, epsrel=1e-10):
        n = 24
        lam, w = _mp_rule(self.delta, n)
        prev = float(np.sum(w * f(lam)))
        while n <= 1536:
            n *= 2
            lam, w = _mp_rule(self.delta, n)
            cur = float(np.sum(w * f(lam)))
            if abs(cur - prev) <= max(epsrel * abs(cur), 1e-14):
                return cur
            prev = cur
        raise QuadratureAccuracyError(
            "Marchenko-Pastur quadrature did not converge to tolerance")

    def descriptor(self):
        return {"type": "marchenko_pastur", "delta": self.delta}


@dataclass(frozen=True)
class SpectralMeasure:
    """Eigenvalue law of A^T A: point atoms, a density, or empirical samples.

    Exactly one of (atoms and/or density) or samples is populated.  Total
    mass must equal 1 within MASS_TOL; all eigenvalues must be >= 0.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    density: DensityPart | None = None
    samples: np.ndarray | None = None

    def __post_init__(self):
        if self.samples is not None:
            if self.atoms or self.density is not None:
                raise InvalidMeasureError("empirical measure cannot carry atoms/density")
            s = np.asarray(self.samples, dtype=float)
            if s.ndim != 1 or s.size == 0:
                raise InvalidMeasureError("samples must be a nonempty 1-d array")
            if np.min(s) < -1e-12:
                raise InvalidMeasureError(f"negative eigenvalue {np.min(s)}")
            object.__setattr__(self, "samples", np.maximum(s, 0.0))
            return
        mass = 0.0
        for lam, w in self.atoms:
            if lam < 0:
                raise InvalidMeasureError(f"negative atom eigenvalue {lam}")
            if not 0.0 < w <= 1.0:
                raise InvalidMeasureError(f"atom weight {w} outside (0, 1]")
            mass += w
        if self.density is not None:
            mass += self.density.integrate(lambda l: np.ones_like(l))
        if abs(mass - 1.0) > MASS_TOL:
            raise InvalidMeasureError(f"total mass {mass!r} != 1")

    def to_json(self) -> dict:
        if self.samples is not None:
            return {"samples": [float(v) for v in self.samples]}
        out: dict = {"atoms": [[float(l), float(w)] for l, w in self.atoms]}
        if self.density is not None:
            out["density"] = self.density.descriptor()
        return out

    @staticmethod
    def from_json(doc: dict) -> "SpectralMeasure":
        if "samples" in doc:
            return SpectralMeasure(samples=np.asarray(doc["samples"], dtype=float))
        density = None
        d = doc.get("density")
        if d is not None:
            if d.get("type") != "marchenko_pastur":
                raise InvalidMeasureError(f"density type {d.get('type')!r} not loadable")
            density = MarchenkoPasturDensity(d["delta"])
        return SpectralMeasure(atoms=tuple((l, w) for l, w in doc.get("atoms", ())),
                               density=density)


def spectral_expectation(measure: SpectralMeasure, f, epsrel=1e-10) -> float:
    """E_lam[f] = sum_i w_i f(lam_i) + integral of f against the density.

    For empirical measures this is exactly the mean of f over the stored
    eigenvalues (each of weight 1/N), evaluated in one vectorized pass so it
    reproduces the engine's trace sums bit-for-bit.
    """
    if measure.samples is not None:
        vals = np.asarray(f(measure.samples), dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = measure.samples[~np.isfinite(vals)][0]
            raise SpectralEvaluationError(f"f not finite at eigenvalue {bad}", lam=bad)
        return float(np.mean(vals))
    total = 0.0
    if measure.atoms:
        lam = np.array([l for l, _ in measure.atoms])
        w = np.array([wt for _, wt in measure.atoms])
        vals = np.asarray(f(lam), dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = lam[~np.isfinite(vals)][0]
            raise SpectralEvaluationError(f"f not finite at atom {bad}", lam=bad)
        total += float(np.sum(w * vals))
    if measure.density is not None:
        val = measure.density.integrate(f, epsrel=epsrel)
        if not np.isfinite(val):
            raise SpectralEvaluationError("f not finite on density support",
                                          lam=measure.density.support[0])
        total += float(val)
    return total


def marchenko_pastur_measure(delta: float) -> SpectralMeasure:
    """Limiting law of A^T A for iid Gaussian A with entry variance 1/N."""
    if delta <= 0:
        raise InvalidParameterError(f"delta must be > 0, got {delta}")
    atoms = ()
    if delta < 1.0:
        atoms = ((0.0, 1.0 - delta),)
    return SpectralMeasure(atoms=atoms, density=MarchenkoPasturDensity(delta))


def row_orthogonal_measure(delta: float, scale: float = 1.0) -> SpectralMeasure:
    """Limiting law of A^T A for the row-orthogonal ensemble (A A^T = scale^2 I)."""
    if not 0 < delta <= 1:
        raise InvalidParameterError(f"row-orthogonal requires 0 < delta <= 1, got {delta}")
    if delta == 1.0:
        return SpectralMeasure(atoms=((scale * scale, 1.0),))
    return SpectralMeasure(atoms=((scale * scale, delta), (0.0, 1.0 - delta)))


@dataclass
class MeasurementMatrix:
    """Dense measurement matrix with cached SVD factors A = U S V^T."""

    rows: int
    cols: int
    entries: np.ndarray
    svd_u: np.ndarray     # rows x rows orthogonal
    svd_s: np.ndarray     # min(rows, cols) singular values, >= 0
    svd_v: np.ndarray     # cols x cols orthogonal
    provenance: str = ""
    eigenvalues: np.ndarray = field(init=False)   # cols eigenvalues of A^T A

    def __post_init__(self):
        lam = np.zeros(self.cols)
        lam[: self.svd_s.size] = self.svd_s ** 2
        self.eigenvalues = lam

    @property
    def delta(self) -> float:
        return self.rows / self.cols

    def validate(self, recon_tol=1e-8, ortho_tol=1e-10):
        """Check the SVD cache invariants; raises InvalidMeasureError on failure."""
        m, n = self.rows, self.cols
        r = min(m, n)
        recon = (self.svd_u[:, :r] * self.svd_s) @ self.svd_v[:, :r].T
        rel = np.linalg.norm(recon - self.entries) / max(np.linalg.norm(self.entries), 1e-300)
        if rel > recon_tol:
            raise InvalidMeasureError(f"U S V^T reconstruction error {rel:.3e}")
        du = np.max(np.abs(self.svd_u.T @ self.svd_u - np.eye(m)))
        dv = np.max(np.abs(self.svd_v.T @ self.svd_v - np.eye(n)))
        if du > ortho_tol or dv > ortho_tol:
            raise InvalidMeasureError(f"SVD factors not orthogonal: {du:.3e}, {dv:.3e}")

    def save(self, path):
        np.savez(path, entries=self.entries, svd_u=self.svd_u, svd_s=self.svd_s,
                 svd_v=self.svd_v, rows=self.rows, cols=self.cols,
                 provenance=np.str_(self.provenance))

    @staticmethod
    def load(path) -> "MeasurementMatrix":
        with np.load(path, allow_pickle=False) as z:
            return MeasurementMatrix(rows=int(z["rows"]), cols=int(z["cols"]),
                                     entries=z["entries"], svd_u=z["svd_u"],
                                     svd_s=z["svd_s"], svd_v=z["svd_v"],
                                     provenance=str(z["provenance"]))


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian with sign-fixed R."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    return q * sign


def sample_row_orthogonal(m: int, n: int, scale: float = 1.0,
                          rng: np.random.Generator | None = None,
                          provenance: str = "") -> MeasurementMatrix:
    """First m rows of a Haar orthogonal n x n matrix, times scale (A A^T = scale^2 I)."""
    if m > n:
        raise InvalidAspectError(f"row-orthogonal needs M <= N, got {m} > {n}")
    if scale <= 0:
        raise InvalidParameterError("scale must be > 0")
    rng = np.random.default_rng() if rng is None else rng
    q = haar_orthogonal(n, rng)
    a = scale * q[:m, :]
    # A = U S V^T holds exactly with U = I, S = scale on the diagonal, V^T = Q.
    return MeasurementMatrix(rows=m, cols=n, entries=a, svd_u=np.eye(m),
                             svd_s=np.full(m, scale), svd_v=q.T, provenance=provenance)


def sample_iid_gaussian(m: int, n: int, rng: np.random.Generator | None = None,
                        provenance: str = "") -> MeasurementMatrix:
    """Entries iid N(0, 1/N); SVD computed and cached."""
    if m < 1 or n < 1:
        raise InvalidParameterError("matrix dimensions must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    a = rng.standard_normal((m, n)) / np.sqrt(n)
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    return MeasurementMatrix(rows=m, cols=n, entries=a, svd_u=u, svd_s=s,
                             svd_v=vt.T, provenance=provenance)


def _atom_counts(atoms, n_slots: int) -> list[tuple[float, int]]:
    """Resolve atom weights to integer multiplicities by largest remainder."""
    raw = [(lam, w * n_slots) for lam, w in atoms]
    counts = [int(np.floor(c)) for _, c in raw]
    short = n_slots - sum(counts)
    remainders = sorted(range(len(raw)), key=lambda i: raw[i][1] - counts[i], reverse=True)
    for i in remainders[:short]:
        counts[i] += 1
    return [(lam, c) for (lam, _), c in zip(raw, counts)]


def sample_haar_with_spectrum(measure: SpectralMeasure, m: int, n: int,
                              rng: np.random.Generator | None = None,
                              provenance: str = "") -> MeasurementMatrix:
    """A = U S V^T with independent Haar U, V and S resolved from an atomic measure."""
    if measure.samples is not None or measure.density is not None:
        raise InvalidMeasureError("sample_haar_with_spectrum needs a purely atomic measure")
    rng = np.random.default_rng() if rng is None else rng
    r = min(m, n)
    counts = _atom_counts(measure.atoms, n)
    lam = np.concatenate([np.full(c, l) for l, c in counts if c > 0])
    lam = np.sort(lam)[::-1]
    if np.count_nonzero(lam) > r:
        raise InvalidMeasureError(
            f"measure implies rank {np.count_nonzero(lam)} > min(M, N) = {r}")
    s = np.sqrt(lam[:r])
    u = haar_orthogonal(m, rng)
    v = haar_orthogonal(n, rng)
    a = (u[:, :r] * s) @ v[:, :r].T
    return MeasurementMatrix(rows=m, cols=n, entries=a, svd_u=u, svd_s=s, svd_v=v,
                             provenance=provenance)


def empirical_spectrum(a: MeasurementMatrix) -> SpectralMeasure:
    """N eigenvalues of A^T A (squared singular values, zero-padded), weight 1/N each."""
    return SpectralMeasure(samples=a.eigenvalues.copy())
