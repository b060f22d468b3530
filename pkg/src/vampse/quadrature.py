"""Quadrature rules for expectations over Gaussian measures.

Two kinds of rules are used throughout:

* plain Gauss-Hermite, rescaled so that ``sum(w * f(x)) = E[f(X)]`` for
  ``X ~ N(0, 1)`` -- exact for smooth integrands;
* a piecewise Gauss-Legendre rule against the normal density with explicit
  breakpoints, for integrands that are only piecewise smooth (e.g. a channel
  whose output switches at z0 = 0).  Plain Gauss-Hermite converges poorly on
  such integrands, so every breakpoint becomes a panel edge.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

# Beyond 8 standard deviations the discarded normal tail mass is < 1.3e-15,
# below every tolerance used in the package.
_TAIL_SIGMAS = 8.0


@lru_cache(maxsize=64)
def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights with sum(w) = 1 and sum(w * f(x)) ~= E[f(N(0,1))]."""
    if n < 2:
        raise ValueError("need at least 2 nodes")
    x, w = hermgauss(n)
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


@lru_cache(maxsize=256)
def normal_rule(variance: float, breakpoints: tuple[float, ...] = (),
                n_nodes: int = 121) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature for E[f(Z)], Z ~ N(0, variance), honoring breakpoints.

    Without breakpoints this is Gauss-Hermite scaled by sqrt(variance).
    With breakpoints, the real line is cut at every breakpoint and each
    finite panel gets a Gauss-Legendre rule with the normal pdf folded into
    the weights; f is then only required to be smooth within panels.
    """
    if variance < 0:
        raise ValueError("variance must be >= 0")
    if variance == 0.0:
        return np.zeros(1), np.ones(1)
    s = np.sqrt(variance)
    if not breakpoints:
        x, w = gauss_hermite(n_nodes)
        return s * x, w
    edges = sorted(set(float(b) for b in breakpoints))
    edges = [e for e in edges if abs(e) < _TAIL_SIGMAS * s]
    cuts = np.array([-_TAIL_SIGMAS * s] + edges + [_TAIL_SIGMAS * s])
    # Subdivide each panel so none is wider than one sigma; keeps the
    # Legendre order adequate regardless of where the breakpoints fall.
    n_per = max(24, n_nodes // max(1, len(cuts) - 1))
    xg, wg = leggauss(n_per)
    xs, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n_sub = max(1, int(np.ceil((b - a) / s)))
        sub = np.linspace(a, b, n_sub + 1)
        for lo, hi in zip(sub[:-1], sub[1:]):
            x = 0.5 * (hi - lo) * xg + 0.5 * (lo + hi)
            pdf = np.exp(-0.5 * (x / s) ** 2) / (s * np.sqrt(2.0 * np.pi))
            xs.append(x)
            ws.append(0.5 * (hi - lo) * wg * pdf)
    return np.concatenate(xs), np.concatenate(ws)
