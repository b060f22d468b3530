"""Actual data-generating models and postulated scalar denoisers.

The actual prior/channel generate problem instances; the postulated
denoisers implement the scalar posterior-mean (beta = 1, "mmse") or
proximal/MAP (beta -> infinity, "map") maps consumed by the algorithm.
For MAP denoisers the divergence dg is the rescaled limit beta * Var,
i.e. the derivative of the MAP point with respect to the field h, so one
algorithm body serves both modes.

Denoisers may carry closed-form conditional Gaussian moments
(``cond_moments``): expectations of (g, g', g^2, g'^2) over h ~ N(mu,
sigma^2) at fixed conditioning.  State evolution uses these where
available; they are essential for kinked MAP denoisers, where plain
Gauss-Hermite over the field converges far too slowly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import (
    ConfigError,
    DegeneratePosteriorError,
    InvalidParameterError,
    InvalidPrecisionError,
)
from .quadrature import gauss_hermite

_SQRT_2PI = np.sqrt(2.0 * np.pi)
DEFAULT_GH_NODES = 121


def _norm_pdf(t):
    return np.exp(-0.5 * t * t) / _SQRT_2PI


# ---------------------------------------------------------------------------
# actual models


@dataclass(frozen=True)
class ActualPrior:
    """Signal-coordinate law: point atoms plus an optional Gaussian component.

    ``second_moment`` is T_x and must agree with the descriptor;
    ``validate()`` checks that.
    """

    name: str
    atoms: tuple[tuple[float, float], ...]           # (location, weight)
    gaussian_weight: float                            # weight of N(0, var) part
    gaussian_variance: float
    second_moment: float

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x = np.zeros(n)
        u = rng.random(n)
        lo = 0.0
        for loc, w in self.atoms:
            x[(u >= lo) & (u < lo + w)] = loc
            lo += w
        if self.gaussian_weight > 0:
            mask = u >= lo
            x[mask] = rng.standard_normal(int(mask.sum())) * np.sqrt(self.gaussian_variance)
        return x

    def quad_nodes(self, n_nodes: int = DEFAULT_GH_NODES) -> tuple[np.ndarray, np.ndarray]:
        """Nodes/weights resolving E over x0 (atoms exactly, Gaussian by GH)."""
        xs = [np.array([loc for loc, _ in self.atoms])]
        ws = [np.array([w for _, w in self.atoms])]
        if self.gaussian_weight > 0:
            t, w = gauss_hermite(n_nodes)
            xs.append(t * np.sqrt(self.gaussian_variance))
            ws.append(w * self.gaussian_weight)
        return np.concatenate(xs), np.concatenate(ws)

    def validate(self, tol: float = 1e-8) -> None:
        m2 = sum(w * loc * loc for loc, w in self.atoms)
        m2 += self.gaussian_weight * self.gaussian_variance
        if abs(m2 - self.second_moment) > tol:
            raise InvalidParameterError(
                f"stored T_x {self.second_moment} != descriptor second moment {m2}")


@dataclass(frozen=True)
class ActualChannel:
    """Measurement channel q(y | z).

    ``y_components(z0)`` enumerates the channel output for state evolution
    as (y, weight) pairs, each possibly elementwise over z0.
    ``z0_breakpoints`` are points where those components switch (quadrature
    over z0 must cut panels there).
    """

    name: str
    alphabet: str                                     # "discrete" | "continuous"
    sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    likelihood: Callable[[np.ndarray, np.ndarray], np.ndarray]
    y_components: Callable[[np.ndarray], list[tuple[np.ndarray, np.ndarray]]]
    z0_breakpoints: tuple[float, ...] = ()

    def sample(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.sampler(z, rng)


def bernoulli_gauss_prior(rho: float) -> ActualPrior:
    """Zero with probability 1 - rho, else standard normal; T_x = rho."""
    if not 0.0 < rho <= 1.0:
        raise InvalidParameterError(f"rho must be in (0, 1], got {rho}")
    atoms = () if rho == 1.0 else ((0.0, 1.0 - rho),)
    return ActualPrior(name="bernoulli_gauss", atoms=atoms, gaussian_weight=rho,
                       gaussian_variance=1.0, second_moment=rho)


def gaussian_prior(variance: float = 1.0) -> ActualPrior:
    if variance <= 0:
        raise InvalidParameterError("variance must be > 0")
    return ActualPrior(name="gaussian", atoms=(), gaussian_weight=1.0,
                       gaussian_variance=variance, second_moment=variance)


def sign_channel() -> ActualChannel:
    """y = sign(z), with sign(0) resolved to +1."""

    def sampler(z, rng):
        y = np.sign(z)
        y[y == 0] = 1.0
        return y

    def likelihood(y, z):
        s = np.sign(z) + (z == 0)
        return (y == s).astype(float)

    def components(z0):
        s = np.sign(z0) + (z0 == 0)
        return [(s, np.ones_like(z0))]

    return ActualChannel(name="sign", alphabet="discrete", sampler=sampler,
                         likelihood=likelihood, y_components=components,
                         z0_breakpoints=(0.0,))


def random_label_channel() -> ActualChannel:
    """y = +-1 equiprobable, independent of z."""

    def sampler(z, rng):
        return rng.integers(0, 2, size=np.shape(z)) * 2.0 - 1.0

    def likelihood(y, z):
        return np.full(np.broadcast(y, z).shape, 0.5)

    def components(z0):
        one = np.ones_like(z0)
        return [(one, 0.5 * one), (-one, 0.5 * one)]

    return ActualChannel(name="random_label", alphabet="discrete", sampler=sampler,
                         likelihood=likelihood, y_components=components)


def gaussian_noise_channel(variance: float = 1.0,
                           n_nodes: int = DEFAULT_GH_NODES) -> ActualChannel:
    """y = z + noise, noise ~ N(0, variance)."""
    if variance <= 0:
        raise InvalidParameterError("variance must be > 0")
    s = np.sqrt(variance)

    def sampler(z, rng):
        return z + s * rng.standard_normal(np.shape(z))

    def likelihood(y, z):
        return _norm_pdf((y - z) / s) / s

    def components(z0):
        t, w = gauss_hermite(n_nodes)
        return [(z0 + s * ti, wi * np.ones_like(z0)) for ti, wi in zip(t, w)]

    return ActualChannel(name="gaussian_noise", alphabet="continuous", sampler=sampler,
                         likelihood=likelihood, y_components=components)


# ---------------------------------------------------------------------------
# postulated denoisers


@dataclass(frozen=True)
class XDenoiser:
    """Scalar map g(h, Qh) and its field derivative dg for the signal side."""

    name: str
    beta_mode: str                                    # "mmse" | "map"
    g: Callable
    dg: Callable
    # optional closed-form E over h ~ N(mu, sigma^2) of (g, dg, g^2, dg^2)
    cond_moments: Callable | None = None


@dataclass(frozen=True)
class ZDenoiser:
    """Scalar map g(h, Qh, y) and its field derivative for the measurement side."""

    name: str
    beta_mode: str
    g: Callable
    dg: Callable
    cond_moments: Callable | None = None              # (mu, sigma, qh, y) -> 4-tuple


@dataclass(frozen=True)
class ScalarModelPair:
    actual_prior: ActualPrior
    actual_channel: ActualChannel
    x_denoiser: XDenoiser
    z_denoiser: ZDenoiser

    @property
    def beta_mode(self) -> str:
        return self.x_denoiser.beta_mode


def gaussian_prior_denoiser(variance: float = 1.0) -> XDenoiser:
    """Posterior mean under a N(0, variance) postulated prior (beta = 1)."""
    if variance <= 0:
        raise InvalidParameterError("variance must be > 0")
    inv_v = 1.0 / variance

    def check(qh):
        if qh + inv_v <= 0:
            raise InvalidPrecisionError(f"Qh + 1/v = {qh + inv_v} <= 0")
        return qh + inv_v

    def g(h, qh):
        return np.asarray(h) / check(qh)

    def dg(h, qh):
        return np.full(np.shape(h), 1.0 / check(qh))

    def cond(mu, sigma, qh):
        c = check(qh)
        mu = np.asarray(mu, dtype=float)
        eg = mu / c
        edg = np.full_like(mu, 1.0 / c)
        eg2 = (mu * mu + sigma * sigma) / (c * c)
        return eg, edg, eg2, edg ** 2

    return XDenoiser(name="gaussian", beta_mode="mmse", g=g, dg=dg, cond_moments=cond)


def soft_threshold(h, gamma):
    return np.sign(h) * np.maximum(np.abs(h) - gamma, 0.0)


def laplace_map_denoiser(gamma: float) -> XDenoiser:
    """MAP (beta -> inf) denoiser of a Laplace prior: soft threshold / Qh."""
    if gamma <= 0:
        raise InvalidParameterError("gamma must be > 0")

    def check(qh):
        if qh <= 0:
            raise InvalidPrecisionError(f"soft threshold needs Qh > 0, got {qh}")
        return qh

    def g(h, qh):
        return soft_threshold(np.asarray(h), gamma) / check(qh)

    def dg(h, qh):
        return (np.abs(h) > gamma).astype(float) / check(qh)

    def cond(mu, sigma, qh):
        # closed-form truncated-Gaussian moments of the two active branches
        check(qh)
        mu = np.asarray(mu, dtype=float)
        if sigma == 0.0:
            gg = soft_threshold(mu, gamma) / qh
            dd = (np.abs(mu) > gamma).astype(float) / qh
            return gg, dd, gg * gg, dd / qh
        a = (gamma - mu) / sigma
        b = (-gamma - mu) / sigma
        p_up = ndtr(-a)
        p_dn = ndtr(b)
        eg_up = (mu - gamma) * p_up + sigma * _norm_pdf(a)
        eg_dn = (mu + gamma) * p_dn - sigma * _norm_pdf(b)
        eg2_up = ((mu - gamma) ** 2 + sigma ** 2) * p_up + sigma * (mu - gamma) * _norm_pdf(a)
        eg2_dn = ((mu + gamma) ** 2 + sigma ** 2) * p_dn - sigma * (mu + gamma) * _norm_pdf(b)
        act = p_up + p_dn
        return ((eg_up + eg_dn) / qh, act / qh, (eg2_up + eg2_dn) / qh ** 2, act / qh ** 2)

    return XDenoiser(name="laplace_map", beta_mode="map", g=g, dg=dg, cond_moments=cond)


def ising_denoiser() -> XDenoiser:
    """Posterior mean under the +-1 prior; the Qh x^2 term cancels on {+-1}."""

    def g(h, qh):
        return np.tanh(h)

    def dg(h, qh):
        t = np.tanh(h)
        return 1.0 - t * t

    return XDenoiser(name="ising", beta_mode="mmse", g=g, dg=dg)


def _gaussian_channel_denoiser(noise_variance: float, beta_mode: str,
                               name: str) -> ZDenoiser:
    if noise_variance <= 0:
        raise InvalidParameterError("noise variance must be > 0")
    inv_v = 1.0 / noise_variance

    def check(qh):
        if qh + inv_v <= 0:
            raise InvalidPrecisionError(f"Qh + 1/v = {qh + inv_v} <= 0")
        return qh + inv_v

    def g(h, qh, y):
        return (np.asarray(h) + np.asarray(y) * inv_v) / check(qh)

    def dg(h, qh, y):
        return np.full(np.broadcast(h, y).shape, 1.0 / check(qh))

    def cond(mu, sigma, qh, y):
        c = check(qh)
        m = (np.asarray(mu, dtype=float) + np.asarray(y) * inv_v) / c
        eg2 = m * m + (sigma / c) ** 2
        edg = np.full_like(m, 1.0 / c)
        return m, edg, eg2, edg ** 2

    return ZDenoiser(name=name, beta_mode=beta_mode, g=g, dg=dg, cond_moments=cond)


def gaussian_channel_map_denoiser(noise_variance: float = 1.0) -> ZDenoiser:
    """MAP limit for a Gaussian channel: (h + y/v) / (Qh + 1/v).

    The beta = 1 posterior mean has the identical closed form;
    ``gaussian_channel_mmse_denoiser`` exposes it under that mode.
    """
    return _gaussian_channel_denoiser(noise_variance, "map", "gaussian_map")


def gaussian_channel_mmse_denoiser(noise_variance: float = 1.0) -> ZDenoiser:
    return _gaussian_channel_denoiser(noise_variance, "mmse", "gaussian_mmse")


# -- probit: posterior mean of N(h/Qh, 1/Qh) truncated to sign(z) = y --------

_MILLS_SWITCH = -8.0
_MILLS_CF_DEPTH = 120


def _r_mills(t):
    """r(t) = t + pdf(t)/cdf(t), stable for all t.

    For t <= -8 the direct form cancels catastrophically; there we use the
    continued fraction r(-s) = 1/(s + 2/(s + 3/(s + 4/(s + ...)))), which
    has no subtraction at all.
    """
    t = np.asarray(t, dtype=float)
    r = np.empty_like(t)
    hi = t > _MILLS_SWITCH
    if np.any(hi):
        th = t[hi]
        r[hi] = th + np.exp(-0.5 * th * th - 0.5 * np.log(2 * np.pi) - log_ndtr(th))
    if np.any(~hi):
        s = -t[~hi]
        cf = np.zeros_like(s)
        for k in range(_MILLS_CF_DEPTH, 1, -1):
            cf = k / (s + cf)
        r[~hi] = 1.0 / (s + cf)
    return r


def probit_theta_denoiser() -> ZDenoiser:
    """Posterior mean of z ~ N(h/Qh, 1/Qh) restricted to sign(z) = y (beta = 1)."""

    def check(qh):
        if qh <= 0:
            raise InvalidPrecisionError(f"probit needs Qh > 0, got {qh}")
        return np.sqrt(qh)

    def g(h, qh, y):
        rq = check(qh)
        t = np.asarray(y) * np.asarray(h) / rq
        return np.asarray(y) * _r_mills(t) / rq

    def dg(h, qh, y):
        # derivative equals the truncated-Gaussian variance: (1 + r(t)(t - r(t)))/Qh
        rq = check(qh)
        t = np.asarray(y) * np.asarray(h) / rq
        r = _r_mills(t)
        return (1.0 + r * (t - r)) / qh

    return ZDenoiser(name="probit_theta", beta_mode="mmse", g=g, dg=dg)


# -- generic quadrature denoiser (beta = 1) ----------------------------------


@dataclass(frozen=True)
class PostulatedDensity:
    """Density for the generic posterior-mean denoiser: atoms + continuous pdf."""

    atoms: tuple[tuple[float, float], ...] = ()
    pdf: Callable | None = None

    def __post_init__(self):
        if not self.atoms and self.pdf is None:
            raise InvalidParameterError("density needs atoms and/or a pdf")


def quadrature_denoiser(density: PostulatedDensity, nodes: int = DEFAULT_GH_NODES):
    """Posterior mean/variance of the Gaussian-tilted density by quadrature.

    The returned map works on either side: as an XDenoiser directly, or as a
    ZDenoiser through ``quadrature_z_denoiser`` with a y-family of densities.
    The derivative is computed as the tilted variance (beta * Var at beta=1),
    never by finite differences.
    """
    if nodes < 21:
        raise InvalidParameterError("need at least 21 quadrature nodes")
    t_nodes, t_weights = gauss_hermite(nodes)
    ax = np.array([a for a, _ in density.atoms])
    aw = np.array([w for _, w in density.atoms])

    def moments(h, qh):
        if qh <= 0:
            raise InvalidPrecisionError(f"quadrature denoiser needs Qh > 0, got {qh}")
        h = np.asarray(h, dtype=float)
        m = h / qh
        s = 1.0 / np.sqrt(qh)
        xs, terms = [], []
        if ax.size:
            xs.append(np.broadcast_to(ax, h.shape + ax.shape))
            terms.append(aw * np.exp(-0.5 * qh * (ax - m[..., None]) ** 2))
        if density.pdf is not None:
            x_cont = m[..., None] + s * t_nodes
            xs.append(x_cont)
            terms.append(_SQRT_2PI * s * t_weights * density.pdf(x_cont))
        x = np.concatenate(xs, axis=-1)
        w = np.concatenate(terms, axis=-1)
        z = np.sum(w, axis=-1)
        if np.any(z < 1e-300):
            raise DegeneratePosteriorError("tilted-measure normalizer underflowed")
        mean = np.sum(w * x, axis=-1) / z
        var = np.sum(w * x * x, axis=-1) / z - mean ** 2
        return mean, np.maximum(var, 0.0)

    def g(h, qh):
        return moments(h, qh)[0]

    def dg(h, qh):
        return moments(h, qh)[1]

    return XDenoiser(name="quadrature", beta_mode="mmse", g=g, dg=dg)


# ---------------------------------------------------------------------------
# declarative construction from config sections

# name -> (builder, {config parameter -> builder keyword})
_PRIORS = {
    "bernoulli_gauss": (bernoulli_gauss_prior, {"rho": "rho"}),
    "gaussian": (gaussian_prior, {"variance": "variance"}),
}

_CHANNELS = {
    "sign": (sign_channel, {}),
    "random_label": (random_label_channel, {}),
    "gaussian_noise": (gaussian_noise_channel, {"variance": "variance"}),
}

_X_DENOISERS = {
    "gaussian": (gaussian_prior_denoiser, {"variance": "variance"}),
    "laplace_map": (laplace_map_denoiser, {"gamma": "gamma"}),
    "ising": (ising_denoiser, {}),
}

_Z_DENOISERS = {
    "gaussian_map": (gaussian_channel_map_denoiser, {"variance": "noise_variance"}),
    "gaussian_mmse": (gaussian_channel_mmse_denoiser, {"variance": "noise_variance"}),
    "probit_theta": (probit_theta_denoiser, {}),
}


def _build(table, section, kind):
    spec = dict(section)
    name = spec.pop("name", None)
    if name not in table:
        raise ConfigError(f"unknown {kind} {name!r}; known: {sorted(table)}")
    builder, param_map = table[name]
    unknown = set(spec) - set(param_map)
    if unknown:
        raise ConfigError(f"{kind} {name!r} got unknown parameters {sorted(unknown)}")
    missing = set(param_map) - set(spec)
    if missing:
        raise ConfigError(f"{kind} {name!r} missing parameters {sorted(missing)}")
    try:
        return builder(**{param_map[k]: v for k, v in spec.items()})
    except InvalidParameterError as exc:
        raise ConfigError(f"{kind} {name!r}: {exc}") from exc


def build_model_pair(model_cfg: dict) -> ScalarModelPair:
    """Construct a ScalarModelPair from the config's model section."""
    pair = ScalarModelPair(
        actual_prior=_build(_PRIORS, model_cfg["prior"], "prior"),
        actual_channel=_build(_CHANNELS, model_cfg["channel"], "channel"),
        x_denoiser=_build(_X_DENOISERS, model_cfg["postulated_prior"], "postulated prior"),
        z_denoiser=_build(_Z_DENOISERS, model_cfg["postulated_channel"],
                          "postulated channel"),
    )
    if pair.x_denoiser.beta_mode != pair.z_denoiser.beta_mode:
        raise ConfigError(
            f"postulated prior is {pair.x_denoiser.beta_mode} but channel is "
            f"{pair.z_denoiser.beta_mode}; beta mode must match")
    declared = model_cfg.get("beta_mode")
    if declared is not None and declared != pair.beta_mode:
        raise ConfigError(f"declared beta_mode {declared!r} != denoisers' {pair.beta_mode!r}")
    return pair
