"""
The six NEF-QVF families and their conjugate duals.

Each family is described in the mean parametrization: the latent
observation ``S | u`` has density ``b(s, n) exp{theta(u) s - n M(theta(u))}``
with mean ``n u`` and variance ``n V(u)``, and its conjugate ``p(y | s, n)``
has density ``h(s, n) exp{theta(y) s - n M(theta(y))} |D(y)|`` with mean
``s / n`` and variance ``V(s / n) / (n - nu2)``.

All densities are returned on the log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import integrate, special, stats

__all__ = [
    "FamilyKind",
    "FamilySpec",
    "QvfCoefficients",
    "CanonicalTriplet",
    "DomainError",
    "ParameterError",
    "qvf_coefficients",
    "variance_function",
    "mean_domain",
    "canonical_triplet",
    "cumulant",
    "log_b",
    "log_h",
    "ghs_log_b_product",
    "latent_logpdf",
    "conjugate_logpdf",
    "conjugate_cdf",
    "conjugate_mean",
    "conjugate_variance",
    "sample_marginal",
    "sample_latent",
    "sample_conjugate",
    "sample_ghs_grid",
]


class DomainError(ValueError):
    """A mean-scale argument lies outside the family's mean domain."""


class ParameterError(ValueError):
    """Invalid conjugate parameters ``(s, n)`` or latent weights."""


class FamilyKind(str, Enum):
    NORMAL_NORMAL = "normal-normal"
    GAMMA_POISSON = "gamma-poisson"
    INVGAMMA_GAMMA = "invgamma-gamma"
    BETA_BINOMIAL = "beta-binomial"
    INVBETA_NEGBINOMIAL = "invbeta-negbinomial"
    GSST_GHS = "gsst-ghs"

    @classmethod
    def parse(cls, name: "str | FamilyKind") -> "FamilyKind":
        """Accept canonical values as well as CamelCase tags like ``InvGammaGamma``."""
        if isinstance(name, FamilyKind):
            return name
        key = "".join(ch for ch in str(name).lower() if ch.isalnum())
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown family {name!r}") from None


_ALIASES = {
    "normalnormal": FamilyKind.NORMAL_NORMAL,
    "gammapoisson": FamilyKind.GAMMA_POISSON,
    "invgammagamma": FamilyKind.INVGAMMA_GAMMA,
    "inversegammagamma": FamilyKind.INVGAMMA_GAMMA,
    "betabinomial": FamilyKind.BETA_BINOMIAL,
    "invbetanegbinomial": FamilyKind.INVBETA_NEGBINOMIAL,
    "inversebetanegativebinomial": FamilyKind.INVBETA_NEGBINOMIAL,
    "gsstghs": FamilyKind.GSST_GHS,
}


class QvfCoefficients(NamedTuple):
    nu0: float
    nu1: float
    nu2: float


class CanonicalTriplet(NamedTuple):
    theta: float
    cumulant: float
    log_jacobian: float


_QVF = {
    FamilyKind.NORMAL_NORMAL: QvfCoefficients(1.0, 0.0, 0.0),
    FamilyKind.GAMMA_POISSON: QvfCoefficients(0.0, 1.0, 0.0),
    FamilyKind.INVGAMMA_GAMMA: QvfCoefficients(0.0, 0.0, 1.0),
    FamilyKind.BETA_BINOMIAL: QvfCoefficients(0.0, 1.0, -1.0),
    FamilyKind.INVBETA_NEGBINOMIAL: QvfCoefficients(0.0, 1.0, 1.0),
    FamilyKind.GSST_GHS: QvfCoefficients(1.0, 0.0, 1.0),
}

# open intervals
_MEAN_DOMAIN = {
    FamilyKind.NORMAL_NORMAL: (-np.inf, np.inf),
    FamilyKind.GAMMA_POISSON: (0.0, np.inf),
    FamilyKind.INVGAMMA_GAMMA: (0.0, np.inf),
    FamilyKind.BETA_BINOMIAL: (0.0, 1.0),
    FamilyKind.INVBETA_NEGBINOMIAL: (0.0, np.inf),
    FamilyKind.GSST_GHS: (-np.inf, np.inf),
}

_DISCRETE_LATENT = {
    FamilyKind.GAMMA_POISSON,
    FamilyKind.BETA_BINOMIAL,
    FamilyKind.INVBETA_NEGBINOMIAL,
}

_LOG2 = math.log(2.0)
_LOGPI = math.log(math.pi)
_HALF_PI = 0.5 * math.pi


def qvf_coefficients(kind: FamilyKind) -> QvfCoefficients:
    """Return ``(nu0, nu1, nu2)`` of ``V(mu) = nu0 + nu1 mu + nu2 mu^2``."""
    return _QVF[FamilyKind.parse(kind)]


def mean_domain(kind: FamilyKind) -> tuple[float, float]:
    return _MEAN_DOMAIN[FamilyKind.parse(kind)]


def _check_mean(kind, mu, what="mu"):
    lo, hi = _MEAN_DOMAIN[kind]
    mu = np.asarray(mu, dtype=float)
    if not np.all((mu > lo) & (mu < hi)):
        raise DomainError(f"{what} outside the mean domain ({lo}, {hi}) of {kind.value}")
    return mu


def _scalar_or_array(x):
    x = np.asarray(x)
    return x.item() if x.ndim == 0 else x


def variance_function(kind: FamilyKind, mu):
    kind = FamilyKind.parse(kind)
    mu = _check_mean(kind, mu)
    nu0, nu1, nu2 = _QVF[kind]
    return _scalar_or_array(nu0 + nu1 * mu + nu2 * mu * mu)


def _variance_unchecked(kind, mu):
    nu0, nu1, nu2 = _QVF[kind]
    return nu0 + nu1 * mu + nu2 * mu * mu


def _theta(kind, u):
    if kind is FamilyKind.NORMAL_NORMAL:
        return u
    if kind is FamilyKind.GAMMA_POISSON:
        return np.log(u)
    if kind is FamilyKind.INVGAMMA_GAMMA:
        return -1.0 / u
    if kind is FamilyKind.BETA_BINOMIAL:
        return np.log(u) - np.log1p(-u)
    if kind is FamilyKind.INVBETA_NEGBINOMIAL:
        return np.log(u) - np.log1p(u)
    return np.arctan(u)


def _cumulant_at_mean(kind, u):
    """``M(theta(u))``."""
    if kind is FamilyKind.NORMAL_NORMAL:
        return 0.5 * u * u
    if kind is FamilyKind.GAMMA_POISSON:
        return u
    if kind is FamilyKind.INVGAMMA_GAMMA:
        return np.log(u)
    if kind is FamilyKind.BETA_BINOMIAL:
        return -np.log1p(-u)
    if kind is FamilyKind.INVBETA_NEGBINOMIAL:
        return np.log1p(u)
    return 0.5 * np.log1p(u * u)


def _log_jacobian(kind, u):
    """``log |d theta / d u|``."""
    if kind is FamilyKind.NORMAL_NORMAL:
        return np.zeros_like(u)
    if kind is FamilyKind.GAMMA_POISSON:
        return -np.log(u)
    if kind is FamilyKind.INVGAMMA_GAMMA:
        # d(-1/u)/du = 1/u^2
        return -2.0 * np.log(u)
    if kind is FamilyKind.BETA_BINOMIAL:
        return -np.log(u) - np.log1p(-u)
    if kind is FamilyKind.INVBETA_NEGBINOMIAL:
        return -np.log(u) - np.log1p(u)
    return -np.log1p(u * u)


def canonical_triplet(kind: FamilyKind, u) -> CanonicalTriplet:
    """Canonical parameter, cumulant transform and log-Jacobian at mean ``u``."""
    kind = FamilyKind.parse(kind)
    u = _check_mean(kind, u, "u")
    return CanonicalTriplet(
        _scalar_or_array(_theta(kind, u)),
        _scalar_or_array(_cumulant_at_mean(kind, u)),
        _scalar_or_array(_log_jacobian(kind, u)),
    )


def cumulant(kind: FamilyKind, theta):
    """Cumulant transform ``M(theta)`` on the canonical scale."""
    kind = FamilyKind.parse(kind)
    theta = np.asarray(theta, dtype=float)
    if kind is FamilyKind.NORMAL_NORMAL:
        out = 0.5 * theta * theta
    elif kind is FamilyKind.GAMMA_POISSON:
        out = np.exp(theta)
    elif kind is FamilyKind.INVGAMMA_GAMMA:
        out = -np.log(-theta)
    elif kind is FamilyKind.BETA_BINOMIAL:
        out = np.logaddexp(0.0, theta)
    elif kind is FamilyKind.INVBETA_NEGBINOMIAL:
        out = -np.log(-np.expm1(theta))
    else:
        out = -np.log(np.cos(theta))
    return _scalar_or_array(out)


# ---------------------------------------------------------------------------
# base measures and normalizers
# ---------------------------------------------------------------------------


def ghs_log_b_product(s, n, tol: float = 1e-12, chunk: int = 1 << 16) -> float:
    """
    GHS base measure from the infinite product representation.

    ``b(s, n) = 2^(n-2) Gamma(n/2)^2 / (pi Gamma(n))
    * prod_j {1 + s^2 / (n + 2j)^2}^(-1)``, truncated once a factor differs
    from one by less than `tol`.  Slow for large ``|s|``; kept as an
    independent check on :func:`log_b`.
    """
    s = float(s)
    n = float(n)
    acc = 0.0
    start = 0
    s2 = s * s
    while True:
        j = np.arange(start, start + chunk, dtype=float)
        terms = s2 / (n + 2.0 * j) ** 2
        small = terms < tol
        if small.any():
            stop = max(int(np.argmax(small)), 1)
            acc += np.log1p(terms[:stop]).sum()
            # remaining terms are ~s^2/(n+2j)^2; add their integral
            acc += s2 / (2.0 * (n + 2.0 * (start + stop) - 1.0))
            break
        acc += np.log1p(terms).sum()
        start += chunk
    const = (n - 2.0) * _LOG2 + 2.0 * special.gammaln(0.5 * n) - _LOGPI - special.gammaln(n)
    return const - acc


def _ghs_log_b(s, n):
    return (
        (n - 2.0) * _LOG2
        - _LOGPI
        - special.gammaln(n)
        + 2.0 * special.loggamma(0.5 * (n + 1j * s)).real
    )


def log_b(kind: FamilyKind, s, n):
    """Log base measure of the latent family; no support checks."""
    kind = FamilyKind.parse(kind)
    s = np.asarray(s, dtype=float)
    n = np.asarray(n, dtype=float)
    if kind is FamilyKind.NORMAL_NORMAL:
        out = -0.5 * np.log(2.0 * np.pi * n) - s * s / (2.0 * n)
    elif kind is FamilyKind.GAMMA_POISSON:
        out = special.xlogy(s, n) - special.gammaln(s + 1.0)
    elif kind is FamilyKind.INVGAMMA_GAMMA:
        out = special.xlogy(n - 1.0, s) - special.gammaln(n)
    elif kind is FamilyKind.BETA_BINOMIAL:
        out = special.gammaln(n + 1.0) - special.gammaln(s + 1.0) - special.gammaln(n - s + 1.0)
    elif kind is FamilyKind.INVBETA_NEGBINOMIAL:
        out = special.gammaln(n + s) - special.gammaln(s + 1.0) - special.gammaln(n)
    else:
        out = _ghs_log_b(s, n)
    return _scalar_or_array(out)


def _gsst_log_norm(s, n):
    """``log int_{-pi/2}^{pi/2} cos(phi)^n exp(s phi) dphi``."""
    return (
        _LOGPI
        + special.gammaln(n + 1.0)
        - n * _LOG2
        - 2.0 * special.loggamma(1.0 + 0.5 * n + 0.5j * s).real
    )


def log_h(kind: FamilyKind, s, n):
    """Log normalizing constant of the conjugate family; no parameter checks."""
    kind = FamilyKind.parse(kind)
    s = np.asarray(s, dtype=float)
    n = np.asarray(n, dtype=float)
    if kind is FamilyKind.NORMAL_NORMAL:
        out = 0.5 * np.log(n / (2.0 * np.pi)) - s * s / (2.0 * n)
    elif kind is FamilyKind.GAMMA_POISSON:
        out = s * np.log(n) - special.gammaln(s)
    elif kind is FamilyKind.INVGAMMA_GAMMA:
        # normalizer of IGa(n + 1, s)
        out = (n + 1.0) * np.log(s) - special.gammaln(n + 1.0)
    elif kind is FamilyKind.BETA_BINOMIAL:
        out = special.gammaln(n) - special.gammaln(s) - special.gammaln(n - s)
    elif kind is FamilyKind.INVBETA_NEGBINOMIAL:
        out = special.gammaln(s + n + 1.0) - special.gammaln(s) - special.gammaln(n + 1.0)
    else:
        out = -_gsst_log_norm(s, n)
    return _scalar_or_array(out)


def _valid_conjugate(kind, s, n):
    """Elementwise: does ``(s, n)`` define a proper conjugate density."""
    s = np.asarray(s, dtype=float)
    n = np.asarray(n, dtype=float)
    ok = np.isfinite(s) & np.isfinite(n) & (n > 0)
    if kind in (FamilyKind.GAMMA_POISSON, FamilyKind.INVGAMMA_GAMMA, FamilyKind.INVBETA_NEGBINOMIAL):
        ok &= s > 0
    elif kind is FamilyKind.BETA_BINOMIAL:
        ok &= (s > 0) & (s < n)
    return ok


def _check_conjugate(kind, s, n):
    if not np.all(_valid_conjugate(kind, s, n)):
        raise ParameterError(f"invalid conjugate parameters for {kind.value}: s={s!r}, n={n!r}")


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def _latent_support(kind, s, n):
    if kind in (FamilyKind.NORMAL_NORMAL, FamilyKind.GSST_GHS):
        return np.isfinite(s)
    if kind is FamilyKind.INVGAMMA_GAMMA:
        return s > 0
    integral = (s >= 0) & (s == np.floor(s))
    if kind is FamilyKind.BETA_BINOMIAL:
        return integral & (s <= n)
    return integral


def latent_logpdf(kind: FamilyKind, s, u, n):
    """
    Log density (or mass) of ``S | u`` with weight `n`.

    Values of `s` outside the support give ``-inf``.
    """
    kind = FamilyKind.parse(kind)
    u = _check_mean(kind, u, "u")
    s, n = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(n, dtype=float))
    if np.any(n <= 0):
        raise ParameterError("latent weight n must be positive")
    inside = _latent_support(kind, s, n)
    safe = np.where(inside, s, 1.0 if kind is FamilyKind.INVGAMMA_GAMMA else 0.0)
    out = log_b(kind, safe, n) + _theta(kind, u) * safe - n * _cumulant_at_mean(kind, u)
    return _scalar_or_array(np.where(inside, out, -np.inf))


def _conjugate_support(kind, y):
    lo, hi = _MEAN_DOMAIN[kind]
    return (y > lo) & (y < hi)


def conjugate_logpdf(kind: FamilyKind, y, s_star, n_star):
    """
    Log density of the conjugate family at `y` with parameters ``(s*, n*)``.

    Points outside the support give ``-inf``; invalid parameters raise
    :class:`ParameterError`.
    """
    kind = FamilyKind.parse(kind)
    _check_conjugate(kind, s_star, n_star)
    y = np.asarray(y, dtype=float)
    inside = _conjugate_support(kind, y)
    lo, hi = _MEAN_DOMAIN[kind]
    mid = 0.5 if kind is FamilyKind.BETA_BINOMIAL else (1.0 if lo == 0.0 else 0.0)
    safe = np.where(inside, y, mid)
    out = _conjugate_logpdf_unchecked(kind, safe, np.asarray(s_star, float), np.asarray(n_star, float))
    return _scalar_or_array(np.where(inside, out, -np.inf))


def _conjugate_logpdf_unchecked(kind, y, s, n):
    return (
        log_h(kind, s, n)
        + _theta(kind, y) * s
        - n * _cumulant_at_mean(kind, y)
        + _log_jacobian(kind, y)
    )


def conjugate_mean(kind: FamilyKind, s, n):
    return _scalar_or_array(np.asarray(s, float) / np.asarray(n, float))


def conjugate_variance(kind: FamilyKind, s, n):
    """``V(s/n) / (n - nu2)``; requires ``n > nu2``."""
    kind = FamilyKind.parse(kind)
    nu2 = _QVF[kind].nu2
    n = np.asarray(n, dtype=float)
    if np.any(n <= nu2):
        raise ParameterError(f"variance undefined for n <= {nu2} in {kind.value}")
    mu = np.asarray(s, dtype=float) / n
    return _scalar_or_array(_variance_unchecked(kind, mu) / (n - nu2))


def _gsst_cdf(y, s, n, tol=1e-10):
    phi = np.arctan(np.asarray(y, dtype=float))
    log_c = _gsst_log_norm(s, n)
    mode = math.atan2(s, n)

    def dens(x):
        return math.exp(n * math.log(math.cos(x)) + s * x - log_c) if abs(x) < _HALF_PI else 0.0

    flat = phi.ravel()
    order = np.argsort(flat)
    out = np.empty_like(flat)
    # accumulate outward from the mode so every quadrature piece stays short
    acc = integrate.quad(dens, -_HALF_PI, mode, epsabs=tol, epsrel=tol, limit=200)[0]
    base = acc
    prev = mode
    for idx in order[flat[order] >= mode]:
        base += integrate.quad(dens, prev, flat[idx], epsabs=tol, epsrel=tol, limit=200)[0]
        prev = flat[idx]
        out[idx] = base
    base = acc
    prev = mode
    for idx in order[flat[order] < mode][::-1]:
        base -= integrate.quad(dens, flat[idx], prev, epsabs=tol, epsrel=tol, limit=200)[0]
        prev = flat[idx]
        out[idx] = base
    return np.clip(out, 0.0, 1.0).reshape(phi.shape)


def conjugate_cdf(kind: FamilyKind, y, s, n):
    """
    CDF of the conjugate family.

    Closed forms via :mod:`scipy.stats` except for the generalized scaled
    Student t, which is integrated numerically on the angular scale
    ``phi = arctan(y)``.
    """
    kind = FamilyKind.parse(kind)
    _check_conjugate(kind, s, n)
    s = float(s)
    n = float(n)
    y = np.asarray(y, dtype=float)
    if kind is FamilyKind.NORMAL_NORMAL:
        out = stats.norm.cdf(y, loc=s / n, scale=1.0 / math.sqrt(n))
    elif kind is FamilyKind.GAMMA_POISSON:
        out = stats.gamma.cdf(y, a=s, scale=1.0 / n)
    elif kind is FamilyKind.INVGAMMA_GAMMA:
        out = stats.invgamma.cdf(y, a=n + 1.0, scale=s)
    elif kind is FamilyKind.BETA_BINOMIAL:
        out = stats.beta.cdf(y, s, n - s)
    elif kind is FamilyKind.INVBETA_NEGBINOMIAL:
        out = stats.betaprime.cdf(y, s, n + 1.0)
    else:
        out = _gsst_cdf(y, s, n)
    return _scalar_or_array(out)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _log_gamma_variate(shape, rng):
    """``log G`` for ``G ~ Ga(shape, 1)``, stable for tiny shapes."""
    shape = np.asarray(shape, dtype=float)
    g = rng.standard_gamma(shape + 1.0)
    v = rng.random(shape.shape)
    return np.log(g) + np.log(v) / shape


def _sample_gsst(s, n, rng):
    """
    Exact draws from GSSt(s/n, n).

    On ``phi = arctan(y)`` the density is proportional to
    ``cos(phi)^n exp(s phi)``, which is log-concave, so the
    rejection envelope ``f(m) min(1, exp(1 - f(m)|x - m|))`` around the
    mode ``m`` is valid (acceptance rate 1/4).
    """
    s, n = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(n, dtype=float))
    shape = s.shape
    s = s.ravel()
    n = n.ravel()
    mode = np.arctan2(s, n)
    log_c = _gsst_log_norm(s, n)
    log_peak = n * np.log(np.cos(mode)) + s * mode - log_c
    peak = np.exp(log_peak)
    out = np.empty(s.size)
    todo = np.arange(s.size)
    while todo.size:
        k = todo.size
        pk = peak[todo]
        flat = rng.random(k) < 0.5
        sign = np.where(rng.random(k) < 0.5, -1.0, 1.0)
        e = rng.standard_exponential(k)
        offset = np.where(flat, rng.random(k), 1.0 + e) / pk
        x = mode[todo] + sign * offset
        log_env = log_peak[todo] - np.where(flat, 0.0, e)
        inside = np.abs(x) < _HALF_PI
        xs = np.where(inside, x, 0.0)
        log_f = n[todo] * np.log(np.cos(xs)) + s[todo] * xs - log_c[todo]
        accept = inside & (np.log(rng.random(k)) + log_env <= log_f)
        out[todo[accept]] = x[accept]
        todo = todo[~accept]
    return np.tan(out).reshape(shape)


def sample_conjugate(kind: FamilyKind, s, n, rng: np.random.Generator, size=None):
    """Draw from the conjugate family with parameters ``(s, n)`` (broadcast)."""
    kind = FamilyKind.parse(kind)
    _check_conjugate(kind, s, n)
    return _sample_conjugate(kind, s, n, rng, size)


def _sample_conjugate(kind, s, n, rng, size=None):
    s = np.asarray(s, dtype=float)
    n = np.asarray(n, dtype=float)
    if size is not None:
        s, n = np.broadcast_to(s, size), np.broadcast_to(n, size)
    else:
        s, n = np.broadcast_arrays(s, n)
    if kind is FamilyKind.NORMAL_NORMAL:
        out = s / n + rng.standard_normal(s.shape) / np.sqrt(n)
    elif kind is FamilyKind.GAMMA_POISSON:
        out = rng.standard_gamma(s) / n
    elif kind is FamilyKind.INVGAMMA_GAMMA:
        out = s / rng.standard_gamma(n + 1.0)
    elif kind is FamilyKind.BETA_BINOMIAL:
        out = rng.beta(s, n - s)
    elif kind is FamilyKind.INVBETA_NEGBINOMIAL:
        out = np.exp(_log_gamma_variate(s, rng) - _log_gamma_variate(n + 1.0, rng))
    else:
        out = _sample_gsst(s, n, rng)
    return _scalar_or_array(out)


def sample_marginal(spec: "FamilySpec", rng: np.random.Generator, size=None):
    """Draw ``U`` from the marginal ``p(u | s0, n0)``; parameters were checked by `spec`."""
    return _sample_conjugate(spec.kind, spec.s0, spec.n0, rng, size)


_GHS_EXACT_MAX_TERMS = 256
_GRID_NODES = 4097


def sample_ghs_grid(u, n, rng: np.random.Generator, nodes: int = _GRID_NODES, chunk: int = 2048):
    """
    GHS draws with mean ``n u`` and variance ``n (1 + u^2)`` by grid inversion.

    The density is tabulated on ``s = c + a sinh(t)`` (``c`` the mean, ``a`` the
    standard deviation, ``t`` uniform), which packs nodes near the mode and
    still reaches the exponential tails.  The cumulative trapezoid is
    inverted with linear interpolation.
    """
    u, n = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(n, dtype=float))
    shape = u.shape
    u = u.ravel()
    n = n.ravel()
    out = np.empty(u.size)
    v_all = rng.random(u.size)
    for start in range(0, u.size, chunk):
        sl = slice(start, start + chunk)
        uu, nn, vv = u[sl, None], n[sl, None], v_all[sl]
        theta = np.arctan(uu)
        centre = nn * uu
        sd = np.sqrt(nn * (1.0 + uu * uu))
        reach_up = np.maximum(12.0 * sd, 30.0 / (_HALF_PI - theta))
        reach_lo = np.maximum(12.0 * sd, 30.0 / (_HALF_PI + theta))
        t = np.linspace(0.0, 1.0, nodes)[None, :]
        t_lo = -np.arcsinh(reach_lo / sd)
        t_hi = np.arcsinh(reach_up / sd)
        t = t_lo + (t_hi - t_lo) * t
        grid = centre + sd * np.sinh(t)
        logf = theta * grid + _ghs_log_b(grid, nn)
        logf -= logf.max(axis=1, keepdims=True)
        w = np.exp(logf) * np.cosh(t)
        dt = (t_hi - t_lo) / (nodes - 1)
        cdf = np.concatenate([np.zeros((w.shape[0], 1)), np.cumsum(0.5 * (w[:, 1:] + w[:, :-1]), axis=1) * dt], axis=1)
        cdf /= cdf[:, -1:]
        target = vv[:, None]
        j = np.clip((cdf < target).sum(axis=1) - 1, 0, nodes - 2)
        rows = np.arange(len(vv))
        c0, c1 = cdf[rows, j], cdf[rows, j + 1]
        frac = np.where(c1 > c0, (vv - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.0)
        out[sl] = grid[rows, j] + frac * (grid[rows, j + 1] - grid[rows, j])
    return out.reshape(shape)


def _sample_ghs(u, n, rng):
    """
    GHS draws.  The integer part of `n` uses the exact representation
    ``S = (1/pi) log(G1/G2)``, ``G1 ~ Ga(1/2 + theta/pi)``,
    ``G2 ~ Ga(1/2 - theta/pi)`` for unit weight (summed); any fractional
    remainder, or very large weights, go through :func:`sample_ghs_grid`.
    """
    u, n = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(n, dtype=float))
    shape = u.shape
    u = u.ravel()
    n = n.ravel()
    theta = np.arctan(u)
    whole = np.floor(n + 1e-12)
    big = whole > _GHS_EXACT_MAX_TERMS
    whole = np.where(big, 0.0, whole)
    frac = np.where(big, n, n - whole)
    frac = np.where(frac < 1e-12, 0.0, frac)
    out = np.zeros(u.size)
    a = 0.5 + theta / np.pi
    b = 0.5 - theta / np.pi
    for term in range(int(whole.max(initial=0.0))):
        idx = np.flatnonzero(whole > term)
        out[idx] += (_log_gamma_variate(a[idx], rng) - _log_gamma_variate(b[idx], rng)) / np.pi
    idx = np.flatnonzero(frac > 0.0)
    if idx.size:
        out[idx] += sample_ghs_grid(u[idx], frac[idx], rng)
    return out.reshape(shape)


def _check_latent_weights(kind, n):
    n = np.asarray(n, dtype=float)
    if np.any(~np.isfinite(n)) or np.any(n <= 0):
        raise ParameterError("latent weights must be finite and positive")
    if kind is FamilyKind.BETA_BINOMIAL and np.any(n != np.round(n)):
        raise ParameterError("binomial weights must be positive integers")
    return n


def sample_latent(kind: FamilyKind, u, n, rng: np.random.Generator):
    """
    Draw ``S | u`` with weight `n` (broadcast over `u` and `n`).

    For the beta-binomial pair ``u`` may sit on the closed boundary
    ``{0, 1}``, where the binomial is degenerate.
    """
    kind = FamilyKind.parse(kind)
    n = _check_latent_weights(kind, n)
    if kind is FamilyKind.BETA_BINOMIAL:
        uu = np.asarray(u, dtype=float)
        if not np.all((uu >= 0) & (uu <= 1)):
            raise DomainError("u outside [0, 1] for beta-binomial")
    else:
        _check_mean(kind, u, "u")
    return _scalar_or_array(_draw_latent(kind, u, n, rng))


def _draw_latent(kind, u, n, rng):
    u, n = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(n, dtype=float))
    if kind is FamilyKind.NORMAL_NORMAL:
        return n * u + np.sqrt(n) * rng.standard_normal(u.shape)
    if kind is FamilyKind.GAMMA_POISSON:
        return rng.poisson(n * u).astype(float)
    if kind is FamilyKind.INVGAMMA_GAMMA:
        return rng.standard_gamma(n) * u
    if kind is FamilyKind.BETA_BINOMIAL:
        return rng.binomial(n.astype(np.int64), u).astype(float)
    if kind is FamilyKind.INVBETA_NEGBINOMIAL:
        return rng.negative_binomial(n, 1.0 / (1.0 + u)).astype(float)
    return _sample_ghs(u, n, rng)


# ---------------------------------------------------------------------------
# FamilySpec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FamilySpec:
    """
    A family together with its marginal parameters ``(s0, n0)``.

    Validated once at construction: ``s0 / n0`` must lie in the mean
    domain, ``n0 > max(0, nu2)`` so the marginal variance exists, and the
    family's own support constraints must hold.
    """

    kind: FamilyKind
    s0: float
    n0: float

    def __post_init__(self):
        kind = FamilyKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "s0", float(self.s0))
        object.__setattr__(self, "n0", float(self.n0))
        if not (math.isfinite(self.s0) and math.isfinite(self.n0)):
            raise ParameterError("s0 and n0 must be finite")
        nu2 = _QVF[kind].nu2
        if self.n0 <= max(0.0, nu2):
            raise ParameterError(f"{kind.value} requires n0 > {max(0.0, nu2)}, got {self.n0}")
        if not _valid_conjugate(kind, self.s0, self.n0):
            raise ParameterError(f"invalid (s0, n0) = ({self.s0}, {self.n0}) for {kind.value}")
        try:
            _check_mean(kind, self.s0 / self.n0, "s0/n0")
        except DomainError as exc:
            raise ParameterError(str(exc)) from None

    @property
    def qvf(self) -> QvfCoefficients:
        return _QVF[self.kind]

    @property
    def mean(self) -> float:
        return self.s0 / self.n0

    @property
    def variance(self) -> float:
        return float(conjugate_variance(self.kind, self.s0, self.n0))

    def to_dict(self) -> dict:
        return {"family": self.kind.value, "s0": self.s0, "n0": self.n0}

    @classmethod
    def from_dict(cls, data: dict) -> "FamilySpec":
        return cls(FamilyKind.parse(data["family"]), data["s0"], data["n0"])
