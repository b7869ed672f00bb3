"""
Bayesian fitting of the inverse-gamma / gamma dependence model.

Model, for units ``i = 1..m`` with neighbourhoods ``nb(i)``::

    alpha ~ Ga(a_shape, a_rate) on alpha > 1   beta ~ Ga(b_shape, b_rate)
    lambda ~ Ga(h_shape, h_rate)           n_j | lambda ~ Ga(w_shape, lambda)
    U ~ IGa(alpha, beta)                   S_j | U ~ Ga(n_j, rate 1/U)
    Y_i | S ~ IGa(n*_i + 1, s*_i)

with ``n0 = alpha - 1`` and ``s0 = beta`` entering
``n*_i = n0 + sum_{nb(i)} n_j`` and ``s*_i = s0 + sum_{nb(i)} s_j``.
``lambda`` is the weight-rate hyperparameter (``hyper_rate``); it is
distinct from the marginal precision ``n0``.

``U`` and ``lambda`` have conjugate full conditionals.  ``S``, ``n``,
``alpha`` and ``beta`` are updated with random-walk Metropolis steps on
the log scale (``log(alpha - 1)`` for alpha).  Two joint moves help
mixing along the prior's multiplicative ridges: a common rescaling of
``(beta, U, S)`` and a pair move on ``(n_j, S_j)`` that redraws ``S_j``
from its prior given the proposed ``n_j``.  Proposal scales are tuned by
Robbins-Monro during burn-in only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

from .graph import NeighborhoodGraph, interaction_colouring, validate

__all__ = [
    "Dataset",
    "Priors",
    "McmcConfig",
    "McmcState",
    "McmcTrace",
    "DegenerateDataWarning",
    "NonFiniteTargetError",
    "init_state",
    "u_conditional",
    "hyper_rate_conditional",
    "update_u",
    "update_s",
    "update_alpha_beta",
    "update_weights",
    "update_scale",
    "update_pairs",
    "sweep",
    "log_posterior",
    "deviance",
    "run_chain",
    "run_chains",
    "dic",
    "dic_from_deviances",
    "posterior_predict",
    "ConvergenceReport",
    "convergence_summary",
    "effective_sample_size",
    "potential_scale_reduction",
    "trace_rows",
    "traces_from_rows",
]

ALPHA_CAP = 1.0e3
ALPHA_FLOOR = 1.01
LOG_SCALE_MIN, LOG_SCALE_MAX = math.log(1e-4), math.log(10.0)  # bounds on adapted proposal sd


class DegenerateDataWarning(UserWarning):
    """Moment-based initialisation hit a clamp (e.g. constant data)."""


class NonFiniteTargetError(FloatingPointError):
    """The log target became non-finite; carries the offending state."""

    def __init__(self, message: str, state: "McmcState"):
        super().__init__(f"{message}\nstate: {state}")
        self.state = state


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    graph: NeighborhoodGraph
    likelihood: bool = True  # False drops every y term (prior-only runs)

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if y.size != self.graph.m:
            raise ValueError(f"{y.size} observations for a graph with {self.graph.m} units")
        if not np.all(np.isfinite(y)) or np.any(y <= 0):
            raise ValueError("observations must be finite and strictly positive")
        problems = validate(self.graph)
        if problems:
            raise ValueError(f"invalid graph: {problems[0].kind} at unit {problems[0].unit}")
        a = self.graph.membership() if self.graph.m else np.zeros((0, 0))
        colours = interaction_colouring(self.graph) if self.graph.m else []
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_log_y", np.log(y))
        object.__setattr__(self, "_blocks", [(idx, a[:, idx]) for idx in colours])

    @property
    def m(self) -> int:
        return self.graph.m


@dataclass(frozen=True)
class Priors:
    alpha_shape: float = 0.1
    alpha_rate: float = 0.1
    beta_shape: float = 0.1
    beta_rate: float = 0.1
    weight_shape: float = 1.0
    hyper_shape: float = 1.0
    hyper_rate: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"prior parameter {name} must be positive")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 15_000
    burnin: int = 5_000
    thin: int = 5
    chains: int = 2
    adapt_window: int | None = None  # defaults to burnin
    target_accept: float = 0.35
    initial_scale: float = 0.1

    def __post_init__(self):
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("need 0 <= burnin < iterations")
        if self.thin < 1 or self.chains < 1:
            raise ValueError("thin and chains must be positive")

    @property
    def window(self) -> int:
        return self.burnin if self.adapt_window is None else min(self.adapt_window, self.burnin)

    @property
    def retained(self) -> int:
        return len(range(self.burnin, self.iterations, self.thin))


@dataclass
class McmcState:
    alpha: float
    beta: float
    u: float
    s: np.ndarray
    n: np.ndarray
    hyper_rate: float

    @property
    def n0(self) -> float:
        return self.alpha - 1.0

    @property
    def s0(self) -> float:
        return self.beta


@dataclass
class McmcTrace:
    chain: int
    iterations: np.ndarray  # sweep index of each retained sample
    alpha: np.ndarray
    beta: np.ndarray
    u: np.ndarray
    hyper_rate: np.ndarray
    s: np.ndarray  # (R, m)
    n: np.ndarray  # (R, m)
    deviance: np.ndarray
    acceptance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.alpha)

    def scalars(self) -> dict[str, np.ndarray]:
        out = {"alpha": self.alpha, "beta": self.beta, "u": self.u, "hyper_rate": self.hyper_rate}
        for j in range(self.s.shape[1]):
            out[f"s[{j + 1}]"] = self.s[:, j]
        for j in range(self.n.shape[1]):
            out[f"n[{j + 1}]"] = self.n[:, j]
        out["deviance"] = self.deviance
        return out


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def _star(data: Dataset, alpha, beta, s, n):
    a = data._a
    return beta + a @ s, (alpha - 1.0) + a @ n


def _loglik_terms(data: Dataset, s_star, n_star):
    """Per-unit ``log IGa(y_i; n*_i + 1, s*_i)``."""
    shape = n_star + 1.0
    return shape * np.log(s_star) - special.gammaln(shape) - (shape + 1.0) * data._log_y - s_star / data.y


def deviance(state: McmcState, data: Dataset) -> float:
    """Conditional deviance ``-2 sum_i log IGa(y_i; n*_i + 1, s*_i)`` given the latents."""
    s_star, n_star = _star(data, state.alpha, state.beta, state.s, state.n)
    return float(-2.0 * _loglik_terms(data, s_star, n_star).sum())


def log_posterior(state: McmcState, data: Dataset, priors: Priors) -> float:
    """Unnormalised joint log density on the natural scale."""
    n0 = state.alpha - 1.0
    if n0 <= 0 or state.beta <= 0 or state.u <= 0 or state.hyper_rate <= 0:
        return -math.inf
    if np.any(state.s <= 0) or np.any(state.n <= 0):
        return -math.inf
    lam = state.hyper_rate
    lp = (priors.alpha_shape - 1.0) * math.log(state.alpha) - priors.alpha_rate * state.alpha
    lp += (priors.beta_shape - 1.0) * math.log(state.beta) - priors.beta_rate * state.beta
    lp += (priors.hyper_shape - 1.0) * math.log(lam) - priors.hyper_rate * lam
    lp += float(np.sum(priors.weight_shape * math.log(lam) - special.gammaln(priors.weight_shape)
                       + (priors.weight_shape - 1.0) * np.log(state.n) - lam * state.n))
    lp += state.alpha * math.log(state.beta) - special.gammaln(state.alpha)
    lp += -(state.alpha + 1.0) * math.log(state.u) - state.beta / state.u
    lp += float(np.sum(-state.n * math.log(state.u) - special.gammaln(state.n)
                       + (state.n - 1.0) * np.log(state.s) - state.s / state.u))
    if data.likelihood and data.m:
        s_star, n_star = _star(data, state.alpha, state.beta, state.s, state.n)
        lp += float(_loglik_terms(data, s_star, n_star).sum())
    return lp


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def init_state(data: Dataset, priors: Priors | None = None, rng: np.random.Generator | None = None) -> McmcState:
    """
    Method-of-moments start: ``alpha = 2 + mean^2 / var`` and
    ``beta = mean (alpha - 1)`` invert the inverse-gamma moments, clamped to
    ``[ALPHA_FLOOR, ALPHA_CAP]``; all weights 1, ``hyper_rate = 1``,
    ``u = mean`` and ``s_j = n_j u``.  With `rng`, ``alpha - 1``, ``beta``
    and ``u`` are jittered by a log-normal factor to spread chains.
    """
    import warnings

    y = data.y
    if y.size == 0:
        alpha, beta, mean = 3.0, 2.0, 1.0
    else:
        if np.any(y <= 0):
            raise ValueError("observations must be positive")
        mean = float(y.mean())
        var = float(y.var(ddof=1)) if y.size > 1 else 0.0
        alpha = 2.0 + mean * mean / var if var > 0 else math.inf
        if not ALPHA_FLOOR <= alpha <= ALPHA_CAP:
            warnings.warn(
                f"moment estimate alpha={alpha:g} clamped into [{ALPHA_FLOOR}, {ALPHA_CAP}]",
                DegenerateDataWarning,
                stacklevel=2,
            )
            alpha = min(max(alpha, ALPHA_FLOOR), ALPHA_CAP)
        beta = mean * (alpha - 1.0)
    u = mean
    if rng is not None:
        jitter = np.exp(0.1 * rng.standard_normal(3))
        alpha = 1.0 + (alpha - 1.0) * jitter[0]
        beta *= jitter[1]
        u *= jitter[2]
    n = np.ones(data.m)
    return McmcState(float(alpha), float(beta), float(u), n * u, n, 1.0)


# ---------------------------------------------------------------------------
# sweep components
# ---------------------------------------------------------------------------


def u_conditional(state: McmcState) -> tuple[float, float]:
    """``(shape, scale)`` of the inverse-gamma full conditional of ``u``: ``(n0 + sum n + 1, s0 + sum s)``."""
    return float(state.alpha + state.n.sum()), float(state.beta + state.s.sum())


def hyper_rate_conditional(state: McmcState, priors: Priors) -> tuple[float, float]:
    """``(shape, rate)`` of the gamma full conditional of ``hyper_rate``."""
    m = state.n.size
    return priors.hyper_shape + m * priors.weight_shape, priors.hyper_rate + float(state.n.sum())


def update_u(state: McmcState, data: Dataset, rng: np.random.Generator) -> McmcState:
    """Exact draw of ``u`` from :func:`u_conditional`."""
    shape, scale = u_conditional(state)
    return replace(state, u=float(scale / rng.standard_gamma(shape)))


def _propose(current: np.ndarray, step: np.ndarray):
    """
    Log-scale random-walk proposal.  Values that under- or overflow the
    positive doubles are flagged invalid and rejected; otherwise a latent
    stuck at exactly 0 would drag its weight to 0 as well.
    """
    with np.errstate(over="ignore", under="ignore"):
        new = current * np.exp(step)
    valid = (new > 0.0) & np.isfinite(new)
    return np.where(valid, new, current), valid


def _mh_accept(log_ratio, rng, state):
    if np.any(np.isnan(log_ratio)):
        raise NonFiniteTargetError("NaN in Metropolis log ratio", state)
    return np.log(rng.random(np.shape(log_ratio))) < log_ratio


def update_s(state: McmcState, data: Dataset, scales: np.ndarray, rng: np.random.Generator):
    """
    Log-scale random-walk Metropolis for each ``s_j``; returns the new state
    and the per-coordinate acceptance indicators.
    """
    s = state.s.copy()
    accepted = np.zeros(data.m, dtype=bool)
    inv_u = 1.0 / state.u
    s_star, n_star = _star(data, state.alpha, state.beta, s, state.n)
    for idx, cols in data._blocks:
        step = scales[idx] * rng.standard_normal(idx.size)
        new, valid = _propose(s[idx], step)
        # Ga(s; n, rate 1/u) with the log-scale Jacobian
        log_ratio = state.n[idx] * step - (new - s[idx]) * inv_u
        if data.likelihood:
            shift = cols @ (new - s[idx])
            touched = shift != 0.0
            diff = np.zeros(data.m)
            diff[touched] = (n_star[touched] + 1.0) * (
                np.log(s_star[touched] + shift[touched]) - np.log(s_star[touched])
            ) - shift[touched] / data.y[touched]
            log_ratio = log_ratio + cols.T @ diff
        ok = _mh_accept(np.where(valid, log_ratio, -np.inf), rng, state)
        s[idx[ok]] = new[ok]
        accepted[idx] = ok
        s_star = state.beta + data._a @ s
    return replace(state, s=s), accepted


def update_weights(state: McmcState, data: Dataset, priors: Priors, scales: np.ndarray, rng: np.random.Generator):
    """Log-scale random-walk Metropolis for each ``n_j``, then an exact draw of ``hyper_rate``."""
    n = state.n.copy()
    accepted = np.zeros(data.m, dtype=bool)
    lam = state.hyper_rate
    log_s_over_u = np.log(state.s) - math.log(state.u)
    s_star, n_star = _star(data, state.alpha, state.beta, state.s, n)
    for idx, cols in data._blocks:
        step = scales[idx] * rng.standard_normal(idx.size)
        old = n[idx]
        new, valid = _propose(old, step)
        log_ratio = (
            priors.weight_shape * step
            - lam * (new - old)
            + (new - old) * log_s_over_u[idx]
            - special.gammaln(new)
            + special.gammaln(old)
        )
        if data.likelihood:
            shift = cols @ (new - old)
            touched = shift != 0.0
            a_old = n_star[touched] + 1.0
            a_new = a_old + shift[touched]
            diff = np.zeros(data.m)
            diff[touched] = (
                shift[touched] * (np.log(s_star[touched]) - data._log_y[touched])
                - special.gammaln(a_new)
                + special.gammaln(a_old)
            )
            log_ratio = log_ratio + cols.T @ diff
        ok = _mh_accept(np.where(valid, log_ratio, -np.inf), rng, state)
        n[idx[ok]] = new[ok]
        accepted[idx] = ok
        n_star = (state.alpha - 1.0) + data._a @ n
    new_state = replace(state, n=n)
    shape, rate = hyper_rate_conditional(new_state, priors)
    new_state.hyper_rate = float(rng.standard_gamma(shape) / rate)
    return new_state, accepted


def _alpha_beta_target(alpha, beta, state, data, priors):
    n0 = alpha - 1.0
    if n0 <= 0.0:
        return -math.inf  # alpha - 1 underflowed
    # Ga prior on alpha restricted to alpha > 1, plus the Jacobian of log(alpha - 1)
    lp = (priors.alpha_shape - 1.0) * math.log(alpha) - priors.alpha_rate * alpha + math.log(n0)
    lp += priors.beta_shape * math.log(beta) - priors.beta_rate * beta
    lp += alpha * math.log(beta) - special.gammaln(alpha) - (alpha + 1.0) * math.log(state.u) - beta / state.u
    if data.likelihood and data.m:
        s_star, n_star = _star(data, alpha, beta, state.s, state.n)
        lp += float(_loglik_terms(data, s_star, n_star).sum())
    return lp


def update_alpha_beta(state: McmcState, data: Dataset, priors: Priors, scales: Sequence[float], rng: np.random.Generator):
    """
    Coordinate-wise random walks on ``log(alpha - 1)`` and ``log(beta)``.

    Returns the new state and a length-2 acceptance array ``[alpha, beta]``.
    """
    alpha, beta = state.alpha, state.beta
    current = _alpha_beta_target(alpha, beta, state, data, priors)
    if not math.isfinite(current):
        raise NonFiniteTargetError("non-finite log target for (alpha, beta)", state)
    accepted = np.zeros(2, dtype=bool)
    steps = rng.standard_normal(2) * np.asarray(scales, dtype=float)
    logs = np.log(rng.random(2))

    prop_alpha = 1.0 + (alpha - 1.0) * math.exp(steps[0])
    prop = _alpha_beta_target(prop_alpha, beta, state, data, priors)
    if math.isnan(prop):
        raise NonFiniteTargetError("NaN log target for alpha proposal", state)
    if logs[0] < prop - current:
        alpha, current, accepted[0] = prop_alpha, prop, True

    prop_beta = beta * math.exp(steps[1])
    if not 0.0 < prop_beta < math.inf:
        return replace(state, alpha=alpha), accepted
    prop = _alpha_beta_target(alpha, prop_beta, state, data, priors)
    if math.isnan(prop):
        raise NonFiniteTargetError("NaN log target for beta proposal", state)
    if logs[1] < prop - current:
        beta, accepted[1] = prop_beta, True
    return replace(state, alpha=alpha, beta=beta), accepted


def _loglik_delta(data: Dataset, cols, s_star, n_star, ds, dn):
    """Per-latent change in the y log-likelihood when the block moves by ``(ds, dn)``."""
    shift_s = cols @ ds
    shift_n = cols @ dn
    touched = (shift_s != 0.0) | (shift_n != 0.0)
    diff = np.zeros(data.m)
    if touched.any():
        s0, n0 = s_star[touched], n_star[touched]
        s1, n1 = s0 + shift_s[touched], n0 + shift_n[touched]
        y, log_y = data.y[touched], data._log_y[touched]
        diff[touched] = (
            (n1 + 1.0) * np.log(s1) - (n0 + 1.0) * np.log(s0)
            - special.gammaln(n1 + 1.0) + special.gammaln(n0 + 1.0)
            - (n1 - n0) * log_y
            - (s1 - s0) / y
        )
    return cols.T @ diff


def update_scale(state: McmcState, data: Dataset, priors: Priors, scale: float, rng: np.random.Generator):
    """
    Joint rescaling of ``(beta, u, s)`` by a common log-normal factor.

    The prior couples the three multiplicatively (``u`` scales with
    ``beta`` and each ``s_j`` with ``u``), which one-at-a-time walks
    traverse slowly.  Under the common factor ``e^eps`` those coupling
    terms cancel and the log ratio reduces to the ``beta`` prior plus the
    change in the y log-likelihood.  Returns the state and a length-1
    acceptance array.
    """
    eps = scale * float(rng.standard_normal())
    log_unif = math.log(rng.random())
    factor = math.exp(eps)
    beta, u = state.beta * factor, state.u * factor
    s = state.s * factor
    if not (0.0 < beta < math.inf and 0.0 < u < math.inf) or np.any(s <= 0.0) or not np.all(np.isfinite(s)):
        return state, np.zeros(1, dtype=bool)
    log_ratio = priors.beta_shape * eps - priors.beta_rate * (beta - state.beta)
    if data.likelihood and data.m:
        old_star, n_star = _star(data, state.alpha, state.beta, state.s, state.n)
        new_star = beta + data._a @ s
        log_ratio += float(np.sum((n_star + 1.0) * np.log(new_star / old_star) - (new_star - old_star) / data.y))
    if math.isnan(log_ratio):
        raise NonFiniteTargetError("NaN in scale-move log ratio", state)
    if log_unif < log_ratio:
        return replace(state, beta=beta, u=u, s=s), np.ones(1, dtype=bool)
    return state, np.zeros(1, dtype=bool)


def update_pairs(state: McmcState, data: Dataset, priors: Priors, scales: np.ndarray, rng: np.random.Generator):
    """
    Joint move of each ``(n_j, s_j)``: ``n_j`` by a log-scale random walk,
    ``s_j`` redrawn from ``Ga(n_j', rate 1/u)``.

    The fresh ``s_j`` cancels the latent density from the ratio, leaving
    the weight prior, the Jacobian and the y log-likelihood; this crosses
    the funnel between small ``n_j`` and small ``s_j``.
    """
    n, s = state.n.copy(), state.s.copy()
    accepted = np.zeros(data.m, dtype=bool)
    lam = state.hyper_rate
    s_star, n_star = _star(data, state.alpha, state.beta, s, n)
    for idx, cols in data._blocks:
        step = scales[idx] * rng.standard_normal(idx.size)
        new_n, valid = _propose(n[idx], step)
        new_s = rng.standard_gamma(new_n) * state.u
        valid &= (new_s > 0.0) & np.isfinite(new_s)
        new_s = np.where(valid, new_s, s[idx])
        log_ratio = priors.weight_shape * step - lam * (new_n - n[idx])
        if data.likelihood:
            log_ratio = log_ratio + _loglik_delta(data, cols, s_star, n_star, new_s - s[idx], new_n - n[idx])
        ok = _mh_accept(np.where(valid, log_ratio, -np.inf), rng, state)
        n[idx[ok]] = new_n[ok]
        s[idx[ok]] = new_s[ok]
        accepted[idx] = ok
        s_star, n_star = _star(data, state.alpha, state.beta, s, n)
    return replace(state, n=n, s=s), accepted


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


BLOCKS = ("s", "alpha_beta", "n", "scale", "pairs")


def sweep(state: McmcState, data: Dataset, priors: Priors, scales: dict, rng: np.random.Generator):
    """
    One Metropolis-within-Gibbs sweep: ``u``, ``s``, ``(alpha, beta)``,
    weights with ``hyper_rate``, then the joint scale and pair moves.

    Returns the new state and a dict of acceptance indicators per block.
    """
    acc = {}
    state = update_u(state, data, rng)
    state, acc["s"] = update_s(state, data, np.exp(scales["s"]), rng)
    state, acc["alpha_beta"] = update_alpha_beta(state, data, priors, np.exp(scales["alpha_beta"]), rng)
    state, acc["n"] = update_weights(state, data, priors, np.exp(scales["n"]), rng)
    state, acc["scale"] = update_scale(state, data, priors, math.exp(scales["scale"][0]), rng)
    state, acc["pairs"] = update_pairs(state, data, priors, np.exp(scales["pairs"]), rng)
    return state, acc


def run_chain(
    data: Dataset,
    priors: Priors,
    config: McmcConfig,
    rng: np.random.Generator,
    chain: int = 0,
    init: McmcState | None = None,
) -> McmcTrace:
    """
    One chain of ``config.iterations`` sweeps (see :func:`sweep`).

    Proposal log-scales start at ``log(config.initial_scale)`` and move by
    ``(accept - target) / (t + 1)^0.6`` during the first ``config.window``
    sweeps; afterwards they are frozen.  Acceptance rates are averaged over
    the post-burn-in sweeps.
    """
    state = init if init is not None else init_state(data, priors, rng)
    m = data.m
    start = math.log(config.initial_scale)
    sizes = {"s": m, "alpha_beta": 2, "n": m, "scale": 1, "pairs": m}
    scales = {k: np.full(v, start) for k, v in sizes.items()}
    target = config.target_accept

    keep = config.retained
    out = {
        "alpha": np.empty(keep), "beta": np.empty(keep), "u": np.empty(keep),
        "hyper_rate": np.empty(keep), "deviance": np.empty(keep),
        "s": np.empty((keep, m)), "n": np.empty((keep, m)),
    }
    iters = np.empty(keep, dtype=np.int64)
    acc_sum = {"s": 0.0, "n": 0.0, "pairs": 0.0, "alpha": 0.0, "beta": 0.0, "scale": 0.0}
    post = 0
    r = 0
    for it in range(config.iterations):
        state, acc = sweep(state, data, priors, scales, rng)
        if it < config.window:
            gain = (it + 1.0) ** -0.6
            for key, arr in scales.items():
                arr += gain * (acc[key] - target)
                np.clip(arr, LOG_SCALE_MIN, LOG_SCALE_MAX, out=arr)
        if it >= config.burnin:
            post += 1
            if m:
                acc_sum["s"] += acc["s"].mean()
                acc_sum["n"] += acc["n"].mean()
                acc_sum["pairs"] += acc["pairs"].mean()
            acc_sum["alpha"] += acc["alpha_beta"][0]
            acc_sum["beta"] += acc["alpha_beta"][1]
            acc_sum["scale"] += acc["scale"][0]
            if (it - config.burnin) % config.thin == 0:
                lp = log_posterior(state, data, priors)
                if not math.isfinite(lp):
                    raise NonFiniteTargetError(f"non-finite log target at sweep {it}", state)
                out["alpha"][r], out["beta"][r], out["u"][r] = state.alpha, state.beta, state.u
                out["hyper_rate"][r] = state.hyper_rate
                out["s"][r], out["n"][r] = state.s, state.n
                out["deviance"][r] = deviance(state, data) if m else 0.0
                iters[r] = it
                r += 1
    acceptance = {k: float(v / post) for k, v in acc_sum.items()}
    if not m:
        for key in ("s", "n", "pairs"):
            acceptance.pop(key)
    return McmcTrace(chain, iters, acceptance=acceptance, **out)


def run_chains(data: Dataset, priors: Priors, config: McmcConfig, seed, workers: int = 1) -> list[McmcTrace]:
    """``config.chains`` chains on independent child streams of `seed`."""
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    gens = [np.random.default_rng(child) for child in seq.spawn(config.chains)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_chain, data, priors, config, g, c) for c, g in enumerate(gens)]
            return [f.result() for f in futures]
    return [run_chain(data, priors, config, g, c) for c, g in enumerate(gens)]


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------


def _as_list(traces) -> list[McmcTrace]:
    traces = [traces] if isinstance(traces, McmcTrace) else list(traces)
    if not traces or sum(len(t) for t in traces) == 0:
        raise ValueError("empty trace")
    return traces


def dic_from_deviances(deviances, deviance_at_mean: float) -> tuple[float, float, float]:
    """Return ``(DIC, D_bar, p_D)`` with ``p_D = D_bar - D(theta_bar)``."""
    deviances = np.asarray(deviances, dtype=float)
    if deviances.size == 0:
        raise ValueError("empty trace")
    d_bar = float(deviances.mean())
    p_d = d_bar - float(deviance_at_mean)
    return d_bar + p_d, d_bar, p_d


def dic(traces, data: Dataset) -> tuple[float, float, float]:
    """
    Deviance information criterion from retained samples (chains pooled).

    ``D(theta_bar)`` plugs in the posterior means of ``alpha``, ``beta``,
    ``s`` and ``n``.
    """
    traces = _as_list(traces)
    dev = np.concatenate([t.deviance for t in traces])
    mean_state = McmcState(
        alpha=float(np.concatenate([t.alpha for t in traces]).mean()),
        beta=float(np.concatenate([t.beta for t in traces]).mean()),
        u=float(np.concatenate([t.u for t in traces]).mean()),
        s=np.concatenate([t.s for t in traces]).mean(axis=0),
        n=np.concatenate([t.n for t in traces]).mean(axis=0),
        hyper_rate=float(np.concatenate([t.hyper_rate for t in traces]).mean()),
    )
    return dic_from_deviances(dev, deviance(mean_state, data))


def posterior_predict(traces, data: Dataset, rng: np.random.Generator | int | None = 0):
    """
    Per-unit point predictions and 95% intervals.

    The point is the average over retained samples of ``s*_i / n*_i`` (the
    mean of ``IGa(n*_i + 1, s*_i)``); the interval comes from one draw of
    ``IGa(n*_i + 1, s*_i)`` per retained sample.

    Returns arrays ``(point, lower95, upper95)``.
    """
    traces = _as_list(traces)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    alpha = np.concatenate([t.alpha for t in traces])
    beta = np.concatenate([t.beta for t in traces])
    s = np.concatenate([t.s for t in traces])
    n = np.concatenate([t.n for t in traces])
    s_star = beta[:, None] + s @ data._a.T
    n_star = (alpha - 1.0)[:, None] + n @ data._a.T
    point = (s_star / n_star).mean(axis=0)
    draws = s_star / rng.standard_gamma(n_star + 1.0)
    lower, upper = np.quantile(draws, [0.025, 0.975], axis=0)
    return point, lower, upper


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def _autocorr(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / acov[0] if acov[0] > 0 else np.zeros(n)


def effective_sample_size(chains: np.ndarray) -> float:
    """
    Sum over chains of ``n / tau`` with ``tau`` from Geyer's initial positive
    sequence of paired autocorrelations.  `chains` has shape ``(C, n)``.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    total = 0.0
    for x in chains:
        n = x.size
        if n < 4 or np.ptp(x) == 0:
            total += n
            continue
        rho = _autocorr(x)
        tau = -1.0
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair <= 0:
                break
            tau += 2.0 * pair
        total += n / max(tau, 1.0 / n)
    return float(total)


def potential_scale_reduction(chains: np.ndarray) -> float:
    """
    ``sqrt((W + B/n) / W)`` with ``W`` the mean within-chain variance
    (divisor ``n``) and ``B/n`` the variance of the chain means.  Identical
    chains give exactly 1.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    c, n = chains.shape
    w = float(chains.var(axis=1).mean())
    b_over_n = float(chains.mean(axis=1).var(ddof=1)) if c > 1 else 0.0
    if w == 0.0:
        return 1.0 if b_over_n == 0.0 else math.inf
    return math.sqrt((w + b_over_n) / w)


@dataclass
class ConvergenceReport:
    ergodic_means: dict[str, np.ndarray]  # (C, R) running means
    rhat: dict[str, float]
    ess: dict[str, float]
    acceptance: list[dict[str, float]]  # one per chain

    def rows(self) -> list[dict]:
        return [
            {"name": k, "rhat": self.rhat[k], "ess": self.ess[k], "final_mean": float(self.ergodic_means[k][:, -1].mean())}
            for k in self.rhat
        ]


def convergence_summary(traces) -> ConvergenceReport:
    """Running means, potential scale reduction and ESS for every scalar, plus block acceptance rates."""
    traces = _as_list(traces)
    length = min(len(t) for t in traces)
    series = [t.scalars() for t in traces]
    means, rhat, ess = {}, {}, {}
    steps = np.arange(1, length + 1)
    for name in series[0]:
        stack = np.stack([s[name][:length] for s in series])
        means[name] = np.cumsum(stack, axis=1) / steps
        rhat[name] = potential_scale_reduction(stack)
        ess[name] = effective_sample_size(stack)
    return ConvergenceReport(means, rhat, ess, [dict(t.acceptance) for t in traces])


# ---------------------------------------------------------------------------
# trace serialisation
# ---------------------------------------------------------------------------


def trace_rows(traces):
    """Long-format rows ``(chain, iter, name, value)``."""
    for t in _as_list(traces):
        cols = t.scalars()
        for r, it in enumerate(t.iterations):
            for name, values in cols.items():
                yield {"chain": t.chain, "iter": int(it), "name": name, "value": float(values[r])}


def traces_from_rows(rows) -> list[McmcTrace]:
    """Inverse of :func:`trace_rows` (acceptance rates are not stored)."""
    by_chain: dict[int, dict[str, dict[int, float]]] = {}
    for row in rows:
        c, it = int(row["chain"]), int(row["iter"])
        by_chain.setdefault(c, {}).setdefault(row["name"], {})[it] = float(row["value"])
    out = []
    for c in sorted(by_chain):
        cols = by_chain[c]
        iters = np.array(sorted(cols["alpha"]), dtype=np.int64)

        def col(name):
            return np.array([cols[name][i] for i in iters])

        m = sum(1 for k in cols if k.startswith("s["))
        s = np.column_stack([col(f"s[{j + 1}]") for j in range(m)]) if m else np.empty((len(iters), 0))
        n = np.column_stack([col(f"n[{j + 1}]") for j in range(m)]) if m else np.empty((len(iters), 0))
        out.append(McmcTrace(c, iters, col("alpha"), col("beta"), col("u"), col("hyper_rate"), s, n, col("deviance")))
    return out
