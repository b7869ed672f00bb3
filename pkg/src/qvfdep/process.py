"""
The three-level hierarchy ``U -> S -> Y``.

``U`` carries the target marginal, ``S_j | U`` are independent draws from
the NEF-QVF member with weight ``n_j``, and ``Y_i | S`` follows the
conjugate family with updated parameters

    s*_i = s0 + sum_{j in nb(i)} S_j,     n*_i = n0 + sum_{j in nb(i)} n_j.

Every ``Y_i`` then has the law of ``U``; correlations between units depend
only on ``n0`` and the weights.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import families as fam
from .families import FamilyKind, FamilySpec, ParameterError
from .graph import NeighborhoodGraph, validate

__all__ = [
    "ModelSpec",
    "ProcessDraw",
    "Check",
    "ValidationReport",
    "star_params",
    "star_vectors",
    "simulate",
    "simulate_many",
    "exact_mean",
    "exact_variance",
    "correlation",
    "correlation_matrix",
    "summarize_replicates",
    "mc_validate",
]

BLOCK_SIZE = 10_000


@dataclass(frozen=True, eq=False)
class ModelSpec:
    family: FamilySpec
    graph: NeighborhoodGraph
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 1 and self.graph.m > 1:
            w = np.full(self.graph.m, w[0])
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        problems = validate(self.graph)
        if problems:
            raise ParameterError(f"invalid graph: {problems[0].kind} at unit {problems[0].unit}")
        if w.size != self.graph.m:
            raise ParameterError(f"{w.size} weights for {self.graph.m} units")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ParameterError("weights must be finite and positive")
        if self.family.kind is FamilyKind.BETA_BINOMIAL and np.any(w != np.round(w)):
            raise ParameterError("beta-binomial weights must be integers")
        object.__setattr__(self, "_membership", self.graph.membership())

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def membership(self) -> np.ndarray:
        return self._membership

    def n_star(self) -> np.ndarray:
        return self.family.n0 + self._membership @ self.weights

    def to_dict(self) -> dict:
        out = self.family.to_dict()
        out["graph"] = self.graph.to_dict()
        out["weights"] = self.weights.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        from .io import graph_from_dict

        graph = graph_from_dict(data["graph"])
        weights = data.get("weights", 1.0)
        return cls(FamilySpec.from_dict(data), graph, np.atleast_1d(np.asarray(weights, float)))


class ProcessDraw(NamedTuple):
    u: float
    s: np.ndarray
    y: np.ndarray


def star_vectors(spec: ModelSpec, s) -> tuple[np.ndarray, np.ndarray]:
    """Updated parameters ``(s*, n*)`` for every unit; `s` may carry leading batch axes."""
    s = np.asarray(s, dtype=float)
    return spec.family.s0 + s @ spec.membership.T, spec.n_star()


def star_params(spec: ModelSpec, s, i: int) -> tuple[float, float]:
    if not 0 <= i < spec.m:
        raise IndexError(f"unit {i} out of range for m={spec.m}")
    s = np.asarray(s, dtype=float)
    nb = list(spec.graph[i])
    return spec.family.s0 + float(s[nb].sum()), spec.family.n0 + float(spec.weights[nb].sum())


def _simulate_block(spec: ModelSpec, size: int, rng: np.random.Generator):
    kind = spec.family.kind
    u = fam.sample_marginal(spec.family, rng, size=size)
    u = np.atleast_1d(u)
    s = fam._draw_latent(kind, u[:, None], spec.weights[None, :], rng)
    s_star, n_star = star_vectors(spec, s)
    y = fam._sample_conjugate(kind, s_star, np.broadcast_to(n_star, s_star.shape), rng)
    return u, s, np.asarray(y)


def simulate(spec: ModelSpec, rng: np.random.Generator) -> ProcessDraw:
    """One joint draw of ``(U, S, Y)``."""
    u, s, y = _simulate_block(spec, 1, rng)
    return ProcessDraw(float(u[0]), s[0], y[0])


def _block_generators(rng, count: int) -> list[np.random.Generator]:
    if isinstance(rng, np.random.Generator):
        return rng.spawn(count)
    seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    return [np.random.default_rng(child) for child in seq.spawn(count)]


def simulate_many(spec: ModelSpec, replicates: int, rng, workers: int = 1):
    """
    Independent replicates as arrays ``u (R,)``, ``s (R, m)``, ``y (R, m)``.

    Replicates are produced in blocks of ``BLOCK_SIZE``, each with its own
    child stream of `rng` (an int seed, ``SeedSequence`` or ``Generator``),
    so results do not depend on `workers`.
    """
    sizes = [BLOCK_SIZE] * (replicates // BLOCK_SIZE)
    if replicates % BLOCK_SIZE:
        sizes.append(replicates % BLOCK_SIZE)
    gens = _block_generators(rng, len(sizes))
    jobs = list(zip(sizes, gens))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _simulate_block(spec, *job), jobs))
    else:
        parts = [_simulate_block(spec, *job) for job in jobs]
    u = np.concatenate([p[0] for p in parts])
    s = np.concatenate([p[1] for p in parts])
    y = np.concatenate([p[2] for p in parts])
    return u, s, y


def exact_mean(spec: ModelSpec) -> float:
    return spec.family.s0 / spec.family.n0


def exact_variance(spec: ModelSpec) -> float:
    return float(fam.conjugate_variance(spec.family.kind, spec.family.s0, spec.family.n0))


EXACT_MAX_UNITS = 256


def _exact_corr(n0: Fraction, common: Fraction, tot_i: Fraction, tot_k: Fraction) -> float:
    return float((n0 * common + tot_i * tot_k) / ((n0 + tot_i) * (n0 + tot_k)))


def correlation(spec: ModelSpec, i: int, k: int) -> float:
    """
    ``Corr(Y_i, Y_k)``; depends only on ``n0`` and the weights.

    Evaluated in exact rational arithmetic on the (binary) inputs and
    rounded once, so pairs that are equal in theory compare equal.
    """
    for idx in (i, k):
        if not 0 <= idx < spec.m:
            raise IndexError(f"unit {idx} out of range for m={spec.m}")
    if i == k:
        return 1.0
    w = [Fraction(float(v)) for v in spec.weights]
    nb_i, nb_k = spec.graph[i], spec.graph[k]
    common = sum((w[j] for j in set(nb_i) & set(nb_k)), Fraction(0))
    tot_i = sum((w[j] for j in nb_i), Fraction(0))
    tot_k = sum((w[j] for j in nb_k), Fraction(0))
    return _exact_corr(Fraction(spec.family.n0), common, tot_i, tot_k)


def correlation_matrix(spec: ModelSpec) -> np.ndarray:
    """
    All pairwise correlations.  Exact (as :func:`correlation`) up to
    ``EXACT_MAX_UNITS`` units; larger graphs use vectorised floating point.
    """
    a = spec.membership
    if spec.m <= EXACT_MAX_UNITS:
        n0 = Fraction(spec.family.n0)
        w = [Fraction(float(v)) for v in spec.weights]
        sets = [set(nb) for nb in spec.graph.neighbors]
        tot = [sum((w[j] for j in nb), Fraction(0)) for nb in sets]
        corr = np.eye(spec.m)
        for i in range(spec.m):
            for k in range(i + 1, spec.m):
                common = sum((w[j] for j in sets[i] & sets[k]), Fraction(0))
                corr[i, k] = corr[k, i] = _exact_corr(n0, common, tot[i], tot[k])
        return corr
    n0 = spec.family.n0
    tot = a @ spec.weights
    common = (a * spec.weights) @ a.T
    corr = (n0 * common + np.outer(tot, tot)) / np.outer(n0 + tot, n0 + tot)
    np.fill_diagonal(corr, 1.0)
    return corr


# ---------------------------------------------------------------------------
# Monte-Carlo oracle
# ---------------------------------------------------------------------------


class Check(NamedTuple):
    check: str
    i: int
    k: int
    analytic: float
    estimate: float
    se: float
    z: float


@dataclass
class ValidationReport:
    replicates: int
    checks: list[Check]
    ks_statistic: float
    ks_pvalue: float

    def max_abs_z(self, prefix: str = "") -> float:
        zs = [abs(c.z) for c in self.checks if c.check.startswith(prefix)]
        return max(zs) if zs else 0.0

    def to_rows(self) -> list[dict]:
        rows = [c._asdict() for c in self.checks]
        rows.append(
            dict(check="ks_y1", i=0, k=0, analytic=0.0, estimate=self.ks_statistic,
                 se=float("nan"), z=float("nan"))
        )
        return rows

    def to_dict(self) -> dict:
        return {
            "replicates": self.replicates,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "checks": [c._asdict() for c in self.checks],
        }


def _z(estimate, analytic, se):
    return (estimate - analytic) / se if se > 0 else (0.0 if estimate == analytic else math.inf)


def summarize_replicates(spec: ModelSpec, y: np.ndarray, analytic_corr: np.ndarray | None = None) -> list[Check]:
    """
    Compare replicate moments of `y` (shape ``(R, m)``) with their exact values.

    Means use ``sd / sqrt(R)``, variances the fourth-moment delta method, and
    correlations the Fisher transform with standard error ``1 / sqrt(R - 3)``.
    """
    reps, m = y.shape
    mean, var = exact_mean(spec), exact_variance(spec)
    corr = correlation_matrix(spec) if analytic_corr is None else analytic_corr
    centred = y - y.mean(axis=0)
    mc_var = (centred**2).mean(axis=0)
    m4 = (centred**4).mean(axis=0)
    checks = []
    for i in range(m):
        est = float(y[:, i].mean())
        se = math.sqrt(mc_var[i] / reps)
        checks.append(Check("mean", i, i, mean, est, se, _z(est, mean, se)))
        se_v = math.sqrt(max(m4[i] - mc_var[i] ** 2, 0.0) / reps)
        checks.append(Check("variance", i, i, var, float(mc_var[i]), se_v, _z(float(mc_var[i]), var, se_v)))
    mc_corr = np.corrcoef(y, rowvar=False)
    fisher_se = 1.0 / math.sqrt(reps - 3)
    for i in range(m):
        for k in range(i + 1, m):
            r, rho = float(mc_corr[i, k]), float(corr[i, k])
            z = (math.atanh(min(r, 1 - 1e-15)) - math.atanh(min(rho, 1 - 1e-15))) / fisher_se
            checks.append(Check("correlation", i, k, rho, r, (1.0 - r * r) * fisher_se, z))
    return checks


def mc_validate(spec: ModelSpec, replicates: int, rng, workers: int = 1) -> ValidationReport:
    """Simulate `replicates` joint draws and check means, variances, correlations and the law of ``Y_1``."""
    if replicates < 1000:
        raise ValueError("mc_validate needs at least 1000 replicates")
    _, _, y = simulate_many(spec, replicates, rng, workers=workers)
    checks = summarize_replicates(spec, y)
    fs = spec.family
    ks = stats.kstest(y[:, 0], lambda t: fam.conjugate_cdf(fs.kind, t, fs.s0, fs.n0))
    return ValidationReport(replicates, checks, float(ks.statistic), float(ks.pvalue))
