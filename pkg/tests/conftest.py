import json
from pathlib import Path

import numpy as np
import pytest

from qvfdep.families import FamilyKind, FamilySpec

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())

# one parameter point per family with enough finite moments for the
# variance and E{V(U)} standard errors (fourth moments of U)
CANONICAL = {
    FamilyKind.NORMAL_NORMAL: (1.0, 2.0),
    FamilyKind.GAMMA_POISSON: (2.0, 4.0),
    FamilyKind.INVGAMMA_GAMMA: (3.0, 10.0),
    FamilyKind.BETA_BINOMIAL: (1.0, 2.0),
    FamilyKind.INVBETA_NEGBINOMIAL: (2.0, 10.0),
    FamilyKind.GSST_GHS: (1.0, 10.0),
}

# valid mean-scale points per family
MEAN_POINTS = {
    FamilyKind.NORMAL_NORMAL: (-2.0, 0.0, 1.7),
    FamilyKind.GAMMA_POISSON: (0.3, 1.0, 4.0),
    FamilyKind.INVGAMMA_GAMMA: (0.3, 1.0, 4.0),
    FamilyKind.BETA_BINOMIAL: (0.1, 0.5, 0.8),
    FamilyKind.INVBETA_NEGBINOMIAL: (0.3, 1.0, 4.0),
    FamilyKind.GSST_GHS: (-1.5, 0.0, 0.7),
}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=list(FamilyKind), ids=lambda k: k.value)
def kind(request):
    return request.param


@pytest.fixture
def canonical_spec(kind):
    s0, n0 = CANONICAL[kind]
    return FamilySpec(kind, s0, n0)


def within(estimate, target, se, k=4.0):
    return abs(estimate - target) <= k * se


def u_conditional_tv(alpha, beta, s, n, shape, scale, points=10_000):
    """
    Total variation between IGa(shape, scale) and the numerically normalised
    product IGa(u; alpha, beta) * prod_j Ga(s_j; n_j, rate 1/u) on a
    log-spaced grid wide enough to hold both.
    """
    from scipy import special

    s, n = np.asarray(s, float), np.asarray(n, float)
    # bracket from the conditional's own moments, padded generously
    centre = scale / shape
    grid = np.geomspace(centre / 200.0, centre * 200.0, points)
    log_u = np.log(grid)
    log_prod = alpha * np.log(beta) - special.gammaln(alpha) - (alpha + 1) * log_u - beta / grid
    for sj, nj in zip(s, n):
        log_prod = log_prod + (nj - 1) * np.log(sj) - nj * log_u - sj / grid - special.gammaln(nj)
    log_ref = shape * np.log(scale) - special.gammaln(shape) - (shape + 1) * log_u - scale / grid
    weights = np.gradient(grid)
    prod = np.exp(log_prod - log_prod.max())
    prod /= np.sum(prod * weights)
    ref = np.exp(log_ref)
    ref /= np.sum(ref * weights)
    return 0.5 * float(np.sum(np.abs(prod - ref) * weights))
