import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvfdep import families as fam
from qvfdep.families import FamilyKind, FamilySpec, ParameterError
from qvfdep.graph import AdjacencyList, NeighborhoodGraph, spatial_graph, temporal_graph
from qvfdep.process import (
    ModelSpec,
    correlation,
    correlation_matrix,
    exact_mean,
    exact_variance,
    mc_validate,
    simulate,
    simulate_many,
    star_params,
    star_vectors,
    summarize_replicates,
)

from conftest import within

LATTICE = AdjacencyList(5, ((0, 1), (0, 2), (1, 2), (2, 3), (2, 4), (3, 4)))


def gp_spec(graph, n0=1.0, s0=2.0, weights=1.0):
    return ModelSpec(FamilySpec("gamma-poisson", s0, n0), graph, np.broadcast_to(weights, graph.m))


@pytest.fixture
def temporal_gp():
    return gp_spec(temporal_graph(16, 2), n0=4.0, s0=2.0)


class TestModelSpec:
    def test_weight_length(self):
        with pytest.raises(ParameterError):
            ModelSpec(FamilySpec("gamma-poisson", 2, 4), temporal_graph(4, 1), np.ones(3))

    def test_weights_positive(self):
        with pytest.raises(ParameterError):
            ModelSpec(FamilySpec("gamma-poisson", 2, 4), temporal_graph(3, 1), np.array([1.0, 0.0, 1.0]))

    def test_binomial_integer_weights(self):
        with pytest.raises(ParameterError):
            ModelSpec(FamilySpec("beta-binomial", 1, 2), temporal_graph(3, 1), np.full(3, 1.5))

    def test_invalid_graph(self):
        with pytest.raises(ParameterError):
            ModelSpec(FamilySpec("gamma-poisson", 2, 4), NeighborhoodGraph(2, ((0,), (0,))), np.ones(2))

    def test_json_round_trip(self, temporal_gp):
        again = ModelSpec.from_dict(temporal_gp.to_dict())
        assert again.family == temporal_gp.family
        assert again.graph == temporal_gp.graph
        np.testing.assert_array_equal(again.weights, temporal_gp.weights)


class TestStarParams:
    def test_direct_sum(self):
        g = NeighborhoodGraph(3, ((0, 1), (0, 1), (2,)))
        spec = ModelSpec(FamilySpec("normal-normal", 1.0, 2.0), g, np.ones(3))
        assert star_params(spec, [1.0, 2.0, 5.0], 0) == (4.0, 4.0)

    def test_zero_latent(self):
        spec = ModelSpec(FamilySpec("normal-normal", 0.0, 1.0), temporal_graph(3, 0), np.ones(3))
        assert star_params(spec, [0.0, 0.0, 0.0], 1) == (0.0, 2.0)

    def test_exchangeable_reduces(self):
        spec = gp_spec(temporal_graph(4, 0))
        s = np.array([3.0, 1.0, 4.0, 1.0])
        s_star, n_star = star_vectors(spec, s)
        np.testing.assert_array_equal(s_star, 2.0 + s)
        np.testing.assert_array_equal(n_star, 2.0)

    def test_index_error(self, temporal_gp):
        with pytest.raises(IndexError):
            star_params(temporal_gp, np.ones(16), 16)


class TestExactMoments:
    def test_examples(self):
        assert exact_mean(gp_spec(temporal_graph(3, 1), n0=4.0, s0=2.0)) == 0.5
        assert exact_variance(gp_spec(temporal_graph(3, 1), n0=4.0, s0=2.0)) == 0.125
        g = temporal_graph(3, 1)
        assert exact_mean(ModelSpec(FamilySpec("normal-normal", 0.0, 1.0), g, np.ones(3))) == 0.0
        assert exact_mean(ModelSpec(FamilySpec("invgamma-gamma", 3.0, 2.0), g, np.ones(3))) == 1.5
        assert exact_variance(ModelSpec(FamilySpec("beta-binomial", 1.0, 2.0), g, np.ones(3))) == pytest.approx(1 / 12)
        assert exact_variance(ModelSpec(FamilySpec("gsst-ghs", 0.0, 2.0), g, np.ones(3))) == 1.0


class TestCorrelation:
    def test_diagonal(self, temporal_gp):
        assert correlation(temporal_gp, 4, 4) == 1.0

    def test_overlapping_pair(self):
        assert correlation(gp_spec(temporal_graph(16, 2), n0=1.0), 2, 4) == pytest.approx(0.625, abs=1e-15)

    def test_disjoint_pair(self):
        assert correlation(gp_spec(temporal_graph(16, 2), n0=1.0), 0, 3) == pytest.approx(0.375, abs=1e-15)

    def test_lattice_entry(self):
        assert correlation_matrix(gp_spec(spatial_graph(LATTICE), n0=1.0))[0, 1] == pytest.approx(0.75, abs=1e-15)

    def test_exchangeable(self):
        c = correlation_matrix(gp_spec(temporal_graph(6, 0), n0=1.0))
        off = c[~np.eye(6, dtype=bool)]
        np.testing.assert_allclose(off, 0.25, atol=1e-15)

    def test_matrix_matches_pairwise(self):
        spec = gp_spec(spatial_graph(LATTICE), n0=0.7, weights=np.array([1.0, 2.0, 0.5, 3.0, 1.0]))
        c = correlation_matrix(spec)
        for i in range(5):
            for k in range(5):
                assert c[i, k] == pytest.approx(correlation(spec, i, k), abs=1e-14)
        np.testing.assert_array_equal(c, c.T)

    def test_family_and_s0_free(self):
        g = temporal_graph(8, 2)
        a = correlation_matrix(ModelSpec(FamilySpec("gamma-poisson", 2.0, 3.0), g, np.ones(8)))
        b = correlation_matrix(ModelSpec(FamilySpec("gsst-ghs", -5.0, 3.0), g, np.ones(8)))
        np.testing.assert_array_equal(a, b)

    def test_index_error(self, temporal_gp):
        with pytest.raises(IndexError):
            correlation(temporal_gp, 0, 16)

    def test_plateau_pattern(self):
        rows = {}
        for n0 in (0.01, 0.1, 1.0, 10.0):
            rows[n0] = correlation_matrix(gp_spec(temporal_graph(16, 2), n0=n0))[0]
            r = rows[n0]
            assert r[1] == r[2]
            assert np.all(r[3:] == r[3]) and r[3] < r[1]
        for a, b in [(0.01, 0.1), (0.1, 1.0), (1.0, 10.0)]:
            assert np.all(rows[b][1:] < rows[a][1:])

    def test_strict_stationarity(self):
        spec = gp_spec(temporal_graph(30, 3), n0=0.8, weights=2.5)
        for d in range(0, 5):
            vals = [correlation(spec, i, i + d) for i in range(3, 30 - d)]
            assert max(vals) - min(vals) <= 1e-12

    @settings(max_examples=80, deadline=None)
    @given(
        st.integers(2, 12),
        st.integers(0, 4),
        st.floats(1e-3, 50.0),
        st.lists(st.floats(0.05, 10.0), min_size=12, max_size=12),
    )
    def test_bounds(self, m, q, n0, weights):
        spec = gp_spec(temporal_graph(m, q), n0=n0, weights=np.array(weights[:m]))
        c = correlation_matrix(spec)
        off = c[~np.eye(m, dtype=bool)]
        assert np.all(off >= 0) and np.all(off < 1)


class TestSimulation:
    def test_determinism(self, temporal_gp):
        a = simulate(temporal_gp, np.random.default_rng(3))
        b = simulate(temporal_gp, np.random.default_rng(3))
        assert a.u == b.u
        np.testing.assert_array_equal(a.y, b.y)

    def test_workers_do_not_change_results(self, temporal_gp):
        one = simulate_many(temporal_gp, 25_000, 9, workers=1)
        many = simulate_many(temporal_gp, 25_000, 9, workers=3)
        for a, b in zip(one, many):
            np.testing.assert_array_equal(a, b)

    def test_y1_moments(self, temporal_gp):
        _, _, y = simulate_many(temporal_gp, 100_000, 11)
        y1 = y[:, 0]
        assert within(y1.mean(), 0.5, y1.std() / math.sqrt(y1.size))
        c = y1 - y1.mean()
        se = math.sqrt(((c**4).mean() - y1.var() ** 2) / y1.size)
        assert within(y1.var(), 0.125, se)

    def test_supports(self, kind, rng):
        s0, n0 = {FamilyKind.BETA_BINOMIAL: (1.0, 2.0)}.get(kind, (1.0, 3.0))
        spec = ModelSpec(FamilySpec(kind, s0, n0), temporal_graph(5, 1), np.ones(5))
        _, s, y = simulate_many(spec, 2_000, rng)
        lo, hi = fam.mean_domain(kind)
        assert np.all((y > lo) & (y < hi)) or kind is FamilyKind.BETA_BINOMIAL
        assert np.all(np.isfinite(y))


class TestValidation:
    def test_small_run_reproducible(self, temporal_gp):
        a = mc_validate(temporal_gp, 1000, 7)
        b = mc_validate(temporal_gp, 1000, 7)
        assert a.to_dict() == b.to_dict()

    def test_too_few_replicates(self, temporal_gp):
        with pytest.raises(ValueError):
            mc_validate(temporal_gp, 999, 7)

    def test_corrupted_analytic_grows(self):
        spec = gp_spec(temporal_graph(4, 1), n0=1.0)
        corrupt = correlation_matrix(spec) + 0.02
        zs = []
        for reps in (2_000, 20_000, 200_000):
            _, _, y = simulate_many(spec, reps, 5)
            checks = summarize_replicates(spec, y, corrupt)
            zs.append(max(abs(c.z) for c in checks if c.check == "correlation"))
        assert zs[0] < zs[1] < zs[2] and zs[2] > 8

    def test_expected_variance_function(self, canonical_spec, rng):
        """E{V(U)} equals n0 Var(U)."""
        u = fam.sample_marginal(canonical_spec, rng, size=100_000)
        v = fam._variance_unchecked(canonical_spec.kind, u)
        assert within(v.mean(), canonical_spec.n0 * canonical_spec.variance, v.std() / math.sqrt(v.size))
