import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from mwiod.channel import ChannelParams, link_rates
from mwiod.errors import InvalidInputError
from mwiod.flows import (FlowSpec, RoutingVars, TeamConfig, allowed_mask, constrained_pairs,
                         margin_arrays, margin_stats, min_constraint_value, sample_routing_table)

from conftest import uniform_rates

Z07 = 0.52440051270804078  # probit(0.7), mpmath


def test_team_partition_rules():
    x = np.zeros((3, 2))
    with pytest.raises(InvalidInputError):
        TeamConfig(x, (0, 1), (1, 2))
    with pytest.raises(InvalidInputError):
        TeamConfig(x, (0,), (1,))
    with pytest.raises(InvalidInputError):
        TeamConfig(x, (), (0, 1, 2))
    t = TeamConfig.from_teams([[1, 2], [3, 4]], [[5, 6]])
    assert t.task_idx == (0, 1) and t.network_idx == (2,)
    assert np.array_equal(t.x_net, [[5, 6]])


@pytest.mark.parametrize("conf", [0.5, 0.4, 1.0])
def test_confidence_bounds(conf):
    with pytest.raises(InvalidInputError, match=r"\(0.5, 1\)"):
        FlowSpec((0,), (1,), 0.1, conf)


def test_flow_overlap_rejected():
    with pytest.raises(InvalidInputError):
        FlowSpec((0,), (0, 1), 0.1, 0.7)


def test_zero_alpha_margins():
    rates = uniform_rates(4, 0.5, 0.1)
    mean, var = margin_arrays(RoutingVars.zeros(4, 2), rates)
    assert not mean.any() and not var.any()


def test_two_node_margins(two_node):
    team, rates, flow = two_node
    a = RoutingVars.zeros(2, 1)
    a.alpha[0, 1, 0] = 1.0
    s0, s1 = margin_stats(a, rates, 0, 0), margin_stats(a, rates, 1, 0)
    assert (s0.mean, s0.variance) == pytest.approx((0.8, 0.04))
    assert (s1.mean, s1.variance) == pytest.approx((-0.8, 0.04))
    with pytest.raises(InvalidInputError):
        margin_stats(a, rates, 2, 0)


def test_relay_chain_margin():
    rates = uniform_rates(3, 0.6, 0.1)
    a = RoutingVars.zeros(3, 1)
    a.alpha[0, 1, 0] = a.alpha[1, 2, 0] = 0.5
    s = margin_stats(a, rates, 1, 0)
    # hand sums: 0.5*0.6 - 0.5*0.6 and 0.25*0.1 + 0.25*0.1
    assert s.mean == pytest.approx(0.0, abs=1e-15)
    assert s.variance == pytest.approx(0.05)


def test_nu_two_node(two_node):
    team, rates, flow = two_node
    a = RoutingVars.zeros(2, 1)
    a.alpha[0, 1, 0] = 1.0
    assert min_constraint_value(a, rates, team, [flow]) == pytest.approx(2.7255994872919592, abs=1e-9)


def test_nu_exact_margin_gives_minus_z(two_node):
    team, rates, _ = two_node
    flow = FlowSpec((0,), (1,), 0.8, 0.7)
    a = RoutingVars.zeros(2, 1)
    a.alpha[0, 1, 0] = 1.0
    assert min_constraint_value(a, rates, team, [flow]) == pytest.approx(-Z07, abs=1e-12)


def test_nu_sentinels(two_node):
    team, rates, flow = two_node
    zero = RoutingVars.zeros(2, 1)
    assert min_constraint_value(zero, rates, team, [flow]) == -np.inf
    free = FlowSpec((0,), (1,), 0.0, 0.7)
    assert min_constraint_value(zero, rates, team, [free]) == np.inf


def test_allowed_mask_client_rules():
    team = TeamConfig.from_teams(np.zeros((3, 2)) + np.arange(3)[:, None], [[9.0, 9.0]])
    flows = [FlowSpec((0,), (1,), 0.1, 0.7)]
    m = allowed_mask(team, flows)[:, :, 0]
    assert not m[1].any()            # destination never transmits
    assert not m[2].any()            # uninvolved task agent never relays
    assert not m[:, 0].any()         # nothing returns to the source
    assert not m[:, 2].any()         # uninvolved task agent never receives
    assert m[0, 1] and m[0, 3] and m[3, 1]
    assert not m[3, 3]
    assert constrained_pairs(team, flows) == [(0, 0, 0.1), (3, 0, 0.0)]


def _random_alpha(rng, n, K, team, flows):
    a = rng.uniform(0, 1, size=(n, n, K)) * allowed_mask(team, flows)
    return RoutingVars(a / max(1.0, a.sum(axis=(1, 2)).max(), a.sum(axis=(0, 2)).max()))


def _random_instance(seed, p=3, q=3, K=2):
    rng = np.random.default_rng(seed)
    team = TeamConfig.from_teams(rng.uniform(-20, 20, (p, 2)), rng.uniform(-20, 20, (q, 2)))
    flows = [FlowSpec((k,), tuple(i for i in range(p) if i != k), rng.uniform(0, 0.2), 0.7)
             for k in range(K)]
    rates = link_rates(ChannelParams(), team.positions)
    return rng, team, flows, rates


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_conservation_and_scaling(seed):
    rng, team, flows, rates = _random_instance(seed)
    a = _random_alpha(rng, team.n, len(flows), team, flows)
    mean, var = margin_arrays(a, rates)
    assert np.all(np.abs(mean.sum(axis=0)) < 1e-9)
    t = rng.uniform(0, 1)
    m2, v2 = margin_arrays(RoutingVars(t * a.alpha), rates)
    np.testing.assert_allclose(m2, t * mean, atol=1e-12)
    np.testing.assert_allclose(v2, t * t * var, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_nu_permutation_invariance(seed):
    rng, team, flows, rates = _random_instance(seed, K=3)
    a = _random_alpha(rng, team.n, len(flows), team, flows)
    nu = min_constraint_value(a, rates, team, flows)
    order = rng.permutation(len(flows))
    a_perm = RoutingVars(a.alpha[:, :, order])
    assert min_constraint_value(a_perm, rates, team, [flows[k] for k in order]) == pytest.approx(nu)
    # relabel nodes
    perm = rng.permutation(team.n)
    inv = np.argsort(perm)
    team2 = TeamConfig(team.positions[perm], tuple(int(inv[i]) for i in team.task_idx),
                       tuple(int(inv[i]) for i in team.network_idx))
    flows2 = [FlowSpec(tuple(int(inv[i]) for i in f.sources),
                       tuple(int(inv[i]) for i in f.destinations), f.margin, f.confidence)
              for f in flows]
    rates2 = link_rates(ChannelParams(), team2.positions)
    a2 = RoutingVars(a.alpha[np.ix_(perm, perm)])
    assert min_constraint_value(a2, rates2, team2, flows2) == pytest.approx(nu)


def test_routing_table_degenerate_and_empty():
    a = RoutingVars.zeros(3, 1)
    a.alpha[0, 2, 0] = 0.4
    rng = np.random.default_rng(0)
    for _ in range(50):
        table = sample_routing_table(a, rng)
        assert table[(0, 0)] == 2
        assert table[(1, 0)] is None and table[(2, 0)] is None


def test_routing_table_frequencies():
    a = RoutingVars.zeros(3, 1)
    a.alpha[0, 1, 0] = a.alpha[0, 2, 0] = 0.3
    rng = np.random.default_rng(42)
    picks = [sample_routing_table(a, rng)[(0, 0)] for _ in range(10_000)]
    frac = picks.count(1) / len(picks)
    assert abs(frac - 0.5) < 0.02
    assert chisquare([picks.count(1), picks.count(2)]).pvalue > 0.01


def test_routing_table_deterministic():
    a = RoutingVars(np.random.default_rng(1).uniform(size=(4, 4, 2)))
    t1 = sample_routing_table(a, np.random.default_rng(9))
    t2 = sample_routing_table(a, np.random.default_rng(9))
    assert t1 == t2


def test_routing_vars_json_round_trip():
    a = RoutingVars(np.random.default_rng(0).uniform(size=(3, 3, 2)))
    b = RoutingVars.from_json(a.to_json())
    assert np.array_equal(a.alpha, b.alpha)
