import numpy as np
import pytest

from consumption_duality.duality import calibrate, candidate_consumption
from consumption_duality.errors import DecompositionError, DomainError, NoDeflatorError
from consumption_duality.superhedge import (
    admissibility_via_budget,
    claim_target,
    optional_decomposition,
    smallest_dominating,
    superhedge,
)
from consumption_duality.tree import (
    EventTree,
    build_recombining,
    deflator_from_transitions,
    random_transitions,
    random_tree,
)
from consumption_duality.utility import UtilitySpec
from oracles import superhedge_oracle


@pytest.fixture
def binomial():
    return build_recombining(2, 1, [2.0, 0.5], [0.5, 0.5])


@pytest.fixture
def trinomial():
    return build_recombining(3, 3, [1.5, 1.0, 0.5], [0.25, 0.5, 0.25])


def test_zero_target(trinomial):
    r = superhedge(trinomial, np.zeros(trinomial.n_nodes))
    assert r.W0 == 0 and not r.W.any() and not r.phi.any() and not r.A.any()


def test_binomial_put(binomial):
    b = np.array([0.0, 0.0, 0.5])
    r = superhedge(binomial, b)
    assert r.W0 == pytest.approx(1 / 3, abs=1e-15)
    # delta hedge from the 2x2 system phi * dS = dW on both branches
    dS = binomial.prices[1:, 0] - 1.0
    phi = np.linalg.solve(np.column_stack([dS, [1.0, 1.0]]), r.W[1:])[0]
    assert r.phi[0, 0] == pytest.approx(phi, abs=1e-15)
    np.testing.assert_allclose(r.A, 0.0, atol=1e-15)


@pytest.mark.parametrize("claim", ["put:0.8", "put:1", "american-put:1.2", "call:1", "american-call:0.9"])
def test_trinomial_matches_oracle(trinomial, claim):
    b = claim_target(trinomial, claim)
    r = superhedge(trinomial, b)
    assert abs(r.W0 - superhedge_oracle(trinomial, b)) <= 1e-12
    assert np.min(r.W - b) >= -1e-12
    assert r.reconstruction_residual(trinomial) <= 1e-10
    assert r.min_increment(trinomial) >= -1e-10


def test_constant_value_has_no_hedge(trinomial):
    phi, A = optional_decomposition(trinomial, np.full(trinomial.n_nodes, 2.5))
    assert not phi.any() and not A.any()


def test_not_a_supermartingale(binomial):
    with pytest.raises(DecompositionError):
        optional_decomposition(binomial, np.array([0.0, 1.0, 1.0]))


def test_errors(binomial):
    with pytest.raises(DomainError):
        smallest_dominating(binomial, np.array([0.0, -1.0, 0.0]))
    arb = build_recombining(2, 1, [2.0, 1.1], [0.5, 0.5])
    with pytest.raises(NoDeflatorError):
        smallest_dominating(arb, np.ones(3))
    with pytest.raises(ValueError):
        claim_target(binomial, "straddle:1")


def test_minimum_norm_on_duplicated_asset():
    base = build_recombining(3, 1, [1.5, 1.0, 0.5], [0.25, 0.5, 0.25])
    dup = EventTree(base.t, base.parent, base.prob, np.repeat(base.prices, 2, axis=1))
    b = claim_target(base, "put:1")
    one = superhedge(base, b)
    two = superhedge(dup, b)
    assert two.W0 == pytest.approx(one.W0, abs=1e-12)
    np.testing.assert_allclose(two.phi[0], [one.phi[0, 0] / 2] * 2, atol=1e-7)


def _random_stop_nodes(tree, rng, p_stop=0.3):
    stop = rng.uniform(size=tree.n_nodes) < p_stop
    out, frontier = [], [0]
    while frontier:
        node = frontier.pop()
        if stop[node] or tree.children[node].size == 0:
            out.append(node)
        else:
            frontier.extend(int(k) for k in tree.children[node])
    return np.array(out)


def test_random_trees_and_increasing_process_bound():
    rng = np.random.default_rng(21)
    for _ in range(12):
        tree = random_tree(rng, int(rng.integers(1, 4)), int(rng.integers(2, 4)), int(rng.integers(1, 3)))
        b = rng.uniform(0, 1, tree.n_nodes) * (rng.uniform(size=tree.n_nodes) < 0.6)
        r = superhedge(tree, b)
        assert abs(r.W0 - superhedge_oracle(tree, b)) <= 1e-12
        assert r.reconstruction_residual(tree) <= 1e-10
        assert r.min_increment(tree) >= -1e-10
        for _ in range(30):
            Z = deflator_from_transitions(tree, random_transitions(tree, rng))
            nodes = _random_stop_nodes(tree, rng)
            assert float(np.dot(tree.path_prob[nodes], Z[nodes] * r.A[nodes])) <= r.W0 + 1e-9


def test_admissibility_via_budget():
    tree = build_recombining(2, 2, [2.0, 0.5], [0.5, 0.5])
    spec = UtilitySpec.log()
    cal = calibrate(tree, spec, 1.0)
    c = candidate_consumption(tree, spec, cal.y, cal.dual.Z)
    ok, W0, hedge = admissibility_via_budget(tree, c)
    assert ok and W0 == pytest.approx(1.0, abs=1e-12)
    assert hedge.reconstruction_residual(tree) <= 1e-10
    over = admissibility_via_budget(tree, 1.5 * c)
    assert not over.admissible and over.W0 == pytest.approx(1.5, abs=1e-12)
    zero = admissibility_via_budget(tree, np.zeros(tree.n_nodes))
    assert zero.admissible and zero.W0 == 0.0


def test_admissibility_via_budget_incomplete():
    rng = np.random.default_rng(4)
    tree = random_tree(rng, 3, 3)
    c = rng.uniform(0, 0.3, tree.n_nodes)
    chk = admissibility_via_budget(tree, c, x=10.0)
    assert chk.admissible
    scaled = c / chk.W0
    tight = admissibility_via_budget(tree, scaled, x=1.0, tol=1e-10)
    assert tight.admissible and tight.W0 == pytest.approx(1.0, abs=1e-12)
    assert not admissibility_via_budget(tree, 1.01 * scaled, x=1.0).admissible
