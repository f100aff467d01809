from itertools import combinations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import connected_components

from gridscreen.grid import load_case
from gridscreen.topology import (REFERENCE, Topology, UnionFind, enumerate_contingencies, gso_support,
                                 is_connected, sample_topologies, structural_vector)

from support import path_case


def connected_oracle(case, out):
    on = np.ones(case.n_branch, bool)
    on[list(out)] = False
    A = sp.coo_matrix((np.ones(on.sum()), (case.f[on], case.t[on])), shape=(case.n_bus,) * 2)
    return connected_components(A, directed=False)[0] == 1


def brute_force(case, k):
    return [Topology(c) for c in combinations(range(case.n_branch), k) if connected_oracle(case, c)]


def test_reference_connected(case14):
    assert is_connected(case14, ())


def test_single_leaf_isolating_outage(case14):
    bad = [e for e in range(case14.n_branch) if not is_connected(case14, [e])]
    assert len(bad) == 1
    assert len(enumerate_contingencies(case14, 1)) == 19


def test_all_removed_disconnected(case14):
    assert not is_connected(case14, range(case14.n_branch))


@pytest.mark.parametrize("name", ["case14", "case30"])
def test_random_subsets_match_scipy(name):
    case = load_case(name)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k = int(rng.integers(0, 8))
        out = rng.choice(case.n_branch, size=k, replace=False)
        assert is_connected(case, out) == connected_oracle(case, out)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_enumeration_matches_brute_force_14(case14, k):
    assert enumerate_contingencies(case14, k) == brute_force(case14, k)


def test_enumeration_matches_brute_force_30_k2(case30):
    assert enumerate_contingencies(case30, 2) == brute_force(case30, 2)


def test_path_graph_has_no_contingencies():
    case = path_case(5)
    assert enumerate_contingencies(case, 1) == []
    assert enumerate_contingencies(case, 0) == [REFERENCE]


def test_enumeration_is_canonical_and_unique(case14):
    topos = enumerate_contingencies(case14, 2)
    assert topos == sorted(topos, key=lambda t: t.out_branches)
    assert len(set(topos)) == len(topos)
    assert all(t.k == 2 for t in topos)


def test_topology_ids_roundtrip():
    t = Topology((17, 3))
    assert t.out_branches == (3, 17) and t.id == "L3+L17"
    assert Topology.from_id(t.id) == t
    assert Topology.from_id("N0") == REFERENCE
    with pytest.raises(ValueError):
        Topology((2, 2))
    with pytest.raises(ValueError):
        Topology.from_id("X3")


def test_union_find_components():
    uf = UnionFind(5)
    uf.union(0, 1)
    uf.union(3, 4)
    uf.union(1, 0)
    assert uf.components == 3
    assert uf.find(0) == uf.find(1) and uf.find(2) != uf.find(3)


def test_tau_reference():
    tau = structural_vector(REFERENCE, 64, 2, 20)
    assert tau.shape == (104,)
    assert tau[:64].sum() == 64 and tau[64:].sum() == 0


def test_tau_single_outage_branch0():
    tau = structural_vector(Topology((0,)), 64, 2, 20)
    assert tau[64] == 1 and tau[65] == 1 and tau.sum() == 66


@settings(max_examples=50, deadline=None)
@given(st.sets(st.integers(0, 19), max_size=5), st.integers(1, 4), st.integers(0, 64))
def test_tau_popcount(out, alpha, ns):
    tau = structural_vector(Topology(tuple(out)), ns, alpha, 20)
    assert tau.sum() == ns + alpha * len(out)
    assert set(np.unique(tau)) <= {0.0, 1.0}


def test_tau_double_outage_popcount():
    assert structural_vector(Topology((3, 17)), 64, 2, 20).sum() == 64 + 4


def test_tau_injective_over_n2(case14):
    topos = [REFERENCE] + enumerate_contingencies(case14, 1) + enumerate_contingencies(case14, 2)
    keys = {structural_vector(t, 8, 1, 20).tobytes() for t in topos}
    assert len(keys) == len(topos)


def test_tau_rejects_bad_input():
    with pytest.raises(ValueError):
        structural_vector(REFERENCE, 8, 0, 20)
    with pytest.raises(IndexError):
        structural_vector(Topology((20,)), 8, 2, 20)


def test_gso_reference_count(case14):
    S = gso_support(case14)
    assert S.sum() == 14 + 2 * 20
    assert np.array_equal(S, S.T) and S.diagonal().all()


def test_gso_everything_out_is_identity(case14):
    assert np.array_equal(gso_support(case14, range(20)), np.eye(14, dtype=bool))


def test_gso_outage_7_8(case14):
    i, j = case14.bus_index(7), case14.bus_index(8)
    e = next(k for k in range(20) if {case14.f[k], case14.t[k]} == {i, j})
    S = gso_support(case14, Topology((e,)))
    assert not S[i, j] and not S[j, i] and S.diagonal().all()
    assert S.sum() == 54 - 2


def test_sample_topologies_subset_deterministic(case14):
    pool = enumerate_contingencies(case14, 2)
    a = sample_topologies(pool, 100, 7)
    assert a == sample_topologies(pool, 100, 7)
    assert len(a) == len(set(a)) == 100 and set(a) <= set(pool)
    assert a == [t for t in pool if t in set(a)]
    assert len(sample_topologies(pool, 10**6, 0)) == len(pool)
