import math
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import enumerate_tree_law, rng_for

from bgwf.offspring import catalan_model, geometric_model, make_stable_family
from bgwf.sampler import (
    BudgetExhausted,
    build_and_annotate,
    cycle_rotate,
    sample_conditioned,
    sample_degree_sequence,
)


def test_degree_sequence_forced_multisets(rng):
    cat = catalan_model()
    # n=3: the only multiset with entries in {0,2} summing to 2
    for _ in range(20):
        d = sample_degree_sequence(cat, 3, rng)
        assert sorted(d) == [0, 0, 2]
    # n=5: unique multiset again
    for _ in range(20):
        d = sample_degree_sequence(cat, 5, rng)
        assert sorted(d) == [0, 0, 0, 2, 2]
    geo = geometric_model()
    for _ in range(20):
        assert sorted(sample_degree_sequence(geo, 2, rng)) == [0, 1]


def test_catalan5_acceptance_probability():
    # convolution oracle: P(S_5 = 4) = C(5,2)/2^5 = 5/16
    from bgwf.harness import exact_walk_point_probability

    assert exact_walk_point_probability(catalan_model(), 5, 4) == pytest.approx(5 / 16, abs=1e-15)


def brute_force_rotation(degrees):
    """Enumerate all rotations; return the unique valid one."""
    n = len(degrees)
    valid = []
    for r in range(n):
        rot = np.roll(degrees, -r)
        walk = np.cumsum(rot - 1)
        if walk[-1] == -1 and (walk[:-1] >= 0).all():
            valid.append(r)
    assert len(valid) == 1
    return valid[0]


def test_cycle_rotate_examples():
    assert cycle_rotate(np.array([0, 2, 0])) == 1
    assert cycle_rotate(np.array([2, 0, 0])) == 0
    assert cycle_rotate(np.array([0, 0, 2])) == 2
    for degrees in ([0, 2, 0], [2, 0, 0], [0, 0, 2]):
        assert cycle_rotate(np.array(degrees)) == brute_force_rotation(np.array(degrees))


def test_cycle_lemma_uniqueness(rng):
    # exactly one rotation validates, over random valid degree multisets
    geo = geometric_model()
    for _ in range(10_000):
        n = int(rng.integers(2, 12))
        d = sample_degree_sequence(geo, n, rng)
        r = cycle_rotate(d)
        assert r == brute_force_rotation(d)


def test_build_and_annotate_examples():
    cherry = build_and_annotate(np.array([2, 0, 0]))
    assert list(cherry.subtree_size) == [3, 1, 1]
    assert list(cherry.subtree_height) == [1, 0, 0]
    assert list(cherry.depth) == [0, 1, 1]
    path = build_and_annotate(np.array([1, 1, 0]))
    assert list(path.subtree_size) == [3, 2, 1]
    assert list(path.subtree_height) == [2, 1, 0]
    assert list(path.depth) == [0, 1, 2]
    single = build_and_annotate(np.array([0]))
    assert list(single.subtree_size) == [1]
    assert list(single.subtree_height) == [0]
    assert single.height == 0


def test_build_rejects_invalid_sequences():
    with pytest.raises(ValueError):
        build_and_annotate(np.array([0, 2, 0]))  # hits -1 too early
    with pytest.raises(ValueError):
        build_and_annotate(np.array([1, 1, 1]))  # never closes


def test_structural_invariants_on_samples(rng):
    for model in (catalan_model(), geometric_model(), make_stable_family(1.5, 0.5)):
        for _ in range(50):
            n = int(rng.choice([1, 2, 3, 9, 25, 101][:: 1 if model.span == 1 else 2]))
            if model.span == 2 and n % 2 == 0:
                n += 1
            from bgwf.offspring import support_contains

            if not support_contains(model, n):
                continue
            tree = sample_conditioned(model, n, rng)
            tree.validate()
            assert tree.degree.sum() == n - 1
            assert tree.subtree_size[0] == n


def test_exact_law_small_sizes(rng):
    # empirical tree-shape frequencies against brute-force enumeration
    cases = [(catalan_model(), 5), (geometric_model(), 3), (geometric_model(), 5)]
    for model, n in cases:
        law = enumerate_tree_law(model, n)
        counts = Counter()
        R = 20_000
        for j in range(R):
            counts[tuple(sample_conditioned(model, n, rng).degree)] += 1
        assert set(counts) <= set(law)
        f_obs = np.array([counts.get(k, 0) for k in law])
        f_exp = np.array([law[k] * R for k in law])
        assert chisquare(f_obs, f_exp).pvalue > 0.001


def test_catalan3_always_cherry(rng):
    for _ in range(50):
        assert tuple(sample_conditioned(catalan_model(), 3, rng).degree) == (2, 0, 0)


def test_geometric3_split(rng):
    # brute force: path and cherry each carry weight 1/32, so 1/2 each
    law = enumerate_tree_law(geometric_model(), 3)
    assert law[(1, 1, 0)] == pytest.approx(0.5, abs=1e-12)
    assert law[(2, 0, 0)] == pytest.approx(0.5, abs=1e-12)
    hits = sum(tuple(sample_conditioned(geometric_model(), 3, rng).degree) == (1, 1, 0)
               for _ in range(4000))
    assert abs(hits / 4000 - 0.5) < 0.03


def test_otter_dwass_small_n():
    # n P(|tau| = n) = P(S_n = n-1) by enumeration vs exact convolution
    from bgwf.harness import _enumerated_tree_probability, exact_walk_point_probability

    for model in (catalan_model(), geometric_model(), make_stable_family(1.5, 0.5)):
        for n in range(1, 10):
            lhs = n * _enumerated_tree_probability(model, n)
            rhs = exact_walk_point_probability(model, n, n - 1)
            assert lhs == pytest.approx(rhs, abs=1e-12)


def test_unsupported_size_rejected(rng):
    with pytest.raises(ValueError):
        sample_degree_sequence(catalan_model(), 4, rng)


def test_budget_exhaustion_diagnostic(rng):
    with pytest.raises(BudgetExhausted) as err:
        sample_degree_sequence(geometric_model(), 501, rng, max_attempts=1)
    assert "acceptance rate" in str(err.value)


def test_tree_csv_dump(tmp_path):
    tree = build_and_annotate(np.array([2, 0, 0]))
    out = tmp_path / "tree.csv"
    tree.to_csv(str(out))
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "index,parent,degree,depth,subtree_size,subtree_height"
    assert lines[1] == "0,-1,2,0,3,1"
    assert lines[2] == "1,0,0,1,1,0"


def test_determinism_per_replicate():
    cat = catalan_model()
    t1 = sample_conditioned(cat, 51, rng_for(99, 3))
    t2 = sample_conditioned(cat, 51, rng_for(99, 3))
    t3 = sample_conditioned(cat, 51, rng_for(99, 4))
    assert np.array_equal(t1.degree, t2.degree)
    assert not np.array_equal(t1.degree, t3.degree)
