"""Splittable counter-based PRNG: determinism, stream independence, stats."""

import numpy as np

from vqrobust.rng import Stream


def test_same_seed_same_sequence():
    a = Stream(123, "data").uniform(100)
    b = Stream(123, "data").uniform(100)
    np.testing.assert_array_equal(a, b)


def test_different_names_differ():
    a = Stream(0, "init").uniform(64)
    b = Stream(0, "attack").uniform(64)
    assert not np.array_equal(a, b)


def test_counter_continuation():
    s1 = Stream(7, "x")
    whole = s1.uniform(10)
    s2 = Stream(7, "x")
    parts = np.concatenate([s2.uniform(4), s2.uniform(6)])
    np.testing.assert_array_equal(whole, parts)


def test_child_does_not_advance_parent():
    parent = Stream(5, "root")
    ref = Stream(5, "root").uniform(8)
    child = parent.child("sub")
    child.uniform(100)
    np.testing.assert_array_equal(parent.uniform(8), ref)


def test_child_chains_are_distinct():
    s = Stream(5, "root")
    a = s.child("a").uniform(32)
    b = s.child("b").uniform(32)
    assert not np.array_equal(a, b)


def test_uniform_range_and_moments():
    u = Stream(11, "m").uniform(20000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    assert abs(u.var() - 1.0 / 12.0) < 0.005


def test_normal_moments():
    z = Stream(13, "n").normal(20000)
    assert abs(z.mean()) < 0.03
    assert abs(z.std() - 1.0) < 0.03


def test_integers_in_range_and_cover():
    v = Stream(3, "i").integers(2000, 2, 7)
    assert v.min() >= 2 and v.max() < 7
    assert set(np.unique(v)) == {2, 3, 4, 5, 6}


def test_permutation_is_a_permutation():
    p = Stream(9, "p").permutation(50)
    assert sorted(p.tolist()) == list(range(50))
    q = Stream(9, "p").permutation(50)
    np.testing.assert_array_equal(p, q)
