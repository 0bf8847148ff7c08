import numpy as np

from demark.rng import RngStream, derive


def test_same_label_same_draws():
    a = RngStream(42).derive("weights").generator().random(100)
    b = RngStream(42).derive("weights").generator().random(100)
    assert np.array_equal(a, b)


def test_different_labels_differ():
    a = RngStream(42).derive("weights").generator().random(100)
    b = RngStream(42).derive("shuffle").generator().random(100)
    assert not np.array_equal(a, b)


def test_different_seeds_differ():
    a = RngStream(1).derive("x").generator().random(50)
    b = RngStream(2).derive("x").generator().random(50)
    assert not np.array_equal(a, b)


def test_uniform_mean_sanity():
    draws = RngStream(7).derive("mc").generator().random(100_000)
    assert abs(draws.mean() - 0.5) < 0.01


def test_derivation_is_pure_and_value_like():
    root = RngStream(5)
    s1 = root.derive("a", 3)
    s2 = root.derive("a", 3)
    assert s1 == s2
    assert np.array_equal(s1.generator().random(10), s2.generator().random(10))
    # deriving never mutates the parent
    assert root == RngStream(5)


def test_order_independence():
    root = RngStream(9)
    a_then_b = (root.derive("a").generator().random(8),
                root.derive("b").generator().random(8))
    b_then_a = (root.derive("b").generator().random(8),
                root.derive("a").generator().random(8))
    assert np.array_equal(a_then_b[0], b_then_a[1])
    assert np.array_equal(a_then_b[1], b_then_a[0])


def test_nested_labels_do_not_collide_with_joined():
    a = RngStream(3).derive("a", "b").generator().random(10)
    b = RngStream(3).derive("a|b").generator().random(10)
    c = RngStream(3).derive("ab").generator().random(10)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_generator_is_fresh_each_call():
    s = RngStream(4).derive("g")
    first = s.generator().random(5)
    again = s.generator().random(5)
    assert np.array_equal(first, again)


def test_module_level_derive_helper():
    root = RngStream(1)
    assert derive(root, "k") == root.derive("k")


def test_integer_labels_stringify():
    assert RngStream(0).derive(12) == RngStream(0).derive("12")
