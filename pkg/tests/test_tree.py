"""Tree construction, conditional expectation, and adapted processes."""

import numpy as np
import pytest

from conftest import path_probability, random_tree
from fbsde import (
    AdaptedProcess,
    LeafNodeError,
    MissingValue,
    NodeId,
    NonPositiveProbability,
    RowSumMismatch,
    ShapeMismatch,
    build_tree,
    cond_exp,
    cond_exp_level,
    expectation,
)

TOL = 1e-12


class TestBuildTree:
    def test_uniform_two_state(self):
        tree = build_tree(2, 1, "uniform")
        assert tree.transition[0].shape == (1, 2)
        np.testing.assert_array_equal(tree.transition[0][0], [0.5, 0.5])

    def test_uniform_three_state_counts(self):
        tree = build_tree(3, 2, "uniform")
        assert sum(lev.shape[0] for lev in tree.transition) == 1 + 3
        assert tree.num_nodes(2) == 9

    def test_zero_probability_rejected(self):
        with pytest.raises(NonPositiveProbability):
            build_tree(2, 1, [1.0, 0.0])

    def test_negative_probability_rejected(self):
        with pytest.raises(NonPositiveProbability):
            build_tree(2, 1, [1.5, -0.5])

    def test_row_sum_not_renormalized(self):
        with pytest.raises(RowSumMismatch):
            build_tree(2, 1, [0.6, 0.6])

    def test_row_sum_within_tolerance_accepted(self):
        build_tree(2, 1, [0.5 + 4e-13, 0.5 - 2e-13])

    def test_bad_shape(self):
        with pytest.raises(ShapeMismatch):
            build_tree(2, 1, [0.2, 0.3, 0.5])
        with pytest.raises(ShapeMismatch):
            build_tree(2, 2, [[0.5, 0.5]] * 2)  # needs 3 rows

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            build_tree(1, 1)
        with pytest.raises(ValueError):
            build_tree(2, 0)

    def test_per_node_table(self):
        tree = build_tree(2, 2, [[0.3, 0.7], [0.4, 0.6], [0.9, 0.1]])
        np.testing.assert_array_equal(tree.transition[1][1], [0.9, 0.1])

    def test_transition_read_only(self):
        tree = build_tree(2, 2)
        with pytest.raises(ValueError):
            tree.transition[0][0, 0] = 0.3

    def test_row_and_children_lookups(self):
        tree = build_tree(3, 2, [[0.5, 0.3, 0.2]] + [[1 / 3.0] * 3] * 3)
        np.testing.assert_array_equal(tree.row((0, 0)), [0.5, 0.3, 0.2])
        assert tree.children((1, 2)) == (2, 6, 9)
        with pytest.raises(LeafNodeError):
            tree.row((2, 0))
        with pytest.raises(LeafNodeError):
            tree.children(NodeId(2, (1, 3)))


class TestNodeId:
    def test_root(self):
        assert NodeId(0, ()).depth == 0
        assert str(NodeId(0, ())) == "root"

    def test_path_length_must_match(self):
        with pytest.raises(ShapeMismatch):
            NodeId(2, (1,))

    def test_roundtrip_with_index(self):
        tree = build_tree(3, 3)
        for t in (0, 1, 3):
            for idx in range(tree.num_nodes(t)):
                node = tree.node_id(t, idx)
                assert node.depth == t
                assert all(1 <= b <= 3 for b in node.path)
        # AdaptedProcess.at resolves a NodeId back to the same slot
        proc = AdaptedProcess(tree, 2, [np.arange(9.0), np.arange(27.0)])
        assert proc.at(tree.node_id(3, 11)) == 11.0


class TestCondExp:
    def test_uniform_mean(self):
        tree = build_tree(2, 1)
        assert cond_exp(tree, np.array([3.0, 1.0]), (0, 0)) == pytest.approx(2.0, abs=TOL)

    def test_weighted(self):
        tree = build_tree(2, 1, [0.25, 0.75])
        assert cond_exp(tree, np.array([4.0, 0.0]), (0, 0)) == pytest.approx(1.0, abs=TOL)

    def test_constant_children(self):
        rng = np.random.default_rng(7)
        tree = random_tree(rng, 3, 2)
        vals = np.full(9, 4.2)
        for idx in range(3):
            assert cond_exp(tree, vals, (1, idx)) == pytest.approx(4.2, abs=TOL)

    def test_leaf_rejected(self):
        tree = build_tree(2, 1)
        with pytest.raises(LeafNodeError):
            cond_exp(tree, np.array([1.0, 2.0]), (1, 0))

    def test_missing_values(self):
        tree = build_tree(2, 2)
        with pytest.raises(MissingValue):
            cond_exp(tree, np.array([1.0, 2.0, 3.0]), (1, 0))

    def test_linearity(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            tree = random_tree(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)))
            t = int(rng.integers(0, tree.T))
            u = rng.normal(size=tree.num_nodes(t + 1))
            v = rng.normal(size=tree.num_nodes(t + 1))
            a, b = rng.normal(size=2)
            lhs = cond_exp_level(tree, a * u + b * v, t)
            rhs = a * cond_exp_level(tree, u, t) + b * cond_exp_level(tree, v, t)
            np.testing.assert_allclose(lhs, rhs, atol=TOL)


class TestExpectation:
    def test_root_level(self):
        tree = build_tree(2, 1)
        assert expectation(tree, np.array([5.0]), 0) == 5.0

    def test_uniform_leaves(self):
        tree = build_tree(2, 2)
        assert expectation(tree, np.array([1.0, 2.0, 3.0, 4.0]), 2) == pytest.approx(
            2.5, abs=TOL
        )

    def test_indicator_gives_path_probability(self):
        tree = build_tree(2, 2)
        indicator = np.zeros(4)
        indicator[2] = 1.0
        assert expectation(tree, indicator, 2) == pytest.approx(0.25, abs=TOL)

    def test_indicator_on_random_tree_matches_path_product(self):
        rng = np.random.default_rng(3)
        tree = random_tree(rng, 3, 3)
        for leaf in (0, 7, 26):
            indicator = np.zeros(27)
            indicator[leaf] = 1.0
            assert expectation(tree, indicator, 3) == pytest.approx(
                path_probability(tree, 3, leaf), abs=TOL
            )

    def test_tower_property(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            tree = random_tree(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)))
            t = int(rng.integers(0, tree.T))
            vals = rng.normal(size=tree.num_nodes(t + 1))
            direct = expectation(tree, vals, t + 1)
            nested = expectation(tree, cond_exp_level(tree, vals, t), t)
            assert direct == pytest.approx(nested, abs=TOL)

    def test_level_probabilities_sum_to_one(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            tree = random_tree(rng, int(rng.integers(2, 5)), int(rng.integers(1, 5)))
            for t in range(tree.T + 1):
                assert tree.level_probs(t).sum() == pytest.approx(1.0, abs=TOL)


class TestAdaptedProcess:
    def test_shape_validation(self):
        tree = build_tree(2, 2)
        with pytest.raises(ShapeMismatch):
            AdaptedProcess(tree, 0, [np.zeros(1), np.zeros(3)])
        with pytest.raises(ShapeMismatch):
            AdaptedProcess(tree, 0, [np.zeros((1, 2)), np.zeros((2, 3))])

    def test_range_checks(self):
        tree = build_tree(2, 2)
        proc = AdaptedProcess(tree, 1, [np.zeros(2), np.zeros(4)])
        assert proc.end == 2
        with pytest.raises(MissingValue):
            proc.level(0)
        with pytest.raises(MissingValue):
            AdaptedProcess(tree, 2, [np.zeros(4), np.zeros(8)])

    def test_values_read_only(self):
        tree = build_tree(2, 1)
        proc = AdaptedProcess(tree, 0, [np.zeros(1), np.zeros(2)])
        with pytest.raises(ValueError):
            proc.level(1)[0] = 1.0

    def test_vector_values(self):
        tree = build_tree(2, 1)
        proc = AdaptedProcess(tree, 0, [np.zeros((1, 3)), np.ones((2, 3))])
        assert proc.value_shape == (3,)
        np.testing.assert_array_equal(proc.at((1, 1)), [1.0, 1.0, 1.0])
