import json
import math

import numpy as np
import pytest

from fnbo import network
from fnbo.errors import (
    BadInterval,
    BadOrdering,
    CycleDetected,
    DanglingFinalNode,
    DimensionMismatch,
    DomainViolation,
    NonpositiveCost,
    ParseError,
)


def chain2():
    # x (6d) -> node0 -> node1 <- x'(dim 6); the two-node cascade used all over.
    return network.NetworkSpec(
        K=2,
        parents=[[], [0]],
        ext_inputs=[[0, 1, 2, 3, 4, 5], [6]],
        domain=[[-2, 2]] * 6 + [[-10, 10]],
        parent_ranges=[np.zeros((0, 2)), [[0, 20]]],
        costs=[1.0, 49.0],
    )


def fig1():
    # Three inputs, two roots feeding a merge node.
    return network.NetworkSpec(
        K=3,
        parents=[[], [], [0, 1]],
        ext_inputs=[[0], [1], [2]],
        domain=[[0, 1]] * 3,
        parent_ranges=[np.zeros((0, 2)), np.zeros((0, 2)), [[-5, 5], [-5, 5]]],
        costs=[1, 1, 1],
    )


def ackley6(Z):
    Z = np.atleast_2d(Z)
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.mean(Z ** 2, axis=1)))
    b = -np.exp(np.mean(np.cos(2 * np.pi * Z), axis=1))
    return a + b + 20.0 + math.e


def negmatyas(Z):
    Z = np.atleast_2d(Z)
    return -0.26 * (Z[:, 0] ** 2 + Z[:, 1] ** 2) + 0.48 * Z[:, 0] * Z[:, 1]


class TestValidate:
    def test_two_node_chain_ok(self):
        network.validate(chain2())

    def test_bad_ordering(self):
        spec = network.NetworkSpec(
            K=2,
            parents=[[1], []],
            ext_inputs=[[0], [0]],
            domain=[[0, 1]],
            parent_ranges=[[[0, 1]], np.zeros((0, 2))],
            costs=[1, 1],
        )
        with pytest.raises(BadOrdering):
            network.validate(spec)

    def test_fig1_ok(self):
        network.validate(fig1())

    def test_cycle(self):
        spec = network.NetworkSpec(
            K=3,
            parents=[[1], [0], [0, 1]],
            ext_inputs=[[0], [0], [0]],
            domain=[[0, 1]],
            parent_ranges=[[[0, 1]], [[0, 1]], [[0, 1], [0, 1]]],
            costs=[1, 1, 1],
        )
        with pytest.raises(CycleDetected):
            network.validate(spec)

    def test_self_loop(self):
        spec = network.NetworkSpec(
            K=2,
            parents=[[], [1]],
            ext_inputs=[[0], []],
            domain=[[0, 1]],
            parent_ranges=[np.zeros((0, 2)), [[0, 1]]],
            costs=[1, 1],
        )
        with pytest.raises(CycleDetected):
            network.validate(spec)

    def test_dangling_final(self):
        # node 1 consumed by nobody while node 2 is last -> two sinks
        spec = network.NetworkSpec(
            K=3,
            parents=[[], [], [0]],
            ext_inputs=[[0], [0], []],
            domain=[[0, 1]],
            parent_ranges=[np.zeros((0, 2)), np.zeros((0, 2)), [[0, 1]]],
            costs=[1, 1, 1],
        )
        with pytest.raises(DanglingFinalNode):
            network.validate(spec)

    def test_bad_interval(self):
        spec = network.NetworkSpec(
            K=2,
            parents=[[], [0]],
            ext_inputs=[[0], []],
            domain=[[1, 1]],
            parent_ranges=[np.zeros((0, 2)), [[0, 1]]],
            costs=[1, 1],
        )
        with pytest.raises(BadInterval):
            network.validate(spec)

    def test_nonpositive_cost(self):
        spec = network.NetworkSpec(
            K=2,
            parents=[[], [0]],
            ext_inputs=[[0], []],
            domain=[[0, 1]],
            parent_ranges=[np.zeros((0, 2)), [[0, 1]]],
            costs=[1, 0],
        )
        with pytest.raises(NonpositiveCost):
            network.validate(spec)


class TestEvaluate:
    def test_ackmat_origin(self):
        # Ackley(0) = -20*e^0 - e^1 + 20 + e = 0; the quadratic merge is 0 at 0.
        spec = chain2()
        funcs = [lambda Z: ackley6(Z), lambda Z: negmatyas(Z)]
        y = network.evaluate_network(spec, funcs, np.zeros(7))
        assert abs(y[0]) < 1e-12
        assert abs(y[1]) < 1e-12

    def test_single_node_identity(self):
        spec = network.NetworkSpec(
            K=1,
            parents=[[]],
            ext_inputs=[[0]],
            domain=[[0, 1]],
            parent_ranges=[np.zeros((0, 2))],
            costs=[1],
        )
        funcs = [lambda Z: np.atleast_2d(Z)[:, 0]]
        y = network.evaluate_network(spec, funcs, np.array([0.7]))
        assert y[0] == pytest.approx(0.7)

    def test_ackmat_diagonal_identity(self):
        # -0.26(t^2 + t^2) + 0.48 t^2 = -0.04 t^2
        for t in (1.0, 2.5, -3.0):
            v = negmatyas(np.array([[t, t]]))[0]
            assert v == pytest.approx(-0.04 * t * t, abs=1e-12)

    def test_domain_violation(self):
        spec = chain2()
        funcs = [lambda Z: ackley6(Z), lambda Z: negmatyas(Z)]
        with pytest.raises(DomainViolation):
            network.evaluate_network(spec, funcs, np.full(7, 30.0))

    def test_linear_network_matches_composed_map(self):
        # Oracle: for affine nodes the network is one composed affine map.
        spec = fig1()
        w = {0: (2.0, 1.0), 1: (-1.5, 0.5)}
        funcs = [
            lambda Z: w[0][0] * np.atleast_2d(Z)[:, 0] + w[0][1],
            lambda Z: w[1][0] * np.atleast_2d(Z)[:, 0] + w[1][1],
            lambda Z: np.atleast_2d(Z) @ np.array([1.0, 2.0, 3.0]),
        ]
        rng = np.random.default_rng(0)
        for x in rng.uniform(0, 1, size=(20, 3)):
            y = network.evaluate_network(spec, funcs, x)
            expect = (
                1.0 * (2.0 * x[0] + 1.0) + 2.0 * (-1.5 * x[1] + 0.5) + 3.0 * x[2]
            )
            assert y[2] == pytest.approx(expect, abs=1e-12)

    def test_evaluation_order_never_reads_unwritten(self):
        # Instrumented functions record read order; parents always come first.
        spec = fig1()
        seen = []

        def make(k):
            def f(Z):
                seen.append(k)
                return np.zeros(np.atleast_2d(Z).shape[0])

            return f

        network.evaluate_network(spec, [make(0), make(1), make(2)], np.full(3, 0.5))
        assert seen.index(2) > seen.index(0) and seen.index(2) > seen.index(1)

    def test_relabeling_invariance(self):
        # Swapping the two root nodes (an order-preserving relabel of the DAG
        # with its inputs) leaves the final output unchanged.
        f_a = lambda Z: np.sin(np.atleast_2d(Z)[:, 0])
        f_b = lambda Z: np.cos(np.atleast_2d(Z)[:, 0])
        merge = lambda Z: np.atleast_2d(Z)[:, 0] + 2.0 * np.atleast_2d(Z)[:, 1]

        spec_a = fig1()
        spec_b = network.NetworkSpec(
            K=3,
            parents=[[], [], [0, 1]],
            ext_inputs=[[1], [0], [2]],
            domain=[[0, 1]] * 3,
            parent_ranges=[np.zeros((0, 2)), np.zeros((0, 2)), [[-5, 5], [-5, 5]]],
            costs=[1, 1, 1],
        )
        merge_swapped = lambda Z: np.atleast_2d(Z)[:, 1] + 2.0 * np.atleast_2d(Z)[:, 0]
        x = np.array([0.3, 0.8, 0.1])
        y1 = network.evaluate_network(spec_a, [f_a, f_b, merge], x)
        y2 = network.evaluate_network(spec_b, [f_b, f_a, merge_swapped], x)
        assert y1[2] == pytest.approx(y2[2], abs=1e-14)


class TestAssemble:
    def test_fig1_node3(self):
        spec = fig1()
        z = network.assemble_node_input(spec, 2, [1.0, 2.0], np.array([0.1, 0.2, 0.9]))
        np.testing.assert_allclose(z.vector, [1.0, 2.0, 0.9])

    def test_root_node_full_x(self):
        spec = network.NetworkSpec(
            K=2,
            parents=[[], [0]],
            ext_inputs=[[0, 1], []],
            domain=[[0, 1], [0, 1]],
            parent_ranges=[np.zeros((0, 2)), [[0, 1]]],
            costs=[1, 1],
        )
        x = np.array([0.4, 0.6])
        z = network.assemble_node_input(spec, 0, [], x)
        np.testing.assert_allclose(z.vector, x)

    def test_wrong_parent_count(self):
        spec = fig1()
        with pytest.raises(DimensionMismatch):
            network.assemble_node_input(spec, 2, [1.0], np.array([0.1, 0.2, 0.9]))


class TestJson:
    def test_round_trip(self):
        spec = chain2()
        doc = network.network_to_json(spec)
        again = network.network_from_json(json.dumps(doc))
        assert again.K == spec.K
        assert again.parents == spec.parents
        assert again.ext_inputs == spec.ext_inputs
        np.testing.assert_allclose(again.domain, spec.domain)
        np.testing.assert_allclose(again.costs, spec.costs)

    def test_one_based_indices(self):
        doc = {
            "K": 2,
            "parents": [[], [1]],
            "ext_inputs": [[1], [2]],
            "domain": [[0, 1], [0, 1]],
            "parent_ranges": [[], [[0, 1]]],
            "costs": [1, 2],
        }
        spec = network.network_from_json(doc)
        assert spec.parents == ((), (0,))
        assert spec.ext_inputs == ((0,), (1,))

    def test_parse_error(self):
        with pytest.raises(ParseError):
            network.network_from_json("{not json")
        with pytest.raises(ParseError):
            network.network_from_json({"K": 2})

    def test_node_bounds(self):
        spec = chain2()
        lo, hi = spec.node_bounds(1)
        np.testing.assert_allclose(lo, [0.0, -10.0])
        np.testing.assert_allclose(hi, [20.0, 10.0])

    def test_descendants(self):
        spec = fig1()
        assert spec.descendants(0) == {2}
        assert spec.descendants(2) == set()
