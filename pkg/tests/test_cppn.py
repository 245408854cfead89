from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chartevo import cppn
from chartevo.cppn import (
    ACTIVATIONS,
    ConnectionGene,
    CppnGenome,
    NodeGene,
    activate,
    activate_batch,
    from_text,
    minimal_genome,
    query_bias,
    query_connection,
    to_text,
    would_create_cycle,
)


def base_nodes():
    nodes = [NodeGene(i, "input", "linear") for i in range(7)]
    nodes += [NodeGene(i, "output", "linear") for i in (7, 8, 9)]
    return nodes


def genome_with(conns, hidden=()):
    nodes = base_nodes() + list(hidden)
    return CppnGenome(tuple(nodes), tuple(conns))


def random_genome(rng, n_mutations=8):
    """Random DAG grown by the same primitive moves evolution uses."""
    from chartevo.neat import EvolutionConfig, InnovationRegistry, mutate

    config = EvolutionConfig(
        population_size=2, generations=1,
        weight_mutation_rate=0.9, add_connection_rate=0.5, add_node_rate=0.5,
    )
    registry = InnovationRegistry.primed()
    genome = minimal_genome(rng)
    for _ in range(n_mutations):
        genome = mutate(genome, config, 0, registry, rng)
    return genome


def recursive_reference(genome, inputs):
    """Independent oracle: memoized recursive descent from each output."""
    incoming = {}
    for c in genome.connections:
        if c.enabled:
            incoming.setdefault(c.dst, []).append(c)
    nodes = {n.id: n for n in genome.nodes}
    memo = {}

    def value(nid):
        if nid in memo:
            return memo[nid]
        node = nodes[nid]
        if node.role == "input":
            result = np.asarray(inputs)[..., nid]
        else:
            pre = 0.0
            for c in incoming.get(nid, ()):
                pre = pre + c.weight * value(c.src)
            pre = np.asarray(pre, dtype=np.float64) + np.zeros(np.asarray(inputs).shape[0])
            result = pre if node.role == "output" else ACTIVATIONS[node.activation](pre)
        memo[nid] = result
        return result

    return np.stack([value(7), value(8), value(9)], axis=-1)


class TestActivationPrimitives:
    def test_closed_forms_at_reference_points(self):
        a = ACTIVATIONS
        assert a["sigmoid"](np.array([0.0]))[0] == pytest.approx(0.5)
        assert a["sigmoid"](np.array([1.0]))[0] == pytest.approx(1 / (1 + math.exp(-1)))
        assert a["sigmoid"](np.array([-1.0]))[0] == pytest.approx(1 / (1 + math.e))
        assert a["gaussian"](np.array([0.0]))[0] == pytest.approx(1.0)
        assert a["gaussian"](np.array([1.0]))[0] == pytest.approx(math.exp(-1))
        assert a["gaussian"](np.array([-1.0]))[0] == pytest.approx(math.exp(-1))
        assert a["sine"](np.array([0.0]))[0] == 0.0
        assert a["sine"](np.array([1.0]))[0] == pytest.approx(math.sin(1))
        assert a["linear"](np.array([-1.0]))[0] == -1.0
        assert a["absolute"](np.array([-1.0]))[0] == 1.0
        assert a["absolute"](np.array([1.0]))[0] == 1.0

    def test_sigmoid_saturates_without_overflow(self):
        out = ACTIVATIONS["sigmoid"](np.array([-1e9, 1e9]))
        assert out[0] < 1e-20
        assert out[1] == 1.0
        assert np.all(np.isfinite(out))


class TestGenomeValidation:
    def test_minimal_genome_shape(self):
        g = minimal_genome(np.random.default_rng(0))
        assert len(g.nodes) == 10
        assert len(g.connections) == 21
        assert [c.innovation for c in g.connections] == list(range(21))
        assert all(-1.0 <= c.weight <= 1.0 for c in g.connections)

    def test_cycle_rejected(self):
        hidden = [NodeGene(10, "hidden", "sine"), NodeGene(11, "hidden", "sine")]
        conns = [
            ConnectionGene(0, 10, 11, 1.0, True),
            ConnectionGene(1, 11, 10, 1.0, True),
        ]
        with pytest.raises(ValueError, match="cycle"):
            genome_with(conns, hidden)

    def test_disabled_connections_also_checked_for_cycles(self):
        hidden = [NodeGene(10, "hidden", "sine"), NodeGene(11, "hidden", "sine")]
        conns = [
            ConnectionGene(0, 10, 11, 1.0, False),
            ConnectionGene(1, 11, 10, 1.0, False),
        ]
        with pytest.raises(ValueError, match="cycle"):
            genome_with(conns, hidden)

    def test_duplicate_innovation_rejected(self):
        conns = [ConnectionGene(0, 0, 7, 1.0, True), ConnectionGene(0, 1, 7, 1.0, True)]
        with pytest.raises(ValueError, match="innovation"):
            genome_with(conns)

    def test_connection_to_input_rejected(self):
        with pytest.raises(ValueError, match="input"):
            genome_with([ConnectionGene(0, 1, 0, 1.0, True)])

    def test_missing_fixed_nodes_rejected(self):
        nodes = base_nodes()[1:]
        with pytest.raises(ValueError):
            CppnGenome(tuple(nodes), ())

    def test_weight_limit_enforced(self):
        with pytest.raises(ValueError, match="outside"):
            ConnectionGene(0, 0, 7, 3.5, True)


class TestActivate:
    def test_no_connections_all_zero(self):
        g = genome_with([])
        assert activate(g, [1, 1, 1, 1, 1, 1, 1]) == (0.0, 0.0, 0.0)

    def test_single_connection_linear(self):
        g = genome_with([ConnectionGene(0, 6, 7, 0.75, True)])
        w, b, leo = activate(g, [0, 0, 0, 0, 0, 0, 1.0])
        assert (w, b, leo) == (0.75, 0.0, 0.0)

    def test_disabled_connection_contributes_nothing(self):
        g = genome_with([ConnectionGene(0, 6, 7, 0.75, False)])
        assert activate(g, [0, 0, 0, 0, 0, 0, 1.0])[0] == 0.0

    def test_difference_of_coordinates(self):
        # weight output = x2 - x1
        g = genome_with([
            ConnectionGene(0, 3, 7, 1.0, True),
            ConnectionGene(1, 0, 7, -1.0, True),
        ])
        w, leo = query_connection(g, (-1.0, 0, 0), (1.0, 0, 0))
        assert w == 2.0

    def test_hidden_activation_applied(self):
        hidden = [NodeGene(10, "hidden", "gaussian")]
        g = genome_with(
            [ConnectionGene(0, 0, 10, 1.0, True), ConnectionGene(1, 10, 7, 1.0, True)],
            hidden,
        )
        w, _, _ = activate(g, [2.0, 0, 0, 0, 0, 0, 0])
        assert w == pytest.approx(math.exp(-4.0))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(5)
        g = random_genome(rng)
        inputs = rng.uniform(-1, 1, (16, 7))
        batch = activate_batch(g, inputs)
        for i in range(16):
            assert tuple(batch[i]) == activate(g, inputs[i])

    def test_repeatable(self):
        rng = np.random.default_rng(9)
        g = random_genome(rng)
        inputs = rng.uniform(-1, 1, (4, 7))
        assert np.array_equal(activate_batch(g, inputs), activate_batch(g, inputs))


class TestAgainstRecursiveOracle:
    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40)
    def test_topological_equals_recursive(self, seed):
        rng = np.random.default_rng(seed)
        g = random_genome(rng, n_mutations=10)
        inputs = rng.uniform(-1, 1, (8, 7))
        assert np.array_equal(activate_batch(g, inputs), recursive_reference(g, inputs))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20)
    def test_disabled_equals_removed(self, seed):
        rng = np.random.default_rng(seed)
        g = random_genome(rng, n_mutations=10)
        stripped = g.with_connections([c for c in g.connections if c.enabled])
        inputs = rng.uniform(-1, 1, (4, 7))
        assert np.array_equal(activate_batch(g, inputs), activate_batch(stripped, inputs))


class TestQueries:
    def test_bias_query_zero_fills_partner(self):
        # bias output reads x2; zero-filled partner slot must yield 0
        g = genome_with([ConnectionGene(0, 3, 8, 1.0, True)])
        assert query_bias(g, (0.5, 0.5, 0.5)) == 0.0
        # and the first coordinate is passed through
        g2 = genome_with([ConnectionGene(0, 0, 8, 1.0, True)])
        assert query_bias(g2, (0.5, 0, 0)) == 0.5

    def test_constant_input_slot(self):
        g = genome_with([ConnectionGene(0, 6, 9, 2.0, True)])
        _, leo = query_connection(g, (0, 0, 0), (0, 0, 0))
        assert leo == 2.0


class TestCycleGuard:
    def test_direct_cycle_detected(self):
        hidden = [NodeGene(10, "hidden", "sine"), NodeGene(11, "hidden", "sine")]
        g = genome_with([ConnectionGene(0, 10, 11, 1.0, True)], hidden)
        assert would_create_cycle(g, 11, 10)
        assert not would_create_cycle(g, 0, 10)

    def test_self_loop_detected(self):
        g = genome_with([])
        assert would_create_cycle(g, 7, 7)


class TestSerialization:
    def test_round_trip_minimal(self):
        g = minimal_genome(np.random.default_rng(3))
        assert from_text(to_text(g)) == g

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25)
    def test_round_trip_random(self, seed):
        g = random_genome(np.random.default_rng(seed))
        again = from_text(to_text(g))
        assert again == g
        assert again.signature() == g.signature()

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            from_text("not a genome\n")
