from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chartevo.cppn import ConnectionGene, CppnGenome, NodeGene, minimal_genome
from chartevo.neat import (
    Evolution,
    EvolutionConfig,
    InnovationRegistry,
    Species,
    adjust_threshold,
    compatibility,
    crossover,
    decayed_rate,
    decayed_rates,
    evolution_from_state,
    evolution_state,
    load_checkpoint,
    mutate,
    reproduce,
    save_checkpoint,
    speciate,
)
from chartevo.types import ConfigError

PAIRS = [(src, dst) for src in range(7) for dst in (7, 8, 9)]


def genome_from_pairs(n_pairs, weight=0.5, weights=None):
    nodes = [NodeGene(i, "input", "linear") for i in range(7)]
    nodes += [NodeGene(i, "output", "linear") for i in (7, 8, 9)]
    conns = []
    for i in range(n_pairs):
        src, dst = PAIRS[i]
        w = weights[i] if weights else weight
        conns.append(ConnectionGene(i, src, dst, w, True))
    return CppnGenome(tuple(nodes), tuple(conns))


def quiet_config(**kw):
    defaults = dict(population_size=10, generations=1)
    defaults.update(kw)
    return EvolutionConfig(**defaults)


class TestCompatibility:
    def test_identical_genomes_zero(self):
        a = genome_from_pairs(10)
        assert compatibility(a, a) == 0.0

    def test_two_excess_genes(self):
        # larger genome has 10 genes, two beyond the other's last marker
        a = genome_from_pairs(10)
        b = genome_from_pairs(8)
        assert compatibility(a, b, 1.0, 1.0, 0.4) == pytest.approx(2 / 10)
        assert compatibility(b, a, 1.0, 1.0, 0.4) == pytest.approx(2 / 10)

    def test_mean_weight_difference(self):
        a = genome_from_pairs(2, weights=[1.0, 1.0])
        b = genome_from_pairs(2, weights=[0.5, 2.5])
        # matching diffs 0.5 and 1.5, mean 1.0, scaled by c3
        assert compatibility(a, b, 1.0, 1.0, 0.4) == pytest.approx(0.4)

    def test_disjoint_counted(self):
        full = genome_from_pairs(6)
        gapped = full.with_connections(
            [c for c in full.connections if c.innovation not in (2, 3)]
            + [ConnectionGene(6, *PAIRS[6], 0.5, True)]
        )
        # innovations 2 and 3 are disjoint from one side, 6 is excess
        d = compatibility(full, gapped, 1.0, 0.0, 0.0)
        assert d == pytest.approx(1 / 6)  # excess only
        d = compatibility(full, gapped, 0.0, 1.0, 0.0)
        assert d == pytest.approx(2 / 6)  # disjoint only

    def test_empty_vs_empty(self):
        a = genome_from_pairs(0)
        assert compatibility(a, a) == 0.0


class TestThresholdAndDecay:
    def test_growth_per_generation(self):
        cfg = quiet_config()
        assert adjust_threshold(3.0, 1, cfg) == pytest.approx(3.003, rel=1e-12)

    def test_overspeciation_bump(self):
        cfg = quiet_config(max_species=100)
        assert adjust_threshold(3.0, 101, cfg) == pytest.approx(3.0 * 1.001 * 1.1, rel=1e-12)
        assert adjust_threshold(3.0, 100, cfg) == pytest.approx(3.003, rel=1e-12)

    def test_sequential_matches_closed_form(self):
        cfg = quiet_config()
        t = 3.0
        for _ in range(200):
            t = adjust_threshold(t, 1, cfg)
        assert t == pytest.approx(3.0 * 1.001**200, rel=1e-12)

    def test_decayed_rate_closed_form_is_exact(self):
        for g in (0, 1, 7, 100, 199):
            assert decayed_rate(0.8, 0.999, g) == 0.8 * 0.999**g
        rates = decayed_rates(quiet_config(), 100)
        assert rates["weight_mutation_rate"] == 0.8 * 0.999**100
        assert rates["add_connection_rate"] == 0.05 * 0.999**100
        assert rates["add_node_rate"] == 0.03 * 0.999**100

    def test_decay_hand_value(self):
        assert decayed_rate(1.0, 0.999, 100) == pytest.approx(0.9047921471137089, rel=1e-12)


class TestInnovationRegistry:
    def test_same_pair_same_number(self):
        reg = InnovationRegistry.primed()
        a = reg.connection_innovation(0, 10)
        b = reg.connection_innovation(0, 10)
        assert a == b == 21

    def test_distinct_pairs_distinct_numbers(self):
        reg = InnovationRegistry.primed()
        assert reg.connection_innovation(0, 10) != reg.connection_innovation(1, 10)

    def test_split_reused_across_genomes(self):
        reg = InnovationRegistry.primed()
        conn = ConnectionGene(0, 0, 7, 0.5, True)
        first = reg.split(conn, {0, 7})
        second = reg.split(conn, {0, 7})
        assert first == second

    def test_split_sibling_when_node_present(self):
        reg = InnovationRegistry.primed()
        conn = ConnectionGene(0, 0, 7, 0.5, True)
        node_id, _, _ = reg.split(conn, {0, 7})
        sibling = reg.split(conn, {0, 7, node_id})
        assert sibling[0] != node_id

    def test_state_round_trip(self):
        reg = InnovationRegistry.primed()
        reg.split(ConnectionGene(0, 0, 7, 0.5, True), {0, 7})
        reg.connection_innovation(3, 10)
        again = InnovationRegistry.from_state(reg.state())
        assert again.state() == reg.state()
        assert again.connection_innovation(3, 10) == reg.connection_innovation(3, 10)


class TestMutate:
    def test_zero_rates_identity(self):
        cfg = quiet_config(weight_mutation_rate=0.0, add_connection_rate=0.0, add_node_rate=0.0)
        g = minimal_genome(np.random.default_rng(0))
        assert mutate(g, cfg, 0, InnovationRegistry.primed(), np.random.default_rng(1)) is g

    def test_add_node_splits_connection(self):
        cfg = quiet_config(weight_mutation_rate=0.0, add_connection_rate=0.0, add_node_rate=1.0)
        g = minimal_genome(np.random.default_rng(2))
        reg = InnovationRegistry.primed()
        child = mutate(g, cfg, 0, reg, np.random.default_rng(3))
        assert len(child.nodes) == len(g.nodes) + 1
        new_node = child.nodes[-1]
        assert new_node.role == "hidden"
        incoming = [c for c in child.connections if c.dst == new_node.id]
        outgoing = [c for c in child.connections if c.src == new_node.id]
        assert len(incoming) == 1 and len(outgoing) == 1
        assert incoming[0].weight == 1.0
        split = next(c for c in child.connections
                     if c.src == incoming[0].src and c.dst == outgoing[0].dst)
        assert not split.enabled
        assert outgoing[0].weight == split.weight

    def test_add_connection_uses_registry(self):
        cfg = quiet_config(weight_mutation_rate=0.0, add_connection_rate=1.0, add_node_rate=1.0)
        reg = InnovationRegistry.primed()
        rng = np.random.default_rng(4)
        g = minimal_genome(rng)
        for _ in range(6):
            g = mutate(g, cfg, 0, reg, rng)
        # every pair in the genome must carry the registry's number for it
        for c in g.connections:
            assert reg.connection_innovation(c.src, c.dst) == c.innovation

    def test_weight_mutation_statistics(self):
        cfg = quiet_config(weight_mutation_rate=0.5, weight_replace_fraction=0.0,
                           add_connection_rate=0.0, add_node_rate=0.0)
        rng = np.random.default_rng(5)
        g = minimal_genome(np.random.default_rng(6))
        changed = 0
        trials = 200
        for _ in range(trials):
            child = mutate(g, cfg, 0, InnovationRegistry.primed(), rng)
            changed += sum(
                1 for a, b in zip(g.connections, child.connections) if a.weight != b.weight
            )
        total = trials * len(g.connections)
        rate = changed / total
        sigma = math.sqrt(0.5 * 0.5 / total)
        assert abs(rate - 0.5) < 3 * sigma

    def test_weights_stay_clamped(self):
        cfg = quiet_config(weight_mutation_rate=1.0, weight_replace_fraction=0.0)
        rng = np.random.default_rng(7)
        reg = InnovationRegistry.primed()
        g = minimal_genome(rng)
        for _ in range(200):
            g = mutate(g, cfg, 0, reg, rng)
        assert all(abs(c.weight) <= 3.0 for c in g.connections)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25)
    def test_structure_stays_valid_under_fuzz(self, seed):
        rng = np.random.default_rng(seed)
        cfg = quiet_config(weight_mutation_rate=0.9, add_connection_rate=0.5, add_node_rate=0.5)
        reg = InnovationRegistry.primed()
        g = minimal_genome(rng)
        for gen in range(12):
            g = mutate(g, cfg, gen, reg, rng)  # __post_init__ re-validates structure
        order = g.topological_order()
        assert len(order) == len(g.nodes)

    def test_same_innovation_for_parallel_structures(self):
        cfg = quiet_config(weight_mutation_rate=0.0, add_connection_rate=0.0, add_node_rate=1.0)
        reg = InnovationRegistry.primed()
        seeds = [np.random.default_rng(s) for s in (10, 11)]
        children = []
        for rng in seeds:
            g = minimal_genome(np.random.default_rng(9))
            # force both rngs to split the same first connection
            child = mutate(g.with_connections([g.connections[0]]), cfg, 0, reg, rng)
            children.append(child)
        new_a = [c for c in children[0].connections if c.innovation >= 21]
        new_b = [c for c in children[1].connections if c.innovation >= 21]
        assert {c.innovation for c in new_a} == {c.innovation for c in new_b}


class TestCrossover:
    def test_identical_parents(self):
        g = minimal_genome(np.random.default_rng(1))
        child = crossover(g, g, 1.0, 1.0, np.random.default_rng(2))
        assert child.signature() == g.signature()

    def test_fitter_structure_wins(self):
        rng = np.random.default_rng(3)
        a = minimal_genome(rng)
        b = a.with_connections(a.connections[:19])
        child = crossover(a, b, 2.0, 1.0, np.random.default_rng(4))
        assert {c.innovation for c in child.connections} == {c.innovation for c in a.connections}
        child = crossover(a, b, 1.0, 2.0, np.random.default_rng(5))
        assert {c.innovation for c in child.connections} == {c.innovation for c in b.connections}

    def test_matching_weights_from_either_parent(self):
        a = genome_from_pairs(5, weight=1.0)
        b = genome_from_pairs(5, weight=-1.0)
        child = crossover(a, b, 1.0, 0.5, np.random.default_rng(6))
        assert all(c.weight in (1.0, -1.0) for c in child.connections)
        weights = {c.weight for c in child.connections}
        assert len(weights) == 2  # with 5 genes both sources almost surely appear

    def test_disabled_in_either_parent_rule(self):
        a = genome_from_pairs(1)
        disabled = a.with_connections(
            [ConnectionGene(0, PAIRS[0][0], PAIRS[0][1], 0.5, False)]
        )
        rng = np.random.default_rng(7)
        enabled_count = 0
        trials = 800
        for _ in range(trials):
            child = crossover(a, disabled, 1.0, 1.0, rng)
            enabled_count += child.connections[0].enabled
        rate = enabled_count / trials
        sigma = math.sqrt(0.25 * 0.75 / trials)
        assert abs(rate - 0.25) < 3 * sigma

    def test_equal_fitness_genes_from_union(self):
        rng = np.random.default_rng(8)
        a = minimal_genome(rng)
        b = minimal_genome(rng)
        child = crossover(a, b, 1.0, 1.0, np.random.default_rng(9))
        union = {c.innovation for c in a.connections} | {c.innovation for c in b.connections}
        assert {c.innovation for c in child.connections} <= union


class TestSpeciate:
    def _population(self, n, seed=0):
        rng = np.random.default_rng(seed)
        return [minimal_genome(rng) for _ in range(n)]

    def test_huge_threshold_single_species(self):
        pop = self._population(12)
        species, next_id = speciate(pop, [], 1e9, quiet_config(), np.random.default_rng(0), 0)
        assert len(species) == 1
        assert sorted(species[0].members) == list(range(12))
        assert next_id == 1

    def test_zero_threshold_one_species_each(self):
        pop = self._population(9)
        species, next_id = speciate(pop, [], 0.0, quiet_config(), np.random.default_rng(0), 0)
        assert len(species) == 9
        assert next_id == 9

    def test_matches_greedy_oracle(self):
        pop = self._population(30, seed=3)
        cfg = quiet_config()
        threshold = 1.2
        species, _ = speciate(pop, [], threshold, cfg, np.random.default_rng(1), 0)
        # independent greedy assignment in the same scan order
        reps: list[tuple[int, CppnGenome]] = []
        assignment: dict[int, list[int]] = {}
        for idx, genome in enumerate(pop):
            for sid, rep in reps:
                if compatibility(genome, rep) < threshold:
                    assignment[sid].append(idx)
                    break
            else:
                sid = len(reps)
                reps.append((sid, genome))
                assignment[sid] = [idx]
        assert [sp.members for sp in species] == [assignment[sid] for sid, _ in reps]

    def test_representatives_resampled_from_members(self):
        pop = self._population(20, seed=4)
        species, _ = speciate(pop, [], 1e9, quiet_config(), np.random.default_rng(2), 0)
        assert any(species[0].representative is pop[i] for i in species[0].members)

    def test_carried_species_keep_identity(self):
        pop = self._population(10, seed=5)
        cfg = quiet_config()
        rng = np.random.default_rng(3)
        first, next_id = speciate(pop, [], 1e9, cfg, rng, 0)
        first[0].best_fitness = 0.7
        first[0].stagnation = 4
        second, _ = speciate(pop, first, 1e9, cfg, rng, next_id)
        assert second[0].species_id == first[0].species_id
        assert second[0].best_fitness == 0.7
        assert second[0].stagnation == 4


class TestReproduce:
    def _setup(self, n=10, seed=0, threshold=1e9):
        rng = np.random.default_rng(seed)
        pop = [minimal_genome(rng) for _ in range(n)]
        cfg = quiet_config(population_size=n)
        species, _ = speciate(pop, [], threshold, cfg, rng, 0)
        return pop, cfg, species, rng

    def test_population_size_preserved(self):
        pop, cfg, species, rng = self._setup(12, seed=1)
        cfg = quiet_config(population_size=12)
        fits = list(np.random.default_rng(2).uniform(-1, 1, 12))
        new_pop, _ = reproduce(pop, fits, species, cfg, 0, InnovationRegistry.primed(), rng)
        assert len(new_pop) == 12

    def test_elite_preserved_unchanged(self):
        pop, cfg, species, rng = self._setup(10, seed=3)
        fits = [float(i) for i in range(10)]
        new_pop, _ = reproduce(pop, fits, species, cfg, 0, InnovationRegistry.primed(), rng)
        assert any(g is pop[9] for g in new_pop)

    def test_champion_survives_even_in_tiny_species(self):
        # threshold zero puts every genome in its own species of one, so
        # no species reaches the elitism size floor
        pop, cfg, species, rng = self._setup(6, seed=4, threshold=0.0)
        cfg = quiet_config(population_size=6)
        fits = [0.1, 0.9, 0.2, 0.3, 0.0, 0.4]
        new_pop, _ = reproduce(pop, fits, species, cfg, 0, InnovationRegistry.primed(), rng)
        assert any(g is pop[1] for g in new_pop)

    def test_offspring_quota_proportional(self):
        rng = np.random.default_rng(5)
        pop = [minimal_genome(rng) for _ in range(4)]
        species = [
            Species(0, pop[0], members=[0, 1]),
            Species(1, pop[2], members=[2, 3]),
        ]
        cfg = quiet_config(
            population_size=9, elitism=0, crossover_rate=0.0,
            weight_mutation_rate=0.0, add_connection_rate=0.0, add_node_rate=0.0,
        )
        fits = [0.4, 0.4, 0.2, 0.2]
        new_pop, _ = reproduce(pop, fits, species, cfg, 0, InnovationRegistry.primed(), rng)
        assert len(new_pop) == 9
        # with cloning-only reproduction every child is one of the parents,
        # so shared-fitness weights 0.4 vs 0.2 are visible as a 6:3 split
        from_a = sum(1 for g in new_pop if g in (pop[0], pop[1]))
        from_b = sum(1 for g in new_pop if g in (pop[2], pop[3]))
        assert (from_a, from_b) == (6, 3)

    def test_negative_fitness_shift(self):
        pop, cfg, species, rng = self._setup(8, seed=6)
        fits = [-0.5, -0.1, -0.9, -0.2, -0.4, -0.3, -0.8, -0.6]
        new_pop, _ = reproduce(pop, fits, species, cfg, 0, InnovationRegistry.primed(), rng)
        assert len(new_pop) == 8

    def test_stagnant_species_removed(self):
        rng = np.random.default_rng(7)
        pop = [minimal_genome(rng) for _ in range(6)]
        stale = Species(0, pop[0], members=[0, 1, 2], best_fitness=5.0, stagnation=20)
        fresh = Species(1, pop[3], members=[3, 4, 5], best_fitness=0.0, stagnation=0)
        cfg = quiet_config(population_size=6, stagnation_limit=15)
        fits = [0.5, 0.4, 0.3, 1.0, 0.2, 0.1]
        species = [stale, fresh]
        _, events = reproduce(pop, fits, species, cfg, 0, InnovationRegistry.primed(), rng)
        assert any("removed" in e for e in events)
        assert [sp.species_id for sp in species] == [1]

    def test_champion_species_never_removed(self):
        rng = np.random.default_rng(8)
        pop = [minimal_genome(rng) for _ in range(4)]
        stale = Species(0, pop[0], members=[0, 1], best_fitness=5.0, stagnation=20)
        other = Species(1, pop[2], members=[2, 3], best_fitness=0.1, stagnation=0)
        cfg = quiet_config(population_size=4, stagnation_limit=15)
        fits = [2.0, 0.1, 0.5, 0.4]  # champion sits in the stagnant species
        species = [stale, other]
        _, events = reproduce(pop, fits, species, cfg, 0, InnovationRegistry.primed(), rng)
        assert 0 in [sp.species_id for sp in species]

    def test_all_stagnant_restart_event(self):
        rng = np.random.default_rng(9)
        pop = [minimal_genome(rng) for _ in range(4)]
        species = [Species(0, pop[0], members=[0, 1, 2, 3], best_fitness=9.0, stagnation=30)]
        cfg = quiet_config(population_size=4, stagnation_limit=15)
        _, events = reproduce(pop, [0.1] * 4, species, cfg, 0, InnovationRegistry.primed(), rng)
        assert any("stagnant" in e for e in events)


class TestEvolutionLoop:
    @staticmethod
    def synthetic_fitness(genome):
        return float(sum(c.weight for c in genome.connections if c.enabled))

    def test_two_runs_identical(self):
        cfg = quiet_config(population_size=20, generations=8, rng_seed=11)
        runs = []
        for _ in range(2):
            evo = Evolution(cfg)
            trace = []
            for g in range(8):
                fits = [self.synthetic_fitness(x) for x in evo.population]
                evo.advance(fits, reproduce_population=g < 7)
                trace.append((tuple(x.signature() for x in evo.population), evo.threshold))
            runs.append(trace)
        assert runs[0] == runs[1]

    def test_best_fitness_monotonic_under_deterministic_eval(self):
        cfg = quiet_config(population_size=24, generations=10, rng_seed=12)
        evo = Evolution(cfg)
        best = -math.inf
        for g in range(10):
            fits = [self.synthetic_fitness(x) for x in evo.population]
            assert max(fits) >= best - 1e-12
            best = max(best, max(fits))
            evo.advance(fits)

    def test_generation_counter_and_stats(self):
        cfg = quiet_config(population_size=8, generations=3, rng_seed=13)
        evo = Evolution(cfg)
        stats = evo.advance([0.0] * 8)
        assert stats.generation == 0
        assert stats.species_count >= 1
        assert evo.generation == 1
        stats = evo.advance([0.0] * 8, reproduce_population=False)
        assert evo.generation == 1  # final evaluation does not step the counter

    def test_threshold_follows_growth(self):
        cfg = quiet_config(population_size=8, generations=5, rng_seed=14)
        evo = Evolution(cfg)
        for _ in range(5):
            evo.advance([0.0] * 8)
        assert evo.threshold == pytest.approx(3.0 * 1.001**5, rel=1e-12)

    def test_mismatched_fitness_length_rejected(self):
        evo = Evolution(quiet_config(population_size=8))
        with pytest.raises(ValueError):
            evo.advance([0.0] * 7)


class TestCheckpoint:
    def test_state_round_trip(self):
        cfg = quiet_config(population_size=10, generations=5, rng_seed=21)
        evo = Evolution(cfg)
        for g in range(3):
            fits = [TestEvolutionLoop.synthetic_fitness(x) for x in evo.population]
            evo.advance(fits)
        state = evolution_state(evo)
        again = evolution_from_state(state, cfg)
        assert evolution_state(again) == state

    def test_resume_equals_uninterrupted(self, tmp_path):
        cfg = quiet_config(population_size=14, generations=6, rng_seed=22)

        def run(evo, start, stop, total=6):
            for g in range(start, stop):
                fits = [TestEvolutionLoop.synthetic_fitness(x) for x in evo.population]
                evo.advance(fits, reproduce_population=g < total - 1)
            return evo

        straight = run(Evolution(cfg), 0, 6)
        half = run(Evolution(cfg), 0, 3)
        # generation 2 reproduced (it is not the final one), so the counter sits at 3
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, half, extra={"note": "intermediate"})
        resumed, extra = load_checkpoint(path, cfg)
        assert extra == {"note": "intermediate"}
        resumed = run(resumed, resumed.generation, 6)
        assert [g.signature() for g in resumed.population] == [
            g.signature() for g in straight.population
        ]
        assert resumed.threshold == straight.threshold
        assert resumed.rng.bit_generator.state == straight.rng.bit_generator.state

    def test_bad_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(ConfigError):
            load_checkpoint(path, quiet_config())


class TestConfigValidation:
    def test_population_floor(self):
        with pytest.raises(ConfigError):
            EvolutionConfig(population_size=1)

    def test_rates_bounded(self):
        with pytest.raises(ConfigError):
            EvolutionConfig(weight_mutation_rate=1.5)

    def test_decay_range(self):
        with pytest.raises(ConfigError):
            EvolutionConfig(decay_factor=0.0)
