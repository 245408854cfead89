"""Speciated evolution of CPPN genomes with historical innovation markers.

Each structural novelty (a new link, or a node spliced into a link) gets
an innovation number from a registry shared across the whole run, so the
same innovation arising independently in two genomes carries the same
marker.  Markers line genes up during crossover and drive the genome
compatibility distance used for speciation.

Per generation: evaluate, speciate against representatives drawn from
the previous generation, adjust the compatibility threshold, then
reproduce species-by-species with fitness sharing, elitism and
stagnation culling.  Mutation rates decay geometrically with the
generation index; the compatibility threshold grows geometrically, with
an extra bump whenever the species count overshoots its cap.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cppn import (
    ConnectionGene,
    CppnGenome,
    FIRST_HIDDEN_ID,
    HIDDEN_ACTIVATION_NAMES,
    INPUT_IDS,
    NodeGene,
    N_INITIAL_CONNECTIONS,
    OUTPUT_IDS,
    WEIGHT_LIMIT,
    clamp_weight,
    minimal_genome,
    would_create_cycle,
)
from .types import ConfigError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "chartevo-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 1000
    generations: int = 200
    decay_factor: float = 0.999
    threshold_growth: float = 1.001
    overspeciation_factor: float = 1.1
    max_species: int = 100
    compatibility_threshold: float = 3.0
    excess_coefficient: float = 1.0
    disjoint_coefficient: float = 1.0
    weight_coefficient: float = 0.4
    weight_mutation_rate: float = 0.8
    weight_replace_fraction: float = 0.1
    perturb_half_range: float = 0.5
    add_connection_rate: float = 0.05
    add_node_rate: float = 0.03
    crossover_rate: float = 0.75
    elitism: int = 1
    elitism_min_size: int = 5
    survival_fraction: float = 0.2
    stagnation_limit: int = 15
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.threshold_growth < 1.0 or self.overspeciation_factor < 1.0:
            raise ConfigError("threshold factors must be >= 1")
        if self.max_species < 1:
            raise ConfigError("max_species must be >= 1")
        if self.compatibility_threshold < 0:
            raise ConfigError("compatibility_threshold must be >= 0")
        for name in ("weight_mutation_rate", "weight_replace_fraction", "add_connection_rate",
                     "add_node_rate", "crossover_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.survival_fraction <= 1.0:
            raise ConfigError("survival_fraction must lie in (0, 1]")
        if self.elitism < 0 or self.elitism_min_size < 1:
            raise ConfigError("elitism settings out of range")
        if self.stagnation_limit < 1:
            raise ConfigError("stagnation_limit must be >= 1")


def decayed_rate(base: float, decay: float, generation: int) -> float:
    """Mutation rate at a generation; closed form, no cumulative drift."""
    return base * decay**generation


def decayed_rates(config: EvolutionConfig, generation: int) -> dict[str, float]:
    return {
        "weight_mutation_rate": decayed_rate(config.weight_mutation_rate, config.decay_factor, generation),
        "add_connection_rate": decayed_rate(config.add_connection_rate, config.decay_factor, generation),
        "add_node_rate": decayed_rate(config.add_node_rate, config.decay_factor, generation),
    }


class InnovationRegistry:
    """Run-global allocator of innovation numbers and hidden-node ids.

    The same (src, dst) link always maps to the same innovation number,
    and splitting the same connection yields the same replacement node
    (unless the genome already owns it, in which case a sibling entry is
    allocated).  Numbers are never reused for different structures.
    """

    def __init__(self) -> None:
        self._pairs: dict[tuple[int, int], int] = {}
        self._splits: dict[int, list[tuple[int, int, int]]] = {}
        self.next_innovation = 0
        self.next_node_id = FIRST_HIDDEN_ID

    @classmethod
    def primed(cls) -> InnovationRegistry:
        """Registry pre-loaded with the canonical initial-genome links."""
        reg = cls()
        for src in INPUT_IDS:
            for dst in OUTPUT_IDS:
                reg.connection_innovation(src, dst)
        assert reg.next_innovation == N_INITIAL_CONNECTIONS
        return reg

    def connection_innovation(self, src: int, dst: int) -> int:
        key = (src, dst)
        if key not in self._pairs:
            self._pairs[key] = self.next_innovation
            self.next_innovation += 1
        return self._pairs[key]

    def split(self, conn: ConnectionGene, existing_node_ids) -> tuple[int, int, int]:
        """(node_id, incoming innovation, outgoing innovation) for splitting ``conn``."""
        entries = self._splits.setdefault(conn.innovation, [])
        for entry in entries:
            if entry[0] not in existing_node_ids:
                return entry
        node_id = self.next_node_id
        self.next_node_id += 1
        entry = (
            node_id,
            self.connection_innovation(conn.src, node_id),
            self.connection_innovation(node_id, conn.dst),
        )
        entries.append(entry)
        return entry

    def state(self) -> dict:
        return {
            "pairs": [[src, dst, innov] for (src, dst), innov in sorted(self._pairs.items())],
            "splits": {str(k): [list(e) for e in v] for k, v in sorted(self._splits.items())},
            "next_innovation": self.next_innovation,
            "next_node_id": self.next_node_id,
        }

    @classmethod
    def from_state(cls, state: dict) -> InnovationRegistry:
        reg = cls()
        reg._pairs = {(src, dst): innov for src, dst, innov in state["pairs"]}
        reg._splits = {int(k): [tuple(e) for e in v] for k, v in state["splits"].items()}
        reg.next_innovation = state["next_innovation"]
        reg.next_node_id = state["next_node_id"]
        return reg


@dataclass
class Species:
    """Mutable bookkeeping for one species across generations."""

    species_id: int
    representative: CppnGenome
    members: list[int] = field(default_factory=list)
    best_fitness: float = -math.inf
    stagnation: int = 0


def compatibility(a: CppnGenome, b: CppnGenome, c1: float = 1.0, c2: float = 1.0,
                  c3: float = 0.4) -> float:
    """Genome distance: c1*E/N + c2*D/N + c3*mean |weight delta|.

    E counts excess genes (beyond the other genome's highest marker), D
    disjoint ones, N is the larger gene count (at least 1).  Matching
    genes contribute only their mean absolute weight difference.
    """
    conns_a, conns_b = a.connections, b.connections
    max_a = conns_a[-1].innovation if conns_a else -1
    max_b = conns_b[-1].innovation if conns_b else -1
    weights_b = {c.innovation: c.weight for c in conns_b}
    excess = 0
    disjoint = 0
    diff_sum = 0.0
    matches = 0
    for c in conns_a:
        if c.innovation in weights_b:
            diff_sum += abs(c.weight - weights_b[c.innovation])
            matches += 1
        elif c.innovation > max_b:
            excess += 1
        else:
            disjoint += 1
    innovs_a = {c.innovation for c in conns_a}
    for c in conns_b:
        if c.innovation in innovs_a:
            continue
        if c.innovation > max_a:
            excess += 1
        else:
            disjoint += 1
    n = max(1, len(conns_a), len(conns_b))
    mean_diff = diff_sum / matches if matches else 0.0
    return c1 * excess / n + c2 * disjoint / n + c3 * mean_diff


def adjust_threshold(threshold: float, species_count: int, config: EvolutionConfig) -> float:
    """Per-generation threshold update: steady growth, extra on overshoot."""
    threshold = threshold * config.threshold_growth
    if species_count > config.max_species:
        threshold = threshold * config.overspeciation_factor
    return threshold


def speciate(
    population: Sequence[CppnGenome],
    previous: Sequence[Species],
    threshold: float,
    config: EvolutionConfig,
    rng: np.random.Generator,
    next_species_id: int,
) -> tuple[list[Species], int]:
    """Assign every genome to the first species within ``threshold``.

    Carried-over species keep their ids, stats and last generation's
    representatives; genomes matching none found a new species.  After
    assignment each surviving species draws a fresh representative from
    its current members for the next generation to speciate against.
    """
    species = [
        Species(sp.species_id, sp.representative, [], sp.best_fitness, sp.stagnation)
        for sp in previous
    ]
    c1, c2, c3 = config.excess_coefficient, config.disjoint_coefficient, config.weight_coefficient
    for idx, genome in enumerate(population):
        for sp in species:
            if compatibility(genome, sp.representative, c1, c2, c3) < threshold:
                sp.members.append(idx)
                break
        else:
            species.append(Species(next_species_id, genome, [idx]))
            next_species_id += 1
    species = [sp for sp in species if sp.members]
    for sp in species:
        sp.representative = population[sp.members[int(rng.integers(len(sp.members)))]]
    return species, next_species_id


def mutate(
    genome: CppnGenome,
    config: EvolutionConfig,
    generation: int,
    registry: InnovationRegistry,
    rng: np.random.Generator,
) -> CppnGenome:
    """Weight perturbation plus structural growth, at decayed rates.

    Weight events either nudge a gene by a uniform step or replace it
    outright; new links join any non-output node to any non-input node
    without closing a cycle; node insertion splits an enabled link into
    weight-1.0 in and old-weight out, disabling the original.
    """
    rates = decayed_rates(config, generation)
    changed = False
    conns = list(genome.connections)
    for i, c in enumerate(conns):
        if rng.random() < rates["weight_mutation_rate"]:
            if rng.random() < config.weight_replace_fraction:
                weight = float(rng.uniform(-1.0, 1.0))
            else:
                weight = clamp_weight(c.weight + float(rng.uniform(-config.perturb_half_range,
                                                                   config.perturb_half_range)))
            conns[i] = ConnectionGene(c.innovation, c.src, c.dst, weight, c.enabled)
            changed = True
    nodes = list(genome.nodes)
    if rng.random() < rates["add_connection_rate"]:
        present = {(c.src, c.dst) for c in conns}
        sources = sorted(n.id for n in nodes if n.role != "output")
        targets = sorted(n.id for n in nodes if n.role != "input")
        candidate_genome = genome.with_connections(conns) if changed else genome
        candidates = [
            (src, dst)
            for src in sources
            for dst in targets
            if (src, dst) not in present and not would_create_cycle(candidate_genome, src, dst)
        ]
        if candidates:
            src, dst = candidates[int(rng.integers(len(candidates)))]
            innovation = registry.connection_innovation(src, dst)
            conns.append(ConnectionGene(innovation, src, dst, float(rng.uniform(-1.0, 1.0)), True))
            changed = True
    if rng.random() < rates["add_node_rate"]:
        enabled = [i for i, c in enumerate(conns) if c.enabled]
        if enabled:
            pick = enabled[int(rng.integers(len(enabled)))]
            old = conns[pick]
            node_id, in_innov, out_innov = registry.split(old, {n.id for n in nodes})
            activation = HIDDEN_ACTIVATION_NAMES[int(rng.integers(len(HIDDEN_ACTIVATION_NAMES)))]
            nodes.append(NodeGene(node_id, "hidden", activation))
            conns[pick] = ConnectionGene(old.innovation, old.src, old.dst, old.weight, False)
            conns.append(ConnectionGene(in_innov, old.src, node_id, 1.0, True))
            conns.append(ConnectionGene(out_innov, node_id, old.dst, old.weight, True))
            changed = True
    if not changed:
        return genome
    return CppnGenome(tuple(nodes), tuple(conns))


def crossover(
    parent_a: CppnGenome,
    parent_b: CppnGenome,
    fitness_a: float,
    fitness_b: float,
    rng: np.random.Generator,
) -> CppnGenome:
    """Recombine along matched innovation markers.

    The child copies the fitter parent's structure (node set plus
    disjoint and excess genes); matching genes take their weight from a
    random parent.  A gene disabled in either parent comes out disabled
    three times out of four.
    """
    if fitness_a > fitness_b:
        fitter, other = parent_a, parent_b
    elif fitness_b > fitness_a:
        fitter, other = parent_b, parent_a
    elif rng.random() < 0.5:
        fitter, other = parent_a, parent_b
    else:
        fitter, other = parent_b, parent_a
    other_genes = {c.innovation: c for c in other.connections}
    child_conns = []
    for gene in fitter.connections:
        partner = other_genes.get(gene.innovation)
        if partner is None:
            chosen = gene
            disabled_somewhere = not gene.enabled
        else:
            chosen = gene if rng.random() < 0.5 else partner
            disabled_somewhere = not (gene.enabled and partner.enabled)
        enabled = True if not disabled_somewhere else bool(rng.random() >= 0.75)
        child_conns.append(ConnectionGene(gene.innovation, gene.src, gene.dst, chosen.weight, enabled))
    return CppnGenome(fitter.nodes, tuple(child_conns))


def reproduce(
    population: Sequence[CppnGenome],
    fitnesses: Sequence[float],
    species: list[Species],
    config: EvolutionConfig,
    generation: int,
    registry: InnovationRegistry,
    rng: np.random.Generator,
) -> tuple[list[CppnGenome], list[str]]:
    """Build the next generation; returns (population, event log lines).

    Offspring quotas follow fitness sharing (species weight = mean of
    shifted member fitness), rounded by largest remainder so they sum to
    the population size exactly.  Stagnant species are culled unless they
    hold the run champion, which itself is guaranteed a slot unchanged.
    """
    pop_size = config.population_size
    events: list[str] = []
    best_idx = max(range(len(fitnesses)), key=lambda i: (fitnesses[i], -i))
    best_genome = population[best_idx]

    for sp in species:
        current_best = max(fitnesses[i] for i in sp.members)
        if current_best > sp.best_fitness:
            sp.best_fitness = current_best
            sp.stagnation = 0
        else:
            sp.stagnation += 1
    survivors = []
    for sp in species:
        if sp.stagnation <= config.stagnation_limit or best_idx in sp.members:
            survivors.append(sp)
        else:
            events.append(f"species {sp.species_id} removed after {sp.stagnation} stagnant generations")
    if all(sp.stagnation > config.stagnation_limit for sp in survivors):
        events.append("every species stagnant; restarting from the champion's species")
    species[:] = survivors

    min_fitness = min(fitnesses)
    if min_fitness < 0:
        adjusted = [f - min_fitness + 1e-9 for f in fitnesses]
    else:
        adjusted = list(fitnesses)
    weights = [sum(adjusted[i] for i in sp.members) / len(sp.members) for sp in survivors]
    total = sum(weights)
    if total <= 0.0:
        weights = [1.0] * len(survivors)
        total = float(len(survivors))
    exact = [w / total * pop_size for w in weights]
    quotas = [int(math.floor(e)) for e in exact]
    shortfall = pop_size - sum(quotas)
    by_remainder = sorted(range(len(exact)), key=lambda i: (quotas[i] - exact[i], i))
    for i in by_remainder[:shortfall]:
        quotas[i] += 1

    new_population: list[CppnGenome] = []
    elite_slots: set[int] = set()
    for sp, quota in zip(survivors, quotas):
        if quota == 0:
            continue
        ranked = sorted(sp.members, key=lambda i: (-fitnesses[i], i))
        slots = quota
        if len(sp.members) >= config.elitism_min_size:
            for i in ranked[: min(config.elitism, slots)]:
                elite_slots.add(len(new_population))
                new_population.append(population[i])
                slots -= 1
        pool = ranked[: max(1, math.ceil(config.survival_fraction * len(ranked)))]
        for _ in range(slots):
            if len(pool) >= 2 and rng.random() < config.crossover_rate:
                ja = int(rng.integers(len(pool)))
                jb = int(rng.integers(len(pool) - 1))
                if jb >= ja:
                    jb += 1
                ia, ib = pool[ja], pool[jb]
                child = crossover(population[ia], population[ib], fitnesses[ia], fitnesses[ib], rng)
            else:
                child = population[pool[int(rng.integers(len(pool)))]]
            new_population.append(mutate(child, config, generation, registry, rng))
    assert len(new_population) == pop_size, "offspring quotas must fill the population"

    if not any(child is best_genome for child in new_population):
        slot = next((i for i in range(pop_size - 1, -1, -1) if i not in elite_slots), pop_size - 1)
        new_population[slot] = best_genome
        events.append("champion re-inserted to preserve the best genome")
    return new_population, events


@dataclass
class GenerationStats:
    generation: int
    species_count: int
    threshold: float
    events: list[str]


class Evolution:
    """Run state: population, species, innovation registry, rng, threshold."""

    def __init__(self, config: EvolutionConfig, rng: np.random.Generator | None = None) -> None:
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
        self.registry = InnovationRegistry.primed()
        self.population = [minimal_genome(self.rng) for _ in range(config.population_size)]
        self.species: list[Species] = []
        self.threshold = float(config.compatibility_threshold)
        self.generation = 0
        self.next_species_id = 0

    def advance(self, fitnesses: Sequence[float], *, reproduce_population: bool = True) -> GenerationStats:
        """Consume the current generation's fitness and step the run forward.

        Speciation and the threshold update always happen (so the final
        generation still gets stats); reproduction is skipped on the last
        call of a run.
        """
        if len(fitnesses) != len(self.population):
            raise ValueError("fitness list must be parallel to the population")
        self.species, self.next_species_id = speciate(
            self.population, self.species, self.threshold, self.config, self.rng, self.next_species_id
        )
        stats = GenerationStats(self.generation, len(self.species), self.threshold, [])
        self.threshold = adjust_threshold(self.threshold, len(self.species), self.config)
        if reproduce_population:
            self.population, stats.events = reproduce(
                self.population, fitnesses, self.species, self.config,
                self.generation, self.registry, self.rng,
            )
            self.generation += 1
        for line in stats.events:
            log.info("generation %d: %s", stats.generation, line)
        return stats


def _genome_to_jsonable(genome: CppnGenome) -> dict:
    return {
        "nodes": [[n.id, n.role, n.activation] for n in genome.nodes],
        "connections": [[c.innovation, c.src, c.dst, c.weight, int(c.enabled)] for c in genome.connections],
    }


def _genome_from_jsonable(data: dict) -> CppnGenome:
    nodes = tuple(NodeGene(int(i), role, act) for i, role, act in data["nodes"])
    conns = tuple(
        ConnectionGene(int(innov), int(src), int(dst), float(w), bool(en))
        for innov, src, dst, w, en in data["connections"]
    )
    return CppnGenome(nodes, conns)


def evolution_state(evo: Evolution) -> dict:
    return {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "generation": evo.generation,
        "threshold": evo.threshold,
        "next_species_id": evo.next_species_id,
        "rng_state": evo.rng.bit_generator.state,
        "registry": evo.registry.state(),
        "population": [_genome_to_jsonable(g) for g in evo.population],
        "species": [
            {
                "id": sp.species_id,
                "representative": _genome_to_jsonable(sp.representative),
                "best_fitness": sp.best_fitness,
                "stagnation": sp.stagnation,
            }
            for sp in evo.species
        ],
    }


def evolution_from_state(state: dict, config: EvolutionConfig) -> Evolution:
    if state.get("format") != CHECKPOINT_MAGIC or state.get("version") != CHECKPOINT_VERSION:
        raise ConfigError("not a chartevo checkpoint")
    evo = Evolution.__new__(Evolution)
    evo.config = config
    evo.rng = np.random.default_rng()
    evo.rng.bit_generator.state = state["rng_state"]
    evo.registry = InnovationRegistry.from_state(state["registry"])
    evo.population = [_genome_from_jsonable(g) for g in state["population"]]
    evo.species = [
        Species(
            sp["id"],
            _genome_from_jsonable(sp["representative"]),
            [],
            float(sp["best_fitness"]),
            int(sp["stagnation"]),
        )
        for sp in state["species"]
    ]
    evo.threshold = float(state["threshold"])
    evo.generation = int(state["generation"])
    evo.next_species_id = int(state["next_species_id"])
    return evo


def save_checkpoint(path, evo: Evolution, extra: dict | None = None) -> None:
    state = evolution_state(evo)
    if extra:
        state["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state, fh)
        fh.write("\n")


def load_checkpoint(path, config: EvolutionConfig) -> tuple[Evolution, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        state = json.load(fh)
    return evolution_from_state(state, config), state.get("extra", {})
