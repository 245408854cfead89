"""Compositional pattern-producing networks: the evolved genotype.

A genome is a DAG with seven fixed inputs (two 3-d substrate coordinates
plus a constant one) and three fixed outputs: connection weight, node
bias, and a link-expression gate.  Hidden nodes carry one of a small set
of activation functions; outputs are linear.  Genomes are immutable;
mutation and crossover (in the neat module) build new ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

N_INPUTS = 7
INPUT_IDS = tuple(range(N_INPUTS))
WEIGHT_OUTPUT, BIAS_OUTPUT, LEO_OUTPUT = 7, 8, 9
OUTPUT_IDS = (WEIGHT_OUTPUT, BIAS_OUTPUT, LEO_OUTPUT)
FIRST_HIDDEN_ID = 10
WEIGHT_LIMIT = 3.0

GENOME_MAGIC = "chartevo-cppn"
GENOME_VERSION = 1


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(a, -60.0, 60.0)))


def _gaussian(a: np.ndarray) -> np.ndarray:
    return np.exp(-np.square(a))


ACTIVATIONS: Mapping[str, object] = {
    "sigmoid": _sigmoid,
    "gaussian": _gaussian,
    "sine": np.sin,
    "linear": lambda a: a,
    "absolute": np.abs,
}
HIDDEN_ACTIVATION_NAMES = tuple(sorted(ACTIVATIONS))


@dataclass(frozen=True)
class NodeGene:
    id: int
    role: str  # input | hidden | output
    activation: str

    def __post_init__(self) -> None:
        if self.role not in ("input", "hidden", "output"):
            raise ValueError(f"bad node role {self.role!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ConnectionGene:
    innovation: int
    src: int
    dst: int
    weight: float
    enabled: bool

    def __post_init__(self) -> None:
        if not math.isfinite(self.weight):
            raise ValueError("connection weight must be finite")
        if abs(self.weight) > WEIGHT_LIMIT:
            raise ValueError(f"connection weight {self.weight} outside [-{WEIGHT_LIMIT}, {WEIGHT_LIMIT}]")


@dataclass(frozen=True)
class CppnGenome:
    """Immutable CPPN genome; nodes sorted by id, connections by innovation."""

    nodes: tuple[NodeGene, ...]
    connections: tuple[ConnectionGene, ...]

    def __post_init__(self) -> None:
        nodes = tuple(sorted(self.nodes, key=lambda n: n.id))
        conns = tuple(sorted(self.connections, key=lambda c: c.innovation))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "connections", conns)
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        inputs = tuple(n.id for n in nodes if n.role == "input")
        outputs = tuple(n.id for n in nodes if n.role == "output")
        if inputs != INPUT_IDS:
            raise ValueError(f"genome must have input nodes {INPUT_IDS}")
        if outputs != OUTPUT_IDS:
            raise ValueError(f"genome must have output nodes {OUTPUT_IDS}")
        innovations = [c.innovation for c in conns]
        if len(set(innovations)) != len(innovations):
            raise ValueError("duplicate innovation numbers")
        id_set = set(ids)
        pairs = set()
        for c in conns:
            if c.src not in id_set or c.dst not in id_set:
                raise ValueError(f"connection {c.innovation} references missing node")
            if c.dst in INPUT_IDS:
                raise ValueError("connections may not target an input node")
            if (c.src, c.dst) in pairs:
                raise ValueError(f"duplicate connection {c.src}->{c.dst}")
            pairs.add((c.src, c.dst))
        object.__setattr__(self, "_order", _topological_order(nodes, conns))

    @property
    def node_ids(self) -> frozenset[int]:
        return frozenset(n.id for n in self.nodes)

    def node_by_id(self, node_id: int) -> NodeGene:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def topological_order(self) -> tuple[int, ...]:
        """Node ids in dependency order (inputs first); cached at construction."""
        return self._order

    def signature(self) -> tuple:
        """Hashable identity covering structure, weights and enable flags."""
        return (
            tuple((n.id, n.role, n.activation) for n in self.nodes),
            tuple((c.innovation, c.src, c.dst, c.weight, c.enabled) for c in self.connections),
        )

    def with_connections(self, connections: Iterable[ConnectionGene]) -> CppnGenome:
        return replace(self, connections=tuple(connections))


def _topological_order(nodes: tuple[NodeGene, ...], conns: tuple[ConnectionGene, ...]) -> tuple[int, ...]:
    # Kahn over every connection, enabled or not: structure itself must be
    # acyclic, not just the expressed part.
    indegree = {n.id: 0 for n in nodes}
    outgoing: dict[int, list[int]] = {n.id: [] for n in nodes}
    for c in conns:
        indegree[c.dst] += 1
        outgoing[c.src].append(c.dst)
    ready = sorted(i for i, d in indegree.items() if d == 0)
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        inserted = False
        for dst in outgoing[node]:
            indegree[dst] -= 1
            if indegree[dst] == 0:
                ready.append(dst)
                inserted = True
        if inserted:
            ready.sort()
    if len(order) != len(nodes):
        raise ValueError("genome graph contains a cycle")
    return tuple(order)


def would_create_cycle(genome: CppnGenome, src: int, dst: int) -> bool:
    """True if adding src -> dst would close a directed cycle."""
    if src == dst:
        return True
    # DFS from dst over all connections; a path back to src means a cycle
    outgoing: dict[int, list[int]] = {}
    for c in genome.connections:
        outgoing.setdefault(c.src, []).append(c.dst)
    stack = [dst]
    seen = set()
    while stack:
        node = stack.pop()
        if node == src:
            return True
        if node in seen:
            continue
        seen.add(node)
        stack.extend(outgoing.get(node, ()))
    return False


def activate_batch(genome: CppnGenome, inputs: np.ndarray) -> np.ndarray:
    """Evaluate the genome on a batch of input rows.

    ``inputs`` has shape (n, 7); returns shape (n, 3) with columns
    (weight, bias, leo).  Disabled connections contribute nothing; a
    non-input node with no enabled incoming connection sits at its
    activation of zero preactivation.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != N_INPUTS:
        raise ValueError(f"inputs must have shape (n, {N_INPUTS})")
    n = inputs.shape[0]
    incoming: dict[int, list[ConnectionGene]] = {}
    for c in genome.connections:
        if c.enabled:
            incoming.setdefault(c.dst, []).append(c)
    values: dict[int, np.ndarray] = {}
    roles = {node.id: node for node in genome.nodes}
    for node_id in genome.topological_order():
        node = roles[node_id]
        if node.role == "input":
            values[node_id] = inputs[:, node_id]
            continue
        pre = np.zeros(n)
        for c in incoming.get(node_id, ()):
            pre = pre + c.weight * values[c.src]
        if node.role == "output":
            values[node_id] = pre
        else:
            values[node_id] = ACTIVATIONS[node.activation](pre)
    return np.stack([values[WEIGHT_OUTPUT], values[BIAS_OUTPUT], values[LEO_OUTPUT]], axis=1)


def activate(genome: CppnGenome, inputs: Iterable[float]) -> tuple[float, float, float]:
    row = np.asarray(tuple(inputs), dtype=np.float64).reshape(1, N_INPUTS)
    w, b, leo = activate_batch(genome, row)[0]
    return float(w), float(b), float(leo)


def query_connection_batch(
    genome: CppnGenome, coords_a: np.ndarray, coords_b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Weight and gate outputs for pairs of 3-d substrate coordinates."""
    coords_a = np.asarray(coords_a, dtype=np.float64)
    coords_b = np.asarray(coords_b, dtype=np.float64)
    if coords_a.shape != coords_b.shape or coords_a.ndim != 2 or coords_a.shape[1] != 3:
        raise ValueError("coordinate batches must both have shape (n, 3)")
    n = coords_a.shape[0]
    inputs = np.concatenate([coords_a, coords_b, np.ones((n, 1))], axis=1)
    out = activate_batch(genome, inputs)
    return out[:, 0], out[:, 2]


def query_bias_batch(genome: CppnGenome, coords: np.ndarray) -> np.ndarray:
    """Bias output for nodes at ``coords``; the partner slot is zero-filled."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError("coordinate batch must have shape (n, 3)")
    n = coords.shape[0]
    inputs = np.concatenate([coords, np.zeros((n, 3)), np.ones((n, 1))], axis=1)
    return activate_batch(genome, inputs)[:, 1]


def query_connection(genome: CppnGenome, coord_a, coord_b) -> tuple[float, float]:
    w, leo = query_connection_batch(
        genome, np.asarray(coord_a).reshape(1, 3), np.asarray(coord_b).reshape(1, 3)
    )
    return float(w[0]), float(leo[0])


def query_bias(genome: CppnGenome, coord) -> float:
    return float(query_bias_batch(genome, np.asarray(coord).reshape(1, 3))[0])


def clamp_weight(weight: float) -> float:
    return min(WEIGHT_LIMIT, max(-WEIGHT_LIMIT, weight))


def minimal_genome(rng: np.random.Generator) -> CppnGenome:
    """Fully connected inputs-to-outputs genome with uniform random weights.

    Innovation numbers 0..20 are fixed by convention (input-major order),
    so every initial genome shares markers for the same link.
    """
    nodes = [NodeGene(i, "input", "linear") for i in INPUT_IDS]
    nodes += [NodeGene(i, "output", "linear") for i in OUTPUT_IDS]
    conns = []
    innovation = 0
    for src in INPUT_IDS:
        for dst in OUTPUT_IDS:
            weight = float(rng.uniform(-1.0, 1.0))
            conns.append(ConnectionGene(innovation, src, dst, weight, True))
            innovation += 1
    return CppnGenome(tuple(nodes), tuple(conns))


N_INITIAL_CONNECTIONS = N_INPUTS * len(OUTPUT_IDS)


def to_text(genome: CppnGenome) -> str:
    """Serialize losslessly; float weights use repr so parsing round-trips."""
    lines = [f"{GENOME_MAGIC} {GENOME_VERSION}"]
    for n in genome.nodes:
        lines.append(f"node {n.id} {n.role} {n.activation}")
    for c in genome.connections:
        lines.append(f"conn {c.innovation} {c.src} {c.dst} {c.weight!r} {int(c.enabled)}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> CppnGenome:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].split() != [GENOME_MAGIC, str(GENOME_VERSION)]:
        raise ValueError(f"not a {GENOME_MAGIC} version {GENOME_VERSION} document")
    nodes: list[NodeGene] = []
    conns: list[ConnectionGene] = []
    for line in lines[1:]:
        parts = line.split()
        if parts[0] == "node" and len(parts) == 4:
            nodes.append(NodeGene(int(parts[1]), parts[2], parts[3]))
        elif parts[0] == "conn" and len(parts) == 6:
            conns.append(
                ConnectionGene(int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4]), bool(int(parts[5])))
            )
        else:
            raise ValueError(f"bad genome line: {line!r}")
    return CppnGenome(tuple(nodes), tuple(conns))
