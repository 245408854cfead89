"""Substrate geometry and expression of CPPN genomes into weight tensors.

A substrate is a stack of 2-d node grids placed at evenly spaced depths
in [-1, 1].  Nodes connect only to the next layer.  Each candidate link
(a, b) is assigned the CPPN's weight output at the coordinate pair, but
only where the gate output is positive; node biases come from a second
query with the partner coordinate zeroed.  Expressed weights can then be
rescaled per target node to keep forward variance in check.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import cppn
from .types import ConfigError

PHENOTYPE_MAGIC = "chartevo-phenotype"
PHENOTYPE_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """A rectangular node sheet; nx spans x (time), ny spans y (channel)."""

    nx: int
    ny: int

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.nx}x{self.ny}")

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def coordinates(self, z: float) -> np.ndarray:
        """(size, 3) array of node coordinates, x-major to match chart layout."""
        xs = _axis(self.nx)
        ys = _axis(self.ny)
        out = np.empty((self.size, 3))
        out[:, 0] = np.repeat(xs, self.ny)
        out[:, 1] = np.tile(ys, self.nx)
        out[:, 2] = z
        return out


def _axis(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


@dataclass(frozen=True)
class SubstrateSpec:
    """Layer stack with depths assigned by equal division of [-1, 1]."""

    name: str
    layers: tuple[Grid, ...]

    def __post_init__(self) -> None:
        if len(self.layers) < 2:
            raise ConfigError("substrate needs an input and an output layer")
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def depths(self) -> tuple[float, ...]:
        return tuple(_axis(len(self.layers)).tolist())

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple(g.size for g in self.layers)

    def layer_coordinates(self, index: int) -> np.ndarray:
        return self.layers[index].coordinates(self.depths[index])


def standard_substrates() -> dict[str, SubstrateSpec]:
    """The three built-in geometries keyed by name."""
    return {
        "template": SubstrateSpec("template", (Grid(32, 2), Grid(1, 1))),
        "network": SubstrateSpec(
            "network", (Grid(32, 2), Grid(16, 12), Grid(8, 6), Grid(1, 1))
        ),
        "deep": SubstrateSpec(
            "deep",
            (Grid(32, 2), Grid(16, 12), Grid(16, 6), Grid(8, 6), Grid(4, 6), Grid(4, 3), Grid(1, 1)),
        ),
    }


@dataclass(frozen=True)
class PhenotypeNetwork:
    """Dense layered feed-forward net produced by expressing one genome."""

    weights: tuple[np.ndarray, ...]  # one (n_in, n_out) matrix per layer pair
    biases: tuple[np.ndarray, ...]  # one (n_out,) vector per non-input layer
    activation: str  # hidden-layer nonlinearity: relu | sigmoid

    def __post_init__(self) -> None:
        if self.activation not in ("relu", "sigmoid"):
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one weight matrix and bias vector per layer pair")
        frozen_w = []
        frozen_b = []
        for w, b in zip(self.weights, self.biases):
            w = np.array(w, dtype=np.float64, copy=True)
            b = np.array(b, dtype=np.float64, copy=True)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("weight/bias shape mismatch")
            w.setflags(write=False)
            b.setflags(write=False)
            frozen_w.append(w)
            frozen_b.append(b)
        for a, b_ in zip(frozen_w, frozen_w[1:]):
            if a.shape[1] != b_.shape[0]:
                raise ValueError("adjacent weight matrices do not chain")
        object.__setattr__(self, "weights", tuple(frozen_w))
        object.__setattr__(self, "biases", tuple(frozen_b))

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_hidden_layers(self) -> int:
        return len(self.weights) - 1


def he_scale(weights: np.ndarray, expressed: np.ndarray) -> np.ndarray:
    """Rescale columns by sqrt(2 / fan-in), fan-in counted over expressed links.

    Target nodes with no expressed incoming link keep their (all-zero)
    column untouched.
    """
    weights = np.asarray(weights, dtype=np.float64)
    expressed = np.asarray(expressed, dtype=bool)
    if weights.shape != expressed.shape:
        raise ValueError("weights and expressed mask must have equal shape")
    fan_in = expressed.sum(axis=0)
    factors = np.where(fan_in > 0, np.sqrt(2.0 / np.maximum(fan_in, 1)), 1.0)
    return weights * factors[np.newaxis, :]


def express(
    genome: cppn.CppnGenome,
    spec: SubstrateSpec,
    *,
    scaling: str = "he",
    activation: str = "relu",
) -> PhenotypeNetwork:
    """Query the genome over every adjacent-layer pair and bias coordinate."""
    if scaling not in ("he", "none"):
        raise ConfigError(f"unsupported scaling {scaling!r}")
    weights = []
    biases = []
    for i in range(len(spec.layers) - 1):
        coords_a = spec.layer_coordinates(i)
        coords_b = spec.layer_coordinates(i + 1)
        n_in, n_out = len(coords_a), len(coords_b)
        pair_a = np.repeat(coords_a, n_out, axis=0)
        pair_b = np.tile(coords_b, (n_in, 1))
        raw, gate = cppn.query_connection_batch(genome, pair_a, pair_b)
        expressed = (gate > 0.0).reshape(n_in, n_out)
        w = np.where(expressed, raw.reshape(n_in, n_out), 0.0)
        if scaling == "he":
            w = he_scale(w, expressed)
        weights.append(w)
        biases.append(cppn.query_bias_batch(genome, coords_b))
    return PhenotypeNetwork(tuple(weights), tuple(biases), activation)


def phenotype_to_text(net: PhenotypeNetwork) -> str:
    lines = [f"{PHENOTYPE_MAGIC} {PHENOTYPE_VERSION}"]
    lines.append(f"activation {net.activation}")
    lines.append("layers " + " ".join(str(s) for s in net.layer_sizes))
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"weights {i}")
        for row in w:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append(f"biases {i}")
        lines.append(" ".join(repr(float(v)) for v in b))
    return "\n".join(lines) + "\n"


def phenotype_from_text(text: str) -> PhenotypeNetwork:
    lines = text.strip().splitlines()
    if not lines or lines[0].split() != [PHENOTYPE_MAGIC, str(PHENOTYPE_VERSION)]:
        raise ValueError(f"not a {PHENOTYPE_MAGIC} version {PHENOTYPE_VERSION} document")
    activation = lines[1].split()[1]
    sizes = [int(s) for s in lines[2].split()[1:]]
    weights = []
    biases = []
    cursor = 3
    for i in range(len(sizes) - 1):
        assert lines[cursor] == f"weights {i}"
        cursor += 1
        rows = []
        for _ in range(sizes[i]):
            rows.append([float(v) for v in lines[cursor].split()])
            cursor += 1
        weights.append(np.array(rows).reshape(sizes[i], sizes[i + 1]))
        assert lines[cursor] == f"biases {i}"
        cursor += 1
        biases.append(np.array([float(v) for v in lines[cursor].split()]))
        cursor += 1
    return PhenotypeNetwork(tuple(weights), tuple(biases), activation)
