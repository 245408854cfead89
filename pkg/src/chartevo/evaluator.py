"""Fitness evaluation of phenotype networks over chart corpora.

A network matches a chart when its output preactivation is strictly
positive.  Fitness is the mean forward log return over matched charts,
multiplied by a penalty that decays exponentially in the match count,
so patterns that fire everywhere need a genuinely better mean return
than selective ones.  Charts without a forward return at the chosen
horizon are excluded outright; charts flagged as limit hits can never
match (the trade could not have been entered).

Dropout is available for training-split evaluation: hidden activations
are zeroed with probability 1 - retain and survivors rescaled by
1 / retain, one fixed mask per organism per evaluation pass, drawn from
a stream keyed by (seed, generation, organism index) so results do not
depend on scheduling.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .substrate import PhenotypeNetwork
from .types import CHART_CHANNELS, CHART_STEPS, ConfigError, Dataset, FitnessReport

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    k: int = 50
    alpha: float = 100000.0
    dropout_retain: float = 0.8
    dropout_enabled: bool = True
    batch_size: int = 0  # 0 evaluates the whole corpus in one pass
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ConfigError("horizon k must be positive")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if not 0.0 < self.dropout_retain <= 1.0:
            raise ConfigError("dropout_retain must lie in (0, 1]")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")


@dataclass(frozen=True)
class DatasetTensors:
    """Dense view of one split for one horizon, ready for matmul."""

    split: str
    k: int
    X: np.ndarray  # (n, 64) charts flattened time-major
    returns: np.ndarray  # (n,) forward log returns at k
    limit_hit: np.ndarray  # (n,) bool
    chart_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        for name in ("X", "returns", "limit_hit"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.returns)

    @classmethod
    def from_dataset(cls, dataset: Dataset, k: int) -> DatasetTensors:
        keep = [c for c in dataset.charts if k in c.returns]
        skipped = len(dataset.charts) - len(keep)
        if skipped:
            log.debug("%s: %d charts lack a %d-day return and are excluded",
                      dataset.split, skipped, k)
        n = len(keep)
        width = keep[0].values.size if keep else CHART_STEPS * CHART_CHANNELS
        X = np.empty((n, width))
        returns = np.empty(n)
        limit = np.empty(n, dtype=bool)
        for i, chart in enumerate(keep):
            X[i] = chart.values.reshape(-1)
            returns[i] = chart.returns[k]
            limit[i] = chart.limit_hit
        return cls(dataset.split, k, X, returns, limit,
                   tuple(c.chart_id for c in keep))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward_output(
    net: PhenotypeNetwork,
    X: np.ndarray,
    masks: Sequence[np.ndarray] | None = None,
    batch_size: int = 0,
) -> np.ndarray:
    """Output preactivations, shape (n,); optional fixed dropout masks.

    ``masks`` holds one per hidden layer (scaled keep/drop factors); the
    output layer is never masked.
    """
    if X.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"input width {X.shape[1]} does not fit network "
                         f"expecting {net.weights[0].shape[0]}")
    if masks is not None and len(masks) != net.n_hidden_layers:
        raise ValueError("need exactly one dropout mask per hidden layer")
    n = X.shape[0]
    step = batch_size if batch_size > 0 else max(n, 1)
    out = np.empty(n)
    hidden = _stable_sigmoid if net.activation == "sigmoid" else None
    for start in range(0, n, step):
        h = X[start:start + step]
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            pre = h @ w + b
            if i == len(net.weights) - 1:
                out[start:start + step] = pre[:, 0]
                break
            h = hidden(pre) if hidden else np.maximum(pre, 0.0)
            if masks is not None:
                h = h * masks[i]
    return out


def forward_preactivations(net: PhenotypeNetwork, X: np.ndarray) -> list[np.ndarray]:
    """Per-layer preactivations (no dropout); used for variance diagnostics."""
    acts = []
    h = X
    hidden = _stable_sigmoid if net.activation == "sigmoid" else None
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre = h @ w + b
        acts.append(pre)
        if i < len(net.weights) - 1:
            h = hidden(pre) if hidden else np.maximum(pre, 0.0)
    return acts


def match_flags(
    net: PhenotypeNetwork,
    tensors: DatasetTensors,
    masks: Sequence[np.ndarray] | None = None,
    batch_size: int = 0,
) -> np.ndarray:
    """Boolean match per chart: strictly positive output, limit hits vetoed."""
    out = forward_output(net, tensors.X, masks, batch_size)
    return (out > 0.0) & ~tensors.limit_hit


def penalty(match_count: int, alpha: float) -> float:
    """exp(-6 * matches / alpha): halves selectivity pressure around alpha/6."""
    return math.exp(-6.0 * match_count / alpha)


def dropout_rng(seed: int, generation: int, organism: int) -> np.random.Generator:
    """Mask stream for one (generation, organism); independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(generation, organism)))


def dropout_masks(
    net: PhenotypeNetwork, retain: float, rng: np.random.Generator
) -> list[np.ndarray]:
    """One inverted-dropout mask per hidden layer: kept units scale by 1/retain."""
    sizes = net.layer_sizes[1:-1]
    return [(rng.random(s) < retain) / retain for s in sizes]


def _as_tensors(data: Dataset | DatasetTensors, k: int) -> DatasetTensors:
    if isinstance(data, DatasetTensors):
        if data.k != k:
            raise ConfigError(f"tensors were built for k={data.k}, config wants k={k}")
        return data
    return DatasetTensors.from_dataset(data, k)


def fitness(
    net: PhenotypeNetwork,
    data: Dataset | DatasetTensors,
    config: EvalConfig,
    masks: Sequence[np.ndarray] | None = None,
) -> FitnessReport:
    """Score one network on one split."""
    tensors = _as_tensors(data, config.k)
    flags = match_flags(net, tensors, masks, config.batch_size)
    count = int(flags.sum())
    mean_return = float(tensors.returns[flags].sum() / count) if count else 0.0
    return FitnessReport.from_stats(config.k, count, mean_return, penalty(count, config.alpha))


def evaluate_population(
    nets: Sequence[PhenotypeNetwork],
    data: Dataset | DatasetTensors,
    config: EvalConfig,
    generation: int = 0,
    workers: int = 1,
) -> list[FitnessReport]:
    """Score a whole generation; results line up with ``nets`` by index.

    With dropout enabled each organism gets its own mask stream keyed by
    (generation, index), so worker count and completion order cannot
    change any report.
    """
    tensors = _as_tensors(data, config.k)

    def score(index: int) -> FitnessReport:
        masks = None
        if config.dropout_enabled:
            rng = dropout_rng(config.rng_seed, generation, index)
            masks = dropout_masks(nets[index], config.dropout_retain, rng)
        return fitness(nets[index], tensors, config, masks)

    if workers <= 1:
        return [score(i) for i in range(len(nets))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(score, range(len(nets))))
