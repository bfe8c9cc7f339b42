"""Deterministic synthetic weighted graphs with planted structure."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError
from .graph import WeightedGraph


def _labels(sizes: Sequence[int]) -> list[str]:
    width = len(str(sum(sizes) - 1))
    return [f"n{i:0{width}d}" for i in range(sum(sizes))]


def _noisy(w: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    if noise:
        f = rng.uniform(1.0 - noise, 1.0 + noise, w.shape)
        f = np.triu(f, 1)
        w = w * (f + f.T)
    np.fill_diagonal(w, 0.0)
    return w


def complete(n: int, weight: float = 1.0) -> WeightedGraph:
    if n < 2:
        raise ConfigError("complete graph needs n >= 2")
    if not weight > 0:
        raise ConfigError("weight must be > 0")
    w = np.full((n, n), float(weight))
    np.fill_diagonal(w, 0.0)
    return WeightedGraph(tuple(_labels([n])), w)


def block_model(
    sizes: Sequence[int],
    mu_in: float = 0.6,
    mu_out: float = 1.4,
    noise: float = 0.0,
    seed: int = 0,
) -> tuple[WeightedGraph, list[list[str]]]:
    """Complete graph on planted blocks: ``mu_in`` inside, ``mu_out`` across.

    With ``noise > 0`` every weight is multiplied by an independent
    ``U(1 - noise, 1 + noise)`` factor. Returns the graph and the planted blocks.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 1 or any(s < 1 for s in sizes) or sum(sizes) < 2:
        raise ConfigError(f"invalid block sizes {sizes}")
    if not (mu_in > 0 and mu_out > 0):
        raise ConfigError("block weights must be > 0")
    if not 0 <= noise < 1:
        raise ConfigError("noise must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    labels = _labels(sizes)
    block = np.repeat(np.arange(len(sizes)), sizes)
    w = np.where(block[:, None] == block[None, :], float(mu_in), float(mu_out))
    w = _noisy(w, noise, rng)
    starts = np.cumsum([0, *sizes])
    truth = [labels[a:b] for a, b in zip(starts[:-1], starts[1:])]
    return WeightedGraph(tuple(labels), w), truth


def dumbbell(
    size_a: int,
    size_b: int,
    mu_in: float = 0.6,
    mu_out: float = 1.4,
    noise: float = 0.0,
    seed: int = 0,
) -> tuple[WeightedGraph, list[list[str]]]:
    """Two complete blocks joined by every cross pair at weight ``mu_out``."""
    if size_a < 1 or size_b < 1:
        raise ConfigError("dumbbell blocks need at least one node each")
    return block_model([size_a, size_b], mu_in, mu_out, noise, seed)


def random_complete(n: int, low: float = 0.5, high: float = 1.3, seed: int = 0) -> WeightedGraph:
    """Complete graph with i.i.d. ``U(low, high)`` weights."""
    if n < 2 or not 0 < low <= high:
        raise ConfigError("need n >= 2 and 0 < low <= high")
    rng = np.random.default_rng(seed)
    w = np.triu(rng.uniform(low, high, (n, n)), 1)
    return WeightedGraph(tuple(_labels([n])), w + w.T)
