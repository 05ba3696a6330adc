"""Reproducible Brownian increments from counter-based per-path streams.

Each path owns a Philox stream keyed by ``SeedSequence(seed, spawn_key=(index,))``,
so regenerating any path is bit-identical no matter how many paths were drawn
before it or on which worker.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import PreconditionError
from .grids import TimeGrid

#: spawn-key tags for auxiliary streams that must not collide with path streams
OBSERVATION_STREAM = 1 << 20
INITIAL_DATA_STREAM = 1 << 21
DRIFT_STREAM = 1 << 22


def path_generator(seed: int, stream_index: int) -> np.random.Generator:
    """Counter-based generator for one (seed, index) stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_index,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class BrownianPath:
    """Increments and cumulative values of one scalar Brownian path."""

    timegrid: TimeGrid
    increments: np.ndarray
    seed: int
    path_index: int

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape != (self.timegrid.steps,):
            raise PreconditionError(
                f"expected {self.timegrid.steps} increments, got shape {inc.shape}"
            )
        object.__setattr__(self, "increments", inc)

    @cached_property
    def values(self) -> np.ndarray:
        """B(t_k) for k = 0..N with B(0) = 0."""
        out = np.empty(self.timegrid.steps + 1)
        out[0] = 0.0
        np.cumsum(self.increments, out=out[1:])
        return out

    def coarsen(self, factor: int) -> "BrownianPath":
        """Same path on a grid with ``factor`` times fewer steps."""
        n = self.timegrid.steps
        if factor < 1 or n % factor:
            raise PreconditionError(f"factor {factor} does not divide {n} steps")
        coarse_grid = TimeGrid(self.timegrid.horizon, n // factor, self.timegrid.marked_times)
        inc = self.increments.reshape(n // factor, factor).sum(axis=1)
        return BrownianPath(coarse_grid, inc, self.seed, self.path_index)


def sample_brownian(seed: int, path_index: int, timegrid: TimeGrid) -> BrownianPath:
    """Draw one path; increments are N(0, dt) from the path's own stream."""
    gen = path_generator(seed, path_index)
    inc = gen.standard_normal(timegrid.steps) * np.sqrt(timegrid.dt)
    return BrownianPath(timegrid, inc, seed, path_index)


def sample_increment_block(
    seed: int, path_indices: range | list[int], timegrid: TimeGrid
) -> np.ndarray:
    """Increments for several paths, shape (steps, len(path_indices)).

    Column j is bit-identical to ``sample_brownian(seed, path_indices[j], ...)``.
    """
    block = np.empty((timegrid.steps, len(path_indices)))
    root = np.sqrt(timegrid.dt)
    for j, idx in enumerate(path_indices):
        block[:, j] = path_generator(seed, idx).standard_normal(timegrid.steps) * root
    return block
