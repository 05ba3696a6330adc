"""Uniform tensor grids on intervals and rectangles with Dirichlet boundaries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError

#: relative slack when deciding whether a time lies on a grid node
_SNAP_RTOL = 1e-9


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on (0, l) in 1D or (0, l1) x (0, l2) in 2D.

    Only interior nodes are stored; every boundary node carries the
    homogeneous Dirichlet value 0. Spacing per axis is length/(points+1).
    """

    lengths: tuple[float, ...]
    interior_points: tuple[int, ...]

    def __post_init__(self):
        if len(self.lengths) not in (1, 2) or len(self.lengths) != len(self.interior_points):
            raise PreconditionError("grid must be 1D or 2D with one size per axis")
        if any(l <= 0 for l in self.lengths):
            raise PreconditionError("axis lengths must be positive")
        if any(int(n) != n or n < 1 for n in self.interior_points):
            raise PreconditionError("interior point counts must be positive integers")
        object.__setattr__(self, "lengths", tuple(float(l) for l in self.lengths))
        object.__setattr__(self, "interior_points", tuple(int(n) for n in self.interior_points))

    @classmethod
    def interval(cls, length: float, interior_points: int) -> "SpatialGrid":
        return cls((length,), (interior_points,))

    @classmethod
    def rectangle(cls, lengths: tuple[float, float], interior_points: tuple[int, int]) -> "SpatialGrid":
        return cls(tuple(lengths), tuple(interior_points))

    @property
    def dimension(self) -> int:
        return len(self.lengths)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(l / (n + 1) for l, n in zip(self.lengths, self.interior_points))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.interior_points

    @property
    def size(self) -> int:
        return math.prod(self.interior_points)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacings)

    def axis_nodes(self, axis: int, include_boundary: bool = False) -> np.ndarray:
        """Node coordinates along one axis (interior by default)."""
        n = self.interior_points[axis]
        h = self.spacings[axis]
        if include_boundary:
            return np.arange(0, n + 2) * h
        return np.arange(1, n + 1) * h

    def meshgrid(self, include_boundary: bool = False) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape`` (plus boundary if asked)."""
        axes = [self.axis_nodes(a, include_boundary) for a in range(self.dimension)]
        if self.dimension == 1:
            return (axes[0],)
        return tuple(np.meshgrid(*axes, indexing="ij"))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into ``steps`` steps with named marked times.

    Marked times (delta, t0, t1, t2, ...) are snapped to the nearest node;
    a value farther than a relative 1e-6 of one step from any node is rejected.
    """

    horizon: float
    steps: int
    marked_times: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon <= 0:
            raise PreconditionError("horizon T must be positive")
        if int(self.steps) != self.steps or self.steps < 0:
            raise PreconditionError("steps N must be a nonnegative integer")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))
        snapped = {}
        for name, t in self.marked_times.items():
            snapped[name] = self.snap(float(t))
        object.__setattr__(self, "marked_times", snapped)

    @property
    def dt(self) -> float:
        if self.steps == 0:
            return 0.0
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def snap(self, t: float) -> float:
        """Round t onto the nearest grid node; t must lie in [0, T]."""
        if self.steps == 0:
            if abs(t) > _SNAP_RTOL * max(1.0, self.horizon):
                raise PreconditionError(f"time {t} is not a node of an empty grid")
            return 0.0
        if t < -_SNAP_RTOL or t > self.horizon * (1.0 + _SNAP_RTOL):
            raise PreconditionError(f"time {t} outside [0, {self.horizon}]")
        k = min(max(round(t / self.dt), 0), self.steps)
        return k * self.dt

    def index_of(self, t: float) -> int:
        """Index k with t_k == snap(t)."""
        return round(self.snap(t) / self.dt) if self.steps else 0

    def marked_index(self, name: str) -> int:
        if name not in self.marked_times:
            raise PreconditionError(f"marked time {name!r} not present")
        return self.index_of(self.marked_times[name])

    def require_order(self, *names: str, strict: bool = True) -> None:
        """Check that the named marked times appear in increasing order."""
        values = []
        for name in names:
            if name not in self.marked_times:
                raise PreconditionError(f"marked time {name!r} not present")
            values.append(self.marked_times[name])
        for (na, a), (nb, b) in zip(zip(names, values), zip(names[1:], values[1:])):
            if (a >= b) if strict else (a > b):
                raise PreconditionError(
                    f"marked-time ordering violated: need {na} < {nb}, got {a} >= {b}"
                )

    def with_marks(self, **marks: float) -> "TimeGrid":
        merged = dict(self.marked_times)
        merged.update(marks)
        return TimeGrid(self.horizon, self.steps, merged)
