"""Paths on finite time grids and the shift / stop / difference operators.

All operator arguments must be grid times; nothing is interpolated except in
:func:`step_sample`, which evaluates its input between knots by holding the
previous knot value.  Paths are extended past the horizon by holding the last
value.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class GridAlignmentError(ValueError):
    """An operator argument does not fall on the path's time grid."""


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two times")
        if t[0] != 0.0:
            raise ValueError("time grids start at 0")
        if not np.all(np.diff(t) > 0):
            raise ValueError("grid times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        if steps < 1:
            raise ValueError("steps must be >= 1")
        # k * dt rather than linspace so that k*dt is reproduced exactly by index()
        dt = horizon / steps
        t = np.arange(steps + 1) * dt
        t[-1] = horizon
        return cls(t)

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @cached_property
    def is_uniform(self) -> bool:
        d = self.dt
        return bool(np.allclose(d, d[0], rtol=1e-12, atol=0.0))

    def index(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid time."""
        k = int(np.searchsorted(self.times, t))
        tol = 1e-9 * max(1.0, self.horizon)
        for j in (k - 1, k):
            if 0 <= j < self.times.size and abs(self.times[j] - t) <= tol:
                return j
        raise GridAlignmentError(f"time {t!r} is not on the grid")

    def nearest_index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.times.shape == other.times.shape and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())

    def __len__(self):
        return self.times.size


@dataclass(frozen=True, eq=False)
class GridPath:
    """A d-dimensional path sampled at every time of ``grid``.

    ``values`` has shape ``(len(grid), d)``; one-dimensional input is
    promoted to ``d = 1``.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != len(self.grid):
            raise ValueError(f"values shape {v.shape} does not match grid of length {len(self.grid)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def starts_at_zero(self) -> bool:
        return bool(np.all(self.values[0] == 0.0))

    def __call__(self, t: float) -> np.ndarray:
        return self.values[self.grid.index(t)]

    def at_index(self, k: int) -> np.ndarray:
        """Value at grid index ``k``, held at the ends."""
        return self.values[min(max(k, 0), self.grid.steps)]

    def scalar(self) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("path is not one-dimensional")
        return self.values[:, 0]

    def __eq__(self, other):
        if not isinstance(other, GridPath):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None

    def __add__(self, other: "GridPath") -> "GridPath":
        if self.grid != other.grid:
            raise ValueError("paths live on different grids")
        return GridPath(self.grid, self.values + other.values)

    # CSV interchange: one row per grid time, columns t, v1..vd
    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"v{i + 1}" for i in range(self.dim)])
        for t, row in zip(self.grid.times, self.values):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "GridPath":
        text = Path(source).read_text() if isinstance(source, (str, Path)) and Path(str(source)).exists() else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        body = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        return cls(TimeGrid(body[:, 0]), body[:, 1:])


def _shift_steps(grid: TimeGrid, t: float) -> int:
    """Signed number of grid steps corresponding to time offset ``t``."""
    if t == 0:
        return 0
    if not grid.is_uniform:
        raise GridAlignmentError("shift/diff by nonzero t need a uniform grid")
    dt = grid.times[1]
    k = round(t / dt)
    if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise GridAlignmentError(f"offset {t!r} is not a multiple of the grid step")
    if abs(k) > grid.steps:
        raise GridAlignmentError(f"offset {t!r} exceeds the horizon")
    return k


def shift(x: GridPath, t: float) -> GridPath:
    """``s -> x((t + s)^+)``; negative ``t`` delays the path, holding ``x(0)``."""
    k = _shift_steps(x.grid, t)
    idx = np.clip(np.arange(len(x.grid)) + k, 0, x.grid.steps)
    return GridPath(x.grid, x.values[idx])


def stop(x: GridPath, t: float) -> GridPath:
    """``s -> x(min(s, t))``."""
    if t < 0:
        raise GridAlignmentError("stopping time must be nonnegative")
    k = x.grid.index(t)
    idx = np.minimum(np.arange(len(x.grid)), k)
    return GridPath(x.grid, x.values[idx])


def diff(x: GridPath, t: float) -> GridPath:
    """``s -> x(t + s) - x(t)``, a path starting at zero."""
    if t < 0:
        raise GridAlignmentError("difference time must be nonnegative")
    k = x.grid.index(t)
    _shift_steps(x.grid, t)  # alignment check for the shift part
    idx = np.minimum(np.arange(len(x.grid)) + k, x.grid.steps)
    return GridPath(x.grid, x.values[idx] - x.values[k])


@dataclass(frozen=True)
class StepSampleConfig:
    n: int
    u: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if not 0.0 <= self.u <= 1.0:
            raise ValueError("u must lie in [0, 1]")


def _left_constant(x: GridPath, s: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(x.grid.times, s, side="right") - 1
    return x.values[np.clip(idx, 0, x.grid.steps)]


def step_sample(f: GridPath, cfg: StepSampleConfig) -> GridPath:
    """Randomised step-function sampling of ``f`` at times ``(u + i - 1) / n``.

    The result is zero on ``[0, u/n)`` and equals ``f((u + i - 1)/n)`` on
    ``[(u + i - 1)/n, (u + i)/n)``.  ``f`` is read between knots by holding the
    previous knot value.
    """
    t = f.grid.times
    i = np.floor(cfg.n * t - cfg.u) + 1  # sampling-interval index for each grid time
    knots = (cfg.u + i - 1) / cfg.n
    out = _left_constant(f, np.maximum(knots, 0.0))
    out = np.where((i >= 1)[:, None], out, 0.0)
    return GridPath(f.grid, out)
