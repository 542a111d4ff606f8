"""Updating functions: path-to-state maps with the Markov-augmentation axioms.

Each updating function has two faces:

* an exact evaluator ``trajectory(e, x)`` returning the whole state path
  ``t -> Phi_t(e, x)`` for a driving path ``x`` that starts at zero, used by the
  axiom harness;
* a batched step rule (``initial`` / ``step`` / ``level``) advancing ``N``
  states by one grid increment at a time, used by the simulators.

State encodings
---------------
identity   ``e`` is a d-vector; trajectory shape ``(M+1, d)``.
integral   ``e = (level, integral)``; trajectory shape ``(M+1, 2)``.
maximum    ``e = (level, running max)`` with ``level <= max``.
path       ``e = PathState(s, x)`` where ``x`` (shape ``(M+1, d)``) is constant
           from the grid index of ``s`` onward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import GridPath, TimeGrid

KINDS = ("identity", "integral", "maximum", "path")


@dataclass(frozen=True)
class PathState:
    """Path-to-date state: current time ``s`` and the path stopped at ``s``."""

    s: float
    x: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)


@dataclass
class PathBatch:
    """Batched path-to-date state.  Entries of ``values`` past index ``k`` are stale."""

    k: int
    values: np.ndarray  # (N, M+1, d)
    times: np.ndarray

    @property
    def s(self) -> float:
        return float(self.times[self.k])

    def history(self) -> np.ndarray:
        return self.values[:, : self.k + 1]


class UpdatingFunction:
    name: str = ""
    state_dim: int = 0

    def __init__(self, dim: int = 1):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = dim

    # -- exact evaluator -------------------------------------------------
    def trajectories(self, E, X: np.ndarray, grid: TimeGrid):
        """Batched evaluator: ``E`` holds K states, ``X`` has shape ``(K, M+1, d)``."""
        raise NotImplementedError

    def trajectory(self, e, x: np.ndarray, grid: TimeGrid):
        e = self.validate_state(e)
        return self._first(self.trajectories(self._batch_of_one(e), np.asarray(x, float)[None], grid))

    def _batch_of_one(self, e):
        return np.asarray(e, dtype=float)[None]

    def _first(self, traj):
        return traj[0]

    def evaluate(self, e, x: GridPath) -> list:
        """List of states ``Phi_t(e, x)`` at every grid time of ``x``."""
        if not x.starts_at_zero:
            raise ValueError("driving path must start at zero")
        traj = self.trajectory(e, x.values, x.grid)
        return [self.state_at(traj, j) for j in range(len(x.grid))]

    def state_at(self, traj, j: int):
        return traj[j].copy()

    def distance(self, a, b) -> float:
        return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float)), initial=0.0))

    def validate_state(self, e):
        return np.asarray(e, dtype=float)

    # -- batched step rule -----------------------------------------------
    def initial(self, y0: np.ndarray, grid: TimeGrid):
        raise NotImplementedError

    def step(self, state, y_prev: np.ndarray, y_next: np.ndarray, dt: float):
        raise NotImplementedError

    def level(self, state) -> np.ndarray:
        raise NotImplementedError

    def take(self, state, idx):
        return state[idx]

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class Identity(UpdatingFunction):
    """``Phi_t(e, x) = e + x(t)``."""

    name = "identity"

    @property
    def state_dim(self):
        return self.dim

    def validate_state(self, e):
        e = np.atleast_1d(np.asarray(e, dtype=float))
        if e.shape != (self.dim,):
            raise ValueError(f"identity state must have shape ({self.dim},)")
        return e

    def trajectories(self, E, X, grid):
        return E[:, None, :] + X

    def initial(self, y0, grid):
        return np.array(y0, dtype=float)

    def step(self, state, y_prev, y_next, dt):
        return state + (y_next - y_prev)

    def level(self, state):
        return state


class Integral(UpdatingFunction):
    """Level plus running trapezoidal integral of the level."""

    name = "integral"
    state_dim = 2

    def __init__(self):
        super().__init__(1)

    def validate_state(self, e):
        e = np.asarray(e, dtype=float).reshape(-1)
        if e.shape != (2,):
            raise ValueError("integral state is a pair (level, integral)")
        return e

    def trajectories(self, E, X, grid):
        lev = E[:, :1] + X[:, :, 0]
        inc = 0.5 * (lev[:, :-1] + lev[:, 1:]) * grid.dt
        # sequential accumulation, same order as the batched step rule
        area = np.add.accumulate(np.concatenate([E[:, 1:], inc], axis=1), axis=1)
        return np.stack([lev, area], axis=-1)

    def initial(self, y0, grid):
        y0 = np.asarray(y0, dtype=float).reshape(-1, 1)
        return np.column_stack([y0[:, 0], np.zeros(y0.shape[0])])

    def step(self, state, y_prev, y_next, dt):
        lev_next = state[:, 0] + (y_next[:, 0] - y_prev[:, 0])
        area = state[:, 1] + 0.5 * (state[:, 0] + lev_next) * dt
        return np.column_stack([lev_next, area])

    def level(self, state):
        return state[:, :1]


class Maximum(UpdatingFunction):
    """Level plus running maximum, floored at the initial maximum."""

    name = "maximum"
    state_dim = 2

    def __init__(self):
        super().__init__(1)

    def validate_state(self, e):
        e = np.asarray(e, dtype=float).reshape(-1)
        if e.shape != (2,):
            raise ValueError("maximum state is a pair (level, max)")
        if e[0] > e[1]:
            raise ValueError(f"maximum state needs level <= max, got {tuple(e)}")
        return e

    def trajectories(self, E, X, grid):
        lev = E[:, :1] + X[:, :, 0]
        return np.stack([lev, np.maximum(np.maximum.accumulate(lev, axis=1), E[:, 1:])], axis=-1)

    def initial(self, y0, grid):
        y0 = np.asarray(y0, dtype=float).reshape(-1, 1)
        return np.column_stack([y0[:, 0], y0[:, 0]])

    def step(self, state, y_prev, y_next, dt):
        lev_next = state[:, 0] + (y_next[:, 0] - y_prev[:, 0])
        return np.column_stack([lev_next, np.maximum(state[:, 1], lev_next)])

    def level(self, state):
        return state[:, :1]


class PathToDate(UpdatingFunction):
    """Records the whole history: ``Phi_t(s, x; y) = (s + t, x with y appended at s, stopped at s + t)``.

    The stored history has grid resolution only.
    """

    name = "path"

    @property
    def state_dim(self):
        return None

    def _index(self, s, grid: TimeGrid) -> int:
        # may exceed the horizon: the appended part is then invisible on the grid
        if s <= grid.horizon:
            return grid.index(s)
        if not grid.is_uniform:
            raise ValueError("state time beyond the horizon needs a uniform grid")
        return int(round(s / grid.times[1]))

    def validate_state(self, e):
        if not isinstance(e, PathState):
            raise TypeError("path-to-date state must be a PathState")
        return e

    def _batch_of_one(self, e):
        return np.array([e.s]), e.x[None]

    def _first(self, traj):
        return traj[0][0], traj[1][0]

    def trajectory(self, e, x, grid):
        e = self.validate_state(e)
        M = grid.steps
        if e.x.shape != (M + 1, self.dim):
            raise ValueError("state path does not match the grid")
        tail = e.x[min(self._index(e.s, grid), M):]
        if not (tail == tail[0]).all():
            raise ValueError("state path must be constant after its recorded time")
        return super().trajectory(e, x, grid)

    def _indices(self, s, grid: TimeGrid) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if not grid.is_uniform:
            return np.array([self._index(v, grid) for v in s], dtype=int)
        k = np.rint(s / grid.times[1]).astype(int)
        if np.any(np.abs(k * grid.times[1] - s) > 1e-9 * np.maximum(1.0, np.abs(s))):
            raise ValueError("state time is not on the grid")
        return k

    def trajectories(self, E, X, grid):
        s, P = E
        # the stored part never moves; the appended part is the driver read up to j
        vals = _path_trajectories(np.asarray(P, dtype=float), np.asarray(X, dtype=float),
                                  self._indices(s, grid).astype(np.int64))
        return s[:, None] + grid.times[None, :], vals

    def state_at(self, traj, j):
        times, vals = traj
        return PathState(float(times[j]), vals[j].copy())

    def distance(self, a, b):
        if isinstance(a, PathState):
            return max(abs(a.s - b.s), float(np.max(np.abs(a.x - b.x))))
        (ta, va), (tb, vb) = a, b
        return max(float(np.max(np.abs(ta - tb), initial=0.0)), float(np.max(np.abs(va - vb), initial=0.0)))

    def initial(self, y0, grid):
        y0 = np.asarray(y0, dtype=float).reshape(-1, self.dim)
        vals = np.empty((y0.shape[0], len(grid), self.dim))
        vals[:, 0] = y0
        return PathBatch(0, vals, grid.times)

    def step(self, state, y_prev, y_next, dt):
        # writes in place into the shared buffer; earlier PathBatch views go stale
        k = state.k + 1
        state.values[:, k] = state.values[:, k - 1] + (y_next - y_prev)
        return PathBatch(k, state.values, state.times)

    def level(self, state):
        return state.values[:, state.k]

    def take(self, state, idx):
        return PathBatch(state.k, state.values[idx].copy(), state.times)


def _path_trajectories(P, X, i_s):
    """``out[k, j, m]``: stored path ``P[k]`` up to ``i_s[k]``, then the driver stopped at ``j``."""
    K, M1, d = P.shape
    i_s = np.minimum(i_s, M1 - 1)
    j = np.arange(M1)
    stop_idx = np.minimum(j[None, :], j[:, None])  # row j: indices of the driver stopped at j
    out = np.empty((K, M1, M1, d))
    for i in np.unique(i_s):
        rows = np.flatnonzero(i_s == i)
        contiguous = rows[-1] - rows[0] + 1 == len(rows)  # then write through a view
        if contiguous:
            rows = slice(rows[0], rows[-1] + 1)
        o = out[rows] if contiguous else np.empty((len(rows), M1, M1, d))
        Xr, Pr = X[rows], P[rows]
        o[:, :, : i + 1] = (Pr[:, : i + 1] + Xr[:, :1])[:, None]
        # offset c past the stored path reads the driver at min(c, j)
        D = Xr + Pr[:, i:i + 1]
        tail = M1 - 1 - i
        if len(Xr) < 16:
            o[:, :, i + 1:] = D[:, stop_idx[:, 1:tail + 1]]
        else:  # slices beat the gather on large groups
            for r in range(M1):
                n = min(r, tail)
                o[:, r, i + 1: i + 1 + n] = D[:, 1: n + 1]
                o[:, r, i + 1 + n:] = D[:, r: r + 1]
        if not contiguous:
            out[rows] = o
    return out


def make_identity(d: int = 1) -> Identity:
    return Identity(d)


def make_integral() -> Integral:
    return Integral()


def make_maximum() -> Maximum:
    return Maximum()


def make_path_to_date(d: int = 1) -> PathToDate:
    return PathToDate(d)


def make(kind: str, d: int = 1) -> UpdatingFunction:
    if kind == "identity":
        return make_identity(d)
    if kind == "path":
        return make_path_to_date(d)
    if d != 1:
        raise ValueError(f"{kind} updating function is one-dimensional")
    if kind == "integral":
        return make_integral()
    if kind == "maximum":
        return make_maximum()
    raise ValueError(f"unknown updating function {kind!r}; expected one of {KINDS}")


def initial_state(phi: UpdatingFunction, x0, grid: TimeGrid):
    """Canonical object-level initial state for a process started at ``x0``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if isinstance(phi, PathToDate):
        return PathState(0.0, np.broadcast_to(x0, (len(grid), phi.dim)).copy())
    if isinstance(phi, Integral):
        return np.array([x0[0], 0.0])
    if isinstance(phi, Maximum):
        return np.array([x0[0], x0[0]])
    return x0


# -- axiom harness ---------------------------------------------------------

@dataclass
class AxiomReport:
    initial: float  # max |Phi_0(e, x) - e|
    non_anticipative: float  # max change of Phi up to t when x is altered after t
    semigroup: float  # max violation of the shift identity
    trials: int

    def as_dict(self):
        return {"initial": self.initial, "non_anticipative": self.non_anticipative,
                "semigroup": self.semigroup, "trials": self.trials}


def random_driving_path(rng: np.random.Generator, grid: TimeGrid, d: int = 1, knot_every: int = 8) -> np.ndarray:
    """Piecewise-linear path from zero with integer knots every ``knot_every`` steps.

    With a dyadic ``knot_every`` the values are dyadic rationals, so sums and
    differences of them are exact in floating point.
    """
    M = grid.steps
    n_knots = M // knot_every + 2
    knots = np.concatenate([np.zeros((1, d)), np.cumsum(rng.integers(-3, 4, size=(n_knots - 1, d)), axis=0)])
    j = np.arange(M + 1)
    a, r = j // knot_every, (j % knot_every) / knot_every
    x = knots[a] + (knots[a + 1] - knots[a]) * r[:, None]
    return x


def _random_state(phi, rng, grid):
    if isinstance(phi, Identity):
        return rng.integers(-5, 6, size=phi.dim).astype(float)
    if isinstance(phi, Maximum):
        e1 = float(rng.integers(-5, 6))
        return np.array([e1, e1 + float(rng.integers(0, 4))])
    if isinstance(phi, Integral):
        return rng.integers(-5, 6, size=2).astype(float)
    if isinstance(phi, PathToDate):
        i_s = int(rng.integers(0, grid.steps + 1))
        x = random_driving_path(rng, grid, phi.dim) + rng.integers(-5, 6, size=phi.dim)
        x[i_s:] = x[i_s]
        return PathState(float(grid.times[i_s]), x)
    raise TypeError(f"no random state generator for {phi!r}")


def check_axioms(phi: UpdatingFunction, trials: int = 100, seed: int = 0,
                 grid: TimeGrid | None = None) -> AxiomReport:
    """Largest observed violation of each updating-function axiom.

    Random states and random piecewise-linear driving paths; every grid time
    is tested.  Violations are reported, never raised.
    """
    grid = grid or TimeGrid.uniform(1.0, 64)
    if not grid.is_uniform:
        raise ValueError("the axiom harness needs a uniform grid")
    rng = np.random.default_rng(seed)
    M = grid.steps
    j = np.arange(M + 1)
    stop_idx = np.minimum(j[None, :], j[:, None])  # row k: indices of stop(x, t_k)
    diff_idx = np.minimum(j[None, :] + j[:, None], M)  # row k: indices of x(t_k + .)
    prefix = j[None, :] <= j[:, None]  # row k keeps state times 0..k
    window = j[None, :] <= (M - j)[:, None]  # row k keeps offsets 0..M-k
    v_init = v_na = v_sg = 0.0
    work: dict = {}  # reused difference buffers
    for _ in range(trials):
        e = phi.validate_state(_random_state(phi, rng, grid))
        x = random_driving_path(rng, grid, phi.dim)
        other = random_driving_path(rng, grid, phi.dim)
        traj = phi.trajectories(_repeat(phi, e, 1), x[None], grid)
        v_init = max(v_init, phi.distance(phi.state_at(_first_row(phi, traj), 0), e))
        base = _first_row(phi, traj)
        # Phi up to t depends only on x up to t ...
        stopped = phi.trajectories(_repeat(phi, e, M + 1), x[stop_idx], grid)
        v_na = max(v_na, _gap(phi, _tile(phi, base, M + 1), stopped, prefix, work))
        # ... also when the future after a random time is replaced by another continuation
        k_alt = int(rng.integers(0, M + 1))
        alt = x.copy()
        alt[k_alt:] = x[k_alt] + (other[k_alt:] - other[k_alt])
        altered = phi.trajectories(_repeat(phi, e, 1), alt[None], grid)
        v_na = max(v_na, _gap(phi, _tile(phi, base, 1), altered, prefix[k_alt:k_alt + 1], work))
        # shift(Phi(e, x), t) == Phi(Phi_t(e, x), diff(x, t)) within the horizon
        restart = phi.trajectories(base, x[diff_idx] - x[:, None], grid)
        v_sg = max(v_sg, _gap(phi, _take_rows(phi, base, diff_idx), restart, window, work))
    return AxiomReport(v_init, v_na, v_sg, trials)


def _repeat(phi, e, n):
    if isinstance(phi, PathToDate):
        return np.full(n, e.s), np.broadcast_to(e.x, (n,) + e.x.shape)
    return np.broadcast_to(e, (n,) + e.shape)


def _row(phi, traj, k):
    if isinstance(phi, PathToDate):
        return traj[0][k], traj[1][k]
    return traj[k]


def _first_row(phi, traj):
    return _row(phi, traj, 0)


def _tile(phi, traj, n):
    if isinstance(phi, PathToDate):
        return np.broadcast_to(traj[0], (n,) + traj[0].shape), np.broadcast_to(traj[1], (n,) + traj[1].shape)
    return np.broadcast_to(traj, (n,) + traj.shape)


def _take_rows(phi, traj, idx):
    if isinstance(phi, PathToDate):
        return traj[0][idx], traj[1][idx]
    return traj[idx]


def _gap(phi, a, b, mask, work: dict | None = None):
    """max |a - b| over the (row, state-time) entries selected by ``mask``."""
    if isinstance(phi, PathToDate):
        va, vb = np.broadcast_arrays(a[1], b[1])
        # exact agreement is the expected case and needs no float temporaries
        if (np.equal(va, vb).all(axis=(2, 3))[mask].all()
                and np.equal(*np.broadcast_arrays(a[0], b[0]))[mask].all()):
            return 0.0
        buf = None if work is None else work.get(va.shape)
        if buf is None:
            buf = np.empty(va.shape)
            if work is not None:
                work[va.shape] = buf
        np.subtract(va, vb, out=buf)
        spread = np.maximum(buf.max(axis=(2, 3)), -buf.min(axis=(2, 3)))
        per_state = np.maximum(np.abs(a[0] - b[0]), spread)
    else:
        per_state = np.abs(a - b).max(axis=2)
    return float(per_state[mask].max(initial=0.0))
