"""Ito process generators with per-step coefficient records.

Every model is advanced by Euler-Maruyama,

    Y[k+1] = Y[k] + b[k] dt + sigma[k] dW[k],   dW[k] ~ N(0, dt I_r),

and the drift ``b`` and instantaneous covariance ``c = sigma sigma^T`` are
recorded at the left endpoint of each step.  A record is also kept at the
horizon so that estimation can use the final grid time.

Randomness comes from fixed-size blocks of paths, each with its own
``SeedSequence(seed, spawn_key=(stream, block))``; results therefore do not
depend on how many worker threads process the blocks.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .paths import TimeGrid

BLOCK_SIZE = 4096
STREAM_MODEL = 0
STREAM_MIMIC = 1


class ModelError(ValueError):
    """Invalid model parameters; ``field`` names the offending parameter."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, block)))


def block_slices(n: int, size: int = BLOCK_SIZE) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def run_blocks(fn, n: int, workers: int = 1):
    """Apply ``fn(block_index, slice)`` to every block; ordering of results is fixed."""
    blocks = list(enumerate(block_slices(n)))
    if workers <= 1 or len(blocks) == 1:
        return [fn(j, sl) for j, sl in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: fn(*a), blocks))


@dataclass
class Ensemble:
    """``N`` simulated paths with coefficient records.

    y : (N, M+1, d) levels
    b : (N, M+1, d) drift records, or None
    c : (N, M+1, d, d) covariance records, or None
    z0 : optional batched initial updating-function state (mimic ensembles)
    """

    grid: TimeGrid
    y: np.ndarray
    b: np.ndarray | None = None
    c: np.ndarray | None = None
    z0: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.y.ndim != 3 or self.y.shape[1] != len(self.grid):
            raise ValueError("levels must have shape (N, M+1, d)")
        if self.y.shape[0] < 1:
            raise ValueError("an ensemble needs at least one path")

    @property
    def n_paths(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.y.shape[2]

    @property
    def has_coeffs(self) -> bool:
        return self.b is not None and self.c is not None

    def states(self, phi, z0=None):
        """Yield ``(k, state)`` for every grid index, advancing ``phi`` along the paths."""
        state = z0 if z0 is not None else self.z0
        if state is None:
            state = phi.initial(self.y[:, 0], self.grid)
        dts = self.grid.dt
        yield 0, state
        for k in range(self.grid.steps):
            state = phi.step(state, self.y[:, k], self.y[:, k + 1], dts[k])
            yield k + 1, state

    def states_at(self, phi, indices, feature=None) -> dict:
        """Feature arrays (or copied states) at the requested grid indices."""
        want = set(int(i) for i in indices)
        out = {}
        for k, state in self.states(phi):
            if k in want:
                out[k] = feature(state) if feature is not None else np.array(phi.level(state))
            if len(out) == len(want):
                break
        return out

    # CSV schema: path, t, y1..yd, b1..bd, c11..cdd
    def to_csv(self, dest) -> None:
        N, M1, d = self.y.shape
        header = ["path", "t"] + [f"y{i + 1}" for i in range(d)]
        cols = [np.repeat(np.arange(N), M1).astype(float), np.tile(self.grid.times, N), self.y.reshape(N * M1, d)]
        if self.has_coeffs:
            header += [f"b{i + 1}" for i in range(d)] + [f"c{i + 1}{j + 1}" for i in range(d) for j in range(d)]
            cols += [self.b.reshape(N * M1, d), self.c.reshape(N * M1, d * d)]
        table = np.column_stack(cols)
        fmt = ["%d"] + ["%.17g"] * (table.shape[1] - 1)
        with open(dest, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            np.savetxt(fh, table, fmt=fmt, delimiter=",")

    @classmethod
    def from_csv(cls, source) -> "Ensemble":
        with open(source) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(source, delimiter=",", skiprows=1, ndmin=2)
        ids = data[:, 0].astype(int)
        N = ids.max() + 1
        M1 = data.shape[0] // N
        times = data[:M1, 1]
        d = sum(1 for h in header if h.startswith("y"))
        y = data[:, 2:2 + d].reshape(N, M1, d)
        b = c = None
        if len(header) > 2 + d:
            b = data[:, 2 + d:2 + 2 * d].reshape(N, M1, d)
            c = data[:, 2 + 2 * d:2 + 2 * d + d * d].reshape(N, M1, d, d)
        return cls(TimeGrid(times), y, b, c)


# -- models -----------------------------------------------------------------

class Model:
    """Coefficient generator contract used by :func:`simulate_ensemble`."""

    name = "model"
    dim = 1
    noise_dim = 1

    def validate(self):
        pass

    def check_grid(self, grid: TimeGrid):
        pass

    def initial_level(self) -> np.ndarray:
        return np.zeros(self.dim)

    def start(self, n: int, rng: np.random.Generator) -> dict:
        return {}

    def coefficients(self, k: int, t: float, y: np.ndarray, aux: dict):
        """Return ``(b, sigma)`` of shapes ``(n, d)`` and ``(n, d, r)``."""
        raise NotImplementedError

    def advance(self, k: int, t_next: float, dt: float, y: np.ndarray, aux: dict, dW: np.ndarray):
        pass

    @property
    def meta(self) -> dict:
        return {"model": self.name}


@dataclass
class ConstantCoeff(Model):
    b: object = 0.0
    sigma: object = 0.0
    x0: object = 0.0
    name = "constant"

    def __post_init__(self):
        self._b = np.atleast_1d(np.asarray(self.b, dtype=float))
        s = np.asarray(self.sigma, dtype=float)
        self._sigma = s.reshape(1, 1) if s.ndim == 0 else (s[:, None] if s.ndim == 1 else s)
        self.dim = self._b.size
        self.noise_dim = self._sigma.shape[1]
        self._x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (self.dim,)).copy()
        self.validate()

    def validate(self):
        if self._sigma.shape[0] != self.dim:
            raise ModelError("sigma", f"needs {self.dim} rows to match b")
        if not (np.all(np.isfinite(self._b)) and np.all(np.isfinite(self._sigma))):
            raise ModelError("b", "coefficients must be finite")

    def initial_level(self):
        return self._x0

    def coefficients(self, k, t, y, aux):
        n = y.shape[0]
        return np.broadcast_to(self._b, (n, self.dim)), np.broadcast_to(self._sigma, (n,) + self._sigma.shape)


@dataclass
class TwoPointDrift(Model):
    """Drift ``+mu`` or ``-mu`` (fair coin at time 0), unit volatility."""

    mu: float = 1.0
    x0: float = 0.0
    name = "two_point_drift"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not math.isfinite(self.mu):
            raise ModelError("mu", "must be finite")

    def initial_level(self):
        return np.array([float(self.x0)])

    def start(self, n, rng):
        return {"eps": 2.0 * rng.integers(0, 2, size=n) - 1.0}

    def coefficients(self, k, t, y, aux):
        n = y.shape[0]
        return (self.mu * aux["eps"])[:, None], np.ones((n, 1, 1))


@dataclass
class TwoPointVol(Model):
    """Volatility ``sigma1`` or ``sigma2`` (fair coin at time 0), no drift."""

    sigma1: float = 0.1
    sigma2: float = 0.3
    x0: float = 0.0
    name = "two_point_vol"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("sigma1", "sigma2"):
            if not getattr(self, name) > 0:
                raise ModelError(name, "must be positive")

    def initial_level(self):
        return np.array([float(self.x0)])

    def start(self, n, rng):
        return {"vol": np.where(rng.integers(0, 2, size=n) == 0, self.sigma1, self.sigma2)}

    def coefficients(self, k, t, y, aux):
        n = y.shape[0]
        return np.zeros((n, 1)), aux["vol"][:, None, None]


@dataclass
class Heston(Model):
    """Heston stochastic volatility, full-truncation Euler for the variance.

    With ``log_price`` the simulated level is ``log S`` (drift ``r - v/2``,
    variance ``v``); otherwise it is ``S`` itself (drift ``r S``, variance ``v S^2``).
    """

    s0: float = 100.0
    v0: float = 0.04
    kappa: float = 1.5
    theta: float = 0.04
    xi: float = 0.5
    rho: float = -0.7
    r: float = 0.0
    log_price: bool = True
    name = "heston"
    noise_dim = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("s0", "kappa", "theta"):
            if not getattr(self, name) > 0:
                raise ModelError(name, "must be positive")
        for name in ("v0", "xi"):
            if not getattr(self, name) >= 0:
                raise ModelError(name, "must be nonnegative")
        if not abs(self.rho) <= 1:
            raise ModelError("rho", "correlation must lie in [-1, 1]")
        if not math.isfinite(self.r):
            raise ModelError("r", "must be finite")

    def initial_level(self):
        return np.array([math.log(self.s0) if self.log_price else float(self.s0)])

    def start(self, n, rng):
        return {"v": np.full(n, float(self.v0))}

    def coefficients(self, k, t, y, aux):
        vp = np.maximum(aux["v"], 0.0)
        n = vp.size
        sig = np.zeros((n, 1, 2))
        if self.log_price:
            b = (self.r - 0.5 * vp)[:, None]
            sig[:, 0, 0] = np.sqrt(vp)
        else:
            b = (self.r * y[:, 0])[:, None]
            sig[:, 0, 0] = np.sqrt(vp) * y[:, 0]
        return b, sig

    def advance(self, k, t_next, dt, y, aux, dW):
        vp = np.maximum(aux["v"], 0.0)
        dv_noise = self.rho * dW[:, 0] + math.sqrt(1.0 - self.rho ** 2) * dW[:, 1]
        aux["v"] = aux["v"] + self.kappa * (self.theta - vp) * dt + self.xi * np.sqrt(vp) * dv_noise

    @property
    def meta(self):
        return {"model": self.name, "price_transform": "exp" if self.log_price else "none"}


@dataclass
class NonUniqueness(Model):
    """``X_t = int sigma dW`` with ``sigma_s = 1{s > 1} 1{W_1 > 0}``.

    On the grid, the step starting at ``t_k`` uses ``sigma = 1`` when
    ``t_k >= 1`` and ``W_1 > 0``.
    """

    switch_time: float = 1.0
    name = "nonuniqueness"

    def check_grid(self, grid):
        grid.index(self.switch_time)

    def start(self, n, rng):
        return {"w": np.zeros(n), "w1": None}

    def coefficients(self, k, t, y, aux):
        n = y.shape[0]
        on = aux["w1"] is not None and t >= self.switch_time - 1e-12
        vol = (aux["w1"] > 0).astype(float) if on else np.zeros(n)
        return np.zeros((n, 1)), vol[:, None, None]

    def advance(self, k, t_next, dt, y, aux, dW):
        aux["w"] = aux["w"] + dW[:, 0]
        if abs(t_next - self.switch_time) <= 1e-12:
            aux["w1"] = aux["w"].copy()


@dataclass
class Custom(Model):
    """User-supplied coefficients.

    ``coefficients(k, t, y, aux) -> (b, sigma)`` with shapes ``(n, d)`` and
    ``(n, d, r)``; optional ``start(n, rng) -> aux`` and
    ``advance(k, t_next, dt, y, aux, dW)`` maintain hidden state.
    """

    dim: int = 1
    noise_dim: int = 1
    coeff_fn: Callable = None
    start_fn: Callable = None
    advance_fn: Callable = None
    x0: object = 0.0
    name = "custom"

    def __post_init__(self):
        if self.coeff_fn is None:
            raise ModelError("coeff_fn", "custom models must supply coefficient records")

    def initial_level(self):
        return np.broadcast_to(np.asarray(self.x0, dtype=float), (self.dim,)).copy()

    def start(self, n, rng):
        return self.start_fn(n, rng) if self.start_fn else {}

    def coefficients(self, k, t, y, aux):
        return self.coeff_fn(k, t, y, aux)

    def advance(self, k, t_next, dt, y, aux, dW):
        if self.advance_fn:
            self.advance_fn(k, t_next, dt, y, aux, dW)


def _covariance(sig: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nkj->nik", sig, sig)


def simulate_ensemble(model: Model, grid: TimeGrid, n_paths: int, seed: int,
                      workers: int = 1, keep_coeffs: bool = True) -> Ensemble:
    """Euler-Maruyama ensemble of ``model`` on ``grid``; bitwise reproducible per seed."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    model.validate()
    model.check_grid(grid)
    d, r, M = model.dim, model.noise_dim, grid.steps
    times, dts = grid.times, grid.dt
    sq = np.sqrt(dts)
    y = np.empty((n_paths, M + 1, d))
    b_rec = np.empty((n_paths, M + 1, d)) if keep_coeffs else None
    c_rec = np.empty((n_paths, M + 1, d, d)) if keep_coeffs else None
    x0 = model.initial_level()

    def run(j, sl):
        rng = block_rng(seed, STREAM_MODEL, j)
        n = sl.stop - sl.start
        aux = model.start(n, rng)
        cur = np.broadcast_to(x0, (n, d)).copy()
        y[sl, 0] = cur
        for k in range(M + 1):
            b, sig = model.coefficients(k, times[k], cur, aux)
            if keep_coeffs:
                b_rec[sl, k] = b
                c_rec[sl, k] = _covariance(sig)
            if k == M:
                break
            dW = rng.standard_normal((n, r)) * sq[k]
            cur = cur + b * dts[k] + np.einsum("nij,nj->ni", sig, dW)
            y[sl, k + 1] = cur
            model.advance(k, times[k + 1], dts[k], cur, aux, dW)

    run_blocks(run, n_paths, workers)
    if keep_coeffs and not (np.all(np.isfinite(b_rec)) and np.all(np.isfinite(c_rec))):
        raise FloatingPointError("non-finite coefficient record")
    meta = dict(model.meta, seed=seed, n_paths=n_paths)
    return Ensemble(grid, y, b_rec, c_rec, meta=meta)


def nonuniqueness_mixture(grid: TimeGrid, n_paths: int, seed: int, switch_time: float = 1.0,
                          workers: int = 1) -> Ensemble:
    """The randomised mimicking solution: a fair coin picks ``X = 0`` or ``X_t = W_t - W_1`` for ``t > 1``."""
    k1 = grid.index(switch_time)
    M = grid.steps
    y = np.zeros((n_paths, M + 1, 1))
    b = np.zeros((n_paths, M + 1, 1))
    c = np.zeros((n_paths, M + 1, 1, 1))
    sq = np.sqrt(grid.dt)

    def run(j, sl):
        rng = block_rng(seed, STREAM_MODEL, j)
        n = sl.stop - sl.start
        moving = rng.integers(0, 2, size=n) == 1
        dW = rng.standard_normal((n, M)) * sq
        inc = np.where(moving[:, None] & (np.arange(M) >= k1)[None, :], dW, 0.0)
        y[sl, 1:, 0] = np.cumsum(inc, axis=1)
        c[sl, k1:, 0, 0] = moving[:, None]

    run_blocks(run, n_paths, workers)
    return Ensemble(grid, y, b, c, meta={"model": "nonuniqueness_mixture", "seed": seed, "n_paths": n_paths})


def analytic_projection(model: Model, t: float, y):
    """Closed-form ``(E[b_t | Y_t = y], E[c_t | Y_t = y])`` where one is known, else ``None``.

    Scalar models return arrays shaped like ``y``.
    """
    y = np.asarray(y, dtype=float)
    if isinstance(model, ConstantCoeff):
        return model._b.copy(), model._sigma @ model._sigma.T
    if isinstance(model, TwoPointDrift):
        if t <= 0:
            raise ValueError("mixture formulas need t > 0")
        return model.mu * np.tanh(model.mu * (y - model.x0)), np.ones_like(y)
    if isinstance(model, TwoPointVol):
        if t <= 0:
            raise ValueError("mixture formulas need t > 0")
        z = y - model.x0
        s1, s2 = model.sigma1, model.sigma2
        # log-densities relative to the first component avoid underflow in the tails
        l1 = -0.5 * z ** 2 / (s1 ** 2 * t) - math.log(s1)
        l2 = -0.5 * z ** 2 / (s2 ** 2 * t) - math.log(s2)
        w1 = 1.0 / (1.0 + np.exp(l2 - l1))
        return np.zeros_like(y), w1 * s1 ** 2 + (1.0 - w1) * s2 ** 2
    if isinstance(model, NonUniqueness):
        c = np.where((t > model.switch_time) & (y != 0.0), 1.0, 0.0)
        return np.zeros_like(y), c
    return None
