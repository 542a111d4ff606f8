"""Euler-Maruyama simulation of the mimicking SDE driven by a coefficient surface."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ito_models import (STREAM_MIMIC, Ensemble, Model, block_rng, run_blocks,
                         simulate_ensemble)
from .paths import TimeGrid
from .projection import (CoefficientSurface, EstimatorConfig, StateFeature,
                         estimate_surface, make_feature, psd_sqrt, sqrt_surface)
from .updating import UpdatingFunction


SCHEMES = ("gaussian", "mixture")


class MimicError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmpiricalInitial:
    """Draw initial levels with replacement from a reference sample."""

    y0: np.ndarray  # (N0, d)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        y0 = np.asarray(self.y0, dtype=float).reshape(len(self.y0), -1)
        return y0[rng.integers(0, y0.shape[0], size=n)]


@dataclass(frozen=True)
class PointInitial:
    x0: tuple

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.tile(np.asarray(self.x0, dtype=float).reshape(1, -1), (n, 1))


@dataclass
class MimicConfig:
    surface: CoefficientSurface
    phi: UpdatingFunction
    feature: StateFeature
    grid: TimeGrid
    n_paths: int
    seed: int
    initial: object  # EmpiricalInitial | PointInitial
    workers: int = 1
    keep_coeffs: bool = True
    scheme: str = "gaussian"  # or "mixture"
    donors: Ensemble | None = None  # coefficient source for the mixture scheme

    def validate(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "mixture":
            if self.donors is None or not self.donors.has_coeffs:
                raise MimicError("the mixture scheme needs a donor ensemble with coefficient records")
            if self.donors.grid != self.grid:
                raise MimicError("surface/grid mismatch: donor ensemble grid differs")
        if self.grid != self.surface.grid:
            raise MimicError("surface/grid mismatch")
        if self.feature.dim != self.surface.feature_dim:
            raise MimicError("surface/grid mismatch: feature dimension differs from surface")
        if self.feature.split != self.surface.slices[0].split:
            raise MimicError("surface/grid mismatch: feature and surface disagree on the diagonal split")
        if self.surface.slices[0].sigma is None:
            raise MimicError("surface has no volatility cells; run sqrt_surface first")


@dataclass
class _DonorTable:
    """Donor indices of one slice grouped by surface cell."""

    order: np.ndarray  # donor indices sorted by cell
    start: np.ndarray  # (cells,) offset of each cell's block in ``order``
    count: np.ndarray  # (cells,)


def _donor_tables(cfg: MimicConfig) -> list:
    tables = []
    for k, state in cfg.donors.states(cfg.phi):
        sl = cfg.surface.slices[k]
        cell, _, _ = sl.locate(cfg.feature(state))
        order = np.argsort(cell, kind="stable").astype(np.int64)
        count = np.bincount(cell, minlength=sl.n_cells)
        start = np.concatenate([[0], np.cumsum(count)[:-1]])
        # empty cells borrow the donors of their fallback cell
        fb = sl.fallback
        tables.append(_DonorTable(order, start[fb], count[fb]))
    return tables


def _sqrt_cov(c: np.ndarray) -> np.ndarray:
    if c.shape[-1] == 1:
        return np.sqrt(np.clip(c, 0.0, None))
    return psd_sqrt(c)


def simulate_mimic(cfg: MimicConfig) -> Ensemble:
    """Simulate ``dY = b(t, f(Z)) dt + sigma(t, f(Z)) dW`` with ``Z = Phi(Z_0, Y)``.

    Coefficients are read at the left grid time.

    ``gaussian`` scheme: Euler-Maruyama with the surface values.  Every path
    draws one uniform at time 0; it selects the leave/stay branch whenever the
    path sits on an atom cell (see :mod:`projection`).

    ``mixture`` scheme: each step copies the recorded ``(b, c)`` of a donor path
    drawn uniformly from the same surface cell, so the one-step increment law
    given the cell is the donors' Gaussian scale mixture rather than a single
    Gaussian with the averaged covariance.  Averaged over the donor draw the
    coefficients are still the surface values.  This is the discrete-time
    Markov mimic; it removes the order-sqrt(dt) bias that a single Gaussian
    leaves in running-maximum states.
    """
    cfg.validate()
    tables = _donor_tables(cfg) if cfg.scheme == "mixture" else None
    grid, surf, phi, feat = cfg.grid, cfg.surface, cfg.phi, cfg.feature
    M, d = grid.steps, surf.dim
    dts = grid.dt
    sq = np.sqrt(dts)
    n = cfg.n_paths
    y = np.empty((n, M + 1, d))
    b = np.empty((n, M + 1, d)) if cfg.keep_coeffs else None
    c = np.empty((n, M + 1, d, d)) if cfg.keep_coeffs else None
    outside = np.zeros(M + 1, dtype=np.int64)
    fallback = np.zeros(M + 1, dtype=np.int64)

    def run(j, sl):
        rng = block_rng(cfg.seed, STREAM_MIMIC, j)
        nb = sl.stop - sl.start
        yk = cfg.initial.draw(rng, nb).reshape(nb, d)
        u = rng.random(nb)
        state = phi.initial(yk, grid)
        y[sl, 0] = yk
        out_cnt = np.zeros(M + 1, dtype=np.int64)
        fb_cnt = np.zeros(M + 1, dtype=np.int64)
        for k in range(M + 1):
            f = feat(state)
            if tables is None:
                bk, ck, sk, out, fb = surf.slices[k].lookup(f, u)
            else:
                cell, _, out = surf.slices[k].locate(f)
                fb = surf.slices[k].fallback[cell] != cell
                tb = tables[k]
                pick = tb.order[tb.start[cell] + (rng.random(nb) * tb.count[cell]).astype(np.int64)]
                bk, ck = cfg.donors.b[pick, k], cfg.donors.c[pick, k]
                sk = _sqrt_cov(ck)
            out_cnt[k], fb_cnt[k] = out.sum(), fb.sum()
            if cfg.keep_coeffs:
                b[sl, k], c[sl, k] = bk, ck
            if k == M:
                break
            dw = rng.standard_normal((nb, d))
            y_next = yk + bk * dts[k] + np.einsum("nij,nj->ni", sk, dw) * sq[k]
            y[sl, k + 1] = y_next
            state = phi.step(state, yk, y_next, dts[k])
            yk = y_next
        return out_cnt, fb_cnt

    for out_cnt, fb_cnt in run_blocks(run, n, cfg.workers):
        outside += out_cnt
        fallback += fb_cnt
    if not np.all(np.isfinite(y)):
        raise MimicError("mimic produced non-finite values")
    meta = {"kind": "mimic", "scheme": cfg.scheme, "out_of_support_queries": int(outside.sum()),
            "fallback_queries": int(fallback.sum()), "phi": phi.name, "feature": feat.name}
    meta.update({k: v for k, v in surf.meta.items() if k == "price_transform"})
    return Ensemble(grid, y, b, c, meta=meta)


@dataclass
class PipelineResult:
    original: Ensemble
    surface: CoefficientSurface
    mimic: Ensemble
    manifest: dict = field(default_factory=dict)


def mimic_pipeline(model: Model | None, phi: UpdatingFunction, feature: StateFeature | None,
                   estimator: EstimatorConfig | None, grid: TimeGrid, n_paths: int, seed: int,
                   workers: int = 1, original: Ensemble | None = None,
                   keep_coeffs: bool = False, scheme: str = "gaussian") -> PipelineResult:
    """Simulate (or reuse) the original ensemble, project it, and simulate the mimic.

    The mimic's initial levels are drawn with replacement from the original's
    time-0 levels, using the mimic's own random stream.
    """
    if original is None:
        original = simulate_ensemble(model, grid, n_paths, seed, workers)
    feature = feature or make_feature(phi)
    surface = sqrt_surface(estimate_surface(original, phi, feature, estimator))
    if "price_transform" in original.meta:
        surface.meta["price_transform"] = original.meta["price_transform"]
    cfg = MimicConfig(surface, phi, feature, grid, n_paths, seed,
                      EmpiricalInitial(original.y[:, 0]), workers, keep_coeffs, scheme,
                      original if scheme == "mixture" else None)
    mimic = simulate_mimic(cfg)
    manifest = {"seed": seed, "scheme": scheme, "n_paths": n_paths, "steps": grid.steps,
                "fallback_cells": int(sum(surface.meta.get("fallback_cells", []))),
                "fallback_queries": mimic.meta["fallback_queries"],
                "out_of_support_queries": mimic.meta["out_of_support_queries"]}
    return PipelineResult(original, surface, mimic, manifest)
