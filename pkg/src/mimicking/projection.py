"""Estimate the projected coefficients ``E[b_t | Z_t]`` and ``E[c_t | Z_t]``.

For every grid time the conditioning feature is partitioned into an
equal-width lattice spanning the 0.5%-99.5% quantile range of the slice
(samples outside are clipped into the edge cells), plus one dedicated cell per
*atom*: a feature value carrying more than 1% of the slice mass.  Cell values
are either plain conditional means (histogram) or Nadaraya-Watson averages with
a Gaussian kernel evaluated at the lattice centres.

Features of a running maximum ``(level, max)`` also carry positive mass on
the diagonal ``level == max`` (paths sitting at their maximum, whose
coefficients differ sharply from paths just below it).  Such features declare
the ``diagonal`` split, and the lattice is then doubled: one copy for
on-diagonal samples and one for the rest.

Atom cells also split their samples by whether the path leaves the atom over
the next step.  The mimicking simulator uses that split together with a
per-path uniform drawn at time 0, which is how a randomised weak solution
(rather than the frozen one) is selected at an atom.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .ito_models import Ensemble
from .paths import TimeGrid
from .updating import Maximum, PathToDate, UpdatingFunction

# rows with positive mass on a line get their own copy of the lattice
SPLIT_RULES = {
    "diagonal": lambda f: f[:, 0] == f[:, 1],  # (level, max) at its maximum
    "zero_gap": lambda f: f[:, 1] == 0,  # (level, max - level) at its maximum
}

SURFACE_VERSION = 1
ATOM_MASS = 0.01
QUANTILES = (0.005, 0.995)


class SurfaceError(RuntimeError):
    pass


# -- features ---------------------------------------------------------------

@dataclass(frozen=True)
class StateFeature:
    """Map from a batch of updating-function states to an ``(N, dim)`` array."""

    name: str
    dim: int
    fn: Callable = field(compare=False)
    split: str | None = None  # key of SPLIT_RULES

    def __call__(self, state) -> np.ndarray:
        out = np.asarray(self.fn(state), dtype=float)
        return out.reshape(out.shape[0], self.dim)


def _path_level_max(state):
    h = state.history()
    return np.column_stack([h[:, -1, 0], h[:, :, 0].max(axis=1)])


def _level_drawdown(state):
    return np.column_stack([state[:, 0], state[:, 1] - state[:, 0]])


def _path_level_mean(state):
    h = state.history()
    return np.column_stack([h[:, -1, 0], h[:, :, 0].mean(axis=1)])


def make_feature(phi: UpdatingFunction, name: str = "state") -> StateFeature:
    """Shipped feature maps.

    ``state``      the whole state (identity, integral, maximum)
    ``level``      the current level only
    ``level_max``  level and running maximum of a path-to-date state
    ``level_mean`` level and running mean of a path-to-date state
    ``level_drawdown``  level and ``max - level`` of a maximum state
    """
    if name == "level":
        return StateFeature("level", phi.dim, phi.level)
    if isinstance(phi, PathToDate):
        if phi.dim != 1 and name != "level":
            raise ValueError("path-to-date summaries are one-dimensional")
        if name == "level_max":
            return StateFeature(name, 2, _path_level_max, "diagonal")
        if name == "level_mean":
            return StateFeature(name, 2, _path_level_mean)
        raise ValueError(f"path-to-date states need a declared feature map, not {name!r}")
    if name == "level_drawdown":
        if not isinstance(phi, Maximum):
            raise ValueError("level_drawdown needs the maximum updating function")
        return StateFeature(name, 2, _level_drawdown, "zero_gap")
    if name == "state":
        return StateFeature("state", phi.state_dim, lambda s: s, "diagonal" if isinstance(phi, Maximum) else None)
    raise ValueError(f"unknown feature {name!r}")


# -- linear algebra -----------------------------------------------------------

def psd_repair(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clip negative eigenvalues at zero; returns ``(repaired, changed_mask)``.

    Matrices that are already PSD are returned untouched (bit for bit).
    """
    c = 0.5 * (c + np.swapaxes(c, -1, -2))
    w, v = np.linalg.eigh(c)
    bad = w.min(axis=-1) < 0
    if bad.any():
        wb = np.clip(w[bad], 0.0, None)
        c = c.copy()
        c[bad] = np.einsum("nij,nj,nkj->nik", v[bad], wb, v[bad])
    return c, bad


def psd_sqrt(c: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (batched over leading axes)."""
    c = np.asarray(c, dtype=float)
    w, v = np.linalg.eigh(0.5 * (c + np.swapaxes(c, -1, -2)))
    if np.any(w < -1e-10 * np.maximum(1.0, np.abs(w).max(axis=-1, keepdims=True))):
        raise SurfaceError("covariance cell is not positive semidefinite")
    s = np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(np.clip(w, 0.0, None)), v)
    return 0.5 * (s + np.swapaxes(s, -1, -2))


# -- surface ------------------------------------------------------------------

@dataclass
class EstimatorConfig:
    kind: str = "histogram"  # or "nadaraya_watson"
    bins: int = 64
    bandwidth: object = "auto"  # float, per-dimension sequence, or "auto" (Silverman)
    edges: str = "uniform"  # or "quantile": equal-mass bins per dimension

    def __post_init__(self):
        if self.kind not in ("histogram", "nadaraya_watson"):
            raise ValueError(f"unknown estimator {self.kind!r}")
        if self.edges not in ("uniform", "quantile"):
            raise ValueError(f"unknown edge rule {self.edges!r}")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")


@dataclass
class SurfaceSlice:
    t: float
    edges: list | None  # per feature dimension, bins+1 edges; None if only atoms
    atoms: np.ndarray  # (A, f)
    b: np.ndarray  # (cells, d)
    c: np.ndarray  # (cells, d, d)
    count: np.ndarray  # (cells,) sample count, or kernel weight for NW lattice cells
    fallback: np.ndarray  # (cells,) cell whose values are served
    leave_prob: np.ndarray  # (A,)
    b_leave: np.ndarray
    c_leave: np.ndarray
    b_stay: np.ndarray
    c_stay: np.ndarray
    sigma: np.ndarray | None = None
    sigma_leave: np.ndarray | None = None
    sigma_stay: np.ndarray | None = None
    bandwidth: list | None = None
    repaired: int = 0
    split: str | None = None

    @property
    def n_bins(self) -> int:
        return 0 if self.edges is None else int(np.prod([len(e) - 1 for e in self.edges]))

    @property
    def n_strata(self) -> int:
        return 1 if self.split is None else 2

    @property
    def n_regular(self) -> int:
        return self.n_bins * self.n_strata

    def stratum(self, f: np.ndarray) -> np.ndarray:
        if self.split is None:
            return np.zeros(f.shape[0], dtype=np.int64)
        return SPLIT_RULES[self.split](f).astype(np.int64)

    def cell_strata(self) -> np.ndarray:
        """Stratum of every cell; atoms take the stratum of their own value."""
        reg = np.repeat(np.arange(self.n_strata), self.n_bins)
        return np.concatenate([reg, self.stratum(self.atoms)]) if len(self.atoms) else reg

    @property
    def n_cells(self) -> int:
        return self.n_regular + len(self.atoms)

    def centers(self) -> np.ndarray:
        parts = []
        if self.edges is not None:
            mids = [0.5 * (e[:-1] + e[1:]) for e in self.edges]
            mesh = np.meshgrid(*mids, indexing="ij")
            parts.append(np.tile(np.column_stack([m.ravel() for m in mesh]), (self.n_strata, 1)))
        if len(self.atoms):
            parts.append(self.atoms)
        return np.concatenate(parts, axis=0)

    def locate(self, f: np.ndarray):
        """Cell index for each feature row, plus out-of-support and atom flags."""
        n = f.shape[0]
        cell = np.zeros(n, dtype=np.int64)
        outside = np.zeros(n, dtype=bool)
        if self.edges is not None:
            shape = [len(e) - 1 for e in self.edges]
            idx = []
            for j, e in enumerate(self.edges):
                i = np.searchsorted(e, f[:, j], side="right") - 1
                outside |= (f[:, j] < e[0]) | (f[:, j] > e[-1])
                idx.append(np.clip(i, 0, shape[j] - 1))
            cell = np.ravel_multi_index(idx, shape) + self.n_bins * self.stratum(f)
        else:
            outside[:] = True
        atom = np.full(n, -1, dtype=np.int64)
        for a, val in enumerate(self.atoms):
            hit = np.all(f == val, axis=1)
            atom[hit] = a
        is_atom = atom >= 0
        cell = np.where(is_atom, self.n_regular + atom, cell)
        outside &= ~is_atom
        return cell, atom, outside

    def lookup(self, f: np.ndarray, u: np.ndarray | None = None):
        """Values served at feature rows ``f``.

        ``u`` holds per-path uniforms: a path sitting on an atom uses the
        leaving-branch values when ``u < leave_prob``, the staying-branch values
        otherwise.  Without ``u`` atoms serve their plain conditional means.
        """
        cell, atom, outside = self.locate(f)
        served = self.fallback[cell]
        used_fallback = served != cell
        b, c = self.b[served], self.c[served]
        sig = self.sigma[served] if self.sigma is not None else None
        if u is not None and len(self.atoms):
            on = atom >= 0
            if on.any():
                a = atom[on]
                leave = u[on] < self.leave_prob[a]
                b, c = b.copy(), c.copy()
                b[on] = np.where(leave[:, None], self.b_leave[a], self.b_stay[a])
                c[on] = np.where(leave[:, None, None], self.c_leave[a], self.c_stay[a])
                if sig is not None:
                    sig = sig.copy()
                    sig[on] = np.where(leave[:, None, None], self.sigma_leave[a], self.sigma_stay[a])
        return b, c, sig, outside, used_fallback


@dataclass
class CoefficientSurface:
    grid: TimeGrid
    slices: list
    estimator: EstimatorConfig
    feature_name: str = "state"
    phi_name: str = "identity"
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.slices[0].b.shape[1]

    @property
    def feature_dim(self) -> int:
        s = self.slices[0]
        return len(s.edges) if s.edges is not None else s.atoms.shape[1]

    def slice_at(self, t: float) -> SurfaceSlice:
        return self.slices[self.grid.nearest_index(t)]

    # -- serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "version": SURFACE_VERSION,
            "grid": arr(self.grid.times),
            "estimator": {"kind": self.estimator.kind, "bins": self.estimator.bins, "edges": self.estimator.edges,
                          "bandwidth": self.estimator.bandwidth if isinstance(self.estimator.bandwidth, (str, float, int))
                          else arr(self.estimator.bandwidth)},
            "feature": self.feature_name,
            "phi": self.phi_name,
            "meta": self.meta,
            "slices": [
                {"t": s.t, "edges": None if s.edges is None else [arr(e) for e in s.edges],
                 "atoms": arr(s.atoms), "b": arr(s.b), "c": arr(s.c), "sigma": arr(s.sigma),
                 "count": arr(s.count), "fallback": arr(s.fallback),
                 "leave_prob": arr(s.leave_prob), "b_leave": arr(s.b_leave), "c_leave": arr(s.c_leave),
                 "b_stay": arr(s.b_stay), "c_stay": arr(s.c_stay),
                 "sigma_leave": arr(s.sigma_leave), "sigma_stay": arr(s.sigma_stay),
                 "bandwidth": s.bandwidth, "repaired": s.repaired, "split": s.split}
                for s in self.slices
            ],
        }

    def to_json(self, dest=None) -> str:
        text = json.dumps(self.to_dict(), separators=(",", ":"))
        if dest is not None:
            with open(dest, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "CoefficientSurface":
        if doc.get("version") != SURFACE_VERSION:
            raise SurfaceError(f"unsupported surface version {doc.get('version')!r}")

        def arr(a, dtype=float):
            return None if a is None else np.asarray(a, dtype=dtype)

        slices = []
        for s in doc["slices"]:
            fd = len(s["edges"]) if s["edges"] is not None else None
            atoms = np.asarray(s["atoms"], dtype=float)
            if atoms.size == 0:
                atoms = atoms.reshape(0, fd or 1)
            b = arr(s["b"])
            d = b.shape[1]

            def mat(key, shape_tail):
                a = arr(s[key])
                return None if a is None else a.reshape((-1,) + shape_tail)

            slices.append(SurfaceSlice(
                t=s["t"], edges=None if s["edges"] is None else [arr(e) for e in s["edges"]],
                atoms=atoms, b=b, c=mat("c", (d, d)), count=arr(s["count"]),
                fallback=arr(s["fallback"], np.int64), leave_prob=arr(s["leave_prob"]),
                b_leave=mat("b_leave", (d,)), c_leave=mat("c_leave", (d, d)),
                b_stay=mat("b_stay", (d,)), c_stay=mat("c_stay", (d, d)),
                sigma=mat("sigma", (d, d)), sigma_leave=mat("sigma_leave", (d, d)),
                sigma_stay=mat("sigma_stay", (d, d)), bandwidth=s.get("bandwidth"),
                repaired=s.get("repaired", 0), split=s.get("split")))
        est = doc["estimator"]
        return cls(TimeGrid(doc["grid"]), slices, EstimatorConfig(est["kind"], est["bins"], est["bandwidth"],
                                                                 est.get("edges", "uniform")),
                   doc.get("feature", "state"), doc.get("phi", "identity"), doc.get("meta", {}))

    @classmethod
    def from_json(cls, source) -> "CoefficientSurface":
        with open(source) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, dest) -> None:
        d = self.dim
        rows = []
        for s in self.slices:
            centers = s.centers()
            sig = s.sigma if s.sigma is not None else np.full_like(s.c, np.nan)
            n_reg = s.n_regular
            strata = s.cell_strata()
            for i in range(s.n_cells):
                rows.append([s.t, i, int(i >= n_reg), strata[i], *centers[i], s.count[i], *s.b[i], *s.c[i].ravel(),
                             *sig[i].ravel()])
        fd = self.feature_dim
        header = (["t", "cell", "atom", "stratum"] + [f"z{j + 1}" for j in range(fd)] + ["count"]
                  + [f"b{i + 1}" for i in range(d)] + [f"c{i + 1}{j + 1}" for i in range(d) for j in range(d)]
                  + [f"sigma{i + 1}{j + 1}" for i in range(d) for j in range(d)])
        with open(dest, "w") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")


@dataclass
class QueryResult:
    b: np.ndarray
    c: np.ndarray
    sigma: np.ndarray | None
    out_of_support: bool
    fallback: bool


def query(surface: CoefficientSurface, t: float, z) -> QueryResult:
    """Nearest time slice, then the cell containing ``z`` (nearest cell if outside)."""
    if not (-1e-12 <= t <= surface.grid.horizon + 1e-12):
        raise ValueError("query time outside the surface horizon")
    s = surface.slice_at(t)
    f = np.atleast_1d(np.asarray(z, dtype=float)).reshape(1, -1)
    b, c, sig, outside, fb = s.lookup(f)
    return QueryResult(b[0], c[0], None if sig is None else sig[0], bool(outside[0]), bool(fb[0]))


# -- estimation ---------------------------------------------------------------

def _atoms(f: np.ndarray, threshold: float) -> np.ndarray:
    # an atom row repeats its first coordinate too, so screen on that column first
    vals, counts = np.unique(f[:, 0], return_counts=True)
    heavy = vals[counts > threshold]
    if heavy.size == 0 or f.shape[1] == 1:
        return heavy.reshape(-1, f.shape[1])
    sub = f[np.isin(f[:, 0], heavy)]
    vals, counts = np.unique(sub, axis=0, return_counts=True)
    return vals[counts > threshold]


def _edges(f: np.ndarray, bins: int, rule: str = "uniform") -> list:
    lo, hi = np.quantile(f, QUANTILES, axis=0)
    out = []
    for j, (a, b) in enumerate(zip(np.atleast_1d(lo), np.atleast_1d(hi))):
        if not b > a:
            w = 0.5 * max(1.0, abs(a)) * 1e-6
            out.append(np.linspace(a - w, b + w, bins + 1))
        elif rule == "quantile":
            # repeated values collapse their edges, so a column may end with fewer bins
            out.append(np.unique(np.quantile(f[:, j], np.linspace(*QUANTILES, bins + 1))))
        else:
            out.append(np.linspace(a, b, bins + 1))
    return out


def silverman_bandwidth(f: np.ndarray) -> np.ndarray:
    n, k = f.shape
    sd = f.std(axis=0, ddof=1) if n > 1 else np.ones(k)
    if k == 1:
        q75, q25 = np.percentile(f[:, 0], [75, 25])
        spread = min(sd[0], (q75 - q25) / 1.34) if q75 > q25 else sd[0]
        h = np.array([0.9 * spread * n ** (-0.2)])
    else:
        h = sd * (4.0 / ((k + 2) * n)) ** (1.0 / (k + 4))
    return np.where(h > 0, h, 1e-6)


def _nadaraya_watson(f, B, C, centers, h, chunk=2 ** 22):
    """Gaussian-kernel weighted means of ``B``/``C`` at ``centers``."""
    n, d = B.shape
    m = centers.shape[0]
    wsum = np.zeros(m)
    bsum = np.zeros((m, d))
    csum = np.zeros((m, d * d))
    Cf = C.reshape(n, d * d)
    step = max(1, chunk // max(m, 1))
    for i in range(0, n, step):
        z = (f[i:i + step, None, :] - centers[None, :, :]) / h
        w = np.exp(-0.5 * np.sum(z * z, axis=2))  # (chunk, m)
        wsum += w.sum(axis=0)
        bsum += w.T @ B[i:i + step]
        csum += w.T @ Cf[i:i + step]
    with np.errstate(invalid="ignore", divide="ignore"):
        return wsum, bsum / wsum[:, None], (csum / wsum[:, None]).reshape(m, d, d)


def _nearest_nonempty(centers: np.ndarray, nonempty: np.ndarray, k: int = 8) -> np.ndarray:
    """Index of the nearest nonempty cell for every cell; ties go to the smaller index."""
    fallback = np.arange(len(centers))
    good = np.flatnonzero(nonempty)
    bad = np.flatnonzero(~nonempty)
    if good.size == 0:
        raise SurfaceError("every cell of the slice is empty")
    if bad.size == 0:
        return fallback
    gc = centers[good]
    k = min(k, good.size)
    dist, idx = cKDTree(gc).query(centers[bad], k=k)
    dist, idx = dist.reshape(bad.size, k), idx.reshape(bad.size, k)
    tied = dist == dist[:, :1]
    # smallest cell index among the equally near candidates
    cand = np.where(tied, good[idx], np.iinfo(np.int64).max)
    fallback[bad] = cand.min(axis=1)
    # all k candidates tied: more may exist beyond k, settle those rows exactly
    for r in np.flatnonzero(tied[:, -1] & (k < good.size)):
        d2 = ((gc - centers[bad[r]]) ** 2).sum(axis=1)
        fallback[bad[r]] = good[np.flatnonzero(d2 == d2.min())[0]]
    return fallback


def _slice_estimate(t, F, B, C, F_next, est: EstimatorConfig, split: str | None = None) -> SurfaceSlice:
    n, fd = F.shape
    d = B.shape[1]
    atoms = _atoms(F, ATOM_MASS * n)
    atom_id = np.full(n, -1, dtype=np.int64)
    for a, val in enumerate(atoms):
        atom_id[np.all(F == val, axis=1)] = a
    regular = atom_id < 0
    edges = _edges(F[regular], est.bins, est.edges) if regular.any() else None
    proto = SurfaceSlice(t, edges, atoms.reshape(len(atoms), fd), np.zeros((0, d)), np.zeros((0, d, d)),
                         np.zeros(0), np.zeros(0, np.int64), np.zeros(0), *(np.zeros(0),) * 4, split=split)
    n_reg = proto.n_regular
    n_cells = n_reg + len(atoms)
    cell, _, _ = proto.locate(F)

    count = np.bincount(cell, minlength=n_cells).astype(float)
    # sums of deviations from one reference record, so constant records give exact means
    b0, c0 = B[0].copy(), C[0].reshape(-1).copy()
    Cf = C.reshape(n, d * d)
    bsum = np.stack([np.bincount(cell, weights=B[:, i] - b0[i], minlength=n_cells) for i in range(d)], axis=1)
    csum = np.stack([np.bincount(cell, weights=Cf[:, i] - c0[i], minlength=n_cells) for i in range(d * d)], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        b = b0 + bsum / count[:, None]
        c = (c0 + csum / count[:, None]).reshape(n_cells, d, d)
    nonempty = count > 0
    bandwidth = None

    if est.kind == "nadaraya_watson" and n_reg:
        Fr = F[regular]
        if est.bandwidth == "auto":
            h = silverman_bandwidth(Fr)
        else:
            h = np.broadcast_to(np.asarray(est.bandwidth, dtype=float), (fd,)).copy()
        bandwidth = h.tolist()
        centers = proto.centers()
        st = proto.stratum(Fr)
        Br, Cr = B[regular], C[regular]
        nb = proto.n_bins
        for k in range(proto.n_strata):
            # kernel averages never mix strata
            sl = slice(k * nb, (k + 1) * nb)
            on = st == k
            if not on.any():
                count[sl], nonempty[sl] = 0.0, False
                continue
            w, bn, cn = _nadaraya_watson(Fr[on], Br[on], Cr[on], centers[sl], h)
            count[sl], b[sl], c[sl] = w, bn, cn
            nonempty[sl] = w > 0

    # leave/stay split of atom samples
    A = len(atoms)
    leave_prob = np.zeros(A)
    b_leave, c_leave = np.zeros((A, d)), np.zeros((A, d, d))
    b_stay, c_stay = np.zeros((A, d)), np.zeros((A, d, d))
    for a in range(A):
        on = atom_id == a
        plain_b, plain_c = b[n_reg + a], c[n_reg + a]
        if F_next is None:
            leaving = np.zeros(on.sum(), dtype=bool)
        else:
            leaving = np.any(F_next[on] != atoms[a], axis=1)
        leave_prob[a] = leaving.mean()
        Bo, Co = B[on], C[on]
        b_leave[a], c_leave[a] = (Bo[leaving].mean(0), Co[leaving].mean(0)) if leaving.any() else (plain_b, plain_c)
        b_stay[a], c_stay[a] = (Bo[~leaving].mean(0), Co[~leaving].mean(0)) if (~leaving).any() else (plain_b, plain_c)

    if nonempty.all():
        fallback = np.arange(n_cells)
    else:
        pts = proto.centers()
        if split is not None:
            # a far-away extra coordinate keeps fallbacks inside their own stratum when possible
            far = 1e3 * (1.0 + float(np.ptp(pts)))
            pts = np.column_stack([pts, far * proto.cell_strata()])
        fallback = _nearest_nonempty(pts, nonempty)
    filled = fallback != np.arange(n_cells)
    b[filled], c[filled], count[filled] = 0.0, 0.0, 0.0
    c, bad = psd_repair(c)
    c_leave, _ = psd_repair(c_leave) if A else (c_leave, None)
    c_stay, _ = psd_repair(c_stay) if A else (c_stay, None)
    return SurfaceSlice(t, edges, proto.atoms, b, c, count, fallback, leave_prob,
                        b_leave, c_leave, b_stay, c_stay, bandwidth=bandwidth, repaired=int(bad.sum()), split=split)


def estimate_surface(ens: Ensemble, phi: UpdatingFunction, feature: StateFeature | None = None,
                     estimator: EstimatorConfig | None = None) -> CoefficientSurface:
    """Per-grid-time conditional means of the drift and covariance records given the feature."""
    if not ens.has_coeffs:
        raise SurfaceError("ensemble carries no coefficient records")
    feature = feature or make_feature(phi)
    est = estimator or EstimatorConfig()
    slices = []
    M = ens.grid.steps
    states = ens.states(phi)
    k, state = next(states)
    F = feature(state)
    for k in range(M + 1):
        if not np.all(np.isfinite(F)):
            raise SurfaceError(f"non-finite feature values at t={ens.grid.times[k]}")
        if k < M:
            _, state = next(states)
            F_next = feature(state)
        else:
            F_next = None
        slices.append(_slice_estimate(float(ens.grid.times[k]), F, ens.b[:, k], ens.c[:, k], F_next, est,
                                      feature.split))
        F = F_next
    meta = {"fallback_cells": [int(np.sum(s.fallback != np.arange(s.n_cells))) for s in slices],
            "atoms": [int(len(s.atoms)) for s in slices], "n_paths": ens.n_paths}
    return CoefficientSurface(ens.grid, slices, est, feature.name, phi.name, meta)


def sqrt_surface(surface: CoefficientSurface) -> CoefficientSurface:
    """Fill the volatility cells with the symmetric PSD square root of the covariance cells."""
    out = []
    for s in surface.slices:
        out.append(replace(s, sigma=psd_sqrt(s.c),
                           sigma_leave=psd_sqrt(s.c_leave) if len(s.atoms) else np.zeros_like(s.c_leave),
                           sigma_stay=psd_sqrt(s.c_stay) if len(s.atoms) else np.zeros_like(s.c_stay)))
    return replace(surface, slices=out)
