"""Distributional comparison of ensembles and Monte Carlo pricing."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .ito_models import Ensemble

KS_C01 = 1.628
KS2D_CAP = 20_000
PERMUTATIONS = 199


# -- one-dimensional distances ------------------------------------------------

def _sample(a) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("empty sample")
    return a


def ks_1d(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a, b = np.sort(_sample(a)), np.sort(_sample(b))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n: int, m: int, c: float = KS_C01) -> float:
    return c * math.sqrt((n + m) / (n * m))


def wasserstein_1d(a, b) -> float:
    """``integral |F_a - F_b|``, i.e. the mean gap of the quantile coupling."""
    a, b = np.sort(_sample(a)), np.sort(_sample(b))
    pts = np.sort(np.concatenate([a, b]))
    widths = np.diff(pts)
    fa = np.searchsorted(a, pts[:-1], side="right") / a.size
    fb = np.searchsorted(b, pts[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


# -- two-dimensional KS -------------------------------------------------------

@numba.njit(cache=True)
def _dominance(sx, sry, qx, qry, n_ranks):
    """For each query, number of samples with ``x <= qx`` and ``y <= qy`` (ranks precomputed)."""
    tree = np.zeros(n_ranks + 1, dtype=np.int64)
    out = np.empty(qx.size, dtype=np.int64)
    order = np.argsort(qx, kind="mergesort")
    j = 0
    for q in order:
        while j < sx.size and sx[j] <= qx[q]:
            i = sry[j]
            while i <= n_ranks:
                tree[i] += 1
                i += i & -i
            j += 1
        s = 0
        i = qry[q]
        while i > 0:
            s += tree[i]
            i -= i & -i
        out[q] = s
    return out


def _quadrant_fractions(s: np.ndarray, q: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Fractions of sample ``s`` in the four closed/open quadrants around each query."""
    order = np.argsort(s[:, 0], kind="mergesort")
    sx = s[order, 0]
    sry = np.searchsorted(ys, s[order, 1]) + 1
    qry = np.searchsorted(ys, q[:, 1]) + 1
    ll = _dominance(sx, sry, q[:, 0], qry, ys.size)
    xle = np.searchsorted(sx, q[:, 0], side="right")
    yle = np.searchsorted(np.sort(s[:, 1]), q[:, 1], side="right")
    n = s.shape[0]
    # x<=, y<= | x>, y<= | x<=, y> | x>, y>
    return np.stack([ll, yle - ll, xle - ll, n - xle - yle + ll], axis=1) / n


def ks_2d_stat(a: np.ndarray, b: np.ndarray) -> float:
    """Fasano-Franceschini / Peacock statistic: max quadrant-probability gap over all sample points."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    q = np.concatenate([a, b])
    ys = np.unique(q[:, 1])
    return float(np.max(np.abs(_quadrant_fractions(a, q, ys) - _quadrant_fractions(b, q, ys))))


@dataclass
class KS2DResult:
    stat: float
    p_value: float
    n: int
    m: int

    @property
    def passed(self) -> bool:
        return self.p_value > 0.01


def ks_2d(a, b, seed: int = 0, cap: int = KS2D_CAP, permutations: int = PERMUTATIONS) -> KS2DResult:
    """2-d KS with a seeded permutation baseline; samples above ``cap`` are subsampled."""
    rng = np.random.default_rng(seed)
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if a.shape[0] > cap:
        a = a[rng.choice(a.shape[0], cap, replace=False)]
    if b.shape[0] > cap:
        b = b[rng.choice(b.shape[0], cap, replace=False)]
    obs = ks_2d_stat(a, b)
    pooled = np.concatenate([a, b])
    n = a.shape[0]
    exceed = 0
    for _ in range(permutations):
        p = pooled[rng.permutation(pooled.shape[0])]
        if ks_2d_stat(p[:n], p[n:]) >= obs:
            exceed += 1
    return KS2DResult(obs, (1 + exceed) / (1 + permutations), a.shape[0], b.shape[0])


# -- pricing ------------------------------------------------------------------

PAYOFFS = ("european_call", "lookback_fixed", "asian_call")


@dataclass(frozen=True)
class Payoff:
    kind: str
    strike: float

    def __post_init__(self):
        if self.kind not in PAYOFFS:
            raise ValueError(f"unknown payoff {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Payoff":
        kind, _, k = text.strip().partition(":")
        return cls(kind.strip(), float(k))

    def __str__(self):
        return f"{self.kind}:{self.strike:g}"


def price_paths(ens: Ensemble) -> np.ndarray:
    """Price-level paths ``(N, M+1)``; log-price ensembles are exponentiated."""
    if ens.dim != 1:
        raise ValueError("pricing needs a one-dimensional ensemble")
    y = ens.y[:, :, 0]
    tr = ens.meta.get("price_transform", "none")
    if tr == "exp":
        return np.exp(y)
    if tr != "none":
        raise ValueError(f"unknown price transform {tr!r}")
    return y


def payoff_values(ens: Ensemble, payoff: Payoff, T: float | None = None) -> np.ndarray:
    s = price_paths(ens)
    k = ens.grid.steps if T is None else ens.grid.index(T)
    K = payoff.strike
    if payoff.kind == "european_call":
        return np.maximum(s[:, k] - K, 0.0)
    if payoff.kind == "lookback_fixed":
        return np.maximum(s[:, : k + 1].max(axis=1) - K, 0.0)
    t = ens.grid.times[: k + 1]
    area = np.zeros(s.shape[0])
    for j in range(k):  # trapezoid, same rule as the integral updating function
        area += 0.5 * (s[:, j] + s[:, j + 1]) * (t[j + 1] - t[j])
    return np.maximum(area / t[k] - K, 0.0)


def price(ens: Ensemble, payoff: Payoff, r: float = 0.0, T: float | None = None) -> tuple[float, float]:
    """Discounted mean payoff and its standard error ``std / sqrt(N)``."""
    T = ens.grid.horizon if T is None else T
    v = payoff_values(ens, payoff, T) * math.exp(-r * T)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def black_scholes_call(s0: float, k: float, t: float, sigma: float, r: float = 0.0, q: float = 0.0) -> float:
    """Black-Scholes call; ``q`` is a continuous yield (negative for extra drift)."""
    from scipy.stats import norm

    if sigma * math.sqrt(t) == 0:
        return max(s0 * math.exp(-q * t) - k * math.exp(-r * t), 0.0)
    d1 = (math.log(s0 / k) + (r - q + 0.5 * sigma ** 2) * t) / (sigma * math.sqrt(t))
    d2 = d1 - sigma * math.sqrt(t)
    return s0 * math.exp(-q * t) * norm.cdf(d1) - k * math.exp(-r * t) * norm.cdf(d2)


# -- comparison report --------------------------------------------------------

@dataclass
class CheckpointRow:
    t: float
    coordinate: int
    ks: float
    ks_critical: float
    wasserstein: float
    n: int
    m: int

    @property
    def passed(self) -> bool:
        return self.ks < self.ks_critical


@dataclass
class PairRow:
    t: float
    stat: float
    p_value: float
    n: int
    m: int

    @property
    def passed(self) -> bool:
        return self.p_value > 0.01


@dataclass
class PriceRow:
    payoff: str
    price_orig: float
    se_orig: float
    price_mimic: float
    se_mimic: float

    @property
    def delta(self) -> float:
        return abs(self.price_orig - self.price_mimic)

    @property
    def combined_se(self) -> float:
        return math.hypot(self.se_orig, self.se_mimic)

    @property
    def passed(self) -> bool:
        # exact agreement passes even when both standard errors vanish
        return self.delta < 3 * self.combined_se or self.delta == 0.0


@dataclass
class ComparisonReport:
    checkpoints: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    prices: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.checkpoints + self.pairs + self.prices)

    def to_dict(self) -> dict:
        def rows(rs):
            return [dict(asdict(r), passed=r.passed) for r in rs]

        price_rows = [dict(asdict(r), delta=r.delta, combined_se=r.combined_se, passed=r.passed)
                      for r in self.prices]
        return {"passed": self.passed, "checkpoints": rows(self.checkpoints),
                "pairs": rows(self.pairs), "prices": price_rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'t':>8} {'coord':>5} {'KS':>9} {'crit':>9} {'W1':>10} {'pass':>5}"]
        for r in self.checkpoints:
            lines.append(f"{r.t:8.4g} {r.coordinate:5d} {r.ks:9.5f} {r.ks_critical:9.5f} "
                         f"{r.wasserstein:10.5g} {'yes' if r.passed else 'NO':>5}")
        if self.pairs:
            lines.append("")
            lines.append(f"{'t':>8} {'KS2d':>9} {'p':>7} {'pass':>5}")
            for r in self.pairs:
                lines.append(f"{r.t:8.4g} {r.stat:9.5f} {r.p_value:7.3f} {'yes' if r.passed else 'NO':>5}")
        if self.prices:
            lines.append("")
            lines.append(f"{'payoff':<22} {'orig':>10} {'se':>8} {'mimic':>10} {'se':>8} {'|d|':>8} {'3SE':>8} {'pass':>5}")
            for r in self.prices:
                lines.append(f"{r.payoff:<22} {r.price_orig:10.4f} {r.se_orig:8.4f} {r.price_mimic:10.4f} "
                             f"{r.se_mimic:8.4f} {r.delta:8.4f} {3 * r.combined_se:8.4f} "
                             f"{'yes' if r.passed else 'NO':>5}")
        lines.append("")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _features(ens: Ensemble, idx, phi, feature):
    if phi is None:
        return {k: ens.y[:, k] for k in idx}
    return ens.states_at(phi, idx, feature)


def compare(orig: Ensemble, mimic: Ensemble, checkpoints, payoffs=(), r: float = 0.0,
            phi=None, feature=None, seed: int = 0) -> ComparisonReport:
    """KS / W1 per feature coordinate at each checkpoint, 2-d KS for pair features, and prices."""
    if orig.grid != mimic.grid:
        raise ValueError("surface/grid mismatch: ensembles live on different grids")
    idx = sorted({orig.grid.index(t) for t in checkpoints})
    fo, fm = _features(orig, idx, phi, feature), _features(mimic, idx, phi, feature)
    rep = ComparisonReport()
    for k in idx:
        a, b = np.asarray(fo[k]).reshape(orig.n_paths, -1), np.asarray(fm[k]).reshape(mimic.n_paths, -1)
        t = float(orig.grid.times[k])
        for j in range(a.shape[1]):
            rep.checkpoints.append(CheckpointRow(t, j, ks_1d(a[:, j], b[:, j]), ks_critical(len(a), len(b)),
                                                 wasserstein_1d(a[:, j], b[:, j]), len(a), len(b)))
        if a.shape[1] == 2:
            res = ks_2d(a, b, seed=seed + k)
            rep.pairs.append(PairRow(t, res.stat, res.p_value, res.n, res.m))
    for p in payoffs:
        p = Payoff.parse(p) if isinstance(p, str) else p
        po, so = price(orig, p, r)
        pm, sm = price(mimic, p, r)
        rep.prices.append(PriceRow(str(p), po, so, pm, sm))
    return rep


def ecdf_csv(a, b, dest) -> None:
    """Empirical CDF pair on the pooled sample points, for external plotting."""
    a, b = np.sort(_sample(a)), np.sort(_sample(b))
    pts = np.unique(np.concatenate([a, b]))
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    with open(dest, "w") as fh:
        fh.write("x,F_orig,F_mimic\n")
        for row in zip(pts, fa, fb):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


__all__ = ["ks_1d", "ks_2d", "ks_2d_stat", "ks_critical", "wasserstein_1d", "Payoff", "price",
           "black_scholes_call", "compare", "ComparisonReport", "ecdf_csv"]
