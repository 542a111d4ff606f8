"""Exact discrete-time mimicking chains on finite increment alphabets.

A law is a finite table ``(x0, e1, ..., en) -> weight`` over initial levels and
increment sequences.  Weights are :class:`fractions.Fraction` in exact mode or
floats.  Kernels are the exact conditional laws of the next increment given a
conditioning state computed from the history, and the mimic chain draws each
increment from the kernel row of its own current state.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction

CONDITIONINGS = ("level", "level_and_max", "level_and_sum")
FLOAT_TOL = 1e-14


class DiscreteError(ValueError):
    pass


def _state(kind: str, level, extra):
    if kind == "level":
        return level
    return (level, extra)


def _advance(kind: str, level, extra, inc):
    nxt = level + inc
    if kind == "level_and_max":
        return nxt, max(extra, nxt)
    if kind == "level_and_sum":
        return nxt, extra + nxt
    return nxt, None


def _start(kind: str, x0):
    if kind == "level_and_max":
        return x0, x0
    if kind == "level_and_sum":
        return x0, x0
    return x0, None


def _check_kind(kind: str):
    if kind not in CONDITIONINGS:
        raise DiscreteError(f"unknown conditioning {kind!r}")


@dataclass(frozen=True)
class FiniteProcessLaw:
    """Weights over ``(x0, e1, ..., en)``; zero-weight entries are dropped."""

    weights: dict

    def __post_init__(self):
        w = {tuple(k): v for k, v in self.weights.items() if v != 0}
        if not w:
            raise DiscreteError("a law needs at least one sequence of positive weight")
        lengths = {len(k) for k in w}
        if len(lengths) != 1:
            raise DiscreteError("all sequences must share one horizon")
        if any(v < 0 for v in w.values()):
            raise DiscreteError("weights must be nonnegative")
        total = sum(w.values())
        if self.exact:
            if total != 1:
                raise DiscreteError(f"weights sum to {total}, not 1")
        elif abs(total - 1) > FLOAT_TOL * max(1, len(w)):
            raise DiscreteError(f"weights sum to {total!r}, not 1")
        object.__setattr__(self, "weights", w)

    @property
    def exact(self) -> bool:
        return all(isinstance(v, (Fraction, int)) for v in self.weights.values())

    @property
    def horizon(self) -> int:
        return len(next(iter(self.weights))) - 1

    def paths(self):
        """Yield ``(levels, weight)`` with ``levels = (X_0, ..., X_n)``."""
        for seq, w in self.weights.items():
            lv = [seq[0]]
            for e in seq[1:]:
                lv.append(lv[-1] + e)
            yield tuple(lv), w

    def initial_law(self) -> dict:
        out = defaultdict(int)
        for seq, w in self.weights.items():
            out[seq[0]] += w
        return dict(out)

    def to_json(self) -> str:
        rows = [{"sequence": [str(x) for x in k], "weight": str(v)} for k, v in sorted(self.weights.items())]
        return json.dumps({"horizon": self.horizon, "exact": self.exact, "weights": rows}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FiniteProcessLaw":
        doc = json.loads(text)
        conv = Fraction if doc.get("exact", True) else float
        return cls({tuple(conv(x) for x in r["sequence"]): conv(r["weight"]) for r in doc["weights"]})


@dataclass(frozen=True)
class DiscreteKernel:
    """Row-stochastic map ``state -> {increment: probability}`` for one step."""

    step: int
    conditioning: str
    rows: dict

    def row(self, state) -> dict:
        try:
            return self.rows[state]
        except KeyError:
            raise DiscreteError(f"state {state!r} is not reachable at step {self.step}") from None

    def to_dict(self) -> dict:
        return {"step": self.step, "conditioning": self.conditioning,
                "rows": [{"state": str(s), "law": {str(e): str(p) for e, p in sorted(r.items())}}
                         for s, r in sorted(self.rows.items())]}


def _histories(law: FiniteProcessLaw, kind: str):
    """For each sequence, the conditioning states at steps 0..n."""
    for seq, w in law.weights.items():
        level, extra = _start(kind, seq[0])
        states = [_state(kind, level, extra)]
        for e in seq[1:]:
            level, extra = _advance(kind, level, extra, e)
            states.append(_state(kind, level, extra))
        yield seq, w, states


def estimate_kernels(law: FiniteProcessLaw, conditioning: str = "level") -> list:
    """Exact conditional laws of ``X_{n+1} - X_n`` given the conditioning state at ``n``."""
    _check_kind(conditioning)
    n = law.horizon
    mass = [defaultdict(int) for _ in range(n)]
    joint = [defaultdict(lambda: defaultdict(int)) for _ in range(n)]
    for seq, w, states in _histories(law, conditioning):
        for k in range(n):
            mass[k][states[k]] += w
            joint[k][states[k]][seq[k + 1]] += w
    kernels = []
    for k in range(n):
        rows = {s: {e: v / mass[k][s] for e, v in sorted(r.items())} for s, r in joint[k].items()}
        kernels.append(DiscreteKernel(k, conditioning, rows))
    return kernels


def build_mimic_chain(kernels: list, initial: dict, conditioning: str | None = None) -> FiniteProcessLaw:
    """The Markov chain in the conditioning state whose increments follow ``kernels``."""
    kind = conditioning or (kernels[0].conditioning if kernels else "level")
    _check_kind(kind)
    frontier = {}
    for x0, w in initial.items():
        if w:
            level, extra = _start(kind, x0)
            frontier[(x0,)] = (w, level, extra)
    for ker in kernels:
        nxt = {}
        for seq, (w, level, extra) in frontier.items():
            try:
                row = ker.row(_state(kind, level, extra))
            except DiscreteError as err:
                raise DiscreteError(f"kernel coverage gap: {err}") from None
            for e, p in row.items():
                if p:
                    lv, ex = _advance(kind, level, extra, e)
                    nxt[seq + (e,)] = (w * p, lv, ex)
        frontier = nxt
    return FiniteProcessLaw({seq: v[0] for seq, v in frontier.items()})


def mimic(law: FiniteProcessLaw, conditioning: str = "level") -> FiniteProcessLaw:
    return build_mimic_chain(estimate_kernels(law, conditioning), law.initial_law(), conditioning)


def marginals(law: FiniteProcessLaw, n: int, statistic: str = "level") -> dict:
    """Exact law of the statistic at step ``n`` (``level`` gives X_n; pairs give (X_n, max) or (X_n, sum))."""
    _check_kind(statistic)
    if not 0 <= n <= law.horizon:
        raise DiscreteError(f"step {n} outside 0..{law.horizon}")
    # forward pushforward over (state, running extra) aggregated per step
    dist = defaultdict(int)
    for seq, w, states in _histories(law, statistic):
        dist[states[n]] += w
    return dict(dist)


def total_variation(p: dict, q: dict):
    keys = set(p) | set(q)
    return sum(abs(p.get(k, 0) - q.get(k, 0)) for k in keys) / 2


def copy_first_law() -> FiniteProcessLaw:
    """``X_0 = 0``; ``e1, e2`` independent fair signs; ``e3 = e1``."""
    q = Fraction(1, 4)
    return FiniteProcessLaw({(0, a, b, a): q for a in (1, -1) for b in (1, -1)})


def iid_sign_law(n: int) -> FiniteProcessLaw:
    from itertools import product

    w = Fraction(1, 2 ** n)
    return FiniteProcessLaw({(0,) + s: w for s in product((1, -1), repeat=n)})


def random_law(rng, max_alphabet: int = 4, max_horizon: int = 4, exact: bool = True,
               max_support: int = 24) -> FiniteProcessLaw:
    """Random law with integer increments, a small initial alphabet and rational weights."""
    n = int(rng.integers(1, max_horizon + 1))
    alphabets = [sorted(set(int(v) for v in rng.integers(-3, 4, size=int(rng.integers(1, max_alphabet + 1)))))
                 for _ in range(n)]
    x0s = sorted(set(int(v) for v in rng.integers(-1, 2, size=int(rng.integers(1, 3)))))
    support = set()
    for _ in range(int(rng.integers(1, max_support + 1))):
        seq = (x0s[int(rng.integers(len(x0s)))],) + tuple(a[int(rng.integers(len(a)))] for a in alphabets)
        support.add(seq)
    raw = {s: int(rng.integers(1, 10)) for s in sorted(support)}
    tot = sum(raw.values())
    if exact:
        return FiniteProcessLaw({s: Fraction(v, tot) for s, v in raw.items()})
    return FiniteProcessLaw({s: v / tot for s, v in raw.items()})


def format_table(dist: dict, header: tuple = ("state", "prob")) -> str:
    rows = [(str(k), str(v)) for k, v in sorted(dist.items(), key=lambda kv: kv[0])]
    w = max([len(header[0])] + [len(r[0]) for r in rows])
    lines = [f"{header[0]:<{w}}  {header[1]}"]
    lines += [f"{a:<{w}}  {b}" for a, b in rows]
    return "\n".join(lines)
