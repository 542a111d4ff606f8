"""Concatenated measures on finite sets of scalar grid paths, in rational arithmetic.

A path is a tuple of values at grid indices ``0..M``.  A retained statistic is
a function of the history ``path[: i + 1]`` returning a hashable label; it
generates the retained information at partition time index ``i``.

``concat_pair(P, T, G, Q)`` keeps ``P`` up to ``T`` and continues with the
increments after ``T`` drawn from ``Q``'s conditional law given the label
``G`` of the history.  The n-fold concatenation folds this over the partition,
which is the iterated-conditioning formula.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable


class ConcatError(ValueError):
    pass


@dataclass(frozen=True)
class FinitePathSpace:
    """Exact probability weights on a finite set of equal-length scalar paths."""

    weights: dict

    def __post_init__(self):
        w = {tuple(k): Fraction(v) for k, v in self.weights.items() if v != 0}
        if not w:
            raise ConcatError("empty path space")
        if len({len(k) for k in w}) != 1:
            raise ConcatError("paths must share one grid")
        if any(v < 0 for v in w.values()):
            raise ConcatError("weights must be nonnegative")
        if sum(w.values()) != 1:
            raise ConcatError("weights must sum to exactly 1")
        object.__setattr__(self, "weights", w)

    @property
    def steps(self) -> int:
        return len(next(iter(self.weights))) - 1

    @classmethod
    def uniform(cls, paths) -> "FinitePathSpace":
        paths = [tuple(p) for p in paths]
        out = defaultdict(Fraction)
        for p in paths:
            out[p] += Fraction(1, len(paths))
        return cls(dict(out))

    def table(self) -> str:
        rows = sorted(self.weights.items())
        w = max(len(str(list(p))) for p, _ in rows)
        return "\n".join(f"{str(list(p)):<{w}}  {v}" for p, v in rows)


# retained statistics --------------------------------------------------------

def trivial(history: tuple):
    return ()


def full_history(history: tuple):
    return tuple(history)


def current_level(history: tuple):
    return history[-1]


LABELS = {"trivial": trivial, "full_history": full_history, "current_level": current_level}


@dataclass(frozen=True)
class ExtendedPartitionSpec:
    """Grid indices ``0 = T_0 < T_1 < ... < T_n`` and one retained statistic per time."""

    times: tuple
    labels: tuple

    def __post_init__(self):
        times = tuple(int(t) for t in self.times)
        if not times or times[0] != 0:
            raise ConcatError("partition times start at index 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConcatError("partition times must increase strictly")
        if len(self.labels) != len(times):
            raise ConcatError("one retained statistic per partition time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def with_label(cls, times, label: Callable | str) -> "ExtendedPartitionSpec":
        fn = LABELS[label] if isinstance(label, str) else label
        return cls(tuple(times), tuple(fn for _ in times))


def _increments(path: tuple, i: int) -> tuple:
    return tuple(v - path[i] for v in path[i + 1:])


def conditional_increments(q: FinitePathSpace, i: int, label: Callable) -> dict:
    """``label value -> {increments after index i: probability}`` under ``q``."""
    mass = defaultdict(Fraction)
    joint = defaultdict(lambda: defaultdict(Fraction))
    for path, w in q.weights.items():
        g = label(path[: i + 1])
        mass[g] += w
        joint[g][_increments(path, i)] += w
    return {g: {inc: v / mass[g] for inc, v in r.items()} for g, r in joint.items()}


def concat_pair(p: FinitePathSpace, i: int, label: Callable, q: FinitePathSpace) -> FinitePathSpace:
    """``P`` up to index ``i``, then ``Q``'s increments conditioned on the retained label."""
    if p.steps != q.steps:
        raise ConcatError("measures live on different grids")
    if not 0 <= i <= p.steps:
        raise ConcatError("concatenation index outside the grid")
    cond = conditional_increments(q, i, label)
    head = defaultdict(Fraction)
    for path, w in p.weights.items():
        head[path[: i + 1]] += w
    out = defaultdict(Fraction)
    for h, w in head.items():
        g = label(h)
        if g not in cond:
            raise ConcatError(f"conditioning class {g!r} has zero mass at index {i}")
        for inc, pr in cond[g].items():
            out[h + tuple(h[-1] + d for d in inc)] += w * pr
    return FinitePathSpace(dict(out))


def concatenate(p: FinitePathSpace, pi: ExtendedPartitionSpec) -> FinitePathSpace:
    """n-fold concatenation of ``p`` with itself along the extended partition."""
    if pi.times[-1] > p.steps:
        raise ConcatError("partition time beyond the grid")
    out = p
    for i, label in zip(pi.times, pi.labels):
        out = concat_pair(out, i, label, p)
    return out


# properties -------------------------------------------------------------------

def _blocks(pi: ExtendedPartitionSpec, steps: int):
    """Block ``j`` runs from ``T_{j-1}`` to ``T_j`` with ``T_{n+1}`` the horizon."""
    ends = list(pi.times[1:]) + [steps]
    return [(pi.times[j], ends[j], pi.labels[j]) for j in range(len(pi.times)) if ends[j] > pi.times[j]]


def h_cell_masses(p: FinitePathSpace, pi: ExtendedPartitionSpec) -> list:
    """Per block, masses of cells generated by the initial label and the block increments."""
    out = []
    for a, b, label in _blocks(pi, p.steps):
        cells = defaultdict(Fraction)
        for path, w in p.weights.items():
            cells[(label(path[: a + 1]), tuple(v - path[a] for v in path[a + 1: b + 1]))] += w
        out.append(dict(cells))
    return out


def check_h_cells(p: FinitePathSpace, pi: ExtendedPartitionSpec, c: FinitePathSpace | None = None) -> bool:
    c = c or concatenate(p, pi)
    first = defaultdict(Fraction)
    first_c = defaultdict(Fraction)
    for path, w in p.weights.items():
        first[path[0]] += w
    for path, w in c.weights.items():
        first_c[path[0]] += w
    return dict(first) == dict(first_c) and h_cell_masses(p, pi) == h_cell_masses(c, pi)


def check_conditional(p: FinitePathSpace, pi: ExtendedPartitionSpec, c: FinitePathSpace | None = None) -> bool:
    """Given the full history to ``T_i``, the next block under the concatenation follows ``P`` given the label."""
    c = c or concatenate(p, pi)
    for a, b, label in _blocks(pi, p.steps):
        ref = defaultdict(lambda: defaultdict(Fraction))
        mass = defaultdict(Fraction)
        for path, w in p.weights.items():
            g = label(path[: a + 1])
            mass[g] += w
            ref[g][tuple(v - path[a] for v in path[a + 1: b + 1])] += w
        hist = defaultdict(lambda: defaultdict(Fraction))
        hmass = defaultdict(Fraction)
        for path, w in c.weights.items():
            h = path[: a + 1]
            hmass[h] += w
            hist[h][tuple(v - path[a] for v in path[a + 1: b + 1])] += w
        for h, r in hist.items():
            g = label(h)
            want = {k: v / mass[g] for k, v in ref[g].items()}
            got = {k: v / hmass[h] for k, v in r.items()}
            if got != want:
                return False
    return True


def block_independent(p: FinitePathSpace, pi: ExtendedPartitionSpec, c: FinitePathSpace) -> bool:
    """Weights equal the product of the initial law and each block's increment marginal."""
    blocks = [(a, b) for a, b, _ in _blocks(pi, p.steps)]
    init = defaultdict(Fraction)
    marg = [defaultdict(Fraction) for _ in blocks]
    for path, w in p.weights.items():
        init[path[0]] += w
        for j, (a, b) in enumerate(blocks):
            marg[j][tuple(v - path[a] for v in path[a + 1: b + 1])] += w
    for path, w in c.weights.items():
        want = init[path[0]]
        for j, (a, b) in enumerate(blocks):
            want *= marg[j][tuple(v - path[a] for v in path[a + 1: b + 1])]
        if want != w:
            return False
    # every weight matches the product and both sides have mass 1, so no combination is missing
    return True


@dataclass
class MarginalReport:
    tv: list  # per grid index

    @property
    def max_tv(self):
        return max(self.tv)


def statistic_law(p: FinitePathSpace, k: int, statistic: Callable) -> dict:
    out = defaultdict(Fraction)
    for path, w in p.weights.items():
        out[statistic(path[: k + 1])] += w
    return dict(out)


def check_marginal_preservation(p: FinitePathSpace, pi: ExtendedPartitionSpec,
                                statistic: Callable = current_level) -> MarginalReport:
    """Exact total-variation gap of the statistic's law under P and its concatenation, per grid index."""
    c = concatenate(p, pi)
    tv = []
    for k in range(p.steps + 1):
        a, b = statistic_law(p, k, statistic), statistic_law(c, k, statistic)
        tv.append(sum(abs(a.get(x, 0) - b.get(x, 0)) for x in set(a) | set(b)) / 2)
    return MarginalReport(tv)


def simple_example() -> tuple:
    """Two paths on grid {0, 1, 2}: zero and identity, split at index 1 with nothing retained."""
    p = FinitePathSpace({(0, 0, 0): Fraction(1, 2), (0, 1, 2): Fraction(1, 2)})
    pi = ExtendedPartitionSpec.with_label((0, 1), trivial)
    return p, pi, concatenate(p, pi)


def random_path_space(rng, steps: int = 4, max_paths: int = 8) -> FinitePathSpace:
    paths = set()
    for _ in range(int(rng.integers(1, max_paths + 1))):
        inc = rng.integers(-1, 2, size=steps)
        paths.add((int(rng.integers(0, 2)),) + tuple(int(v) for v in inc))
    raw = {}
    for seq in sorted(paths):
        lv = [seq[0]]
        for e in seq[1:]:
            lv.append(lv[-1] + e)
        raw[tuple(lv)] = int(rng.integers(1, 8))
    tot = sum(raw.values())
    return FinitePathSpace({k: Fraction(v, tot) for k, v in raw.items()})
