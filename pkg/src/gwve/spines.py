"""Random trees over Ulam-Harris labels: plain, one-spine and two-spine.

Trees are stored in a flat arena: nodes are numbered breadth-first, each
node records its parent index, child count and spine mark, and contiguous
index ranges delimit the generations.  The arena keeps exactly what the
verification work needs (populations, parent walks, marks) and nothing else.

For large horizons only the population sizes matter, so each sampler has a
population-only companion that simulates the same law for a whole batch of
replicates at once: per generation, the off-spine population advances by one
exact draw of a sum of iid offspring (negative binomial for geometric laws,
Poisson/binomial closed under summation, multinomial for tables), and the
spine nodes contribute their reweighted offspring counts.  The batch
samplers are what make million-replicate comparisons cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .environment import Environment
from .offspring import FiniteTable, OffspringDistribution
from .pgf_engine import kn_pmf_vector

__all__ = [
    "MARK_NONE",
    "MARK_SPINE1",
    "MARK_SPINE2",
    "MARK_BOTH",
    "NodeBudgetExceeded",
    "LabeledTree",
    "sample_gw_tree",
    "sample_one_spine",
    "sample_two_spine",
    "PopulationBatch",
    "TwoSpineBatch",
    "simulate_gw_populations",
    "simulate_one_spine_populations",
    "simulate_two_spine_populations",
]

MARK_NONE, MARK_SPINE1, MARK_SPINE2, MARK_BOTH = 0, 1, 2, 3
_MARK_NAMES = {MARK_NONE: "none", MARK_SPINE1: "spine1", MARK_SPINE2: "spine2", MARK_BOTH: "both"}

DEFAULT_NODE_BUDGET = 10**7


class NodeBudgetExceeded(RuntimeError):
    """A replicate outgrew the configured node budget and was aborted."""

    def __init__(self, nodes: int, budget: int):
        super().__init__(f"tree grew past the node budget ({nodes} > {budget})")
        self.nodes = nodes
        self.budget = budget


@dataclass
class LabeledTree:
    """Arena tree with per-generation index ranges and spine marks."""

    parent: np.ndarray       # int64; parent[0] == -1
    level_starts: np.ndarray  # int64; generation k occupies [starts[k], starts[k+1])
    child_count: np.ndarray  # int64
    spine_mark: np.ndarray   # uint8

    @property
    def node_count(self) -> int:
        return self.parent.size

    @property
    def height(self) -> int:
        return self.level_starts.size - 2

    def generation_of(self, node: int) -> int:
        return int(np.searchsorted(self.level_starts, node, side="right")) - 1

    def population(self, k: int) -> int:
        """Number of nodes in generation k (zero beyond the height)."""
        if k < 0:
            raise ValueError("generations are nonnegative")
        if k > self.height:
            return 0
        return int(self.level_starts[k + 1] - self.level_starts[k])

    def populations(self) -> np.ndarray:
        return np.diff(self.level_starts)

    def mrca_generation(self, u: int, v: int) -> int:
        """Generation of the deepest common ancestor of nodes u and v."""
        du, dv = self.generation_of(u), self.generation_of(v)
        while du > dv:
            u = int(self.parent[u]); du -= 1
        while dv > du:
            v = int(self.parent[v]); dv -= 1
        while u != v:
            u = int(self.parent[u])
            v = int(self.parent[v])
            du -= 1
        return du

    def marked_nodes(self, generation: int, mark_bit: int) -> np.ndarray:
        """Nodes of a generation carrying the given spine (1 or 2)."""
        lo, hi = int(self.level_starts[generation]), int(self.level_starts[generation + 1])
        marks = self.spine_mark[lo:hi]
        want = MARK_BOTH if mark_bit == MARK_BOTH else mark_bit
        sel = (marks == want) | (marks == MARK_BOTH)
        return np.nonzero(sel)[0] + lo

    def dump_lines(self):
        """One line per node: id, parent id, generation, child count, mark."""
        gen = 0
        for node in range(self.node_count):
            while node >= self.level_starts[gen + 1]:
                gen += 1
            yield (
                f"{node},{int(self.parent[node])},{gen},"
                f"{int(self.child_count[node])},{_MARK_NAMES[int(self.spine_mark[node])]}"
            )


class _Builder:
    """Accumulates per-generation arrays and enforces the node budget."""

    def __init__(self, node_budget: int):
        self.budget = node_budget
        self.parents = [np.array([-1], dtype=np.int64)]
        self.counts: list[np.ndarray] = []
        self.marks = [np.zeros(1, dtype=np.uint8)]
        self.level_starts = [0, 1]
        self.total = 1

    def add_level(self, parent_ids: np.ndarray, counts_prev: np.ndarray, marks: np.ndarray) -> None:
        self.counts.append(counts_prev.astype(np.int64))
        self.total += parent_ids.size
        if self.total > self.budget:
            raise NodeBudgetExceeded(self.total, self.budget)
        self.parents.append(parent_ids.astype(np.int64))
        self.marks.append(marks.astype(np.uint8))
        self.level_starts.append(self.total)

    def finish(self) -> LabeledTree:
        self.counts.append(np.zeros(self.level_starts[-1] - self.level_starts[-2], dtype=np.int64))
        return LabeledTree(
            parent=np.concatenate(self.parents),
            level_starts=np.asarray(self.level_starts, dtype=np.int64),
            child_count=np.concatenate(self.counts),
            spine_mark=np.concatenate(self.marks),
        )


def sample_gw_tree(
    env: Environment, n: int, rng: np.random.Generator, node_budget: int = DEFAULT_NODE_BUDGET
) -> LabeledTree:
    """Plain branching tree up to height n; generation counts have the law of Z."""
    if n < 0:
        raise ValueError("horizon must be nonnegative")
    b = _Builder(node_budget)
    pop = 1
    for k in range(n):
        if pop == 0:
            break
        counts = env.dist_at(k + 1).sample(rng, size=pop)
        base = b.level_starts[-2]
        parent_ids = np.repeat(np.arange(base, base + pop, dtype=np.int64), counts)
        b.add_level(parent_ids, counts, np.zeros(parent_ids.size, dtype=np.uint8))
        pop = int(counts.sum())
    return b.finish()


@lru_cache(maxsize=256)
def _size_biased(dist: OffspringDistribution) -> FiniteTable:
    return dist.size_biased()


@lru_cache(maxsize=256)
def _pair_biased(dist: OffspringDistribution) -> FiniteTable:
    return dist.pair_biased()


def sample_one_spine(
    env: Environment, n: int, rng: np.random.Generator, node_budget: int = DEFAULT_NODE_BUDGET
) -> LabeledTree:
    """Size-biased tree: one marked line reproducing by the size-biased law,
    one uniformly chosen child continuing the line, everyone else plain."""
    if n < 0:
        raise ValueError("horizon must be nonnegative")
    b = _Builder(node_budget)
    b.marks[0][0] = MARK_SPINE1
    spine_pos = 0  # offset of the spine node within its generation
    pop = 1
    for k in range(n):
        d = env.dist_at(k + 1)
        c_spine = _size_biased(d).sample(rng)
        c_off = d.sample(rng, size=pop - 1)
        counts = np.insert(c_off, spine_pos, c_spine)
        base = b.level_starts[-2]
        parent_ids = np.repeat(np.arange(base, base + pop, dtype=np.int64), counts)
        marks = np.zeros(parent_ids.size, dtype=np.uint8)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        child_pick = int(rng.integers(c_spine))
        new_spine_pos = int(offsets[spine_pos]) + child_pick
        marks[new_spine_pos] = MARK_SPINE1
        b.add_level(parent_ids, counts, marks)
        spine_pos = new_spine_pos
        pop = int(counts.sum())
    return b.finish()


def sample_two_spine(
    env: Environment, n: int, rng: np.random.Generator, node_budget: int = DEFAULT_NODE_BUDGET
) -> tuple[LabeledTree, int]:
    """Pair-biased tree: one line up to the branching generation K, a
    pair-biased birth there with two distinct children picked without
    replacement, then two independent lines.  Returns (tree, K)."""
    if n < 1:
        raise ValueError("the two-spine construction needs n >= 1")
    weights = kn_pmf_vector(env, n)
    K = int(np.searchsorted(np.cumsum(weights), rng.random(), side="right"))
    K = min(K, n - 1)

    b = _Builder(node_budget)
    b.marks[0][0] = MARK_BOTH
    pop = 1
    spine1_pos = 0
    spine2_pos = 0
    for k in range(n):
        d = env.dist_at(k + 1)
        base = b.level_starts[-2]
        if k < K:  # single spine reproducing by the size-biased law
            c_spine = _size_biased(d).sample(rng)
            c_off = d.sample(rng, size=pop - 1)
            counts = np.insert(c_off, spine1_pos, c_spine)
            offsets = np.concatenate([[0], np.cumsum(counts)])
            pick = int(rng.integers(c_spine))
            new1 = new2 = int(offsets[spine1_pos]) + pick
            mark_at = {new1: MARK_BOTH}
        elif k == K:  # pair-biased birth; two distinct children
            c_spine = _pair_biased(d).sample(rng)
            c_off = d.sample(rng, size=pop - 1)
            counts = np.insert(c_off, spine1_pos, c_spine)
            offsets = np.concatenate([[0], np.cumsum(counts)])
            i = int(rng.integers(c_spine))
            j = int(rng.integers(c_spine))
            while j == i:
                j = int(rng.integers(c_spine))
            new1 = int(offsets[spine1_pos]) + i
            new2 = int(offsets[spine1_pos]) + j
            mark_at = {new1: MARK_SPINE1, new2: MARK_SPINE2}
        else:  # two independent spines
            c1 = _size_biased(d).sample(rng)
            c2 = _size_biased(d).sample(rng)
            c_off = d.sample(rng, size=pop - 2)
            counts = np.empty(pop, dtype=np.int64)
            plain = np.ones(pop, dtype=bool)
            plain[spine1_pos] = plain[spine2_pos] = False
            counts[plain] = c_off
            counts[spine1_pos] = c1
            counts[spine2_pos] = c2
            offsets = np.concatenate([[0], np.cumsum(counts)])
            new1 = int(offsets[spine1_pos]) + int(rng.integers(c1))
            new2 = int(offsets[spine2_pos]) + int(rng.integers(c2))
            mark_at = {new1: MARK_SPINE1, new2: MARK_SPINE2}
        parent_ids = np.repeat(np.arange(base, base + pop, dtype=np.int64), counts)
        marks = np.zeros(parent_ids.size, dtype=np.uint8)
        for pos, mark in mark_at.items():
            marks[pos] = mark
        b.add_level(parent_ids, counts, marks)
        spine1_pos, spine2_pos = new1, new2
        pop = int(counts.sum())
    return b.finish(), K


# ----------------------------------------------------------------------
# Population-only batch samplers.


@dataclass
class PopulationBatch:
    """Final-generation populations of the completed replicates."""

    x_n: np.ndarray
    aborted: int


@dataclass
class TwoSpineBatch:
    x_n: np.ndarray
    k: np.ndarray
    aborted: int


def simulate_gw_populations(
    env: Environment,
    n: int,
    reps: int,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> PopulationBatch:
    """Terminal populations of `reps` independent plain replicates."""
    if n < 0 or reps < 0:
        raise ValueError("need n >= 0 and reps >= 0")
    pop = np.ones(reps, dtype=np.int64)
    idx = np.arange(reps, dtype=np.int64)
    cum = np.ones(reps, dtype=np.int64)
    out = np.zeros(reps, dtype=np.int64)
    aborted_idx: list[np.ndarray] = []
    aborted = 0
    for k in range(n):
        if pop.size == 0:
            break
        pop = env.dist_at(k + 1).sum_sample(rng, pop)
        cum = cum + pop
        over = cum > node_budget
        if np.any(over):
            aborted += int(np.count_nonzero(over))
            aborted_idx.append(idx[over])
            keep = ~over
            pop, idx, cum = pop[keep], idx[keep], cum[keep]
        alive = pop > 0
        if not np.all(alive):
            pop, idx, cum = pop[alive], idx[alive], cum[alive]
    out[idx] = pop
    if aborted:
        mask = np.ones(reps, dtype=bool)
        mask[np.concatenate(aborted_idx)] = False
        out = out[mask]
    return PopulationBatch(out, aborted)


def simulate_one_spine_populations(
    env: Environment,
    n: int,
    reps: int,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> PopulationBatch:
    """Terminal populations of size-biased replicates (spine included)."""
    if n < 0 or reps < 0:
        raise ValueError("need n >= 0 and reps >= 0")
    off = np.zeros(reps, dtype=np.int64)
    cum = np.ones(reps, dtype=np.int64)
    aborted = 0
    for k in range(n):
        d = env.dist_at(k + 1)
        c_spine = _size_biased(d).sample(rng, size=off.size)
        off = d.sum_sample(rng, off) + (c_spine - 1)
        cum = cum + off + 1
        over = cum > node_budget
        if np.any(over):
            aborted += int(np.count_nonzero(over))
            keep = ~over
            off, cum = off[keep], cum[keep]
    return PopulationBatch(off + 1, aborted)


def simulate_two_spine_populations(
    env: Environment,
    n: int,
    reps: int,
    rng: np.random.Generator,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> TwoSpineBatch:
    """Terminal populations and branching generations of pair-biased replicates."""
    if n < 1 or reps < 0:
        raise ValueError("need n >= 1 and reps >= 0")
    weights = kn_pmf_vector(env, n)
    cdf = np.cumsum(weights)
    K = np.minimum(
        np.searchsorted(cdf, rng.random(reps), side="right"), n - 1
    ).astype(np.int64)
    off = np.zeros(reps, dtype=np.int64)
    cum = np.ones(reps, dtype=np.int64)
    aborted = 0
    for k in range(n):
        d = env.dist_at(k + 1)
        sb = _size_biased(d)
        add = np.zeros(off.size, dtype=np.int64)
        pre = K > k
        at = K == k
        post = K < k
        n_pre, n_at, n_post = int(pre.sum()), int(at.sum()), int(post.sum())
        if n_pre:
            add[pre] = sb.sample(rng, size=n_pre) - 1
        if n_at:
            add[at] = _pair_biased(d).sample(rng, size=n_at) - 2
        if n_post:
            add[post] = (sb.sample(rng, size=n_post) - 1) + (sb.sample(rng, size=n_post) - 1)
        off = d.sum_sample(rng, off) + add
        cum = cum + off + np.where(K >= k + 1, 1, 2)
        over = cum > node_budget
        if np.any(over):
            aborted += int(np.count_nonzero(over))
            keep = ~over
            off, cum, K = off[keep], cum[keep], K[keep]
    return TwoSpineBatch(off + 2, K, aborted)
