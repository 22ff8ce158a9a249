"""
Direct sampler for the range of the walk

Up to its p-th return to the root, the walk's range with its edge local times is
a multi-type Galton-Watson tree whose root has type p. A vertex x of type k
gives its children counts drawn from a negative multinomial law with
parameters (k; p(x, x*), p(x, x^1), ...). This module samples that tree without
running the walk, either annealed (fresh environment, vectorised over many
replicates) or quenched (on a frozen EnvTree).
"""

from dataclasses import dataclass
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from config import MAX_RANGE_VERTICES
from errors import CappedGrowth
from env_model import EnvTree, MarkFamily, family_for
from models import Caps, ConductancePath, EnvironmentSpec, LevelStats, TransitionWeights, WalkRecord
from walker import transition_weights

logger = logging.getLogger('treewalk')

TINY = np.finfo(float).tiny


class RangeTree:
    """
    Range of the walk with its edge local times, stored breadth-first

    Vertex 0 is the root. parent[1:] is non-decreasing, so the children of every
    vertex are a contiguous block of indices.
    """

    def __init__(
        self,
        parent: np.ndarray,
        types: np.ndarray,
        potential: np.ndarray,
        generation: np.ndarray,
        discovery: Optional[np.ndarray] = None,
        env_vertex: Optional[np.ndarray] = None,
        cap_hit: Optional[str] = None,
    ):
        self.parent = np.asarray(parent, dtype=np.int64)
        self.types = np.asarray(types, dtype=np.int64)
        self.potential = np.asarray(potential, dtype=float)
        self.generation = np.asarray(generation, dtype=np.int64)
        self.discovery = discovery
        self.env_vertex = env_vertex
        self.cap_hit = cap_hit
        n = len(self.types)
        counts = np.bincount(self.parent[1:], minlength=n) if n > 1 else np.zeros(n, dtype=np.int64)
        self.child_count = counts
        self.child_start = 1 + np.concatenate(([0], np.cumsum(counts)[:-1])) if n else counts

    @property
    def size(self) -> int:
        return len(self.types)

    @property
    def complete(self) -> bool:
        return self.cap_hit is None

    @property
    def p(self) -> int:
        return int(self.types[0])

    @property
    def height(self) -> int:
        return int(self.generation.max()) if self.size else 0

    def children(self, v: int) -> range:
        start = int(self.child_start[v])
        return range(start, start + int(self.child_count[v]))

    def Z(self) -> np.ndarray:
        """Z_k = sum of the types at generation k"""
        return np.bincount(self.generation, weights=self.types).astype(np.int64)

    def vertex_counts(self) -> np.ndarray:
        return np.bincount(self.generation)

    def level_stats(self) -> LevelStats:
        Z = self.Z().tolist()
        L = [Z[k] + (Z[k + 1] if k + 1 < len(Z) else 0) for k in range(len(Z))]
        return LevelStats(Z=tuple(Z), L=tuple(L))

    def depth_first_order(self) -> List[int]:
        order: List[int] = []
        stack = [0]
        while stack:
            v = stack.pop()
            order.append(v)
            stack.extend(reversed(self.children(v)))
        return order

    def summary_rows(self) -> List[Tuple[int, int, int, int]]:
        """(k, Z_k, L_k, vertex_count_k) rows for the level summary CSV"""
        stats = self.level_stats()
        counts = self.vertex_counts()
        return [(k, stats.Z[k], stats.L[k], int(counts[k])) for k in range(len(stats.Z))]

    @classmethod
    def from_levels(cls, levels: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]], **kwargs) -> 'RangeTree':
        """Assemble from per-level (parent index within previous level, types, potentials)"""
        parents, types, potentials, gens = [], [], [], []
        offset_prev = 0
        offset = 0
        for k, (par, t, V) in enumerate(levels):
            parents.append(par + offset_prev if k else np.full(len(t), -1))
            types.append(t)
            potentials.append(V)
            gens.append(np.full(len(t), k))
            offset_prev = offset
            offset += len(t)
        return cls(
            np.concatenate(parents),
            np.concatenate(types),
            np.concatenate(potentials),
            np.concatenate(gens),
            **kwargs,
        )

    @classmethod
    def from_walk(cls, record: WalkRecord, tree: EnvTree) -> 'RangeTree':
        """Range of a walk record; discovery holds each vertex's rank in visit order"""
        counts = record.edge_counts
        rank = {v: i for i, v in enumerate(counts)}
        order = [tree.root]
        frontier = [tree.root]
        while frontier:
            nxt = []
            for v in frontier:
                kids = tree.children[v]
                if kids is None:
                    continue
                nxt.extend(c for c in kids if c in counts)
            order.extend(nxt)
            frontier = nxt
        index = {v: i for i, v in enumerate(order)}
        parent = [-1] + [index[tree.parent[v]] for v in order[1:]]
        return cls(
            np.array(parent),
            np.array([counts[v] for v in order]),
            np.array([tree.potential[v] for v in order]),
            np.array([tree.depth[v] for v in order]),
            discovery=np.array([rank[v] for v in order]),
            env_vertex=np.array(order),
            cap_hit=record.cap_hit,
        )


def h_and_hit(potentials: Sequence[float]) -> ConductancePath:
    """
    H_x = sum over e <= w <= x of exp(V(w) - V(x)) and P(N_x >= 1) = exp(-V(x)) / H_x

    Args:
        potentials: V along the path from e (V(e) = 0) to x

    Returns:
        ConductancePath, accumulated in the log domain
    """
    if len(potentials) == 0:
        raise ValueError("path must contain the root")
    log_h = 0.0
    for prev, cur in zip(potentials[:-1], potentials[1:]):
        log_h = float(np.logaddexp(0.0, prev - cur + log_h))
    v = float(potentials[-1])
    H = math.exp(log_h)
    return ConductancePath(
        H=H,
        hit_prob=math.exp(-v - log_h),
        log_H=log_h,
        return_prob=-math.expm1(-log_h),
        mean_visits=math.exp(-v),
    )


def geometric_restart_pmf(path: ConductancePath, j: int) -> float:
    """P(N_x^(1) = j) for the geometric law on N restarted at 0"""
    if j == 0:
        return 1.0 - path.hit_prob
    return path.hit_prob * (1.0 - path.return_prob) * path.return_prob ** (j - 1)


def offspring_pmf(k: int, counts: Sequence[int], weights: TransitionWeights) -> float:
    """Negative multinomial probability of the children's counts given parent type k"""
    if k < 1:
        raise ValueError("type must be positive")
    c = np.asarray(counts, dtype=float)
    q = np.asarray(weights.p_children, dtype=float)
    total = c.sum()
    log_p = (special.gammaln(k + total) - special.gammaln(k) - special.gammaln(c + 1).sum()
             + special.xlogy(k, weights.p_up) + special.xlogy(c, q).sum())
    return float(np.exp(log_p))


def sample_offspring_counts(k: int, weights: TransitionWeights, rng: np.random.Generator) -> np.ndarray:
    """
    Children's edge local times given the parent's type k

    Total child visits are NegBin(k, p_up) (failures before the k-th success),
    split multinomially with probabilities p_i / (1 - p_up).
    """
    q = np.asarray(weights.p_children, dtype=float)
    if len(q) == 0:
        return np.zeros(0, dtype=np.int64)
    if weights.p_up >= 1.0:
        return np.zeros(len(q), dtype=np.int64)
    total = rng.negative_binomial(k, max(weights.p_up, TINY))
    return rng.multinomial(total, q / q.sum()).astype(np.int64)


def _split_counts(
    types: np.ndarray, p_up: np.ndarray, split: np.ndarray, mask: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """
    Negative multinomial counts for a whole population at once

    Row r draws NegBin(types[r], p_up[r]) child visits and splits them over its
    valid slots with probabilities split[r] by successive binomials.
    """
    n, width = split.shape
    total = rng.negative_binomial(types, p_up)
    last_slot = mask.sum(axis=1) - 1
    counts = np.zeros((n, width), dtype=np.int64)
    remaining = total
    rest = np.ones(n)
    for i in range(width):
        share = np.divide(split[:, i], rest, out=np.zeros(n), where=rest > 0)
        share = np.where(last_slot == i, 1.0, np.clip(share, 0.0, 1.0))
        share = np.where(mask[:, i], share, 0.0)
        c = rng.binomial(remaining, share)
        counts[:, i] = c
        remaining = remaining - c
        rest = rest - split[:, i]
    return counts


def _split_level(
    family: MarkFamily, types: np.ndarray, V: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One generation of the annealed multi-type tree for a whole population

    Returns (parent row, child type, child potential) for every child with a
    positive count, grouped by parent in row order.
    """
    n = len(types)
    marks, mask = family.sample_offspring_marks(rng, n)
    width = marks.shape[1]
    if n == 0 or width == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        neg = np.where(mask, -marks, -np.inf)
        lse = special.logsumexp(neg, axis=1)
        p_up = np.maximum(np.exp(-np.logaddexp(0.0, lse)), TINY)
        split = np.where(mask, np.exp(neg - lse[:, None]), 0.0)
    counts = _split_counts(types, p_up, split, mask, rng)
    keep = counts > 0
    rows = np.nonzero(keep)[0]
    return rows, counts[keep], (V[:, None] + marks)[keep]


@dataclass
class LevelProfiles:
    """Level sums of many independent ranges; row r is replicate r"""
    Z: np.ndarray  # (replicates, depth + 1)
    vertices: np.ndarray  # (replicates, depth + 1)
    capped: np.ndarray  # (replicates,) bool
    identity_failures: int = 0  # walker mode: completed walks breaking an exact identity

    @property
    def L(self) -> np.ndarray:
        """L_k = Z_k + Z_{k+1}; the last column only has Z_k"""
        shifted = np.zeros_like(self.Z)
        shifted[:, :-1] = self.Z[:, 1:]
        return self.Z + shifted

    @property
    def cap_hit_rate(self) -> float:
        return float(self.capped.mean()) if len(self.capped) else 0.0

    @property
    def valid(self) -> np.ndarray:
        return ~self.capped

    @classmethod
    def concat(cls, parts: Sequence['LevelProfiles']) -> 'LevelProfiles':
        """Stack batches in order"""
        return cls(
            Z=np.concatenate([b.Z for b in parts]),
            vertices=np.concatenate([b.vertices for b in parts]),
            capped=np.concatenate([b.capped for b in parts]),
            identity_failures=sum(b.identity_failures for b in parts),
        )


def _enforce_cap(ids: np.ndarray, n_replicates: int, capped: np.ndarray, cap: int) -> np.ndarray:
    """Drop whole replicates, largest first, until the live population fits under cap"""
    sizes = np.bincount(ids, minlength=n_replicates)
    order = np.argsort(-sizes, kind="stable")
    excess = len(ids) - cap
    dropped = []
    for r in order:
        if excess <= 0:
            break
        dropped.append(r)
        excess -= sizes[r]
    capped[dropped] = True
    return ~np.isin(ids, dropped)


def sample_level_profiles(
    spec: EnvironmentSpec,
    p: int,
    n_replicates: int,
    depth: int,
    rng: np.random.Generator,
    max_vertices: int = MAX_RANGE_VERTICES,
) -> LevelProfiles:
    """
    Annealed Z_0..Z_depth for n_replicates independent ranges of initial type p

    All replicates advance together, one vectorised generation at a time.
    Replicates whose population would overflow max_vertices are marked capped
    and dropped.
    """
    family = family_for(spec)
    Z = np.zeros((n_replicates, depth + 1), dtype=np.int64)
    vertices = np.zeros((n_replicates, depth + 1), dtype=np.int64)
    capped = np.zeros(n_replicates, dtype=bool)
    ids = np.arange(n_replicates)
    types = np.full(n_replicates, p, dtype=np.int64)
    V = np.zeros(n_replicates)
    Z[:, 0] = p
    vertices[:, 0] = 1
    for k in range(1, depth + 1):
        if len(types) == 0:
            break
        rows, types, V = _split_level(family, types, V, rng)
        ids = ids[rows]
        if len(ids) > max_vertices:
            keep = _enforce_cap(ids, n_replicates, capped, max_vertices)
            ids, types, V = ids[keep], types[keep], V[keep]
        Z[:, k] = np.bincount(ids, weights=types, minlength=n_replicates).astype(np.int64)
        vertices[:, k] = np.bincount(ids, minlength=n_replicates)
    Z[capped] = 0
    vertices[capped] = 0
    return LevelProfiles(Z=Z, vertices=vertices, capped=capped)


def sample_regeneration_counts(
    spec: EnvironmentSpec,
    p: int,
    ell: int,
    n_replicates: int,
    rng: np.random.Generator,
    caps: Optional[Caps] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Annealed sizes of the regeneration set below level ell

    Counts vertices x with |x| > ell, type 1 and every ancestor strictly between
    generation ell and x of type >= 2. Lines stop at their first type-1 vertex
    below ell, so only the part of the range that matters is sampled.

    Returns:
        (counts, capped) arrays of length n_replicates
    """
    caps = caps or Caps()
    family = family_for(spec)
    counts = np.zeros(n_replicates, dtype=np.int64)
    capped = np.zeros(n_replicates, dtype=bool)
    ids = np.arange(n_replicates)
    types = np.full(n_replicates, p, dtype=np.int64)
    V = np.zeros(n_replicates)
    k = 0
    while len(types):
        if k >= caps.max_depth:
            capped[np.unique(ids)] = True
            break
        rows, types, V = _split_level(family, types, V, rng)
        ids = ids[rows]
        k += 1
        if k > ell:
            ones = types == 1
            counts += np.bincount(ids[ones], minlength=n_replicates)
            ids, types, V = ids[~ones], types[~ones], V[~ones]
        if len(ids) > caps.max_range_vertices:
            keep = _enforce_cap(ids, n_replicates, capped, caps.max_range_vertices)
            ids, types, V = ids[keep], types[keep], V[keep]
    return counts, capped


def _quenched_split(tree: EnvTree, vertex: int) -> Tuple[float, np.ndarray, range]:
    cached = tree.split_cache.get(vertex)
    if cached is None:
        w = transition_weights(tree, vertex)
        q = np.asarray(w.p_children)
        cached = (w.p_up, q / q.sum() if len(q) else q, tree.children[vertex])
        tree.split_cache[vertex] = cached
    return cached


def _sample_quenched(
    tree: EnvTree, p: int, rng: np.random.Generator, caps: Caps, max_level: Optional[int]
) -> RangeTree:
    levels = [(np.zeros(1, dtype=np.int64), np.array([p]), np.array([0.0]))]
    env_ids = [tree.root]
    frontier_env = [tree.root]
    frontier_types = [p]
    total = 1
    cap_hit = None
    k = 0
    try:
        while frontier_env and (max_level is None or k < max_level):
            if k + 1 > caps.max_depth:
                cap_hit = "depth"
                break
            par, ts, vs, nxt_env = [], [], [], []
            for row, (v, t) in enumerate(zip(frontier_env, frontier_types)):
                p_up, q, kids = _quenched_split(tree, v)
                if len(kids) == 0 or p_up >= 1.0:
                    continue
                counts = rng.multinomial(rng.negative_binomial(t, max(p_up, TINY)), q)
                for c, n in zip(kids, counts.tolist()):
                    if n:
                        par.append(row)
                        ts.append(n)
                        vs.append(tree.potential[c])
                        nxt_env.append(c)
            total += len(ts)
            if total > caps.max_range_vertices:
                cap_hit = "vertices"
                break
            if not ts:
                break
            levels.append((np.array(par, dtype=np.int64), np.array(ts, dtype=np.int64), np.array(vs)))
            env_ids.extend(nxt_env)
            frontier_env, frontier_types = nxt_env, ts
            k += 1
    except CappedGrowth as e:
        cap_hit = e.reason
    return RangeTree.from_levels(levels, env_vertex=np.array(env_ids[:sum(len(l[1]) for l in levels)]), cap_hit=cap_hit)


def sample_range(
    spec: EnvironmentSpec,
    p: int,
    caps: Optional[Caps] = None,
    seed=0,
    quenched_tree: Optional[EnvTree] = None,
    max_level: Optional[int] = None,
) -> RangeTree:
    """
    Sample the range of the walk up to its p-th return as a multi-type tree

    Args:
        spec: Environment law
        p: Initial type
        caps: Depth and vertex budget
        seed: Seed, SeedSequence or Generator
        quenched_tree: Frozen environment; a fresh one is integrated out when absent
        max_level: Stop after this generation

    Returns:
        RangeTree in breadth-first order; partial with cap_hit set when a cap was reached
    """
    if p < 1:
        raise ValueError("initial type must be positive")
    caps = caps or Caps()
    rng = np.random.default_rng(seed)
    if quenched_tree is not None:
        return _sample_quenched(quenched_tree, p, rng, caps, max_level)

    family = family_for(spec)
    levels = [(np.zeros(1, dtype=np.int64), np.array([p], dtype=np.int64), np.zeros(1))]
    types, V = levels[0][1], levels[0][2]
    total = 1
    cap_hit = None
    k = 0
    while len(types) and (max_level is None or k < max_level):
        if k + 1 > caps.max_depth:
            cap_hit = "depth"
            break
        rows, types, V = _split_level(family, types, V, rng)
        if len(types) == 0:
            break
        total += len(types)
        if total > caps.max_range_vertices:
            cap_hit = "vertices"
            break
        levels.append((rows, types, V))
        k += 1
    return RangeTree.from_levels(levels, cap_hit=cap_hit)


def _quenched_step(
    tree: EnvTree, env: np.ndarray, types: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One generation of quenched ranges for a population spread over many replicates

    Each live vertex carries the index of its environment vertex, whose split law
    is looked up once per generation. Returns (parent row, child type, child
    environment vertex). Raises CappedGrowth when the environment cannot grow.
    """
    empty = np.zeros(0, dtype=np.int64)
    if len(types) == 0:
        return empty, empty, empty
    uniq, inv = np.unique(env, return_inverse=True)
    tables = [_quenched_split(tree, int(v)) for v in uniq]
    width = max(len(kids) for _, _, kids in tables)
    if width == 0:
        return empty, empty, empty
    p_up = np.ones(len(uniq))
    split = np.zeros((len(uniq), width))
    kid_ids = np.zeros((len(uniq), width), dtype=np.int64)
    mask = np.zeros((len(uniq), width), dtype=bool)
    for u, (pu, q, kids) in enumerate(tables):
        p_up[u] = max(pu, TINY)
        split[u, :len(q)] = q
        kid_ids[u, :len(kids)] = list(kids)
        mask[u, :len(kids)] = True
    counts = _split_counts(types, p_up[inv], split[inv], mask[inv], rng)
    keep = counts > 0
    return np.nonzero(keep)[0], counts[keep], kid_ids[inv][keep]


def quenched_level_profiles(
    tree: EnvTree,
    p: int,
    depth: int,
    n_replicates: int,
    rng: np.random.Generator,
    caps: Optional[Caps] = None,
) -> LevelProfiles:
    """Quenched Z_0..Z_depth for independent ranges on one frozen environment"""
    caps = caps or Caps()
    Z = np.zeros((n_replicates, depth + 1), dtype=np.int64)
    vertices = np.zeros((n_replicates, depth + 1), dtype=np.int64)
    capped = np.zeros(n_replicates, dtype=bool)
    ids = np.arange(n_replicates)
    env = np.zeros(n_replicates, dtype=np.int64)
    types = np.full(n_replicates, p, dtype=np.int64)
    Z[:, 0] = p
    vertices[:, 0] = 1
    for k in range(1, depth + 1):
        if len(types) == 0:
            break
        try:
            rows, types, env = _quenched_step(tree, env, types, rng)
        except CappedGrowth:
            capped[np.unique(ids)] = True
            break
        ids = ids[rows]
        if len(ids) > caps.max_range_vertices:
            live = _enforce_cap(ids, n_replicates, capped, caps.max_range_vertices)
            ids, types, env = ids[live], types[live], env[live]
        Z[:, k] = np.bincount(ids, weights=types, minlength=n_replicates).astype(np.int64)
        vertices[:, k] = np.bincount(ids, minlength=n_replicates)
    Z[capped] = 0
    vertices[capped] = 0
    return LevelProfiles(Z=Z, vertices=vertices, capped=capped)


def quenched_regeneration_counts(
    tree: EnvTree,
    p: int,
    ell: int,
    n_replicates: int,
    rng: np.random.Generator,
    caps: Optional[Caps] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Regeneration-set sizes below level ell for independent ranges on one frozen environment"""
    caps = caps or Caps()
    counts = np.zeros(n_replicates, dtype=np.int64)
    capped = np.zeros(n_replicates, dtype=bool)
    ids = np.arange(n_replicates)
    env = np.zeros(n_replicates, dtype=np.int64)
    types = np.full(n_replicates, p, dtype=np.int64)
    k = 0
    while len(types):
        if k >= caps.max_depth:
            capped[np.unique(ids)] = True
            break
        try:
            rows, types, env = _quenched_step(tree, env, types, rng)
        except CappedGrowth:
            capped[np.unique(ids)] = True
            break
        ids = ids[rows]
        k += 1
        if k > ell:
            ones = types == 1
            counts += np.bincount(ids[ones], minlength=n_replicates)
            ids, types, env = ids[~ones], types[~ones], env[~ones]
        if len(ids) > caps.max_range_vertices:
            live = _enforce_cap(ids, n_replicates, capped, caps.max_range_vertices)
            ids, types, env = ids[live], types[live], env[live]
    return counts, capped


def quenched_survival(tree: EnvTree, m: int, n_replicates: int, rng: np.random.Generator, caps: Optional[Caps] = None) -> float:
    """Fraction of quenched ranges (p = 1) still alive at generation m"""
    profiles = quenched_level_profiles(tree, 1, m, n_replicates, rng, caps)
    valid = ~profiles.capped
    if not valid.any():
        return float("nan")
    return float((profiles.Z[valid, m] > 0).mean())
