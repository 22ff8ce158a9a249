"""
Reduced ranges: regeneration sets, reduced forests and their encodings
"""

import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from env_model import EnvTree
from models import (
    ForestEncoding,
    ReducedForest,
    ReducedLevelStats,
    ReducedSubtree,
    RegenerationSet,
    WalkRecord,
)
from range_sampler import RangeTree, sample_range

logger = logging.getLogger('treewalk')

Source = Union[RangeTree, WalkRecord]


def _as_range(source: Source, tree: Optional[EnvTree]) -> RangeTree:
    if isinstance(source, RangeTree):
        return source
    if tree is None:
        raise ValueError("a walk record needs its environment tree")
    return RangeTree.from_walk(source, tree)


def _eligible(rt: RangeTree, ell: int) -> np.ndarray:
    """True where every ancestor strictly between generation ell and the vertex has type >= 2"""
    ok = np.ones(rt.size, dtype=bool)
    gen = rt.generation
    for v in range(1, rt.size):
        if gen[v] > ell + 1:
            par = rt.parent[v]
            ok[v] = ok[par] and rt.types[par] >= 2
    return ok


def extract_regeneration_set(
    source: Source,
    ell: int,
    tree: Optional[EnvTree] = None,
    order: Optional[str] = None,
) -> RegenerationSet:
    """
    Vertices x with |x| > ell, N_x = 1 and N >= 2 on every ancestor strictly between ell and x

    Args:
        source: RangeTree, or a WalkRecord together with its tree
        ell: Level below which vertices are ignored
        tree: Environment of a WalkRecord source
        order: "discovery" (walk visit order) or "depth_first"; defaults to
            discovery when the range came from a walk

    Returns:
        RegenerationSet of RangeTree vertex indices
    """
    rt = _as_range(source, tree)
    if order is None:
        order = "discovery" if rt.discovery is not None else "depth_first"
    ok = _eligible(rt, ell)
    member = ok & (rt.types == 1) & (rt.generation > ell)
    if order == "discovery":
        if rt.discovery is None:
            raise ValueError("discovery order needs a range built from a walk")
        picked = np.nonzero(member)[0]
        members = picked[np.argsort(rt.discovery[picked], kind="stable")].tolist()
    else:
        members = [v for v in rt.depth_first_order() if member[v]]
    p = rt.p if rt.size else 0
    return RegenerationSet(members=tuple(int(v) for v in members), level=ell, p=p)


def _subtree(rt: RangeTree, root: int) -> ReducedSubtree:
    types, heights, kids = [], [], []
    base = int(rt.generation[root])
    stack = [root]
    while stack:
        v = stack.pop()
        types.append(int(rt.types[v]))
        heights.append(int(rt.generation[v]) - base)
        children = rt.children(v)
        kids.append(len(children))
        stack.extend(reversed(children))
    return ReducedSubtree(root=root, types=tuple(types), heights=tuple(heights), child_counts=tuple(kids))


def reduced_level_stats(forest: ReducedForest, p: Optional[int] = None) -> ReducedLevelStats:
    """Reduced Z_k(p) and L_k(p) over the first p subtrees (all of them by default)"""
    subtrees = forest.subtrees if p is None else forest.subtrees[:p]
    top = max((max(t.heights) for t in subtrees), default=0)
    Z = np.zeros(top + 1, dtype=np.int64)
    for t in subtrees:
        np.add.at(Z, np.asarray(t.heights), np.asarray(t.types))
    Z = Z.tolist()
    L = [Z[k] + (Z[k + 1] if k + 1 < len(Z) else 0) for k in range(len(Z))]
    return ReducedLevelStats(Z=tuple(Z), L=tuple(L))


def build_reduced_forest(
    source: Source,
    regen: RegenerationSet,
    tree: Optional[EnvTree] = None,
    pad_to: int = 0,
    spec=None,
    seed=None,
) -> Tuple[ReducedForest, ReducedLevelStats]:
    """
    Subtrees of the range rooted at the regeneration points, in the set's order

    With pad_to greater than the number of regeneration points, independent
    annealed type-1 ranges are appended until the forest has pad_to trees.
    """
    rt = _as_range(source, tree)
    forest = ReducedForest(subtrees=[_subtree(rt, v) for v in regen.members])
    missing = pad_to - len(forest.subtrees)
    if missing > 0:
        if spec is None:
            raise ValueError("padding needs the environment spec")
        rng = np.random.default_rng(seed)
        for _ in range(missing):
            extra = sample_range(spec, 1, seed=rng)
            forest.subtrees.append(_subtree(extra, 0))
        forest.padded = missing
    return forest, reduced_level_stats(forest)


def encode_forest(forest: ReducedForest) -> ForestEncoding:
    """
    Depth-first height function and Lukasiewicz path of the forest

    Trees are concatenated in order; the path starts at 0, moves by
    (children - 1) at every vertex and first reaches -j at the end of tree j.
    """
    heights: List[int] = []
    steps: List[int] = []
    counts: List[int] = []
    for t in forest.subtrees:
        heights.extend(t.heights)
        steps.extend(c - 1 for c in t.child_counts)
        counts.append(len(heights))
    path = np.concatenate(([0], np.cumsum(steps, dtype=np.int64))).astype(np.int64)
    return ForestEncoding(
        heights=tuple(heights),
        lukasiewicz=tuple(int(v) for v in path),
        vertex_counts=tuple(counts),
    )


def first_hitting_index(lukasiewicz, level: int) -> int:
    """First index at which the running Lukasiewicz values reach level (or -1)"""
    hits = np.nonzero(np.asarray(lukasiewicz) == level)[0]
    return int(hits[0]) if len(hits) else -1
