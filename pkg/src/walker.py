"""
Quenched nearest-neighbour walk on an environment tree

Ground-truth implementation: the walk is simulated step by step, growing the
tree on first arrival at a vertex and tallying every downward edge crossing.
"""

from bisect import bisect_right
import logging
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import special

from errors import CappedGrowth, DepthCapExceeded, StepCapExceeded, TreeWalkError
from env_model import ESTAR, EnvTree
from models import Caps, LevelStats, TransitionWeights, WalkRecord

logger = logging.getLogger('treewalk')

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

UNIFORM_BLOCK = 1 << 16


def transition_weights(tree: EnvTree, vertex: int) -> TransitionWeights:
    """
    Jump probabilities out of vertex

    p(x, x*) = exp(-V(x)) / (exp(-V(x)) + sum_i exp(-V(x^i))), computed from the
    children's marks so that large potentials never overflow. From e* the walk
    moves to e with probability 1.
    """
    if vertex == ESTAR:
        return TransitionWeights(p_up=0.0, p_children=(1.0,))
    kids = tree.grow_children(vertex)
    if len(kids) == 0:
        return TransitionWeights(p_up=1.0)
    neg_marks = -np.array([tree.mark[c] for c in kids])
    log_norm = np.logaddexp(0.0, special.logsumexp(neg_marks))
    p_children = np.exp(neg_marks - log_norm)
    p_up = float(np.exp(-log_norm))
    # renormalise so the invariant holds to rounding
    total = p_up + float(p_children.sum())
    return TransitionWeights(p_up=p_up / total, p_children=tuple(float(q) for q in p_children / total))


def _jump_table(tree: EnvTree, vertex: int) -> Tuple[List[float], range]:
    cached = tree.weights_cache.get(vertex)
    if cached is None:
        w = transition_weights(tree, vertex)
        cum = np.cumsum((w.p_up,) + w.p_children).tolist()
        cached = (cum, tree.children[vertex])
        tree.weights_cache[vertex] = cached
    return cached


def run_walk(
    tree: EnvTree,
    p: int,
    caps: Optional[Caps] = None,
    seed: SeedLike = 0,
    debug: bool = False,
) -> WalkRecord:
    """
    Run the walk from e until its p-th crossing of (e*, e)

    Args:
        tree: Environment, grown lazily and shared across walks in quenched mode
        p: Number of excursion blocks
        caps: Step and depth budget; defaults to the tree's caps
        seed: Seed, SeedSequence or Generator for the walk's own randomness
        debug: Keep the level trajectory |X_1|, ..., |X_tau| (-1 stands for e*)

    Returns:
        WalkRecord; on a cap the record is partial with completed=False and cap_hit set
    """
    if p < 1:
        raise ValueError("p must be a positive integer")
    caps = caps or tree.caps
    rng = np.random.default_rng(seed)
    record = WalkRecord(p=p, trajectory=[] if debug else None)
    counts = record.edge_counts
    depth = tree.depth
    trajectory = record.trajectory

    uniforms = rng.random(UNIFORM_BLOCK)
    used = 0
    x = tree.root
    steps = 0
    blocks = 0
    deepest = 0
    try:
        while True:
            if steps >= caps.max_steps:
                raise StepCapExceeded(steps)
            if x == ESTAR:
                x = tree.root
                counts[x] = counts.get(x, 0) + 1
                steps += 1
                if trajectory is not None:
                    trajectory.append(0)
                blocks += 1
                if blocks == p:
                    record.completed = True
                    break
                continue
            cum, kids = _jump_table(tree, x)
            if used == UNIFORM_BLOCK:
                uniforms = rng.random(UNIFORM_BLOCK)
                used = 0
            u = uniforms[used]
            used += 1
            j = bisect_right(cum, u)
            steps += 1
            if j == 0:
                x = tree.parent[x]
                if trajectory is not None:
                    trajectory.append(depth[x] if x != ESTAR else -1)
                continue
            child = kids[min(j, len(kids)) - 1]
            if depth[child] > caps.max_depth:
                raise DepthCapExceeded(child)
            counts[child] = counts.get(child, 0) + 1
            x = child
            if depth[x] > deepest:
                deepest = depth[x]
            if trajectory is not None:
                trajectory.append(depth[x])
    except CappedGrowth as e:
        record.cap_hit = e.reason
    record.tau_p = steps
    record.max_depth_reached = deepest
    if record.cap_hit:
        logger.debug(f"🧱 walk stopped by {record.cap_hit} cap after {steps} steps")
    return record


def _levels(Z: List[int]) -> LevelStats:
    Z = list(Z) or [0]
    L = [Z[k] + (Z[k + 1] if k + 1 < len(Z) else 0) for k in range(len(Z))]
    return LevelStats(Z=tuple(Z), L=tuple(L))


def trajectory_local_times(trajectory: List[int]) -> List[int]:
    """L_k counted directly from the level trajectory"""
    levels = np.asarray([lv for lv in trajectory if lv >= 0], dtype=np.int64)
    if len(levels) == 0:
        return [0]
    return np.bincount(levels).tolist()


def level_stats(record: WalkRecord, tree: EnvTree) -> LevelStats:
    """
    Z_k = sum over |x| = k of N_x and L_k = Z_k + Z_{k+1}

    When the record carries a trajectory, L is cross-checked against a direct tally.
    """
    depth = tree.depth
    top = max((depth[v] for v in record.edge_counts), default=0)
    Z = [0] * (top + 1)
    for v, n in record.edge_counts.items():
        Z[depth[v]] += n
    stats = _levels(Z)
    if record.trajectory is not None and record.completed:
        direct = trajectory_local_times(record.trajectory)
        direct += [0] * (len(stats.L) - len(direct))
        if tuple(direct) != stats.L:
            raise TreeWalkError("level local times disagree with the trajectory tally")
    return stats


def annealed_walk(tree_factory, p: int, caps: Caps, seed: np.random.SeedSequence) -> Tuple[WalkRecord, EnvTree]:
    """Walk on a fresh environment; tree and walk randomness both forked from seed"""
    tree_seq, walk_seq = seed.spawn(2)
    tree = tree_factory(int(tree_seq.generate_state(1, np.uint64)[0]))
    return run_walk(tree, p, caps, walk_seq), tree
