"""
Tests for regeneration sets, reduced forests and their encodings
"""

import numpy as np
import pytest

from env_model import EnvTree, make_gaussian_binary_family
from estimators import gof_tests
from models import Caps, RegenerationSet
from range_sampler import RangeTree, sample_range
from reduction import (
    build_reduced_forest,
    encode_forest,
    extract_regeneration_set,
    first_hitting_index,
    reduced_level_stats,
)
from walker import level_stats, run_walk

SPEC = make_gaussian_binary_family(3.0)


def small_range(discovery=None) -> RangeTree:
    """
    0 (1)
    |-- 1 (2)
    |   |-- 3 (1)
    |   `-- 4 (3)
    `-- 2 (1)
        `-- 5 (1)
    """
    return RangeTree(
        parent=np.array([-1, 0, 0, 1, 1, 2]),
        types=np.array([1, 2, 1, 1, 3, 1]),
        potential=np.zeros(6),
        generation=np.array([0, 1, 1, 2, 2, 2]),
        discovery=None if discovery is None else np.array(discovery),
    )


def test_regeneration_set_depth_first():
    rt = small_range()
    regen = extract_regeneration_set(rt, 0)
    assert regen.members == (3, 2)
    assert regen.p == 1 and regen.level == 0
    # vertex 5 sits below the type-1 vertex 2, so only level 1 makes it eligible
    assert extract_regeneration_set(rt, 1).members == (3, 5)


def test_regeneration_set_discovery_order():
    rt = small_range(discovery=[0, 2, 1, 3, 4, 5])
    assert extract_regeneration_set(rt, 0).members == (2, 3)
    assert extract_regeneration_set(rt, 0, order="depth_first").members == (3, 2)
    with pytest.raises(ValueError):
        extract_regeneration_set(small_range(), 0, order="discovery")


def test_walk_record_needs_its_tree():
    tree = EnvTree(SPEC, seed=1, caps=Caps(max_steps=50_000))
    record = run_walk(tree, 1, Caps(max_steps=50_000), seed=1)
    with pytest.raises(ValueError):
        extract_regeneration_set(record, 0)


def test_reduced_forest_and_encoding():
    rt = small_range()
    forest, stats = build_reduced_forest(rt, extract_regeneration_set(rt, 0))
    assert [t.root for t in forest.subtrees] == [3, 2]
    assert forest.vertex_count == 3
    assert stats.Z == (2, 1)
    assert stats.L == (3, 1)
    assert reduced_level_stats(forest, p=1).Z == (1,)

    encoding = encode_forest(forest)
    assert encoding.heights == (0, 0, 1)
    assert encoding.lukasiewicz == (0, -1, -1, -2)
    assert encoding.vertex_counts == (1, 3)
    assert encoding.rows() == [(0, 0, 0), (1, 0, -1), (2, 1, -1), (3, 0, -2)]
    assert first_hitting_index(encoding.lukasiewicz, -1) == 1
    assert first_hitting_index(encoding.lukasiewicz, -2) == 3
    assert first_hitting_index(encoding.lukasiewicz, -3) == -1


def test_padding_appends_independent_ranges():
    rt = small_range()
    regen = extract_regeneration_set(rt, 0)
    forest, _ = build_reduced_forest(rt, regen, pad_to=4, spec=SPEC, seed=0)
    assert len(forest.subtrees) == 4
    assert forest.padded == 2
    assert all(t.types[0] == 1 and t.heights[0] == 0 for t in forest.subtrees)
    with pytest.raises(ValueError):
        build_reduced_forest(rt, regen, pad_to=4)


def test_lukasiewicz_first_hits_mark_tree_ends():
    """The path first reaches -j exactly where tree j ends"""
    empty = RegenerationSet(members=(), level=0, p=1)
    forest, _ = build_reduced_forest(small_range(), empty, pad_to=6, spec=SPEC, seed=3)
    encoding = encode_forest(forest)
    assert len(encoding.lukasiewicz) == forest.vertex_count + 1
    for j, count in enumerate(encoding.vertex_counts, start=1):
        assert first_hitting_index(encoding.lukasiewicz, -j) == count


def test_walk_range_level_sums_match_the_walk():
    caps = Caps(max_steps=50_000)
    checked = 0
    for i in range(10):
        tree = EnvTree(SPEC, seed=200 + i, caps=caps)
        record = run_walk(tree, 2, caps, seed=i)
        if not record.completed:
            continue
        checked += 1
        rt = RangeTree.from_walk(record, tree)
        assert rt.level_stats().Z == level_stats(record, tree).Z
        regen = extract_regeneration_set(record, 0, tree=tree)
        assert regen.members == extract_regeneration_set(rt, 0).members
        assert all(rt.types[v] == 1 for v in regen.members)
    assert checked > 0


def test_sampled_ranges_reduce_cleanly():
    rt = sample_range(SPEC, 3, seed=11)
    regen = extract_regeneration_set(rt, 1)
    forest, stats = build_reduced_forest(rt, regen)
    assert len(forest.subtrees) == regen.size
    assert sum(stats.Z) == sum(sum(t.types) for t in forest.subtrees)
    assert all(rt.generation[v] > 1 for v in regen.members)


def test_reduced_subtrees_follow_the_type_one_range_law():
    """Below a regeneration point the range is a fresh annealed range started from one particle"""
    rng = np.random.default_rng(31)
    reduced, direct = [], []
    for _ in range(2000):
        rt = sample_range(SPEC, 2, seed=rng)
        forest, _ = build_reduced_forest(rt, extract_regeneration_set(rt, 1), pad_to=1, spec=SPEC, seed=rng)
        Z = reduced_level_stats(forest, 1).Z
        reduced.append(Z[1] if len(Z) > 1 else 0)
        Z = sample_range(SPEC, 1, seed=rng).level_stats().Z
        direct.append(Z[1] if len(Z) > 1 else 0)
    ks = gof_tests(reduced, direct)[1]
    assert ks.test == "ks-two-sample"
    assert ks.p_value > 1e-3
