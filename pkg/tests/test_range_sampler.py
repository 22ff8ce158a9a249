"""
Tests for the direct range sampler

Negative multinomial offspring laws, the geometric law of a single edge local
time, the martingale property of Z_k and agreement between the pruned
regeneration sampler and regeneration sets extracted from full ranges.
"""

import math

import numpy as np
import pytest
from scipy import stats

from env_model import EnvTree, additive_martingale, make_gaussian_binary_family
from estimators import gof_tests
from models import Caps, TransitionWeights
from range_sampler import (
    LevelProfiles,
    RangeTree,
    geometric_restart_pmf,
    h_and_hit,
    offspring_pmf,
    quenched_level_profiles,
    quenched_regeneration_counts,
    quenched_survival,
    sample_level_profiles,
    sample_offspring_counts,
    sample_range,
    sample_regeneration_counts,
)
from reduction import extract_regeneration_set
from walker import run_walk

SPEC = make_gaussian_binary_family(3.0)


def test_h_and_hit_on_short_paths():
    root = h_and_hit([0.0])
    assert root.H == 1.0 and root.hit_prob == 1.0 and root.return_prob == 0.0
    a = 0.7
    path = h_and_hit([0.0, a])
    assert path.H == pytest.approx(1.0 + math.exp(-a))
    assert path.hit_prob == pytest.approx(math.exp(-a) / (1.0 + math.exp(-a)))
    assert path.mean_visits == pytest.approx(math.exp(-a))


def test_geometric_restart_pmf_sums_to_one_with_mean_exp_minus_v():
    path = h_and_hit([0.0, 0.4, -0.3, 0.9])
    probs = np.array([geometric_restart_pmf(path, j) for j in range(400)])
    assert probs.sum() == pytest.approx(1.0, abs=1e-10)
    assert float(np.dot(np.arange(400), probs)) == pytest.approx(path.mean_visits, rel=1e-8)


def test_offspring_pmf_is_normalised():
    w = TransitionWeights(p_up=0.5, p_children=(0.3, 0.2))
    total = sum(offspring_pmf(2, (c1, c2), w) for c1 in range(80) for c2 in range(80))
    assert total == pytest.approx(1.0, abs=1e-8)


def test_offspring_pmf_closed_forms():
    half = TransitionWeights(p_up=0.5, p_children=(0.5,))
    for j in range(8):
        assert offspring_pmf(1, (j,), half) == pytest.approx(2.0 ** -(j + 1), rel=1e-12)
        assert offspring_pmf(2, (j,), half) == pytest.approx((j + 1) * 2.0 ** -(j + 2), rel=1e-12)
    w = TransitionWeights(p_up=0.3, p_children=(0.5, 0.2))
    assert offspring_pmf(4, (0, 0), w) == pytest.approx(0.3 ** 4)
    assert len(sample_offspring_counts(3, TransitionWeights(p_up=1.0, p_children=()), np.random.default_rng(0))) == 0


def test_offspring_counts_match_the_exact_pmf():
    """Chi-square of sampled (c1, c2) cells against the negative multinomial pmf"""
    w = TransitionWeights(p_up=0.5, p_children=(0.25, 0.25))
    rng = np.random.default_rng(6)
    n = 20_000
    draws = np.array([sample_offspring_counts(2, w, rng) for _ in range(n)])
    cells = [(c1, c2) for c1 in range(6) for c2 in range(6) if c1 + c2 <= 5]
    observed = [int(np.sum((draws[:, 0] == c1) & (draws[:, 1] == c2))) for c1, c2 in cells]
    expected = [n * offspring_pmf(2, cell, w) for cell in cells]
    observed.append(n - sum(observed))
    expected.append(n - sum(expected))
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_offspring_counts_have_negative_multinomial_means():
    w = TransitionWeights(p_up=0.4, p_children=(0.45, 0.15))
    rng = np.random.default_rng(0)
    k = 3
    draws = np.array([sample_offspring_counts(k, w, rng) for _ in range(20_000)])
    for i, q in enumerate(w.p_children):
        expected = k * q / w.p_up
        se = draws[:, i].std(ddof=1) / math.sqrt(len(draws))
        assert abs(draws[:, i].mean() - expected) < 4 * se


def test_range_tree_structure():
    rt = sample_range(SPEC, 2, seed=3)
    assert rt.complete
    assert rt.p == 2
    assert np.all(np.diff(rt.parent[1:]) >= 0)
    assert np.all(rt.types >= 1)
    stats = rt.level_stats()
    assert stats.Z[0] == 2
    assert len(rt.summary_rows()) == rt.height + 1
    assert int(rt.vertex_counts().sum()) == rt.size
    assert sorted(rt.depth_first_order()) == list(range(rt.size))
    for v in range(1, rt.size):
        assert rt.generation[v] == rt.generation[rt.parent[v]] + 1


def test_range_depth_cap():
    rt = sample_range(SPEC, 200, caps=Caps(max_depth=3), seed=1)
    assert rt.cap_hit == "depth"
    assert not rt.complete
    assert rt.height == 3


def test_level_profiles_are_martingales():
    """E[Z_k] = p for every k"""
    for p in (1, 2):
        profiles = sample_level_profiles(SPEC, p, 20_000, 4, np.random.default_rng(p))
        assert not profiles.capped.any()
        Z = profiles.Z.astype(float)
        assert np.all(Z[:, 0] == p)
        for k in range(1, 5):
            se = Z[:, k].std(ddof=1) / math.sqrt(len(Z))
            assert abs(Z[:, k].mean() - p) < 4 * se


def test_level_profiles_cap_drops_whole_replicates():
    profiles = sample_level_profiles(SPEC, 50, 200, 6, np.random.default_rng(0), max_vertices=300)
    assert profiles.capped.any()
    assert np.all(profiles.Z[profiles.capped] == 0)
    assert 0 < profiles.cap_hit_rate <= 1


def test_level_profiles_local_times_and_concat():
    a = LevelProfiles(Z=np.array([[1, 2, 0]]), vertices=np.array([[1, 1, 0]]), capped=np.array([False]))
    b = LevelProfiles(Z=np.array([[1, 0, 0]]), vertices=np.array([[1, 0, 0]]), capped=np.array([True]),
                      identity_failures=1)
    both = LevelProfiles.concat([a, b])
    assert both.L.tolist() == [[3, 2, 0], [1, 0, 0]]
    assert both.valid.tolist() == [True, False]
    assert both.cap_hit_rate == 0.5
    assert both.identity_failures == 1


def test_quenched_means_follow_the_potential():
    """E^E[Z_k] = W_k(tree) for p = 1"""
    tree = EnvTree(SPEC, seed=21)
    profiles = quenched_level_profiles(tree, 1, 2, 20_000, np.random.default_rng(5))
    for k in (1, 2):
        z = profiles.Z[:, k].astype(float)
        se = z.std(ddof=1) / math.sqrt(len(z))
        assert abs(z.mean() - additive_martingale(tree, k).W) < 4 * se


def test_quenched_first_generation_is_geometric():
    tree = EnvTree(SPEC, seed=8)
    rng = np.random.default_rng(12)
    kids = list(tree.grow_children(tree.root))
    samples = {x: [] for x in kids}
    for _ in range(3000):
        rt = sample_range(SPEC, 1, seed=rng, quenched_tree=tree, max_level=1)
        found = dict(zip(rt.env_vertex.tolist(), rt.types.tolist()))
        for x in kids:
            samples[x].append(found.get(x, 0))
    for x in kids:
        path = h_and_hit(tree.path_potentials(x))
        report = gof_tests(samples[x], pmf=lambda j, path=path: geometric_restart_pmf(path, j))[0]
        assert report.p_value > 1e-3


def test_walk_range_matches_edge_counts():
    tree = EnvTree(SPEC, seed=17, caps=Caps(max_steps=50_000))
    record = run_walk(tree, 1, seed=4)
    if not record.completed:
        pytest.skip("walk hit the step cap")
    rt = RangeTree.from_walk(record, tree)
    assert rt.size == len(record.edge_counts)
    assert int(rt.types.sum()) == sum(record.edge_counts.values())
    assert rt.discovery is not None and sorted(rt.discovery.tolist()) == list(range(rt.size))


def test_pruned_regeneration_sampler_matches_full_ranges():
    ell = 1
    counts, capped = sample_regeneration_counts(SPEC, 1, ell, 3000, np.random.default_rng(1))
    assert not capped.any()
    rng = np.random.default_rng(2)
    full = np.array([extract_regeneration_set(sample_range(SPEC, 1, seed=rng), ell).size for _ in range(3000)])
    pooled = math.hypot(counts.std(ddof=1), full.std(ddof=1)) / math.sqrt(3000)
    assert abs(counts.mean() - full.mean()) < 4 * pooled


def test_quenched_regeneration_and_survival():
    tree = EnvTree(SPEC, seed=30)
    counts, capped = quenched_regeneration_counts(tree, 5, 2, 200, np.random.default_rng(3))
    assert counts.shape == (200,) and not capped.any()
    assert np.all(counts >= 0)
    p = quenched_survival(tree, 3, 500, np.random.default_rng(4))
    assert 0.0 <= p <= 1.0
