"""
Tests for the experiment harness and small runs of the verification suites

Suite runs here use tiny sizes, so they check the report structure rather than
whether the limit theorems pass.
"""

from dataclasses import replace
import math

import numpy as np
import pytest

from env_model import make_gaussian_binary_family
from experiments.theorem1 import _ratio_panel
from limit_laws import assemble_constants
from models import Caps, ExperimentPlan, Provenance, VerificationReport
from montecarlo import (
    band_check,
    check_pgf_superadditivity,
    empirical_survival,
    level_profiles,
    limit_constants,
    oracle_check,
    panel_trees,
    panel_w,
    survival_from_profiles,
    survival_relative_se,
    target_band,
    trend_check,
    verify_constants,
    verify_prop_joint,
    verify_regeneration,
    verify_theorem1,
    verify_theorem2,
    verify_yaglom,
)
from range_sampler import LevelProfiles, sample_level_profiles


def small_plan(**kwargs) -> ExperimentPlan:
    base = dict(
        spec=make_gaussian_binary_family(3.0),
        kappa=3.0,
        n_grid=(10, 20),
        lambda_grid=(0.5, 1.0),
        replicates=400,
        batch_size=100,
        master_seed=7,
        panel_size=0,
        constant_replicates=500,
        w_samples=200,
        w_level=6,
    )
    base.update(kwargs)
    return ExperimentPlan(**base)


def test_results_do_not_depend_on_worker_count():
    """Batches are seeded by index, so one worker and two workers agree exactly"""
    plan = small_plan()
    serial = level_profiles(plan, 1, 6, "workers")
    pooled = level_profiles(replace(plan, workers=2), 1, 6, "workers")
    assert np.array_equal(serial.Z, pooled.Z)
    assert np.array_equal(serial.capped, pooled.capped)
    other = level_profiles(plan, 1, 6, "another-label")
    assert not np.array_equal(serial.Z, other.Z)


def test_walker_mode_keeps_the_identities():
    plan = small_plan(mode="walker", replicates=100, caps=Caps(max_steps=20_000))
    profiles = level_profiles(plan, 2, 3, "walker-identities")
    assert profiles.identity_failures == 0
    assert profiles.Z.shape == (100, 4)
    assert np.all(profiles.Z[profiles.valid, 0] == 2)


def test_survival_from_synthetic_profiles():
    profiles = LevelProfiles(
        Z=np.array([[1, 1, 0], [1, 0, 0], [1, 2, 1], [1, 1, 1]]),
        vertices=np.ones((4, 3), dtype=np.int64),
        capped=np.array([False, False, False, True]),
    )
    est = survival_from_profiles(profiles, 1)
    assert est.replicates == 3
    assert est.survivors == 2
    assert est.p_hat == pytest.approx(2.0 / 3.0)
    assert est.se == pytest.approx(math.sqrt(2.0 / 9.0 / 3.0))
    assert est.ci_low < est.p_hat < est.ci_high
    assert est.warnings  # fewer than the minimum survivors
    assert survival_from_profiles(profiles, 0).p_hat == 1.0


def test_empirical_survival_edge_levels():
    plan = small_plan()
    assert empirical_survival(plan, 0).p_hat == 1.0
    with pytest.raises(ValueError):
        empirical_survival(plan, -1)
    est = empirical_survival(plan, 3)
    assert 0.0 < est.p_hat < 1.0
    assert est.quenched_p_hat is None


def test_pgf_superadditivity_holds_for_ranges():
    profiles = sample_level_profiles(make_gaussian_binary_family(3.0), 1, 5000, 4, np.random.default_rng(0))
    checks = check_pgf_superadditivity(profiles.Z, [(1, 1), (2, 2), (1, 3), (3, 3)], s=0.3)
    assert len(checks) == 3  # (3, 3) lies beyond the recorded depth
    assert all(c.passed for c in checks)


def test_pgf_superadditivity_flags_a_violation():
    Z = np.column_stack([np.ones(50), np.zeros(50), np.full(50, 5)]).astype(np.int64)
    checks = check_pgf_superadditivity(Z, [(1, 1)])
    assert not checks[0].passed


def test_band_check():
    assert band_check("close", 1.1, 1.0, 0.05, 0.02).passed
    assert not band_check("far", 1.1, 1.0, 0.05, 0.0).passed


def test_trend_check():
    assert trend_check("down", [0.3, 0.2, 0.1], [0.01] * 3).passed
    assert not trend_check("up", [0.1, 0.3], [0.01, 0.01]).passed
    wobble = trend_check("wobble", [0.1, 0.11, 0.05], [0.01] * 3)
    assert wobble.passed and wobble.value == 1.0
    assert not trend_check("wobble", [0.1, 0.11, 0.05], [0.01] * 3, max_inversions=0).passed


def test_limit_constants_for_kappa_three():
    plan = small_plan()
    consts, warnings = limit_constants(plan)
    assert consts.provenance["c_0"].source == "closed_form"
    assert consts.provenance["C_infty"].source == "monte_carlo"
    assert consts.provenance["C_infty"].se > 0
    assert consts.survival_rate == pytest.approx(1.0 / consts.c_0)
    assert survival_relative_se(consts) == 0.0
    band = target_band(consts, plan, "yaglom_curve", lambdas=[0.5, 1.0])
    assert np.array_equal(band, np.zeros(2))


def test_target_band_for_estimated_constants():
    consts = assemble_constants(1.5, c_kappa=0.3, C_infty=0.6, provenance={
        "C_infty": Provenance(source="monte_carlo", se=0.06),
        "c_kappa": Provenance(source="monte_carlo", se=0.03),
    })
    assert survival_relative_se(consts) == pytest.approx(math.sqrt(0.02) / 0.5)
    plan = small_plan(spec=make_gaussian_binary_family(1.5), kappa=1.5)
    band = target_band(consts, plan, "yaglom_curve", lambdas=[0.5, 1.0])
    assert band.shape == (2,)
    assert np.all(band > 0)


def test_panel_trees_survive_and_repeat():
    plan = small_plan(panel_size=3)
    trees = panel_trees(plan)
    assert len(trees) == 3
    W = panel_w(trees, 4)
    assert np.all(W > 0)
    again = panel_w(panel_trees(plan), 4)
    assert np.array_equal(W, again)


def test_yaglom_report_structure():
    report = verify_yaglom(small_plan(replicates=1000))
    assert report.kind == "yaglom"
    assert report.master_seed == 7
    assert report.checks
    assert len(report.curves) == 4
    assert report.passed == all(c.passed for c in report.checks)
    assert "constants" in report.estimates


def test_theorem1_report_structure():
    report = verify_theorem1(small_plan())
    assert report.kind == "theorem1"
    assert len(report.tables["survival"]) == 2
    assert [row["m"] for row in report.estimates["survival"]] == [10, 20]
    assert any(c.name.startswith("pgf superadditivity") for c in report.checks)


def test_single_reduction_report():
    report = verify_regeneration(small_plan(p=2, level=1))
    assert report.kind == "reduce"
    by_name = {c.name: c for c in report.checks}
    assert by_name["regeneration set is an antichain"].passed
    assert by_name["reduced L_k = Z_k + Z_(k+1)"].passed
    assert by_name["forest size from the Lukasiewicz path"].passed
    assert report.estimates["level"] == 1
    assert report.tables["encoding"]


def test_walker_mode_martingale_means():
    """E[Z_k] = 1 for walks started with one excursion"""
    plan = small_plan(mode="walker", replicates=2000, caps=Caps(max_steps=50_000))
    profiles = level_profiles(plan, 1, 2, "walker-martingale")
    Z = profiles.Z[profiles.valid].astype(float)
    assert profiles.cap_hit_rate < 0.02
    for k in (1, 2):
        se = Z[:, k].std(ddof=1) / math.sqrt(len(Z))
        assert abs(Z[:, k].mean() - 1.0) < 4 * se


def test_oracle_walker_and_range_sampler_agree():
    plan = small_plan(oracle_replicates=600, caps=Caps(max_steps=50_000))
    report = oracle_check(plan)
    assert report.kind == "oracle-check"
    by_name = {c.name: c for c in report.checks}
    assert by_name["walk identities"].passed
    equivalence = [c for c in report.checks if "walker vs range" in c.name or c.name.startswith("range size")]
    assert len(equivalence) == 8
    assert all(c.passed for c in equivalence)
    assert sum(c.name.startswith("geometric law") for c in report.checks) == 40
    assert sorted(report.estimates["martingale_means"]) == list(range(1, 11))


def test_theorem1_survival_band():
    """n P(Z_n > 0) is close to 1 / c_0 already at n = 40"""
    report = verify_theorem1(small_plan(n_grid=(20, 40), replicates=20_000, batch_size=5000))
    band = next(c for c in report.checks if c.name == "n p_m(n) at n=40")
    assert band.passed
    assert band.target == pytest.approx(0.4126, abs=1e-3)


def test_ratio_panel_without_annealed_survivors():
    report = VerificationReport(kind="theorem1", passed=False)
    _ratio_panel(small_plan(panel_size=3), report, 20, 0.0)
    [check] = report.checks
    assert not check.passed
    assert "undefined" in check.detail


def test_theorem2_report_structure():
    report = verify_theorem2(small_plan())
    assert report.kind == "theorem2"
    assert len(report.curves) == 4
    assert report.estimates["w_mean"] > 0
    assert [c.name for c in report.checks if c.name.startswith("mean L/n")] == ["mean L/n at n=10", "mean L/n at n=20"]
    assert set(report.estimates["sup_distance"]) == {"10", "20"}


def test_prop_joint_report_structure():
    report = verify_prop_joint(small_plan(replicates=2000, lambda_grid=(0.25, 0.5, 1.0)))
    assert report.kind == "prop-joint"
    assert report.estimates["m"] == 20  # critical generation of n = 20 at kappa = 3
    assert report.estimates["rho"] == 4
    assert len(report.tables["joint"]) == 9
    assert sum(c.name.startswith("symmetry") for c in report.checks) == 3


def test_constants_report_for_kappa_three():
    report = verify_constants(small_plan())
    assert report.kind == "constants"
    names = [c.name for c in report.checks]
    assert any(name.startswith("C_infty stable from depth") for name in names)
    assert "C_infty <= 1" in names
    assert report.estimates["constants"]["provenance"]["c_0"]["source"] == "closed_form"
    assert report.estimates["spine"]["replicates"] == 500


def test_prop_joint_uses_the_critical_generation():
    plan = small_plan(spec=make_gaussian_binary_family(1.5), kappa=1.5, n_grid=(10, 100), replicates=1000)
    report = verify_prop_joint(plan)
    assert report.estimates["m"] == 10  # floor(100^(kappa - 1))
    assert report.estimates["rho"] == 3
