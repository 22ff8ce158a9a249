"""
Tests for the limiting objects and constants
"""

import math

import numpy as np
import pytest

from env_model import make_gaussian_binary_family, psi_and_derivative
from errors import BranchMismatch, DomainError
from limit_laws import (
    CsbpSpec,
    SpineWalk,
    assemble_constants,
    closed_form_c0,
    constants_closed_form,
    csbp_flow,
    csbp_laplace,
    estimate_C_constants,
    estimate_c_kappa,
    gamma_reflection_residual,
    gamma_term,
    joint_transform_limit,
    phi_kappa,
    spine_sampler,
    spine_tilt_moment,
    survival_scale,
    theorem_limits,
)
from models import EnvironmentSpec, FamilyId, TableRow

LN2 = math.log(2.0)
SIGMA2_K3 = 2.0 * LN2 / 3.0
C0_K3 = 0.5 / (1.0 - math.exp(-LN2 + SIGMA2_K3))


def test_phi_values():
    assert phi_kappa(3.0, 0.0) == 1.0
    assert phi_kappa(3.0, 1.0) == pytest.approx(0.5)
    assert phi_kappa(2.0, 3.0) == pytest.approx(0.25)
    assert phi_kappa(1.5, 1.0) == pytest.approx(0.75)
    curve = phi_kappa(1.5, np.array([0.0, 0.5, 1.0, 4.0]))
    assert isinstance(curve, np.ndarray)
    assert curve[0] == 1.0
    assert np.all(np.diff(curve) < 0)


def test_phi_domain():
    with pytest.raises(DomainError):
        phi_kappa(1.0, 1.0)
    with pytest.raises(DomainError):
        phi_kappa(3.0, -0.1)


def test_csbp_flow_composes():
    """v(0, s + t, lambda) = v(0, t, v(0, s, lambda))"""
    rng = np.random.default_rng(0)
    for _ in range(1000):
        kappa = rng.uniform(1.05, 4.0)
        spec = CsbpSpec(kappa=kappa, branching_scale=rng.uniform(0.1, 3.0))
        s, t, lam = rng.uniform(0.0, 5.0, size=3)
        direct = csbp_flow(spec, 0.0, s + t, lam)
        composed = csbp_flow(spec, 0.0, t, csbp_flow(spec, 0.0, s, lam))
        assert composed == pytest.approx(direct, rel=1e-12)
    assert csbp_flow(CsbpSpec(1.5, 1.0), 2.0, 2.0, 0.7) == pytest.approx(0.7)
    with pytest.raises(DomainError):
        csbp_flow(CsbpSpec(1.5, 1.0), 2.0, 1.0, 0.7)
    with pytest.raises(DomainError):
        CsbpSpec(1.5, 0.0)


def test_feller_laplace():
    """kappa >= 2 gives the Feller diffusion transform exp(-y lambda / (1 + c t lambda))"""
    spec = CsbpSpec(kappa=3.0, branching_scale=0.5)
    assert csbp_laplace(spec, 2.0, 0.0, 1.0, 1.0) == pytest.approx(math.exp(-2.0 / 1.5))
    assert csbp_laplace(spec, 0.0, 0.0, 1.0, 1.0) == 1.0
    with pytest.raises(DomainError):
        csbp_laplace(spec, 1.0, 0.0, 1.0, -1.0)


def test_gamma_terms():
    assert gamma_term(1.5) == pytest.approx(2.0 * math.sqrt(math.pi))
    for kappa in (1.1, 1.5, 1.9):
        assert abs(gamma_reflection_residual(kappa)) < 1e-10


def test_closed_form_c0():
    spec = make_gaussian_binary_family(3.0)
    assert closed_form_c0(spec, 3.0) == pytest.approx(C0_K3, rel=1e-10)
    assert 1.0 / closed_form_c0(spec, 3.0) == pytest.approx(0.4126, abs=1e-4)
    with pytest.raises(BranchMismatch):
        closed_form_c0(make_gaussian_binary_family(2.0), 2.0)


def test_assemble_constants_kappa_two():
    consts = assemble_constants(2.0, c_kappa=0.8, C_infty=0.5)
    assert consts.C_bold_kappa == pytest.approx(0.4)
    assert consts.gamma_term is None
    assert survival_scale(consts) == pytest.approx(0.5 * 0.8)
    assert consts.survival_rate == pytest.approx(1.0 / 0.4)
    assert consts.provenance["C_bold_kappa"].source == "derived"


def test_assemble_constants_stable_branch():
    consts = assemble_constants(1.5, c_kappa=0.3, C_infty=0.6)
    gt = 2.0 * math.sqrt(math.pi)
    assert consts.gamma_term == pytest.approx(gt)
    assert consts.C_bold_kappa == pytest.approx(0.3 * gt)
    assert survival_scale(consts) == pytest.approx((0.5 * 0.6 * 0.3 * gt) ** 2)
    assert consts.provenance["gamma_term"].source == "closed_form"


def test_missing_inputs_leave_the_survival_rate_empty():
    consts = assemble_constants(1.5, c_kappa=0.3)
    assert consts.survival_rate is None
    with pytest.raises(BranchMismatch):
        survival_scale(consts)


def test_theorem_limits_kappa_three():
    consts = constants_closed_form(make_gaussian_binary_family(3.0), 3.0)
    assert consts.provenance["c_0"].source == "closed_form"
    lams = [0.25, 0.5, 1.0]
    limits = theorem_limits(consts, lambdas=lams, joint_grid=[(0.5, 0.5)])
    assert limits.survival == pytest.approx(1.0 / C0_K3)
    assert limits.yaglom_scale == pytest.approx(C0_K3)
    for lam, value in zip(lams, limits.yaglom_curve):
        assert value == pytest.approx(1.0 / (1.0 + 2.0 * lam * C0_K3))
    assert limits.joint_curve["0.5,0.5"] == pytest.approx(joint_transform_limit(3.0, 0.5, 0.5))
    assert joint_transform_limit(3.0, 0.5, 0.5) == pytest.approx(math.exp(-(1.0 - 1.0 / 3.0)))

    doubled = theorem_limits(consts, a=2.0)
    assert doubled.survival == pytest.approx(limits.survival / 2.0)
    assert theorem_limits(consts, W=2.0).survival == pytest.approx(2.0 * limits.survival)
    with pytest.raises(DomainError):
        theorem_limits(consts, a=0.0)


def test_local_time_curve_starts_with_slope_two():
    """1 - E[exp(-C(1 - phi(2 lambda / C)) W)] ~ 2 lambda E[W] near 0"""
    consts = constants_closed_form(make_gaussian_binary_family(3.0), 3.0)
    lam = 1e-6
    limits = theorem_limits(consts, lambdas=[lam], W_samples=[0.5, 1.5])
    assert (1.0 - limits.local_time_curve[0]) / lam == pytest.approx(2.0, rel=1e-4)


def test_spine_tilt_moment():
    spec = make_gaussian_binary_family(3.0)
    theta = 0.5
    expected = math.exp(psi_and_derivative(spec, 1.5)[0] - psi_and_derivative(spec, 1.0)[0])
    assert spine_tilt_moment(spec, theta) == pytest.approx(expected)
    steps = SpineWalk(spec).steps(np.random.default_rng(0), 200_000)
    values = np.exp(-theta * steps)
    se = values.std(ddof=1) / math.sqrt(len(values))
    assert abs(values.mean() - expected) < 4 * se


def test_spine_drift_matches_psi():
    spec = make_gaussian_binary_family(3.0)
    walk = SpineWalk(spec)
    assert walk.drift == pytest.approx(LN2 - SIGMA2_K3 / 2.0)
    steps = walk.steps(np.random.default_rng(1), 100_000)
    se = steps.std(ddof=1) / math.sqrt(len(steps))
    assert abs(steps.mean() - walk.drift) < 4 * se
    paths = walk.paths(np.random.default_rng(1), 10, 7)
    assert paths.shape == (10, 7)


def test_spine_sampler():
    spec = make_gaussian_binary_family(3.0)
    assert isinstance(spine_sampler(spec, np.random.default_rng(0)), float)
    steps = spine_sampler(spec, np.random.default_rng(2), 200_000)
    se = steps.std(ddof=1) / math.sqrt(len(steps))
    assert abs(steps.mean() - 2.0 * LN2 / 3.0) < 4 * se
    tilted = np.exp(-steps)
    se = tilted.std(ddof=1) / math.sqrt(len(tilted))
    assert abs(tilted.mean() - 2.0 ** (-1.0 / 3.0)) < 4 * se
    point = EnvironmentSpec(FamilyId.FINITE_SUPPORT, table=(TableRow(1.0, (LN2, LN2)),))
    assert np.allclose(spine_sampler(point, np.random.default_rng(3), 50), LN2)


def test_spine_constants():
    spec = make_gaussian_binary_family(3.0)
    first = estimate_C_constants(spec, replicates=2000, seed=5)
    again = estimate_C_constants(spec, replicates=2000, seed=5)
    assert first.C_infty == again.C_infty
    assert 0.0 < first.C_infty <= 1.0
    assert 0.0 < first.c_infty_bold < math.inf
    assert first.C_infty_se > 0
    assert first.truncation_depth == math.ceil(50 / (LN2 - SIGMA2_K3 / 2.0))
    assert first.relative_remainder < 0.01


def test_c_kappa_branch():
    with pytest.raises(BranchMismatch):
        estimate_c_kappa(make_gaussian_binary_family(3.0), 3.0)
    tail = estimate_c_kappa(make_gaussian_binary_family(1.5), 1.5, replicates=20_000, seed=2,
                            batch_size=10_000, groups=10)
    assert tail.c_kappa > 0
    assert tail.samples + tail.capped == 20_000
    assert tail.fit.index > 0
