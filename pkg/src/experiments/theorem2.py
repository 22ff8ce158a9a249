"""
Local time at the critical generation: (1/n) L^(n)_{m(n)} against the W-mixed CSBP transform

L^(n) is sampled from the annealed range with initial type n, one fresh
environment per replicate.
"""

import logging
import math

import numpy as np

from estimators import empirical_laplace
from limit_laws import phi_kappa, theorem_limits
from models import Check, CurveRow, ExperimentPlan, VerificationReport
from montecarlo import (
    band_check,
    cap_warnings,
    finish,
    level_profiles,
    limit_constants,
    new_report,
    target_band,
    w_samples,
)
import rng as rngs

logger = logging.getLogger('treewalk')


def run(plan: ExperimentPlan) -> VerificationReport:
    report = new_report("theorem2", plan)
    consts, warnings = limit_constants(plan)
    report.warnings.extend(warnings)
    report.estimates["constants"] = consts.model_dump()
    W = w_samples(plan)
    lams = np.asarray(plan.lambda_grid, dtype=float)
    limits = theorem_limits(consts, a=plan.a, lambdas=lams, W_samples=W)
    target = np.asarray(limits.local_time_curve)
    # spread over the W draws plus the Monte Carlo constants
    mixed = np.exp(-limits.C_kappa_a * np.outer(W, 1.0 - np.atleast_1d(phi_kappa(plan.kappa, 2.0 * lams / limits.C_kappa_a))))
    target_se = np.hypot(mixed.std(axis=0, ddof=1) / math.sqrt(len(W)),
                         target_band(consts, plan, "local_time_curve", lambdas=lams, W_samples=W))
    report.estimates["w_mean"] = float(W.mean())

    sups, rates = [], []
    for n in plan.n_grid:
        m = plan.critical_generation(n)
        profiles = level_profiles(plan, n, m + 1, f"theorem2-{n}")
        rates.append(profiles.cap_hit_rate)
        X = profiles.L[profiles.valid, m] / n
        mean_se = float(X.std(ddof=1) / math.sqrt(len(X)))
        report.checks.append(band_check(f"mean L/n at n={n}", float(X.mean()), 2.0, 0.0, mean_se))
        lap = empirical_laplace(X, lams, rng=rngs.generator(plan.master_seed, "bootstrap", "theorem2", n))
        report.warnings.extend(lap.warnings)
        gaps = []
        for i, lam in enumerate(lams):
            report.curves.append(CurveRow(n=n, lam=float(lam), empirical=lap.values[i], band_lo=lap.band_lo[i],
                                          band_hi=lap.band_hi[i], target=float(target[i])))
            gaps.append((abs(lap.values[i] - target[i]), math.hypot(lap.se[i], target_se[i])))
        sups.append(gaps)
        if 0.0 in plan.lambda_grid:
            i = plan.lambda_grid.index(0.0)
            report.checks.append(Check(name=f"transform at lambda=0, n={n}", passed=lap.values[i] == 1.0,
                                       value=lap.values[i], target=1.0))

    last = sups[-1]
    worst = max(gap - 3.0 * band for gap, band in last)
    report.checks.append(Check(
        name=f"sup distance at n={plan.n_grid[-1]}",
        passed=worst <= plan.tolerance,
        value=max(gap for gap, _ in last),
        target=0.0,
        detail=f"every |empirical - target| <= {plan.tolerance} + 3 pooled s.e.",
    ))
    report.estimates["sup_distance"] = {str(n): max(g for g, _ in s) for n, s in zip(plan.n_grid, sups)}
    report.cap_hit_rate = float(max(rates))
    report.warnings.extend(cap_warnings(report.cap_hit_rate, "ranges"))
    return finish(report)
