"""
Conditioned local time: E[exp(-lambda L^(1)_{m(n)} / n) | L^(1)_{m(n)} > 0] against phi(2 lambda s)
"""

import logging
import math

import numpy as np

from estimators import empirical_laplace
from limit_laws import theorem_limits
from models import Check, CurveRow, ExperimentPlan, VerificationReport
from montecarlo import (
    cap_warnings,
    finish,
    level_profiles,
    limit_constants,
    new_report,
    target_band,
    trend_check,
)
import rng as rngs

logger = logging.getLogger('treewalk')


def run(plan: ExperimentPlan) -> VerificationReport:
    report = new_report("yaglom", plan)
    consts, warnings = limit_constants(plan)
    report.warnings.extend(warnings)
    report.estimates["constants"] = consts.model_dump()
    lams = np.asarray(plan.lambda_grid, dtype=float)
    limits = theorem_limits(consts, a=plan.a, lambdas=lams)
    target = np.asarray(limits.yaglom_curve)
    target_se = target_band(consts, plan, "yaglom_curve", lambdas=lams)
    report.estimates["yaglom_scale"] = limits.yaglom_scale

    sups, bands, excess, rates = [], [], [], []
    for n in plan.n_grid:
        m = plan.critical_generation(n)
        profiles = level_profiles(plan, 1, m + 1, f"yaglom-{n}")
        rates.append(profiles.cap_hit_rate)
        X = profiles.L[profiles.valid, m] / n
        lap = empirical_laplace(X, lams, conditioning="positive",
                                rng=rngs.generator(plan.master_seed, "bootstrap", "yaglom", n))
        report.warnings.extend(lap.warnings)
        report.estimates[f"survivors_n{n}"] = lap.n_effective
        if lap.n_effective == 0:
            sups.append(float("inf"))
            bands.append(0.0)
            excess.append(float("inf"))
            continue
        gaps = np.abs(np.asarray(lap.values) - target)
        pooled = np.hypot(np.asarray(lap.se), target_se)
        worst = int(np.argmax(gaps))
        sups.append(float(gaps[worst]))
        bands.append(float(pooled[worst]))
        excess.append(float(np.max(gaps - 3.0 * pooled)))
        for i, lam in enumerate(lams):
            report.curves.append(CurveRow(n=n, lam=float(lam), empirical=lap.values[i], band_lo=lap.band_lo[i],
                                          band_hi=lap.band_hi[i], target=float(target[i])))
        if 0.0 in plan.lambda_grid:
            i = plan.lambda_grid.index(0.0)
            report.checks.append(Check(name=f"conditioned transform at lambda=0, n={n}",
                                       passed=lap.values[i] == 1.0, value=lap.values[i], target=1.0))

    report.checks.append(Check(
        name=f"sup distance at n={plan.n_grid[-1]}",
        passed=excess[-1] <= plan.tolerance,
        value=sups[-1],
        target=0.0,
        detail=f"every |empirical - target| <= {plan.tolerance} + 3 pooled s.e.",
    ))
    if all(math.isfinite(s) for s in sups):
        report.checks.append(trend_check("sup distance trend", sups, bands, max_inversions=1))
    report.estimates["sup_distance"] = {str(n): s for n, s in zip(plan.n_grid, sups)}
    report.cap_hit_rate = float(max(rates))
    report.warnings.extend(cap_warnings(report.cap_hit_rate, "ranges"))
    return finish(report)
