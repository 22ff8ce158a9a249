"""
Two-level joint transform

(E[exp(-lambda1 p_m L_m - lambda2 p_m L_{m+rho})])^(1/p_m) against
exp(-(1 - phi(2 lambda1 + 2 lambda2))), with p_m = P(Z^(1)_m > 0) estimated
from the same ranges and its uncertainty carried by the delta method.
"""

import logging
import math
from typing import Callable, Optional

import numpy as np

from config import PROPAGATED_RELATIVE_SE_WARN
from estimators import power_mean
from limit_laws import joint_transform_limit
from models import Check, ExperimentPlan, VerificationReport
from montecarlo import (
    band_check,
    cap_warnings,
    finish,
    level_profiles,
    new_report,
    survival_from_profiles,
)

logger = logging.getLogger('treewalk')

GRID_POINTS = 3


def default_rho(m: int) -> int:
    return math.isqrt(m)


def run(plan: ExperimentPlan, rho_rule: Optional[Callable[[int], int]] = None, m: Optional[int] = None) -> VerificationReport:
    report = new_report("prop-joint", plan)
    rho_rule = rho_rule or default_rho
    m = m or plan.critical_generation(plan.n_grid[len(plan.n_grid) // 2])
    rho = rho_rule(m)
    profiles = level_profiles(plan, 1, m + rho + 1, "prop-joint")
    report.cap_hit_rate = profiles.cap_hit_rate
    report.warnings.extend(cap_warnings(profiles.cap_hit_rate, "ranges"))

    survival = survival_from_profiles(profiles, m)
    report.warnings.extend(survival.warnings)
    p_hat, p_se = survival.p_hat, survival.se
    relative = p_se / p_hat if p_hat > 0 else float("inf")
    if relative > PROPAGATED_RELATIVE_SE_WARN:
        msg = f"relative s.e. of p_m is {relative:.1%}; the 1/p_m exponent amplifies it"
        logger.warning(f"⚠️ {msg}")
        report.warnings.append(msg)
    report.estimates.update({"m": m, "rho": rho, "p_hat": p_hat, "p_hat_se": p_se})
    if p_hat == 0:
        report.checks.append(Check(name="survivors at level m", passed=False, value=0.0,
                                   detail="no range reached level m"))
        return finish(report)

    L = profiles.L[profiles.valid]
    near, far = L[:, m].astype(float), L[:, m + rho].astype(float)
    grid = plan.lambda_grid[:GRID_POINTS]
    values = {}
    rows = []
    for l1 in grid:
        for l2 in grid:
            draws = np.exp(-p_hat * (l1 * near + l2 * far))
            mean = float(draws.mean())
            se_mean = float(draws.std(ddof=1) / math.sqrt(len(draws)))
            value, se = power_mean(mean, se_mean, p_hat, p_se)
            target = joint_transform_limit(plan.kappa, l1, l2)
            values[(l1, l2)] = (value, se)
            rows.append({"lambda1": l1, "lambda2": l2, "empirical": value, "se": se, "target": target})
            report.checks.append(band_check(f"joint transform at ({l1}, {l2})", value, target, plan.tolerance, se))
    for l1 in grid:
        for l2 in grid:
            if l1 < l2:
                (v12, s12), (v21, s21) = values[(l1, l2)], values[(l2, l1)]
                report.checks.append(band_check(f"symmetry ({l1}, {l2})", v12, v21, 0.0, math.hypot(s12, s21)))
    report.estimates["joint"] = rows
    report.tables["joint"] = [[r["lambda1"], r["lambda2"], r["empirical"], r["se"], r["target"]] for r in rows]
    return finish(report)
