"""
Limit constants with provenance

C_infty and bold c_infty from spine paths (with a truncation-stability check),
c_0 in closed form for kappa > 2, and for kappa <= 2 the tail constant c_kappa of
the first-generation regeneration count with its tail-index diagnostics.
"""

from dataclasses import asdict
import logging
import math

from config import TAIL_INDEX_BAND
from limit_laws import estimate_C_constants, estimate_c_kappa, gamma_reflection_residual
from models import Check, ExperimentPlan, VerificationReport
from montecarlo import finish, limit_constants, new_report

logger = logging.getLogger('treewalk')

C_KAPPA_RELATIVE_SE = 0.2
GAMMA_RESIDUAL = 1e-10


def run(plan: ExperimentPlan) -> VerificationReport:
    report = new_report("constants", plan)
    kappa = plan.kappa
    spine = estimate_C_constants(plan.spec, replicates=plan.constant_replicates, seed=plan.master_seed)
    deeper = estimate_C_constants(plan.spec, truncation_depth=2 * spine.truncation_depth,
                                  replicates=plan.constant_replicates, seed=plan.master_seed)
    pooled = math.hypot(spine.C_infty_se, deeper.C_infty_se)
    report.checks.append(Check(
        name=f"C_infty stable from depth {spine.truncation_depth} to {deeper.truncation_depth}",
        passed=abs(spine.C_infty - deeper.C_infty) < 2.0 * pooled,
        value=deeper.C_infty,
        target=spine.C_infty,
    ))
    report.checks.append(Check(name="C_infty <= 1", passed=spine.C_infty <= 1.0, value=spine.C_infty, target=1.0))
    report.checks.append(Check(name="bold c_infty positive and finite",
                               passed=0 < spine.c_infty_bold < math.inf, value=spine.c_infty_bold))
    report.estimates["spine"] = asdict(spine)

    tail = None
    if kappa <= 2:
        if kappa < 2:
            residual = gamma_reflection_residual(kappa)
            report.checks.append(Check(name="Gamma reflection identity", passed=abs(residual) < GAMMA_RESIDUAL,
                                       value=residual, target=0.0))
        tail = estimate_c_kappa(plan.spec, kappa, plan.c_kappa_replicates, plan.caps, plan.master_seed,
                                batch_size=plan.batch_size)
        fit = tail.fit
        report.checks.append(Check(name="tail index near kappa", passed=tail.index_flag,
                                   value=fit.index, target=kappa,
                                   detail=f"|index - kappa| <= {TAIL_INDEX_BAND}"))
        report.checks.append(Check(name="Hill and regression indices agree",
                                   passed=abs(fit.hill_index - fit.regression_index) <= TAIL_INDEX_BAND,
                                   value=fit.hill_index, target=fit.regression_index))
        relative = tail.se / tail.c_kappa if tail.c_kappa > 0 else math.inf
        report.checks.append(Check(name="c_kappa positive with small relative s.e.",
                                   passed=tail.c_kappa > 0 and relative < C_KAPPA_RELATIVE_SE,
                                   value=tail.c_kappa, detail=f"relative s.e. {relative:.1%}"))
        report.estimates["tail_fit"] = fit.model_dump()
        report.estimates["c_kappa_samples"] = tail.samples
        report.cap_hit_rate = tail.capped / max(tail.samples + tail.capped, 1)

    consts, warnings = limit_constants(plan, spine=spine, tail=tail)
    report.warnings.extend(warnings)
    report.estimates["constants"] = consts.model_dump()
    return finish(report)
