"""
Oracle equivalence between the step-by-step walker and the direct range sampler

Also checks the walker's exact identities, the quenched geometric law of N_x^(1)
at depth-1 vertices of frozen environments, and the martingale means
E[Z_k^(1)] = E[W_k] = 1. Every goodness-of-fit p-value is compared with
ORACLE_ALPHA divided by the number of tests in the family.
"""

import logging
import math
from typing import List, Tuple

import numpy as np

from config import ORACLE_ALPHA
from env_model import EnvTree, sample_additive_martingale
from estimators import gof_tests
from models import Check, ExperimentPlan, TestReport, VerificationReport
from montecarlo import band_check, cap_warnings, finish, level_profiles, new_report
from range_sampler import geometric_restart_pmf, h_and_hit, sample_range
import rng as rngs
from walker import run_walk

logger = logging.getLogger('treewalk')

ORACLE_DEPTH = 4
GEOMETRIC_VERTICES = 20
MARTINGALE_LEVELS = 10


def _equivalence_tests(plan: ExperimentPlan, report: VerificationReport) -> List[Tuple[str, TestReport]]:
    n = plan.oracle_replicates
    walks = level_profiles(plan, 1, ORACLE_DEPTH, "oracle", replicates=n, mode="walker")
    ranges = level_profiles(plan, 1, ORACLE_DEPTH, "oracle", replicates=n, mode="range_sampler")
    report.cap_hit_rate = walks.cap_hit_rate
    report.warnings.extend(cap_warnings(walks.cap_hit_rate, "walks"))
    report.checks.append(Check(
        name="walk identities",
        passed=walks.identity_failures == 0,
        value=float(walks.identity_failures),
        target=0.0,
        detail="sum L = tau - p, Z_0 = p and N_e = p on every completed walk",
    ))
    wz, rz = walks.Z[walks.valid], ranges.Z[ranges.valid]
    tests = []
    for k in range(1, ORACLE_DEPTH):
        for t in gof_tests(wz[:, k], rz[:, k]):
            tests.append((f"Z_{k} walker vs range {t.test}", t))
    w_size = walks.vertices[walks.valid].sum(axis=1)
    r_size = ranges.vertices[ranges.valid].sum(axis=1)
    for t in gof_tests(w_size, r_size):
        tests.append((f"range size to depth {ORACLE_DEPTH} {t.test}", t))
    return tests


def _geometric_tests(plan: ExperimentPlan) -> List[Tuple[str, TestReport]]:
    """N_x^(1) at depth-1 vertices of frozen trees, from walks and from quenched ranges, against the exact law"""
    tests = []
    index = 0
    seen = 0
    while seen < GEOMETRIC_VERTICES:
        tree = EnvTree(plan.spec, rngs.derived_seed(plan.master_seed, "geometric", index), plan.caps)
        kids = list(tree.grow_children(tree.root))[:GEOMETRIC_VERTICES - seen]
        index += 1
        if not kids:
            continue
        walk_rng = rngs.generator(plan.master_seed, "geometric-walk", index)
        walked = {x: [] for x in kids}
        for _ in range(plan.oracle_replicates):
            record = run_walk(tree, 1, plan.caps, walk_rng)
            if record.completed:
                for x in kids:
                    walked[x].append(record.edge_counts.get(x, 0))
        range_rng = rngs.generator(plan.master_seed, "geometric-range", index)
        sampled = {x: [] for x in kids}
        for _ in range(plan.oracle_replicates):
            rt = sample_range(plan.spec, 1, plan.caps, range_rng, quenched_tree=tree, max_level=1)
            found = dict(zip(rt.env_vertex.tolist(), rt.types.tolist()))
            for x in kids:
                sampled[x].append(found.get(x, 0))
        for x in kids:
            path = h_and_hit(tree.path_potentials(x))
            pmf = lambda j, path=path: geometric_restart_pmf(path, j)
            tests.append((f"geometric law tree {index - 1} vertex {x} walker",
                          gof_tests(walked[x], pmf=pmf)[0]))
            tests.append((f"geometric law tree {index - 1} vertex {x} range",
                          gof_tests(sampled[x], pmf=pmf)[0]))
        seen += len(kids)
    return tests


def _martingale_checks(plan: ExperimentPlan, report: VerificationReport) -> None:
    profiles = level_profiles(plan, 1, MARTINGALE_LEVELS, "martingale", mode="range_sampler")
    Z = profiles.Z[profiles.valid]
    means = {}
    for k in range(1, MARTINGALE_LEVELS + 1):
        z = Z[:, k].astype(float)
        se = float(z.std(ddof=1) / math.sqrt(len(z)))
        report.checks.append(band_check(f"E[Z_{k}] = 1", float(z.mean()), 1.0, 0.0, se))
        w = sample_additive_martingale(plan.spec, k, plan.replicates,
                                       rngs.generator(plan.master_seed, "martingale-w", k),
                                       plan.caps.max_range_vertices)
        w_se = float(w.std(ddof=1) / math.sqrt(len(w)))
        report.checks.append(band_check(f"E[W_{k}] = 1", float(w.mean()), 1.0, 0.0, w_se))
        means[k] = {"Z": float(z.mean()), "Z_se": se, "W": float(w.mean()), "W_se": w_se}
    report.estimates["martingale_means"] = means


def run(plan: ExperimentPlan) -> VerificationReport:
    report = new_report("oracle-check", plan)
    tests = _equivalence_tests(plan, report) + _geometric_tests(plan)
    alpha = ORACLE_ALPHA / len(tests)
    for name, t in tests:
        report.warnings.extend(t.warnings)
        report.checks.append(Check(name=name, passed=t.p_value > alpha, value=t.p_value, target=alpha,
                                   detail=f"{t.test} statistic {t.statistic:.4g} on {t.bins} bins"))
    report.estimates["tests"] = {name: t.model_dump() for name, t in tests}
    _martingale_checks(plan, report)
    return finish(report)
