"""
Reduced ranges: one reduction with its encodings, and the regeneration-count panel

The single reduction checks the antichain property, the reduced local-time
identity and the Lukasiewicz reconstruction of the forest size. The panel
compares B^(n)_ell / n (ell = floor((log n)^2)) with W, annealed and on
frozen environments, and checks that its spread within a tree shrinks with n.
"""

import logging
import math

import numpy as np
from scipy import stats

from env_model import EnvTree
from models import Check, ExperimentPlan, VerificationReport
from montecarlo import (
    band_check,
    finish,
    new_report,
    panel_trees,
    panel_w,
    trend_check,
    w_samples,
)
from range_sampler import RangeTree, quenched_regeneration_counts, sample_range, sample_regeneration_counts
from reduction import build_reduced_forest, encode_forest, extract_regeneration_set, first_hitting_index
import rng as rngs
from walker import run_walk

logger = logging.getLogger('treewalk')

SLOPE_TOLERANCE = 0.2


def regeneration_level(n: int) -> int:
    return int(math.floor(math.log(n) ** 2))


def _sample_source(plan: ExperimentPlan, report: VerificationReport) -> RangeTree:
    if plan.mode == "walker":
        tree = EnvTree(plan.spec, rngs.derived_seed(plan.master_seed, "reduce-tree"), plan.caps)
        record = run_walk(tree, plan.p, plan.caps, rngs.generator(plan.master_seed, "reduce-walk"))
        source = RangeTree.from_walk(record, tree)
        report.estimates["tau_p"] = record.tau_p
    else:
        source = sample_range(plan.spec, plan.p, plan.caps, rngs.generator(plan.master_seed, "reduce-range"))
    if not source.complete:
        msg = f"range stopped by the {source.cap_hit} cap; the reduction covers a partial range"
        logger.warning(f"⚠️ {msg}")
        report.warnings.append(msg)
        report.cap_hit_rate = 1.0
    return source


def _single_reduction(plan: ExperimentPlan, report: VerificationReport) -> None:
    source = _sample_source(plan, report)
    ell = plan.level or 0
    order = plan.order or ("discovery" if source.discovery is not None else "depth_first")
    regen = extract_regeneration_set(source, ell, order=order)
    forest, levels = build_reduced_forest(source, regen, pad_to=plan.pad_forest, spec=plan.spec,
                                          seed=rngs.fork(plan.master_seed, "reduce-pad"))
    encoding = encode_forest(forest)

    members = set(regen.members)
    nested = 0
    for v in regen.members:
        u = int(source.parent[v])
        while u >= 0:
            if u in members:
                nested += 1
                break
            u = int(source.parent[u])
    report.checks.append(Check(name="regeneration set is an antichain", passed=nested == 0,
                               value=float(nested), target=0.0))
    trees = len(forest.subtrees)
    if trees:
        report.checks.append(Check(name="reduced Z_0 equals the number of trees",
                                   passed=levels.Z[0] == trees, value=float(levels.Z[0]), target=float(trees)))
    identity = all(levels.L[k] == levels.Z[k] + (levels.Z[k + 1] if k + 1 < len(levels.Z) else 0)
                   for k in range(len(levels.Z)))
    report.checks.append(Check(name="reduced L_k = Z_k + Z_(k+1)", passed=identity))
    hit = first_hitting_index(encoding.lukasiewicz, -trees) if trees else 0
    report.checks.append(Check(name="forest size from the Lukasiewicz path", passed=hit == forest.vertex_count,
                               value=float(hit), target=float(forest.vertex_count)))
    report.estimates.update({
        "range_size": source.size,
        "range_height": source.height,
        "level": ell,
        "order": order,
        "regeneration_size": regen.size,
        "padded": forest.padded,
        "forest_vertices": forest.vertex_count,
    })
    report.tables["encoding"] = [list(row) for row in encoding.rows()]
    report.tables["levels"] = [[k, z, l] for k, (z, l) in enumerate(zip(levels.Z, levels.L))]


def _panel(plan: ExperimentPlan, report: VerificationReport) -> None:
    trees = panel_trees(plan, "regeneration-panel")
    W = panel_w(trees, plan.w_level)
    mid = plan.n_grid[len(plan.n_grid) // 2]
    reps = plan.regeneration_replicates
    spreads, spread_se, rows = [], [], []
    for n in plan.n_grid:
        ell = regeneration_level(n)
        means, sds, ws = [], [], []
        for i, tree in enumerate(trees):
            counts, capped = quenched_regeneration_counts(
                tree, n, ell, reps, rngs.generator(plan.master_seed, "regeneration", n, i), plan.caps)
            x = counts[~capped] / n
            if len(x) < 2:
                continue
            means.append(x.mean())
            sds.append(x.std(ddof=1))
            ws.append(W[i])
        sds = np.asarray(sds)
        spreads.append(float(sds.mean()))
        spread_se.append(float(sds.std(ddof=1) / math.sqrt(len(sds))) if len(sds) > 1 else 0.0)
        rows.append({"n": n, "ell": ell, "trees": len(means), "mean_B_over_n": float(np.mean(means)),
                     "within_tree_sd": spreads[-1]})
        if n == mid and len(means) > 2:
            fit = stats.linregress(ws, means)
            report.checks.append(band_check(f"B/n against W slope at n={n}", float(fit.slope), 1.0,
                                            SLOPE_TOLERANCE, float(fit.stderr)))
            report.estimates["panel_fit"] = {"slope": float(fit.slope), "slope_se": float(fit.stderr),
                                             "intercept": float(fit.intercept), "r": float(fit.rvalue)}
    report.checks.append(trend_check("within-tree spread of B/n shrinking", spreads, spread_se))
    report.estimates["panel"] = rows

    ell = regeneration_level(mid)
    counts, capped = sample_regeneration_counts(plan.spec, mid, ell, plan.panel_size * reps,
                                                rngs.generator(plan.master_seed, "regeneration-annealed"), plan.caps)
    x = counts[~capped] / mid
    w = w_samples(plan)
    pooled = math.hypot(x.std(ddof=1) / math.sqrt(len(x)), w.std(ddof=1) / math.sqrt(len(w)))
    report.checks.append(band_check(f"annealed mean B/n against mean W at n={mid}",
                                    float(x.mean()), float(w.mean()), 0.0, pooled))


def run(plan: ExperimentPlan) -> VerificationReport:
    report = new_report("reduce", plan)
    _single_reduction(plan, report)
    if plan.panel_size > 0:
        _panel(plan, report)
    return finish(report)
