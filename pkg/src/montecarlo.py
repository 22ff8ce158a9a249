"""
Experiment harness for the verification suites

Replicates are drawn in fixed-size batches, each seeded from
(master seed, experiment label, batch index), and mapped over a process pool
when more than one worker is configured. Batches are concatenated in batch
order, so every estimate is the same for any worker count.

The suites themselves live in the experiments package; the verify_* functions
here are the entry points the CLI calls.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    CAP_BIAS_WARN_RATE,
    MIN_SURVIVORS,
    PANEL_SURVIVAL_LEVEL,
)
from env_model import EnvTree, additive_martingale, sample_additive_martingale
from errors import CappedGrowth
from estimators import empirical_pgf, wilson_interval
from limit_laws import (
    SpineConstants,
    TailConstant,
    assemble_constants,
    closed_form_c0,
    estimate_C_constants,
    estimate_c_kappa,
    theorem_limits,
)
from models import Caps, Check, ExperimentPlan, LimitConstants, Provenance, SurvivalEstimate, VerificationReport
from range_sampler import LevelProfiles, quenched_survival, sample_level_profiles
import rng as rngs
from walker import annealed_walk, level_stats

logger = logging.getLogger('treewalk')


# ---------------------------------------------------------------------------
# Replication
# ---------------------------------------------------------------------------

def run_batches(
    fn: Callable[[np.random.SeedSequence, int], object],
    master_seed: int,
    label: str,
    total: int,
    batch_size: int,
    workers: int = 1,
) -> List:
    """
    Run fn(seed_sequence, batch_len) over ceil(total / batch_size) batches

    Args:
        fn: Picklable callable (a module-level function or a partial of one)
        master_seed: Experiment master seed
        label: Stream label; different labels give independent streams
        total: Number of replicates
        batch_size: Replicates per batch
        workers: Process count; 1 runs in-process

    Returns:
        Batch results in batch order
    """
    n_batches = max(1, -(-total // batch_size))
    seeds = rngs.batch_seeds(master_seed, label, n_batches)
    sizes = [min(batch_size, total - i * batch_size) for i in range(n_batches)]
    if workers > 1 and n_batches > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, seeds, sizes))
    return [fn(seed, size) for seed, size in zip(seeds, sizes)]


def _walk_profiles(seed: np.random.SeedSequence, n: int, spec, p: int, depth: int, caps: Caps) -> LevelProfiles:
    """Level profiles from step-by-step walks, one fresh environment per replicate"""
    Z = np.zeros((n, depth + 1), dtype=np.int64)
    vertices = np.zeros((n, depth + 1), dtype=np.int64)
    capped = np.zeros(n, dtype=bool)
    failures = 0
    factory = partial(EnvTree, spec, caps=caps)
    for r, child in enumerate(seed.spawn(n)):
        record, tree = annealed_walk(factory, p, caps, child)
        if not record.completed:
            capped[r] = True
            continue
        stats = level_stats(record, tree)
        if (sum(stats.L) != record.tau_p - p or stats.Z[0] != p
                or record.edge_counts.get(tree.root) != p):
            failures += 1
        top = min(len(stats.Z), depth + 1)
        Z[r, :top] = stats.Z[:top]
        levels = np.bincount([tree.depth[v] for v in record.edge_counts], minlength=depth + 1)
        vertices[r] = levels[:depth + 1]
    if failures:
        logger.error(f"❌ {failures} walks broke an exact local-time identity")
    return LevelProfiles(Z=Z, vertices=vertices, capped=capped, identity_failures=failures)


def _range_profiles(seed: np.random.SeedSequence, n: int, spec, p: int, depth: int, caps: Caps) -> LevelProfiles:
    return sample_level_profiles(spec, p, n, depth, np.random.default_rng(seed), caps.max_range_vertices)


def level_profiles(
    plan: ExperimentPlan,
    p: int,
    depth: int,
    label: str,
    replicates: Optional[int] = None,
    mode: Optional[str] = None,
) -> LevelProfiles:
    """
    Annealed Z_0..Z_depth of independent ranges with initial type p

    Args:
        plan: Experiment plan (spec, caps, seed, batching)
        p: Initial type (number of excursion blocks)
        depth: Deepest level recorded
        label: Stream label
        replicates: Defaults to plan.replicates
        mode: "walker" or "range_sampler"; defaults to plan.mode

    Returns:
        LevelProfiles with capped replicates flagged
    """
    mode = mode or plan.mode
    replicates = replicates or plan.replicates
    worker = _walk_profiles if mode == "walker" else _range_profiles
    fn = partial(worker, spec=plan.spec, p=p, depth=depth, caps=plan.caps)
    batch = plan.batch_size if mode == "range_sampler" else max(1, plan.batch_size // 100)
    parts = run_batches(fn, plan.master_seed, f"{label}/{mode}", replicates, batch, plan.workers)
    profiles = LevelProfiles.concat(parts)
    logger.info(f"🌲 {replicates} {mode} ranges of type {p} to depth {depth} "
                f"(cap-hit rate {profiles.cap_hit_rate:.2%})")
    return profiles


# ---------------------------------------------------------------------------
# Survival
# ---------------------------------------------------------------------------

def survival_from_profiles(profiles: LevelProfiles, m: int) -> SurvivalEstimate:
    """Fraction of non-capped replicates with Z_m > 0, with a Wilson interval"""
    valid = profiles.valid
    trials = int(valid.sum())
    if m == 0:
        return SurvivalEstimate(level=0, p_hat=1.0, se=0.0, ci_low=1.0, ci_high=1.0,
                                survivors=trials, replicates=trials)
    survivors = int((profiles.Z[valid, m] > 0).sum())
    p_hat = survivors / trials if trials else float("nan")
    se = math.sqrt(p_hat * (1.0 - p_hat) / trials) if trials else float("nan")
    warnings = []
    confidence = 0.95
    if survivors < MIN_SURVIVORS:
        confidence = 0.99
        msg = f"only {survivors} survivors at level {m}; band widened to 99%"
        logger.warning(f"⚠️ {msg}")
        warnings.append(msg)
    lo, hi = wilson_interval(survivors, trials, confidence)
    return SurvivalEstimate(level=m, p_hat=p_hat, se=se, ci_low=lo, ci_high=hi,
                            survivors=survivors, replicates=trials, warnings=tuple(warnings))


def empirical_survival(
    plan: ExperimentPlan,
    m: int,
    quenched_trees: Optional[Sequence[EnvTree]] = None,
) -> SurvivalEstimate:
    """
    Annealed P(Z_m^(1) > 0), and quenched values on frozen trees when given

    Args:
        plan: Experiment plan
        m: Level
        quenched_trees: Frozen environments; each gets plan.panel_replicates ranges

    Returns:
        SurvivalEstimate
    """
    if m < 0:
        raise ValueError("level must be non-negative")
    if m == 0:
        return SurvivalEstimate(level=0, p_hat=1.0, se=0.0, ci_low=1.0, ci_high=1.0,
                                survivors=plan.replicates, replicates=plan.replicates)
    estimate = survival_from_profiles(level_profiles(plan, 1, m, f"survival-{m}"), m)
    if not quenched_trees:
        return estimate
    quenched = tuple(
        quenched_survival(tree, m, plan.panel_replicates, rngs.generator(plan.master_seed, "quenched", m, i), plan.caps)
        for i, tree in enumerate(quenched_trees)
    )
    return replace(estimate, quenched_p_hat=quenched)


def check_pgf_superadditivity(Z: np.ndarray, pairs: Sequence[Tuple[int, int]], s: float = 0.0) -> List[Check]:
    """
    Empirical G_{k+l}(s) >= G_k(G_l(s)) - 3 s.e. for the generating functions of Z_k^(1)

    Args:
        Z: (replicates, depth + 1) level sums of type-1 ranges
        pairs: (k, l) pairs with k + l within the recorded depth
        s: Point in [0, 1]
    """
    checks = []
    for k, ell in pairs:
        if k + ell >= Z.shape[1]:
            continue
        g_l, se_l = empirical_pgf(Z[:, ell], s)
        g_kl, se_kl = empirical_pgf(Z[:, k + ell], s)
        g_k_g_l, se_k = empirical_pgf(Z[:, k], g_l)
        band = 3.0 * math.hypot(se_kl, se_k)
        checks.append(Check(
            name=f"pgf superadditivity k={k} l={ell}",
            passed=g_kl >= g_k_g_l - band,
            value=g_kl,
            target=g_k_g_l,
            detail=f"G_(k+l)(s) >= G_k(G_l(s)) - {band:.2e} at s={s}",
        ))
    return checks


# ---------------------------------------------------------------------------
# Constants, W-samples and frozen panels
# ---------------------------------------------------------------------------

def limit_constants(
    plan: ExperimentPlan,
    spine: Optional[SpineConstants] = None,
    tail: Optional[TailConstant] = None,
) -> Tuple[LimitConstants, List[str]]:
    """
    Every constant the targets need for plan.kappa

    c_0 is closed form (kappa > 2); C_infty and bold c_infty come from the spine;
    c_kappa (kappa <= 2) from the regeneration-count tail. Estimates already
    at hand can be passed in.
    """
    kappa = plan.kappa
    spine = spine or estimate_C_constants(plan.spec, replicates=plan.constant_replicates, seed=plan.master_seed)
    warnings = list(spine.warnings)
    provenance = {
        "C_infty": Provenance(source="monte_carlo", se=spine.C_infty_se),
        "c_infty_bold": Provenance(source="monte_carlo", se=spine.c_infty_bold_se),
    }
    c_0 = c_kappa = None
    if kappa > 2:
        c_0 = closed_form_c0(plan.spec, kappa)
        provenance["c_0"] = Provenance(source="closed_form")
    else:
        tail = tail or estimate_c_kappa(plan.spec, kappa, plan.c_kappa_replicates, plan.caps, plan.master_seed,
                                        batch_size=plan.batch_size)
        c_kappa = tail.c_kappa
        provenance["c_kappa"] = Provenance(source="monte_carlo", se=tail.se)
        warnings.extend(tail.warnings)
    consts = assemble_constants(kappa, c_kappa=c_kappa, c_0=c_0, C_infty=spine.C_infty,
                                c_infty_bold=spine.c_infty_bold, provenance=provenance)
    return consts, warnings


def survival_relative_se(consts: LimitConstants) -> float:
    """Relative s.e. of the survival scale carried over from Monte Carlo constants"""
    if consts.kappa > 2:
        return 0.0
    rel = 0.0
    for name in ("C_infty", "c_kappa"):
        value = getattr(consts, name)
        prov = consts.provenance.get(name)
        if value and prov is not None and prov.se is not None:
            rel += (prov.se / value) ** 2
    return math.sqrt(rel) / (consts.beta if consts.kappa != 2 else 1.0)


def target_band(consts: LimitConstants, plan: ExperimentPlan, curve: str, **kwargs) -> np.ndarray:
    """
    Spread of a theorem_limits curve caused by the Monte Carlo constants

    Scaling the survival scale by (1 + r) is the same as scaling a by
    (1 + r)^beta, so the band is the change of the curve under that shift.
    """
    base = np.asarray(getattr(theorem_limits(consts, a=plan.a, **kwargs), curve))
    rel = survival_relative_se(consts)
    if rel == 0:
        return np.zeros_like(base)
    shifted = np.asarray(getattr(theorem_limits(consts, a=plan.a * (1.0 + rel) ** consts.beta, **kwargs), curve))
    return np.abs(shifted - base)


def w_samples(plan: ExperimentPlan) -> np.ndarray:
    """Annealed draws of W at plan.w_level, standing in for W_infinity"""
    return sample_additive_martingale(plan.spec, plan.w_level, plan.w_samples,
                                      rngs.generator(plan.master_seed, "w-samples"),
                                      plan.caps.max_range_vertices)


def _survives(tree: EnvTree, level: int) -> bool:
    """Depth-first search for one vertex at the given level, growing as little as possible"""
    stack = [tree.root]
    while stack:
        v = stack.pop()
        if tree.depth[v] >= level:
            return True
        stack.extend(tree.grow_children(v))
    return False


def panel_trees(plan: ExperimentPlan, label: str = "panel") -> List[EnvTree]:
    """
    plan.panel_size frozen environments that survive to PANEL_SURVIVAL_LEVEL

    Trees that die out earlier are discarded and the next seed is tried.
    """
    trees: List[EnvTree] = []
    index = 0
    discarded = 0
    while len(trees) < plan.panel_size:
        tree = EnvTree(plan.spec, rngs.derived_seed(plan.master_seed, label, index), plan.caps)
        index += 1
        try:
            alive = _survives(tree, PANEL_SURVIVAL_LEVEL)
        except CappedGrowth:
            alive = False
        if alive:
            trees.append(tree)
        else:
            discarded += 1
        if discarded > 100 * max(plan.panel_size, 1):
            raise CappedGrowth("panel")
    if discarded:
        logger.info(f"🪓 discarded {discarded} panel trees extinct before level {PANEL_SURVIVAL_LEVEL}")
    return trees


def panel_w(trees: Sequence[EnvTree], level: int) -> np.ndarray:
    """Quenched W at the given level for every panel tree"""
    return np.array([additive_martingale(tree, level).W for tree in trees])


# ---------------------------------------------------------------------------
# Acceptance helpers shared by the suites
# ---------------------------------------------------------------------------

def band_check(name: str, value: float, target: float, tolerance: float, se: float, detail: str = "") -> Check:
    """|value - target| <= tolerance + 3 se"""
    allowed = tolerance + 3.0 * se
    return Check(name=name, passed=bool(abs(value - target) <= allowed), value=value, target=target,
                 detail=detail or f"|value - target| <= {allowed:.4g}")


def trend_check(name: str, distances: Sequence[float], bands: Sequence[float],
                max_inversions: Optional[int] = None) -> Check:
    """
    Distances non-increasing along the grid, within bands

    An increase d[i+1] > d[i] is an inversion; it is tolerated when it stays
    within 3 pooled bands, and at most max_inversions of them are allowed
    (no limit when None).
    """
    inversions = 0
    consistent = True
    for i in range(len(distances) - 1):
        rise = distances[i + 1] - distances[i]
        if rise > 0:
            inversions += 1
            if rise > 3.0 * math.hypot(bands[i], bands[i + 1]):
                consistent = False
    passed = consistent and (max_inversions is None or inversions <= max_inversions)
    return Check(name=name, passed=passed, value=float(inversions),
                 detail=f"distances {[round(d, 4) for d in distances]}")


def cap_warnings(rate: float, what: str) -> List[str]:
    if rate > CAP_BIAS_WARN_RATE:
        msg = f"{rate:.2%} of {what} hit a cap; estimates exclude them and may be biased"
        logger.warning(f"⚠️ {msg}")
        return [msg]
    return []


def new_report(kind: str, plan: ExperimentPlan) -> VerificationReport:
    return VerificationReport(kind=kind, passed=False, master_seed=plan.master_seed)


def finish(report: VerificationReport) -> VerificationReport:
    report.passed = all(c.passed for c in report.checks)
    status = "✅ passed" if report.passed else "❌ failed"
    logger.info(f"{status} {report.kind}: {sum(c.passed for c in report.checks)}/{len(report.checks)} checks")
    return report


# ---------------------------------------------------------------------------
# Verification suites (the suite modules import this one, so they load lazily)
# ---------------------------------------------------------------------------

def verify_theorem1(plan: ExperimentPlan) -> VerificationReport:
    """Survival asymptotics n p_{m(n)} and the quenched/annealed ratio panel"""
    from experiments.theorem1 import run
    return run(plan)


def verify_theorem2(plan: ExperimentPlan) -> VerificationReport:
    """Laplace transform of L^(n)_{m(n)} / n against the W-mixed CSBP target"""
    from experiments.theorem2 import run
    return run(plan)


def verify_yaglom(plan: ExperimentPlan) -> VerificationReport:
    """Laplace transform of L^(1)_{m(n)} / n given survival against phi"""
    from experiments.yaglom import run
    return run(plan)


def verify_prop_joint(plan: ExperimentPlan, rho_rule: Optional[Callable[[int], int]] = None,
                      m: Optional[int] = None) -> VerificationReport:
    """Two-level joint transform raised to 1 / p_m"""
    from experiments.prop_joint import run
    return run(plan, rho_rule, m)


def oracle_check(plan: ExperimentPlan) -> VerificationReport:
    """Walker against range sampler, identities, the quenched geometric law and martingale means"""
    from experiments.oracle_check import run
    return run(plan)


def verify_regeneration(plan: ExperimentPlan) -> VerificationReport:
    """Regeneration counts B^(n) / n against W"""
    from experiments.regeneration import run
    return run(plan)


def verify_constants(plan: ExperimentPlan) -> VerificationReport:
    """Limit constants with provenance, spine truncation stability and the c_kappa tail fit"""
    from experiments.constants import run
    return run(plan)
