"""
Limiting objects and constants of the local-time limit theorems

phi, the stable CSBP Laplace transform, the spine walk and the constants
c_kappa, c_0, C_infty, bold c_infty and bold C_kappa, plus the target values and
curves the verification suites compare against.
"""

from dataclasses import dataclass, field
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from config import (
    BOOTSTRAP_RESAMPLES,
    TAIL_INDEX_BAND,
    TAIL_WINDOW,
    TRUNCATION_MULTIPLIER,
    TRUNCATION_REMAINDER_WARN,
)
from errors import BranchMismatch, DomainError
from env_model import family_for, psi_and_derivative
from estimators import bootstrap_means, tail_index_fit
from models import Caps, EnvironmentSpec, LimitConstants, Provenance, TailFit
from range_sampler import sample_regeneration_counts
import rng as rngs

logger = logging.getLogger('treewalk')


def beta_of(kappa: float) -> float:
    """kappa ∧ 2 - 1"""
    return min(kappa, 2.0) - 1.0


def phi_kappa(kappa: float, lam):
    """
    phi(lambda) = 1 - lambda (1 + lambda^beta)^(-1/beta), beta = kappa ∧ 2 - 1

    Equals 1/(1 + lambda) for kappa >= 2. Accepts scalars or arrays.
    """
    if kappa <= 1:
        raise DomainError("kappa must exceed 1")
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise DomainError("lambda must be non-negative")
    if kappa >= 2:
        out = 1.0 / (1.0 + lam_arr)
    else:
        b = beta_of(kappa)
        out = 1.0 - lam_arr * (1.0 + lam_arr ** b) ** (-1.0 / b)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CsbpSpec:
    """Stable CSBP with branching mechanism lambda -> branching_scale * lambda^(kappa ∧ 2)"""
    kappa: float
    branching_scale: float

    def __post_init__(self):
        if not self.branching_scale > 0:
            raise DomainError("branching scale must be positive")

    @property
    def beta(self) -> float:
        return beta_of(self.kappa)


def csbp_flow(spec: CsbpSpec, a: float, b: float, lam: float) -> float:
    """v(a, b, lambda) = lambda (1 + (b - a) beta scale lambda^beta)^(-1/beta)"""
    if a > b:
        raise DomainError("need a <= b")
    beta = spec.beta
    return lam * (1.0 + (b - a) * beta * spec.branching_scale * lam ** beta) ** (-1.0 / beta)


def csbp_laplace(spec: CsbpSpec, y_a: float, a: float, b: float, lam: float) -> float:
    """
    E[exp(-lambda Y_b) | Y_a = y_a]

    For kappa >= 2 this is the transform of the Feller diffusion
    dY = (2 scale Y)^(1/2) dB.
    """
    if lam < 0 or y_a < 0:
        raise DomainError("lambda and y_a must be non-negative")
    return math.exp(-y_a * csbp_flow(spec, a, b, lam))


def gamma_term(kappa: float) -> float:
    """|Gamma(1 - kappa)|"""
    return abs(float(special.gamma(1.0 - kappa)))


def gamma_reflection_residual(kappa: float) -> float:
    """|Gamma(1-k)| |Gamma(k)| |sin(pi k)| / pi - 1, zero up to rounding"""
    return gamma_term(kappa) * abs(float(special.gamma(kappa))) * abs(math.sin(math.pi * kappa)) / math.pi - 1.0


def closed_form_c0(spec: EnvironmentSpec, kappa: float) -> float:
    """c_0 = E[sum over x != y at generation 1 of exp(-V(x) - V(y))] / (1 - exp(psi(2)))"""
    if kappa <= 2:
        raise BranchMismatch("c_0 is only defined for kappa > 2")
    psi2, _ = psi_and_derivative(spec, 2.0)
    return family_for(spec).pair_moment() / (-math.expm1(psi2))


def assemble_constants(
    kappa: float,
    c_kappa: Optional[float] = None,
    c_0: Optional[float] = None,
    C_infty: Optional[float] = None,
    c_infty_bold: Optional[float] = None,
    provenance: Optional[Dict[str, Provenance]] = None,
) -> LimitConstants:
    """Fill in bold C_kappa, the Gamma term and the survival rate from whatever inputs are known"""
    provenance = dict(provenance or {})
    gt = gamma_term(kappa) if 1 < kappa < 2 else None
    C_bold = None
    if kappa < 2 and c_kappa is not None:
        C_bold = c_kappa * gt
    elif kappa == 2 and c_kappa is not None:
        C_bold = c_kappa / 2.0
    elif kappa > 2 and c_0 is not None and C_infty is not None:
        C_bold = c_0 / C_infty
    if gt is not None:
        provenance.setdefault("gamma_term", Provenance(source="closed_form"))
    if C_bold is not None:
        provenance.setdefault("C_bold_kappa", Provenance(source="derived"))
    consts = LimitConstants(
        kappa=kappa, c_kappa=c_kappa, c_0=c_0, C_bold_kappa=C_bold, C_infty=C_infty,
        c_infty_bold=c_infty_bold, gamma_term=gt, provenance=provenance,
    )
    try:
        consts.survival_rate = 1.0 / survival_scale(consts)
        consts.provenance.setdefault("survival_rate", Provenance(source="derived"))
    except BranchMismatch:
        pass
    return consts


def constants_closed_form(
    spec: EnvironmentSpec,
    kappa: float,
    c_kappa: Optional[float] = None,
    C_infty: Optional[float] = None,
) -> LimitConstants:
    """
    Closed-form part of the constants

    c_0 (kappa > 2) and |Gamma(1 - kappa)| (kappa in (1, 2)) are exact; bold
    C_kappa is assembled when the Monte Carlo inputs it needs are given.
    """
    provenance: Dict[str, Provenance] = {}
    c_0 = None
    if kappa > 2:
        c_0 = closed_form_c0(spec, kappa)
        provenance["c_0"] = Provenance(source="closed_form")
    if c_kappa is not None:
        provenance["c_kappa"] = Provenance(source="input")
    if C_infty is not None:
        provenance["C_infty"] = Provenance(source="input")
    return assemble_constants(kappa, c_kappa=c_kappa, c_0=c_0, C_infty=C_infty, provenance=provenance)


def branching_scale(consts: LimitConstants) -> float:
    """C_infty * bold C_kappa; for kappa > 2 this is c_0 and needs no C_infty"""
    k = consts.kappa
    if k > 2:
        if consts.c_0 is None:
            raise BranchMismatch("kappa > 2 needs c_0")
        return consts.c_0
    if consts.C_infty is None or consts.C_bold_kappa is None:
        raise BranchMismatch("kappa <= 2 needs c_kappa and C_infty")
    return consts.C_infty * consts.C_bold_kappa


def survival_scale(consts: LimitConstants) -> float:
    """
    s such that n p_{m(n)} -> 1/s and the Yaglom limit is phi(2 lambda s)

    (beta scale)^(1/beta) for kappa != 2 and C_infty c_2 for kappa = 2.
    """
    scale = branching_scale(consts)
    if consts.kappa == 2:
        return 2.0 * scale
    b = beta_of(consts.kappa)
    return (b * scale) ** (1.0 / b)


class SpineWalk:
    """Size-biased random walk S with E[f(S_1)] = E[sum over |x| = 1 of exp(-V(x)) f(V(x))]"""

    def __init__(self, spec: EnvironmentSpec):
        self.spec = spec
        self.drift = -psi_and_derivative(spec, 1.0)[1]

    def steps(self, rng: np.random.Generator, size) -> np.ndarray:
        return spine_sampler(self.spec, rng, size)

    def paths(self, rng: np.random.Generator, n: int, depth: int) -> np.ndarray:
        """(n, depth) array of S_1..S_depth"""
        steps = self.steps(rng, n * depth).reshape(n, depth)
        return np.cumsum(steps, axis=1)


def spine_sampler(spec: EnvironmentSpec, rng: np.random.Generator, size: Optional[int] = None):
    """
    Steps of the spine walk: one float S_1, or an array of size i.i.d. copies

    The step law is the depth-1 displacement law tilted by exp(-V(x)), which
    is a probability because psi(1) = 0.
    """
    steps = family_for(spec).sample_spine_steps(rng, 1 if size is None else size)
    return float(steps[0]) if size is None else steps


def spine_tilt_moment(spec: EnvironmentSpec, theta: float) -> float:
    """E[exp(-theta S_1)] = exp(psi(1 + theta) - psi(1))"""
    return math.exp(psi_and_derivative(spec, 1.0 + theta)[0] - psi_and_derivative(spec, 1.0)[0])


@dataclass
class SpineConstants:
    C_infty: float
    C_infty_se: float
    c_infty_bold: float
    c_infty_bold_se: float
    truncation_depth: int
    relative_remainder: float
    replicates: int
    warnings: List[str] = field(default_factory=list)


def estimate_C_constants(
    spec: EnvironmentSpec,
    truncation_depth: Optional[int] = None,
    replicates: int = 20_000,
    seed: int = 0,
    chunk: int = 5_000,
) -> SpineConstants:
    """
    Monte Carlo for C_infty = E[(sum_{j>=0} e^{-S_j})^-2] and bold c_infty = E[(sum_{j>=1} e^{-S_j})^-1]

    Args:
        spec: Environment law
        truncation_depth: Spine steps kept; defaults to TRUNCATION_MULTIPLIER / drift
        replicates: Number of spine paths
        seed: Master seed
        chunk: Paths simulated at once

    Returns:
        SpineConstants with bootstrap standard errors and the truncation remainder
    """
    walk = SpineWalk(spec)
    if not walk.drift > 0:
        raise DomainError("spine drift -psi'(1) must be positive")
    depth = truncation_depth or int(math.ceil(TRUNCATION_MULTIPLIER / walk.drift))
    rng = rngs.generator(seed, "spine")
    ratio = math.exp(-walk.drift)
    tail_factor = ratio / (1.0 - ratio)
    inv_sq, inv_one, remainder = [], [], []
    for start in range(0, replicates, chunk):
        n = min(chunk, replicates - start)
        S = walk.paths(rng, n, depth)
        tail = np.exp(-S).sum(axis=1)
        total = 1.0 + tail
        inv_sq.append(total ** -2)
        inv_one.append(1.0 / tail)
        remainder.append(np.exp(-S[:, -1]) * tail_factor / tail)
    inv_sq = np.concatenate(inv_sq)
    inv_one = np.concatenate(inv_one)
    rel_remainder = float(np.concatenate(remainder).mean())
    boot = bootstrap_means(np.column_stack([inv_sq, inv_one]), BOOTSTRAP_RESAMPLES, rngs.generator(seed, "spine-bootstrap"))
    se = boot.std(axis=0, ddof=1)
    warnings = []
    if rel_remainder > TRUNCATION_REMAINDER_WARN:
        msg = f"spine truncation at depth {depth} leaves a relative remainder of {rel_remainder:.3%}"
        logger.warning(f"⚠️ {msg}")
        warnings.append(msg)
    return SpineConstants(
        C_infty=float(inv_sq.mean()),
        C_infty_se=float(se[0]),
        c_infty_bold=float(inv_one.mean()),
        c_infty_bold_se=float(se[1]),
        truncation_depth=depth,
        relative_remainder=rel_remainder,
        replicates=replicates,
        warnings=warnings,
    )


@dataclass
class TailConstant:
    c_kappa: float
    se: float
    fit: TailFit
    samples: int
    capped: int
    index_flag: bool  # fitted index within the band around kappa
    warnings: List[str] = field(default_factory=list)


def _fixed_index_constant(counts: np.ndarray, kappa: float, window: Tuple[float, float]) -> float:
    """Mean of log(r^kappa P(X > r)) over the window, exponentiated"""
    x = np.sort(counts)
    lo, hi = np.quantile(x, window)
    grid = np.unique(x[(x >= lo) & (x <= hi) & (x > 0)])
    survival = 1.0 - np.searchsorted(x, grid, side="right") / len(x)
    ok = survival > 0
    if not ok.any():
        return float("nan")
    return float(np.exp(np.mean(np.log(survival[ok]) + kappa * np.log(grid[ok]))))


def estimate_c_kappa(
    spec: EnvironmentSpec,
    kappa: float,
    replicates: int = 200_000,
    caps: Optional[Caps] = None,
    seed: int = 0,
    window: Tuple[float, float] = TAIL_WINDOW,
    batch_size: int = 50_000,
    groups: int = 20,
) -> TailConstant:
    """
    Tail constant of the number of first-generation regeneration points, kappa in (1, 2]

    The count is sampled from the annealed range with p = 1 and ell = 0. The
    constant is lim r^kappa P(count > r), estimated with the index fixed at kappa
    over the quantile window; a free log-log fit and a Hill estimate are
    reported alongside. Standard error from batch means over `groups` groups.
    """
    if not 1 < kappa <= 2:
        raise BranchMismatch("c_kappa is defined for kappa in (1, 2]")
    counts, capped = [], 0
    for b, seq in enumerate(rngs.batch_seeds(seed, "c-kappa", -(-replicates // batch_size))):
        n = min(batch_size, replicates - b * batch_size)
        c, cap = sample_regeneration_counts(spec, 1, 0, n, np.random.default_rng(seq), caps)
        counts.append(c[~cap])
        capped += int(cap.sum())
    x = np.concatenate(counts).astype(float)
    fit = tail_index_fit(x, window)
    c_hat = _fixed_index_constant(x, kappa, window)
    parts = [_fixed_index_constant(part, kappa, window) for part in np.array_split(x, groups)]
    se = float(np.nanstd(parts, ddof=1) / math.sqrt(groups))
    in_band = abs(fit.index - kappa) <= TAIL_INDEX_BAND
    warnings = list(fit.warnings)
    if not in_band:
        msg = f"fitted tail index {fit.index:.3f} is more than {TAIL_INDEX_BAND} from kappa={kappa}"
        logger.warning(f"⚠️ {msg}")
        warnings.append(msg)
    return TailConstant(c_kappa=c_hat, se=se, fit=fit, samples=len(x), capped=capped,
                        index_flag=in_band, warnings=warnings)


def joint_transform_limit(kappa: float, lambda1: float, lambda2: float) -> float:
    """Limit of the two-level joint transform raised to 1 / p_m: exp(-(1 - phi(2 lambda1 + 2 lambda2)))"""
    return math.exp(-(1.0 - float(phi_kappa(kappa, 2.0 * lambda1 + 2.0 * lambda2))))


@dataclass
class TheoremLimits:
    """Targets the verification suites compare with"""
    kappa: float
    a: float
    survival: float  # limit of n p_{m(n)} (annealed, E[W] = 1) times W
    yaglom_scale: float  # phi(2 lambda yaglom_scale) is the conditioned transform
    C_kappa_a: float
    lambdas: Tuple[float, ...] = ()
    yaglom_curve: Tuple[float, ...] = ()
    local_time_curve: Tuple[float, ...] = ()
    joint_curve: Dict[str, float] = field(default_factory=dict)


def theorem_limits(
    consts: LimitConstants,
    W: float = 1.0,
    a: float = 1.0,
    lambdas: Sequence[float] = (),
    W_samples: Optional[Sequence[float]] = None,
    joint_grid: Sequence[Tuple[float, float]] = (),
) -> TheoremLimits:
    """
    Analytic limit values for a populated constant branch

    Args:
        consts: Constants with the branch for consts.kappa filled in
        W: Value of the additive martingale limit (quenched targets)
        a: Critical-generation multiplier
        lambdas: Grid for the curves
        W_samples: Draws of W for the annealed local-time curve; [W] when absent
        joint_grid: (lambda1, lambda2) points for the two-level joint transform

    Returns:
        TheoremLimits
    """
    if a <= 0:
        raise DomainError("a must be positive")
    k = consts.kappa
    b = beta_of(k)
    s = survival_scale(consts)
    scale_a = s * a ** (1.0 / b)
    C_ka = 1.0 / scale_a
    lams = np.asarray(lambdas, dtype=float)
    yaglom = phi_kappa(k, 2.0 * lams * scale_a) if len(lams) else np.zeros(0)
    ws = np.asarray(W_samples if W_samples is not None else [W], dtype=float)
    if len(lams):
        inner = 1.0 - np.atleast_1d(phi_kappa(k, 2.0 * lams / C_ka))
        local = np.exp(-C_ka * np.outer(ws, inner)).mean(axis=0)
    else:
        local = np.zeros(0)
    joint = {f"{l1},{l2}": joint_transform_limit(k, l1, l2) for l1, l2 in joint_grid}
    return TheoremLimits(
        kappa=k,
        a=a,
        survival=W / scale_a,
        yaglom_scale=scale_a,
        C_kappa_a=C_ka,
        lambdas=tuple(float(v) for v in lams),
        yaglom_curve=tuple(float(v) for v in np.atleast_1d(yaglom)),
        local_time_curve=tuple(float(v) for v in local),
        joint_curve=joint,
    )
