"""
Random environment: marked Galton-Watson trees and their branching potential

Covers the offspring-with-marks families, the log-Laplace transform psi, the
exponent kappa, assumption validation and lazily grown deterministic trees.
"""

from functools import lru_cache
from fractions import Fraction
import logging
import math
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special, stats

from config import (
    KAPPA_BRACKET_LOW,
    KAPPA_T_MAX,
    KAPPA_TOLERANCE,
    MAX_RANGE_VERTICES,
    PSI_ONE_TOLERANCE,
    VALIDATION_DELTA,
)
from errors import CappedGrowth, DepthCapExceeded, DomainError, NoRootError
from models import (
    AdditiveMartingaleSample,
    Caps,
    Check,
    EnvironmentSpec,
    FamilyId,
    PsiProfile,
    ValidationReport,
)
import rng as rngs

logger = logging.getLogger('treewalk')

ESTAR = -1  # parent index of the root: the virtual vertex e*


def _positive_part_mean(m: float, s: float) -> float:
    """E[max(X, 0)] for X ~ N(m, s^2)"""
    if s == 0:
        return max(m, 0.0)
    z = m / s
    return m * stats.norm.cdf(z) + s * stats.norm.pdf(z)


class MarkFamily:
    """Offspring-with-marks law: how many children a vertex has and their marks A_x"""

    lattice_free = True

    def psi(self, t: float) -> Tuple[float, float]:
        raise NotImplementedError

    def mean_offspring(self) -> float:
        raise NotImplementedError

    def sample_offspring_marks(self, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Marks for n independent vertices as a padded (n, D) array with a validity mask"""
        raise NotImplementedError

    def sample_spine_steps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def pair_moment(self) -> float:
        """E[sum over x != y, |x| = |y| = 1 of exp(-V(x) - V(y))]"""
        raise NotImplementedError

    def tilted_negative_moment(self, kappa: float) -> float:
        """E[sum over |x| = 1 of max(-V(x), 0) exp(-kappa V(x))]"""
        raise NotImplementedError

    def is_lattice(self) -> bool:
        return False

    def sample_marks(self, rng: np.random.Generator) -> np.ndarray:
        marks, mask = self.sample_offspring_marks(rng, 1)
        return marks[0][mask[0]]


class GaussianFamily(MarkFamily):
    """d children, i.i.d. N(mu, sigma2) marks"""

    def __init__(self, d: int, mu: float, sigma2: float):
        self.d = d
        self.mu = mu
        self.sigma2 = sigma2
        self.sigma = math.sqrt(sigma2)

    def psi(self, t):
        return (math.log(self.d) - t * self.mu + 0.5 * t * t * self.sigma2,
                -self.mu + t * self.sigma2)

    def mean_offspring(self):
        return float(self.d)

    def sample_offspring_marks(self, rng, n):
        marks = rng.normal(self.mu, self.sigma, size=(n, self.d))
        return marks, np.ones((n, self.d), dtype=bool)

    def sample_spine_steps(self, rng, size):
        # exponential tilt of a Gaussian by exp(-A) shifts the mean by -sigma2
        return rng.normal(self.mu - self.sigma2, self.sigma, size=size)

    def pair_moment(self):
        one = math.exp(-self.mu + 0.5 * self.sigma2)
        return self.d * (self.d - 1) * one * one

    def tilted_negative_moment(self, kappa):
        scale = math.exp(-kappa * self.mu + 0.5 * kappa * kappa * self.sigma2)
        return self.d * scale * _positive_part_mean(-(self.mu - kappa * self.sigma2), self.sigma)

    def kappa_closed_form(self) -> float:
        """Smallest root > 1 of the quadratic psi"""
        a, b, c = 0.5 * self.sigma2, -self.mu, math.log(self.d)
        psi_one = a + b + c
        if abs(psi_one) <= PSI_ONE_TOLERANCE:
            # product of the roots is c / a and one root is 1
            root = c / a
            if root > 1.0:
                return root
            raise NoRootError("psi has no zero beyond 1")
        disc = b * b - 4 * a * c
        if disc < 0:
            raise NoRootError("psi has no real zero")
        sq = math.sqrt(disc)
        roots = sorted(((-b - sq) / (2 * a), (-b + sq) / (2 * a)))
        for root in roots:
            if root > 1.0:
                return root
        raise NoRootError("psi has no zero beyond 1")


class FiniteSupportFamily(MarkFamily):
    """Finite table of offspring configurations, each with optional Gaussian jitter"""

    def __init__(self, probabilities: Sequence[float], marks: Sequence[Sequence[float]], jitters: Sequence[float]):
        self.probabilities = np.asarray(probabilities, dtype=float)
        self.jitters = np.asarray(jitters, dtype=float)
        self.sizes = np.array([len(m) for m in marks], dtype=np.int64)
        width = int(self.sizes.max()) if len(self.sizes) else 0
        self.base = np.zeros((len(marks), width))
        self.mask = np.zeros((len(marks), width), dtype=bool)
        for r, row in enumerate(marks):
            self.base[r, :len(row)] = row
            self.mask[r, :len(row)] = True
        self.width = width
        self._live = self.probabilities > 0

    def _atoms(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (log weight, mark, jitter) over every child slot of every live row"""
        rows, cols = np.nonzero(self.mask & self._live[:, None])
        return np.log(self.probabilities[rows]), self.base[rows, cols], self.jitters[rows]

    def psi(self, t):
        log_w, a, s = self._atoms()
        if len(a) == 0:
            raise DomainError("family never has children: psi = -inf")
        exponent = log_w - t * a + 0.5 * t * t * s * s
        psi = float(special.logsumexp(exponent))
        weights = np.exp(exponent - psi)
        return psi, float(np.sum(weights * (-a + t * s * s)))

    def mean_offspring(self):
        return float(np.sum(self.probabilities * self.sizes))

    def sample_offspring_marks(self, rng, n):
        rows = rng.choice(len(self.probabilities), size=n, p=self.probabilities)
        marks = self.base[rows]
        jitter = self.jitters[rows]
        if np.any(jitter > 0):
            marks = marks + jitter[:, None] * rng.standard_normal((n, self.width))
        return marks, self.mask[rows]

    def sample_spine_steps(self, rng, size):
        log_w, a, s = self._atoms()
        tilt = log_w - a + 0.5 * s * s
        p = np.exp(tilt - special.logsumexp(tilt))
        pick = rng.choice(len(a), size=size, p=p)
        steps = a[pick] - s[pick] ** 2
        if np.any(s > 0):
            steps = steps + s[pick] * rng.standard_normal(size)
        return steps

    def pair_moment(self):
        total = 0.0
        for r in np.nonzero(self._live)[0]:
            a = self.base[r][self.mask[r]]
            e = np.exp(-a)
            total += self.probabilities[r] * math.exp(self.jitters[r] ** 2) * (e.sum() ** 2 - np.sum(e * e))
        return float(total)

    def tilted_negative_moment(self, kappa):
        log_w, a, s = self._atoms()
        total = 0.0
        for lw, ai, si in zip(log_w, a, s):
            scale = math.exp(lw - kappa * ai + 0.5 * kappa * kappa * si * si)
            total += scale * _positive_part_mean(-(ai - kappa * si * si), si)
        return total

    @property
    def lattice_free(self):
        return bool(np.any(self.jitters[self._live] > 0) and self.mean_offspring() > 0)

    def is_lattice(self):
        if self.lattice_free:
            return False
        _, a, _ = self._atoms()
        values = np.unique(a)
        if len(values) <= 1:
            return True
        diffs = values[1:] - values[0]
        span = diffs[0]
        for d in diffs[1:]:
            ratio = Fraction(float(d / span)).limit_denominator(1000)
            if abs(float(ratio) - d / span) > 1e-9:
                return False
        return True


@lru_cache(maxsize=64)
def family_for(spec: EnvironmentSpec) -> MarkFamily:
    """Sampler and moment formulas for a spec"""
    if spec.family_id in (FamilyId.GAUSSIAN_BINARY, FamilyId.GAUSSIAN):
        d, mu, sigma2 = spec.params
        return GaussianFamily(int(d), mu, sigma2)
    return FiniteSupportFamily(
        [row.probability for row in spec.table],
        [row.marks for row in spec.table],
        [row.jitter for row in spec.table],
    )


def psi_and_derivative(spec: EnvironmentSpec, t: float) -> Tuple[float, float]:
    """
    Evaluate psi(t) = log E[sum over |x| = 1 of exp(-t V(x))] and its derivative

    Args:
        spec: Environment law
        t: Argument

    Returns:
        (psi, psi_prime)
    """
    if not math.isfinite(t):
        raise DomainError(f"psi is not defined at t={t}")
    psi, dpsi = family_for(spec).psi(float(t))
    if not math.isfinite(psi):
        raise DomainError(f"psi({t}) is not finite")
    return psi, dpsi


def solve_kappa(spec: EnvironmentSpec, t_max: float = KAPPA_T_MAX) -> float:
    """
    kappa = inf{t > 1 : psi(t) = 0}

    Closed form for the Gaussian families, sign bracketing then bisection otherwise.
    Raises NoRootError when psi keeps its sign on (1, t_max].
    """
    family = family_for(spec)
    if isinstance(family, GaussianFamily):
        return family.kappa_closed_form()

    def psi(t):
        return family.psi(t)[0]

    grid = np.concatenate(([KAPPA_BRACKET_LOW], np.geomspace(1.0 + 1e-3, t_max, 400)))
    values = [psi(t) for t in grid]
    for lo, hi, f_lo, f_hi in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        if f_lo == 0.0:
            return float(lo)
        if f_lo * f_hi < 0:
            root = optimize.bisect(psi, lo, hi, xtol=1e-15, maxiter=200)
            if abs(psi(root)) > KAPPA_TOLERANCE:
                logger.warning(f"⚠️ kappa solve residual {psi(root):.3e}")
            return float(root)
    raise NoRootError(f"psi keeps its sign on (1, {t_max}]: kappa is infinite")


def psi_profile(spec: EnvironmentSpec, grid: Sequence[float]) -> PsiProfile:
    try:
        kappa: Optional[float] = solve_kappa(spec)
    except NoRootError:
        kappa = None
    return PsiProfile(
        grid=tuple(float(t) for t in grid),
        psi_at=tuple(psi_and_derivative(spec, t)[0] for t in grid),
        kappa=kappa,
        psi_prime_1=psi_and_derivative(spec, 1.0)[1],
    )


def make_gaussian_binary_family(kappa_target: float) -> EnvironmentSpec:
    """Binary tree with Gaussian marks tuned so that psi(1) = 0 and psi(kappa_target) = 0"""
    if not kappa_target > 1:
        raise DomainError("kappa_target must exceed 1")
    sigma2 = 2.0 * math.log(2.0) / kappa_target
    mu = math.log(2.0) + 0.5 * sigma2
    return EnvironmentSpec.gaussian_binary(mu, sigma2)


def recurrence_regime(spec: EnvironmentSpec) -> str:
    """Classify the biased walk from inf over [0, 1] of psi and psi'(1)"""
    family = family_for(spec)
    res = optimize.minimize_scalar(lambda t: family.psi(t)[0], bounds=(0.0, 1.0), method="bounded")
    inf_psi = min(res.fun, family.psi(0.0)[0], family.psi(1.0)[0])
    psi_one, dpsi_one = family.psi(1.0)
    if inf_psi < -PSI_ONE_TOLERANCE:
        return "positive-recurrent"
    if inf_psi > PSI_ONE_TOLERANCE:
        return "transient"
    if abs(psi_one) <= PSI_ONE_TOLERANCE and dpsi_one < 0:
        return "null-recurrent"
    return "null-recurrent-slow"


def validate_assumptions(spec: EnvironmentSpec, delta: float = VALIDATION_DELTA) -> ValidationReport:
    """
    Check the regime and the moment assumptions the limit theorems need

    Never raises; every failed assumption shows up as a failed Check.
    """
    family = family_for(spec)
    report = ValidationReport(spec=spec.to_dict())

    def add(name, passed, value=None, target=None, detail=""):
        report.checks.append(Check(name=name, passed=bool(passed), value=value, target=target, detail=detail))

    mean_n = family.mean_offspring()
    add("supercritical", mean_n > 1, mean_n, 1.0, "E[N] > 1")

    try:
        psi_one, dpsi_one = psi_and_derivative(spec, 1.0)
    except DomainError as e:
        add("psi(1)=0", False, detail=str(e))
        report.regime = "undefined"
        return report
    report.psi_prime_1 = dpsi_one
    add("psi(1)=0", abs(psi_one) <= PSI_ONE_TOLERANCE, psi_one, 0.0)
    add("psi'(1)<0", dpsi_one < 0, dpsi_one, 0.0)

    kappa = None
    try:
        kappa = solve_kappa(spec)
        add("kappa exists", kappa > 1, kappa, detail="smallest zero of psi beyond 1")
    except (NoRootError, DomainError) as e:
        add("kappa exists", False, detail=str(e))
    report.kappa = kappa

    upper = min(kappa, 2.0) if kappa is not None else 2.0
    grid = np.linspace(1.0 - delta, upper + delta, 41)
    finite = True
    for t in grid:
        try:
            psi_and_derivative(spec, float(t))
        except DomainError:
            finite = False
            break
    add("psi finite near [1, kappa^2]", finite, detail=f"checked on ({1 - delta:.3f}, {upper + delta:.3f})")

    pair = family.pair_moment()
    add("pair moment finite", math.isfinite(pair), pair)

    if kappa is not None and kappa <= 2:
        tilted = family.tilted_negative_moment(kappa)
        add("tilted moment finite", math.isfinite(tilted), tilted, detail="needed for kappa in (1, 2]")
    else:
        add("tilted moment finite", True, detail="not required for kappa > 2")

    add("non-lattice", not family.is_lattice(), detail="continuous marks" if family.lattice_free else "discrete marks")

    try:
        report.regime = recurrence_regime(spec)
    except DomainError:
        report.regime = "undefined"
    return report


class EnvTree:
    """
    Lazily grown marked Galton-Watson tree stored in flat per-vertex lists

    Vertex 0 is the root e; its parent is ESTAR. Every vertex owns a Philox
    stream keyed from its parent's stream, so the marks below a vertex depend
    only on the tree seed and the vertex's ancestral line, never on the order in
    which vertices were grown.
    """

    root = 0

    def __init__(self, spec: EnvironmentSpec, seed: int, caps: Optional[Caps] = None):
        self.spec = spec
        self.family = family_for(spec)
        self.seed = int(seed)
        self.caps = caps or Caps()
        self.parent: List[int] = [ESTAR]
        self.mark: List[float] = [0.0]
        self.potential: List[float] = [0.0]
        self.depth: List[int] = [0]
        self.children: List[Optional[range]] = [None]
        self._keys: List[int] = [rngs.vertex_root_key(self.seed)]
        self.weights_cache: dict = {}  # jump tables, filled by the walker
        self.split_cache: dict = {}  # offspring split laws, filled by the range sampler

    def __len__(self) -> int:
        return len(self.parent)

    def grow_children(self, vertex: int) -> range:
        kids = self.children[vertex]
        if kids is not None:
            return kids
        if self.depth[vertex] + 1 > self.caps.max_depth:
            raise DepthCapExceeded(vertex)
        stream = rngs.vertex_stream(self._keys[vertex])
        marks = self.family.sample_marks(stream)
        n = len(marks)
        if len(self.parent) + n > self.caps.max_vertices:
            raise CappedGrowth("vertices", vertex)
        keys = rngs.child_keys(stream, n)
        start = len(self.parent)
        base = self.potential[vertex]
        child_depth = self.depth[vertex] + 1
        for a, key in zip(marks.tolist(), keys):
            self.parent.append(vertex)
            self.mark.append(a)
            self.potential.append(base + a)
            self.depth.append(child_depth)
            self.children.append(None)
            self._keys.append(key)
        kids = range(start, start + n)
        self.children[vertex] = kids
        return kids

    def ancestry(self, vertex: int) -> List[int]:
        """Vertices on the path from the root to vertex, both included"""
        path = []
        while vertex != ESTAR:
            path.append(vertex)
            vertex = self.parent[vertex]
        return path[::-1]

    def path_potentials(self, vertex: int) -> List[float]:
        return [self.potential[v] for v in self.ancestry(vertex)]

    def depth_first(self, limit: int) -> Iterator[int]:
        """First `limit` vertices in depth-first order, growing as needed"""
        stack = [self.root]
        seen = 0
        while stack and seen < limit:
            v = stack.pop()
            yield v
            seen += 1
            stack.extend(reversed(self.grow_children(v)))

    def level(self, k: int) -> List[int]:
        """All vertices of generation k, growing the tree down to k"""
        frontier = [self.root]
        for _ in range(k):
            nxt: List[int] = []
            for v in frontier:
                nxt.extend(self.grow_children(v))
            frontier = nxt
        return frontier


def grow_children(tree: EnvTree, vertex: int) -> range:
    """Children of vertex, sampled on first request and memoized afterwards"""
    return tree.grow_children(vertex)


def additive_martingale(tree: EnvTree, k: int) -> AdditiveMartingaleSample:
    """W_k = sum over |x| = k of exp(-V(x)) on one tree"""
    if k < 0:
        raise DomainError("level must be non-negative")
    potentials = np.array([tree.potential[v] for v in tree.level(k)])
    return AdditiveMartingaleSample(level=k, W=math.fsum(np.exp(-potentials)) if len(potentials) else 0.0)


def sample_additive_martingale(
    spec: EnvironmentSpec,
    k: int,
    n_samples: int,
    rng: np.random.Generator,
    max_vertices: int = MAX_RANGE_VERTICES,
) -> np.ndarray:
    """
    Annealed draws of W_k over independent environments, one vectorised level sweep per chunk

    Args:
        spec: Environment law
        k: Level
        n_samples: Number of independent trees
        rng: Generator for the whole batch
        max_vertices: Largest level population held in memory at once

    Returns:
        Array of n_samples values of W_k
    """
    family = family_for(spec)
    expected = max(family.mean_offspring(), 1.0) ** k
    if expected > max_vertices:
        raise CappedGrowth("vertices")
    chunk = max(1, int(max_vertices // (4 * expected)))
    out = np.zeros(n_samples)
    for start in range(0, n_samples, chunk):
        stop = min(n_samples, start + chunk)
        ids = np.arange(start, stop)
        V = np.zeros(stop - start)
        for _ in range(k):
            if len(V) == 0:
                break
            if len(V) > max_vertices:
                raise CappedGrowth("vertices")
            marks, mask = family.sample_offspring_marks(rng, len(V))
            V = (V[:, None] + marks)[mask]
            ids = np.broadcast_to(ids[:, None], mask.shape)[mask]
        out[start:stop] = np.bincount(ids - start, weights=np.exp(-V), minlength=stop - start)
    return out
