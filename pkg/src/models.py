"""
Data models for the tree walk laboratory

Domain values are dataclasses with to_dict/from_dict so they can be written to
report JSON. Report and configuration schemas are pydantic models.
"""

from dataclasses import dataclass, field, asdict
from enum import Enum
import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from config import (
    MAX_RANGE_VERTICES,
    MAX_TREE_DEPTH,
    MAX_TREE_VERTICES,
    MAX_WALK_STEPS,
    PROBABILITY_TABLE_TOLERANCE,
)
from errors import ConfigError


class FamilyId(str, Enum):
    """Built-in offspring-with-marks families"""
    GAUSSIAN_BINARY = "gaussian-binary"
    GAUSSIAN = "gaussian"
    FINITE_SUPPORT = "finite-support"


@dataclass(frozen=True)
class TableRow:
    """One atom of a finite-support law: N = len(marks) children with these marks"""
    probability: float
    marks: Tuple[float, ...] = ()
    jitter: float = 0.0  # std of an independent Gaussian added to every mark

    def to_dict(self) -> Dict:
        return {"probability": self.probability, "marks": list(self.marks), "jitter": self.jitter}

    @classmethod
    def from_dict(cls, data: Dict) -> 'TableRow':
        return cls(
            probability=float(data["probability"]),
            marks=tuple(float(m) for m in data.get("marks", [])),
            jitter=float(data.get("jitter", 0.0)),
        )


@dataclass(frozen=True)
class EnvironmentSpec:
    """Parametric description of the offspring-with-marks law

    Gaussian families use params = (d, mu, sigma2): every vertex has d children
    with i.i.d. N(mu, sigma2) marks. Finite-support families use the table.
    """
    family_id: FamilyId
    params: Tuple[float, ...] = ()
    table: Tuple[TableRow, ...] = ()

    def __post_init__(self):
        if self.family_id in (FamilyId.GAUSSIAN_BINARY, FamilyId.GAUSSIAN):
            if len(self.params) != 3:
                raise ConfigError("gaussian families take params [d, mu, sigma2]", "environment.params")
            d, _, sigma2 = self.params
            if d != int(d) or d < 1:
                raise ConfigError("offspring count d must be a positive integer", "environment.params")
            if self.family_id == FamilyId.GAUSSIAN_BINARY and int(d) != 2:
                raise ConfigError("gaussian-binary has d = 2", "environment.params")
            if not sigma2 > 0:
                raise ConfigError("sigma2 must be positive", "environment.params")
        elif self.family_id == FamilyId.FINITE_SUPPORT:
            if not self.table:
                raise ConfigError("finite-support family needs a table", "environment.table")
            total = math.fsum(row.probability for row in self.table)
            if abs(total - 1.0) > PROBABILITY_TABLE_TOLERANCE:
                raise ConfigError(f"table probabilities sum to {total!r}, not 1", "environment.table")
            if any(row.probability < 0 or row.jitter < 0 for row in self.table):
                raise ConfigError("probabilities and jitters must be non-negative", "environment.table")

    @property
    def offspring(self) -> int:
        """Fixed offspring count of the Gaussian families"""
        return int(self.params[0])

    @classmethod
    def gaussian_binary(cls, mu: float, sigma2: float) -> 'EnvironmentSpec':
        return cls(FamilyId.GAUSSIAN_BINARY, (2.0, float(mu), float(sigma2)))

    def to_dict(self) -> Dict:
        data: Dict[str, Any] = {"family_id": self.family_id.value}
        if self.params:
            data["params"] = list(self.params)
        if self.table:
            data["table"] = [row.to_dict() for row in self.table]
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'EnvironmentSpec':
        return cls(
            family_id=FamilyId(data["family_id"]),
            params=tuple(float(p) for p in data.get("params", [])),
            table=tuple(TableRow.from_dict(r) for r in data.get("table", [])),
        )


@dataclass(frozen=True)
class Caps:
    """Growth and step budgets; every simulation runs under one"""
    max_vertices: int = MAX_TREE_VERTICES
    max_depth: int = MAX_TREE_DEPTH
    max_steps: int = MAX_WALK_STEPS
    max_range_vertices: int = MAX_RANGE_VERTICES

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'Caps':
        return cls(**{k: int(v) for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class PsiProfile:
    """psi on a grid plus the two numbers the regime hinges on"""
    grid: Tuple[float, ...]
    psi_at: Tuple[float, ...]
    kappa: Optional[float]
    psi_prime_1: float

    def to_dict(self) -> Dict:
        return {"grid": list(self.grid), "psi_at": list(self.psi_at),
                "kappa": self.kappa, "psi_prime_1": self.psi_prime_1}


@dataclass(frozen=True)
class AdditiveMartingaleSample:
    """W_k = sum over |x| = k of exp(-V(x))"""
    level: int
    W: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class TransitionWeights:
    """Quenched jump probabilities out of one vertex"""
    p_up: float
    p_children: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.p_up < 0 or any(p < 0 for p in self.p_children):
            raise ValueError("transition probabilities must be non-negative")
        if abs(self.p_up + math.fsum(self.p_children) - 1.0) > 1e-12:
            raise ValueError("transition probabilities must sum to 1")

    def to_dict(self) -> Dict:
        return {"p_up": self.p_up, "p_children": list(self.p_children)}


@dataclass
class WalkRecord:
    """Edge local times of one walk up to its p-th return block"""
    p: int
    tau_p: int = 0
    edge_counts: Dict[int, int] = field(default_factory=dict)  # vertex -> N_x^(p), insertion = discovery order
    max_depth_reached: int = 0
    completed: bool = False
    cap_hit: Optional[str] = None  # "steps", "depth", "vertices"
    trajectory: Optional[List[int]] = None  # levels |X_j|, -1 for e*, debug mode only

    @property
    def range_size(self) -> int:
        return len(self.edge_counts)

    def metadata(self, seed: Optional[int] = None) -> Dict:
        """Run metadata written next to the per-run CSV"""
        return {
            "seed": seed,
            "p": self.p,
            "tau_p": self.tau_p,
            "completed": self.completed,
            "cap_hit": self.cap_hit,
            "max_depth_reached": self.max_depth_reached,
            "range_size": self.range_size,
        }


@dataclass(frozen=True)
class LevelStats:
    """Level crossings Z_k and level local times L_k = Z_k + Z_{k+1}"""
    Z: Tuple[int, ...]
    L: Tuple[int, ...]

    def rows(self) -> List[Tuple[int, int, int]]:
        return [(k, z, l) for k, (z, l) in enumerate(zip(self.Z, self.L))]

    def to_dict(self) -> Dict:
        return {"Z": list(self.Z), "L": list(self.L)}


@dataclass(frozen=True)
class ConductancePath:
    """H_x and the quenched probability that the edge (x*, x) is ever crossed"""
    H: float
    hit_prob: float
    log_H: float
    return_prob: float  # P_{x*}(N_x >= 1) = 1 - 1/H_x
    mean_visits: float  # E[N_x^(1)] = exp(-V(x))


@dataclass(frozen=True)
class RegenerationSet:
    """Vertices crossed exactly once below level ell whose intermediate ancestors were crossed twice or more"""
    members: Tuple[int, ...]
    level: int
    p: int

    @property
    def size(self) -> int:
        return len(self.members)

    def to_dict(self) -> Dict:
        return {"members": list(self.members), "level": self.level, "p": self.p, "size": self.size}


@dataclass(frozen=True)
class ReducedSubtree:
    """One tree of the reduced forest, stored in depth-first order"""
    root: int
    types: Tuple[int, ...]
    heights: Tuple[int, ...]  # generation relative to the root
    child_counts: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.types)


@dataclass
class ReducedForest:
    subtrees: List[ReducedSubtree] = field(default_factory=list)
    padded: int = 0  # extra i.i.d. type-1 ranges appended after the regeneration subtrees

    @property
    def vertex_count(self) -> int:
        return sum(t.size for t in self.subtrees)


@dataclass(frozen=True)
class ReducedLevelStats:
    Z: Tuple[int, ...]
    L: Tuple[int, ...]

    def to_dict(self) -> Dict:
        return {"Z": list(self.Z), "L": list(self.L)}


@dataclass(frozen=True)
class ForestEncoding:
    """Depth-first height function and Lukasiewicz path of a finite forest"""
    heights: Tuple[int, ...]
    lukasiewicz: Tuple[int, ...]  # running values, starts at 0, one more entry than vertices
    vertex_counts: Tuple[int, ...]  # F(p): vertices in the first p trees

    def rows(self) -> List[Tuple[int, int, int]]:
        """(index, height, lukasiewicz) rows; the final row carries the closing path value"""
        heights = list(self.heights) + [0]
        return [(i, heights[i], v) for i, v in enumerate(self.lukasiewicz)]


@dataclass(frozen=True)
class SurvivalEstimate:
    level: int
    p_hat: float
    se: float
    ci_low: float
    ci_high: float
    survivors: int
    replicates: int
    quenched_p_hat: Optional[Tuple[float, ...]] = None
    warnings: Tuple[str, ...] = ()

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["quenched_p_hat"] = list(self.quenched_p_hat) if self.quenched_p_hat is not None else None
        data["warnings"] = list(self.warnings)
        return data


@dataclass(frozen=True)
class EmpiricalLaplace:
    """Plug-in Laplace transform with percentile bootstrap bands"""
    lambdas: Tuple[float, ...]
    values: Tuple[float, ...]
    band_lo: Tuple[float, ...]
    band_hi: Tuple[float, ...]
    se: Tuple[float, ...]
    n_effective: int
    conditioning: str = "none"
    warnings: Tuple[str, ...] = ()

    def half_width(self, i: int) -> float:
        return 0.5 * (self.band_hi[i] - self.band_lo[i])

    def to_dict(self) -> Dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything a verification suite needs to run reproducibly"""
    spec: EnvironmentSpec
    kappa: float
    mode: str = "range_sampler"  # or "walker"
    n_grid: Tuple[int, ...] = (100, 200, 400)
    a: float = 1.0
    lambda_grid: Tuple[float, ...] = (0.25, 0.5, 1.0, 2.0)
    replicates: int = 10_000
    master_seed: int = 0
    caps: Caps = field(default_factory=Caps)
    workers: int = 1
    batch_size: int = 10_000
    panel_size: int = 50
    panel_replicates: int = 2_000
    w_level: int = 14
    w_samples: int = 2_000
    tolerance: float = 0.05
    relative_tolerance: float = 0.15
    constant_replicates: int = 20_000
    c_kappa_replicates: int = 200_000
    oracle_replicates: int = 2_000
    regeneration_replicates: int = 20
    p: int = 1
    level: Optional[int] = None
    order: Optional[str] = None  # "discovery" or "depth_first"; None picks by mode
    pad_forest: int = 0

    def __post_init__(self):
        if list(self.n_grid) != sorted(set(self.n_grid)) or not self.n_grid:
            raise ConfigError("n_grid must be strictly increasing", "plan.n_grid")
        if self.replicates < 100:
            raise ConfigError("replicates must be at least 100", "plan.replicates")
        if self.mode not in ("walker", "range_sampler"):
            raise ConfigError("mode is walker or range_sampler", "plan.mode")
        if not self.a > 0:
            raise ConfigError("a must be positive", "plan.a")
        if self.p < 1:
            raise ConfigError("p must be a positive integer", "plan.p")

    @property
    def beta(self) -> float:
        """kappa ∧ 2 - 1"""
        return min(self.kappa, 2.0) - 1.0

    def critical_generation(self, n: int) -> int:
        """m(n): floor(a n^beta) for kappa != 2, floor(a n / log n) for kappa = 2"""
        if self.kappa == 2.0:
            return max(1, int(math.floor(self.a * n / math.log(n))))
        return max(1, int(math.floor(self.a * n ** self.beta)))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["spec"] = self.spec.to_dict()
        data["caps"] = self.caps.to_dict()
        data["n_grid"] = list(self.n_grid)
        data["lambda_grid"] = list(self.lambda_grid)
        data.pop("workers")
        return data


# ---------------------------------------------------------------------------
# Report schemas
# ---------------------------------------------------------------------------

class Check(BaseModel):
    """One named pass/fail check inside a report"""
    name: str
    passed: bool
    value: Optional[float] = None
    target: Optional[float] = None
    detail: str = ""


class ValidationReport(BaseModel):
    spec: Dict[str, Any]
    checks: List[Check] = Field(default_factory=list)
    kappa: Optional[float] = None
    psi_prime_1: Optional[float] = None
    regime: str = "unknown"

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def violations(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]


class Provenance(BaseModel):
    source: Literal["closed_form", "monte_carlo", "input", "derived"]
    se: Optional[float] = None


class LimitConstants(BaseModel):
    """Analytic and Monte Carlo constants of the limit theorems"""
    kappa: float
    c_kappa: Optional[float] = None
    c_0: Optional[float] = None
    C_bold_kappa: Optional[float] = None
    C_infty: Optional[float] = None
    c_infty_bold: Optional[float] = None
    gamma_term: Optional[float] = None
    survival_rate: Optional[float] = None
    provenance: Dict[str, Provenance] = Field(default_factory=dict)

    @property
    def beta(self) -> float:
        return min(self.kappa, 2.0) - 1.0


class TailFit(BaseModel):
    index: float
    constant: float  # survival function ~ constant * r^(-index)
    scale: float  # constant^(1/index), the Pareto scale
    hill_index: float
    regression_index: float
    regression_intercept_se: float
    constant_relative_se: float
    hill_index_top: float
    window: Tuple[float, float]
    n_tail: int
    heavy_tailed: bool
    warnings: List[str] = Field(default_factory=list)


class TestReport(BaseModel):
    """Goodness-of-fit outcome"""
    __test__ = False  # keep pytest from collecting this class

    test: str
    statistic: float
    p_value: float
    bins: int = 0
    n_a: int = 0
    n_b: int = 0
    degenerate: bool = False
    warnings: List[str] = Field(default_factory=list)


class CurveRow(BaseModel):
    """One row of a curve CSV (lambda, empirical, band_lo, band_hi, target)"""
    n: int
    lam: float
    empirical: float
    band_lo: float
    band_hi: float
    target: float


class VerificationReport(BaseModel):
    kind: str
    passed: bool
    master_seed: Optional[int] = None
    config_hash: str = ""
    checks: List[Check] = Field(default_factory=list)
    estimates: Dict[str, Any] = Field(default_factory=dict)
    curves: List[CurveRow] = Field(default_factory=list)
    cap_hit_rate: float = 0.0
    warnings: List[str] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)
    tables: Dict[str, List[List[float]]] = Field(default_factory=dict, exclude=True)  # extra CSVs, keyed by suffix


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

ExperimentKind = Literal[
    "psi", "validate", "walk", "range", "reduce", "constants",
    "theorem1", "theorem2", "yaglom", "prop-joint", "oracle-check",
]


class TableRowBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    probability: float
    marks: List[float] = Field(default_factory=list)
    jitter: float = 0.0


class EnvironmentBlock(BaseModel):
    """Either a named family with parameters, or a target kappa for gaussian-binary"""
    model_config = ConfigDict(extra="forbid")
    family_id: FamilyId = FamilyId.GAUSSIAN_BINARY
    params: Optional[List[float]] = None
    kappa: Optional[float] = None
    table: Optional[List[TableRowBlock]] = None


class CapsBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    max_vertices: int = MAX_TREE_VERTICES
    max_depth: int = MAX_TREE_DEPTH
    max_steps: int = MAX_WALK_STEPS
    max_range_vertices: int = MAX_RANGE_VERTICES


class PlanBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    master_seed: int
    mode: Literal["walker", "range_sampler"] = "range_sampler"
    n_grid: List[int] = Field(default_factory=lambda: [100, 200, 400])
    a: float = 1.0
    lambda_grid: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0])
    replicates: int = 10_000
    caps: CapsBlock = Field(default_factory=CapsBlock)
    batch_size: int = 10_000
    panel_size: int = 50
    panel_replicates: int = 2_000
    w_level: int = 14
    w_samples: int = 2_000
    tolerance: float = 0.05
    relative_tolerance: float = 0.15
    constant_replicates: int = 20_000
    c_kappa_replicates: int = 200_000
    oracle_replicates: int = 2_000
    regeneration_replicates: int = 20
    p: int = 1
    level: Optional[int] = None
    pad_forest: int = 0
    order: Optional[Literal["discovery", "depth_first"]] = None


class RunConfig(BaseModel):
    """Top-level experiment configuration file"""
    model_config = ConfigDict(extra="forbid")
    kind: ExperimentKind
    environment: EnvironmentBlock = Field(default_factory=EnvironmentBlock)
    plan: Optional[PlanBlock] = None
    t: float = 1.0  # psi evaluation point
    output_directory: Optional[str] = None
    workers: Optional[int] = None  # TREEWALK_WORKERS when absent
    formats: List[Literal["json", "csv", "summary"]] = Field(default_factory=lambda: ["json", "csv", "summary"])
