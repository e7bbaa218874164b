# src/domain/models.py
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.interpolate import PchipInterpolator
from scipy.special import gamma

from src.errors import TableRangeError, ValidationError


class AreaKind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    HYPERBOLIC = "hyperbolic"
    POWER = "power"
    LOGPOWER = "logpower"
    TABLE = "table"

class Parabolicity(str, enum.Enum):
    PARABOLIC = "parabolic"
    NONPARABOLIC = "nonparabolic"
    INCONCLUSIVE = "inconclusive"

class DomainKind(str, enum.Enum):
    RADIAL1D = "radial1d"
    SURFACE2D = "surface2d"

class NodeTag(enum.IntEnum):
    NONE = 0
    INNER = 1
    OUTER = 2

class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"

class LemmaStarStatus(str, enum.Enum):
    HOLDS = "holds"
    HYPOTHESIS_NOT_MET = "hypothesis_not_met"


def sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n-1} in R^n."""
    return float(2.0 * np.pi ** (n / 2.0) / gamma(n / 2.0))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# ---------- Model manifolds ----------

@dataclass(frozen=True, eq=False)
class ModelManifold:
    dimension: int
    kind: AreaKind
    base_radius: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    table_r: Optional[np.ndarray] = None
    table_area: Optional[np.ndarray] = None
    source: str = ""

    def __post_init__(self):
        if self.dimension < 2:
            raise ValidationError(f"dimension must be >= 2, got {self.dimension}")
        if not self.base_radius > 0:
            raise ValidationError(f"base_radius must be > 0, got {self.base_radius}")
        if self.kind == AreaKind.TABLE:
            if self.table_r is None or self.table_area is None or len(self.table_r) < 2:
                raise ValidationError("table manifold needs at least two (r, A) rows")
            r = np.asarray(self.table_r, dtype=float)
            a = np.asarray(self.table_area, dtype=float)
            if np.any(np.diff(r) <= 0) or np.any(r <= 0) or np.any(a <= 0):
                raise ValidationError("table radii must increase and r, A must be positive")
            object.__setattr__(self, "table_r", _readonly(r))
            object.__setattr__(self, "table_area", _readonly(a))

    @property
    def omega(self) -> float:
        return sphere_area(self.dimension)

    @property
    def is_named(self) -> bool:
        return self.kind != AreaKind.TABLE

    @property
    def max_radius(self) -> float:
        if self.kind == AreaKind.TABLE:
            return float(self.table_r[-1])
        return float("inf")

    @cached_property
    def _log_interp(self) -> PchipInterpolator:
        return PchipInterpolator(np.log(self.table_r), np.log(self.table_area), extrapolate=False)

    def area(self, r):
        """A(r), vectorized. Table forms refuse to extrapolate."""
        r = np.asarray(r, dtype=float)
        n = self.dimension
        if self.kind == AreaKind.EUCLIDEAN:
            return r ** (n - 1)
        if self.kind == AreaKind.HYPERBOLIC:
            return np.sinh(r) ** (n - 1)
        if self.kind == AreaKind.POWER:
            return r ** self.alpha
        if self.kind == AreaKind.LOGPOWER:
            return r ** self.alpha * np.log1p(r) ** self.beta
        lo, hi = self.table_r[0], self.table_r[-1]
        if np.any(r < lo * (1 - 1e-12)) or np.any(r > hi * (1 + 1e-12)):
            raise TableRangeError(f"radius outside table range [{lo}, {hi}]")
        return np.exp(self._log_interp(np.log(np.clip(r, lo, hi))))


@dataclass(frozen=True, eq=False)
class RadialProfile:
    grid: np.ndarray
    values: np.ndarray
    p: float

    def __post_init__(self):
        object.__setattr__(self, "grid", _readonly(self.grid))
        object.__setattr__(self, "values", _readonly(self.values))


# ---------- Discrete domains ----------

@dataclass(frozen=True, eq=False)
class DiscreteDomain:
    """Nodes, cells and metric weights of a computational arena.

    Each cell c carries a volume weight vol[c] and the gradient components
    (G_k u)[c]; the discrete |grad u|^2 on c is sum_k (G_k u)[c]^2.
    """
    kind: DomainKind
    coords: np.ndarray
    shape: Tuple[int, ...]
    grad_ops: Tuple[sparse.csr_matrix, ...]
    vol: np.ndarray
    tags: np.ndarray
    omega: float
    theta_periodic: bool = False
    manifold: Optional[ModelManifold] = None

    def __post_init__(self):
        object.__setattr__(self, "coords", _readonly(self.coords))
        object.__setattr__(self, "vol", _readonly(self.vol))
        object.__setattr__(self, "tags", _readonly(self.tags))
        if np.any(self.vol <= 0):
            raise ValidationError("every cell volume must be positive")

    @property
    def n_nodes(self) -> int:
        return int(self.coords.shape[0])

    @property
    def n_cells(self) -> int:
        return int(self.vol.shape[0])

    @property
    def radii(self) -> np.ndarray:
        return self.coords[:, 0]

    @property
    def theta(self) -> Optional[np.ndarray]:
        return self.coords[:, 1] if self.coords.shape[1] > 1 else None

    @property
    def inner_mask(self) -> np.ndarray:
        return self.tags == NodeTag.INNER

    @property
    def outer_mask(self) -> np.ndarray:
        return self.tags == NodeTag.OUTER

    @property
    def r_min(self) -> float:
        return float(self.radii.min())

    @property
    def r_max(self) -> float:
        return float(self.radii.max())

    @cached_property
    def stacked_grad(self) -> sparse.csr_matrix:
        return sparse.vstack(self.grad_ops).tocsr()

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Node-to-node incidence through shared cells (no self loops)."""
        g = abs(self.stacked_grad)
        g.data[:] = 1.0
        adj = (g.T @ g).tocsr()
        adj.setdiag(0)
        adj.eliminate_zeros()
        return adj

    def neighbors_of(self, mask: np.ndarray) -> np.ndarray:
        """Nodes outside `mask` touching a node of `mask`."""
        touched = (self.adjacency @ mask.astype(float)) > 0
        return touched & ~mask


@dataclass(frozen=True, eq=False)
class ScalarField:
    domain: DiscreteDomain
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.domain.n_nodes,):
            raise ValidationError(f"field has {v.shape} values, domain has {self.domain.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field values must be finite")
        object.__setattr__(self, "values", _readonly(v))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.domain, values)


@dataclass(frozen=True, eq=False)
class Exhaustion:
    """Nested node subsets D_0 ⊂ D_1 ⊂ ... ⊂ D_N = all nodes."""
    levels: Tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, n: int) -> np.ndarray:
        return self.levels[n]


# ---------- Solver ----------

@dataclass(frozen=True, eq=False)
class ObstacleProblemSpec:
    """Minimize D_p over {u >= obstacle on free nodes, u = theta on fixed nodes}.

    obstacle may hold -inf to disable the constraint on a node.
    """
    domain: DiscreteDomain
    p: float
    obstacle: np.ndarray
    theta: np.ndarray
    fixed: np.ndarray

    def __post_init__(self):
        n = self.domain.n_nodes
        for name in ("obstacle", "theta", "fixed"):
            if np.asarray(getattr(self, name)).shape != (n,):
                raise ValidationError(f"{name} must have one entry per node")
        if not self.p > 1:
            raise ValidationError(f"p must be > 1, got {self.p}")
        object.__setattr__(self, "obstacle", _readonly(np.asarray(self.obstacle, dtype=float)))
        object.__setattr__(self, "theta", _readonly(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "fixed", _readonly(np.asarray(self.fixed, dtype=bool)))

    @classmethod
    def from_obstacle(cls, domain: DiscreteDomain, p: float, psi: np.ndarray,
                      fixed: np.ndarray) -> "ObstacleProblemSpec":
        """One-argument form K_psi: boundary data equal to the obstacle."""
        return cls(domain=domain, p=p, obstacle=psi, theta=psi, fixed=fixed)

    @property
    def feasible(self) -> bool:
        f = self.fixed
        return bool(np.all(self.theta[f] >= self.obstacle[f]))


@dataclass
class SolveReport:
    status: SolveStatus
    iterations: int
    energy: float
    residual: float
    epsilon: float
    contact: Optional[np.ndarray] = None
    noncontact_residual: Optional[float] = None

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED


@dataclass
class SupersolutionCheck:
    passed: bool
    offending: np.ndarray
    worst: float


# ---------- Capacity ----------

@dataclass
class CapacityResult:
    value: float
    potential: ScalarField
    report: SolveReport
    condenser: np.ndarray
    region: np.ndarray

@dataclass
class ScalingReport:
    t: float
    s: float
    measured: float
    predicted: float
    ratio: float
    band: float

    @property
    def within_band(self) -> bool:
        return abs(self.ratio - 1.0) <= self.band

@dataclass
class DecayRow:
    n: int
    r_max: float
    capacity: float
    predicted: Optional[float] = None

@dataclass
class CapacityDecay:
    rows: List[DecayRow]
    limit: float
    limit_converged: bool


# ---------- Model-manifold results ----------

@dataclass
class ParabolicityReport:
    status: Parabolicity
    f_at_cutoff: float
    tail_estimate: float
    cutoff: float
    exponent: Optional[float] = None
    capacity_at_cutoff: Optional[float] = None

@dataclass
class EvansLevelCheck:
    t: float
    radius: float
    energy: float
    energy_expected: float
    capacity: float
    capacity_expected: float

@dataclass
class RadialEvans:
    profile: RadialProfile
    checks: List[EvansLevelCheck]


# ---------- Convexity ----------

@dataclass(frozen=True)
class ModulusBound:
    p: float

    def __call__(self, eps):
        from src.services.convexity_service import clarkson_modulus
        return clarkson_modulus(self.p, eps)

@dataclass
class LemmaStarResult:
    status: LemmaStarStatus
    lhs: float
    rhs: float
    sigma: float

@dataclass
class SuiteSummary:
    p: float
    trials: int
    hypothesis_met: int
    violations: int
    worst_margin: float


# ---------- Khas'minskii ----------

@dataclass
class ForwardRow:
    n: int
    m_n: float
    capacity: float
    holds: bool

@dataclass
class ForwardReport:
    rows: List[ForwardRow]
    conclusion: Parabolicity

@dataclass
class SweepEntry:
    j: int
    sup_gap: float
    delta_energy: float
    f_energy: float
    converged: bool = True

@dataclass
class StageRecord:
    n: int
    j_bar: int
    sup_gap: float
    delta_energy: float
    cumulative_energy: float
    s_before: ScalarField
    delta: ScalarField
    f_j: ScalarField
    s_after: ScalarField
    sweep: List[SweepEntry] = field(default_factory=list)
    converged: bool = True

@dataclass
class KhasminskiiRun:
    stages: List[StageRecord]
    final: ScalarField
    f: ScalarField
    base: np.ndarray
    p: float
    gap_base: float
    energy_rule: bool
    f_energy: float = 0.0

    @property
    def energy_budget(self) -> float:
        """||grad s^(1)||_p + sum_{n>=1} 2^{-n} over the accepted steps."""
        if not self.stages:
            return 0.0
        first = self.stages[0].cumulative_energy
        return first + sum(2.0 ** (-st.n) for st in self.stages[1:])

@dataclass
class AuditReport:
    n: int
    link_a: Tuple[float, float]
    link_b: Tuple[float, float]
    link_c: Optional[Tuple[float, float]]
    passed: bool


# ---------- Evans ----------

@dataclass
class EvansLevel:
    n: int
    field: ScalarField
    m_n: float
    M_n: float
    bound: Optional[float]
    converged: bool = True

@dataclass
class EvansRun:
    levels: List[EvansLevel]
    limit: ScalarField
    radial: np.ndarray
    base: np.ndarray
    condenser: np.ndarray
    p: float
    r_bar: float
    M: float
    m: float

@dataclass
class AsymptoticsRow:
    t: float
    capacity: float
    normalized: float
    lower: float
    upper: float
