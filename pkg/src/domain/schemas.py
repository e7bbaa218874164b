from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from .models import Parabolicity, SolveStatus


# ---------- Experiment configuration ----------

class ExperimentConfig(BaseModel):
    manifold: str = "euclidean:n=2"
    p: float = 2.0
    rmin: Optional[float] = None
    rmax: float = 2.0
    grid: int = 1024
    grid_theta: int = 64
    grading: Optional[float | str] = None
    tol: float = 1e-9
    quad_tol: float = 1e-10
    steps: int = 5
    gap_base: float = 0.5
    energy_rule: bool = False
    exhaustion: str = "proper"
    t_list: List[float] = Field(default_factory=lambda: [2.0, 4.0, 8.0])
    levels: List[float] = Field(default_factory=list)
    scaling_pairs: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(0.0, 0.5), (0.25, 0.75), (0.5, 1.0)])
    n_max: int = 10
    condenser: str = "inner"
    trials: int = 100_000
    p_list: List[float] = Field(default_factory=lambda: [1.5, 2.0, 3.0, 4.5])
    run: Optional[str] = None
    out: str = "out"
    seed: int = 0

    @field_validator("p")
    @classmethod
    def _p_above_one(cls, v: float) -> float:
        if not v > 1:
            raise ValueError("p must be > 1")
        return v

    @field_validator("tol", "quad_tol")
    @classmethod
    def _positive_tol(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("tolerances must be > 0")
        return v

    @field_validator("exhaustion")
    @classmethod
    def _exhaustion_kind(cls, v: str) -> str:
        if v not in ("proper", "log"):
            raise ValueError("exhaustion must be 'proper' or 'log'")
        return v

    @field_validator("grid")
    @classmethod
    def _grid_size(cls, v: int) -> int:
        if v < 8:
            raise ValueError("grid must have at least 8 cells")
        return v

    @field_validator("grid_theta")
    @classmethod
    def _theta_size(cls, v: int) -> int:
        if v < 8 or v % 2:
            raise ValueError("grid_theta must be even and >= 8")
        return v

    @model_validator(mode="after")
    def _grading_form(self):
        if isinstance(self.grading, str) and self.grading != "log":
            try:
                self.grading = float(self.grading)
            except ValueError:
                raise ValueError("grading must be 'log' or a ratio")
        return self

    def grading_value(self):
        if self.grading is None or self.grading == "log":
            return self.grading
        return float(self.grading)


# ---------- Artifacts ----------

class SolveReportOut(BaseModel):
    status: SolveStatus
    iterations: int
    energy: float
    residual: float
    epsilon: float

    class Config:
        from_attributes = True


class ParabolicityOut(BaseModel):
    status: Parabolicity
    f_at_cutoff: float
    tail_estimate: float
    cutoff: float
    exponent: Optional[float] = None
    capacity_at_cutoff: Optional[float] = None

    class Config:
        from_attributes = True


class CapacityRowOut(BaseModel):
    n: int
    r_max: float
    capacity: float
    predicted: Optional[float] = None

    class Config:
        from_attributes = True


class CapacityOut(BaseModel):
    value: float
    predicted: Optional[float] = None
    report: SolveReportOut
    rows: List[CapacityRowOut] = Field(default_factory=list)
    limit: Optional[float] = None
    limit_converged: Optional[bool] = None


class ScalingRowOut(BaseModel):
    t: float
    s: float
    measured: float
    predicted: float
    ratio: float
    band: float

    class Config:
        from_attributes = True


class KhasminskiiStepOut(BaseModel):
    n: int
    j_bar: int
    sup_gap: float
    delta_energy: float
    cumulative_energy: float
    converged: bool = True

    class Config:
        from_attributes = True


class KhasminskiiRunOut(BaseModel):
    p: float
    gap_base: float
    energy_rule: bool
    exhaustion: str
    f_energy: float
    energy_budget: float
    steps: List[KhasminskiiStepOut] = Field(default_factory=list)


class AuditOut(BaseModel):
    n: int
    link_a: Tuple[float, float]
    link_b: Tuple[float, float]
    link_c: Optional[Tuple[float, float]] = None
    passed: bool

    class Config:
        from_attributes = True


class EvansLevelOut(BaseModel):
    n: int
    m_n: float
    M_n: float
    bound: Optional[float] = None
    converged: bool = True

    class Config:
        from_attributes = True


class AsymptoticsRowOut(BaseModel):
    t: float
    capacity: float
    normalized: float
    lower: float
    upper: float

    class Config:
        from_attributes = True


class SuiteOut(BaseModel):
    p: float
    trials: int
    hypothesis_met: int
    violations: int
    worst_margin: float

    class Config:
        from_attributes = True


class FailureOut(BaseModel):
    invariant: Optional[str] = None
    error: str
    detail: str
    exit_code: int


class ReportOut(BaseModel):
    """Envelope of every report.json; the schema version is always the first key."""
    schema_version: int = Field(1, serialization_alias="schema")
    command: str
    run_id: str
    seed: int
    status: str = "ok"
    config: Dict[str, Any] = Field(default_factory=dict)
    result: Optional[Dict[str, Any]] = None
    failure: Optional[FailureOut] = None
