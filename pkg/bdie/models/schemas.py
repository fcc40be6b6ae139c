from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import Dict, List, Literal, Optional


CaseName = Literal["laplace-linear", "exp-linear", "quadratic", "constant"]
CoefficientName = Literal["const", "exp_linear", "one_plus_x1_squared"]
SuiteName = Literal["solve", "identities", "convergence", "spectrum"]

DEFAULT_SEED = 20240607


class GeometryConfig(BaseModel):
    """Boundary and volume quadrature resolution"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    radius: float = Field(default=1.0, gt=0.0, description="Ball radius")
    n_polar: int = Field(default=16, ge=4, description="Gauss-Legendre nodes in cos θ on S (even)")
    n_azimuth: int = Field(default=32, ge=8, description="Uniform azimuthal nodes on S")
    n_r: int = Field(default=8, ge=2, description="Radial Gauss-Legendre nodes in Ω")
    volume_polar: int = Field(default=12, ge=2, description="Polar nodes of the volume rule")
    volume_azimuth: int = Field(default=24, ge=2, description="Azimuthal nodes of the volume rule")

    @field_validator("n_polar")
    @classmethod
    def _even_polar(cls, value: int) -> int:
        if value % 2 != 0:
            raise ValueError(
                f"n_polar must be even (got {value}): an odd count puts a node on the equator, "
                "the partition curve between S_D and S_N"
            )
        return value

    def refined(self) -> "GeometryConfig":
        """Boundary counts doubled, volume unchanged"""
        return self.model_copy(update={"n_polar": 2 * self.n_polar, "n_azimuth": 2 * self.n_azimuth})

    def coarsened(self) -> "GeometryConfig":
        """Every count halved, kept within the allowed ranges"""
        half_polar = max(4, self.n_polar // 2)
        return self.model_copy(update={
            "n_polar": half_polar + half_polar % 2,
            "n_azimuth": max(8, self.n_azimuth // 2),
            "n_r": max(2, self.n_r // 2),
            "volume_polar": max(2, self.volume_polar // 2),
            "volume_azimuth": max(2, self.volume_azimuth // 2),
        })

    def label(self) -> str:
        return (
            f"S{self.n_polar}x{self.n_azimuth}/"
            f"V{self.n_r}x{self.volume_polar}x{self.volume_azimuth}"
        )


def default_convergence_levels() -> List[GeometryConfig]:
    return [
        GeometryConfig(n_polar=8, n_azimuth=16, n_r=4, volume_polar=6, volume_azimuth=12),
        GeometryConfig(n_polar=12, n_azimuth=24, n_r=6, volume_polar=9, volume_azimuth=18),
        GeometryConfig(n_polar=16, n_azimuth=32, n_r=8, volume_polar=12, volume_azimuth=24),
    ]


class CoefficientConfig(BaseModel):
    """Registered coefficient a(x) and its parameters"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: CoefficientName = Field(..., description="Registered coefficient name")
    params: Dict[str, float] = Field(default_factory=dict, description="e.g. {'c': 2} or {'k': 2}")


class SolverConfig(BaseModel):
    """Linear solver for M12"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: Literal["dense", "gmres"] = Field(default="dense", description="LU or preconditioned GMRES")
    tol: float = Field(default=1e-8, gt=0.0, description="GMRES relative residual target")
    max_iter: int = Field(default=200, ge=1, description="GMRES inner iteration cap")
    restart: int = Field(default=50, ge=1, description="GMRES restart length")


class RunConfig(BaseModel):
    """Batch run configuration, read from JSON"""
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = Field(default=1, description="Config schema version")
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    coefficient: Optional[CoefficientConfig] = Field(
        default=None, description="Overrides the case coefficient when set"
    )
    case: CaseName = Field(default="laplace-linear", description="Manufactured case for solve/convergence")
    solver: SolverConfig = Field(default_factory=SolverConfig)
    suites: List[SuiteName] = Field(default_factory=lambda: ["solve"], min_length=1)
    seed: int = Field(default=DEFAULT_SEED, ge=0, le=2 ** 64 - 1, description="Seed for random checks")
    output_dir: str = Field(default="results", description="Directory for CSV and JSON reports")
    workers: int = Field(default=1, ge=1, description="Threads used for matrix assembly")
    max_degree: int = Field(default=4, ge=0, description="Highest degree in the spectrum comparison")
    convergence_levels: List[GeometryConfig] = Field(default_factory=default_convergence_levels)

    @field_validator("convergence_levels")
    @classmethod
    def _enough_levels(cls, value: List[GeometryConfig]) -> List[GeometryConfig]:
        if len(value) < 3:
            raise ValueError(f"convergence_levels needs at least 3 levels, got {len(value)}")
        return value


class CheckResult(BaseModel):
    """One PASS/FAIL acceptance check"""
    criterion: str = Field(..., description="Criterion group, e.g. 'jump_relations'")
    name: str = Field(..., description="Specific check within the criterion")
    value: float
    tolerance: float
    passed: bool
    detail: str = ""


class SolveSummary(BaseModel):
    """Diagnostics of one M12 solve"""
    case: str
    coefficient: str
    geometry: str
    method: str
    iterations: int
    residual: float
    trace_mismatch: Optional[float] = None
    condition: Optional[float] = None
    errors: Dict[str, float] = Field(default_factory=dict)


class RunSummary(BaseModel):
    """Contents of summary.json"""
    schema_version: int = 1
    config: RunConfig
    seed: int
    passed: bool
    failed_criteria: List[str] = Field(default_factory=list)
    checks: List[CheckResult] = Field(default_factory=list)
    solve: Optional[SolveSummary] = None
    files: List[str] = Field(default_factory=list)
