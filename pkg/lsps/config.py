"""Configuration management for analyses and simulation sweeps."""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Optional, Tuple

import yaml

from .exceptions import ConfigError
from .models import EstimatorMethod

logger = logging.getLogger(__name__)


def _section(data: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"Config section '{key}' must be a mapping")
    return value


def _convert(raw: Any, kind: type) -> Any:
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.strip().lower() in ("true", "false"):
            return raw.strip().lower() == "true"
        raise ValueError(raw)
    if kind is int:
        if isinstance(raw, bool):
            raise ValueError(raw)
        if isinstance(raw, str):
            try:
                return int(raw)
            except ValueError:
                raw = float(raw)
        if isinstance(raw, float) and not raw.is_integer():
            raise ValueError(raw)
        return int(raw)
    if kind is float and isinstance(raw, bool):
        raise ValueError(raw)
    return kind(raw)


def _typed(data: Dict[str, Any], key: str, kind: type, default: Any) -> Any:
    """Read `key` as `kind`, accepting YAML strings such as "1e-4" or "10"."""
    raw = data.get(key)
    if raw is None:
        return default
    try:
        return _convert(raw, kind)
    except (TypeError, ValueError, OverflowError):
        raise ConfigError(f"'{key}' must be a {kind.__name__}, got {raw!r}")


def _typed_list(data: Dict[str, Any], key: str, kind: type, default: Any) -> Any:
    raw = data.get(key)
    if raw is None:
        return default
    if not isinstance(raw, (list, tuple)):
        raise ConfigError(f"'{key}' must be a list, got {raw!r}")
    return [_typed({key: v}, key, kind, None) for v in raw]


@dataclass
class SolverConfig:
    """Tolerances for the L1 logistic coordinate-descent solver."""

    tol_cd: float = 1e-6
    max_sweeps: int = 10_000
    coef_guard: float = 100.0  # |θ| beyond this signals separation
    standardize_continuous: bool = False
    check_objective: bool = False  # assert monotone objective every sweep
    early_stop_path: bool = True  # stop a CV path once the deviance saturates

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        return cls(
            tol_cd=_typed(data, "tol_cd", float, 1e-6),
            max_sweeps=_typed(data, "max_sweeps", int, 10_000),
            coef_guard=_typed(data, "coef_guard", float, 100.0),
            standardize_continuous=_typed(data, "standardize_continuous", bool, False),
            check_objective=_typed(data, "check_objective", bool, False),
            early_stop_path=_typed(data, "early_stop_path", bool, True),
        )


@dataclass
class RidgeConfig:
    """Held-out R² settings for pinpointability."""

    alphas: List[float] = field(default_factory=lambda: [10.0**p for p in range(-4, 3)])
    outer_folds: int = 5
    inner_folds: int = 3
    tol: float = 1e-10

    @classmethod
    def from_dict(cls, data: dict) -> "RidgeConfig":
        defaults = cls()
        return cls(
            alphas=_typed_list(data, "alphas", float, defaults.alphas),
            outer_folds=_typed(data, "outer_folds", int, defaults.outer_folds),
            inner_folds=_typed(data, "inner_folds", int, defaults.inner_folds),
            tol=_typed(data, "tol", float, defaults.tol),
        )


@dataclass
class PipelineConfig:
    """Settings for the five LSPS steps."""

    n_strata: int = 10
    cv_folds: int = 10
    lambda_grid: Optional[List[float]] = None  # None derives a grid from λ_max
    n_lambdas: int = 20
    lambda_min_ratio: float = 1e-4
    instrument_t_threshold: float = 0.5
    instrument_y_threshold: float = 0.1
    trim: bool = False
    seed: int = 0
    threads: int = 1  # CV folds fitted concurrently
    exclude: List[str] = field(default_factory=list)
    include: Optional[List[str]] = None  # manual covariate list
    solver: SolverConfig = field(default_factory=SolverConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        grid = _typed_list(data, "lambda_grid", float, None)
        return cls(
            n_strata=_typed(data, "n_strata", int, 10),
            cv_folds=_typed(data, "cv_folds", int, 10),
            lambda_grid=grid or None,
            n_lambdas=_typed(data, "n_lambdas", int, 20),
            lambda_min_ratio=_typed(data, "lambda_min_ratio", float, 1e-4),
            instrument_t_threshold=_typed(data, "instrument_t_threshold", float, 0.5),
            instrument_y_threshold=_typed(data, "instrument_y_threshold", float, 0.1),
            trim=_typed(data, "trim", bool, False),
            seed=_typed(data, "seed", int, 0),
            threads=_typed(data, "threads", int, 1),
            exclude=_typed_list(data, "exclude", str, []),
            include=_typed_list(data, "include", str, None),
            solver=SolverConfig.from_dict(_section(data, "solver")),
        )

    def validate(self) -> None:
        if self.n_strata < 1:
            raise ConfigError(f"n_strata must be >= 1, got {self.n_strata}")
        if self.cv_folds < 2:
            raise ConfigError(f"cv_folds must be >= 2, got {self.cv_folds}")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        for name in ("instrument_t_threshold", "instrument_y_threshold"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {value}")
        if self.lambda_grid is not None:
            grid = self.lambda_grid
            if any(v <= 0 for v in grid) or any(a <= b for a, b in zip(grid, grid[1:])):
                raise ConfigError("lambda_grid must be strictly descending positive values")


@dataclass
class InputConfig:
    """Cohort files and the role of each column."""

    format: str = "dense"  # "dense" or "sparse"
    path: Optional[str] = None
    triplets: Optional[str] = None
    dictionary: Optional[str] = None
    subjects: Optional[str] = None
    treatment: str = "treatment"
    outcome: Optional[str] = None
    time: Optional[str] = None
    event: Optional[str] = None
    subject_id: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "InputConfig":
        return cls(
            format=data.get("format", "dense"),
            path=data.get("path"),
            triplets=data.get("triplets"),
            dictionary=data.get("dictionary"),
            subjects=data.get("subjects"),
            treatment=data.get("treatment", "treatment"),
            outcome=data.get("outcome"),
            time=data.get("time"),
            event=data.get("event"),
            subject_id=data.get("subject_id"),
        )

    def validate(self) -> None:
        if self.format == "dense":
            if not self.path:
                raise ConfigError("inputs.path is required for dense input")
        elif self.format == "sparse":
            missing = [k for k in ("triplets", "dictionary", "subjects") if not getattr(self, k)]
            if missing:
                raise ConfigError(f"Sparse input requires: {', '.join(missing)}")
        else:
            raise ConfigError(f"Unknown input format: {self.format}")
        if self.format == "dense":
            survival = self.time is not None or self.event is not None
            incomplete = survival and not (self.time and self.event)
            if survival == (self.outcome is not None) or incomplete:
                raise ConfigError("Declare either 'outcome' or both 'time' and 'event'")


@dataclass
class StudyConfig:
    """Configuration for `analyze` and `diagnose`."""

    inputs: InputConfig
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    output_dir: str = "."

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        return cls(
            inputs=InputConfig.from_dict(_section(data, "inputs")),
            pipeline=PipelineConfig.from_dict(_section(data, "pipeline")),
            output_dir=str(data.get("output_dir", ".")),
        )

    def validate(self) -> None:
        self.inputs.validate()
        self.pipeline.validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _methods(data: dict) -> List[EstimatorMethod]:
    default = ["unadjusted", "lsps", "oracle"]
    try:
        return [EstimatorMethod(m) for m in data.get("methods", default)]
    except ValueError as e:
        raise ConfigError(f"Unknown estimator method: {e}")


class _SweepableConfig:
    """Simulation settings that a sweep point can override by field name."""

    override_fields: ClassVar[Tuple[str, ...]] = ()

    def with_overrides(self, overrides: Dict[str, Any]) -> Any:
        unknown = sorted(set(overrides) - set(self.override_fields))
        if unknown:
            raise ConfigError(f"Invalid sweep parameter(s): {', '.join(unknown)}")
        data: Dict[str, Any] = {name: getattr(self, name) for name in self.override_fields}
        data.update(overrides)
        data["methods"] = [m.value for m in self.methods]  # type: ignore[attr-defined]
        return type(self).from_dict(data)  # type: ignore[attr-defined]


@dataclass
class Sim1Config(_SweepableConfig):
    """Direct pinpointability: u is a sparse linear function of x plus noise."""

    override_fields: ClassVar[Tuple[str, ...]] = (
        "n", "m", "k_latent", "beta_x_sd", "sparsity_u", "sparsity_gamma",
        "gamma_x_sd", "eta_x_sd", "gamma_u", "eta_u", "nu_true",
        "outcome_noise_var", "sigma2", "replicates", "master_seed",
    )

    n: int = 2000
    m: int = 1000
    k_latent: int = 10
    beta_x_sd: float = 0.1
    sparsity_u: float = 0.99
    sparsity_gamma: float = 0.99
    gamma_x_sd: float = 1.0
    eta_x_sd: float = 1.0
    gamma_u: float = 1.0
    eta_u: float = 1.0
    nu_true: float = 2.0
    outcome_noise_var: float = 0.1
    sigma2: float = 1e-4
    replicates: int = 100
    master_seed: int = 0
    methods: List[EstimatorMethod] = field(
        default_factory=lambda: [
            EstimatorMethod.UNADJUSTED,
            EstimatorMethod.LSPS,
            EstimatorMethod.ORACLE,
        ]
    )

    @classmethod
    def from_dict(cls, data: dict) -> "Sim1Config":
        defaults = cls()
        values = {
            name: _typed(data, name, type(getattr(defaults, name)), getattr(defaults, name))
            for name in cls.override_fields
        }
        config = cls(methods=_methods(data), **values)
        config.validate()
        return config

    def validate(self) -> None:
        for name in ("sparsity_u", "sparsity_gamma"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {value}")
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")
        _validate_common(self.n, self.m, self.replicates, self.master_seed)


@dataclass
class Sim2Config(_SweepableConfig):
    """Pinpointability through a shared low-dimensional latent variable."""

    override_fields: ClassVar[Tuple[str, ...]] = (
        "n", "m", "k_latent", "gamma_u", "eta_u", "nu_true",
        "n_confounders", "replicates", "master_seed",
    )

    n: int = 1000
    m: int = 100
    k_latent: int = 10
    gamma_u: float = 1.0
    eta_u: float = 1.0
    nu_true: float = 2.0
    n_confounders: int = 10
    replicates: int = 20
    master_seed: int = 0
    methods: List[EstimatorMethod] = field(
        default_factory=lambda: [
            EstimatorMethod.UNADJUSTED,
            EstimatorMethod.LSPS,
            EstimatorMethod.ORACLE,
        ]
    )

    @classmethod
    def from_dict(cls, data: dict) -> "Sim2Config":
        defaults = cls()
        values = {
            name: _typed(data, name, type(getattr(defaults, name)), getattr(defaults, name))
            for name in cls.override_fields
        }
        config = cls(methods=_methods(data), **values)
        config.validate()
        return config

    def validate(self) -> None:
        if self.n_confounders > self.m:
            raise ConfigError(
                f"n_confounders ({self.n_confounders}) cannot exceed m ({self.m})"
            )
        _validate_common(self.n, self.m, self.replicates, self.master_seed)


def _validate_common(n: int, m: int, replicates: int, master_seed: int) -> None:
    if n < 2 or m < 1:
        raise ConfigError(f"Need n >= 2 and m >= 1, got n={n}, m={m}")
    if replicates < 2:
        raise ConfigError(f"aggregate requires >=2 replicates, got {replicates}")
    if master_seed < 0:
        raise ConfigError(f"master_seed must be unsigned, got {master_seed}")


@dataclass
class SweepConfig:
    """Parameter grid for a sweep.

    Each point is a mapping of simulation-config overrides, e.g. {"sigma2": 1.0}
    or {"n": 1000, "m": 100}.
    """

    points: List[Dict[str, Any]]
    threads: Optional[int] = None
    compute_r2: bool = True
    ridge: RidgeConfig = field(default_factory=RidgeConfig)

    @property
    def param(self) -> str:
        return ",".join(self.points[0].keys()) if self.points else ""

    @classmethod
    def from_dict(cls, data: dict, default_param: str, default_values: List[Any]) -> "SweepConfig":
        if "points" in data:
            points = [dict(p) for p in data["points"]]
        else:
            param = data.get("param", default_param)
            points = [
                dict(v) if isinstance(v, dict) else {param: v}
                for v in data.get("values", default_values)
            ]
        if not points:
            raise ConfigError("Sweep grid is empty")
        keys = set(points[0])
        if any(set(p) != keys for p in points):
            raise ConfigError("Every sweep point must set the same parameters")
        return cls(
            points=points,
            threads=_typed(data, "threads", int, None),
            compute_r2=_typed(data, "compute_r2", bool, True),
            ridge=RidgeConfig.from_dict(_section(data, "ridge")),
        )


SIM1_SIGMA2_GRID = [1e-4, 1e-2, 1.0, 1e2, 1e4]
SIM2_GRID = [{"n": n, "m": m} for n in (1000, 10000) for m in (10, 100, 1000, 10000)]


def load_document(path: str) -> Dict[str, Any]:
    """Read a YAML config document."""
    logger.debug(f"Loading config document: {path}")
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse config {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a mapping at top level")
    return data
