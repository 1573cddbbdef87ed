"""
Resolved run configuration: flags > JSON config file > defaults
"""
import json
import logging
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config.settings import settings
from core.errors import ConfigError
from core.kernel import KernelParams
from core.poisson_dirichlet import PDParams
from core.sigma import SigmaSpec, UniformSigma, parse_sigma

logger = logging.getLogger(__name__)

OutputFormat = Literal["json", "csv", "both"]


class RunConfig(BaseModel):
    """
    Every value a subcommand run depends on. Budgets must be positive and
    the seed is always explicit.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    subcommand: str
    seed: int = Field(ge=0)

    # Chain
    beta_m: float = Field(default=1.0, gt=0.0, le=1.0)
    beta_s: float = Field(default=1.0, gt=0.0, le=1.0)
    sigma: SigmaSpec = Field(default_factory=UniformSigma)

    # PD(theta); theta defaults to beta_s / beta_m
    theta: Optional[float] = Field(default=None, gt=0.0)
    truncation: float = Field(default_factory=lambda: settings.pd_truncation, gt=0.0, lt=1.0)
    eps: float = Field(default_factory=lambda: settings.pd_poisson_eps, gt=0.0, lt=1.0)

    # Budgets
    steps: int = Field(default=100_000, gt=0)
    burn_in: Optional[int] = Field(default=None, ge=0)
    stride: int = Field(default=1, gt=0)
    replicas: int = Field(default=16, gt=0)
    reference_replicas: Optional[int] = Field(default=None, gt=0)
    samples: int = Field(default=10_000, gt=0)
    max_steps: int = Field(default=100_000, gt=0)
    points: int = Field(default=20, gt=0)
    n: int = Field(default=1, gt=0)
    quadrature_nodes: int = Field(default_factory=lambda: settings.quadrature.nodes, gt=0)

    # Subcommand options
    k: int = Field(default=2, gt=0)
    functionals: List[str] = Field(default_factory=lambda: ["Z2", "Z3", "p1", "Z2^2"])
    f: str = "Z2"
    g: str = "Z3"
    k_values: List[int] = Field(default_factory=lambda: [2, 3])
    n_vectors: List[List[int]] = Field(default_factory=lambda: [[2]])
    thresholds: List[Annotated[float, Field(gt=0.0, lt=1.0)]] = Field(default_factory=list)
    j_values: List[int] = Field(default_factory=lambda: [2, 3])
    control: bool = False
    significance: float = Field(default=0.01, gt=0.0, lt=1.0)
    tolerance: float = Field(default=1e-6, gt=0.0)
    abs_tol: float = Field(default=0.0, ge=0.0)
    partition: Optional[List[float]] = None
    sampler: Literal["stick", "poisson"] = "stick"
    numeric: bool = False

    # Execution and output
    workers: int = Field(default_factory=lambda: settings.workers, gt=0)
    output_dir: str = Field(default_factory=lambda: settings.output_dir)
    format: OutputFormat = "both"

    @model_validator(mode="after")
    def _check_budgets(self) -> "RunConfig":
        if self.burn_in is not None and self.burn_in >= self.steps:
            raise ValueError(f"burn_in ({self.burn_in}) must be smaller than steps ({self.steps})")
        return self

    @property
    def kernel_params(self) -> KernelParams:
        return KernelParams(beta_m=self.beta_m, beta_s=self.beta_s)

    @property
    def resolved_theta(self) -> float:
        return self.theta if self.theta is not None else self.beta_s / self.beta_m

    @property
    def pd_params(self) -> PDParams:
        return PDParams(theta=self.resolved_theta, truncation=self.truncation, poisson_eps=self.eps)

    def echo(self) -> str:
        """Canonical JSON of the resolved run, defaults included"""
        payload = self.model_dump(mode="json")
        payload["schema"] = settings.schema_version
        return json.dumps(payload, indent=2, sort_keys=True)


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Read a JSON config file; None gives an empty payload"""
    if not path:
        return {}
    try:
        with open(path) as handle:
            payload = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    # a config echo is valid input
    payload.pop("schema", None)
    return payload


def resolve_run_config(
    defaults: Mapping[str, Any],
    file_payload: Mapping[str, Any],
    flags: Mapping[str, Any]
) -> RunConfig:
    """
    Merge the three layers; flags left unset (None) fall through to the
    config file, then to the defaults.

    Raises:
        SigmaSpecError: If the splitting measure does not validate
        ConfigError: If any other field does not validate
    """
    merged: Dict[str, Any] = dict(defaults)
    merged.update(file_payload)
    merged.update({key: value for key, value in flags.items() if value is not None})

    if "sigma" in merged and not isinstance(merged["sigma"], BaseModel):
        merged["sigma"] = parse_sigma(merged["sigma"])

    try:
        config = RunConfig(**merged)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or "config"
        raise ConfigError(f"Invalid run config field '{field}': {error['msg']}") from e

    logger.debug(f"Resolved run config for {config.subcommand}")
    return config
