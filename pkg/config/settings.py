"""
Application settings and configuration for the coagulation-fragmentation toolkit
"""
import os
from dataclasses import dataclass, field


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, str(default)))


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


@dataclass
class ToleranceConfig:
    """Numerical tolerances shared by the partition and kernel code"""
    struct_tol: float = 1e-12
    fp_tol: float = 1e-15
    simplex_tol: float = 1e-9
    underflow_floor: float = 1e-300


@dataclass
class QuadratureConfig:
    """Quadrature defaults"""
    nodes: int = field(default_factory=lambda: _env_int("CF_QUADRATURE_NODES", 64))
    dyadic_panels: int = 80
    ratio_window: int = 6
    table_knots: int = 4096


@dataclass
class Settings:
    """Main application settings"""

    # Numerics
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    # Size-biased sampling switches to an alias table above this part count
    alias_threshold: int = 64

    # Poisson-Dirichlet sampler defaults
    pd_truncation: float = field(default_factory=lambda: _env_float("CF_PD_TRUNCATION", 1e-8))
    pd_poisson_eps: float = field(default_factory=lambda: _env_float("CF_PD_POISSON_EPS", 1e-6))

    # Harness
    workers: int = field(default_factory=lambda: _env_int("CF_WORKERS", 1))
    verdict_sigmas: float = 4.0
    max_statistics_per_report: int = 8
    burn_in_fraction: float = 0.1
    hitting_blocks: int = 64

    # Output
    output_dir: str = field(default_factory=lambda: os.getenv("CF_OUTPUT_DIR", "results"))
    log_level: str = field(default_factory=lambda: os.getenv("CF_LOG_LEVEL", "INFO"))
    schema_version: str = "v1"


# Global settings instance
settings = Settings()
