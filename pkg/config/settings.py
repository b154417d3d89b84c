import os

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings for the coordination-capacity toolkit."""

    model_config = SettingsConfigDict(env_prefix="COORDCAP_", case_sensitive=False)

    # Service / logging
    service_name: str = Field(default="coordcap", description="Logger service key")
    log_level: str = Field(default="WARNING", description="Logger level")
    toolkit_version: str = Field(default="1.0.0", description="Version stamped into run records")

    # Parallelism
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)

    # Solver
    solver_tol: float = Field(default=1e-6, gt=0, description="Frank-Wolfe gap tolerance in nats")
    solver_max_iterations: int = Field(default=100_000, ge=1)
    preimage_relaxation: float = Field(default=1e-9, ge=0, description="l1 radius of exact pre-image constraints")

    # Simulator
    decoder_epsilon: float = Field(default=0.2, gt=0)
    rate_slack: float = Field(default=0.02, ge=0, description="Codebook size slack in nats")
    coordination_threshold: float = Field(default=0.05, gt=0)

    # Resource guards
    codebook_symbol_guard: int = Field(default=10**7, ge=1)
    lattice_guard: int = Field(default=10**7, ge=1)
    enumeration_guard: int = Field(default=2**26, ge=1)


# Global settings instance
settings = Settings()
