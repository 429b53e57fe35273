"""Configuration settings for the benchmark harness."""

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

BLAS_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class Settings(BaseSettings):
    """Run-time settings loaded from ``MLPINIT_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="MLPINIT_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    log_level: str = "info"

    # Threads for the BLAS/OpenMP kernels; 1 keeps reductions bit-reproducible
    num_threads: int = 1

    # Parallel seed trials in `bench`
    workers: int = 1

    # When false, wall-clock fields are written as 0 so outputs are byte-identical
    timing: bool = True

    output_dir: str = "runs"
    precision: int = 32

    @field_validator("precision")
    @classmethod
    def validate_precision(cls, v: int) -> int:
        """Only 32- and 64-bit floats are supported."""
        if v not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        return v

    @field_validator("num_threads", "workers")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        """Thread and worker counts start at 1."""
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    def thread_env(self) -> dict[str, str]:
        """Environment variables that pin the BLAS/OpenMP pools to ``num_threads``."""
        return {var: str(self.num_threads) for var in BLAS_THREAD_VARS}


# Global settings instance
settings = Settings()
