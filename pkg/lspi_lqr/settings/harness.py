"""This module contains the settings for the experiment harness."""

import os

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


def _default_jobs() -> int:
    return os.cpu_count() or 1


class Settings(BaseSettings):
    """Settings for the experiment harness."""

    model_config = SettingsConfigDict(
        env_prefix="LSPI_LQR_HARNESS_",
        env_file=".env",
        extra="ignore",
    )
    jobs: int = Field(default_factory=_default_jobs)  # trial-level parallelism
    cache_dir: str | None = None  # defaults to a _cache folder next to the package
    generator: str = "PCG64"  # bit generator family echoed in the outputs


settings = Settings()
