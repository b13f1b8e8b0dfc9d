"""This module contains the settings for the numerical routines."""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Settings for solvers, simulation and estimation."""

    model_config = SettingsConfigDict(
        env_prefix="LSPI_LQR_",
        env_file=".env",
        extra="ignore",
    )
    symmetry_tol: float = 1e-12  # relative asymmetry tolerated before symmetrizing
    stability_margin: float = 1e-9  # a matrix is stable when rho < 1 - margin
    dare_tol: float = 1e-12  # normalized Riccati residual
    dare_max_iter: int = 100_000
    divergence_threshold: float = 1e8  # bound on the state norm during rollouts
    certificate_horizon: int = 200  # powers checked by stability_certificate
    lstdq_chunk_size: int = 65_536  # rows per accumulation chunk
    log_level: str = "INFO"


settings = Settings()
