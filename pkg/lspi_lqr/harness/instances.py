"""The two benchmark LQR instances and user-supplied custom instances."""

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from lspi_lqr.errors import ConfigError, LqrError
from lspi_lqr.logger import setup_logger
from lspi_lqr.sim import CostModel, LinearSystem

# Create a default project logger
logger = setup_logger()


class InstanceName(str, enum.Enum):
    """Named LQR instances."""

    OFFLINE_PAPER = "offline_paper"
    ADAPTIVE_DEAN = "adaptive_dean"
    CUSTOM = "custom"


@dataclass(frozen=True)
class LqrInstance:
    """A plant together with its cost."""

    name: str
    system: LinearSystem
    cost: CostModel


def offline_paper() -> LqrInstance:
    """Stable 3-state, 2-input instance used for the offline comparison."""
    A = np.array([[0.95, 0.01, 0.0], [0.01, 0.95, 0.01], [0.0, 0.01, 0.95]])
    B = np.array([[1.0, 0.1], [0.0, 0.1], [0.0, 0.1]])
    return LqrInstance(
        name=InstanceName.OFFLINE_PAPER.value,
        system=LinearSystem(A, B, sigma_w=1.0),
        cost=CostModel(np.eye(3), np.eye(2)),
    )


def adaptive_dean() -> LqrInstance:
    """Marginally unstable 3-state instance with fully actuated inputs, for the online runs."""
    A = np.array([[1.01, 0.01, 0.0], [0.01, 1.01, 0.01], [0.0, 0.01, 1.01]])
    return LqrInstance(
        name=InstanceName.ADAPTIVE_DEAN.value,
        system=LinearSystem(A, np.eye(3), sigma_w=1.0),
        cost=CostModel(10.0 * np.eye(3), np.eye(3)),
    )


class CustomInstanceFile(BaseModel):
    """JSON layout of a custom instance file."""

    model_config = ConfigDict(extra="forbid")

    A: list[list[float]]
    B: list[list[float]]
    S: list[list[float]]
    R: list[list[float]]
    sigma_w: float = 1.0
    Sigma0: list[list[float]] | None = None


def load_custom(path: str | Path) -> LqrInstance:
    """Read an instance from a JSON file with keys ``A, B, S, R`` and optional ``sigma_w, Sigma0``."""
    src = Path(path)
    try:
        doc = CustomInstanceFile.model_validate(json.loads(src.read_text(encoding="utf-8")))
    except FileNotFoundError as err:
        raise ConfigError(f"instance_path: file {src} does not exist") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"instance_path: {src} is not valid JSON ({err})") from err
    except ValidationError as err:
        keys = ", ".join(".".join(str(p) for p in e["loc"]) for e in err.errors())
        raise ConfigError(f"invalid custom instance {src}: offending keys {keys}") from err
    try:
        system = LinearSystem(
            np.array(doc.A),
            np.array(doc.B),
            sigma_w=doc.sigma_w,
            Sigma0=None if doc.Sigma0 is None else np.array(doc.Sigma0),
        )
        cost = CostModel(np.array(doc.S), np.array(doc.R))
    except (LqrError, ValueError) as err:
        raise ConfigError(f"invalid custom instance {src}: {err}") from err
    if cost.S.shape != (system.n, system.n) or cost.R.shape != (system.d, system.d):
        raise ConfigError(f"invalid custom instance {src}: S or R does not match A and B")
    logger.info(f"loaded custom instance from {src}: n={system.n}, d={system.d}")
    return LqrInstance(name=InstanceName.CUSTOM.value, system=system, cost=cost)


def resolve_instance(name: InstanceName, path: str | Path | None = None) -> LqrInstance:
    """Expand an instance name into matrices."""
    if name is InstanceName.OFFLINE_PAPER:
        return offline_paper()
    if name is InstanceName.ADAPTIVE_DEAN:
        return adaptive_dean()
    if path is None:
        raise ConfigError("instance_path: required when instance is 'custom'")
    return load_custom(path)
