"""This module manages the cache directory and cache keys for experiment results."""

import hashlib
import json
import os
import sys
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from lspi_lqr.logger import setup_logger
from lspi_lqr.settings.harness import settings

# Create a default project logger
logger = setup_logger()


def hash_string(input_string: str) -> str:
    """Creates a hash-string from the input string."""
    return hashlib.sha256(input_string.encode(), usedforsecurity=False).hexdigest()


def get_cache_dir() -> Path:
    """Get the cache directory for the application.

    Returns:
        Path: A Path object pointing to the cache directory.

    The function will:
    1. First check the ``cache_dir`` harness setting (``LSPI_LQR_HARNESS_CACHE_DIR``)
    2. If not set, use a '_cache' directory next to the installed package
    3. Ensure the directory exists before returning
    """
    if settings.cache_dir:
        cache_path = Path(settings.cache_dir)
    else:
        if getattr(sys, "frozen", False):
            # Handle PyInstaller case
            package_root = Path(os.path.dirname(sys.executable))
        else:
            package_root = Path(__file__).resolve().parent.parent
        logger.info(f"package-root: {package_root}")
        cache_path = package_root / "_cache"

    logger.info(f"cache-path: {cache_path}")
    os.makedirs(cache_path, exist_ok=True)

    return cache_path


def get_cache_key(payload: Mapping[str, Any]) -> str:
    """Generate a cache key for a resolved experiment configuration."""
    key_str = json.dumps(payload, sort_keys=True, default=str)
    return hash_string(key_str)[:32]
