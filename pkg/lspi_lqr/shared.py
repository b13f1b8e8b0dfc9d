"""This module defines shared resources."""

from mcp.server.fastmcp import FastMCP

from lspi_lqr.harness.experiments import ExperimentResult

# Create a single shared FastMCP instance
mcp = FastMCP("lspi-lqr")

# Experiment results keyed by the hash of their resolved configuration
local_experiment_cache: dict[str, ExperimentResult] = {}
