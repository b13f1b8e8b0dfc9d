"""Define configuration options across tests."""

import sys
from collections.abc import AsyncGenerator
from contextlib import AsyncExitStack
from typing import Any

import numpy as np
import pytest
import pytest_asyncio
from mcp import ClientSession, StdioServerParameters, Tool
from mcp.client.stdio import stdio_client

from lspi_lqr.harness.instances import LqrInstance, adaptive_dean, offline_paper
from lspi_lqr.sim import CostModel, LinearSystem


class MCPClient:
    def __init__(self) -> None:
        # Initialize session and client objects
        self.session: ClientSession | None = None
        self.exit_stack = AsyncExitStack()

    async def connect_to_server(
        self, server_script_path: str, args: list[str] | None = None
    ) -> None:
        """Connect to an MCP server

        Args:
            server_script_path: Path to the server script
            args: Extra command-line arguments, e.g. tool groups
        """
        if not server_script_path.endswith(".py"):
            raise ValueError("Server script must be a .py file")

        server_params = StdioServerParameters(
            command=sys.executable, args=[server_script_path, *(args or [])], env=None
        )

        stdio_transport = await self.exit_stack.enter_async_context(
            stdio_client(server_params)
        )
        self.stdio, self.write = stdio_transport
        self.session = await self.exit_stack.enter_async_context(
            ClientSession(self.stdio, self.write)
        )

        await self.session.initialize()

    async def list_tools(self) -> list[str]:
        assert self.session
        response = await self.session.list_tools()
        tools = [tool.name for tool in response.tools]

        return tools

    async def get_tools(self) -> list[Tool]:
        assert self.session
        response = await self.session.list_tools()

        return response.tools

    async def call_tool(
        self, tool_name: str, arguments: dict[str, Any] | None = None
    ) -> Any:
        assert self.session
        response = await self.session.call_tool(tool_name, arguments)

        return response

    async def cleanup(self) -> None:
        """Clean up resources"""
        await self.exit_stack.aclose()


@pytest_asyncio.fixture()
async def mcp_client() -> AsyncGenerator[Any, Any]:
    client = MCPClient()
    await client.connect_to_server(
        "lspi_lqr/servers/mcp_server.py", ["solvers", "experiments"]
    )
    yield client
    # await client.cleanup()


@pytest.fixture()
def offline() -> LqrInstance:
    return offline_paper()


@pytest.fixture()
def dean() -> LqrInstance:
    return adaptive_dean()


@pytest.fixture()
def scalar() -> LqrInstance:
    """A = 0.9, B = S = R = 1: the DARE root is (0.81 + sqrt(4.6561)) / 2."""
    return LqrInstance(
        name="scalar",
        system=LinearSystem(np.array([[0.9]]), np.array([[1.0]]), sigma_w=1.0),
        cost=CostModel(np.array([[1.0]]), np.array([[1.0]])),
    )


def random_stable_instance(
    rng: np.random.Generator, n: int, d: int, radius: float = 0.8
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Random ``(A, B, S, R)`` with ``A`` rescaled to spectral radius ``radius``."""
    a = rng.standard_normal((n, n))
    a *= radius / max(np.max(np.abs(np.linalg.eigvals(a))), 1e-3)
    b = rng.standard_normal((n, d))
    s_half = rng.standard_normal((n, n))
    r_half = rng.standard_normal((d, d))
    return a, b, s_half @ s_half.T + np.eye(n), r_half @ r_half.T + np.eye(d)


def random_pd(rng: np.random.Generator, n: int, floor: float = 0.1) -> np.ndarray:
    m = rng.standard_normal((n, n))
    return m @ m.T + floor * np.eye(n)
