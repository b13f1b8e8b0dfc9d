"""MCP Servers."""
