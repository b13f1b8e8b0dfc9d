"""MCP tools for LQR policy iteration.

Currently supporting:
- solving Riccati equations and evaluating linear policies
- running exact policy iteration and LSTD-Q estimates
- running the offline and online benchmark experiments
"""
