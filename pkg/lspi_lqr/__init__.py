"""Least-squares policy iteration for the Linear Quadratic Regulator."""
