"""Benchmark instances, experiment orchestration and record files."""
