"""
Test suite for the conformal DeepONet toolkit.

This package contains unit tests, integration tests, and contract tests
for the solvers, networks, conformal calibration and command-line interface.
"""
