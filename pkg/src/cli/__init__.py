"""
CLI module for conformal DeepONet experiments.
"""
