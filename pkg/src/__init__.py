"""
Conformal DeepONet

Distribution-free prediction intervals for DeepONet operator surrogates.
"""

__version__ = "1.0.0"
__author__ = "Development Team"
