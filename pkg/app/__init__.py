"""
Interface Averaging Toolkit - simulation and verification of fast-slow systems
driven by a null-recurrent fast motion
"""

__version__ = "1.0.0"
__author__ = "Interface Averaging Toolkit Team"
__description__ = "Monte Carlo simulation of fast-slow SDEs, their interface limits, and statistical verification"
