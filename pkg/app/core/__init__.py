"""
Core numerics for the Interface Averaging Toolkit
"""
