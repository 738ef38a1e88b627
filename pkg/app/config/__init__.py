"""
Configuration module for the Interface Averaging Toolkit
"""
